use std::process::ExitCode;

fn main() -> ExitCode {
    match pointdet_cli::commands::run() {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
