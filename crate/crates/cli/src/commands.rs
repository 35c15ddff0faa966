//! Command-line surface: subcommand definitions, dispatch, and the small
//! amount of glue each command needs.
//!
//! `run` returns the process exit code: 0 on success, 3 when a gradient
//! check or kernel verification fails its bar, and the caller maps any
//! `Err` to 2 alongside clap's own usage errors.

use crate::batch::{write_manifest, Manifest};
use crate::bench::{self, BenchKernel};
use crate::config::{apply_ablation, load_run_config, DpiFlag, GcaFlag, Preset, RunConfig};
use crate::gradcheck::{self, GradModule};
use crate::infer::{infer_cloud, infer_dir, load_gt, load_model, write_ply};
use crate::pool::parallel_map;
use crate::trainer::{train, EVAL_THRESHOLDS};
use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use pointdet_data::{
    evaluate, gen_synthetic_scene, load_detections, save_detections, save_scene, CloudFormat,
    GenConfig,
};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "pointdet", version, about = "Point-cloud object detection at desk scale")]
pub struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum FileFormat {
    Binary,
    Text,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a directory of synthetic scenes plus an index manifest.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        scenes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// JSON overrides for the run configuration (its `gen` section
        /// shapes the scenes).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        preset: Option<Preset>,
        #[arg(long, value_enum, default_value_t = FileFormat::Binary)]
        format: FileFormat,
    },
    /// Train on a generated directory and write checkpoint, loss log, and
    /// held-out evaluation.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        preset: Option<Preset>,
        /// Ablation: interaction block on, off, or plain self-attention.
        #[arg(long)]
        dpi: Option<DpiFlag>,
        /// Ablation: global context on or off.
        #[arg(long)]
        gca: Option<GcaFlag>,
        /// Ablation: residual block count in the encoder MLPs.
        #[arg(long)]
        rpl_blocks: Option<usize>,
    },
    /// Run a trained checkpoint over one cloud or a whole directory.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        /// Single cloud (or scene) file; mutually exclusive with --data.
        #[arg(long, conflicts_with = "data")]
        cloud: Option<PathBuf>,
        /// Generated directory to sweep; detections land in --out.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Output file (single cloud) or directory (--data).
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0.05)]
        score_threshold: f64,
        #[arg(long, default_value_t = 0.25)]
        nms_iou: f64,
        /// Also write box wireframes as ASCII PLY next to the detections.
        #[arg(long)]
        dump_ply: bool,
    },
    /// Score stored detections against ground-truth scenes.
    Eval {
        /// Detection JSON file or a directory of `<stem>.dets.json`.
        #[arg(long)]
        det: PathBuf,
        /// Scene file or generated directory.
        #[arg(long)]
        gt: PathBuf,
        /// Optional path for the full evaluation result as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Verify analytic gradients against central finite differences.
    Gradcheck {
        #[arg(long, value_enum, default_value_t = GradModule::All)]
        module: GradModule,
        #[arg(long, default_value_t = 5)]
        instances: usize,
    },
    /// Time a kernel after proving it against a brute-force oracle.
    Bench {
        #[arg(long, value_enum)]
        kernel: BenchKernel,
        #[arg(long, default_value_t = 4096)]
        n: usize,
        #[arg(long, default_value_t = 20)]
        trials: usize,
    },
    /// Train every ablation variant across several seeds and tabulate.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        preset: Option<Preset>,
        #[arg(long, default_value_t = 3)]
        seeds: u64,
        /// Override the configured epoch count for the sweep.
        #[arg(long)]
        epochs: Option<usize>,
    },
}

/// Parse the process arguments and run. Errors map to exit code 2.
pub fn run() -> Result<i32> {
    dispatch(Cli::parse())
}

pub fn dispatch(cli: Cli) -> Result<i32> {
    match cli.cmd {
        Cmd::GenData { out, scenes, seed, config, preset, format } => {
            let cfg = load_run_config(config.as_deref(), preset)?;
            let fmt = match format {
                FileFormat::Binary => CloudFormat::Binary,
                FileFormat::Text => CloudFormat::Text,
            };
            let manifest = write_dataset(&cfg.gen, scenes, seed, &out, fmt)?;
            println!("wrote {} scenes to {}", manifest.scenes.len(), out.display());
            Ok(0)
        }
        Cmd::Train { data, out, config, preset, dpi, gca, rpl_blocks } => {
            let mut cfg = load_run_config(config.as_deref(), preset)?;
            apply_ablation(&mut cfg, dpi, gca, rpl_blocks);
            let report = train(&cfg, &data, &out)?;
            println!(
                "trained {} epochs in {:.1}s; artifacts in {}",
                report.epochs.len(),
                report.train_seconds,
                out.display()
            );
            Ok(0)
        }
        Cmd::Infer {
            ckpt,
            cloud,
            data,
            out,
            config,
            score_threshold,
            nms_iou,
            dump_ply,
        } => match (cloud, data) {
            (Some(cloud), None) => {
                let (model, _) = load_model(&ckpt, config.as_deref())?;
                let dets = infer_cloud(&model, &cloud, score_threshold, nms_iou)?;
                save_detections(&out, &dets)?;
                if dump_ply {
                    write_ply(&out.with_extension("ply"), &dets)?;
                }
                println!("{} detections -> {}", dets.len(), out.display());
                Ok(0)
            }
            (None, Some(data)) => {
                let n = infer_dir(
                    &ckpt,
                    config.as_deref(),
                    &data,
                    &out,
                    score_threshold,
                    nms_iou,
                    dump_ply,
                )?;
                println!("{n} scenes -> {}", out.display());
                Ok(0)
            }
            _ => bail!("pass exactly one of --cloud or --data"),
        },
        Cmd::Eval { det, gt, out } => cmd_eval(&det, &gt, out.as_deref()),
        Cmd::Gradcheck { module, instances } => {
            Ok(if gradcheck::run_and_print(module, instances)? { 0 } else { 3 })
        }
        Cmd::Bench { kernel, n, trials } => {
            Ok(if bench::run_and_print(kernel, n, trials)? { 0 } else { 3 })
        }
        Cmd::Ablate { data, out, config, preset, seeds, epochs } => {
            let mut cfg = load_run_config(config.as_deref(), preset)?;
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            cmd_ablate(&cfg, &data, &out, seeds)
        }
    }
}

/// Generate `scenes` scenes seeded `base_seed..base_seed+scenes` into
/// `dir` and write the manifest. Generation fans out across workers; file
/// names and content depend only on the seeds.
pub fn write_dataset(
    gen: &GenConfig,
    scenes: usize,
    base_seed: u64,
    dir: &Path,
    format: CloudFormat,
) -> Result<Manifest> {
    if scenes == 0 {
        bail!("refusing to write an empty dataset");
    }
    gen.validate()?;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let jobs: Vec<(usize, PathBuf)> = (0..scenes)
        .map(|i| (i, dir.join(format!("scene_{i:05}.json"))))
        .collect();
    let names: Vec<String> = jobs
        .iter()
        .map(|(_, p)| p.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    let gen = gen.clone();
    let results = parallel_map(jobs, move |(i, path)| -> Result<()> {
        let scene = gen_synthetic_scene(base_seed + i as u64, &gen)?;
        save_scene(&scene, &path, format)?;
        Ok(())
    });
    for r in results {
        r?;
    }
    let manifest = Manifest { base_seed, scenes: names };
    write_manifest(dir, &manifest)?;
    Ok(manifest)
}

fn cmd_eval(det: &Path, gt: &Path, out: Option<&Path>) -> Result<i32> {
    let gts = load_gt(gt)?;
    let dets = if det.is_dir() {
        gts.iter()
            .map(|(stem, _)| {
                let path = det.join(format!("{stem}.dets.json"));
                load_detections(&path).map_err(|e| anyhow::anyhow!("loading {}: {e}", path.display()))
            })
            .collect::<Result<Vec<_>>>()?
    } else {
        if gts.len() != 1 {
            bail!("a single detection file needs a single ground-truth scene");
        }
        vec![load_detections(det)?]
    };
    let gt_boxes: Vec<_> = gts.iter().map(|(_, b)| b.clone()).collect();
    let result = evaluate(&dets, &gt_boxes, &EVAL_THRESHOLDS)?;
    for th in &result.thresholds {
        println!("IoU {:.2}: mAP {:.4}", th.iou_threshold, th.map);
        for c in &th.classes {
            println!(
                "  class {}: AP {:.4} ({} gt, {} det, {} matched)",
                c.class_id, c.ap, c.num_gt, c.num_det, c.num_matched
            );
        }
    }
    if let Some(path) = out {
        std::fs::write(path, serde_json::to_string_pretty(&result)?)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(0)
}

/// The ablation grid mirroring the reported comparisons: interaction off
/// or replaced, global context off, and residual depth swept.
const ABLATION_VARIANTS: [(&str, Option<DpiFlag>, Option<GcaFlag>, Option<usize>); 8] = [
    ("full", None, None, None),
    ("no_dpi", Some(DpiFlag::Off), None, None),
    ("no_gca", None, Some(GcaFlag::Off), None),
    ("self_attention", Some(DpiFlag::SelfAttention), None, None),
    ("rpl0", None, None, Some(0)),
    ("rpl1", None, None, Some(1)),
    ("rpl2", None, None, Some(2)),
    ("rpl3", None, None, Some(3)),
];

fn cmd_ablate(base: &RunConfig, data: &Path, out: &Path, seeds: u64) -> Result<i32> {
    if seeds == 0 {
        bail!("need at least one seed");
    }
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut csv = String::from("variant,seed,map_25,map_50,final_loss\n");
    let mut table: Vec<(String, Vec<[f64; 3]>)> = Vec::new();
    for (name, dpi, gca, rpl) in ABLATION_VARIANTS {
        let mut rows = Vec::new();
        for s in 0..seeds {
            let mut cfg = base.clone();
            apply_ablation(&mut cfg, dpi, gca, rpl);
            cfg.seed = base.seed + s;
            let run_dir = out.join(format!("{name}_seed{}", cfg.seed));
            let report = train(&cfg, data, &run_dir)?;
            let final_loss = report.epochs.last().map_or(f64::NAN, |r| r.total);
            let (m25, m50) = report
                .eval
                .as_ref()
                .map_or((f64::NAN, f64::NAN), |e| (e.map_25, e.map_50));
            let _ = std::fmt::Write::write_fmt(
                &mut csv,
                format_args!("{name},{},{m25},{m50},{final_loss}\n", cfg.seed),
            );
            rows.push([m25, m50, final_loss]);
        }
        table.push((name.to_string(), rows));
    }
    std::fs::write(out.join("ablation.csv"), csv).context("writing ablation.csv")?;

    println!("{:<16} {:>8} {:>8} {:>10}", "variant", "mAP@.25", "mAP@.5", "final loss");
    for (name, rows) in &table {
        let n = rows.len() as f64;
        let mean = |i: usize| rows.iter().map(|r| r[i]).sum::<f64>() / n;
        println!("{name:<16} {:>8.4} {:>8.4} {:>10.4}", mean(0), mean(1), mean(2));
    }
    println!("per-seed rows in {}", out.join("ablation.csv").display());
    Ok(0)
}
