use pointdet_cli::batch::assemble_batch;
use pointdet_cli::config::{Preset, RunConfig};
use pointdet_core::nn::Mode;
use pointdet_core::optim::{Adam, AdamConfig};
use pointdet_core::Tape64;
use pointdet_data::gen_synthetic_scene;
use pointdet_net::Detector;
use std::time::Instant;

#[test]
#[ignore]
fn time_one_toy_step() {
    let cfg = RunConfig::preset(Preset::Toy);
    let scenes: Vec<_> = (0..4)
        .map(|s| gen_synthetic_scene(s, &cfg.gen).unwrap())
        .collect();
    let input = assemble_batch(&scenes).unwrap();
    let gts: Vec<_> = scenes.iter().map(|s| s.boxes.clone()).collect();
    let model = Detector::new(&cfg.model, 0).unwrap();
    let mut opt = Adam::new(AdamConfig::new(1e-3, 1e-4), &model.params).unwrap();
    println!("params: {}", model.params.num_scalars());
    for i in 0..10 {
        let t = Instant::now();
        model.params.zero_grads();
        let tape = Tape64::new();
        let (_, report) = model.loss(&tape, &input, &gts, Mode::Train).unwrap();
        let fwd = t.elapsed();
        tape.backward(&report.total).unwrap();
        let bwd = t.elapsed();
        opt.step().unwrap();
        println!(
            "step {i}: fwd {fwd:?} fwd+bwd {bwd:?} full {:?} loss {:.3} (tape {} nodes)",
            t.elapsed(),
            report.total.item().unwrap(),
            tape.len(),
        );
    }
    let t = Instant::now();
    let dets = model.detect(&input, 0.05, 0.25).unwrap();
    println!("detect x4: {:?} ({} boxes in scene 0)", t.elapsed(), dets[0].len());
}
