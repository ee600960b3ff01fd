//! End-to-end check of the adaptation gain on the synthetic pair: trains the
//! full pipeline and the source-only baseline over a few seeds and prints
//! target mIoU for both.

use segadapt::config::{DatasetConfig, FusionVariant, RunConfig};
use segadapt::net::NetConfig;
use segadapt::optim::OptimConfig;
use segadapt::trainer::train;

fn base_config(seed: u64, out: &str) -> RunConfig {
    RunConfig {
        net: NetConfig {
            input_channels: 3,
            classes: 4,
            base_width: 8,
            blocks_per_stage: 2,
            linear_only: false,
        },
        optim: OptimConfig {
            lr_encoder: 1e-3,
            lr_decoder: 1e-3,
            warmup_steps: 100,
            ..OptimConfig::default()
        },
        ema_alpha: 0.99,
        quality_delta: 0.968,
        transfer: Default::default(),
        fusion: Default::default(),
        prw: Default::default(),
        augment: Default::default(),
        target_loss_enabled: true,
        batch_size: 2,
        total_steps: 2000,
        seed,
        dataset: DatasetConfig::Synthetic { classes: 4, n_images: 200, size: 64, seed: Some(1234) },
        out_dir: std::env::temp_dir().join("segadapt_exp").join(out).join(format!("s{seed}")),
        eval_every: 500,
        checkpoint_every: 0,
        resume: None,
    }
}

fn main() {
    let t0 = std::time::Instant::now();
    let mut full_scores = Vec::new();
    let mut base_scores = Vec::new();
    for seed in [0u64, 1, 2] {
        let mut full = base_config(seed, "full");
        full.fusion.variant = FusionVariant::Efficient;
        full.prw.enabled = true;
        let outcome = train::<f32>(&full).unwrap();
        println!(
            "seed {seed} full:        miou {:.4} mf1 {:.4} (evals: {:?})",
            outcome.final_report.miou,
            outcome.final_report.mf1,
            outcome.evals.iter().map(|e| (e.step, (e.miou * 100.0).round() / 100.0)).collect::<Vec<_>>()
        );
        full_scores.push(outcome.final_report.miou);

        let mut src = base_config(seed, "src_only");
        src.target_loss_enabled = false;
        let outcome = train::<f32>(&src).unwrap();
        println!(
            "seed {seed} source-only: miou {:.4} mf1 {:.4}",
            outcome.final_report.miou, outcome.final_report.mf1
        );
        base_scores.push(outcome.final_report.miou);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    println!(
        "mean full {:.4}  mean source-only {:.4}  gain {:.2} points  ({:.1}s)",
        mean(&full_scores),
        mean(&base_scores),
        (mean(&full_scores) - mean(&base_scores)) * 100.0,
        t0.elapsed().as_secs_f64()
    );
}
