//! Sweeps teacher/threshold settings over the arms that matter for the
//! adaptation-gain margin.

use segadapt::config::{DatasetConfig, FusionVariant, RunConfig};
use segadapt::net::NetConfig;
use segadapt::optim::OptimConfig;
use segadapt::trainer::train;

fn main() {
    for (alpha, delta) in [(0.999f64, 0.968f64), (0.999, 0.9)] {
        println!("alpha {alpha} delta {delta}");
        let arms: Vec<(&str, Box<dyn Fn(&mut RunConfig)>)> = vec![
            ("source-only", Box::new(|c: &mut RunConfig| c.target_loss_enabled = false)),
            ("ddf-eff     ", Box::new(|c: &mut RunConfig| c.fusion.variant = FusionVariant::Efficient)),
            (
                "full        ",
                Box::new(|c: &mut RunConfig| {
                    c.fusion.variant = FusionVariant::Efficient;
                    c.prw.enabled = true;
                }),
            ),
        ];
        for (label, tweak) in &arms {
            let mut scores = Vec::new();
            for seed in [0u64, 1, 2] {
                let mut cfg = RunConfig {
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
                    ema_alpha: alpha,
                    quality_delta: delta,
                    transfer: Default::default(),
                    fusion: Default::default(),
                    prw: Default::default(),
                    augment: Default::default(),
                    target_loss_enabled: true,
                    batch_size: 2,
                    total_steps: 2000,
                    seed,
                    dataset: DatasetConfig::Synthetic { classes: 4, n_images: 200, size: 64, seed: Some(1234) },
                    out_dir: std::env::temp_dir()
                        .join(format!("probe_sweep_{alpha}_{delta}_{label}_{seed}").replace(' ', "")),
                    eval_every: 0,
                    checkpoint_every: 0,
                    resume: None,
                };
                tweak(&mut cfg);
                scores.push(train::<f32>(&cfg).unwrap().final_report.miou);
            }
            let mean = scores.iter().sum::<f64>() / 3.0;
            println!("  {label}: per-seed {scores:.3?}  mean {mean:.3}");
        }
    }
}
