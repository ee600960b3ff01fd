//! Probes the EMA coefficient's effect on self-training stability for the
//! fusion-free Base configuration.

use segadapt::config::{DatasetConfig, RunConfig};
use segadapt::net::NetConfig;
use segadapt::optim::OptimConfig;
use segadapt::trainer::train;

fn main() {
    for alpha in [0.99, 0.995, 0.999, 0.9995] {
        let mut scores = Vec::new();
        for seed in [0u64, 1, 2] {
            let cfg = RunConfig {
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
                out_dir: std::env::temp_dir().join(format!("probe_alpha_{alpha}_{seed}")),
                eval_every: 0,
                checkpoint_every: 0,
                resume: None,
            };
            scores.push(train::<f32>(&cfg).unwrap().final_report.miou);
        }
        let mean = scores.iter().sum::<f64>() / 3.0;
        println!("alpha {alpha}: per-seed {scores:.3?}  mean {mean:.3}");
    }
}
