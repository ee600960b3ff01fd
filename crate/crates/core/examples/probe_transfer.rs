//! Isolates transfer quality: supervised training on (nearly) fully
//! transferred source images, evaluated on the target domain. If this is
//! high, the transfer bootstrap is sound and fusion/self-training can build
//! on it.

use segadapt::augment::AugmentParams;
use segadapt::config::{DatasetConfig, FusionVariant, RunConfig, TransferMethodKind};
use segadapt::net::NetConfig;
use segadapt::optim::OptimConfig;
use segadapt::trainer::train;

fn main() {
    for (method, augment, label) in [
        (TransferMethodKind::HistogramMatch, true, "hist  + aug"),
        (TransferMethodKind::HistogramMatch, false, "hist  - aug"),
        (TransferMethodKind::StatsTransfer, true, "stats + aug"),
        (TransferMethodKind::StatsTransfer, false, "stats - aug"),
        (TransferMethodKind::Identity, false, "ident - aug (control)"),
    ] {
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
                ema_alpha: 0.99,
                quality_delta: 0.968,
                transfer: Default::default(),
                fusion: Default::default(),
                prw: Default::default(),
                augment: if augment { AugmentParams::default() } else { AugmentParams::none() },
                target_loss_enabled: false,
                batch_size: 2,
                total_steps: 2000,
                seed,
                dataset: DatasetConfig::Synthetic { classes: 4, n_images: 200, size: 64, seed: Some(1234) },
                out_dir: std::env::temp_dir().join(format!("probe_tr_{label}_{seed}").replace(' ', "_")),
                eval_every: 0,
                checkpoint_every: 0,
                resume: None,
            };
            cfg.transfer.method = method;
            // c = 100 with strict comparison: all but one patch transferred
            cfg.fusion.variant = FusionVariant::Efficient;
            cfg.fusion.params.c = 100.0;
            let outcome = train::<f32>(&cfg).unwrap();
            scores.push(outcome.final_report.miou);
        }
        let mean = scores.iter().sum::<f64>() / 3.0;
        println!("{label}: per-seed {scores:.3?}  mean tgt miou {mean:.3}");
    }
}
