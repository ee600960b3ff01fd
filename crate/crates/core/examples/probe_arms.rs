//! Ablation-style probe over the module arms on one fixed synthetic pair,
//! histogram-match transfer throughout.

use segadapt::augment::AugmentParams;
use segadapt::config::{DatasetConfig, FusionVariant, RunConfig};
use segadapt::net::NetConfig;
use segadapt::optim::OptimConfig;
use segadapt::trainer::train;

fn base(seed: u64, out: String, augment: bool) -> RunConfig {
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
        augment: if augment { AugmentParams::default() } else { AugmentParams::none() },
        target_loss_enabled: true,
        batch_size: 2,
        total_steps: 2000,
        seed,
        dataset: DatasetConfig::Synthetic { classes: 4, n_images: 200, size: 64, seed: Some(1234) },
        out_dir: std::env::temp_dir().join("probe_arms").join(out),
        eval_every: 0,
        checkpoint_every: 0,
        resume: None,
    }
}

fn main() {
    let arms: Vec<(&str, Box<dyn Fn(&mut RunConfig)>)> = vec![
        ("source-only ", Box::new(|c: &mut RunConfig| c.target_loss_enabled = false)),
        ("base(selftr) ", Box::new(|_| {})),
        ("ddf-efficient", Box::new(|c: &mut RunConfig| c.fusion.variant = FusionVariant::Efficient)),
        ("prw-only     ", Box::new(|c: &mut RunConfig| c.prw.enabled = true)),
        (
            "full(eff+prw)",
            Box::new(|c: &mut RunConfig| {
                c.fusion.variant = FusionVariant::Efficient;
                c.prw.enabled = true;
            }),
        ),
    ];
    for augment in [false, true] {
        println!("augment = {augment}");
        for (label, tweak) in &arms {
            let mut scores = Vec::new();
            for seed in [0u64, 1, 2] {
                let mut cfg = base(seed, format!("{label}_{augment}_{seed}").replace(' ', ""), augment);
                tweak(&mut cfg);
                scores.push(train::<f32>(&cfg).unwrap().final_report.miou);
            }
            let mean = scores.iter().sum::<f64>() / 3.0;
            println!("  {label}: per-seed {scores:.3?}  mean {mean:.3}");
        }
    }
}
