//! Times training steps for the full pipeline and the source-only baseline
//! at the 64x64 desk scale, to size experiment budgets.

use std::time::Instant;

use segadapt::config::{DatasetConfig, FusionVariant, RunConfig};
use segadapt::net::NetConfig;
use segadapt::optim::OptimConfig;
use segadapt::trainer::Trainer;

fn bench(label: &str, cfg: RunConfig, steps: usize) {
    let mut trainer = Trainer::<f32>::new(cfg).unwrap();
    // warm caches
    trainer.train_step().unwrap();
    let start = Instant::now();
    for _ in 0..steps {
        trainer.train_step().unwrap();
    }
    let per_step = start.elapsed().as_secs_f64() / steps as f64;
    println!("{label}: {:.1} ms/step -> {:.1} s per 2000 steps", per_step * 1e3, per_step * 2000.0);
}

fn main() {
    let base = |width: usize, out: &str| RunConfig {
        net: NetConfig {
            input_channels: 3,
            classes: 4,
            base_width: width,
            blocks_per_stage: 2,
            linear_only: false,
        },
        optim: OptimConfig { warmup_steps: 100, ..OptimConfig::default() },
        ema_alpha: 0.99,
        quality_delta: 0.968,
        transfer: Default::default(),
        fusion: Default::default(),
        prw: Default::default(),
        augment: Default::default(),
        target_loss_enabled: true,
        batch_size: 2,
        total_steps: 2000,
        seed: 0,
        dataset: DatasetConfig::Synthetic { classes: 4, n_images: 50, size: 64, seed: Some(1234) },
        out_dir: std::env::temp_dir().join(out),
        eval_every: 0,
        checkpoint_every: 0,
        resume: None,
    };

    for width in [8, 12, 16] {
        let mut full = base(width, "bench_full");
        full.fusion.variant = FusionVariant::Efficient;
        full.prw.enabled = true;
        bench(&format!("full pipeline w={width}"), full, 30);

        let mut source_only = base(width, "bench_src");
        source_only.target_loss_enabled = false;
        bench(&format!("source-only   w={width}"), source_only, 30);
    }
}
