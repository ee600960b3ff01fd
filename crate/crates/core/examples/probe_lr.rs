//! Probes learning-rate settings on the supervised source task and reports
//! accuracy on both domains, to pick desk-scale defaults.

use segadapt::config::{DatasetConfig, RunConfig};
use segadapt::metrics::{iou_f1, ConfusionMatrix};
use segadapt::net::{forward_logits, NetConfig};
use segadapt::ops::{argmax_labels, softmax_channels};
use segadapt::optim::OptimConfig;
use segadapt::synth::generate_synthetic_pair;
use segadapt::trainer::Trainer;

fn main() {
    let pair = generate_synthetic_pair::<f32>(999, 4, 32, 64).unwrap();

    for (lr_enc, lr_dec, width, steps) in [
        (6e-5, 6e-4, 8usize, 2000usize),
        (1e-3, 1e-3, 8, 2000),
        (2e-3, 2e-3, 8, 2000),
        (5e-3, 5e-3, 8, 2000),
        (2e-3, 2e-3, 12, 2000),
    ] {
        let cfg = RunConfig {
            net: NetConfig {
                input_channels: 3,
                classes: 4,
                base_width: width,
                blocks_per_stage: 2,
                linear_only: false,
            },
            optim: OptimConfig {
                lr_encoder: lr_enc,
                lr_decoder: lr_dec,
                warmup_steps: 100,
                ..OptimConfig::default()
            },
            ema_alpha: 0.99,
            quality_delta: 0.968,
            transfer: Default::default(),
            fusion: Default::default(),
            prw: Default::default(),
            augment: Default::default(),
            target_loss_enabled: false,
            batch_size: 2,
            total_steps: steps,
            seed: 0,
            dataset: DatasetConfig::Synthetic { classes: 4, n_images: 200, size: 64, seed: Some(1234) },
            out_dir: std::env::temp_dir().join(format!("probe_lr_{lr_enc}_{lr_dec}_{width}")),
            eval_every: 0,
            checkpoint_every: 0,
            resume: None,
        };
        let mut trainer = Trainer::<f32>::new(cfg.clone()).unwrap();
        let mut last = 0.0;
        for _ in 0..steps {
            let (ls, _, _) = trainer.train_step().unwrap();
            last = ls;
        }

        // student accuracy on held-out source-style scenes and on target eval
        let mut cm_src = ConfusionMatrix::new(4);
        for (img, gt) in pair.source.images.iter().zip(pair.source.labels.as_ref().unwrap()) {
            let logits = forward_logits(&cfg.net, &trainer.state().student, img).unwrap();
            let pred = argmax_labels(&softmax_channels(&logits).unwrap());
            cm_src.accumulate(&pred, gt).unwrap();
        }
        let src_miou = iou_f1(&cm_src).unwrap().miou;
        let tgt = trainer.evaluate().unwrap();
        println!(
            "lr {lr_enc}/{lr_dec} w={width}: final L_S {last:.3} | src miou {src_miou:.3} | tgt miou {:.3} (teacher)",
            tgt.miou
        );
    }
}
