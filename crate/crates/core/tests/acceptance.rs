//! Acceptance suite: one test per criterion, each printing a PASS line with
//! the measured values (run with `--nocapture` to see them).

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use segadapt::augment::AugmentParams;
use segadapt::config::{DatasetConfig, FusionVariant, RunConfig};
use segadapt::fusion::{
    build_patch_mask, cnn_fuse, cnn_fuse_backward, compose_fusion, patch_scores,
    percentile_threshold, Direction, FusionConv, Metric, PatchGrid, PatchMask,
};
use segadapt::metrics::{iou_f1, ConfusionMatrix};
use segadapt::net::{backward, forward, grad_check, init_params, NetConfig, ParamSet};
use segadapt::ops::{softmax_channels, weighted_cross_entropy};
use segadapt::optim::OptimConfig;
use segadapt::prw::{boundary_mask, regional_weight_map, PrwParams};
use segadapt::raster::{Image, LabelMap, ProbMap, WeightMap};
use segadapt::slic::slic_superpixels;
use segadapt::teacher::{quality_scalar, TeacherState};
use segadapt::trainer::train;

fn random_image(h: usize, w: usize, c: usize, seed: u64) -> Image<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image::from_vec(h, w, c, (0..h * w * c).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
}

/// Criterion 1: gradient correctness of the tiny network and of the loss
/// gradient through the fusion convolution, both under 1e-5 against central
/// finite differences, in under a minute.
#[test]
fn criterion_1_gradient_correctness() {
    let start = Instant::now();
    let tiny = NetConfig::tiny();
    assert!(init_params::<f64>(&tiny, 0).param_count() <= 1000);
    let net_err = grad_check(&tiny, 0);
    assert!(net_err < 1e-5, "network grad error {net_err}");

    // loss gradient through the fusion convolution
    let net_cfg = NetConfig { input_channels: 3, ..NetConfig::tiny() };
    let student = init_params::<f64>(&net_cfg, 4);
    let mut fc = FusionConv::<f64>::averaging_init(3);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for t in fc.params_mut().tensors_mut() {
        for v in &mut t.data {
            *v += rng.random_range(-0.05..0.05);
        }
    }
    let x_s = random_image(8, 8, 3, 6);
    let x_st = random_image(8, 8, 3, 7);
    let labels = LabelMap::from_vec(
        8,
        8,
        net_cfg.classes,
        (0..64).map(|_| rng.random_range(0..net_cfg.classes as u8)).collect(),
    )
    .unwrap();
    let ones = WeightMap::ones(8, 8);

    let loss_of = |fc: &FusionConv<f64>| -> f64 {
        let (mix, _) = cnn_fuse(fc, &x_s, &x_st).unwrap();
        let logits = segadapt::net::forward_logits(&net_cfg, &student, &mix).unwrap();
        let p = softmax_channels(&logits).unwrap();
        weighted_cross_entropy(&p, &labels, &ones).unwrap().0
    };
    let (mix, cache) = cnn_fuse(&fc, &x_s, &x_st).unwrap();
    let (logits, net_cache) = forward(&net_cfg, &student, &mix).unwrap();
    let p = softmax_channels(&logits).unwrap();
    let (_, grad_logits) = weighted_cross_entropy(&p, &labels, &ones).unwrap();
    let (_, grad_input) = backward(&net_cfg, &student, &net_cache, &grad_logits).unwrap();
    let (analytic, _, _) = cnn_fuse_backward(&fc, &cache, &grad_input).unwrap();

    let step = 3e-5;
    let mut fusion_err = 0.0f64;
    for ti in 0..2 {
        for vi in 0..fc.params().tensors()[ti].len() {
            let orig = fc.params().tensors()[ti].data[vi];
            fc.params_mut().tensors_mut()[ti].data[vi] = orig + step;
            let fp = loss_of(&fc);
            fc.params_mut().tensors_mut()[ti].data[vi] = orig - step;
            let fm = loss_of(&fc);
            fc.params_mut().tensors_mut()[ti].data[vi] = orig;
            let numeric = (fp - fm) / (2.0 * step);
            let a = analytic.tensors()[ti].data[vi];
            if a.abs() < 1e-8 && numeric.abs() < 1e-8 {
                continue;
            }
            fusion_err = fusion_err.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-5));
        }
    }
    assert!(fusion_err < 1e-5, "fusion grad error {fusion_err}");

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 60, "took {elapsed:?}");
    println!(
        "criterion 1 PASS: net grad err {net_err:.2e}, fusion grad err {fusion_err:.2e}, {:.1}s",
        elapsed.as_secs_f64()
    );
}

/// Criterion 2: EMA updates match the closed form for alpha in
/// {0, 0.5, 0.9, 1} to machine precision and contract geometrically over 100
/// repeats against a frozen student.
#[test]
fn criterion_2_ema_exactness() {
    let cfg = NetConfig::tiny();
    let phi0 = init_params::<f64>(&cfg, 10);
    let theta = init_params::<f64>(&cfg, 11);
    for alpha in [0.0, 0.5, 0.9, 1.0] {
        let mut teacher = TeacherState::new(&phi0, alpha).unwrap();
        teacher.ema_update(&theta).unwrap();
        for ((prev, cur), stu) in
            phi0.tensors().iter().zip(teacher.params().tensors()).zip(theta.tensors())
        {
            for ((&p, &c), &s) in prev.data.iter().zip(&cur.data).zip(&stu.data) {
                let closed_form = alpha * p + (1.0 - alpha) * s;
                assert_eq!(c, closed_form, "alpha {alpha}");
            }
        }
    }

    // contraction over 100 updates at alpha = 0.9
    let gap_inf = |a: &ParamSet<f64>, b: &ParamSet<f64>| {
        a.tensors()
            .iter()
            .zip(b.tensors())
            .flat_map(|(x, y)| x.data.iter().zip(&y.data))
            .map(|(x, y)| (x - y).abs())
            .fold(0.0f64, f64::max)
    };
    let mut teacher = TeacherState::new(&phi0, 0.9).unwrap();
    let initial = gap_inf(&phi0, &theta);
    for t in 1..=100usize {
        teacher.ema_update(&theta).unwrap();
        let bound = 0.9f64.powi(t as i32) * initial;
        let gap = gap_inf(teacher.params(), &theta);
        assert!(gap <= bound * (1.0 + 1e-9), "step {t}: gap {gap} > bound {bound}");
    }
    println!("criterion 2 PASS: closed form exact for 4 alphas, 100-step contraction holds");
}

/// Criterion 3: percentile threshold + strict mask against an independent
/// sort-and-count oracle on 200 random grids, and per-pixel provenance of the
/// composition.
#[test]
fn criterion_3_efficient_fusion_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    for round in 0..200 {
        let n = rng.random_range(1..=256usize);
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let grid = PatchGrid { patch_size: 1, patches_y: 1, patches_x: n, scores: scores.clone() };
        for c in [10u32, 25, 50, 75, 100] {
            let t = percentile_threshold(&grid, c as f64).unwrap();
            // integer-rank oracle: sort ascending, nearest rank
            let mut sorted = scores.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let rank = ((c as usize * n).div_ceil(100)).max(1);
            assert_eq!(t, sorted[rank - 1], "round {round} c {c} n {n}");

            let mask = build_patch_mask(&grid, t, Direction::SelectLow);
            let oracle: Vec<bool> = scores.iter().map(|&s| s < t).collect();
            assert_eq!(mask.bits, oracle);
            let high = build_patch_mask(&grid, t, Direction::SelectHigh);
            let oracle_high: Vec<bool> = scores.iter().map(|&s| s > t).collect();
            assert_eq!(high.bits, oracle_high);
        }
    }

    // per-pixel provenance on random mask/image triples
    for round in 0..20 {
        let (h, w, k) = (
            rng.random_range(8..32usize),
            rng.random_range(8..32usize),
            rng.random_range(2..8usize),
        );
        let a = random_image(h, w, 3, 1000 + round);
        let b = random_image(h, w, 3, 2000 + round);
        let (py, px) = (h.div_ceil(k), w.div_ceil(k));
        let mask = PatchMask {
            patches_y: py,
            patches_x: px,
            bits: (0..py * px).map(|_| rng.random_range(0..2u8) == 1).collect(),
        };
        let out = compose_fusion(&a, &b, &mask, k).unwrap();
        for y in 0..h {
            for x in 0..w {
                let expect = if mask.bits[(y / k) * px + x / k] { b.pixel(y, x) } else { a.pixel(y, x) };
                assert_eq!(out.pixel(y, x), expect, "pixel ({y},{x}) round {round}");
            }
        }
    }
    println!("criterion 3 PASS: 200 grids x 5 percentiles match the oracle; composition provenance exact");
}

/// Criterion 4: entropy patch scores live in [0, k^2 ln K] and hit the bound
/// on uniform maps; the identical-one-hot SND patch scores ln(k^2 - 1).
#[test]
fn criterion_4_entropy_snd_bounds() {
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    for &k in &[2usize, 4, 8] {
        for classes in [2usize, 3, 5] {
            // random probability maps stay inside the entropy bound
            let (h, w) = (k * 3, k * 2);
            let mut data = Vec::with_capacity(h * w * classes);
            for _ in 0..h * w {
                let raw: Vec<f64> = (0..classes).map(|_| rng.random_range(0.01..1.0)).collect();
                let sum: f64 = raw.iter().sum();
                data.extend(raw.into_iter().map(|v| v / sum));
            }
            let p = ProbMap::from_vec(h, w, classes, data).unwrap();
            let grid = patch_scores(&p, k, Metric::Entropy, 0.05).unwrap();
            let bound = (k * k) as f64 * (classes as f64).ln();
            for &s in &grid.scores {
                assert!(s >= 0.0 && s <= bound + 1e-9, "score {s} outside [0, {bound}]");
            }

            // uniform map: every score equals the bound
            let uniform = ProbMap::<f64>::uniform(h, w, classes);
            let grid = patch_scores(&uniform, k, Metric::Entropy, 0.05).unwrap();
            for &s in &grid.scores {
                assert!((s - bound).abs() < 1e-9, "uniform score {s} != {bound}");
            }
        }

        // identical-one-hot patch: SND is ln(k^2 - 1)
        let classes = 3;
        let onehot = ProbMap::from_vec(
            k,
            k,
            classes,
            (0..k * k).flat_map(|_| { let mut v = vec![0.0; classes]; v[0] = 1.0; v }).collect(),
        )
        .unwrap();
        let grid = patch_scores(&onehot, k, Metric::Snd, 0.05).unwrap();
        let expect = ((k * k - 1) as f64).ln();
        assert_eq!(grid.len(), 1);
        assert!(
            (grid.scores[0] - expect).abs() < 1e-9,
            "snd {} != ln({})",
            grid.scores[0],
            k * k - 1
        );
    }
    println!("criterion 4 PASS: entropy bounds tight, one-hot SND equals ln(k^2-1)");
}

/// Criterion 5: SLIC partitions 50 random images into 4-connected superpixels
/// within [0.5, 2]x the target count; the two-half-plane image puts the
/// boundary exactly on the seam.
#[test]
fn criterion_5_slic_properties() {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    for round in 0..50u64 {
        let img = Image::from_vec(
            32,
            32,
            3,
            (0..32 * 32 * 3).map(|_| rng.random_range(0.0f64..1.0)).collect(),
        )
        .unwrap();
        let target = 32 * 32 / 256; // 4
        let sp = slic_superpixels(&img, target, 10.0, 10, round).unwrap();

        // total partition, no empty ids
        let mut counts = vec![0usize; sp.n_superpixels()];
        for &l in sp.data() {
            counts[l as usize] += 1;
        }
        assert!(counts.iter().all(|&c| c > 0), "round {round}: empty superpixel");

        // 4-connectivity via an independent flood fill per id
        for id in 0..sp.n_superpixels() as u32 {
            let start = sp.data().iter().position(|&l| l == id).unwrap();
            let mut seen = vec![false; 32 * 32];
            let mut stack = vec![start];
            seen[start] = true;
            let mut reached = 0usize;
            while let Some(idx) = stack.pop() {
                reached += 1;
                let (y, x) = (idx / 32, idx % 32);
                for (dy, dx) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
                    let (yy, xx) = (y as i64 + dy, x as i64 + dx);
                    if yy >= 0 && xx >= 0 && yy < 32 && xx < 32 {
                        let nidx = yy as usize * 32 + xx as usize;
                        if !seen[nidx] && sp.data()[nidx] == id {
                            seen[nidx] = true;
                            stack.push(nidx);
                        }
                    }
                }
            }
            assert_eq!(reached, counts[id as usize], "round {round}: id {id} disconnected");
        }

        let n = sp.n_superpixels();
        assert!(
            n * 2 >= target && n <= 2 * target,
            "round {round}: {n} superpixels for target {target}"
        );
    }

    // two constant half planes: the seam is the only boundary
    let mut img = Image::<f64>::zeros(16, 16, 3);
    for y in 0..16 {
        for x in 8..16 {
            for c in 0..3 {
                img.set(y, x, c, 1.0);
            }
        }
    }
    let sp = slic_superpixels(&img, 2, 10.0, 10, 0).unwrap();
    assert_eq!(sp.n_superpixels(), 2);
    let mb = boundary_mask(&sp, 1);
    for y in 0..16 {
        for x in 0..16 {
            assert_eq!(mb.get(y, x), x == 7 || x == 8, "pixel ({y},{x})");
        }
    }
    println!("criterion 5 PASS: 50 random partitions valid, half-plane seam exact");
}

/// Criterion 6: the PRW map takes exactly the two endpoint values, the
/// quality scalar matches a counting oracle, and beta outside (0, 1) is
/// rejected.
#[test]
fn criterion_6_prw_map_and_quality() {
    let mut rng = ChaCha8Rng::seed_from_u64(60);

    // quality scalar vs counting oracle on 100 random probability maps
    for _ in 0..100 {
        let (h, w, k) = (6, 7, 3);
        let mut data = Vec::with_capacity(h * w * k);
        for _ in 0..h * w {
            let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.0001..1.0)).collect();
            let sum: f64 = raw.iter().sum();
            data.extend(raw.into_iter().map(|v| v / sum));
        }
        let p = ProbMap::from_vec(h, w, k, data).unwrap();
        for delta in [0.0, 0.5, 0.9, 1.0] {
            let got = quality_scalar(&p, delta).unwrap();
            let mut count = 0usize;
            for y in 0..h {
                for x in 0..w {
                    let max = p.pixel(y, x).iter().cloned().fold(f64::MIN, f64::max);
                    if max > delta {
                        count += 1;
                    }
                }
            }
            assert_eq!(got, count as f64 / (h * w) as f64, "delta {delta}");
        }
    }

    // weight map takes exactly the two endpoint values
    let img = random_image(24, 24, 3, 61);
    let sp = slic_superpixels(&img, 4, 10.0, 10, 0).unwrap();
    let mb = boundary_mask(&sp, 3);
    assert!(mb.count_set() > 0);
    let wm = regional_weight_map::<f64>(0.6, &mb, 0.3).unwrap();
    for y in 0..24 {
        for x in 0..24 {
            let v = wm.get(y, x);
            assert!(v == 0.6 || v == 0.6 + 0.3, "weight {v}");
            assert_eq!(v == 0.9, mb.get(y, x));
        }
    }

    // beta range is the open interval (0, 1)
    assert!(regional_weight_map::<f64>(0.5, &mb, 0.5).is_ok());
    for bad in [0.0, 1.0, -0.2, 1.5] {
        assert!(regional_weight_map::<f64>(0.5, &mb, bad).is_err(), "beta {bad} accepted");
    }
    assert!(PrwParams { beta: 1.0, ..PrwParams::default() }.validate().is_err());
    println!("criterion 6 PASS: quality oracle exact, two-valued map, beta range enforced");
}

/// Criterion 7: metrics match the hand-counted example, satisfy the
/// F1 = 2 IoU / (1 + IoU) identity within 1e-12, and score perfect
/// predictions as 1.
#[test]
fn criterion_7_metrics() {
    // hand-computed 4-pixel example
    let gt = LabelMap::from_vec(1, 4, 2, vec![0, 0, 1, 1]).unwrap();
    let pred = LabelMap::from_vec(1, 4, 2, vec![0, 0, 0, 0]).unwrap();
    let mut cm = ConfusionMatrix::new(2);
    cm.accumulate(&pred, &gt).unwrap();
    let report = iou_f1(&cm).unwrap();
    assert_eq!(report.per_class[0].unwrap().iou, 0.5);
    assert_eq!(report.per_class[1].unwrap().iou, 0.0);
    assert_eq!(report.miou, 0.25);

    // F1 identity on 100 random confusion matrices
    let mut rng = ChaCha8Rng::seed_from_u64(70);
    for _ in 0..100 {
        let k = rng.random_range(2..7usize);
        let mut cm = ConfusionMatrix::new(k);
        let pred_labels: Vec<u8> = (0..400).map(|_| rng.random_range(0..k as u8)).collect();
        let gt_labels: Vec<u8> = (0..400).map(|_| rng.random_range(0..k as u8)).collect();
        cm.accumulate(
            &LabelMap::from_vec(20, 20, k, pred_labels).unwrap(),
            &LabelMap::from_vec(20, 20, k, gt_labels).unwrap(),
        )
        .unwrap();
        let report = iou_f1(&cm).unwrap();
        for s in report.per_class.iter().flatten() {
            assert!((s.f1 - 2.0 * s.iou / (1.0 + s.iou)).abs() < 1e-12);
        }
    }

    // perfect prediction
    let gt = LabelMap::from_vec(4, 4, 3, (0..16).map(|i| (i % 3) as u8).collect()).unwrap();
    let mut cm = ConfusionMatrix::new(3);
    cm.accumulate(&gt, &gt).unwrap();
    let report = iou_f1(&cm).unwrap();
    assert_eq!(report.miou, 1.0);
    assert_eq!(report.mf1, 1.0);
    println!("criterion 7 PASS: hand counts, F1 identity, and perfect scores all hold");
}

fn desk_scale_config(seed: u64, out: &str) -> RunConfig {
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
        transfer: Default::default(), // histogram match
        fusion: Default::default(),
        prw: Default::default(),
        augment: AugmentParams::none(),
        target_loss_enabled: true,
        batch_size: 2,
        total_steps: 2000,
        seed,
        dataset: DatasetConfig::Synthetic { classes: 4, n_images: 200, size: 64, seed: Some(1234) },
        out_dir: std::env::temp_dir().join("segadapt_acceptance").join(out).join(format!("s{seed}")),
        eval_every: 0,
        checkpoint_every: 0,
        resume: None,
    }
}

/// Criterion 8: on the synthetic pair (64x64, K=4, 200 images per domain,
/// 2000 steps) the full pipeline beats the source-only baseline by at least
/// 5 mIoU points, averaged over 3 seeds, within 15 minutes.
#[test]
fn criterion_8_adaptation_gain() {
    let start = Instant::now();
    let mut full_scores = Vec::new();
    let mut baseline_scores = Vec::new();
    for seed in [0u64, 1, 2] {
        let mut full = desk_scale_config(seed, "full");
        full.fusion.variant = FusionVariant::Efficient;
        full.prw.enabled = true;
        full_scores.push(train::<f32>(&full).unwrap().final_report.miou);

        let mut baseline = desk_scale_config(seed, "source_only");
        baseline.target_loss_enabled = false;
        baseline_scores.push(train::<f32>(&baseline).unwrap().final_report.miou);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let gain = (mean(&full_scores) - mean(&baseline_scores)) * 100.0;
    let elapsed = start.elapsed();
    assert!(
        gain >= 5.0,
        "gain {gain:.2} points (full {full_scores:?} vs baseline {baseline_scores:?})"
    );
    assert!(elapsed.as_secs() <= 15 * 60, "took {elapsed:?}");
    println!(
        "criterion 8 PASS: full {:.4} vs source-only {:.4} -> +{gain:.1} mIoU points in {:.0}s",
        mean(&full_scores),
        mean(&baseline_scores),
        elapsed.as_secs_f64()
    );
}

/// Criterion 9: ablation ordering over 3 seeds — the combined model is at
/// least as good as DDF alone, which is at least as good as Base, and PRW
/// does not degrade Base; the report has the five-row table layout.
#[test]
fn criterion_9_ablation_direction() {
    use segadapt::ablation::{run_ablation, AblationSpec, Variant};
    let mut base = desk_scale_config(0, "ablation_base");
    base.total_steps = 1200;
    let out_dir = std::env::temp_dir().join("segadapt_acceptance").join("ablation");
    let spec = AblationSpec { base, seeds: vec![0, 1, 2], out_dir: out_dir.clone() };
    let report = run_ablation::<f32>(&spec).unwrap();

    let base_m = report.row(Variant::Base).miou_mean();
    let ddf_m = report.row(Variant::DdfEfficient).miou_mean();
    let prw_m = report.row(Variant::Prw).miou_mean();
    let full_m = report.row(Variant::DdfPrw).miou_mean();
    assert!(full_m >= ddf_m, "full {full_m:.4} < ddf {ddf_m:.4}");
    assert!(ddf_m >= base_m, "ddf {ddf_m:.4} < base {base_m:.4}");
    assert!(prw_m >= base_m, "prw {prw_m:.4} < base {base_m:.4}");

    // report shape: 5 variant rows, 3 seed columns plus mean and std
    let csv = std::fs::read_to_string(out_dir.join("report.csv")).unwrap();
    let lines: Vec<&str> = csv.trim_end().lines().collect();
    assert_eq!(lines.len(), 6);
    for line in &lines[1..] {
        assert_eq!(line.split(',').count(), 6, "{line}");
    }
    assert!(out_dir.join("report.md").is_file());
    println!(
        "criterion 9 PASS: base {base_m:.4} <= ddf {ddf_m:.4} <= full {full_m:.4}; prw {prw_m:.4} >= base"
    );
}

/// Criterion 10: the `train` entry point is bit-deterministic — identical
/// JSON config and seed give byte-identical checkpoints and loss CSVs.
#[test]
fn criterion_10_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out_dir = dir.path().join(name);
        let json = format!(
            r#"{{
            "net": {{"input_channels": 3, "classes": 4, "base_width": 8, "blocks_per_stage": 1}},
            "optim": {{"warmup_steps": 5, "lr_encoder": 1e-3, "lr_decoder": 1e-3}},
            "dataset": {{"kind": "synthetic", "classes": 4, "n_images": 8, "size": 32, "seed": 9}},
            "fusion": {{"variant": "efficient", "patch_size": 8}},
            "prw": {{"enabled": true}},
            "total_steps": 40,
            "eval_every": 0,
            "seed": 3,
            "out_dir": {out_dir:?}
        }}"#,
            out_dir = out_dir.display().to_string()
        );
        let cfg = RunConfig::from_json(&json).unwrap();
        train::<f32>(&cfg).unwrap();
        (
            std::fs::read(out_dir.join("checkpoint.bin")).unwrap(),
            std::fs::read(out_dir.join("loss_log.csv")).unwrap(),
        )
    };
    let (ckpt_a, log_a) = run("a");
    let (ckpt_b, log_b) = run("b");
    assert_eq!(ckpt_a, ckpt_b, "checkpoints differ");
    assert_eq!(log_a, log_b, "loss logs differ");
    println!("criterion 10 PASS: byte-identical checkpoints and loss logs");
}
