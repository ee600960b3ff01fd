//! Command-line surface: every pipeline stage independently plus the
//! end-to-end training loop. Exit codes: 0 success, 1 usage error, 2 data
//! error, 3 numeric failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use segadapt::config::RunConfig;
use segadapt::error::Error;
use segadapt::fusion::{
    build_patch_mask, cnn_fuse, compose_fusion, patch_scores, percentile_threshold, Direction,
    FusionConv, FusionParams, Metric,
};
use segadapt::metrics::{iou_f1, ConfusionMatrix};
use segadapt::net::{forward_logits, grad_check, NetConfig};
use segadapt::ops::{argmax_labels, softmax_channels};
use segadapt::pngio;
use segadapt::prw::{boundary_mask, regional_weight_map, PrwParams};
use segadapt::raster::{Image, WeightMap};
use segadapt::slic::slic_superpixels;
use segadapt::synth::generate_synthetic_pair;
use segadapt::teacher::quality_scalar;
use segadapt::trainer::{load_checkpoint_fusion_conv, load_inference_net, train};
use segadapt::transfer::{transfer, TransferMethod};

#[derive(Parser)]
#[command(name = "segadapt", version, about = "Desk-scale unsupervised domain adaptation for semantic segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic two-domain dataset pair
    Synth(SynthArgs),
    /// Apply a style-transfer method over a directory of images
    Transfer(TransferArgs),
    /// Produce a fused image (plus mask) from a checkpoint and an image pair
    Fuse(FuseArgs),
    /// Emit pseudo-label PNGs, a per-image quality CSV, and optional weight maps
    Pseudo(PseudoArgs),
    /// Emit superpixel id maps and boundary masks
    Superpix(SuperpixArgs),
    /// Run the full training loop from a JSON config
    Train(TrainArgs),
    /// Metrics CSV from prediction and ground-truth label directories
    Eval(EvalArgs),
    /// Per-image predictions (class-index and colorized PNGs) from a checkpoint
    Infer(InferArgs),
    /// Finite-difference gradient check of the tiny network
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output dataset root
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    classes: usize,
    /// Training images per domain
    #[arg(long, default_value_t = 200)]
    n_images: usize,
    /// Square image side in pixels
    #[arg(long, default_value_t = 64)]
    size: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum TransferMethodArg {
    Identity,
    HistogramMatch,
    StatsTransfer,
    Precomputed,
}

#[derive(Args)]
struct TransferArgs {
    #[arg(long, value_enum)]
    method: TransferMethodArg,
    /// Directory of source PNGs
    #[arg(long)]
    src_dir: PathBuf,
    /// Directory of style reference PNGs (target domain)
    #[arg(long, required_unless_present_any = ["precomputed_dir"], default_value = None)]
    ref_dir: Option<PathBuf>,
    /// Directory of precomputed transfers (stem-matched), for --method precomputed
    #[arg(long)]
    precomputed_dir: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Efficient,
    Cnn,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Entropy,
    Snd,
}

#[derive(Clone, Copy, ValueEnum)]
enum DirectionArg {
    SelectLow,
    SelectHigh,
}

#[derive(Clone, Copy, ValueEnum)]
enum WhichNet {
    Teacher,
    Student,
}

#[derive(Args)]
struct FuseArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Source image PNG
    #[arg(long)]
    source: PathBuf,
    /// Transferred image PNG
    #[arg(long)]
    transferred: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, value_enum, default_value_t = VariantArg::Efficient)]
    variant: VariantArg,
    #[arg(long, default_value_t = 8)]
    patch_size: usize,
    /// Percentile in (0, 100]
    #[arg(long, default_value_t = 50.0)]
    c: f64,
    #[arg(long, value_enum, default_value_t = MetricArg::Entropy)]
    metric: MetricArg,
    /// Defaults per metric: entropy selects low, snd selects high
    #[arg(long, value_enum)]
    direction: Option<DirectionArg>,
    #[arg(long, default_value_t = 0.05)]
    snd_temperature: f64,
    /// Which network scores the patches
    #[arg(long, value_enum, default_value_t = WhichNet::Student)]
    which: WhichNet,
}

#[derive(Args)]
struct PseudoArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Directory of target-domain PNGs
    #[arg(long)]
    images: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Confidence threshold for the quality scalar
    #[arg(long, default_value_t = 0.968)]
    delta: f64,
    /// Also write PRW weight maps (16-bit PNG, value = round(weight * 10000))
    #[arg(long)]
    prw: bool,
    #[arg(long, default_value_t = 0.3)]
    beta: f64,
    #[arg(long)]
    n_superpixels: Option<usize>,
    #[arg(long, default_value_t = 10.0)]
    compactness: f64,
    #[arg(long, default_value_t = 10)]
    iterations: usize,
    #[arg(long, default_value_t = 3)]
    boundary_width: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = WhichNet::Teacher)]
    which: WhichNet,
}

#[derive(Args)]
struct SuperpixArgs {
    /// Input image PNGs
    #[arg(required = true)]
    images: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    n_superpixels: Option<usize>,
    #[arg(long, default_value_t = 10.0)]
    compactness: f64,
    #[arg(long, default_value_t = 10)]
    iterations: usize,
    #[arg(long, default_value_t = 3)]
    boundary_width: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    /// JSON run configuration (see README for the field reference)
    #[arg(long)]
    config: PathBuf,
    /// Override the config's seed
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvalArgs {
    /// Directory of predicted label PNGs
    #[arg(long)]
    pred: PathBuf,
    /// Directory of ground-truth label PNGs (stem-matched)
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    classes: usize,
    /// Report CSV path
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    images: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = WhichNet::Teacher)]
    which: WhichNet,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Check the purely linear network (exact-linearity oracle)
    #[arg(long)]
    linear_only: bool,
    #[arg(long, default_value_t = 2)]
    input_channels: usize,
    #[arg(long, default_value_t = 3)]
    classes: usize,
    #[arg(long, default_value_t = 4)]
    base_width: usize,
    #[arg(long, default_value_t = 1)]
    blocks_per_stage: usize,
}

/// Exit codes: usage 1, data 2, numeric 3.
fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::InvalidConfig(_) => 1,
        Error::Numeric(_) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help/--version are not usage errors
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Transfer(args) => cmd_transfer(args),
        Command::Fuse(args) => cmd_fuse(args),
        Command::Pseudo(args) => cmd_pseudo(args),
        Command::Superpix(args) => cmd_superpix(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Infer(args) => cmd_infer(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
    }
}

fn create_dir(dir: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.display().to_string(), source: e })
}

fn cmd_synth(args: SynthArgs) -> Result<(), Error> {
    let pair = generate_synthetic_pair::<f32>(args.seed, args.classes, args.n_images, args.size)?;
    segadapt::dataset::save_pair(&args.out, &pair)?;
    println!(
        "wrote {} source, {} target train, {} target eval images under {}",
        pair.source.len(),
        pair.target_train.len(),
        pair.target_eval.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_transfer(args: TransferArgs) -> Result<(), Error> {
    let method = match args.method {
        TransferMethodArg::Identity => TransferMethod::Identity,
        TransferMethodArg::HistogramMatch => TransferMethod::HistogramMatch,
        TransferMethodArg::StatsTransfer => TransferMethod::StatsTransfer,
        TransferMethodArg::Precomputed => TransferMethod::Precomputed(
            args.precomputed_dir
                .clone()
                .ok_or_else(|| Error::InvalidConfig("--precomputed-dir is required with --method precomputed".into()))?,
        ),
    };
    let stems = pngio::png_stems(&args.src_dir)?;
    if stems.is_empty() {
        return Err(Error::Ingestion(format!("no PNGs in {}", args.src_dir.display())));
    }
    let ref_pool: Vec<Image<f32>> = match (&method, &args.ref_dir) {
        (TransferMethod::Identity | TransferMethod::Precomputed(_), _) => Vec::new(),
        (_, Some(dir)) => pngio::png_stems(dir)?
            .iter()
            .map(|s| pngio::load_image(&pngio::stem_path(dir, s)))
            .collect::<Result<_, _>>()?,
        (_, None) => {
            return Err(Error::InvalidConfig("--ref-dir is required for reference-based methods".into()))
        }
    };
    create_dir(&args.out_dir)?;
    for (i, stem) in stems.iter().enumerate() {
        let src: Image<f32> = pngio::load_image(&pngio::stem_path(&args.src_dir, stem))?;
        let out = transfer(&method, &src, stem, &ref_pool, args.seed.wrapping_add(i as u64))?;
        pngio::save_image(&pngio::stem_path(&args.out_dir, stem), &out)?;
    }
    println!("transferred {} images into {}", stems.len(), args.out_dir.display());
    Ok(())
}

fn cmd_fuse(args: FuseArgs) -> Result<(), Error> {
    let (net_cfg, params) =
        load_inference_net::<f32>(&args.checkpoint, matches!(args.which, WhichNet::Teacher))?;
    let x_s: Image<f32> = pngio::load_image(&args.source)?;
    let x_st: Image<f32> = pngio::load_image(&args.transferred)?;
    create_dir(&args.out_dir)?;
    match args.variant {
        VariantArg::Efficient => {
            let fp = FusionParams {
                c: args.c,
                metric: match args.metric {
                    MetricArg::Entropy => Metric::Entropy,
                    MetricArg::Snd => Metric::Snd,
                },
                direction: args.direction.map(|d| match d {
                    DirectionArg::SelectLow => Direction::SelectLow,
                    DirectionArg::SelectHigh => Direction::SelectHigh,
                }),
                snd_temperature: args.snd_temperature,
            };
            fp.validate()?;
            let logits = forward_logits(&net_cfg, &params, &x_st)?;
            let probs = softmax_channels(&logits)?;
            let scores = patch_scores(&probs, args.patch_size, fp.metric, fp.snd_temperature)?;
            let t = percentile_threshold(&scores, fp.c)?;
            let mask = build_patch_mask(&scores, t, fp.effective_direction());
            let fused = compose_fusion(&x_s, &x_st, &mask, args.patch_size)?;
            pngio::save_image(&args.out_dir.join("x_mix.png"), &fused)?;
            pngio::save_bitmask(
                &args.out_dir.join("mask.png"),
                mask.patches_y,
                mask.patches_x,
                &mask.bits,
            )?;
            println!(
                "efficient fusion: {}/{} patches transferred; wrote x_mix.png and mask.png",
                mask.count_set(),
                mask.bits.len()
            );
        }
        VariantArg::Cnn => {
            let fc = load_checkpoint_fusion_conv::<f32>(&args.checkpoint)?
                .unwrap_or_else(|| FusionConv::averaging_init(x_s.channels()));
            let (fused, _) = cnn_fuse(&fc, &x_s, &x_st)?;
            pngio::save_image(&args.out_dir.join("x_mix.png"), &fused)?;
            println!("cnn fusion: wrote x_mix.png");
        }
    }
    Ok(())
}

fn cmd_pseudo(args: PseudoArgs) -> Result<(), Error> {
    let (net_cfg, params) =
        load_inference_net::<f32>(&args.checkpoint, matches!(args.which, WhichNet::Teacher))?;
    let stems = pngio::png_stems(&args.images)?;
    if stems.is_empty() {
        return Err(Error::Ingestion(format!("no PNGs in {}", args.images.display())));
    }
    create_dir(&args.out)?;
    let prw_params = PrwParams {
        n_superpixels: args.n_superpixels,
        compactness: args.compactness,
        iterations: args.iterations,
        boundary_width: args.boundary_width,
        beta: args.beta,
    };
    if args.prw {
        prw_params.validate()?;
    }
    let mut csv = String::from("image,w_base\n");
    for (i, stem) in stems.iter().enumerate() {
        let img: Image<f32> = pngio::load_image(&pngio::stem_path(&args.images, stem))?;
        let logits = forward_logits(&net_cfg, &params, &img)?;
        let probs = softmax_channels(&logits)?;
        let labels = argmax_labels(&probs);
        let w_base = quality_scalar(&probs, args.delta)?;
        pngio::save_label_map(&args.out.join(format!("{stem}_pseudo.png")), &labels)?;
        csv.push_str(&format!("{stem},{w_base}\n"));
        if args.prw {
            let target = prw_params.target_for(img.height(), img.width());
            let sp = slic_superpixels(
                &img,
                target,
                prw_params.compactness,
                prw_params.iterations,
                args.seed.wrapping_add(i as u64),
            )?;
            let mb = boundary_mask(&sp, prw_params.boundary_width);
            let wm: WeightMap<f32> = regional_weight_map(w_base, &mb, prw_params.beta)?;
            let scaled: Vec<u16> =
                wm.data().iter().map(|&w| (f64::from(w) * 10000.0).round() as u16).collect();
            pngio::save_gray16(
                &args.out.join(format!("{stem}_weights.png")),
                wm.height(),
                wm.width(),
                &scaled,
            )?;
        }
    }
    let csv_path = args.out.join("w_base.csv");
    std::fs::write(&csv_path, csv)
        .map_err(|e| Error::Io { path: csv_path.display().to_string(), source: e })?;
    println!("wrote pseudo-labels for {} images into {}", stems.len(), args.out.display());
    Ok(())
}

fn cmd_superpix(args: SuperpixArgs) -> Result<(), Error> {
    create_dir(&args.out)?;
    for path in &args.images {
        let img: Image<f32> = pngio::load_image(path)?;
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::Ingestion(format!("{}: no file stem", path.display())))?;
        let target =
            args.n_superpixels.unwrap_or_else(|| (img.height() * img.width() / 256).max(1));
        let sp = slic_superpixels(&img, target, args.compactness, args.iterations, args.seed)?;
        let ids: Vec<u16> = sp.data().iter().map(|&v| v as u16).collect();
        pngio::save_gray16(
            &args.out.join(format!("{stem}_superpixels.png")),
            sp.height(),
            sp.width(),
            &ids,
        )?;
        let mb = boundary_mask(&sp, args.boundary_width);
        pngio::save_bitmask(
            &args.out.join(format!("{stem}_boundary.png")),
            mb.height(),
            mb.width(),
            mb.bits(),
        )?;
        println!("{stem}: {} superpixels", sp.n_superpixels());
    }
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<(), Error> {
    let mut cfg = RunConfig::from_file(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let outcome = train::<f32>(&cfg)?;
    println!(
        "trained {} steps: target miou {:.4}, mf1 {:.4}",
        cfg.total_steps, outcome.final_report.miou, outcome.final_report.mf1
    );
    println!("checkpoint: {}", outcome.checkpoint.display());
    println!("loss log:   {}", outcome.loss_log.display());
    println!("report:     {}", outcome.report_csv.display());
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), Error> {
    let stems = pngio::png_stems(&args.gt)?;
    if stems.is_empty() {
        return Err(Error::Ingestion(format!("no PNGs in {}", args.gt.display())));
    }
    let mut cm = ConfusionMatrix::new(args.classes);
    for stem in &stems {
        let gt = pngio::load_label_map(&pngio::stem_path(&args.gt, stem), args.classes)?;
        let pred_path = pngio::stem_path(&args.pred, stem);
        if !pred_path.is_file() {
            return Err(Error::Ingestion(format!("missing prediction for stem '{stem}'")));
        }
        let pred = pngio::load_label_map(&pred_path, args.classes)?;
        cm.accumulate(&pred, &gt)?;
    }
    let report = iou_f1(&cm)?;
    std::fs::write(&args.out, report.to_csv())
        .map_err(|e| Error::Io { path: args.out.display().to_string(), source: e })?;
    println!("evaluated {} images: miou {:.4}, mf1 {:.4}", stems.len(), report.miou, report.mf1);
    println!("report: {}", args.out.display());
    Ok(())
}

fn cmd_infer(args: InferArgs) -> Result<(), Error> {
    let (net_cfg, params) =
        load_inference_net::<f32>(&args.checkpoint, matches!(args.which, WhichNet::Teacher))?;
    let stems = pngio::png_stems(&args.images)?;
    if stems.is_empty() {
        return Err(Error::Ingestion(format!("no PNGs in {}", args.images.display())));
    }
    create_dir(&args.out)?;
    for stem in &stems {
        let img: Image<f32> = pngio::load_image(&pngio::stem_path(&args.images, stem))?;
        let logits = forward_logits(&net_cfg, &params, &img)?;
        let labels = argmax_labels(&softmax_channels(&logits)?);
        pngio::save_label_map(&args.out.join(format!("{stem}_pred.png")), &labels)?;
        pngio::save_label_color(&args.out.join(format!("{stem}_pred_color.png")), &labels)?;
    }
    println!("wrote predictions for {} images into {}", stems.len(), args.out.display());
    Ok(())
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<(), Error> {
    let cfg = NetConfig {
        input_channels: args.input_channels,
        classes: args.classes,
        base_width: args.base_width,
        blocks_per_stage: args.blocks_per_stage,
        linear_only: args.linear_only,
    };
    cfg.validate()?;
    let err = grad_check(&cfg, args.seed);
    println!("max relative error: {err:.3e}");
    if err > 1e-4 {
        return Err(Error::Numeric(format!("gradient check failed: {err:.3e} > 1e-4")));
    }
    Ok(())
}
