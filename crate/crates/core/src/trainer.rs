//! Hybrid training loop: source loss on the fused image, pseudo-label loss
//! on the target, EMA teacher updates, and run orchestration (logging,
//! evaluation, checkpoints).
//!
//! Every step executes, in order: style transfer of the source image, fusion
//! per the configured variant, the source cross-entropy on the fused image,
//! teacher pseudo-labels and the quality scalar on the target image, the
//! regionally weighted target cross-entropy, one optimizer step over the
//! accumulated gradients, and the teacher EMA update. The total loss is the
//! exact sum of the two terms.
//!
//! All randomness derives from the run seed, the step counter, and fixed
//! purpose tags, so runs are bit-reproducible and checkpoints resume exactly.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::augment::augment;
use crate::checkpoint::{self, meta_tensor, meta_value, take_prefix, with_prefix};
use crate::config::{DatasetConfig, FusionVariant, RunConfig};
use crate::dataset::{self, DomainDataset};
use crate::error::{Error, Result};
use crate::fusion::{cnn_fuse, cnn_fuse_backward, efficient_fuse_masked, FusionConv};
use crate::metrics::{iou_f1, ConfusionMatrix, MetricsReport};
use crate::net::{self, ParamSet};
use crate::ops::{softmax_channels, weighted_cross_entropy};
use crate::optim::{optimizer_step, OptimState};
use crate::prw::{prw_boundary, regional_weight_map, BoundaryMask};
use crate::raster::WeightMap;
use crate::scalar::Real;
use crate::synth::generate_synthetic_pair;
use crate::teacher::{quality_scalar, TeacherState};
use crate::transfer::{transfer, TransferMethod};

const TAG_TRANSFER: u64 = 1;
const TAG_AUG_SRC: u64 = 2;
const TAG_AUG_TGT: u64 = 3;
const TAG_PRW: u64 = 4;
const TAG_SHUFFLE_SRC: u64 = 5;
const TAG_SHUFFLE_TGT: u64 = 6;
const TAG_DATASET: u64 = 7;

fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

fn mix3(a: u64, b: u64, c: u64) -> u64 {
    mix(a, mix(b, c))
}

/// One row of the loss log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub l_s_mix: f64,
    pub l_t_adj: f64,
    pub l_total: f64,
    /// Effective decoder learning rate at this step.
    pub lr: f64,
}

/// One teacher evaluation on the target eval split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalRecord {
    pub step: usize,
    pub miou: f64,
    pub mf1: f64,
}

/// Mutable training state: student, optimizer, teacher, and the fusion
/// convolution when the CNN variant is active.
pub struct TrainState<R: Real> {
    pub student: ParamSet<R>,
    pub optim: OptimState<R>,
    pub teacher: TeacherState<R>,
    pub fusion_conv: Option<FusionConv<R>>,
    pub fusion_optim: Option<OptimState<R>>,
    pub step: usize,
}

/// Artifacts and final scores of a completed run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub final_report: MetricsReport,
    pub losses: Vec<LossRecord>,
    pub evals: Vec<EvalRecord>,
    pub checkpoint: PathBuf,
    pub loss_log: PathBuf,
    pub report_csv: PathBuf,
}

/// Owns the datasets and training state of one run.
pub struct Trainer<R: Real> {
    cfg: RunConfig,
    method: TransferMethod,
    source: DomainDataset<R>,
    target_train: DomainDataset<R>,
    target_eval: DomainDataset<R>,
    state: TrainState<R>,
    boundary_cache: Vec<Option<BoundaryMask>>,
    losses: Vec<LossRecord>,
    evals: Vec<EvalRecord>,
}

impl<R: Real> Trainer<R> {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let method = cfg.transfer.to_method()?;

        let (source, target_train, target_eval) = match &cfg.dataset {
            DatasetConfig::Synthetic { classes, n_images, size, seed } => {
                let pair = generate_synthetic_pair::<R>(
                    seed.unwrap_or_else(|| mix(cfg.seed, TAG_DATASET)),
                    *classes,
                    *n_images,
                    *size,
                )?;
                (pair.source, pair.target_train, pair.target_eval)
            }
            DatasetConfig::Disk { root, classes } => {
                let source = dataset::load_source::<R>(root, *classes)?;
                let (train, eval) = dataset::load_target::<R>(root, *classes)?;
                (source, train, eval)
            }
        };
        if source.labels.is_none() {
            return Err(Error::Ingestion("source dataset has no labels".into()));
        }
        if target_eval.is_empty() {
            return Err(Error::Ingestion("target evaluation split is empty".into()));
        }

        let state = match &cfg.resume {
            Some(path) => Self::restore_state(&cfg, path)?,
            None => Self::fresh_state(&cfg)?,
        };
        let n_targets = target_train.len();
        Ok(Trainer {
            cfg,
            method,
            source,
            target_train,
            target_eval,
            state,
            boundary_cache: vec![None; n_targets],
            losses: Vec::new(),
            evals: Vec::new(),
        })
    }

    fn fresh_state(cfg: &RunConfig) -> Result<TrainState<R>> {
        let student = net::init_params::<R>(&cfg.net, cfg.seed);
        let optim = OptimState::new(cfg.optim.clone(), cfg.total_steps, &student);
        let teacher = TeacherState::new(&student, cfg.ema_alpha)?;
        let (fusion_conv, fusion_optim) = if cfg.fusion.variant == FusionVariant::Cnn {
            let fc = FusionConv::averaging_init(cfg.net.input_channels);
            let fo = OptimState::new(cfg.optim.clone(), cfg.total_steps, fc.params());
            (Some(fc), Some(fo))
        } else {
            (None, None)
        };
        Ok(TrainState { student, optim, teacher, fusion_conv, fusion_optim, step: 0 })
    }

    fn restore_state(cfg: &RunConfig, path: &Path) -> Result<TrainState<R>> {
        let tensors = checkpoint::load::<R>(path)?;
        let student = take_prefix(&tensors, "student.")?;
        let reference = net::init_params::<R>(&cfg.net, cfg.seed);
        if !student.shape_matches(&reference) {
            return Err(Error::Ingestion(format!(
                "{}: checkpoint does not match the configured network",
                path.display()
            )));
        }
        let mut optim = OptimState::new(cfg.optim.clone(), cfg.total_steps, &student);
        optim.first_moment = take_prefix(&tensors, "optim.m.")?;
        optim.second_moment = take_prefix(&tensors, "optim.v.")?;
        optim.step = meta_value(&tensors, "optim_step")? as usize;
        let teacher = TeacherState::from_parts(
            take_prefix(&tensors, "teacher.")?,
            cfg.ema_alpha,
            meta_value(&tensors, "teacher_steps")? as usize,
        )?;
        let (fusion_conv, fusion_optim) = if cfg.fusion.variant == FusionVariant::Cnn {
            let fc = FusionConv::from_params(take_prefix(&tensors, "fusionconv.")?)?;
            let mut fo = OptimState::new(cfg.optim.clone(), cfg.total_steps, fc.params());
            fo.first_moment = take_prefix(&tensors, "fusionoptim.m.")?;
            fo.second_moment = take_prefix(&tensors, "fusionoptim.v.")?;
            fo.step = meta_value(&tensors, "fusion_optim_step")? as usize;
            (Some(fc), Some(fo))
        } else {
            (None, None)
        };
        let step = meta_value(&tensors, "step")? as usize;
        Ok(TrainState { student, optim, teacher, fusion_conv, fusion_optim, step })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn state(&self) -> &TrainState<R> {
        &self.state
    }

    pub fn losses(&self) -> &[LossRecord] {
        &self.losses
    }

    /// Index into a split for the `cursor`-th draw: a fresh seeded shuffle
    /// per epoch, reconstructible from the cursor alone (resume-exact).
    fn scheduled_index(&self, len: usize, cursor: usize, tag: u64) -> usize {
        let epoch = (cursor / len) as u64;
        let pos = cursor % len;
        let mut order: Vec<u32> = (0..len as u32).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(mix3(self.cfg.seed, tag, epoch));
        order.shuffle(&mut rng);
        order[pos] as usize
    }

    fn boundary_for(&mut self, tgt_idx: usize) -> Result<&BoundaryMask> {
        if self.boundary_cache[tgt_idx].is_none() {
            let mask = prw_boundary(
                &self.target_train.images[tgt_idx],
                &self.cfg.prw.params,
                mix3(self.cfg.seed, TAG_PRW, tgt_idx as u64),
            )?;
            self.boundary_cache[tgt_idx] = Some(mask);
        }
        Ok(self.boundary_cache[tgt_idx].as_ref().unwrap())
    }

    /// Runs one training step. Returns `(L_S_mix, L_T_adj, L_total)` with the
    /// total equal to the exact sum of the two terms.
    pub fn train_step(&mut self) -> Result<(f64, f64, f64)> {
        let step = self.state.step + 1;
        let pairs = self.cfg.batch_size / 2;
        let mut grad_acc = self.state.student.zeros_like();
        let mut fusion_grad_acc = self.state.fusion_conv.as_ref().map(|fc| fc.params().zeros_like());
        let mut loss_s_sum = 0.0f64;
        let mut loss_t_sum = 0.0f64;

        for j in 0..pairs {
            let src_cursor = (step - 1) * pairs + j;
            let tgt_cursor = src_cursor;
            let src_idx = self.scheduled_index(self.source.len(), src_cursor, TAG_SHUFFLE_SRC);
            let tgt_idx =
                self.scheduled_index(self.target_train.len(), tgt_cursor, TAG_SHUFFLE_TGT);
            let src_epoch = (src_cursor / self.source.len()) as u64;

            let x_s = self.source.images[src_idx].clone();
            let y_s = self.source.labels.as_ref().expect("validated")[src_idx].clone();
            let x_t = self.target_train.images[tgt_idx].clone();
            let (h, w) = (x_s.height(), x_s.width());

            // (1) style transfer, reference redrawn per image per epoch
            let x_st = if self.cfg.fusion.variant != FusionVariant::None {
                Some(transfer(
                    &self.method,
                    &x_s,
                    &self.source.names[src_idx],
                    &self.target_train.images,
                    mix3(self.cfg.seed, TAG_TRANSFER, mix(src_idx as u64, src_epoch)),
                )?)
            } else {
                None
            };

            // (2) fusion; the source pair shares one augmentation draw so the
            // two styles stay aligned
            let aug_seed = mix3(self.cfg.seed, TAG_AUG_SRC, src_cursor as u64);
            let x_s_aug = augment(&x_s, &self.cfg.augment, aug_seed);
            let (x_mix, fuse_cache) = match self.cfg.fusion.variant {
                FusionVariant::None => (x_s_aug, None),
                FusionVariant::Cnn => {
                    let x_st_aug = augment(x_st.as_ref().unwrap(), &self.cfg.augment, aug_seed);
                    let fc = self.state.fusion_conv.as_ref().expect("cnn variant");
                    let (mix_img, cache) = cnn_fuse(fc, &x_s_aug, &x_st_aug)?;
                    (mix_img, Some(cache))
                }
                FusionVariant::Efficient => {
                    let x_st_aug = augment(x_st.as_ref().unwrap(), &self.cfg.augment, aug_seed);
                    let (mix_img, _) = efficient_fuse_masked(
                        &self.cfg.net,
                        &self.state.student,
                        &x_s_aug,
                        &x_st_aug,
                        &self.cfg.fusion.params,
                        self.cfg.fusion.patch_size,
                    )?;
                    (mix_img, None)
                }
            };

            // (3) source loss on the fused image, label unchanged
            let (logits_s, cache_s) = net::forward(&self.cfg.net, &self.state.student, &x_mix)?;
            let probs_s = softmax_channels(&logits_s)?;
            let (loss_s, grad_logits_s) =
                weighted_cross_entropy(&probs_s, &y_s, &WeightMap::ones(h, w))?;
            let loss_s = loss_s.to_f64_lossy();
            if !loss_s.is_finite() {
                return Err(Error::Numeric(format!("L_S_mix is not finite at step {step}")));
            }
            let (grads_s, grad_input_s) =
                net::backward(&self.cfg.net, &self.state.student, &cache_s, &grad_logits_s)?;
            add_params(&mut grad_acc, &grads_s);
            if let (Some(cache), Some(acc)) = (&fuse_cache, fusion_grad_acc.as_mut()) {
                let fc = self.state.fusion_conv.as_ref().expect("cnn variant");
                let (fgrads, _, _) = cnn_fuse_backward(fc, cache, &grad_input_s)?;
                add_params(acc, &fgrads);
            }
            loss_s_sum += loss_s;

            // (4)-(6) pseudo-labels, quality scalar, weighted target loss
            if self.cfg.target_loss_enabled {
                let (pseudo, probs_teacher) =
                    self.state.teacher.pseudo_label(&self.cfg.net, &x_t)?;
                let w_base = quality_scalar(&probs_teacher, self.cfg.quality_delta)?;
                let wmap: WeightMap<R> = if self.cfg.prw.enabled {
                    let beta = self.cfg.prw.params.beta;
                    let boundary = self.boundary_for(tgt_idx)?;
                    regional_weight_map(w_base, boundary, beta)?
                } else {
                    WeightMap::constant(h, w, R::from_f64_lossy(w_base))?
                };
                let x_t_in = augment(
                    &x_t,
                    &self.cfg.augment,
                    mix3(self.cfg.seed, TAG_AUG_TGT, tgt_cursor as u64),
                );
                let (logits_t, cache_t) =
                    net::forward(&self.cfg.net, &self.state.student, &x_t_in)?;
                let probs_t = softmax_channels(&logits_t)?;
                let (loss_t, grad_logits_t) = weighted_cross_entropy(&probs_t, &pseudo, &wmap)?;
                let loss_t = loss_t.to_f64_lossy();
                if !loss_t.is_finite() {
                    return Err(Error::Numeric(format!("L_T_adj is not finite at step {step}")));
                }
                let (grads_t, _) =
                    net::backward(&self.cfg.net, &self.state.student, &cache_t, &grad_logits_t)?;
                add_params(&mut grad_acc, &grads_t);
                loss_t_sum += loss_t;
            }
        }

        let inv_pairs = R::from_f64_lossy(1.0 / pairs as f64);
        scale_params(&mut grad_acc, inv_pairs);
        optimizer_step(&mut self.state.optim, &mut self.state.student, &grad_acc)?;
        if let (Some(fc), Some(fo), Some(mut acc)) = (
            self.state.fusion_conv.as_mut(),
            self.state.fusion_optim.as_mut(),
            fusion_grad_acc,
        ) {
            scale_params(&mut acc, inv_pairs);
            optimizer_step(fo, fc.params_mut(), &acc)?;
        }

        // (9) EMA after the optimizer step
        self.state.teacher.ema_update(&self.state.student)?;
        self.state.step = step;

        let l_s = loss_s_sum / pairs as f64;
        let l_t = loss_t_sum / pairs as f64;
        let l_total = l_s + l_t;
        self.losses.push(LossRecord {
            step,
            l_s_mix: l_s,
            l_t_adj: l_t,
            l_total,
            lr: self.state.optim.effective_lr(crate::net::ParamGroup::Decoder, step),
        });
        Ok((l_s, l_t, l_total))
    }

    /// Teacher evaluation on the held-out target split.
    pub fn evaluate(&self) -> Result<MetricsReport> {
        self.evaluate_params(self.state.teacher.params())
    }

    /// Student evaluation on the held-out target split.
    pub fn evaluate_student(&self) -> Result<MetricsReport> {
        self.evaluate_params(&self.state.student)
    }

    fn evaluate_params(&self, params: &ParamSet<R>) -> Result<MetricsReport> {
        let labels = self
            .target_eval
            .labels
            .as_ref()
            .ok_or_else(|| Error::Ingestion("target eval split has no labels".into()))?;
        let mut cm = ConfusionMatrix::new(self.cfg.net.classes);
        for (img, gt) in self.target_eval.images.iter().zip(labels) {
            let logits = net::forward_logits(&self.cfg.net, params, img)?;
            let pred = crate::ops::argmax_labels(&softmax_channels(&logits)?);
            cm.accumulate(&pred, gt)?;
        }
        iou_f1(&cm)
    }

    fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let mut tensors = with_prefix(&self.state.student, "student.");
        tensors.extend(with_prefix(&self.state.optim.first_moment, "optim.m."));
        tensors.extend(with_prefix(&self.state.optim.second_moment, "optim.v."));
        tensors.extend(with_prefix(self.state.teacher.params(), "teacher."));
        if let (Some(fc), Some(fo)) = (&self.state.fusion_conv, &self.state.fusion_optim) {
            tensors.extend(with_prefix(fc.params(), "fusionconv."));
            tensors.extend(with_prefix(&fo.first_moment, "fusionoptim.m."));
            tensors.extend(with_prefix(&fo.second_moment, "fusionoptim.v."));
            tensors.push(meta_tensor("fusion_optim_step", fo.step as f64));
        }
        tensors.push(meta_tensor("step", self.state.step as f64));
        tensors.push(meta_tensor("optim_step", self.state.optim.step as f64));
        tensors.push(meta_tensor("teacher_steps", self.state.teacher.steps_seen() as f64));
        tensors.extend(net_config_meta(&self.cfg.net));
        checkpoint::save(path, &tensors)
    }

    fn write_loss_log(&self, path: &Path) -> Result<()> {
        let mut out = String::from("step,L_S_mix,L_T_adj,L_total,lr\n");
        for r in &self.losses {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.step, r.l_s_mix, r.l_t_adj, r.l_total, r.lr
            ));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
    }

    /// Runs to `total_steps`, evaluating and checkpointing per the config,
    /// then writes the loss log, evaluation history, metrics report, and
    /// final checkpoint into `out_dir`.
    pub fn run(&mut self) -> Result<TrainOutcome> {
        let out_dir = self.cfg.out_dir.clone();
        std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;

        while self.state.step < self.cfg.total_steps {
            self.train_step()?;
            let step = self.state.step;
            if self.cfg.eval_every > 0 && step % self.cfg.eval_every == 0 && step != self.cfg.total_steps
            {
                let report = self.evaluate()?;
                self.evals.push(EvalRecord { step, miou: report.miou, mf1: report.mf1 });
            }
            if self.cfg.checkpoint_every > 0 && step % self.cfg.checkpoint_every == 0 {
                self.save_checkpoint(&out_dir.join(format!("checkpoint_step{step}.bin")))?;
            }
        }

        let final_report = self.evaluate()?;
        self.evals.push(EvalRecord {
            step: self.state.step,
            miou: final_report.miou,
            mf1: final_report.mf1,
        });

        let checkpoint_path = out_dir.join("checkpoint.bin");
        self.save_checkpoint(&checkpoint_path)?;
        let loss_log = out_dir.join("loss_log.csv");
        self.write_loss_log(&loss_log)?;

        let report_csv = out_dir.join("report.csv");
        std::fs::write(&report_csv, final_report.to_csv())
            .map_err(|e| Error::io(report_csv.display().to_string(), e))?;

        let eval_csv = out_dir.join("eval_history.csv");
        let mut text = String::from("step,miou,mf1\n");
        for e in &self.evals {
            text.push_str(&format!("{},{},{}\n", e.step, e.miou, e.mf1));
        }
        std::fs::write(&eval_csv, text).map_err(|e| Error::io(eval_csv.display().to_string(), e))?;

        Ok(TrainOutcome {
            final_report,
            losses: self.losses.clone(),
            evals: self.evals.clone(),
            checkpoint: checkpoint_path,
            loss_log,
            report_csv,
        })
    }
}

/// Convenience entry: build a trainer from the config and run it.
pub fn train<R: Real>(cfg: &RunConfig) -> Result<TrainOutcome> {
    Trainer::<R>::new(cfg.clone())?.run()
}

fn add_params<R: Real>(acc: &mut ParamSet<R>, delta: &ParamSet<R>) {
    for (a, d) in acc.tensors_mut().iter_mut().zip(delta.tensors()) {
        for (av, &dv) in a.data.iter_mut().zip(&d.data) {
            *av += dv;
        }
    }
}

fn scale_params<R: Real>(params: &mut ParamSet<R>, s: R) {
    for t in params.tensors_mut() {
        for v in &mut t.data {
            *v *= s;
        }
    }
}

fn net_config_meta<R: Real>(net: &crate::net::NetConfig) -> Vec<crate::net::Tensor<R>> {
    vec![
        meta_tensor("net.input_channels", net.input_channels as f64),
        meta_tensor("net.classes", net.classes as f64),
        meta_tensor("net.base_width", net.base_width as f64),
        meta_tensor("net.blocks_per_stage", net.blocks_per_stage as f64),
        meta_tensor("net.linear_only", net.linear_only as u8 as f64),
    ]
}

/// Network shape stored alongside the tensors, so inference commands are
/// self-contained.
pub fn net_config_from_tensors<R: Real>(tensors: &[crate::net::Tensor<R>]) -> Result<crate::net::NetConfig> {
    Ok(crate::net::NetConfig {
        input_channels: meta_value(tensors, "net.input_channels")? as usize,
        classes: meta_value(tensors, "net.classes")? as usize,
        base_width: meta_value(tensors, "net.base_width")? as usize,
        blocks_per_stage: meta_value(tensors, "net.blocks_per_stage")? as usize,
        linear_only: meta_value(tensors, "net.linear_only")? != 0.0,
    })
}

/// Loads a checkpointed network (teacher preferred, student otherwise) plus
/// its shape configuration, for inference-style commands.
pub fn load_inference_net<R: Real>(
    path: &Path,
    prefer_teacher: bool,
) -> Result<(crate::net::NetConfig, ParamSet<R>)> {
    let tensors = checkpoint::load::<R>(path)?;
    let cfg = net_config_from_tensors(&tensors)?;
    let params = if prefer_teacher {
        take_prefix(&tensors, "teacher.").or_else(|_| take_prefix(&tensors, "student."))?
    } else {
        take_prefix(&tensors, "student.")?
    };
    Ok((cfg, params))
}

/// Fusion convolution stored in a checkpoint by a CNN-variant run, when
/// present.
pub fn load_checkpoint_fusion_conv<R: Real>(path: &Path) -> Result<Option<FusionConv<R>>> {
    let tensors = checkpoint::load::<R>(path)?;
    match take_prefix(&tensors, "fusionconv.") {
        Ok(params) => Ok(Some(FusionConv::from_params(params)?)),
        Err(_) => Ok(None),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{DatasetConfig, FusionConfig, PrwConfig, TransferConfig, TransferMethodKind};
    use crate::net::NetConfig;
    use crate::optim::OptimConfig;

    fn tiny_run_config(dir: &Path, seed: u64) -> RunConfig {
        RunConfig {
            net: NetConfig {
                input_channels: 3,
                classes: 4,
                base_width: 4,
                blocks_per_stage: 1,
                linear_only: false,
            },
            optim: OptimConfig { warmup_steps: 5, ..OptimConfig::default() },
            ema_alpha: 0.9,
            quality_delta: 0.5,
            transfer: TransferConfig {
                method: TransferMethodKind::HistogramMatch,
                precomputed_dir: None,
            },
            fusion: FusionConfig::default(),
            prw: PrwConfig::default(),
            augment: crate::augment::AugmentParams::default(),
            target_loss_enabled: true,
            batch_size: 2,
            total_steps: 12,
            seed,
            dataset: DatasetConfig::Synthetic { classes: 4, n_images: 6, size: 32, seed: None },
            out_dir: dir.to_path_buf(),
            eval_every: 0,
            checkpoint_every: 0,
            resume: None,
        }
    }

    #[test]
    fn total_loss_is_the_exact_sum() {
        let dir = tempfile::tempdir().unwrap();
        let mut trainer = Trainer::<f32>::new(tiny_run_config(dir.path(), 0)).unwrap();
        for _ in 0..3 {
            let (ls, lt, total) = trainer.train_step().unwrap();
            assert_eq!(total, ls + lt);
            assert!(ls.is_finite() && lt.is_finite());
        }
    }

    #[test]
    fn alpha_one_freezes_the_teacher_through_steps() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_run_config(dir.path(), 1);
        cfg.ema_alpha = 1.0;
        let mut trainer = Trainer::<f32>::new(cfg).unwrap();
        let before = trainer.state.teacher.params().clone();
        trainer.train_step().unwrap();
        trainer.train_step().unwrap();
        assert_eq!(trainer.state.teacher.params(), &before);
    }

    #[test]
    fn steps_are_deterministic_across_trainers() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let mut a = Trainer::<f32>::new(tiny_run_config(dir_a.path(), 2)).unwrap();
        let mut b = Trainer::<f32>::new(tiny_run_config(dir_b.path(), 2)).unwrap();
        for _ in 0..4 {
            assert_eq!(a.train_step().unwrap(), b.train_step().unwrap());
        }
        assert_eq!(a.state.student, b.state.student);
    }

    #[test]
    fn zero_steps_still_produces_a_report() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_run_config(dir.path(), 3);
        cfg.total_steps = 0;
        cfg.optim.warmup_steps = 0;
        let outcome = Trainer::<f32>::new(cfg).unwrap().run().unwrap();
        assert!(outcome.losses.is_empty());
        assert!(outcome.final_report.miou >= 0.0);
        assert!(outcome.checkpoint.exists());
        assert!(outcome.report_csv.exists());
    }

    #[test]
    fn source_only_config_matches_standalone_supervised_loop() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_run_config(dir.path(), 4);
        cfg.target_loss_enabled = false;
        cfg.fusion.variant = FusionVariant::None;
        cfg.transfer.method = TransferMethodKind::Identity;
        cfg.prw.enabled = false;
        cfg.augment = crate::augment::AugmentParams::none();
        cfg.total_steps = 6;

        let mut trainer = Trainer::<f32>::new(cfg.clone()).unwrap();

        // standalone supervised loop over the same schedule and primitives
        let pair = generate_synthetic_pair::<f32>(mix(cfg.seed, TAG_DATASET), 4, 6, 32).unwrap();
        let mut params = net::init_params::<f32>(&cfg.net, cfg.seed);
        let mut opt = OptimState::new(cfg.optim.clone(), cfg.total_steps, &params);
        let labels = pair.source.labels.as_ref().unwrap();
        let mut oracle_losses = Vec::new();
        for step in 1..=cfg.total_steps {
            let cursor = step - 1;
            let epoch = (cursor / pair.source.len()) as u64;
            let mut order: Vec<u32> = (0..pair.source.len() as u32).collect();
            let mut rng =
                ChaCha8Rng::seed_from_u64(mix3(cfg.seed, TAG_SHUFFLE_SRC, epoch));
            order.shuffle(&mut rng);
            let idx = order[cursor % pair.source.len()] as usize;
            let x = &pair.source.images[idx];
            let (logits, cache) = net::forward(&cfg.net, &params, x).unwrap();
            let p = softmax_channels(&logits).unwrap();
            let (loss, grad) = weighted_cross_entropy(
                &p,
                &labels[idx],
                &WeightMap::ones(x.height(), x.width()),
            )
            .unwrap();
            let (grads, _) = net::backward(&cfg.net, &params, &cache, &grad).unwrap();
            optimizer_step(&mut opt, &mut params, &grads).unwrap();
            oracle_losses.push(loss.to_f64_lossy());
        }

        for step in 0..cfg.total_steps {
            let (ls, lt, _) = trainer.train_step().unwrap();
            assert_eq!(lt, 0.0);
            assert_eq!(ls, oracle_losses[step], "loss trace diverged at step {}", step + 1);
        }
        assert_eq!(&trainer.state.student, &params);
    }

    #[test]
    fn source_only_loss_trends_downward() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_run_config(dir.path(), 21);
        cfg.target_loss_enabled = false;
        cfg.optim.warmup_steps = 10;
        cfg.optim.lr_encoder = 1e-3;
        cfg.optim.lr_decoder = 1e-3;
        cfg.total_steps = 200;
        cfg.dataset = DatasetConfig::Synthetic { classes: 4, n_images: 16, size: 32, seed: Some(2) };
        let mut trainer = Trainer::<f32>::new(cfg).unwrap();
        let mut losses = Vec::new();
        for _ in 0..200 {
            losses.push(trainer.train_step().unwrap().0);
        }
        // best-fit slope over the loss trace is negative
        let n = losses.len() as f64;
        let mean_x = (n - 1.0) / 2.0;
        let mean_y = losses.iter().sum::<f64>() / n;
        let mut cov = 0.0;
        let mut var = 0.0;
        for (i, &y) in losses.iter().enumerate() {
            cov += (i as f64 - mean_x) * (y - mean_y);
            var += (i as f64 - mean_x).powi(2);
        }
        let slope = cov / var;
        assert!(slope < 0.0, "loss slope {slope} is not negative");
        // and the target-domain training labels were never even loaded
        assert!(trainer.target_train.labels.is_none());
    }

    #[test]
    fn resume_reproduces_the_uninterrupted_run() {
        let dir_full = tempfile::tempdir().unwrap();
        let dir_resume = tempfile::tempdir().unwrap();

        // one run to 8 steps, leaving an intermediate checkpoint at step 4
        let mut cfg_full = tiny_run_config(dir_full.path(), 5);
        cfg_full.optim.warmup_steps = 2;
        cfg_full.total_steps = 8;
        cfg_full.checkpoint_every = 4;
        let full = Trainer::<f32>::new(cfg_full.clone()).unwrap().run().unwrap();

        // resume the same configuration from step 4
        let mut cfg_resume = cfg_full;
        cfg_resume.out_dir = dir_resume.path().to_path_buf();
        cfg_resume.resume = Some(dir_full.path().join("checkpoint_step4.bin"));
        let resumed = Trainer::<f32>::new(cfg_resume).unwrap().run().unwrap();

        assert_eq!(resumed.losses.len(), 4);
        for (a, b) in resumed.losses.iter().zip(&full.losses[4..]) {
            assert_eq!(a.step, b.step);
            assert_eq!(a.l_total, b.l_total, "loss diverged at step {}", a.step);
        }
        // resumed final checkpoint is byte-identical to the uninterrupted one
        let full_bytes = std::fs::read(&full.checkpoint).unwrap();
        let resumed_bytes = std::fs::read(&resumed.checkpoint).unwrap();
        assert_eq!(full_bytes, resumed_bytes);
    }

    #[test]
    fn cnn_variant_trains_the_fusion_conv() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_run_config(dir.path(), 6);
        cfg.fusion.variant = FusionVariant::Cnn;
        cfg.optim.warmup_steps = 0;
        cfg.total_steps = 3;
        let mut trainer = Trainer::<f32>::new(cfg).unwrap();
        let before = trainer.state.fusion_conv.as_ref().unwrap().params().clone();
        for _ in 0..3 {
            trainer.train_step().unwrap();
        }
        let after = trainer.state.fusion_conv.as_ref().unwrap().params();
        assert_ne!(&before, after, "fusion conv received no updates");
    }

    #[test]
    fn prw_and_efficient_paths_run() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_run_config(dir.path(), 7);
        cfg.fusion.variant = FusionVariant::Efficient;
        cfg.fusion.patch_size = 8;
        cfg.prw.enabled = true;
        cfg.optim.warmup_steps = 0;
        cfg.total_steps = 2;
        let mut trainer = Trainer::<f32>::new(cfg).unwrap();
        for _ in 0..2 {
            let (ls, lt, total) = trainer.train_step().unwrap();
            assert!(total.is_finite());
            assert_eq!(total, ls + lt);
        }
    }
}
