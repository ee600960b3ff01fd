//! Small trainable encoder-decoder segmentation network with hand-derived
//! gradients.
//!
//! The architecture is fixed: `blocks_per_stage` conv3x3+ReLU blocks, one
//! stride-2 conv (2x downsample), `blocks_per_stage` more conv blocks, a
//! nearest-neighbor 2x upsample followed by one conv3x3, and a 1x1 classifier
//! head. All convolutions are same-padded with zero borders. The encoder is
//! everything up to and including the downsampled blocks; the upsample onward
//! is the decoder, so the two can be trained with split learning rates.

pub(crate) mod conv;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::{softmax_channels, weighted_cross_entropy};
use crate::raster::{Image, LabelMap, WeightMap};
use crate::scalar::Real;
use conv::{conv_backward, conv_forward, upsample2x_backward, upsample2x_forward, Feat};

/// Learning-rate group a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamGroup {
    Encoder,
    Decoder,
}

/// One named parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<R> {
    pub name: String,
    pub shape: Vec<usize>,
    pub group: ParamGroup,
    pub data: Vec<R>,
}

impl<R: Real> Tensor<R> {
    pub fn zeros(name: impl Into<String>, shape: Vec<usize>, group: ParamGroup) -> Self {
        let len = shape.iter().product();
        Tensor { name: name.into(), shape, group, data: vec![R::zero(); len] }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Ordered collection of named parameter tensors. Ordering is fixed after
/// construction; the EMA teacher relies on positional correspondence.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet<R> {
    tensors: Vec<Tensor<R>>,
}

impl<R: Real> ParamSet<R> {
    pub fn new(tensors: Vec<Tensor<R>>) -> Result<Self> {
        for (i, a) in tensors.iter().enumerate() {
            if a.data.len() != a.shape.iter().product::<usize>() {
                return Err(Error::Shape(format!("tensor '{}' data/shape mismatch", a.name)));
            }
            for b in tensors.iter().skip(i + 1) {
                if a.name == b.name {
                    return Err(Error::InvalidInput(format!("duplicate tensor name '{}'", a.name)));
                }
            }
        }
        Ok(ParamSet { tensors })
    }

    pub fn tensors(&self) -> &[Tensor<R>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<R>] {
        &mut self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total scalar parameter count.
    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<R>> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// True when both sets have identical names and shapes in identical order.
    pub fn shape_matches(&self, other: &ParamSet<R>) -> bool {
        self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.name == b.name && a.shape == b.shape)
    }

    /// Same structure, all values zero. Used for gradient and moment buffers.
    pub fn zeros_like(&self) -> ParamSet<R> {
        ParamSet {
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor::zeros(t.name.clone(), t.shape.clone(), t.group))
                .collect(),
        }
    }

    pub fn cast<S: Real>(&self) -> ParamSet<S> {
        ParamSet {
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    group: t.group,
                    data: t.data.iter().map(|v| S::from_f64_lossy(v.to_f64_lossy())).collect(),
                })
                .collect(),
        }
    }
}

/// Network shape configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    /// Image channels the network consumes.
    pub input_channels: usize,
    /// Number of output classes.
    pub classes: usize,
    /// Channel width of every internal convolution.
    #[serde(default = "default_base_width")]
    pub base_width: usize,
    /// conv3x3+ReLU blocks per stage (before and after the downsample).
    #[serde(default = "default_blocks")]
    pub blocks_per_stage: usize,
    /// Disables every ReLU, leaving a purely linear network. Only useful for
    /// exact-linearity gradient checks.
    #[serde(default)]
    pub linear_only: bool,
}

fn default_base_width() -> usize {
    16
}

fn default_blocks() -> usize {
    2
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_channels < 1 {
            return Err(Error::InvalidConfig("net.input_channels must be >= 1".into()));
        }
        if self.classes < 2 {
            return Err(Error::InvalidConfig("net.classes must be >= 2".into()));
        }
        if self.base_width < 4 {
            return Err(Error::InvalidConfig("net.base_width must be >= 4".into()));
        }
        if self.blocks_per_stage < 1 {
            return Err(Error::InvalidConfig("net.blocks_per_stage must be >= 1".into()));
        }
        Ok(())
    }

    /// Smallest config that still exercises every layer type; used by
    /// gradient checks (about 500 parameters).
    pub fn tiny() -> Self {
        NetConfig { input_channels: 2, classes: 3, base_width: 4, blocks_per_stage: 1, linear_only: false }
    }
}

#[derive(Debug, Clone, Copy)]
enum LayerOp {
    /// `param` indexes the weight tensor; the bias is `param + 1`.
    Conv { param: usize, k: usize, stride: usize, pad: usize },
    Relu,
    /// Upsample by 2, cropped to the spatial size of the cached input of
    /// layer `match_layer`.
    Upsample { match_layer: usize },
}

struct Plan {
    layers: Vec<LayerOp>,
    params: Vec<(String, Vec<usize>, ParamGroup)>,
}

fn build_plan(cfg: &NetConfig) -> Plan {
    let (c, w, k) = (cfg.input_channels, cfg.base_width, cfg.classes);
    let mut layers = Vec::new();
    let mut params = Vec::new();

    let push_conv = |layers: &mut Vec<LayerOp>,
                         params: &mut Vec<(String, Vec<usize>, ParamGroup)>,
                         name: &str,
                         c_in: usize,
                         c_out: usize,
                         ksz: usize,
                         stride: usize,
                         group: ParamGroup,
                         relu: bool| {
        layers.push(LayerOp::Conv { param: params.len(), k: ksz, stride, pad: ksz / 2 });
        params.push((format!("{name}.weight"), vec![c_out, c_in, ksz, ksz], group));
        params.push((format!("{name}.bias"), vec![c_out], group));
        if relu && !cfg.linear_only {
            layers.push(LayerOp::Relu);
        }
    };

    let mut prev = c;
    for b in 0..cfg.blocks_per_stage {
        push_conv(&mut layers, &mut params, &format!("enc.block{b}"), prev, w, 3, 1, ParamGroup::Encoder, true);
        prev = w;
    }
    let down_layer = layers.len();
    push_conv(&mut layers, &mut params, "enc.down", prev, w, 3, 2, ParamGroup::Encoder, true);
    for b in 0..cfg.blocks_per_stage {
        push_conv(&mut layers, &mut params, &format!("enc.post{b}"), w, w, 3, 1, ParamGroup::Encoder, true);
    }
    layers.push(LayerOp::Upsample { match_layer: down_layer });
    push_conv(&mut layers, &mut params, "dec.conv", w, w, 3, 1, ParamGroup::Decoder, true);
    push_conv(&mut layers, &mut params, "head", w, k, 1, 1, ParamGroup::Decoder, false);

    Plan { layers, params }
}

/// Structural fingerprint tying a [`ForwardCache`] to the config and input
/// that produced it.
fn plan_signature(cfg: &NetConfig, h: usize, w: usize) -> u64 {
    // good-enough FNV-style mix; only needs to distinguish configs/shapes
    let mut sig: u64 = 0xcbf29ce484222325;
    for v in [
        cfg.input_channels,
        cfg.classes,
        cfg.base_width,
        cfg.blocks_per_stage,
        cfg.linear_only as usize,
        h,
        w,
    ] {
        sig ^= v as u64;
        sig = sig.wrapping_mul(0x100000001b3);
    }
    sig
}

/// Activations saved by [`forward`] for the matching [`backward`] call.
pub struct ForwardCache<R> {
    inputs: Vec<Feat<R>>,
    signature: u64,
    out_h: usize,
    out_w: usize,
}

impl<R> ForwardCache<R> {
    /// Number of cached layer inputs (equals the network layer count).
    pub fn layer_count(&self) -> usize {
        self.inputs.len()
    }
}

/// Seeded parameter initialization: uniform with fan-in scaling,
/// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`. Draws are made in `f64` so `f32`
/// and `f64` instantiations of the same seed agree.
pub fn init_params<R: Real>(cfg: &NetConfig, seed: u64) -> ParamSet<R> {
    use rand::Rng;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let plan = build_plan(cfg);
    let mut tensors = Vec::with_capacity(plan.params.len());
    for (name, shape, group) in plan.params {
        let mut t = Tensor::<R>::zeros(name, shape.clone(), group);
        if shape.len() > 1 {
            let fan_in: usize = shape[1..].iter().product();
            let bound = 1.0 / (fan_in as f64).sqrt();
            for v in &mut t.data {
                *v = R::from_f64_lossy(rng.random_range(-bound..bound));
            }
        }
        tensors.push(t);
    }
    ParamSet::new(tensors).expect("plan produces unique names")
}

fn check_params<R: Real>(cfg: &NetConfig, params: &ParamSet<R>) -> Result<()> {
    let plan = build_plan(cfg);
    if plan.params.len() != params.len() {
        return Err(Error::Shape(format!(
            "parameter set has {} tensors, config expects {}",
            params.len(),
            plan.params.len()
        )));
    }
    for ((name, shape, _), t) in plan.params.iter().zip(params.tensors()) {
        if t.name != *name || t.shape != *shape {
            return Err(Error::Shape(format!(
                "tensor '{}' {:?} does not match expected '{}' {:?}",
                t.name, t.shape, name, shape
            )));
        }
    }
    Ok(())
}

fn run_forward<R: Real>(
    cfg: &NetConfig,
    params: &ParamSet<R>,
    x: &Image<R>,
    mut cache: Option<&mut Vec<Feat<R>>>,
) -> Result<Feat<R>> {
    if x.channels() != cfg.input_channels {
        return Err(Error::Shape(format!(
            "input has {} channels, network expects {}",
            x.channels(),
            cfg.input_channels
        )));
    }
    check_params(cfg, params)?;
    let plan = build_plan(cfg);
    let mut feat = Feat::from_image(x);
    let mut sizes: Vec<(usize, usize)> = Vec::with_capacity(plan.layers.len());
    for op in &plan.layers {
        sizes.push((feat.height, feat.width));
        let next = match *op {
            LayerOp::Conv { param, k, stride, pad } => {
                let wt = &params.tensors()[param];
                let bt = &params.tensors()[param + 1];
                conv_forward(&feat, &wt.data, &bt.data, wt.shape[0], k, stride, pad)
            }
            LayerOp::Relu => {
                let mut out = feat.clone();
                for v in &mut out.data {
                    if *v < R::zero() {
                        *v = R::zero();
                    }
                }
                out
            }
            LayerOp::Upsample { match_layer } => {
                let (th, tw) = sizes[match_layer];
                upsample2x_forward(&feat, th, tw)
            }
        };
        if let Some(c) = cache.as_deref_mut() {
            c.push(feat);
        }
        feat = next;
    }
    Ok(feat)
}

/// Forward pass producing per-pixel class logits (same spatial size as the
/// input) together with the cache the backward pass needs.
pub fn forward<R: Real>(
    cfg: &NetConfig,
    params: &ParamSet<R>,
    x: &Image<R>,
) -> Result<(Image<R>, ForwardCache<R>)> {
    let mut inputs = Vec::new();
    let out = run_forward(cfg, params, x, Some(&mut inputs))?;
    let cache = ForwardCache {
        inputs,
        signature: plan_signature(cfg, x.height(), x.width()),
        out_h: out.height,
        out_w: out.width,
    };
    Ok((out.to_image(), cache))
}

/// Forward pass without gradient bookkeeping, for inference and scoring.
pub fn forward_logits<R: Real>(cfg: &NetConfig, params: &ParamSet<R>, x: &Image<R>) -> Result<Image<R>> {
    Ok(run_forward(cfg, params, x, None)?.to_image())
}

/// Backward pass. Returns per-parameter gradients (same structure as the
/// parameter set) and the gradient with respect to the network input, which
/// lets upstream modules such as the fusion convolution receive gradients.
pub fn backward<R: Real>(
    cfg: &NetConfig,
    params: &ParamSet<R>,
    cache: &ForwardCache<R>,
    grad_logits: &Image<R>,
) -> Result<(ParamSet<R>, Image<R>)> {
    check_params(cfg, params)?;
    let plan = build_plan(cfg);
    if cache.inputs.len() != plan.layers.len() {
        return Err(Error::Contract(format!(
            "cache holds {} layers, network has {}",
            cache.inputs.len(),
            plan.layers.len()
        )));
    }
    let expected_sig = plan_signature(cfg, cache.inputs[0].height, cache.inputs[0].width);
    if cache.signature != expected_sig {
        return Err(Error::Contract("cache was produced by a different forward configuration".into()));
    }
    if grad_logits.height() != cache.out_h
        || grad_logits.width() != cache.out_w
        || grad_logits.channels() != cfg.classes
    {
        return Err(Error::Contract(format!(
            "grad_logits {}x{}x{} does not match cached output {}x{}x{}",
            grad_logits.height(),
            grad_logits.width(),
            grad_logits.channels(),
            cache.out_h,
            cache.out_w,
            cfg.classes
        )));
    }

    let mut grads = params.zeros_like();
    let mut g = Feat::from_image(grad_logits);
    for (idx, op) in plan.layers.iter().enumerate().rev() {
        let inp = &cache.inputs[idx];
        g = match *op {
            LayerOp::Conv { param, k, stride, pad } => {
                let wt = &params.tensors()[param];
                let c_out = wt.shape[0];
                let (gw, gb) = {
                    let (left, right) = grads.tensors_mut().split_at_mut(param + 1);
                    (&mut left[param].data, &mut right[0].data)
                };
                conv_backward(inp, &wt.data, &g, c_out, k, stride, pad, gw, gb)
            }
            LayerOp::Relu => {
                let mut gi = g;
                for (gv, &iv) in gi.data.iter_mut().zip(&inp.data) {
                    if iv <= R::zero() {
                        *gv = R::zero();
                    }
                }
                gi
            }
            LayerOp::Upsample { .. } => upsample2x_backward(&g, inp.height, inp.width),
        };
    }
    Ok((grads, g.to_image()))
}

/// Builds a seeded tiny instance and compares analytic gradients against
/// central finite differences for every parameter, returning the worst
/// relative error.
///
/// With `linear_only` the objective is a fixed linear functional of the
/// logits, for which central differences are exact up to round-off; otherwise
/// the objective is the cross-entropy against random labels.
pub fn grad_check(cfg: &NetConfig, seed: u64) -> f64 {
    use rand::Rng;
    use rand::SeedableRng;

    let (h, w) = (8usize, 8usize);
    let plan = build_plan(cfg);

    // Central differences are only valid inside one linear cell of the ReLU
    // network, so redraw (deterministically) until every pre-activation is
    // safely away from zero.
    let mut chosen = None;
    for attempt in 0..256u64 {
        let mut rng =
            rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x9e3779b97f4a7c15 ^ (attempt << 32));
        let params = init_params::<f64>(cfg, seed.wrapping_add(attempt.wrapping_mul(0x51ed)));
        let x = Image::from_vec(
            h,
            w,
            cfg.input_channels,
            (0..h * w * cfg.input_channels).map(|_| rng.random_range(0.0..1.0)).collect(),
        )
        .unwrap();
        let labels = LabelMap::from_vec(
            h,
            w,
            cfg.classes,
            (0..h * w).map(|_| rng.random_range(0..cfg.classes as u8)).collect(),
        )
        .unwrap();
        let linear_dir: Vec<f64> =
            (0..h * w * cfg.classes).map(|_| rng.random_range(-1.0..1.0)).collect();

        let (_, cache) = forward(cfg, &params, &x).unwrap();
        let min_preact = plan
            .layers
            .iter()
            .enumerate()
            .filter(|(_, op)| matches!(op, LayerOp::Relu))
            .flat_map(|(i, _)| cache.inputs[i].data.iter())
            .fold(f64::INFINITY, |acc, &v| acc.min(v.abs()));
        // the sweep moves any pre-activation by at most ~3e-5, so this
        // margin keeps every ReLU on its side
        if cfg.linear_only || min_preact > 2e-4 {
            chosen = Some((params, x, labels, linear_dir));
            break;
        }
    }
    let (mut params, x, labels, linear_dir) =
        chosen.expect("a kink-free evaluation point exists within 256 redraws");
    let weights = WeightMap::ones(h, w);

    let loss_of = |params: &ParamSet<f64>| -> f64 {
        let logits = forward_logits(cfg, params, &x).unwrap();
        if cfg.linear_only {
            logits.data().iter().zip(&linear_dir).map(|(a, b)| a * b).sum()
        } else {
            let p = softmax_channels(&logits).unwrap();
            weighted_cross_entropy(&p, &labels, &weights).unwrap().0
        }
    };

    let (logits, cache) = forward(cfg, &params, &x).unwrap();
    let grad_logits = if cfg.linear_only {
        Image::from_vec(h, w, cfg.classes, linear_dir.clone()).unwrap()
    } else {
        let p = softmax_channels(&logits).unwrap();
        weighted_cross_entropy(&p, &labels, &weights).unwrap().1
    };
    let (analytic, _) = backward(cfg, &params, &cache, &grad_logits).unwrap();

    // For the linear objective the truncation term vanishes, so a large step
    // drowns the round-off; the curved CE objective needs a small one.
    let mut worst = 0.0f64;
    for ti in 0..params.len() {
        for vi in 0..params.tensors()[ti].len() {
            let orig = params.tensors()[ti].data[vi];
            let step = if cfg.linear_only { 0.1 } else { 6e-6 * (1.0 + orig.abs()) };
            params.tensors_mut()[ti].data[vi] = orig + step;
            let fp = loss_of(&params);
            params.tensors_mut()[ti].data[vi] = orig - step;
            let fm = loss_of(&params);
            params.tensors_mut()[ti].data[vi] = orig;
            let numeric = (fp - fm) / (2.0 * step);
            let a = analytic.tensors()[ti].data[vi];
            if a.abs() < 1e-8 && numeric.abs() < 1e-8 {
                continue; // agreement at absolute zero-gradient scale
            }
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-5);
            if rel > worst {
                worst = rel;
            }
        }
    }
    worst
}
