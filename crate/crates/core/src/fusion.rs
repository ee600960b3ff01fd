//! Dual-domain fusion: blending an original source image with its
//! style-transferred counterpart into a single training image.
//!
//! Two variants exist. CNN fusion concatenates the pair and applies a
//! learnable 3x3 convolution, trained jointly with the student via the
//! gradient of the source loss. Efficient fusion scores equal-size patches of
//! the transferred image by entropy (or a softmaxed self-similarity density),
//! thresholds the scores at a percentile, and composes the output patchwise
//! from whichever input each mask bit selects — no blending, every output
//! pixel is bit-identical to one of the inputs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::conv::{conv_backward, conv_forward, Feat};
use crate::net::{forward_logits, NetConfig, ParamGroup, ParamSet, Tensor};
use crate::ops::{entropy_of, softmax_channels};
use crate::raster::{Image, ProbMap};
use crate::scalar::Real;

/// Learnable 3x3 fusion convolution: `2C` input channels, `C` outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionConv<R> {
    channels: usize,
    params: ParamSet<R>,
}

impl<R: Real> FusionConv<R> {
    /// Averaging initialization: each output channel taps the center pixel of
    /// its own channel in both inputs with weight one half, so step zero is
    /// the plain mean of the two images.
    pub fn averaging_init(channels: usize) -> Self {
        let mut weight = Tensor::zeros(
            "fusion.weight",
            vec![channels, 2 * channels, 3, 3],
            ParamGroup::Decoder,
        );
        let half = R::from_f64_lossy(0.5);
        for c in 0..channels {
            // center tap (ky = kx = 1) of channel c and channel C + c
            for src in [c, channels + c] {
                weight.data[((c * 2 * channels + src) * 3 + 1) * 3 + 1] = half;
            }
        }
        let bias = Tensor::zeros("fusion.bias", vec![channels], ParamGroup::Decoder);
        FusionConv {
            channels,
            params: ParamSet::new(vec![weight, bias]).expect("distinct names"),
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn params(&self) -> &ParamSet<R> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<R> {
        &mut self.params
    }

    /// Rebuilds from checkpointed tensors, validating shapes.
    pub fn from_params(params: ParamSet<R>) -> Result<Self> {
        let weight = params
            .get("fusion.weight")
            .ok_or_else(|| Error::Ingestion("missing tensor 'fusion.weight'".into()))?;
        if weight.shape.len() != 4
            || weight.shape[1] != 2 * weight.shape[0]
            || weight.shape[2] != 3
            || weight.shape[3] != 3
        {
            return Err(Error::Shape(format!("fusion kernel shape {:?}", weight.shape)));
        }
        let channels = weight.shape[0];
        if params.get("fusion.bias").map(|b| b.shape != vec![channels]).unwrap_or(true) {
            return Err(Error::Shape("fusion bias shape".into()));
        }
        Ok(FusionConv { channels, params })
    }
}

/// Activations saved by [`cnn_fuse`] for its backward pass.
pub struct FuseCache<R> {
    x_cat: Feat<R>,
}

/// Learned fusion: concatenate the pair and convolve. The paired label stays
/// the source label. Returns the fused image and the cache for
/// [`cnn_fuse_backward`].
pub fn cnn_fuse<R: Real>(
    fc: &FusionConv<R>,
    x_s: &Image<R>,
    x_st: &Image<R>,
) -> Result<(Image<R>, FuseCache<R>)> {
    if !x_s.same_shape(x_st) {
        return Err(Error::Shape(format!(
            "fusion inputs {}x{}x{} vs {}x{}x{}",
            x_s.height(),
            x_s.width(),
            x_s.channels(),
            x_st.height(),
            x_st.width(),
            x_st.channels()
        )));
    }
    if x_s.channels() != fc.channels {
        return Err(Error::Shape(format!(
            "fusion conv built for {} channels, inputs have {}",
            fc.channels,
            x_s.channels()
        )));
    }
    let x_cat = Feat::from_image(&crate::ops::concat_channels(x_s, x_st)?);
    let weight = &fc.params.tensors()[0];
    let bias = &fc.params.tensors()[1];
    let out = conv_forward(&x_cat, &weight.data, &bias.data, fc.channels, 3, 1, 1);
    Ok((out.to_image(), FuseCache { x_cat }))
}

/// Gradients of a scalar loss through [`cnn_fuse`]: kernel/bias gradients
/// (shaped like the fusion parameters) plus the gradients with respect to
/// both input images.
pub fn cnn_fuse_backward<R: Real>(
    fc: &FusionConv<R>,
    cache: &FuseCache<R>,
    grad_out: &Image<R>,
) -> Result<(ParamSet<R>, Image<R>, Image<R>)> {
    let c = fc.channels;
    if grad_out.channels() != c
        || grad_out.height() != cache.x_cat.height
        || grad_out.width() != cache.x_cat.width
    {
        return Err(Error::Contract(format!(
            "fusion grad {}x{}x{} does not match cached input {}x{}",
            grad_out.height(),
            grad_out.width(),
            grad_out.channels(),
            cache.x_cat.height,
            cache.x_cat.width
        )));
    }
    let mut grads = fc.params.zeros_like();
    let weight = &fc.params.tensors()[0];
    let g_out = Feat::from_image(grad_out);
    let (gw, gb) = {
        let (left, right) = grads.tensors_mut().split_at_mut(1);
        (&mut left[0].data, &mut right[0].data)
    };
    let g_cat = conv_backward(&cache.x_cat, &weight.data, &g_out, c, 3, 1, 1, gw, gb);

    let (h, w) = (cache.x_cat.height, cache.x_cat.width);
    let mut g_s = Image::zeros(h, w, c);
    let mut g_st = Image::zeros(h, w, c);
    for ch in 0..c {
        let plane_s = g_cat.plane(ch);
        let plane_st = g_cat.plane(c + ch);
        for y in 0..h {
            for x in 0..w {
                g_s.set(y, x, ch, plane_s[y * w + x]);
                g_st.set(y, x, ch, plane_st[y * w + x]);
            }
        }
    }
    Ok((grads, g_s, g_st))
}

/// Patch scoring metric for efficient fusion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// Sum of per-pixel Shannon entropies over the patch.
    Entropy,
    /// Softmaxed neighborhood density of the patch's pixel distributions.
    Snd,
}

/// Which side of the threshold a mask bit selects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Bit set when `score < t` (strict). Low entropy = low noise.
    SelectLow,
    /// Bit set when `score > t` (strict). Dense neighborhoods = reliable.
    SelectHigh,
}

/// Efficient-fusion parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionParams {
    /// Percentile in `(0, 100]` fed to the nearest-rank threshold.
    #[serde(default = "default_c")]
    pub c: f64,
    #[serde(default = "default_metric")]
    pub metric: Metric,
    /// Defaults by metric when absent: entropy selects low, SND selects high.
    #[serde(default)]
    pub direction: Option<Direction>,
    /// Softmax temperature of the SND row normalization.
    #[serde(default = "default_tau")]
    pub snd_temperature: f64,
}

fn default_c() -> f64 {
    50.0
}
fn default_metric() -> Metric {
    Metric::Entropy
}
fn default_tau() -> f64 {
    0.05
}

impl Default for FusionParams {
    fn default() -> Self {
        FusionParams {
            c: default_c(),
            metric: default_metric(),
            direction: None,
            snd_temperature: default_tau(),
        }
    }
}

impl FusionParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c <= 100.0) {
            return Err(Error::InvalidConfig(format!("fusion.c {} outside (0, 100]", self.c)));
        }
        if self.snd_temperature <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "fusion.snd_temperature {} must be > 0",
                self.snd_temperature
            )));
        }
        Ok(())
    }

    pub fn effective_direction(&self) -> Direction {
        self.direction.unwrap_or(match self.metric {
            Metric::Entropy => Direction::SelectLow,
            Metric::Snd => Direction::SelectHigh,
        })
    }
}

/// Per-patch scores over a patch grid. Ragged right/bottom patches are
/// allowed and scored over their true pixel count.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid {
    pub patch_size: usize,
    pub patches_y: usize,
    pub patches_x: usize,
    pub scores: Vec<f64>,
}

impl PatchGrid {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// Patch-resolution binary selection mask; a set bit takes the transferred
/// patch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchMask {
    pub patches_y: usize,
    pub patches_x: usize,
    pub bits: Vec<bool>,
}

impl PatchMask {
    pub fn count_set(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

/// Scores every `k`x`k` patch of a probability map.
///
/// Entropy metric: the sum of the patch's per-pixel entropies, in
/// `[0, k^2 ln K]`. SND metric: with `P` the patch's pixel-distribution
/// matrix, rows of `P P^T` (diagonal removed) are softmaxed at temperature
/// `tau` and the score is the mean row entropy. Scores accumulate in `f64`
/// regardless of the map's scalar type.
pub fn patch_scores<R: Real>(
    p: &ProbMap<R>,
    k: usize,
    metric: Metric,
    tau: f64,
) -> Result<PatchGrid> {
    let (h, w) = (p.height(), p.width());
    if k < 1 || k > h || k > w {
        return Err(Error::InvalidConfig(format!(
            "patch size {k} outside [1, min({h}, {w})]"
        )));
    }
    let patches_y = h.div_ceil(k);
    let patches_x = w.div_ceil(k);
    let mut scores = Vec::with_capacity(patches_y * patches_x);
    for py in 0..patches_y {
        for px in 0..patches_x {
            let y0 = py * k;
            let x0 = px * k;
            let y1 = (y0 + k).min(h);
            let x1 = (x0 + k).min(w);
            let score = match metric {
                Metric::Entropy => {
                    let mut sum = 0.0f64;
                    for y in y0..y1 {
                        for x in x0..x1 {
                            sum += entropy_of(p.pixel(y, x)).to_f64_lossy();
                        }
                    }
                    sum
                }
                Metric::Snd => snd_score(p, y0, x0, y1, x1, tau),
            };
            scores.push(score);
        }
    }
    Ok(PatchGrid { patch_size: k, patches_y, patches_x, scores })
}

fn snd_score<R: Real>(
    p: &ProbMap<R>,
    y0: usize,
    x0: usize,
    y1: usize,
    x1: usize,
    tau: f64,
) -> f64 {
    let n = (y1 - y0) * (x1 - x0);
    if n < 2 {
        return 0.0; // a single pixel has no neighborhood
    }
    let classes = p.classes();
    let mut pixels: Vec<f64> = Vec::with_capacity(n * classes);
    for y in y0..y1 {
        for x in x0..x1 {
            for &v in p.pixel(y, x) {
                pixels.push(v.to_f64_lossy());
            }
        }
    }
    let mut total = 0.0f64;
    let mut sims = vec![0.0f64; n - 1];
    for i in 0..n {
        let pi = &pixels[i * classes..(i + 1) * classes];
        let mut idx = 0;
        let mut max = f64::NEG_INFINITY;
        for j in 0..n {
            if j == i {
                continue; // diagonal masked out
            }
            let pj = &pixels[j * classes..(j + 1) * classes];
            let dot: f64 = pi.iter().zip(pj).map(|(a, b)| a * b).sum();
            let s = dot / tau;
            sims[idx] = s;
            if s > max {
                max = s;
            }
            idx += 1;
        }
        let mut z = 0.0;
        for s in sims.iter_mut() {
            *s = (*s - max).exp();
            z += *s;
        }
        let mut row_entropy = 0.0;
        for &e in sims.iter() {
            let q = e / z;
            if q > 0.0 {
                row_entropy -= q * q.ln();
            }
        }
        total += row_entropy;
    }
    total / n as f64
}

/// Nearest-rank percentile: sort ascending, take the value at index
/// `ceil(c/100 * N) - 1`.
pub fn percentile_threshold(scores: &PatchGrid, c: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::InvalidInput("percentile of an empty patch grid".into()));
    }
    if !(c > 0.0 && c <= 100.0) {
        return Err(Error::InvalidConfig(format!("percentile {c} outside (0, 100]")));
    }
    let mut sorted = scores.scores.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));
    let rank = (c * sorted.len() as f64 / 100.0).ceil() as usize;
    Ok(sorted[rank - 1])
}

/// Strict threshold comparison per patch.
pub fn build_patch_mask(scores: &PatchGrid, t: f64, direction: Direction) -> PatchMask {
    let bits = scores
        .scores
        .iter()
        .map(|&s| match direction {
            Direction::SelectLow => s < t,
            Direction::SelectHigh => s > t,
        })
        .collect();
    PatchMask { patches_y: scores.patches_y, patches_x: scores.patches_x, bits }
}

/// Patchwise composition: a set mask bit copies the transferred patch, a
/// clear bit copies the source patch. Every output pixel is bit-identical to
/// the corresponding pixel of exactly one input; the paired label stays the
/// source label.
pub fn compose_fusion<R: Real>(
    x_s: &Image<R>,
    x_st: &Image<R>,
    m: &PatchMask,
    k: usize,
) -> Result<Image<R>> {
    if !x_s.same_shape(x_st) {
        return Err(Error::Shape("compose_fusion inputs differ in shape".into()));
    }
    let (h, w) = (x_s.height(), x_s.width());
    if m.patches_y != h.div_ceil(k) || m.patches_x != w.div_ceil(k) {
        return Err(Error::Shape(format!(
            "mask grid {}x{} does not match ceil({h}/{k}) x ceil({w}/{k})",
            m.patches_y, m.patches_x
        )));
    }
    let mut out = x_s.clone();
    for y in 0..h {
        for x in 0..w {
            if m.bits[(y / k) * m.patches_x + x / k] {
                out.pixel_mut(y, x).copy_from_slice(x_st.pixel(y, x));
            }
        }
    }
    Ok(out)
}

/// End-to-end efficient fusion, also returning the mask for inspection.
/// The student scores the transferred image; no gradients flow through
/// mask construction.
pub fn efficient_fuse_masked<R: Real>(
    cfg: &NetConfig,
    student: &ParamSet<R>,
    x_s: &Image<R>,
    x_st: &Image<R>,
    fp: &FusionParams,
    k: usize,
) -> Result<(Image<R>, PatchMask)> {
    fp.validate()?;
    let logits = forward_logits(cfg, student, x_st)?;
    let probs = softmax_channels(&logits)?;
    let scores = patch_scores(&probs, k, fp.metric, fp.snd_temperature)?;
    let t = percentile_threshold(&scores, fp.c)?;
    let mask = build_patch_mask(&scores, t, fp.effective_direction());
    let fused = compose_fusion(x_s, x_st, &mask, k)?;
    Ok((fused, mask))
}

/// [`efficient_fuse_masked`] without the mask.
pub fn efficient_fuse<R: Real>(
    cfg: &NetConfig,
    student: &ParamSet<R>,
    x_s: &Image<R>,
    x_st: &Image<R>,
    fp: &FusionParams,
    k: usize,
) -> Result<Image<R>> {
    Ok(efficient_fuse_masked(cfg, student, x_s, x_st, fp, k)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{init_params, NetConfig};
    use crate::ops::weighted_cross_entropy;
    use crate::raster::{LabelMap, WeightMap};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(h: usize, w: usize, c: usize, seed: u64) -> Image<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_vec(h, w, c, (0..h * w * c).map(|_| rng.random_range(0.0..1.0)).collect())
            .unwrap()
    }

    #[test]
    fn averaging_init_is_the_mean_of_the_inputs() {
        let fc = FusionConv::<f64>::averaging_init(3);
        let a = random_image(16, 16, 3, 0);
        let b = random_image(16, 16, 3, 1);
        let (mix, _) = cnn_fuse(&fc, &a, &b).unwrap();
        assert_eq!((mix.height(), mix.width(), mix.channels()), (16, 16, 3));
        for i in 0..mix.data().len() {
            let expect = 0.5 * (a.data()[i] + b.data()[i]);
            assert!((mix.data()[i] - expect).abs() < 1e-15);
        }
        // swapping the inputs leaves the averaging blend unchanged
        let (swapped, _) = cnn_fuse(&fc, &b, &a).unwrap();
        for (x, y) in mix.data().iter().zip(swapped.data()) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn cnn_fuse_rejects_shape_mismatch() {
        let fc = FusionConv::<f64>::averaging_init(3);
        let a = random_image(8, 8, 3, 2);
        let b = random_image(8, 9, 3, 3);
        assert!(matches!(cnn_fuse(&fc, &a, &b), Err(Error::Shape(_))));
    }

    #[test]
    fn cnn_fuse_gradients_match_finite_differences() {
        let net_cfg = NetConfig { input_channels: 3, ..NetConfig::tiny() };
        let student = init_params::<f64>(&net_cfg, 4);
        let mut fc = FusionConv::<f64>::averaging_init(3);
        // move off the symmetric init so gradients are generic
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
        let weights = WeightMap::ones(8, 8);

        let loss_of = |fc: &FusionConv<f64>| -> f64 {
            let (mix, _) = cnn_fuse(fc, &x_s, &x_st).unwrap();
            let logits = crate::net::forward_logits(&net_cfg, &student, &mix).unwrap();
            let p = softmax_channels(&logits).unwrap();
            weighted_cross_entropy(&p, &labels, &weights).unwrap().0
        };

        let (mix, cache) = cnn_fuse(&fc, &x_s, &x_st).unwrap();
        let (logits, net_cache) = crate::net::forward(&net_cfg, &student, &mix).unwrap();
        let p = softmax_channels(&logits).unwrap();
        let (_, grad_logits) = weighted_cross_entropy(&p, &labels, &weights).unwrap();
        let (_, grad_input) =
            crate::net::backward(&net_cfg, &student, &net_cache, &grad_logits).unwrap();
        let (analytic, _, _) = cnn_fuse_backward(&fc, &cache, &grad_input).unwrap();

        // large enough to beat round-off on near-floor gradients, small
        // enough to stay within one ReLU cell
        let step = 3e-5;
        let mut worst = 0.0f64;
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
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-5);
                worst = worst.max(rel);
            }
        }
        assert!(worst < 1e-5, "fusion grad max relative error {worst}");
    }


    #[test]
    fn entropy_scores_hit_their_bounds() {
        let uniform = ProbMap::<f64>::uniform(8, 8, 3);
        let grid = patch_scores(&uniform, 4, Metric::Entropy, 0.05).unwrap();
        assert_eq!(grid.len(), 4);
        for &s in &grid.scores {
            assert!((s - 16.0 * 3f64.ln()).abs() < 1e-9, "{s}");
        }

        let onehot = ProbMap::from_vec(
            4,
            4,
            3,
            (0..16).flat_map(|_| [1.0, 0.0, 0.0]).collect(),
        )
        .unwrap();
        let grid = patch_scores(&onehot, 2, Metric::Entropy, 0.05).unwrap();
        assert!(grid.scores.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn snd_identical_onehot_patch_is_ln3() {
        // k^2 = 4 identical one-hot pixels: all masked similarities equal, so
        // each row softmax is uniform over 3 entries regardless of tau.
        let onehot = ProbMap::from_vec(
            2,
            2,
            3,
            (0..4).flat_map(|_| [1.0, 0.0, 0.0]).collect(),
        )
        .unwrap();
        for tau in [0.01, 0.05, 1.0] {
            let grid = patch_scores(&onehot, 2, Metric::Snd, tau).unwrap();
            assert_eq!(grid.len(), 1);
            assert!((grid.scores[0] - 3f64.ln()).abs() < 1e-9, "tau {tau}");
        }
    }

    #[test]
    fn entropy_scores_ignore_pixel_order_within_a_patch() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let k = 4usize;
        let classes = 3usize;
        let mut pixels: Vec<Vec<f64>> = (0..k * k)
            .map(|_| {
                let raw: Vec<f64> = (0..classes).map(|_| rng.random_range(0.01..1.0)).collect();
                let sum: f64 = raw.iter().sum();
                raw.into_iter().map(|v| v / sum).collect()
            })
            .collect();
        let build = |pixels: &[Vec<f64>]| {
            ProbMap::from_vec(k, k, classes, pixels.iter().flatten().copied().collect()).unwrap()
        };
        let before = patch_scores(&build(&pixels), k, Metric::Entropy, 0.05).unwrap();
        // deterministic shuffle of the pixel order
        pixels.rotate_left(5);
        pixels.swap(0, 9);
        let after = patch_scores(&build(&pixels), k, Metric::Entropy, 0.05).unwrap();
        assert!((before.scores[0] - after.scores[0]).abs() < 1e-12);
    }

    #[test]
    fn patch_size_must_fit_the_image() {
        let p = ProbMap::<f64>::uniform(4, 4, 2);
        assert!(matches!(
            patch_scores(&p, 5, Metric::Entropy, 0.05),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn ragged_patches_score_their_true_pixel_count() {
        let uniform = ProbMap::<f64>::uniform(5, 7, 2);
        let grid = patch_scores(&uniform, 4, Metric::Entropy, 0.05).unwrap();
        assert_eq!((grid.patches_y, grid.patches_x), (2, 2));
        let e = 2f64.ln();
        let expected = [16.0 * e, 12.0 * e, 4.0 * e, 3.0 * e];
        for (s, exp) in grid.scores.iter().zip(expected) {
            assert!((s - exp).abs() < 1e-9);
        }
    }

    fn grid_of(scores: &[f64]) -> PatchGrid {
        PatchGrid { patch_size: 1, patches_y: 1, patches_x: scores.len(), scores: scores.to_vec() }
    }

    #[test]
    fn percentile_matches_sort_oracle() {
        assert_eq!(percentile_threshold(&grid_of(&[3.0, 1.0, 2.0, 4.0]), 50.0).unwrap(), 2.0);
        assert_eq!(percentile_threshold(&grid_of(&[3.0, 1.0, 2.0, 4.0]), 100.0).unwrap(), 4.0);
        assert_eq!(percentile_threshold(&grid_of(&[5.0, 5.0, 5.0]), 37.0).unwrap(), 5.0);
        assert!(percentile_threshold(&grid_of(&[]), 50.0).is_err());
    }

    #[test]
    fn mask_comparisons_are_strict() {
        let grid = grid_of(&[1.0, 2.0, 3.0, 4.0]);
        let low = build_patch_mask(&grid, 2.0, Direction::SelectLow);
        assert_eq!(low.bits, vec![true, false, false, false]);

        let equal = grid_of(&[7.0, 7.0, 7.0]);
        let none = build_patch_mask(&equal, 7.0, Direction::SelectLow);
        assert_eq!(none.count_set(), 0);

        let high = build_patch_mask(&grid, 0.0, Direction::SelectHigh);
        assert_eq!(high.count_set(), 4);
    }

    #[test]
    fn compose_boundary_masks() {
        let a = random_image(8, 8, 3, 8);
        let b = random_image(8, 8, 3, 9);
        let all = PatchMask { patches_y: 2, patches_x: 2, bits: vec![true; 4] };
        assert_eq!(compose_fusion(&a, &b, &all, 4).unwrap(), b);
        let none = PatchMask { patches_y: 2, patches_x: 2, bits: vec![false; 4] };
        assert_eq!(compose_fusion(&a, &b, &none, 4).unwrap(), a);
    }

    #[test]
    fn compose_checkerboard_provenance() {
        let a = Image::<f64>::constant(8, 8, 2, 0.1);
        let b = Image::<f64>::constant(8, 8, 2, 0.9);
        let mask = PatchMask {
            patches_y: 2,
            patches_x: 2,
            bits: vec![true, false, false, true],
        };
        let out = compose_fusion(&a, &b, &mask, 4).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                let expect = if (y / 4 + x / 4) % 2 == 0 { 0.9 } else { 0.1 };
                for c in 0..2 {
                    assert_eq!(out.get(y, x, c), expect, "({y},{x})");
                }
            }
        }
    }

    #[test]
    fn compose_rejects_wrong_grid() {
        let a = random_image(8, 8, 1, 10);
        let mask = PatchMask { patches_y: 3, patches_x: 2, bits: vec![false; 6] };
        assert!(matches!(compose_fusion(&a, &a, &mask, 4), Err(Error::Shape(_))));
    }

    /// Confident one-hot student: every entropy score is zero, the strict
    /// mask stays empty, and the fusion falls back to the source image.
    #[test]
    fn efficient_fuse_confident_student_returns_source() {
        let cfg = NetConfig { input_channels: 3, ..NetConfig::tiny() };
        let mut student = init_params::<f64>(&cfg, 11).zeros_like();
        // enormous head bias for class 0 -> exact one-hot softmax
        for t in student.tensors_mut() {
            if t.name == "head.bias" {
                t.data[0] = 1000.0;
            }
        }
        let x_s = random_image(8, 8, 3, 12);
        let x_st = random_image(8, 8, 3, 13);
        let fp = FusionParams::default();
        let (fused, mask) = efficient_fuse_masked(&cfg, &student, &x_s, &x_st, &fp, 4).unwrap();
        assert_eq!(mask.count_set(), 0);
        assert_eq!(fused, x_s);
    }

    #[test]
    fn efficient_fuse_is_idempotent_on_equal_inputs() {
        let cfg = NetConfig { input_channels: 3, ..NetConfig::tiny() };
        let student = init_params::<f64>(&cfg, 14);
        let x = random_image(8, 8, 3, 15);
        let fused =
            efficient_fuse(&cfg, &student, &x, &x, &FusionParams::default(), 4).unwrap();
        assert_eq!(fused, x);
    }

    #[test]
    fn mask_cardinality_never_exceeds_the_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        for _ in 0..50 {
            let n = rng.random_range(1..40usize);
            let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..10.0)).collect();
            let grid = grid_of(&scores);
            for c in [10.0, 25.0, 50.0, 75.0, 100.0] {
                let t = percentile_threshold(&grid, c).unwrap();
                let mask = build_patch_mask(&grid, t, Direction::SelectLow);
                let rank = (c * n as f64 / 100.0).ceil() as usize;
                assert!(mask.count_set() <= rank);
                // strict-count oracle
                let below = scores.iter().filter(|&&s| s < t).count();
                assert_eq!(mask.count_set(), below);
            }
        }
    }
}
