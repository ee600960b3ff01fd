//! Pixelwise math shared by the whole pipeline: softmax, argmax, entropy,
//! channel concatenation, and the weighted cross-entropy loss with its
//! analytic gradient.

use crate::error::{Error, Result};
use crate::raster::{Image, LabelMap, ProbMap, ScalarMap, WeightMap};
use crate::scalar::Real;

/// Probabilities are floored at this value before taking logs, so one-hot
/// teacher outputs cannot produce an infinite loss.
pub const PROB_FLOOR: f64 = 1e-12;

/// Per-pixel softmax over the channel axis of a logit raster.
///
/// Numerically stabilized by max-subtraction, so logits with magnitude up to
/// `1e4` cannot overflow. Non-finite logits are rejected with the coordinates
/// of the first offending pixel.
pub fn softmax_channels<R: Real>(logits: &Image<R>) -> Result<ProbMap<R>> {
    let (h, w, k) = (logits.height(), logits.width(), logits.channels());
    let mut data = vec![R::zero(); h * w * k];
    for y in 0..h {
        for x in 0..w {
            let pix = logits.pixel(y, x);
            let mut max = pix[0];
            for &v in pix {
                if !v.is_finite() {
                    return Err(Error::InvalidInput(format!(
                        "non-finite logit {v} at pixel ({y}, {x})"
                    )));
                }
                if v > max {
                    max = v;
                }
            }
            let out = &mut data[(y * w + x) * k..(y * w + x + 1) * k];
            let mut sum = R::zero();
            for (o, &v) in out.iter_mut().zip(pix) {
                let e = (v - max).exp();
                *o = e;
                sum += e;
            }
            for o in out.iter_mut() {
                *o = *o / sum;
            }
        }
    }
    Ok(ProbMap::from_vec_unchecked(h, w, k, data))
}

/// Hard per-pixel class assignment; ties go to the lowest class index.
pub fn argmax_labels<R: Real>(p: &ProbMap<R>) -> LabelMap {
    let (h, w, k) = (p.height(), p.width(), p.classes());
    let mut out = LabelMap::zeros(h, w, k);
    for y in 0..h {
        for x in 0..w {
            let pix = p.pixel(y, x);
            let mut best = 0usize;
            for (i, &v) in pix.iter().enumerate().skip(1) {
                if v > pix[best] {
                    best = i;
                }
            }
            out.set(y, x, best as u8);
        }
    }
    out
}

/// Weighted cross-entropy over a raster, averaged over pixels, together with
/// the analytic gradient with respect to the pre-softmax logits.
///
/// ```text
/// loss     = (1/n) * sum_x w(x) * (-ln max(p(x)[y(x)], 1e-12))
/// grad(x)  = w(x) * (p(x) - onehot(y(x))) / n
/// ```
///
/// With `w` identically one this reduces to the plain cross-entropy.
pub fn weighted_cross_entropy<R: Real>(
    p: &ProbMap<R>,
    y: &LabelMap,
    w: &WeightMap<R>,
) -> Result<(R, Image<R>)> {
    let (h, wd, k) = (p.height(), p.width(), p.classes());
    if y.height() != h || y.width() != wd || y.classes() != k {
        return Err(Error::Shape(format!(
            "probmap {h}x{wd}x{k} vs labelmap {}x{}x{}",
            y.height(),
            y.width(),
            y.classes()
        )));
    }
    if w.height() != h || w.width() != wd {
        return Err(Error::Shape(format!(
            "probmap {h}x{wd} vs weightmap {}x{}",
            w.height(),
            w.width()
        )));
    }
    let n = h * wd;
    let inv_n = R::one() / R::from_f64_lossy(n as f64);
    let floor = R::from_f64_lossy(PROB_FLOOR);
    let mut grad = Image::zeros(h, wd, k);
    let mut loss = R::zero();
    for yy in 0..h {
        for xx in 0..wd {
            let weight = w.get(yy, xx);
            let target = y.get(yy, xx);
            let probs = p.pixel(yy, xx);
            let p_target = probs[target].max(floor);
            loss += weight * -p_target.ln();
            let g = grad.pixel_mut(yy, xx);
            for (c, (gv, &pv)) in g.iter_mut().zip(probs).enumerate() {
                let indicator = if c == target { R::one() } else { R::zero() };
                *gv = weight * (pv - indicator) * inv_n;
            }
        }
    }
    Ok((loss * inv_n, grad))
}

/// Stacks `b`'s channels after `a`'s, pixelwise.
pub fn concat_channels<R: Real>(a: &Image<R>, b: &Image<R>) -> Result<Image<R>> {
    if !a.same_shape(b) {
        return Err(Error::Shape(format!(
            "concat inputs {}x{}x{} vs {}x{}x{}",
            a.height(),
            a.width(),
            a.channels(),
            b.height(),
            b.width(),
            b.channels()
        )));
    }
    let (h, w, c) = (a.height(), a.width(), a.channels());
    let mut out = Image::zeros(h, w, 2 * c);
    for y in 0..h {
        for x in 0..w {
            let dst = out.pixel_mut(y, x);
            dst[..c].copy_from_slice(a.pixel(y, x));
            dst[c..].copy_from_slice(b.pixel(y, x));
        }
    }
    Ok(out)
}

/// Per-pixel Shannon entropy `-sum_k p ln p` in nats, with `0 ln 0 = 0`.
/// Values lie in `[0, ln K]`.
pub fn pixel_entropy<R: Real>(p: &ProbMap<R>) -> ScalarMap<R> {
    let (h, w) = (p.height(), p.width());
    let mut out = ScalarMap::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            out.set(y, x, entropy_of(p.pixel(y, x)));
        }
    }
    out
}

/// Entropy of one distribution slice, `0 ln 0 = 0`.
#[inline]
pub(crate) fn entropy_of<R: Real>(probs: &[R]) -> R {
    let mut e = R::zero();
    for &v in probs {
        if v > R::zero() {
            e -= v * v.ln();
        }
    }
    e
}
