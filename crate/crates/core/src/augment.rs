//! Seeded input augmentation: brightness/contrast/saturation jitter and
//! optional Gaussian blur, the combination commonly used for the student
//! branch of self-training.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Image;
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentParams {
    #[serde(default = "default_true")]
    pub enabled: bool,
    /// Brightness/contrast/saturation factors are drawn from
    /// `[1 - jitter, 1 + jitter]`.
    #[serde(default = "default_jitter")]
    pub jitter: f64,
    /// Probability of applying the Gaussian blur.
    #[serde(default = "default_blur_prob")]
    pub blur_prob: f64,
    #[serde(default = "default_sigma_min")]
    pub blur_sigma_min: f64,
    #[serde(default = "default_sigma_max")]
    pub blur_sigma_max: f64,
}

fn default_true() -> bool {
    true
}
fn default_jitter() -> f64 {
    0.25
}
fn default_blur_prob() -> f64 {
    0.5
}
fn default_sigma_min() -> f64 {
    0.15
}
fn default_sigma_max() -> f64 {
    1.15
}

impl Default for AugmentParams {
    fn default() -> Self {
        AugmentParams {
            enabled: true,
            jitter: default_jitter(),
            blur_prob: default_blur_prob(),
            blur_sigma_min: default_sigma_min(),
            blur_sigma_max: default_sigma_max(),
        }
    }
}

impl AugmentParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.jitter) {
            return Err(Error::InvalidConfig(format!("augment.jitter {} outside [0, 1]", self.jitter)));
        }
        if !(0.0..=1.0).contains(&self.blur_prob) {
            return Err(Error::InvalidConfig(format!(
                "augment.blur_prob {} outside [0, 1]",
                self.blur_prob
            )));
        }
        if self.blur_sigma_min <= 0.0 || self.blur_sigma_max < self.blur_sigma_min {
            return Err(Error::InvalidConfig("augment blur sigma range is empty".into()));
        }
        Ok(())
    }

    /// Disabled augmentation: [`augment`] becomes the identity.
    pub fn none() -> Self {
        AugmentParams { enabled: false, jitter: 0.0, blur_prob: 0.0, ..AugmentParams::default() }
    }
}

fn gaussian_blur<R: Real>(img: &Image<R>, sigma: f64) -> Image<R> {
    let radius = (sigma * 2.5).ceil().max(1.0) as i64;
    let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
    let mut sum = 0.0;
    for i in -radius..=radius {
        let v = (-(i as f64).powi(2) / (2.0 * sigma * sigma)).exp();
        kernel.push(v);
        sum += v;
    }
    for v in &mut kernel {
        *v /= sum;
    }
    let (h, w, c) = (img.height(), img.width(), img.channels());
    // separable passes with clamp-to-edge borders
    let mut tmp = Image::<R>::zeros(h, w, c);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (ki, kv) in kernel.iter().enumerate() {
                    let xx = (x as i64 + ki as i64 - radius).clamp(0, w as i64 - 1) as usize;
                    acc += kv * img.get(y, xx, ch).to_f64_lossy();
                }
                tmp.set(y, x, ch, R::from_f64_lossy(acc));
            }
        }
    }
    let mut out = Image::<R>::zeros(h, w, c);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (ki, kv) in kernel.iter().enumerate() {
                    let yy = (y as i64 + ki as i64 - radius).clamp(0, h as i64 - 1) as usize;
                    acc += kv * tmp.get(yy, x, ch).to_f64_lossy();
                }
                out.set(y, x, ch, R::from_f64_lossy(acc));
            }
        }
    }
    out
}

/// Seeded photometric augmentation. Dimensions are preserved and labels are
/// untouched; the output is clamped to `[0, 1]`. With zero jitter and zero
/// blur probability this is the bit-exact identity.
pub fn augment<R: Real>(img: &Image<R>, params: &AugmentParams, seed: u64) -> Image<R> {
    if !params.enabled || (params.jitter == 0.0 && params.blur_prob == 0.0) {
        return img.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = img.clone();
    let (h, w, c) = (img.height(), img.width(), img.channels());

    if params.jitter > 0.0 {
        let j = params.jitter;
        let brightness = rng.random_range(1.0 - j..=1.0 + j);
        let contrast = rng.random_range(1.0 - j..=1.0 + j);
        let saturation = rng.random_range(1.0 - j..=1.0 + j);

        let mut mean = 0.0;
        for v in out.data() {
            mean += v.to_f64_lossy();
        }
        mean /= (h * w * c) as f64;

        for y in 0..h {
            for x in 0..w {
                let gray = out.pixel(y, x).iter().map(|v| v.to_f64_lossy()).sum::<f64>() / c as f64;
                for ch in 0..c {
                    let mut v = out.get(y, x, ch).to_f64_lossy();
                    v *= brightness;
                    v = (v - mean) * contrast + mean;
                    v = gray + (v - gray) * saturation;
                    out.set(y, x, ch, R::from_f64_lossy(v));
                }
            }
        }
    }

    if params.blur_prob > 0.0 && rng.random_range(0.0..1.0) < params.blur_prob {
        let sigma = rng.random_range(params.blur_sigma_min..=params.blur_sigma_max);
        out = gaussian_blur(&out, sigma);
    }

    for v in out.data_mut() {
        *v = (*v).max(R::zero()).min(R::one());
    }
    out
}
