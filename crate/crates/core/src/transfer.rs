//! Deterministic style transfer producing the transferred source image.
//!
//! Replaces a learned generator with reference-based recoloring methods that
//! change style while leaving the spatial layout untouched, plus an ingestion
//! path for transferred images precomputed by external tools.

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::pngio;
use crate::raster::Image;
use crate::scalar::Real;

const HIST_BINS: usize = 256;

/// How the transferred source image is produced.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransferMethod {
    /// Pass the source through unchanged.
    Identity,
    /// Per-channel 256-bin CDF matching against a reference image.
    HistogramMatch,
    /// Per-channel mean/std alignment against a reference image.
    StatsTransfer,
    /// Load a stem-matched PNG from this directory.
    Precomputed(PathBuf),
}

#[inline]
fn bin_of<R: Real>(v: R) -> usize {
    let f = v.to_f64_lossy().clamp(0.0, 1.0);
    ((f * HIST_BINS as f64) as usize).min(HIST_BINS - 1)
}

fn channel_cdf<R: Real>(img: &Image<R>, channel: usize) -> Vec<f64> {
    let mut hist = [0u64; HIST_BINS];
    for y in 0..img.height() {
        for x in 0..img.width() {
            hist[bin_of(img.get(y, x, channel))] += 1;
        }
    }
    let total = (img.height() * img.width()) as f64;
    let mut cdf = Vec::with_capacity(HIST_BINS);
    let mut acc = 0u64;
    for h in hist {
        acc += h;
        cdf.push(acc as f64 / total);
    }
    cdf
}

/// Remaps each channel of `src` so its empirical 256-bin CDF matches
/// `reference`'s. The remap is a monotone function of pixel value, so spatial
/// structure is untouched; outputs are bin centers in `(0, 1)`.
pub fn histogram_match<R: Real>(src: &Image<R>, reference: &Image<R>) -> Result<Image<R>> {
    if src.channels() != reference.channels() {
        return Err(Error::Shape(format!(
            "histogram_match channels {} vs {}",
            src.channels(),
            reference.channels()
        )));
    }
    let mut out = src.clone();
    for c in 0..src.channels() {
        let src_cdf = channel_cdf(src, c);
        let ref_cdf = channel_cdf(reference, c);
        // lookup per source bin: smallest reference bin whose CDF reaches it
        let mut lut = [0usize; HIST_BINS];
        let mut r = 0usize;
        for (b, lut_b) in lut.iter_mut().enumerate() {
            while r < HIST_BINS - 1 && ref_cdf[r] < src_cdf[b] {
                r += 1;
            }
            *lut_b = r;
        }
        for y in 0..src.height() {
            for x in 0..src.width() {
                let mapped = (lut[bin_of(src.get(y, x, c))] as f64 + 0.5) / HIST_BINS as f64;
                out.set(y, x, c, R::from_f64_lossy(mapped));
            }
        }
    }
    Ok(out)
}

fn channel_moments<R: Real>(img: &Image<R>, channel: usize) -> (f64, f64) {
    let n = (img.height() * img.width()) as f64;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for y in 0..img.height() {
        for x in 0..img.width() {
            let v = img.get(y, x, channel).to_f64_lossy();
            sum += v;
            sum_sq += v * v;
        }
    }
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0);
    (mean, var.sqrt())
}

fn stats_transfer_unclamped<R: Real>(src: &Image<R>, reference: &Image<R>) -> Result<Image<R>> {
    if src.channels() != reference.channels() {
        return Err(Error::Shape(format!(
            "stats_transfer channels {} vs {}",
            src.channels(),
            reference.channels()
        )));
    }
    let mut out = src.clone();
    for c in 0..src.channels() {
        let (mean_s, std_s) = channel_moments(src, c);
        let (mean_r, std_r) = channel_moments(reference, c);
        let scale = std_r / std_s.max(1e-6);
        for y in 0..src.height() {
            for x in 0..src.width() {
                let v = src.get(y, x, c).to_f64_lossy();
                out.set(y, x, c, R::from_f64_lossy((v - mean_s) * scale + mean_r));
            }
        }
    }
    Ok(out)
}

/// Per-channel moment matching: `out = (src - mean_src) * std_ref / max(std_src, 1e-6) + mean_ref`,
/// clamped to `[0, 1]`.
pub fn stats_transfer<R: Real>(src: &Image<R>, reference: &Image<R>) -> Result<Image<R>> {
    let mut out = stats_transfer_unclamped(src, reference)?;
    for v in out.data_mut() {
        *v = (*v).max(R::zero()).min(R::one());
    }
    Ok(out)
}

/// Applies the configured method to one source image. Reference-based methods
/// draw their reference from `ref_pool` by seeded uniform choice; the
/// precomputed path loads `<dir>/<src_stem>.png`.
pub fn transfer<R: Real>(
    method: &TransferMethod,
    src: &Image<R>,
    src_stem: &str,
    ref_pool: &[Image<R>],
    seed: u64,
) -> Result<Image<R>> {
    match method {
        TransferMethod::Identity => Ok(src.clone()),
        TransferMethod::Precomputed(dir) => {
            let path = dir.join(format!("{src_stem}.png"));
            if !path.is_file() {
                return Err(Error::Ingestion(format!(
                    "no precomputed transfer for stem '{src_stem}' in {}",
                    dir.display()
                )));
            }
            pngio::load_image(&path)
        }
        TransferMethod::HistogramMatch | TransferMethod::StatsTransfer => {
            if ref_pool.is_empty() {
                return Err(Error::InvalidInput("transfer reference pool is empty".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let reference = &ref_pool[rng.random_range(0..ref_pool.len())];
            match method {
                TransferMethod::HistogramMatch => histogram_match(src, reference),
                _ => stats_transfer(src, reference),
            }
        }
    }
}
