//! Pseudo-label regional weights: superpixel-boundary extraction and the
//! boundary-boosted per-pixel weight map.
//!
//! Object boundaries are where pseudo-labels are least reliable and the
//! classes hardest, so pixels inside the boundary band of the target image's
//! superpixel partition get their pseudo-label weight raised by `beta`;
//! everything else keeps the per-image quality scalar unchanged.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{Image, WeightMap};
use crate::scalar::Real;
use crate::slic::{slic_superpixels, SuperpixelMap};

/// Boolean raster marking superpixel-boundary pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoundaryMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl BoundaryMask {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn count_set(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

/// PRW configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrwParams {
    /// Target superpixel count; absent means `H*W / 256`.
    #[serde(default)]
    pub n_superpixels: Option<usize>,
    #[serde(default = "default_compactness")]
    pub compactness: f64,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_boundary_width")]
    pub boundary_width: usize,
    /// Boundary weight boost, strictly inside `(0, 1)`.
    #[serde(default = "default_beta")]
    pub beta: f64,
}

fn default_compactness() -> f64 {
    10.0
}
fn default_iterations() -> usize {
    10
}
fn default_boundary_width() -> usize {
    3
}
fn default_beta() -> f64 {
    0.3
}

impl Default for PrwParams {
    fn default() -> Self {
        PrwParams {
            n_superpixels: None,
            compactness: default_compactness(),
            iterations: default_iterations(),
            boundary_width: default_boundary_width(),
            beta: default_beta(),
        }
    }
}

impl PrwParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "prw.beta {} outside the open interval (0, 1)",
                self.beta
            )));
        }
        if self.compactness <= 0.0 {
            return Err(Error::InvalidConfig("prw.compactness must be > 0".into()));
        }
        if self.boundary_width < 1 {
            return Err(Error::InvalidConfig("prw.boundary_width must be >= 1".into()));
        }
        if self.iterations < 1 {
            return Err(Error::InvalidConfig("prw.iterations must be >= 1".into()));
        }
        Ok(())
    }

    /// Resolved superpixel target for an image of `h` x `w` pixels.
    pub fn target_for(&self, h: usize, w: usize) -> usize {
        self.n_superpixels.unwrap_or_else(|| (h * w / 256).max(1))
    }
}

/// Marks pixels that have a differently-labeled pixel within Chebyshev
/// distance `width / 2` (minimum: the 4-neighborhood for width 1). Image
/// border pixels are not automatically boundary.
pub fn boundary_mask(sp: &SuperpixelMap, width: usize) -> BoundaryMask {
    let (h, w) = (sp.height(), sp.width());
    let mut bits = vec![false; h * w];
    let radius = (width / 2) as i64;
    for y in 0..h {
        for x in 0..w {
            let own = sp.get(y, x);
            let mut is_boundary = false;
            if width <= 1 {
                for (dy, dx) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
                    let (yy, xx) = (y as i64 + dy, x as i64 + dx);
                    if yy >= 0
                        && xx >= 0
                        && yy < h as i64
                        && xx < w as i64
                        && sp.get(yy as usize, xx as usize) != own
                    {
                        is_boundary = true;
                        break;
                    }
                }
            } else {
                'scan: for dy in -radius..=radius {
                    for dx in -radius..=radius {
                        let (yy, xx) = (y as i64 + dy, x as i64 + dx);
                        if yy >= 0
                            && xx >= 0
                            && yy < h as i64
                            && xx < w as i64
                            && sp.get(yy as usize, xx as usize) != own
                        {
                            is_boundary = true;
                            break 'scan;
                        }
                    }
                }
            }
            bits[y * w + x] = is_boundary;
        }
    }
    BoundaryMask { height: h, width: w, bits }
}

/// Lifts the per-image quality scalar to a per-pixel weight map:
/// `w_base + beta` inside the boundary mask, `w_base` elsewhere.
pub fn regional_weight_map<R: Real>(
    w_base: f64,
    mb: &BoundaryMask,
    beta: f64,
) -> Result<WeightMap<R>> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "boundary boost beta {beta} outside the open interval (0, 1)"
        )));
    }
    if !(0.0..=1.0).contains(&w_base) {
        return Err(Error::InvalidInput(format!("quality scalar {w_base} outside [0, 1]")));
    }
    let interior = R::from_f64_lossy(w_base);
    let boundary = R::from_f64_lossy(w_base + beta);
    let data = mb.bits.iter().map(|&b| if b { boundary } else { interior }).collect();
    WeightMap::from_vec(mb.height, mb.width, data)
}

/// Superpixels, boundary mask, and weight map for one target image in one
/// call. The boundary mask depends only on the image, so callers cache it and
/// re-apply fresh quality scalars via [`regional_weight_map`].
pub fn prw_boundary<R: Real>(x_t: &Image<R>, params: &PrwParams, seed: u64) -> Result<BoundaryMask> {
    params.validate()?;
    let target = params.target_for(x_t.height(), x_t.width());
    let sp = slic_superpixels(x_t, target, params.compactness, params.iterations, seed)?;
    Ok(boundary_mask(&sp, params.boundary_width))
}
