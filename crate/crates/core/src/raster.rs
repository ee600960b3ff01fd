//! Fundamental raster types: images, probability maps, label maps, and
//! per-pixel weight/score maps.
//!
//! All rasters are row-major and pixel-interleaved: the value of channel `c`
//! at pixel `(x, y)` lives at index `(y * width + x) * channels + c`.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// H×W×C raster of real values. Holds input images (nominal range `[0, 1]`)
/// as well as logit and gradient rasters, which are unbounded.
#[derive(Debug, Clone, PartialEq)]
pub struct Image<R> {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<R>,
}

impl<R: Real> Image<R> {
    /// Zero-filled raster.
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        assert!(height >= 1 && width >= 1 && channels >= 1, "raster dims must be >= 1");
        Image { height, width, channels, data: vec![R::zero(); height * width * channels] }
    }

    /// Wraps an existing buffer; errors when the length does not match.
    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<R>) -> Result<Self> {
        if height < 1 || width < 1 || channels < 1 {
            return Err(Error::Shape(format!(
                "image dims must be >= 1, got {height}x{width}x{channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "image buffer length {} != {height}x{width}x{channels}",
                data.len()
            )));
        }
        Ok(Image { height, width, channels, data })
    }

    /// Constant-valued raster.
    pub fn constant(height: usize, width: usize, channels: usize, value: R) -> Self {
        let mut img = Self::zeros(height, width, channels);
        img.data.fill(value);
        img
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[R] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [R] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> R {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: R) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    /// All channel values of one pixel.
    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> &[R] {
        let start = (y * self.width + x) * self.channels;
        &self.data[start..start + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, y: usize, x: usize) -> &mut [R] {
        let start = (y * self.width + x) * self.channels;
        &mut self.data[start..start + self.channels]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    /// True when every value is finite.
    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Converts elementwise to another scalar type.
    pub fn cast<S: Real>(&self) -> Image<S> {
        Image {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|v| S::from_f64_lossy(v.to_f64_lossy())).collect(),
        }
    }
}

/// Per-pixel distribution over `K` classes. Each pixel's values are
/// non-negative and sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap<R> {
    height: usize,
    width: usize,
    classes: usize,
    data: Vec<R>,
}

impl<R: Real> ProbMap<R> {
    /// Wraps a buffer after validating the distribution invariant
    /// (values `>= 0`, per-pixel sums within `1e-6` of one).
    pub fn from_vec(height: usize, width: usize, classes: usize, data: Vec<R>) -> Result<Self> {
        if data.len() != height * width * classes {
            return Err(Error::Shape(format!(
                "probmap buffer length {} != {height}x{width}x{classes}",
                data.len()
            )));
        }
        let tol = 1e-6;
        for p in 0..height * width {
            let mut sum = 0.0;
            for k in 0..classes {
                let v = data[p * classes + k].to_f64_lossy();
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::InvalidInput(format!(
                        "probmap pixel ({}, {}) class {k} holds {v}",
                        p / width,
                        p % width
                    )));
                }
                sum += v;
            }
            if (sum - 1.0).abs() > tol {
                return Err(Error::InvalidInput(format!(
                    "probmap pixel ({}, {}) sums to {sum}",
                    p / width,
                    p % width
                )));
            }
        }
        Ok(ProbMap { height, width, classes, data })
    }

    /// Internal constructor for outputs that satisfy the invariant by
    /// construction (softmax).
    pub(crate) fn from_vec_unchecked(height: usize, width: usize, classes: usize, data: Vec<R>) -> Self {
        debug_assert_eq!(data.len(), height * width * classes);
        ProbMap { height, width, classes, data }
    }

    /// Uniform distribution at every pixel.
    pub fn uniform(height: usize, width: usize, classes: usize) -> Self {
        let v = R::one() / R::from_f64_lossy(classes as f64);
        ProbMap { height, width, classes, data: vec![v; height * width * classes] }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn data(&self) -> &[R] {
        &self.data
    }

    /// The `K` probabilities of one pixel.
    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> &[R] {
        let start = (y * self.width + x) * self.classes;
        &self.data[start..start + self.classes]
    }
}

/// Per-pixel hard class assignment in `[0, K)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    classes: usize,
    data: Vec<u8>,
}

impl LabelMap {
    /// Wraps a buffer of class indices; errors when any index is `>= classes`.
    pub fn from_vec(height: usize, width: usize, classes: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "labelmap buffer length {} != {height}x{width}",
                data.len()
            )));
        }
        if classes < 1 || classes > 256 {
            return Err(Error::InvalidConfig(format!("class count {classes} outside [1, 256]")));
        }
        if let Some(pos) = data.iter().position(|&v| v as usize >= classes) {
            return Err(Error::InvalidInput(format!(
                "label {} at pixel ({}, {}) >= class count {classes}",
                data[pos],
                pos / width,
                pos % width
            )));
        }
        Ok(LabelMap { height, width, classes, data })
    }

    /// All-zero (background) label map.
    pub fn zeros(height: usize, width: usize, classes: usize) -> Self {
        LabelMap { height, width, classes, data: vec![0; height * width] }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> usize {
        self.data[y * self.width + x] as usize
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, class: u8) {
        debug_assert!((class as usize) < self.classes);
        self.data[y * self.width + x] = class;
    }
}

/// Per-pixel non-negative loss weight.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMap<R> {
    height: usize,
    width: usize,
    data: Vec<R>,
}

impl<R: Real> WeightMap<R> {
    /// Wraps a buffer; errors on negative or non-finite weights.
    pub fn from_vec(height: usize, width: usize, data: Vec<R>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "weightmap buffer length {} != {height}x{width}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite() || *v < R::zero()) {
            return Err(Error::InvalidInput(format!(
                "weight {} at pixel ({}, {}) is negative or non-finite",
                data[pos],
                pos / width,
                pos % width
            )));
        }
        Ok(WeightMap { height, width, data })
    }

    /// Constant weight everywhere. `w` must be non-negative and finite.
    pub fn constant(height: usize, width: usize, w: R) -> Result<Self> {
        Self::from_vec(height, width, vec![w; height * width])
    }

    /// Unit weight everywhere, reducing weighted losses to their plain form.
    pub fn ones(height: usize, width: usize) -> Self {
        WeightMap { height, width, data: vec![R::one(); height * width] }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[R] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> R {
        self.data[y * self.width + x]
    }
}

/// Per-pixel real value (entropy rasters, score maps).
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarMap<R> {
    height: usize,
    width: usize,
    data: Vec<R>,
}

impl<R: Real> ScalarMap<R> {
    pub fn zeros(height: usize, width: usize) -> Self {
        ScalarMap { height, width, data: vec![R::zero(); height * width] }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<R>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "scalarmap buffer length {} != {height}x{width}",
                data.len()
            )));
        }
        Ok(ScalarMap { height, width, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[R] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [R] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> R {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: R) {
        self.data[y * self.width + x] = v;
    }
}
