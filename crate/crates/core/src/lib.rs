//! Desk-scale unsupervised domain adaptation for semantic segmentation.
//!
//! The toolkit trains a small encoder-decoder segmentation network on a
//! labeled source domain and adapts it to an unlabeled target domain via
//! self-training: an EMA teacher produces pseudo-labels, dual-domain image
//! fusion blends original and style-transferred source images, and
//! superpixel-boundary regional weights boost the pseudo-label loss where
//! labels are hardest.
//!
//! All pixel math is generic over the scalar type ([`scalar::Real`], i.e.
//! `f32` or `f64`): single precision for training, double precision for
//! gradient checks. Concrete aliases for the common instantiations live at
//! the crate root.

pub mod ablation;
pub mod augment;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
pub mod fusion;
pub mod metrics;
pub mod net;
pub mod ops;
pub mod optim;
pub mod pngio;
pub mod prw;
pub mod raster;
pub mod scalar;
pub mod slic;
pub mod synth;
pub mod teacher;
pub mod trainer;
pub mod transfer;

pub use error::{Error, Result};
pub use scalar::Real;

/// Single-precision raster types, the training configuration.
pub type Image32 = raster::Image<f32>;
pub type ProbMap32 = raster::ProbMap<f32>;
pub type ScalarMap32 = raster::ScalarMap<f32>;
pub type WeightMap32 = raster::WeightMap<f32>;
pub type ParamSet32 = net::ParamSet<f32>;

/// Double-precision raster types, used by gradient checks and oracles.
pub type Image64 = raster::Image<f64>;
pub type ProbMap64 = raster::ProbMap<f64>;
pub type ScalarMap64 = raster::ScalarMap<f64>;
pub type WeightMap64 = raster::WeightMap<f64>;
pub type ParamSet64 = net::ParamSet<f64>;
