//! U-Net cell segmentation with a frequency-domain input block, plus the
//! FFT, post-processing and evaluation pieces around it.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`). Training runs in
//! `f32`; `f64` instantiations serve gradient checks and reference
//! computations. The aliases below name the common instantiations.

pub mod bench;
pub mod data;
pub mod error;
pub mod fft;
pub mod grid;
pub mod layers;
pub mod metrics;
pub mod postproc;
pub mod rng;
pub mod scalar;
pub mod training;
pub mod unet;

pub use error::{Error, Result};
pub use grid::{ComplexGrid, Grid4, Plane, Shape4};
pub use metrics::BinaryMask;
pub use rng::Rng;
pub use scalar::Scalar;
pub use unet::{UNetConfig, UNetModel};

pub type Grid4f = Grid4<f32>;
pub type Grid4d = Grid4<f64>;
pub type Planef = Plane<f32>;
pub type Planed = Plane<f64>;
pub type ComplexGridf = ComplexGrid<f32>;
pub type ComplexGridd = ComplexGrid<f64>;
/// The trainable network.
pub type UNet = UNetModel<f32>;
/// Double-precision network for gradient checks.
pub type UNet64 = UNetModel<f64>;
pub type Dataset = training::Dataset<f32>;
