//! Differentiable building blocks.
//!
//! Every layer is a pair of free functions: a forward pass that returns its
//! output together with a tape holding whatever the backward pass needs, and a
//! backward pass that consumes the tape. Spatial convolution is
//! cross-correlation (no kernel flip).

mod activation;
mod concat;
mod conv;
mod dropout;
mod fft_block;
mod pool;
mod upconv;

pub use activation::{elu, elu_backward, sigmoid, sigmoid_backward};
pub use concat::{concat_channels, split_channels};
pub use conv::{conv2d_backward, conv2d_forward, ConvGrads, ConvTape, Padding};
pub use dropout::{dropout, dropout_backward, DropoutTape};
pub use fft_block::{
    fft_input_block, fft_input_block_backward, fft_input_block_with, FftBlockTape, SpectralActivation,
};
pub use pool::{maxpool2x2, maxpool2x2_backward, PoolTape};
pub use upconv::{upconv2x2, upconv2x2_backward, UpconvTape};

use crate::error::{Error, Result};
use crate::grid::Grid4;
use crate::rng::Rng;
use crate::scalar::Scalar;

/// Convolution weights `(out_ch, in_ch, kh, kw)` and one bias per output channel.
///
/// The transposed 2x2 convolution uses the same layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<T> {
    pub weights: Grid4<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> ConvParams<T> {
    pub fn new(weights: Grid4<T>, bias: Vec<T>) -> Result<Self> {
        let (out_ch, _, kh, kw) = weights.shape();
        if bias.len() != out_ch {
            return Err(Error::ShapeMismatch(format!("{} biases for {out_ch} output channels", bias.len())));
        }
        if !(1..=3).contains(&kh) || !(1..=3).contains(&kw) {
            return Err(Error::InvalidShape(format!("kernel {kh}x{kw}: supported sizes are 1..=3")));
        }
        Ok(Self { weights, bias })
    }

    pub fn zeros(out_ch: usize, in_ch: usize, kh: usize, kw: usize) -> Result<Self> {
        Self::new(Grid4::zeros((out_ch, in_ch, kh, kw))?, vec![T::zero(); out_ch])
    }

    /// He (fan-in) normal initialization with zero bias.
    pub fn he_normal(out_ch: usize, in_ch: usize, kh: usize, kw: usize, rng: &mut Rng) -> Result<Self> {
        let std = (2.0 / (in_ch * kh * kw) as f64).sqrt();
        let mut p = Self::zeros(out_ch, in_ch, kh, kw)?;
        for w in p.weights.data_mut() {
            *w = T::lit(rng.next_normal() * std);
        }
        Ok(p)
    }

    pub fn out_channels(&self) -> usize {
        self.weights.shape().0
    }

    pub fn in_channels(&self) -> usize {
        self.weights.shape().1
    }

    pub fn kernel(&self) -> (usize, usize) {
        let (_, _, kh, kw) = self.weights.shape();
        (kh, kw)
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}
