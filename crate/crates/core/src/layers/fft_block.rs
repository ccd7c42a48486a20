//! Frequency-domain input block.
//!
//! Per image: forward 2D FFT of the single input plane, the spectrum laid out
//! as two channels (real, imaginary), a same-padded 3x3 convolution mixing
//! 2 -> 2 channels, eLU, the two channels reassembled into a spectrum, inverse
//! 2D FFT, and the real part returned as one channel.
//!
//! Both transforms are linear, so the backward pass runs their adjoints: the
//! adjoint of the unnormalized forward FFT is `M*N * IFFT`, and the adjoint of
//! the normalized inverse is `FFT / (M*N)`.

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::fft::Fft2dPlan;
use crate::grid::Grid4;
use crate::scalar::Scalar;

use super::{conv2d_backward, conv2d_forward, elu, elu_backward, ConvGrads, ConvParams, ConvTape, Padding};

/// Nonlinearity applied to the mixed spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpectralActivation {
    Elu,
    /// Skips the activation; lets tests see the block as a pure linear map.
    Identity,
}

#[derive(Debug, Clone)]
pub struct FftBlockTape<T> {
    conv: ConvTape<T>,
    pre_activation: Grid4<T>,
    activation: SpectralActivation,
}

fn check<T: Scalar>(x: &Grid4<T>, p: &ConvParams<T>) -> Result<Fft2dPlan<T>> {
    let (_, c, h, w) = x.shape();
    if c != 1 {
        return Err(Error::ShapeMismatch(format!("FFT input block takes 1 channel, got {c}")));
    }
    if p.in_channels() != 2 || p.out_channels() != 2 {
        return Err(Error::ShapeMismatch("FFT input block mixes 2 -> 2 spectral channels".into()));
    }
    if !h.is_power_of_two() {
        return Err(Error::UnsupportedLength(h));
    }
    if !w.is_power_of_two() {
        return Err(Error::UnsupportedLength(w));
    }
    Fft2dPlan::new(h, w)
}

/// Spectra of every image as a `(b, 2, h, w)` grid.
fn spectra<T: Scalar>(plan: &Fft2dPlan<T>, x: &Grid4<T>, scale: T) -> Result<Grid4<T>> {
    let (b, _, h, w) = x.shape();
    let mut out = Grid4::zeros((b, 2, h, w))?;
    let mut buf = vec![Complex::new(T::zero(), T::zero()); h * w];
    for bi in 0..b {
        for (dst, &v) in buf.iter_mut().zip(x.plane_slice(bi, 0)) {
            *dst = Complex::new(v, T::zero());
        }
        plan.process(&mut buf, false);
        let img = out.image_slice_mut(bi);
        let (re, im) = img.split_at_mut(h * w);
        for ((r, i), c) in re.iter_mut().zip(im.iter_mut()).zip(&buf) {
            *r = c.re * scale;
            *i = c.im * scale;
        }
    }
    Ok(out)
}

/// Real part of the inverse transform of each 2-channel spectrum.
fn real_of_inverse<T: Scalar>(plan: &Fft2dPlan<T>, s: &Grid4<T>, scale: T) -> Result<Grid4<T>> {
    let (b, _, h, w) = s.shape();
    let mut out = Grid4::zeros((b, 1, h, w))?;
    let mut buf = vec![Complex::new(T::zero(), T::zero()); h * w];
    for bi in 0..b {
        let (re, im) = s.image_slice(bi).split_at(h * w);
        for ((dst, &r), &i) in buf.iter_mut().zip(re).zip(im) {
            *dst = Complex::new(r, i);
        }
        plan.process(&mut buf, true);
        for (dst, c) in out.plane_slice_mut(bi, 0).iter_mut().zip(&buf) {
            *dst = c.re * scale;
        }
    }
    Ok(out)
}

pub fn fft_input_block<T: Scalar>(x: &Grid4<T>, p: &ConvParams<T>) -> Result<(Grid4<T>, FftBlockTape<T>)> {
    fft_input_block_with(x, p, SpectralActivation::Elu)
}

pub fn fft_input_block_with<T: Scalar>(
    x: &Grid4<T>,
    p: &ConvParams<T>,
    activation: SpectralActivation,
) -> Result<(Grid4<T>, FftBlockTape<T>)> {
    let plan = check(x, p)?;
    let spec = spectra(&plan, x, T::one())?;
    let (mixed, conv) = conv2d_forward(&spec, p, Padding::Same)?;
    let activated = match activation {
        SpectralActivation::Elu => elu(&mixed),
        SpectralActivation::Identity => mixed.clone(),
    };
    let out = real_of_inverse(&plan, &activated, T::one())?;
    Ok((out, FftBlockTape { conv, pre_activation: mixed, activation }))
}

/// Returns the gradient with respect to the block input and its conv parameters.
pub fn fft_input_block_backward<T: Scalar>(
    tape: &FftBlockTape<T>,
    p: &ConvParams<T>,
    grad_out: &Grid4<T>,
) -> Result<ConvGrads<T>> {
    let (b, _, h, w) = tape.pre_activation.shape();
    if grad_out.shape() != (b, 1, h, w) {
        return Err(Error::ShapeMismatch(format!("FFT block grad_out {:?}", grad_out.shape())));
    }
    let plan = Fft2dPlan::new(h, w)?;
    let n = T::lit((h * w) as f64);
    let grad_activated = spectra(&plan, grad_out, T::one() / n)?;
    let grad_mixed = match tape.activation {
        SpectralActivation::Elu => elu_backward(&tape.pre_activation, &grad_activated)?,
        SpectralActivation::Identity => grad_activated,
    };
    let conv = conv2d_backward(&tape.conv, p, &grad_mixed)?;
    let grad_x = real_of_inverse(&plan, &conv.grad_x, n)?;
    Ok(ConvGrads { grad_x, grad_w: conv.grad_w, grad_b: conv.grad_b })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn identity_mixing() -> ConvParams<f64> {
        let mut p = ConvParams::zeros(2, 2, 3, 3).unwrap();
        p.weights.set(0, 0, 1, 1, 1.0);
        p.weights.set(1, 1, 1, 1, 1.0);
        p
    }

    #[test]
    fn identity_mixing_round_trips() {
        let mut rng = Rng::new(12);
        let x = Grid4::from_vec((2, 1, 8, 16), (0..256).map(|_| rng.next_f64()).collect()).unwrap();
        let (y, _) = fft_input_block_with(&x, &identity_mixing(), SpectralActivation::Identity).unwrap();
        assert_eq!(y.shape(), x.shape());
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn output_shape_matches_input() {
        let x = Grid4::new((3, 1, 4, 8), 0.2f32).unwrap();
        let p = ConvParams::zeros(2, 2, 3, 3).unwrap();
        let (y, _) = fft_input_block(&x, &p).unwrap();
        assert_eq!(y.shape(), (3, 1, 4, 8));
    }

    #[test]
    fn non_power_of_two_rejected() {
        let x = Grid4::new((1, 1, 6, 8), 0.0f64).unwrap();
        assert!(matches!(fft_input_block(&x, &identity_mixing()), Err(Error::UnsupportedLength(6))));
        let x = Grid4::new((1, 2, 8, 8), 0.0f64).unwrap();
        assert!(fft_input_block(&x, &identity_mixing()).is_err());
    }
}
