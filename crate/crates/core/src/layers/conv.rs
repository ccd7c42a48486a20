use crate::error::{Error, Result};
use crate::grid::Grid4;
use crate::scalar::{gemm, MatRef, Scalar};

use super::ConvParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding of `(k - 1) / 2` before and `k - 1 - (k - 1) / 2` after,
    /// preserving the spatial size.
    Same,
    /// No padding; the output shrinks by `k - 1`.
    Valid,
}

#[derive(Debug, Clone)]
pub struct ConvTape<T> {
    input: Grid4<T>,
    padding: Padding,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads<T> {
    pub grad_x: Grid4<T>,
    pub grad_w: Grid4<T>,
    pub grad_b: Vec<T>,
}

#[derive(Clone, Copy)]
struct Geometry {
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    pad_top: usize,
    pad_left: usize,
    out_h: usize,
    out_w: usize,
}

impl Geometry {
    fn new<T: Scalar>(x: &Grid4<T>, p: &ConvParams<T>, padding: Padding) -> Result<Self> {
        let (_, cin, h, w) = x.shape();
        let (kh, kw) = p.kernel();
        if p.in_channels() != cin {
            return Err(Error::ShapeMismatch(format!(
                "conv expects {} input channels, got {cin}",
                p.in_channels()
            )));
        }
        let (pad_top, pad_left, out_h, out_w) = match padding {
            Padding::Same => ((kh - 1) / 2, (kw - 1) / 2, h, w),
            Padding::Valid => {
                if kh > h || kw > w {
                    return Err(Error::ShapeMismatch(format!("{kh}x{kw} kernel on {h}x{w} input without padding")));
                }
                (0, 0, h - kh + 1, w - kw + 1)
            }
        };
        Ok(Self { cin, h, w, kh, kw, pad_top, pad_left, out_h, out_w })
    }

    fn k(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn pixels(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Geometry of the input-gradient pass: a correlation of `grad_out`
    /// (`cout` channels) with the flipped kernel, producing the input size.
    fn adjoint(&self, cout: usize) -> Self {
        Self {
            cin: cout,
            h: self.out_h,
            w: self.out_w,
            kh: self.kh,
            kw: self.kw,
            pad_top: self.kh - 1 - self.pad_top,
            pad_left: self.kw - 1 - self.pad_left,
            out_h: self.h,
            out_w: self.w,
        }
    }

    /// Valid output columns `[lo, hi)` for kernel column offset `v`.
    fn col_range(&self, v: usize) -> (usize, usize) {
        let lo = self.pad_left.saturating_sub(v);
        let hi = (self.w + self.pad_left).saturating_sub(v).min(self.out_w);
        (lo, hi.max(lo))
    }

    /// Writes the patch matrix of one image into columns
    /// `[offset, offset + pixels)` of `cols`, whose rows are `ld` long.
    fn im2col<T: Scalar>(&self, img: &[T], cols: &mut [T], ld: usize, offset: usize) {
        let p = self.pixels();
        for ci in 0..self.cin {
            let plane = &img[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for u in 0..self.kh {
                for v in 0..self.kw {
                    let row = &mut cols[((ci * self.kh + u) * self.kw + v) * ld + offset..][..p];
                    let (lo, hi) = self.col_range(v);
                    for oy in 0..self.out_h {
                        let dst = &mut row[oy * self.out_w..(oy + 1) * self.out_w];
                        let iy = (oy + u) as isize - self.pad_top as isize;
                        if iy < 0 || iy as usize >= self.h {
                            dst.fill(T::zero());
                            continue;
                        }
                        let src = &plane[iy as usize * self.w..][..self.w];
                        dst[..lo].fill(T::zero());
                        dst[hi..].fill(T::zero());
                        let ix0 = lo + v - self.pad_left;
                        dst[lo..hi].copy_from_slice(&src[ix0..ix0 + (hi - lo)]);
                    }
                }
            }
        }
    }

    /// Images per GEMM: enough to give about `TARGET_COLUMNS` columns.
    fn chunk(&self, batch: usize) -> usize {
        (TARGET_COLUMNS / self.pixels()).clamp(1, batch.max(1))
    }

    /// Patch matrix `(k, images.len() * pixels)` of the listed images.
    fn chunk_cols<T: Scalar>(&self, x: &Grid4<T>, images: std::ops::Range<usize>, cols: &mut Vec<T>) {
        let p = self.pixels();
        let ld = images.len() * p;
        cols.resize(self.k() * ld, T::zero());
        for (j, b) in images.enumerate() {
            self.im2col(x.image_slice(b), cols, ld, j * p);
        }
    }

    /// Correlates every image of `x` with `weights` (`cout x k`), plus `bias`.
    fn correlate<T: Scalar>(&self, x: &Grid4<T>, weights: &[T], cout: usize, bias: Option<&[T]>) -> Result<Grid4<T>> {
        let (batch, p) = (x.batch(), self.pixels());
        let chunk = self.chunk(batch);
        let mut out = Grid4::zeros((batch, cout, self.out_h, self.out_w))?;
        let (mut cols, mut prod) = (Vec::new(), vec![T::zero(); cout * chunk * p]);
        for start in (0..batch).step_by(chunk) {
            let images = start..(start + chunk).min(batch);
            let n = images.len();
            let ld = n * p;
            self.chunk_cols(x, images, &mut cols);
            gemm(MatRef::new(weights, cout, self.k()), MatRef::new(&cols, self.k(), ld), T::zero(), &mut prod[..cout * ld]);
            for j in 0..n {
                let img = out.image_slice_mut(start + j);
                for (o, dst) in img.chunks_exact_mut(p).enumerate() {
                    let src = &prod[o * ld + j * p..][..p];
                    match bias {
                        Some(bias) => dst.iter_mut().zip(src).for_each(|(d, &s)| *d = s + bias[o]),
                        None => dst.copy_from_slice(src),
                    }
                }
            }
        }
        Ok(out)
    }
}

const TARGET_COLUMNS: usize = 2048;

/// Multi-channel 2D cross-correlation plus bias.
pub fn conv2d_forward<T: Scalar>(
    x: &Grid4<T>,
    p: &ConvParams<T>,
    padding: Padding,
) -> Result<(Grid4<T>, ConvTape<T>)> {
    let g = Geometry::new(x, p, padding)?;
    let out = g.correlate(x, p.weights.data(), p.out_channels(), Some(&p.bias))?;
    Ok((out, ConvTape { input: x.clone(), padding }))
}

pub fn conv2d_backward<T: Scalar>(
    tape: &ConvTape<T>,
    p: &ConvParams<T>,
    grad_out: &Grid4<T>,
) -> Result<ConvGrads<T>> {
    let x = &tape.input;
    let g = Geometry::new(x, p, tape.padding)?;
    let cout = p.out_channels();
    let batch = x.batch();
    let expected = (batch, cout, g.out_h, g.out_w);
    if grad_out.shape() != expected {
        return Err(Error::ShapeMismatch(format!(
            "conv grad_out {:?}, expected {expected:?}",
            grad_out.shape()
        )));
    }
    let pixels = g.pixels();
    let chunk = g.chunk(batch);
    let mut grad_w = p.weights.zeros_like();
    let mut grad_b = vec![T::zero(); cout];
    let (mut cols, mut dy) = (Vec::new(), vec![T::zero(); cout * chunk * pixels]);
    for start in (0..batch).step_by(chunk) {
        let images = start..(start + chunk).min(batch);
        let ld = images.len() * pixels;
        // dY of the chunk as a (cout, ld) matrix.
        for (j, b) in images.clone().enumerate() {
            for (o, src) in grad_out.image_slice(b).chunks_exact(pixels).enumerate() {
                dy[o * ld + j * pixels..][..pixels].copy_from_slice(src);
            }
        }
        for (gb, row) in grad_b.iter_mut().zip(dy[..cout * ld].chunks_exact(ld)) {
            *gb += row.iter().copied().sum::<T>();
        }
        // dW += dY * cols^T
        g.chunk_cols(x, images, &mut cols);
        gemm(MatRef::new(&dy[..cout * ld], cout, ld), MatRef::transposed(&cols, g.k(), ld), T::one(), grad_w.data_mut());
    }

    // dX = dY correlated with the flipped, channel-transposed kernel.
    let (kh, kw) = (g.kh, g.kw);
    let mut flipped = vec![T::zero(); g.cin * cout * kh * kw];
    for o in 0..cout {
        for c in 0..g.cin {
            for u in 0..kh {
                for v in 0..kw {
                    flipped[((c * cout + o) * kh + kh - 1 - u) * kw + kw - 1 - v] = p.weights.get(o, c, u, v);
                }
            }
        }
    }
    let grad_x = g.adjoint(cout).correlate(grad_out, &flipped, g.cin, None)?;
    Ok(ConvGrads { grad_x, grad_w, grad_b })
}
