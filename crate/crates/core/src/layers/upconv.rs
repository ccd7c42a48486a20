use crate::error::{Error, Result};
use crate::grid::Grid4;
use crate::scalar::{gemm, MatRef, Scalar};

use super::{ConvGrads, ConvParams};

#[derive(Debug, Clone)]
pub struct UpconvTape<T> {
    input: Grid4<T>,
}

fn check<T: Scalar>(x: &Grid4<T>, p: &ConvParams<T>) -> Result<()> {
    if p.kernel() != (2, 2) {
        let (kh, kw) = p.kernel();
        return Err(Error::InvalidShape(format!("transposed conv needs a 2x2 kernel, got {kh}x{kw}")));
    }
    if p.in_channels() != x.channels() {
        return Err(Error::ShapeMismatch(format!(
            "upconv expects {} input channels, got {}",
            p.in_channels(),
            x.channels()
        )));
    }
    Ok(())
}

/// Weight block `W[:, :, u, v]` as a strided `(out_ch, in_ch)` view.
fn tap<T>(w: &[T], cout: usize, cin: usize, u: usize, v: usize) -> MatRef<'_, T> {
    MatRef { data: &w[u * 2 + v..], rows: cout, cols: cin, row_stride: cin * 4, col_stride: 4 }
}

/// Transposed 2x2 convolution with stride 2: every input pixel expands into a
/// 2x2 output block, so spatial dims exactly double.
pub fn upconv2x2<T: Scalar>(x: &Grid4<T>, p: &ConvParams<T>) -> Result<(Grid4<T>, UpconvTape<T>)> {
    check(x, p)?;
    let (b, cin, h, w) = x.shape();
    let cout = p.out_channels();
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = Grid4::zeros((b, cout, oh, ow))?;
    let mut block = vec![T::zero(); cout * h * w];
    for bi in 0..b {
        let src = x.image_slice(bi);
        let dst = out.image_slice_mut(bi);
        for u in 0..2 {
            for v in 0..2 {
                gemm(tap(p.weights.data(), cout, cin, u, v), MatRef::new(src, cin, h * w), T::zero(), &mut block);
                for o in 0..cout {
                    let bias = p.bias[o];
                    let plane = &mut dst[o * oh * ow..(o + 1) * oh * ow];
                    let vals = &block[o * h * w..(o + 1) * h * w];
                    for y in 0..h {
                        let row = &mut plane[(2 * y + u) * ow..(2 * y + u + 1) * ow];
                        for xx in 0..w {
                            row[2 * xx + v] = vals[y * w + xx] + bias;
                        }
                    }
                }
            }
        }
    }
    Ok((out, UpconvTape { input: x.clone() }))
}

pub fn upconv2x2_backward<T: Scalar>(
    tape: &UpconvTape<T>,
    p: &ConvParams<T>,
    grad_out: &Grid4<T>,
) -> Result<ConvGrads<T>> {
    let x = &tape.input;
    check(x, p)?;
    let (b, cin, h, w) = x.shape();
    let cout = p.out_channels();
    let (oh, ow) = (2 * h, 2 * w);
    if grad_out.shape() != (b, cout, oh, ow) {
        return Err(Error::ShapeMismatch(format!("upconv grad_out {:?}", grad_out.shape())));
    }
    let mut grad_x = x.zeros_like();
    let mut grad_w = p.weights.zeros_like();
    let mut grad_b = vec![T::zero(); cout];
    let mut block = vec![T::zero(); cout * h * w];
    let mut gw_tap = vec![T::zero(); cout * cin];
    for bi in 0..b {
        let go = grad_out.image_slice(bi);
        for (o, plane) in go.chunks_exact(oh * ow).enumerate() {
            grad_b[o] += plane.iter().copied().sum::<T>();
        }
        let src = x.image_slice(bi);
        for u in 0..2 {
            for v in 0..2 {
                for o in 0..cout {
                    let plane = &go[o * oh * ow..(o + 1) * oh * ow];
                    for y in 0..h {
                        let row = &plane[(2 * y + u) * ow..(2 * y + u + 1) * ow];
                        for xx in 0..w {
                            block[o * h * w + y * w + xx] = row[2 * xx + v];
                        }
                    }
                }
                // dX += W_uv^T * G_uv
                let wt = tap(p.weights.data(), cout, cin, u, v);
                let wt_t = MatRef { data: wt.data, rows: cin, cols: cout, row_stride: 4, col_stride: cin * 4 };
                gemm(wt_t, MatRef::new(&block, cout, h * w), T::one(), grad_x.image_slice_mut(bi));
                // dW_uv += G_uv * X^T
                gemm(MatRef::new(&block, cout, h * w), MatRef::transposed(src, cin, h * w), T::zero(), &mut gw_tap);
                let gw = grad_w.data_mut();
                for o in 0..cout {
                    for i in 0..cin {
                        gw[(o * cin + i) * 4 + u * 2 + v] += gw_tap[o * cin + i];
                    }
                }
            }
        }
    }
    Ok(ConvGrads { grad_x, grad_w, grad_b })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_pixel_expands_to_scaled_kernel() {
        let x = Grid4::from_vec((1, 1, 1, 1), vec![3.0f64]).unwrap();
        let k = Grid4::from_vec((1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let p = ConvParams::new(k, vec![0.0]).unwrap();
        let (y, _) = upconv2x2(&x, &p).unwrap();
        assert_eq!(y.data(), &[3.0, 6.0, 9.0, 12.0]);
    }

    #[test]
    fn shape_doubles() {
        let x = Grid4::new((2, 3, 4, 5), 1.0f32).unwrap();
        let p = ConvParams::zeros(6, 3, 2, 2).unwrap();
        let (y, _) = upconv2x2(&x, &p).unwrap();
        assert_eq!(y.shape(), (2, 6, 8, 10));
    }

    #[test]
    fn non_2x2_kernel_rejected() {
        let x = Grid4::new((1, 1, 2, 2), 1.0f32).unwrap();
        let p = ConvParams::zeros(1, 1, 3, 3).unwrap();
        assert!(matches!(upconv2x2(&x, &p), Err(Error::InvalidShape(_))));
    }

    #[test]
    fn multi_channel_matches_definition() {
        let x = Grid4::from_vec((1, 2, 2, 2), (0..8).map(|v| v as f64 * 0.5 - 1.0).collect()).unwrap();
        let w = Grid4::from_vec((3, 2, 2, 2), (0..24).map(|v| (v as f64).cos()).collect()).unwrap();
        let p = ConvParams::new(w, vec![0.1, 0.2, 0.3]).unwrap();
        let (y, _) = upconv2x2(&x, &p).unwrap();
        for o in 0..3 {
            for oy in 0..4 {
                for ox in 0..4 {
                    let expect: f64 = p.bias[o]
                        + (0..2).map(|i| x.get(0, i, oy / 2, ox / 2) * p.weights.get(o, i, oy % 2, ox % 2)).sum::<f64>();
                    assert!((y.get(0, o, oy, ox) - expect).abs() < 1e-12);
                }
            }
        }
    }
}
