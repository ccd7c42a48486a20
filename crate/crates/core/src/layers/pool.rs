use crate::error::{Error, Result};
use crate::grid::{Grid4, Shape4};
use crate::scalar::Scalar;

/// Winning position (0..4, row-major within the window) of every output cell.
#[derive(Debug, Clone)]
pub struct PoolTape {
    input_shape: Shape4,
    argmax: Vec<u8>,
}

/// 2x2 max pooling with stride 2. Ties go to the first element in row-major
/// window order.
pub fn maxpool2x2<T: Scalar>(x: &Grid4<T>) -> Result<(Grid4<T>, PoolTape)> {
    let (b, c, h, w) = x.shape();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::ShapeMismatch(format!("max pool needs even spatial dims, got {h}x{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Grid4::zeros((b, c, oh, ow))?;
    let mut argmax = Vec::with_capacity(out.len());
    for bi in 0..b {
        for ci in 0..c {
            let src = x.plane_slice(bi, ci);
            let dst = out.plane_slice_mut(bi, ci);
            for y in 0..oh {
                for xx in 0..ow {
                    let base = 2 * y * w + 2 * xx;
                    let window = [src[base], src[base + 1], src[base + w], src[base + w + 1]];
                    let mut best = 0u8;
                    for (i, &v) in window.iter().enumerate().skip(1) {
                        if v > window[best as usize] {
                            best = i as u8;
                        }
                    }
                    dst[y * ow + xx] = window[best as usize];
                    argmax.push(best);
                }
            }
        }
    }
    Ok((out, PoolTape { input_shape: x.shape(), argmax }))
}

pub fn maxpool2x2_backward<T: Scalar>(tape: &PoolTape, grad_out: &Grid4<T>) -> Result<Grid4<T>> {
    let (b, c, h, w) = tape.input_shape;
    if grad_out.shape() != (b, c, h / 2, w / 2) {
        return Err(Error::ShapeMismatch(format!("pool grad_out {:?} for input {:?}", grad_out.shape(), tape.input_shape)));
    }
    let mut grad_x = Grid4::zeros(tape.input_shape)?;
    let ow = w / 2;
    for (i, (&g, &arg)) in grad_out.data().iter().zip(&tape.argmax).enumerate() {
        let plane = i / (ow * (h / 2));
        let rem = i % (ow * (h / 2));
        let (y, xx) = (rem / ow, rem % ow);
        let (dy, dx) = ((arg / 2) as usize, (arg % 2) as usize);
        grad_x.data_mut()[plane * h * w + (2 * y + dy) * w + 2 * xx + dx] += g;
    }
    Ok(grad_x)
}
