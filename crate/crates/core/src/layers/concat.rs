use crate::error::{Error, Result};
use crate::grid::Grid4;
use crate::scalar::Scalar;

/// Stacks `a` then `b` along the channel axis. Spatial dims must match exactly.
pub fn concat_channels<T: Scalar>(a: &Grid4<T>, b: &Grid4<T>) -> Result<Grid4<T>> {
    let (ba, ca, ha, wa) = a.shape();
    let (bb, cb, hb, wb) = b.shape();
    if (ba, ha, wa) != (bb, hb, wb) {
        return Err(Error::ShapeMismatch(format!("concat {:?} with {:?}", a.shape(), b.shape())));
    }
    let mut data = Vec::with_capacity(a.len() + b.len());
    for i in 0..ba {
        data.extend_from_slice(a.image_slice(i));
        data.extend_from_slice(b.image_slice(i));
    }
    Grid4::from_vec((ba, ca + cb, ha, wa), data)
}

/// Inverse of [`concat_channels`]: first `channels_a` channels, then the rest.
pub fn split_channels<T: Scalar>(g: &Grid4<T>, channels_a: usize) -> Result<(Grid4<T>, Grid4<T>)> {
    let (b, c, h, w) = g.shape();
    if channels_a == 0 || channels_a >= c {
        return Err(Error::ShapeMismatch(format!("cannot split {c} channels at {channels_a}")));
    }
    let na = channels_a * h * w;
    let mut a = Vec::with_capacity(b * na);
    let mut rest = Vec::with_capacity(g.len() - b * na);
    for i in 0..b {
        let img = g.image_slice(i);
        a.extend_from_slice(&img[..na]);
        rest.extend_from_slice(&img[na..]);
    }
    Ok((Grid4::from_vec((b, channels_a, h, w), a)?, Grid4::from_vec((b, c - channels_a, h, w), rest)?))
}
