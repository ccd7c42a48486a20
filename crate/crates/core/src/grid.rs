//! Dense arrays: rank-4 feature maps, single 2D planes and complex spectra.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `(batch, channels, height, width)`.
pub type Shape4 = (usize, usize, usize, usize);

/// Rank-4 real array in NCHW order.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid4<T> {
    shape: Shape4,
    data: Vec<T>,
}

fn check_shape(shape: Shape4) -> Result<usize> {
    let (b, c, h, w) = shape;
    if b == 0 || c == 0 || h == 0 || w == 0 {
        return Err(Error::InvalidShape(format!("{shape:?}: every dimension must be >= 1")));
    }
    Ok(b * c * h * w)
}

impl<T: Scalar> Grid4<T> {
    pub fn new(shape: Shape4, fill: T) -> Result<Self> {
        let len = check_shape(shape)?;
        Ok(Self { shape, data: vec![fill; len] })
    }

    pub fn zeros(shape: Shape4) -> Result<Self> {
        Self::new(shape, T::zero())
    }

    pub fn from_vec(shape: Shape4, data: Vec<T>) -> Result<Self> {
        let len = check_shape(shape)?;
        if data.len() != len {
            return Err(Error::InvalidShape(format!(
                "{shape:?} needs {len} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    /// Same shape, every element mapped through `f`.
    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { shape: self.shape, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zeros_like(&self) -> Self {
        Self { shape: self.shape, data: vec![T::zero(); self.data.len()] }
    }

    /// Converts element type, e.g. `f64` gradients down to `f32`.
    pub fn cast<U: Scalar>(&self) -> Grid4<U> {
        Grid4 { shape: self.shape, data: self.data.iter().map(|v| U::lit(v.to_f64().unwrap())).collect() }
    }

    /// Stacks single images `(1, c, h, w)` along the batch axis.
    pub fn stack(items: &[&Grid4<T>]) -> Result<Self> {
        let first = items.first().ok_or_else(|| Error::InvalidShape("empty stack".into()))?;
        let (_, c, h, w) = first.shape;
        let mut data = Vec::with_capacity(items.len() * c * h * w);
        for g in items {
            if (g.shape.1, g.shape.2, g.shape.3) != (c, h, w) {
                return Err(Error::ShapeMismatch(format!("stack {:?} vs {:?}", g.shape, first.shape)));
            }
            data.extend_from_slice(&g.data);
        }
        Self::from_vec((data.len() / (c * h * w), c, h, w), data)
    }

    /// Copy of image `b` as a `(1, c, h, w)` grid.
    pub fn image(&self, b: usize) -> Self {
        let (_, c, h, w) = self.shape;
        let n = c * h * w;
        Self { shape: (1, c, h, w), data: self.data[b * n..(b + 1) * n].to_vec() }
    }

    pub fn plane(&self, b: usize, c: usize) -> Plane<T> {
        let (_, _, h, w) = self.shape;
        Plane { height: h, width: w, data: self.plane_slice(b, c).to_vec() }
    }
}

impl<T: Copy> Grid4<T> {
    pub fn shape(&self) -> Shape4 {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape.0
    }

    pub fn channels(&self) -> usize {
        self.shape.1
    }

    pub fn height(&self) -> usize {
        self.shape.2
    }

    pub fn width(&self) -> usize {
        self.shape.3
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn index(&self, b: usize, c: usize, y: usize, x: usize) -> usize {
        let (_, ch, h, w) = self.shape;
        ((b * ch + c) * h + y) * w + x
    }

    #[inline]
    pub fn get(&self, b: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.index(b, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, b: usize, c: usize, y: usize, x: usize, v: T) {
        let i = self.index(b, c, y, x);
        self.data[i] = v;
    }

    pub fn plane_slice(&self, b: usize, c: usize) -> &[T] {
        let (_, _, h, w) = self.shape;
        let start = self.index(b, c, 0, 0);
        &self.data[start..start + h * w]
    }

    pub fn plane_slice_mut(&mut self, b: usize, c: usize) -> &mut [T] {
        let (_, _, h, w) = self.shape;
        let start = self.index(b, c, 0, 0);
        &mut self.data[start..start + h * w]
    }

    /// All channels of image `b`, contiguous.
    pub fn image_slice(&self, b: usize) -> &[T] {
        let (_, c, h, w) = self.shape;
        &self.data[b * c * h * w..(b + 1) * c * h * w]
    }

    pub fn image_slice_mut(&mut self, b: usize) -> &mut [T] {
        let (_, c, h, w) = self.shape;
        &mut self.data[b * c * h * w..(b + 1) * c * h * w]
    }
}

/// A single real 2D array, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane<T> {
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Plane<T> {
    pub fn new(height: usize, width: usize, fill: T) -> Self {
        Self { height, width, data: vec![fill; height * width] }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::InvalidShape(format!(
                "{height}x{width} plane needs {} elements, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self { height, width, data }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> T {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: T) {
        self.data[y * self.width + x] = v;
    }

    /// Wraps the plane as a `(1, 1, h, w)` grid.
    pub fn into_grid(self) -> Result<Grid4<T>> {
        Grid4::from_vec((1, 1, self.height, self.width), self.data)
    }
}

/// Frequency-domain array stored as separate real and imaginary planes.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexGrid<T> {
    pub height: usize,
    pub width: usize,
    pub re: Vec<T>,
    pub im: Vec<T>,
}

impl<T: Scalar> ComplexGrid<T> {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self { height, width, re: vec![T::zero(); height * width], im: vec![T::zero(); height * width] }
    }

    pub fn from_parts(height: usize, width: usize, re: Vec<T>, im: Vec<T>) -> Result<Self> {
        if re.len() != height * width || im.len() != height * width {
            return Err(Error::InvalidShape(format!(
                "complex {height}x{width} grid with planes of {} and {} elements",
                re.len(),
                im.len()
            )));
        }
        Ok(Self { height, width, re, im })
    }

    /// Real image with zero imaginary part.
    pub fn from_real(plane: &Plane<T>) -> Self {
        Self {
            height: plane.height,
            width: plane.width,
            re: plane.data.clone(),
            im: vec![T::zero(); plane.data.len()],
        }
    }

    pub fn real_part(&self) -> Plane<T> {
        Plane { height: self.height, width: self.width, data: self.re.clone() }
    }
}

/// Corner-aligned bilinear resize.
///
/// Target index `i` samples source position `i * (src - 1) / (dst - 1)`; a
/// target extent of 1 samples index 0.
pub fn resize_bilinear<T: Scalar>(img: &Grid4<T>, out_h: usize, out_w: usize) -> Result<Grid4<T>> {
    let (b, c, h, w) = img.shape();
    if (out_h, out_w) == (h, w) {
        return Ok(img.clone());
    }
    let mut out = Grid4::zeros((b, c, out_h, out_w))?;
    let ys = sample_positions::<T>(h, out_h);
    let xs = sample_positions::<T>(w, out_w);
    for bi in 0..b {
        for ci in 0..c {
            let src = img.plane_slice(bi, ci);
            let dst = out.plane_slice_mut(bi, ci);
            for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
                for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                    let top = src[y0 * w + x0] * (T::one() - fx) + src[y0 * w + x1] * fx;
                    let bottom = src[y1 * w + x0] * (T::one() - fx) + src[y1 * w + x1] * fx;
                    dst[oy * out_w + ox] = top * (T::one() - fy) + bottom * fy;
                }
            }
        }
    }
    Ok(out)
}

fn sample_positions<T: Scalar>(src: usize, dst: usize) -> Vec<(usize, usize, T)> {
    (0..dst)
        .map(|i| {
            if dst == 1 || src == 1 {
                return (0, 0, T::zero());
            }
            let pos = i as f64 * (src - 1) as f64 / (dst - 1) as f64;
            let i0 = (pos.floor() as usize).min(src - 1);
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, T::lit(pos - i0 as f64))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_new_fills() {
        let g = Grid4::<f32>::new((1, 1, 2, 2), 0.0).unwrap();
        assert_eq!(g.data(), &[0.0; 4]);
        let g = Grid4::<f32>::new((2, 3, 4, 4), 1.0).unwrap();
        assert_eq!(g.len(), 96);
        assert!(g.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn zero_dimension_rejected() {
        assert!(matches!(Grid4::<f32>::new((1, 0, 2, 2), 0.0), Err(Error::InvalidShape(_))));
        assert!(Grid4::<f32>::from_vec((1, 1, 2, 2), vec![0.0; 3]).is_err());
    }

    #[test]
    fn resize_identity_and_constant() {
        let g = Grid4::from_vec((1, 2, 3, 5), (0..30).map(|v| v as f64).collect()).unwrap();
        assert_eq!(resize_bilinear(&g, 3, 5).unwrap(), g);

        let c = Grid4::new((2, 1, 7, 5), 0.25f64).unwrap();
        for (h, w) in [(1, 1), (3, 9), (16, 2)] {
            let r = resize_bilinear(&c, h, w).unwrap();
            assert!(r.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
        }
    }

    #[test]
    fn resize_ramp_matches_hand_interpolation() {
        // 4x4 ramp v(y, x) = 4y + x. Corner-aligned 4 -> 2 samples rows/cols {0, 3}.
        let g = Grid4::from_vec((1, 1, 4, 4), (0..16).map(|v| v as f64).collect()).unwrap();
        let r = resize_bilinear(&g, 2, 2).unwrap();
        assert_eq!(r.data(), &[0.0, 3.0, 12.0, 15.0]);

        // 4 -> 3 samples positions {0, 1.5, 3}; value at (1.5, 1.5) = 4*1.5 + 1.5.
        let r = resize_bilinear(&g, 3, 3).unwrap();
        let oracle = |y: f64, x: f64| 4.0 * y + x;
        let pos = [0.0, 1.5, 3.0];
        for (oy, &py) in pos.iter().enumerate() {
            for (ox, &px) in pos.iter().enumerate() {
                assert!((r.get(0, 0, oy, ox) - oracle(py, px)).abs() < 1e-12);
            }
        }
    }
}
