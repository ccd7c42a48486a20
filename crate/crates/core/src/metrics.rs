//! Overlap metrics for binary segmentation masks.
//!
//! Both metrics define the overlap of two empty masks as 1.0. `mean_iou` is
//! the arithmetic mean of per-image set IoU, not a confusion-matrix running
//! mean.

use crate::error::{Error, Result};
use crate::grid::{Grid4, Plane};
use crate::scalar::Scalar;

/// Default probability threshold for turning predictions into masks.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Strictly binary `height x width` mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::InvalidShape(format!(
                "{height}x{width} mask with {} pixels",
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self { height, width, data: vec![false; height * width] }
    }

    /// Pixels with value `>= threshold` are foreground.
    pub fn from_threshold<T: Scalar>(values: &[T], height: usize, width: usize, threshold: f64) -> Result<Self> {
        let t = T::lit(threshold);
        Self::new(height, width, values.iter().map(|&v| v >= t).collect())
    }

    pub fn from_plane<T: Scalar>(plane: &Plane<T>, threshold: f64) -> Result<Self> {
        Self::from_threshold(&plane.data, plane.height, plane.width, threshold)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    /// 0/1 plane.
    pub fn to_plane<T: Scalar>(&self) -> Plane<T> {
        Plane {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| if v { T::one() } else { T::zero() }).collect(),
        }
    }

    fn overlap(&self, other: &BinaryMask) -> Result<(usize, usize, usize)> {
        if (self.height, self.width) != (other.height, other.width) {
            return Err(Error::ShapeMismatch(format!(
                "masks {}x{} and {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        let mut inter = 0;
        let (mut na, mut nb) = (0, 0);
        for (&a, &b) in self.data.iter().zip(&other.data) {
            inter += (a && b) as usize;
            na += a as usize;
            nb += b as usize;
        }
        Ok((inter, na, nb))
    }
}

/// Intersection over union (Jaccard index).
pub fn iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    let (inter, na, nb) = a.overlap(b)?;
    let union = na + nb - inter;
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Sorensen-Dice coefficient `2|A n B| / (|A| + |B|)`.
pub fn dice_coefficient(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    let (inter, na, nb) = a.overlap(b)?;
    Ok(if na + nb == 0 { 1.0 } else { 2.0 * inter as f64 / (na + nb) as f64 })
}

/// Thresholds every `(image, channel 0)` plane of `pred` and `targets`.
fn mask_pairs<T: Scalar>(pred: &Grid4<T>, targets: &Grid4<T>, threshold: f64) -> Result<Vec<(BinaryMask, BinaryMask)>> {
    if pred.shape() != targets.shape() {
        return Err(Error::ShapeMismatch(format!("pred {:?} vs targets {:?}", pred.shape(), targets.shape())));
    }
    let (b, c, h, w) = pred.shape();
    let mut pairs = Vec::with_capacity(b * c);
    for bi in 0..b {
        for ci in 0..c {
            pairs.push((
                BinaryMask::from_threshold(pred.plane_slice(bi, ci), h, w, threshold)?,
                BinaryMask::from_threshold(targets.plane_slice(bi, ci), h, w, DEFAULT_THRESHOLD)?,
            ));
        }
    }
    Ok(pairs)
}

/// Per-image IoU values at `threshold` (targets are binarized at 0.5).
pub fn per_image_iou<T: Scalar>(pred: &Grid4<T>, targets: &Grid4<T>, threshold: f64) -> Result<Vec<f64>> {
    mask_pairs(pred, targets, threshold)?.iter().map(|(p, t)| iou(p, t)).collect()
}

pub fn per_image_dice<T: Scalar>(pred: &Grid4<T>, targets: &Grid4<T>, threshold: f64) -> Result<Vec<f64>> {
    mask_pairs(pred, targets, threshold)?.iter().map(|(p, t)| dice_coefficient(p, t)).collect()
}

/// Mean of per-image IoU across the batch.
pub fn mean_iou<T: Scalar>(pred: &Grid4<T>, targets: &Grid4<T>, threshold: f64) -> Result<f64> {
    let v = per_image_iou(pred, targets, threshold)?;
    Ok(v.iter().sum::<f64>() / v.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(h: usize, w: usize, on: &[(usize, usize)]) -> BinaryMask {
        let mut m = BinaryMask::empty(h, w);
        for &(y, x) in on {
            m.set(y, x, true);
        }
        m
    }

    #[test]
    fn worked_examples() {
        let a = mask(4, 4, &[(0, 0), (0, 1), (1, 0), (1, 1)]);
        let b = mask(4, 4, &[(0, 1), (1, 1), (0, 2), (1, 2)]);
        assert_eq!(iou(&a, &b).unwrap(), 2.0 / 6.0);
        assert_eq!(dice_coefficient(&a, &b).unwrap(), 0.5);

        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        assert_eq!(dice_coefficient(&a, &a).unwrap(), 1.0);
        let c = mask(4, 4, &[(3, 3)]);
        assert_eq!(iou(&a, &c).unwrap(), 0.0);
        assert_eq!(dice_coefficient(&a, &c).unwrap(), 0.0);
    }

    #[test]
    fn empty_pair_is_one() {
        let e = BinaryMask::empty(3, 3);
        assert_eq!(iou(&e, &e).unwrap(), 1.0);
        assert_eq!(dice_coefficient(&e, &e).unwrap(), 1.0);
    }

    #[test]
    fn shape_mismatch() {
        assert!(iou(&BinaryMask::empty(2, 3), &BinaryMask::empty(3, 2)).is_err());
        let p = Grid4::new((1, 1, 2, 2), 0.0f32).unwrap();
        let t = Grid4::new((2, 1, 2, 2), 0.0f32).unwrap();
        assert!(mean_iou(&p, &t, 0.5).is_err());
    }

    #[test]
    fn mean_iou_examples() {
        let target = Grid4::from_vec((2, 1, 2, 2), vec![1.0f32, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(mean_iou(&target, &target, 0.5).unwrap(), 1.0);

        // Image 0 perfect, image 1 disjoint.
        let pred = Grid4::from_vec((2, 1, 2, 2), vec![0.9f32, 0.1, 0.2, 0.8, 0.0, 0.0, 0.7, 0.6]).unwrap();
        assert_eq!(mean_iou(&pred, &target, 0.5).unwrap(), 0.5);

        // The 2/6 pair repeated three times.
        let a = mask(4, 4, &[(0, 0), (0, 1), (1, 0), (1, 1)]).to_plane::<f64>();
        let b = mask(4, 4, &[(0, 1), (1, 1), (0, 2), (1, 2)]).to_plane::<f64>();
        let pred = Grid4::from_vec((3, 1, 4, 4), [a.data.clone(), a.data.clone(), a.data].concat()).unwrap();
        let tgt = Grid4::from_vec((3, 1, 4, 4), [b.data.clone(), b.data.clone(), b.data].concat()).unwrap();
        assert!((mean_iou(&pred, &tgt, 0.5).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }
}
