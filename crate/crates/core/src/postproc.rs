//! Object counting on probability masks: maximum filter, local peak maxima,
//! then DBSCAN over the peaks. The number of clusters is the object count.

use std::collections::VecDeque;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::grid::{resize_bilinear, Plane};
use crate::scalar::Scalar;

/// Peak coordinates `(row, col)`; unique and inside the source image.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PointSet {
    pub points: Vec<(usize, usize)>,
}

impl PointSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Cluster id per point (`None` marks noise). Ids are `0..cluster_count`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterLabeling {
    pub labels: Vec<Option<usize>>,
    pub cluster_count: usize,
}

/// Square maximum filter with replicated (clamped) borders.
pub fn max_filter<T: Scalar>(img: &Plane<T>, window: usize) -> Result<Plane<T>> {
    if window == 0 || window.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!("max filter window must be odd, got {window}")));
    }
    let r = window / 2;
    let (h, w) = (img.height, img.width);
    // Separable: rows, then columns.
    let mut rows = Plane::new(h, w, T::zero());
    for y in 0..h {
        let src = &img.data[y * w..(y + 1) * w];
        for x in 0..w {
            let lo = x.saturating_sub(r);
            let hi = (x + r).min(w - 1);
            rows.data[y * w + x] = src[lo..=hi].iter().copied().fold(T::neg_infinity(), T::max);
        }
    }
    let mut out = Plane::new(h, w, T::zero());
    for y in 0..h {
        let lo = y.saturating_sub(r);
        let hi = (y + r).min(h - 1);
        for x in 0..w {
            out.data[y * w + x] = (lo..=hi).map(|yy| rows.data[yy * w + x]).fold(T::neg_infinity(), T::max);
        }
    }
    Ok(out)
}

/// Pixels equal to their `(2 * min_distance + 1)` windowed maximum and strictly
/// above `abs_threshold`, thinned so that kept peaks are at least
/// `min_distance` apart (Chebyshev). Brighter peaks win; ties go to the smaller
/// row, then the smaller column.
pub fn local_maxima<T: Scalar>(img: &Plane<T>, min_distance: usize, abs_threshold: f64) -> Result<PointSet> {
    let filtered = max_filter(img, 2 * min_distance + 1)?;
    peaks_from_filtered(img, &filtered, min_distance, abs_threshold)
}

/// [`local_maxima`] with a precomputed maximum filter of `img`.
pub fn peaks_from_filtered<T: Scalar>(
    img: &Plane<T>,
    filtered: &Plane<T>,
    min_distance: usize,
    abs_threshold: f64,
) -> Result<PointSet> {
    if min_distance == 0 {
        return Err(Error::InvalidArgument("min_distance must be >= 1".into()));
    }
    if (filtered.height, filtered.width) != (img.height, img.width) {
        return Err(Error::ShapeMismatch("filtered image differs in size from the source".into()));
    }
    let threshold = T::lit(abs_threshold);
    let (h, w) = (img.height, img.width);
    let mut candidates: Vec<(usize, usize)> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (y, x)))
        .filter(|&(y, x)| {
            let v = img.get(y, x);
            v > threshold && v == filtered.get(y, x)
        })
        .collect();
    candidates.sort_by(|a, b| {
        img.get(b.0, b.1)
            .partial_cmp(&img.get(a.0, a.1))
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(b))
    });

    // A kept peak blocks its Chebyshev neighbourhood of radius min_distance - 1.
    let reach = min_distance - 1;
    let mut blocked = vec![false; h * w];
    let mut points = Vec::new();
    for (y, x) in candidates {
        if blocked[y * w + x] {
            continue;
        }
        points.push((y, x));
        for yy in y.saturating_sub(reach)..=(y + reach).min(h - 1) {
            for xx in x.saturating_sub(reach)..=(x + reach).min(w - 1) {
                blocked[yy * w + xx] = true;
            }
        }
    }
    Ok(PointSet { points })
}

fn dist2(a: (usize, usize), b: (usize, usize)) -> f64 {
    let dy = a.0 as f64 - b.0 as f64;
    let dx = a.1 as f64 - b.1 as f64;
    dy * dy + dx * dx
}

/// Density-based clustering under Euclidean distance. A point's neighbourhood
/// includes itself and every point within `eps` (inclusive); points with at
/// least `min_pts` neighbours are core points.
pub fn dbscan(points: &PointSet, eps: f64, min_pts: usize) -> Result<ClusterLabeling> {
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::InvalidArgument(format!("dbscan eps must be > 0, got {eps}")));
    }
    if min_pts == 0 {
        return Err(Error::InvalidArgument("dbscan min_pts must be >= 1".into()));
    }
    let pts = &points.points;
    let n = pts.len();
    let eps2 = eps * eps;
    let neighbours = |i: usize| -> Vec<usize> { (0..n).filter(|&j| dist2(pts[i], pts[j]) <= eps2).collect() };

    let mut labels: Vec<Option<usize>> = vec![None; n];
    let mut visited = vec![false; n];
    let mut cluster_count = 0;
    for i in 0..n {
        if visited[i] {
            continue;
        }
        visited[i] = true;
        let seeds = neighbours(i);
        if seeds.len() < min_pts {
            continue;
        }
        let id = cluster_count;
        cluster_count += 1;
        labels[i] = Some(id);
        let mut queue: VecDeque<usize> = seeds.into();
        while let Some(j) = queue.pop_front() {
            if labels[j].is_none() {
                labels[j] = Some(id);
            }
            if visited[j] {
                continue;
            }
            visited[j] = true;
            let nb = neighbours(j);
            if nb.len() >= min_pts {
                queue.extend(nb.into_iter().filter(|&k| !visited[k] || labels[k].is_none()));
            }
        }
    }
    Ok(ClusterLabeling { labels, cluster_count })
}

/// Parameters of the counting chain. Defaults: `min_distance` 5, threshold
/// 0.5, filter window `2 * min_distance + 1`, eps `2 * min_distance`, min_pts 1.
#[derive(Debug, Clone, PartialEq)]
pub struct CountParams {
    pub min_distance: usize,
    pub abs_threshold: f64,
    pub filter_window: usize,
    pub eps: f64,
    pub min_pts: usize,
    /// Optional `(height, width)` the mask is resized to before filtering.
    pub resize_to: Option<(usize, usize)>,
}

impl Default for CountParams {
    fn default() -> Self {
        Self::with_min_distance(5)
    }
}

impl CountParams {
    pub fn with_min_distance(min_distance: usize) -> Self {
        Self {
            min_distance,
            abs_threshold: 0.5,
            filter_window: 2 * min_distance + 1,
            eps: 2.0 * min_distance as f64,
            min_pts: 1,
            resize_to: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CountResult {
    pub count: usize,
    /// Mean `(row, col)` of each cluster's peaks, in input-mask coordinates.
    pub centroids: Vec<(f64, f64)>,
    pub peaks: PointSet,
    pub labeling: ClusterLabeling,
}

/// Resize (optional), maximum filter, local maxima, DBSCAN.
pub fn count_objects<T: Scalar>(prob_mask: &Plane<T>, params: &CountParams) -> Result<CountResult> {
    let (src_h, src_w) = (prob_mask.height, prob_mask.width);
    let work = match params.resize_to {
        Some((h, w)) if (h, w) != (src_h, src_w) => {
            let g = prob_mask.clone().into_grid()?;
            resize_bilinear(&g, h, w)?.plane(0, 0)
        }
        _ => prob_mask.clone(),
    };
    // The filter marks peaks in the mask itself; dilating first would merge
    // neighbouring objects.
    let filtered = max_filter(&work, params.filter_window)?;
    let peaks = peaks_from_filtered(&work, &filtered, params.min_distance, params.abs_threshold)?;
    let labeling = dbscan(&peaks, params.eps, params.min_pts)?;

    let scale = |src: usize, dst: usize| if dst > 1 { (src - 1) as f64 / (dst - 1) as f64 } else { 0.0 };
    let (sy, sx) = (scale(src_h, work.height), scale(src_w, work.width));
    let mut sums = vec![(0.0, 0.0, 0usize); labeling.cluster_count];
    for (&(y, x), label) in peaks.points.iter().zip(&labeling.labels) {
        if let Some(id) = *label {
            sums[id].0 += y as f64 * sy;
            sums[id].1 += x as f64 * sx;
            sums[id].2 += 1;
        }
    }
    let centroids = sums.into_iter().map(|(y, x, n)| (y / n as f64, x / n as f64)).collect();
    Ok(CountResult { count: labeling.cluster_count, centroids, peaks, labeling })
}

/// Plain-text record of one counting run: the image id, every parameter, the
/// count and the centroid list.
pub fn format_count_record(image_id: &str, params: &CountParams, result: &CountResult) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "image = {image_id}");
    let _ = writeln!(s, "min_distance = {}", params.min_distance);
    let _ = writeln!(s, "abs_threshold = {}", params.abs_threshold);
    let _ = writeln!(s, "filter_window = {}", params.filter_window);
    let _ = writeln!(s, "dbscan_eps = {}", params.eps);
    let _ = writeln!(s, "dbscan_min_pts = {}", params.min_pts);
    match params.resize_to {
        Some((h, w)) => {
            let _ = writeln!(s, "resize_to = {h}x{w}");
        }
        None => {
            let _ = writeln!(s, "resize_to = none");
        }
    }
    let _ = writeln!(s, "peaks = {}", result.peaks.len());
    let _ = writeln!(s, "count = {}", result.count);
    for (y, x) in &result.centroids {
        let _ = writeln!(s, "centroid = {y:.3},{x:.3}");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn gaussian_bump(h: usize, w: usize, centers: &[(f64, f64)], sigma: f64) -> Plane<f64> {
        Plane::from_fn(h, w, |y, x| {
            centers
                .iter()
                .map(|&(cy, cx)| (-((y as f64 - cy).powi(2) + (x as f64 - cx).powi(2)) / (2.0 * sigma * sigma)).exp())
                .fold(0.0, f64::max)
        })
    }

    #[test]
    fn max_filter_basics() {
        let mut rng = Rng::new(5);
        let img = Plane::from_vec(8, 8, (0..64).map(|_| rng.next_f64()).collect()).unwrap();
        assert_eq!(max_filter(&img, 1).unwrap(), img);
        assert!(max_filter(&img, 4).is_err());
        assert!(max_filter(&img, 0).is_err());

        let mut imp = Plane::new(5, 5, 0.0f64);
        imp.set(2, 2, 1.0);
        let f = max_filter(&imp, 3).unwrap();
        for y in 0..5 {
            for x in 0..5 {
                let expect = if (1..=3).contains(&y) && (1..=3).contains(&x) { 1.0 } else { 0.0 };
                assert_eq!(f.get(y, x), expect);
            }
        }

        // Brute force window scan with clamped coordinates.
        let f = max_filter(&img, 5).unwrap();
        for y in 0..8isize {
            for x in 0..8isize {
                let mut m = f64::NEG_INFINITY;
                for dy in -2..=2 {
                    for dx in -2..=2 {
                        let yy = (y + dy).clamp(0, 7) as usize;
                        let xx = (x + dx).clamp(0, 7) as usize;
                        m = m.max(img.get(yy, xx));
                    }
                }
                assert_eq!(f.get(y as usize, x as usize), m);
            }
        }
    }

    #[test]
    fn flat_image_has_no_peaks() {
        let img = Plane::new(10, 10, 0.0f64);
        assert!(local_maxima(&img, 3, 0.0).unwrap().is_empty());
    }

    #[test]
    fn single_bump_gives_argmax() {
        let img = gaussian_bump(32, 32, &[(12.3, 20.6)], 3.0);
        let peaks = local_maxima(&img, 5, 0.1).unwrap();
        assert_eq!(peaks.points, vec![(12, 21)]);
    }

    #[test]
    fn two_bumps_twenty_apart() {
        let img = gaussian_bump(40, 40, &[(10.0, 10.0), (10.0, 30.0)], 2.5);
        let peaks = local_maxima(&img, 5, 0.1).unwrap();
        assert_eq!(peaks.len(), 2);
    }

    #[test]
    fn plateau_peaks_are_spaced() {
        let img = Plane::from_fn(20, 20, |y, x| if (4..16).contains(&y) && (3..15).contains(&x) { 1.0 } else { 0.0 });
        let peaks = local_maxima(&img, 4, 0.5).unwrap();
        assert_eq!(peaks.points[0], (4, 3));
        for (i, a) in peaks.points.iter().enumerate() {
            for b in &peaks.points[i + 1..] {
                let cheb = a.0.abs_diff(b.0).max(a.1.abs_diff(b.1));
                assert!(cheb >= 4);
            }
        }
    }

    #[test]
    fn dbscan_small_cases() {
        let empty = dbscan(&PointSet::default(), 5.0, 1).unwrap();
        assert_eq!(empty.cluster_count, 0);
        let one = dbscan(&PointSet { points: vec![(3, 3)] }, 5.0, 1).unwrap();
        assert_eq!(one.cluster_count, 1);
        assert_eq!(one.labels, vec![Some(0)]);
        assert!(dbscan(&PointSet::default(), 0.0, 1).is_err());
        assert!(dbscan(&PointSet::default(), 1.0, 0).is_err());
    }

    #[test]
    fn dbscan_noise_and_border() {
        // Dense line of 4, plus an isolated point.
        let pts = PointSet { points: vec![(0, 0), (0, 1), (0, 2), (0, 3), (10, 10)] };
        let l = dbscan(&pts, 1.0, 3).unwrap();
        assert_eq!(l.cluster_count, 1);
        assert_eq!(&l.labels[..4], &[Some(0); 4]);
        assert_eq!(l.labels[4], None);
    }

    #[test]
    fn zero_mask_counts_nothing() {
        let r = count_objects(&Plane::new(16, 16, 0.0f32), &CountParams::default()).unwrap();
        assert_eq!(r.count, 0);
        assert!(r.centroids.is_empty());
    }

    #[test]
    fn blobs_counted_and_centroids_mapped_back() {
        let img = gaussian_bump(64, 64, &[(12.0, 12.0), (12.0, 50.0), (50.0, 30.0)], 3.0);
        let params = CountParams { resize_to: Some((128, 128)), abs_threshold: 0.3, ..CountParams::default() };
        let r = count_objects(&img, &params).unwrap();
        assert_eq!(r.count, 3);
        for (y, x) in &r.centroids {
            assert!([(12.0, 12.0), (12.0, 50.0), (50.0, 30.0)]
                .iter()
                .any(|(cy, cx)| (cy - y).abs() < 1.0 && (cx - x).abs() < 1.0));
        }
        let text = format_count_record("img0", &params, &r);
        assert!(text.contains("count = 3"));
        assert!(text.contains("resize_to = 128x128"));
    }
}
