//! Soft-DICE loss, Adam, and the epoch loop.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::grid::Grid4;
use crate::metrics::{mean_iou, DEFAULT_THRESHOLD};
use crate::rng::{stream, Rng};
use crate::scalar::Scalar;
use crate::unet::{ParamGrads, UNetModel};

/// Smoothing term of the soft-DICE loss.
pub const DICE_EPSILON: f64 = 1e-6;

/// Header of the per-epoch CSV.
pub const REPORT_HEADER: &str = "epoch,train_loss,val_loss,val_mean_iou,ms_per_step";

/// Negative soft-DICE over the whole batch and its gradient w.r.t. `pred`.
///
/// `L = -(2 S + e) / (P + G + e)` with `S = sum p g`, `P = sum p`, `G = sum g`.
pub fn dice_loss<T: Scalar>(pred: &Grid4<T>, target: &Grid4<T>) -> Result<(T, Grid4<T>)> {
    if pred.shape() != target.shape() {
        return Err(Error::ShapeMismatch(format!("pred {:?} vs target {:?}", pred.shape(), target.shape())));
    }
    let (mut s, mut p, mut g) = (0.0f64, 0.0f64, 0.0f64);
    for (&a, &b) in pred.data().iter().zip(target.data()) {
        let (a, b) = (a.to_f64().unwrap_or(0.0), b.to_f64().unwrap_or(0.0));
        s += a * b;
        p += a;
        g += b;
    }
    let num = 2.0 * s + DICE_EPSILON;
    let den = p + g + DICE_EPSILON;
    let loss = -num / den;
    let den2 = den * den;
    let mut grad = pred.zeros_like();
    for (d, &b) in grad.data_mut().iter_mut().zip(target.data()) {
        let b = b.to_f64().unwrap_or(0.0);
        *d = T::lit(-(2.0 * b * den - num) / den2);
    }
    Ok((T::lit(loss), grad))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-4, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// First and second moments per parameter tensor, plus the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(lengths: impl IntoIterator<Item = usize>) -> Self {
        let (m, v) = lengths.into_iter().map(|n| (vec![T::zero(); n], vec![T::zero(); n])).unzip();
        Self { step: 0, m, v }
    }

    pub fn for_model(model: &UNetModel<T>) -> Self {
        Self::new(model.params().iter().map(|p| p.len()))
    }
}

/// One bias-corrected Adam update of every tensor in `params`.
pub fn adam_step<T: Scalar>(
    params: &mut [&mut [T]],
    grads: &ParamGrads<T>,
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
) -> Result<()> {
    let aligned = params.len() == grads.tensors.len()
        && params.len() == state.m.len()
        && params.iter().zip(&grads.tensors).zip(&state.m).all(|((p, g), m)| p.len() == g.len() && p.len() == m.len());
    if !aligned {
        return Err(Error::ShapeMismatch("parameter, gradient and optimizer registries disagree".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let (ob1, ob2) = (T::lit(1.0 - cfg.beta1), T::lit(1.0 - cfg.beta2));
    // lr * m_hat / (sqrt(v_hat) + eps) with the corrections folded in.
    let step = T::lit(cfg.learning_rate / c1);
    let inv_sqrt_c2 = T::lit(1.0 / c2.sqrt());
    let eps = T::lit(cfg.epsilon);
    for (((p, g), m), v) in params.iter_mut().zip(&grads.tensors).zip(&mut state.m).zip(&mut state.v) {
        for i in 0..p.len() {
            let gi = g[i];
            m[i] = b1 * m[i] + ob1 * gi;
            v[i] = b2 * v[i] + ob2 * gi * gi;
            p[i] -= step * m[i] / (v[i].sqrt() * inv_sqrt_c2 + eps);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 30, batch_size: 8, adam: AdamConfig::default(), seed: 42, validation_fraction: 0.2 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument("epochs and batch_size must be >= 1".into()));
        }
        if self.adam.learning_rate.is_nan() || self.adam.learning_rate <= 0.0 {
            return Err(Error::InvalidArgument(format!("learning rate {} must be positive", self.adam.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::InvalidArgument(format!(
                "validation fraction {} outside [0, 1)",
                self.validation_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochReport {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    /// NaN when the validation split is empty.
    pub val_loss: f64,
    pub val_mean_iou: f64,
    pub ms_per_step: f64,
}

impl EpochReport {
    /// CSV row; floats use the shortest exact representation.
    pub fn csv_row(&self) -> String {
        format!("{},{},{},{},{:.3}", self.epoch, self.train_loss, self.val_loss, self.val_mean_iou, self.ms_per_step)
    }
}

pub fn format_reports_csv(reports: &[EpochReport]) -> String {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for r in reports {
        let _ = writeln!(out, "{}", r.csv_row());
    }
    out
}

pub fn write_reports_csv(path: impl AsRef<Path>, reports: &[EpochReport]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_reports_csv(reports)).map_err(|e| Error::io(path, e))
}

/// Images `(n, 1, S, S)` paired with binary masks of the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub images: Grid4<T>,
    pub masks: Grid4<T>,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(images: Grid4<T>, masks: Grid4<T>) -> Result<Self> {
        if images.shape() != masks.shape() {
            return Err(Error::ShapeMismatch(format!("images {:?} vs masks {:?}", images.shape(), masks.shape())));
        }
        Ok(Self { images, masks })
    }

    pub fn len(&self) -> usize {
        self.images.batch()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        Ok(Self { images: gather(&self.images, indices)?, masks: gather(&self.masks, indices)? })
    }
}

/// Copies the listed images of `grid` into a new batch, in order.
pub fn gather<T: Scalar>(grid: &Grid4<T>, indices: &[usize]) -> Result<Grid4<T>> {
    let (b, c, h, w) = grid.shape();
    let mut data = Vec::with_capacity(indices.len() * c * h * w);
    for &i in indices {
        if i >= b {
            return Err(Error::InvalidArgument(format!("image index {i} out of range for batch {b}")));
        }
        data.extend_from_slice(grid.image_slice(i));
    }
    Grid4::from_vec((indices.len(), c, h, w), data)
}

/// Train/validation sizes for `n` samples: `floor(n * fraction)` held out.
pub fn split_sizes(n: usize, validation_fraction: f64) -> (usize, usize) {
    let val = (n as f64 * validation_fraction).floor() as usize;
    (n - val, val)
}

const PREDICT_CHUNK: usize = 16;

/// Inference-mode probabilities for every image, computed in chunks.
pub fn predict<T: Scalar>(model: &UNetModel<T>, images: &Grid4<T>) -> Result<Grid4<T>> {
    let n = images.batch();
    if n <= PREDICT_CHUNK {
        return model.predict(images);
    }
    let (_, c, h, w) = images.shape();
    let mut data = Vec::with_capacity(images.len());
    let idx: Vec<usize> = (0..n).collect();
    for chunk in idx.chunks(PREDICT_CHUNK) {
        data.extend(model.predict(&gather(images, chunk)?)?.into_vec());
    }
    Grid4::from_vec((n, c, h, w), data)
}

/// Validation loss and per-image mean IoU of `model` on `data`.
pub fn evaluate<T: Scalar>(model: &UNetModel<T>, data: &Dataset<T>) -> Result<(f64, f64)> {
    let pred = predict(model, &data.images)?;
    let (loss, _) = dice_loss(&pred, &data.masks)?;
    Ok((loss.to_f64().unwrap_or(f64::NAN), mean_iou(&pred, &data.masks, DEFAULT_THRESHOLD)?))
}

/// Trains `model` in place. See [`train_with`].
pub fn train<T: Scalar>(model: &mut UNetModel<T>, data: &Dataset<T>, cfg: &TrainConfig) -> Result<Vec<EpochReport>> {
    train_with(model, data, cfg, |_| {})
}

/// Holds out a seeded `validation_fraction` of `data`, then runs `cfg.epochs`
/// epochs of shuffled mini-batch Adam on the rest, calling `on_epoch` after
/// each epoch's validation pass.
pub fn train_with<T: Scalar>(
    model: &mut UNetModel<T>,
    data: &Dataset<T>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochReport),
) -> Result<Vec<EpochReport>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    Rng::derive(cfg.seed, stream::SPLIT).shuffle(&mut order);
    let (n_train, _) = split_sizes(data.len(), cfg.validation_fraction);
    let (train_idx, val_idx) = order.split_at(n_train);
    if cfg.batch_size > train_idx.len() {
        return Err(Error::InvalidArgument(format!(
            "batch size {} larger than the {} training samples",
            cfg.batch_size,
            train_idx.len()
        )));
    }
    let train_set = data.subset(train_idx)?;
    let val_set = if val_idx.is_empty() { None } else { Some(data.subset(val_idx)?) };

    let mut shuffle_rng = Rng::derive(cfg.seed, stream::SHUFFLE);
    let mut dropout_rng = Rng::derive(cfg.seed, stream::DROPOUT);
    let mut state = AdamState::for_model(model);
    let mut reports = Vec::with_capacity(cfg.epochs);
    let mut batch_order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=cfg.epochs {
        shuffle_rng.shuffle(&mut batch_order);
        let (mut loss_sum, mut steps, mut elapsed) = (0.0f64, 0usize, 0.0f64);
        for batch in batch_order.chunks(cfg.batch_size) {
            let x = gather(&train_set.images, batch)?;
            let y = gather(&train_set.masks, batch)?;
            let start = Instant::now();
            let pred = model.forward(&x, true, &mut dropout_rng)?;
            let (loss, grad) = dice_loss(&pred, &y)?;
            let grads = model.backward(&grad)?;
            adam_step(&mut model.params_mut(), &grads, &mut state, &cfg.adam)?;
            elapsed += start.elapsed().as_secs_f64() * 1e3;
            loss_sum += loss.to_f64().unwrap_or(f64::NAN);
            steps += 1;
        }
        let (val_loss, val_mean_iou) = match &val_set {
            Some(v) => evaluate(model, v)?,
            None => (f64::NAN, f64::NAN),
        };
        let report = EpochReport {
            epoch,
            train_loss: loss_sum / steps as f64,
            val_loss,
            val_mean_iou,
            ms_per_step: elapsed / steps as f64,
        };
        on_epoch(&report);
        reports.push(report);
    }
    model.rng_state = dropout_rng.state();
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dice_loss_limits() {
        let ones = Grid4::new((2, 1, 4, 4), 1.0f64).unwrap();
        let (l, _) = dice_loss(&ones, &ones).unwrap();
        assert!((l + 1.0).abs() < 1e-12);
        let zeros = Grid4::new((2, 1, 4, 4), 1e-9f64).unwrap();
        let (l, _) = dice_loss(&zeros, &ones).unwrap();
        assert!(l.abs() < 1e-6);
        assert!(dice_loss(&ones, &Grid4::new((1, 1, 4, 4), 1.0).unwrap()).is_err());
    }

    #[test]
    fn adam_unit_step() {
        let mut p = vec![0.0f64];
        let g = ParamGrads { tensors: vec![vec![1.0]] };
        let mut st = AdamState::new([1]);
        let cfg = AdamConfig { learning_rate: 0.1, ..AdamConfig::default() };
        adam_step(&mut [p.as_mut_slice()], &g, &mut st, &cfg).unwrap();
        assert!((p[0] + 0.1).abs() < 1e-8);
    }

    #[test]
    fn adam_zero_gradient_is_fixed_point() {
        let mut p = vec![0.5f32, -2.0];
        let g = ParamGrads { tensors: vec![vec![0.0, 0.0]] };
        let mut st = AdamState::new([2]);
        for _ in 0..3 {
            adam_step(&mut [p.as_mut_slice()], &g, &mut st, &AdamConfig::default()).unwrap();
        }
        assert_eq!(p, vec![0.5, -2.0]);
        assert!(st.m[0].iter().chain(&st.v[0]).all(|&v| v == 0.0));
    }

    #[test]
    fn adam_misaligned_rejected() {
        let mut p = vec![0.0f64; 3];
        let g = ParamGrads { tensors: vec![vec![1.0; 2]] };
        let mut st = AdamState::new([3]);
        assert!(adam_step(&mut [p.as_mut_slice()], &g, &mut st, &AdamConfig::default()).is_err());
    }

    #[test]
    fn split_arithmetic() {
        assert_eq!(split_sizes(16, 0.25), (12, 4));
        assert_eq!(split_sizes(200, 0.2), (160, 40));
        assert_eq!(split_sizes(5, 0.0), (5, 0));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { epochs: 0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { validation_fraction: 1.0, ..TrainConfig::default() }.validate().is_err());
        let adam = AdamConfig { learning_rate: 0.0, ..AdamConfig::default() };
        assert!(TrainConfig { adam, ..TrainConfig::default() }.validate().is_err());
    }

    #[test]
    fn csv_format() {
        let r = EpochReport { epoch: 3, train_loss: -0.5, val_loss: -0.25, val_mean_iou: 0.75, ms_per_step: 12.3456 };
        assert_eq!(format_reports_csv(&[r]), format!("{REPORT_HEADER}\n3,-0.5,-0.25,0.75,12.346\n"));
    }
}
