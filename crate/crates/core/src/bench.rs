//! Timing harness: FFT versus direct convolution, and U-Net training steps
//! with and without the FFT input block.
//!
//! Every timed path is checked against its reference before any sample is
//! recorded. Timings are medians over warm repetitions on a monotonic clock.

use std::fmt::Write as _;
use std::time::Instant;

use crate::data::{generate, to_batch, Sample, SyntheticSpec};
use crate::error::{Error, Result};
use crate::fft::{direct_conv2d, fft_conv2d};
use crate::grid::Plane;
use crate::rng::{stream, Rng};
use crate::training::{adam_step, dice_loss, AdamConfig, AdamState};
use crate::unet::{UNetConfig, UNetModel};

pub const BENCH_HEADER: &str = "scenario,image_size,kernel_size,variant,reps,median_ms,iqr_ms";
pub const MIN_REPS: usize = 5;
pub const WARMUP_RUNS: usize = 2;
/// Agreement required between FFT and direct outputs before timing.
pub const CONV_CHECK_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRecord {
    pub scenario: String,
    pub image_size: usize,
    /// 0 for whole-network scenarios.
    pub kernel_size: usize,
    pub variant: String,
    pub reps: usize,
    pub median_ms: f64,
    pub iqr_ms: f64,
}

impl BenchRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{:.4},{:.4}",
            self.scenario, self.image_size, self.kernel_size, self.variant, self.reps, self.median_ms, self.iqr_ms
        )
    }
}

pub fn format_bench_csv(records: &[BenchRecord]) -> String {
    let mut out = String::from(BENCH_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(out, "{}", r.csv_row());
    }
    out
}

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Median and interquartile range.
pub fn median_iqr(samples: &[f64]) -> (f64, f64) {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    (quantile(&s, 0.5), quantile(&s, 0.75) - quantile(&s, 0.25))
}

/// Runs `f` `WARMUP_RUNS` times untimed, then `reps` times timed (ms).
fn time_runs(reps: usize, mut f: impl FnMut() -> Result<()>) -> Result<Vec<f64>> {
    for _ in 0..WARMUP_RUNS {
        f()?;
    }
    (0..reps)
        .map(|_| {
            let start = Instant::now();
            f()?;
            Ok(start.elapsed().as_secs_f64() * 1e3)
        })
        .collect()
}

fn check_reps(reps: usize) -> Result<()> {
    if reps < MIN_REPS {
        return Err(Error::InvalidArgument(format!("at least {MIN_REPS} repetitions required, got {reps}")));
    }
    Ok(())
}

/// Times `fft_conv2d` against `direct_conv2d` on identical random
/// `size x size` images and `k x k` kernels, one record per
/// (size, kernel, variant), in request order.
///
/// Repetitions are interleaved: each round times every (kernel, variant) once,
/// so slow drift in machine speed spreads evenly over kernel sizes.
pub fn bench_conv(sizes: &[usize], kernels: &[usize], reps: usize) -> Result<Vec<BenchRecord>> {
    check_reps(reps)?;
    if let Some(&s) = sizes.iter().find(|s| !s.is_power_of_two()) {
        return Err(Error::UnsupportedLength(s));
    }
    if kernels.contains(&0) {
        return Err(Error::InvalidArgument("kernel size must be >= 1".into()));
    }
    let mut rng = Rng::derive(0, stream::BENCH);
    let mut records = Vec::with_capacity(2 * sizes.len() * kernels.len());
    for &size in sizes {
        let img = Plane::from_vec(size, size, (0..size * size).map(|_| rng.next_f64()).collect())?;
        let mut cases = Vec::with_capacity(kernels.len());
        for &k in kernels {
            let kernel = Plane::from_vec(k, k, (0..k * k).map(|_| rng.uniform_range(-1.0, 1.0)).collect())?;
            let a = fft_conv2d(&img, &kernel)?;
            let b = direct_conv2d(&img, &kernel)?;
            let err = a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            if err > CONV_CHECK_TOLERANCE {
                return Err(Error::InvalidArgument(format!(
                    "fft and direct convolution disagree by {err:e} at size {size}, kernel {k}"
                )));
            }
            cases.push(kernel);
        }

        // times[case][variant] with variant 0 = fft, 1 = direct.
        let mut times = vec![[Vec::with_capacity(reps), Vec::with_capacity(reps)]; cases.len()];
        for round in 0..WARMUP_RUNS + reps {
            for (kernel, slot) in cases.iter().zip(&mut times) {
                for (variant, samples) in slot.iter_mut().enumerate() {
                    let start = Instant::now();
                    let out = if variant == 0 { fft_conv2d(&img, kernel)? } else { direct_conv2d(&img, kernel)? };
                    std::hint::black_box(out);
                    if round >= WARMUP_RUNS {
                        samples.push(start.elapsed().as_secs_f64() * 1e3);
                    }
                }
            }
        }
        for (&k, slot) in kernels.iter().zip(&times) {
            for (variant, samples) in ["fft", "direct"].into_iter().zip(slot) {
                let (median_ms, iqr_ms) = median_iqr(samples);
                records.push(BenchRecord {
                    scenario: "conv".into(),
                    image_size: size,
                    kernel_size: k,
                    variant: variant.into(),
                    reps,
                    median_ms,
                    iqr_ms,
                });
            }
        }
    }
    Ok(records)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainStepBench {
    pub fft: BenchRecord,
    pub plain: BenchRecord,
    /// Median fft-unet step time over median plain-unet step time.
    pub ratio: f64,
    /// Loss of every step, warmups included.
    pub fft_losses: Vec<f64>,
    pub plain_losses: Vec<f64>,
}

/// Times full training steps (forward, loss, backward, Adam) of the FFT and
/// plain variants of `config` on the same synthetic batch.
pub fn bench_train_step(config: &UNetConfig, batch_size: usize, reps: usize) -> Result<TrainStepBench> {
    check_reps(reps)?;
    config.validate()?;
    let spec = SyntheticSpec { image_size: config.input_size, seed: config.seed, ..SyntheticSpec::default() };
    let samples = generate(&spec, batch_size)?;
    let refs: Vec<&Sample> = samples.iter().collect();
    let (x, y) = to_batch(&refs)?;

    let run = |use_fft: bool| -> Result<(BenchRecord, Vec<f64>)> {
        let cfg = UNetConfig { use_fft_input: use_fft, ..config.clone() };
        let mut model: UNetModel<f32> = UNetModel::new(cfg)?;
        let mut state = AdamState::for_model(&model);
        let mut rng = Rng::derive(config.seed, stream::DROPOUT);
        let adam = AdamConfig::default();
        let mut losses = Vec::with_capacity(reps + WARMUP_RUNS);
        let times = time_runs(reps, || {
            let pred = model.forward(&x, true, &mut rng)?;
            let (loss, grad) = dice_loss(&pred, &y)?;
            let grads = model.backward(&grad)?;
            adam_step(&mut model.params_mut(), &grads, &mut state, &adam)?;
            losses.push(loss as f64);
            Ok(())
        })?;
        if let Some(bad) = losses.iter().find(|l| !l.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite loss {bad} during training bench")));
        }
        let (median_ms, iqr_ms) = median_iqr(&times);
        let record = BenchRecord {
            scenario: "train_step".into(),
            image_size: config.input_size,
            kernel_size: 0,
            variant: if use_fft { "fft-unet" } else { "plain-unet" }.into(),
            reps,
            median_ms,
            iqr_ms,
        };
        Ok((record, losses))
    };
    let (fft, fft_losses) = run(true)?;
    let (plain, plain_losses) = run(false)?;
    let ratio = fft.median_ms / plain.median_ms;
    Ok(TrainStepBench { fft, plain, ratio, fft_losses, plain_losses })
}

/// Host description recorded next to timing results.
pub fn machine_metadata() -> String {
    let cpu = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| s.lines().find(|l| l.starts_with("model name")).and_then(|l| l.split_once(':')).map(|(_, v)| v.trim().to_string()))
        .unwrap_or_else(|| "unknown".into());
    let threads = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    format!(
        "os = {}\narch = {}\ncpu = {cpu}\nlogical_cpus = {threads}\nthreads_used = 1\n",
        std::env::consts::OS,
        std::env::consts::ARCH
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_and_iqr() {
        assert_eq!(median_iqr(&[5.0, 1.0, 3.0, 2.0, 4.0]), (3.0, 2.0));
        let (m, q) = median_iqr(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((q - 1.5).abs() < 1e-12);
    }

    #[test]
    fn conv_bench_covers_every_triple() {
        let r = bench_conv(&[16, 32], &[3, 5], 5).unwrap();
        assert_eq!(r.len(), 8);
        for size in [16, 32] {
            for k in [3, 5] {
                for v in ["fft", "direct"] {
                    assert!(r.iter().any(|x| x.image_size == size && x.kernel_size == k && x.variant == v));
                }
            }
        }
        assert!(r.iter().all(|x| x.median_ms >= 0.0 && x.iqr_ms >= 0.0 && x.reps == 5));
    }

    #[test]
    fn bench_arguments_validated() {
        assert!(bench_conv(&[16], &[3], 4).is_err());
        assert!(matches!(bench_conv(&[24], &[3], 5), Err(Error::UnsupportedLength(24))));
    }

    #[test]
    fn csv_layout() {
        let r = BenchRecord {
            scenario: "conv".into(),
            image_size: 256,
            kernel_size: 7,
            variant: "fft".into(),
            reps: 5,
            median_ms: 1.5,
            iqr_ms: 0.25,
        };
        assert_eq!(format_bench_csv(&[r]), format!("{BENCH_HEADER}\nconv,256,7,fft,5,1.5000,0.2500\n"));
    }
}
