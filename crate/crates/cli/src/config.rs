//! Flat `key = value` run configuration.
//!
//! Every key has a default; unknown or repeated keys are rejected. The
//! effective configuration is rendered back by [`RunConfig::to_text`] in a
//! fixed key order so echoes are byte-stable.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use fftseg::bench::MIN_REPS;
use fftseg::data::SyntheticSpec;
use fftseg::postproc::CountParams;
use fftseg::training::{AdamConfig, TrainConfig};
use fftseg::UNetConfig;

use crate::CliError;

/// Name of the echoed configuration inside output directories.
pub const ECHO_FILE: &str = "config.txt";

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    // Network.
    pub input_size: usize,
    pub base_channels: usize,
    pub depth: usize,
    pub use_fft_input: bool,
    /// Empty means the default schedule for `depth`.
    pub dropout_schedule: Vec<f64>,
    // Training.
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub validation_fraction: f64,
    // Synthetic data.
    pub gen_count: usize,
    pub image_size: usize,
    pub cell_count_min: usize,
    pub cell_count_max: usize,
    pub radius_min: f64,
    pub radius_max: f64,
    pub noise_sigma: f64,
    pub overlap_allowed: bool,
    pub min_gap: f64,
    // Counting.
    pub min_distance: usize,
    pub abs_threshold: f64,
    pub filter_window: usize,
    pub dbscan_eps: f64,
    pub dbscan_min_pts: usize,
    pub resize_to: Option<usize>,
    // Benchmarks.
    pub bench_sizes: Vec<usize>,
    pub bench_kernels: Vec<usize>,
    pub bench_reps: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let unet = UNetConfig::default();
        let train = TrainConfig::default();
        let data = SyntheticSpec::default();
        let count = CountParams::default();
        Self {
            seed: 42,
            input_size: unet.input_size,
            base_channels: unet.base_channels,
            depth: unet.depth,
            use_fft_input: unet.use_fft_input,
            dropout_schedule: Vec::new(),
            epochs: train.epochs,
            batch_size: train.batch_size,
            learning_rate: train.adam.learning_rate,
            beta1: train.adam.beta1,
            beta2: train.adam.beta2,
            adam_epsilon: train.adam.epsilon,
            validation_fraction: train.validation_fraction,
            gen_count: 200,
            image_size: data.image_size,
            cell_count_min: data.cell_count_range.0,
            cell_count_max: data.cell_count_range.1,
            radius_min: data.radius_range.0,
            radius_max: data.radius_range.1,
            noise_sigma: data.noise_sigma,
            overlap_allowed: data.overlap_allowed,
            min_gap: data.min_gap,
            min_distance: count.min_distance,
            abs_threshold: count.abs_threshold,
            filter_window: count.filter_window,
            dbscan_eps: count.eps,
            dbscan_min_pts: count.min_pts,
            resize_to: None,
            bench_sizes: vec![256],
            bench_kernels: vec![3, 5, 7, 9, 11, 13, 15],
            bench_reps: 7,
        }
    }
}

fn scalar<V: std::str::FromStr>(key: &str, value: &str) -> Result<V, CliError> {
    value.parse().map_err(|_| CliError::usage(format!("config key `{key}`: cannot parse {value:?}")))
}

fn flag(key: &str, value: &str) -> Result<bool, CliError> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(CliError::usage(format!("config key `{key}`: expected true or false, got {value:?}"))),
    }
}

fn list<V: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<V>, CliError> {
    value.split(',').map(|v| scalar(key, v.trim())).collect()
}

fn join<V: ToString>(v: &[V]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Parses configuration text on top of the defaults.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        let mut seen = HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::usage(format!("config line {}: expected `key = value`, got {raw:?}", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(CliError::usage(format!("config key `{key}` given twice")));
            }
            cfg.set(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", p.display())))?;
                Self::parse(&text)
            }
        }
    }

    fn set(&mut self, key: &str, v: &str) -> Result<(), CliError> {
        match key {
            "seed" => self.seed = scalar(key, v)?,
            "input_size" => self.input_size = scalar(key, v)?,
            "base_channels" => self.base_channels = scalar(key, v)?,
            "depth" => self.depth = scalar(key, v)?,
            "use_fft_input" => self.use_fft_input = flag(key, v)?,
            "dropout_schedule" => {
                self.dropout_schedule = if v == "default" { Vec::new() } else { list(key, v)? };
            }
            "epochs" => self.epochs = scalar(key, v)?,
            "batch_size" => self.batch_size = scalar(key, v)?,
            "learning_rate" => self.learning_rate = scalar(key, v)?,
            "beta1" => self.beta1 = scalar(key, v)?,
            "beta2" => self.beta2 = scalar(key, v)?,
            "adam_epsilon" => self.adam_epsilon = scalar(key, v)?,
            "validation_fraction" => self.validation_fraction = scalar(key, v)?,
            "gen_count" => self.gen_count = scalar(key, v)?,
            "image_size" => self.image_size = scalar(key, v)?,
            "cell_count_min" => self.cell_count_min = scalar(key, v)?,
            "cell_count_max" => self.cell_count_max = scalar(key, v)?,
            "radius_min" => self.radius_min = scalar(key, v)?,
            "radius_max" => self.radius_max = scalar(key, v)?,
            "noise_sigma" => self.noise_sigma = scalar(key, v)?,
            "overlap_allowed" => self.overlap_allowed = flag(key, v)?,
            "min_gap" => self.min_gap = scalar(key, v)?,
            "min_distance" => self.min_distance = scalar(key, v)?,
            "abs_threshold" => self.abs_threshold = scalar(key, v)?,
            "filter_window" => self.filter_window = scalar(key, v)?,
            "dbscan_eps" => self.dbscan_eps = scalar(key, v)?,
            "dbscan_min_pts" => self.dbscan_min_pts = scalar(key, v)?,
            "resize_to" => self.resize_to = if v == "none" { None } else { Some(scalar(key, v)?) },
            "bench_sizes" => self.bench_sizes = list(key, v)?,
            "bench_kernels" => self.bench_kernels = list(key, v)?,
            "bench_reps" => self.bench_reps = scalar(key, v)?,
            _ => return Err(CliError::usage(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Checks every derived component configuration.
    pub fn validate(&self) -> Result<(), CliError> {
        let invalid = |e: fftseg::Error| CliError::usage(format!("invalid configuration: {e}"));
        self.unet().validate().map_err(invalid)?;
        self.train().validate().map_err(invalid)?;
        self.synthetic().validate().map_err(invalid)?;
        if self.min_distance == 0 || self.filter_window.is_multiple_of(2) || self.dbscan_eps.is_nan() || self.dbscan_eps <= 0.0 || self.dbscan_min_pts == 0 {
            return Err(CliError::usage(
                "invalid configuration: need min_distance >= 1, odd filter_window, dbscan_eps > 0, dbscan_min_pts >= 1",
            ));
        }
        if self.resize_to == Some(0) {
            return Err(CliError::usage("invalid configuration: resize_to must be positive"));
        }
        if self.bench_reps < MIN_REPS {
            return Err(CliError::usage(format!("invalid configuration: bench_reps must be >= {MIN_REPS}")));
        }
        Ok(())
    }

    pub fn unet(&self) -> UNetConfig {
        let mut cfg = UNetConfig::new(self.input_size, self.base_channels, self.depth, self.use_fft_input, self.seed);
        if !self.dropout_schedule.is_empty() {
            cfg.dropout_schedule = self.dropout_schedule.clone();
        }
        cfg
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            adam: AdamConfig {
                learning_rate: self.learning_rate,
                beta1: self.beta1,
                beta2: self.beta2,
                epsilon: self.adam_epsilon,
            },
            seed: self.seed,
            validation_fraction: self.validation_fraction,
        }
    }

    pub fn synthetic(&self) -> SyntheticSpec {
        SyntheticSpec {
            image_size: self.image_size,
            cell_count_range: (self.cell_count_min, self.cell_count_max),
            radius_range: (self.radius_min, self.radius_max),
            noise_sigma: self.noise_sigma,
            overlap_allowed: self.overlap_allowed,
            min_gap: self.min_gap,
            seed: self.seed,
        }
    }

    pub fn count_params(&self) -> CountParams {
        CountParams {
            min_distance: self.min_distance,
            abs_threshold: self.abs_threshold,
            filter_window: self.filter_window,
            eps: self.dbscan_eps,
            min_pts: self.dbscan_min_pts,
            resize_to: self.resize_to.map(|s| (s, s)),
        }
    }

    /// Every key with its effective value, parseable by [`RunConfig::parse`].
    pub fn to_text(&self) -> String {
        let dropout = self.unet().dropout_schedule;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("seed", self.seed.to_string());
        kv("input_size", self.input_size.to_string());
        kv("base_channels", self.base_channels.to_string());
        kv("depth", self.depth.to_string());
        kv("use_fft_input", self.use_fft_input.to_string());
        kv("dropout_schedule", join(&dropout));
        kv("epochs", self.epochs.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("learning_rate", self.learning_rate.to_string());
        kv("beta1", self.beta1.to_string());
        kv("beta2", self.beta2.to_string());
        kv("adam_epsilon", self.adam_epsilon.to_string());
        kv("validation_fraction", self.validation_fraction.to_string());
        kv("gen_count", self.gen_count.to_string());
        kv("image_size", self.image_size.to_string());
        kv("cell_count_min", self.cell_count_min.to_string());
        kv("cell_count_max", self.cell_count_max.to_string());
        kv("radius_min", self.radius_min.to_string());
        kv("radius_max", self.radius_max.to_string());
        kv("noise_sigma", self.noise_sigma.to_string());
        kv("overlap_allowed", self.overlap_allowed.to_string());
        kv("min_gap", self.min_gap.to_string());
        kv("min_distance", self.min_distance.to_string());
        kv("abs_threshold", self.abs_threshold.to_string());
        kv("filter_window", self.filter_window.to_string());
        kv("dbscan_eps", self.dbscan_eps.to_string());
        kv("dbscan_min_pts", self.dbscan_min_pts.to_string());
        kv("resize_to", self.resize_to.map_or("none".to_string(), |v| v.to_string()));
        kv("bench_sizes", join(&self.bench_sizes));
        kv("bench_kernels", join(&self.bench_kernels));
        kv("bench_reps", self.bench_reps.to_string());
        s
    }
}
