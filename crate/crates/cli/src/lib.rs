//! Command-line front end: data generation, training, evaluation, object
//! counting and benchmarks. `main.rs` only parses arguments and maps
//! [`CliError`] to the process exit code.

pub mod config;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::builder::BoolishValueParser;
use clap::{Parser, Subcommand, ValueEnum};

use fftseg::bench::{bench_conv, bench_train_step, format_bench_csv, machine_metadata};
use fftseg::data::{generate, load_dataset, read_pgm, write_dataset, write_pgm, LoadedSample, MANIFEST_FILE};
use fftseg::grid::resize_bilinear;
use fftseg::metrics::{per_image_dice, per_image_iou, DEFAULT_THRESHOLD};
use fftseg::postproc::{count_objects, format_count_record};
use fftseg::training::{predict, train_with, write_reports_csv};
use fftseg::unet::{load, save};
use fftseg::{Dataset, Grid4f, UNet};

use config::{RunConfig, ECHO_FILE};

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_INTERNAL: i32 = 4;

pub const MODEL_FILE: &str = "model.fseg";
pub const METRICS_FILE: &str = "metrics.csv";
pub const EVAL_FILE: &str = "eval.csv";
pub const EVAL_HEADER: &str = "variant,image,iou,dice";
pub const COUNT_FILE: &str = "count.txt";
pub const BENCH_FILE: &str = "bench.csv";
pub const BENCH_SUMMARY_FILE: &str = "bench_summary.txt";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { code: EXIT_USAGE, message: message.into() }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self { code: EXIT_DATA, message: message.into() }
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self { code: EXIT_INTERNAL, message: message.into() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "fftseg", version, about = "U-Net cell segmentation with an FFT input block")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Conv,
    Train,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic image/mask dataset.
    Gen {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Number of samples; defaults to `gen_count` from the config.
        #[arg(long)]
        count: Option<usize>,
    },
    /// Train a model on a dataset directory.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides `use_fft_input` from the config.
        #[arg(long, value_parser = BoolishValueParser::new())]
        use_fft_input: Option<bool>,
    },
    /// Score one or more models (or the images themselves) against masks.
    Eval {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Repeatable. Without a model, images are scored as probability maps.
        #[arg(long)]
        model: Vec<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Count objects in one image.
    Count {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Without a model, the image is used as the probability mask.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time FFT against direct convolution, or FFT against plain training steps.
    Bench {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        suite: Suite,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::data(format!("cannot create {}: {e}", dir.display())))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))
}

fn echo_config(dir: &Path, cfg: &RunConfig) -> CliResult<()> {
    write_file(&dir.join(ECHO_FILE), cfg.to_text())
}

fn data_error(e: fftseg::Error) -> CliError {
    CliError::data(e.to_string())
}

fn internal(e: fftseg::Error) -> CliError {
    CliError::internal(e.to_string())
}

fn load_model(path: &Path) -> CliResult<UNet> {
    if !path.is_file() {
        return Err(CliError::usage(format!("model {} does not exist", path.display())));
    }
    load(path).map_err(|e| CliError::data(format!("cannot load model {}: {e}", path.display())))
}

fn load_samples(dir: &Path, size: Option<usize>) -> CliResult<Vec<LoadedSample>> {
    if !dir.join(MANIFEST_FILE).is_file() {
        return Err(CliError::usage(format!("no {MANIFEST_FILE} in data directory {}", dir.display())));
    }
    load_dataset(dir, size).map_err(data_error)
}

fn stack(samples: &[LoadedSample]) -> CliResult<Dataset> {
    let images: Vec<&Grid4f> = samples.iter().map(|s| &s.image).collect();
    let masks: Vec<&Grid4f> = samples.iter().map(|s| &s.mask).collect();
    let images = Grid4f::stack(&images).map_err(data_error)?;
    let masks = Grid4f::stack(&masks).map_err(data_error)?;
    Dataset::new(images, masks).map_err(data_error)
}

pub fn variant_name(model: &UNet) -> &'static str {
    if model.config().use_fft_input {
        "fft-unet"
    } else {
        "plain-unet"
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Gen { config, out, count } => cmd_gen(config.as_deref(), &out, count),
        Command::Train { config, data, out, use_fft_input } => cmd_train(config.as_deref(), &data, &out, use_fft_input),
        Command::Eval { config, model, data, out } => cmd_eval(config.as_deref(), &model, &data, &out),
        Command::Count { config, model, image, out } => cmd_count(config.as_deref(), model.as_deref(), &image, out.as_deref()),
        Command::Bench { config, suite, out } => cmd_bench(config.as_deref(), suite, out.as_deref()),
    }
}

pub fn cmd_gen(config: Option<&Path>, out: &Path, count: Option<usize>) -> CliResult<()> {
    let cfg = RunConfig::load(config)?;
    let n = count.unwrap_or(cfg.gen_count);
    if n == 0 {
        return Err(CliError::usage("--count must be at least 1"));
    }
    let samples = generate(&cfg.synthetic(), n).map_err(internal)?;
    create_dir(out)?;
    write_dataset(out, &samples).map_err(data_error)?;
    echo_config(out, &cfg)?;
    println!("wrote {n} samples to {}", out.display());
    Ok(())
}

pub fn cmd_train(config: Option<&Path>, data: &Path, out: &Path, use_fft_input: Option<bool>) -> CliResult<()> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(v) = use_fft_input {
        cfg.use_fft_input = v;
    }
    let samples = load_samples(data, Some(cfg.input_size))?;
    let dataset = stack(&samples)?;
    let mut model = UNet::new(cfg.unet()).map_err(|e| CliError::usage(e.to_string()))?;
    let train_cfg = cfg.train();
    let epochs = train_cfg.epochs;
    println!("training {} ({} parameters) on {} samples", variant_name(&model), model.parameter_count(), dataset.len());
    let reports = train_with(&mut model, &dataset, &train_cfg, |r| {
        println!(
            "epoch {}/{epochs} train_loss={:.4} val_loss={:.4} val_mean_iou={:.4} ms_per_step={:.1}",
            r.epoch, r.train_loss, r.val_loss, r.val_mean_iou, r.ms_per_step
        );
    })
    .map_err(|e| match e {
        fftseg::Error::InvalidArgument(m) => CliError::usage(m),
        other => internal(other),
    })?;
    create_dir(out)?;
    save(&model, out.join(MODEL_FILE)).map_err(data_error)?;
    write_reports_csv(out.join(METRICS_FILE), &reports).map_err(data_error)?;
    echo_config(out, &cfg)?;
    println!("wrote {}, {} and {} to {}", MODEL_FILE, METRICS_FILE, ECHO_FILE, out.display());
    Ok(())
}

/// Per-image and mean IoU/DICE rows for one set of predictions.
fn eval_rows(variant: &str, samples: &[LoadedSample], pred: &Grid4f, masks: &Grid4f, csv: &mut String) -> CliResult<(f64, f64)> {
    let ious = per_image_iou(pred, masks, DEFAULT_THRESHOLD).map_err(internal)?;
    let dices = per_image_dice(pred, masks, DEFAULT_THRESHOLD).map_err(internal)?;
    for ((s, i), d) in samples.iter().zip(&ious).zip(&dices) {
        csv.push_str(&format!("{variant},{},{i},{d}\n", s.entry.index));
    }
    let n = ious.len() as f64;
    let (mi, md) = (ious.iter().sum::<f64>() / n, dices.iter().sum::<f64>() / n);
    csv.push_str(&format!("{variant},mean,{mi},{md}\n"));
    Ok((mi, md))
}

pub fn cmd_eval(config: Option<&Path>, models: &[PathBuf], data: &Path, out: &Path) -> CliResult<()> {
    let cfg = RunConfig::load(config)?;
    let samples = load_samples(data, None)?;
    let dataset = stack(&samples)?;
    create_dir(out)?;
    let mut csv = format!("{EVAL_HEADER}\n");

    if models.is_empty() {
        let (mi, md) = eval_rows("identity", &samples, &dataset.images, &dataset.masks, &mut csv)?;
        println!("identity: mean_iou={mi:.4} mean_dice={md:.4}");
    }
    for path in models {
        let model = load_model(path)?;
        let s = model.config().input_size;
        let (_, _, h, w) = dataset.images.shape();
        if (h, w) != (s, s) {
            return Err(CliError::usage(format!(
                "model {} expects {s}x{s} images, data has {h}x{w}",
                path.display()
            )));
        }
        let variant = variant_name(&model);
        let pred = predict(&model, &dataset.images).map_err(internal)?;
        let (mi, md) = eval_rows(variant, &samples, &pred, &dataset.masks, &mut csv)?;
        println!("{variant} ({}): mean_iou={mi:.4} mean_dice={md:.4}", path.display());

        let stem = path.file_stem().map_or_else(|| variant.to_string(), |s| s.to_string_lossy().into_owned());
        let dir = out.join("predictions").join(format!("{stem}-{variant}"));
        create_dir(&dir)?;
        for (i, s) in samples.iter().enumerate() {
            write_pgm(&pred.image(i), dir.join(format!("{:04}.pgm", s.entry.index))).map_err(data_error)?;
        }
    }
    write_file(&out.join(EVAL_FILE), csv)?;
    echo_config(out, &cfg)?;
    Ok(())
}

pub fn cmd_count(config: Option<&Path>, model: Option<&Path>, image: &Path, out: Option<&Path>) -> CliResult<()> {
    let cfg = RunConfig::load(config)?;
    let img: Grid4f = read_pgm(image).map_err(|e| CliError::data(format!("cannot read image {}: {e}", image.display())))?;
    let (_, _, h, w) = img.shape();
    let prob = match model {
        None => img,
        Some(path) => {
            let m = load_model(path)?;
            let s = m.config().input_size;
            let input = if (h, w) == (s, s) { img } else { resize_bilinear(&img, s, s).map_err(internal)? };
            let p = m.predict(&input).map_err(internal)?;
            if (h, w) == (s, s) {
                p
            } else {
                resize_bilinear(&p, h, w).map_err(internal)?
            }
        }
    };
    let params = cfg.count_params();
    let result = count_objects(&prob.plane(0, 0), &params).map_err(internal)?;
    let mut record = format_count_record(&image.display().to_string(), &params, &result);
    record.insert_str(0, &format!("model = {}\n", model.map_or("none".to_string(), |p| p.display().to_string())));
    print!("{record}");
    if let Some(dir) = out {
        create_dir(dir)?;
        write_file(&dir.join(COUNT_FILE), &record)?;
        echo_config(dir, &cfg)?;
    }
    Ok(())
}

pub fn cmd_bench(config: Option<&Path>, suite: Suite, out: Option<&Path>) -> CliResult<()> {
    let cfg = RunConfig::load(config)?;
    let mut summary = machine_metadata();
    let records = match suite {
        Suite::Conv => {
            let records = bench_conv(&cfg.bench_sizes, &cfg.bench_kernels, cfg.bench_reps)
                .map_err(|e| CliError::usage(e.to_string()))?;
            for &size in &cfg.bench_sizes {
                let fft: Vec<f64> = records.iter().filter(|r| r.image_size == size && r.variant == "fft").map(|r| r.median_ms).collect();
                let (lo, hi) = fft.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
                summary.push_str(&format!("fft_spread_{size} = {:.4}\n", (hi - lo) / lo));
            }
            records
        }
        Suite::Train => {
            let b = bench_train_step(&cfg.unet(), cfg.batch_size, cfg.bench_reps).map_err(internal)?;
            summary.push_str(&format!("fft_over_plain_ms_per_step = {:.4}\n", b.ratio));
            let join = |v: &[f64]| v.iter().map(|l| format!("{l:.6}")).collect::<Vec<_>>().join(",");
            summary.push_str(&format!("fft_losses = {}\nplain_losses = {}\n", join(&b.fft_losses), join(&b.plain_losses)));
            vec![b.fft, b.plain]
        }
    };
    let csv = format_bench_csv(&records);
    print!("{csv}{summary}");
    if let Some(dir) = out {
        create_dir(dir)?;
        write_file(&dir.join(BENCH_FILE), &csv)?;
        write_file(&dir.join(BENCH_SUMMARY_FILE), &summary)?;
        echo_config(dir, &cfg)?;
    }
    Ok(())
}
