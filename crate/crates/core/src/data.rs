//! Synthetic cell images, PGM image IO, dataset manifests and splitting.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::grid::Grid4;
use crate::metrics::BinaryMask;
use crate::rng::{stream, Rng};
use crate::scalar::Scalar;

/// Parameters of the synthetic cell generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub image_size: usize,
    pub cell_count_range: (usize, usize),
    pub radius_range: (f64, f64),
    pub noise_sigma: f64,
    pub overlap_allowed: bool,
    /// Minimum edge-to-edge gap between discs when overlap is not allowed.
    pub min_gap: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            image_size: 64,
            cell_count_range: (1, 8),
            radius_range: (4.0, 10.0),
            noise_sigma: 0.05,
            overlap_allowed: false,
            min_gap: 2.0,
            seed: 42,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let (cmin, cmax) = self.cell_count_range;
        let (rmin, rmax) = self.radius_range;
        if cmin > cmax || rmin > rmax {
            return Err(Error::InvalidArgument("synthetic ranges need min <= max".into()));
        }
        if rmin < 2.0 {
            return Err(Error::InvalidArgument(format!("cell radius must be >= 2, got {rmin}")));
        }
        if self.image_size == 0 || !self.image_size.is_power_of_two() {
            return Err(Error::InvalidArgument(format!("image size {} is not a power of two", self.image_size)));
        }
        if 2.0 * rmax + 1.0 > self.image_size as f64 {
            return Err(Error::InvalidArgument("cells do not fit inside the image".into()));
        }
        if self.noise_sigma < 0.0 || self.min_gap < 0.0 {
            return Err(Error::InvalidArgument("noise sigma and gap must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Disc {
    pub center: (f64, f64),
    pub radius: f64,
}

impl Disc {
    #[inline]
    pub fn contains(&self, y: usize, x: usize) -> bool {
        let dy = y as f64 - self.center.0;
        let dx = x as f64 - self.center.1;
        dy * dy + dx * dx <= self.radius * self.radius
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// `(1, 1, size, size)` with values in `[0, 1]`.
    pub image: Grid4<f32>,
    pub mask: BinaryMask,
    pub truth_count: usize,
    pub truth_centers: Vec<(f64, f64)>,
    pub truth_radii: Vec<f64>,
}

impl Sample {
    pub fn mask_grid(&self) -> Grid4<f32> {
        self.mask.to_plane::<f32>().into_grid().expect("mask shape is valid")
    }
}

/// Generates `n` samples. Sample `i` depends only on `(spec, i)`.
pub fn generate(spec: &SyntheticSpec, n: usize) -> Result<Vec<Sample>> {
    spec.validate()?;
    (0..n).map(|i| generate_one(spec, i)).collect()
}

/// Generates sample number `index` of the stream defined by `spec`.
pub fn generate_one(spec: &SyntheticSpec, index: usize) -> Result<Sample> {
    let mut rng = Rng::derive(Rng::derive(spec.seed, stream::DATA).next_u64(), index as u64);
    let size = spec.image_size;
    let (cmin, cmax) = spec.cell_count_range;
    let wanted = rng.int_range(cmin, cmax);

    let mut discs: Vec<Disc> = Vec::with_capacity(wanted);
    let mut attempts = 0;
    while discs.len() < wanted && attempts < 200 * wanted.max(1) {
        attempts += 1;
        let radius = rng.uniform_range(spec.radius_range.0, spec.radius_range.1);
        let lo = radius.ceil();
        let hi = size as f64 - 1.0 - radius.ceil();
        let center = (rng.uniform_range(lo, hi), rng.uniform_range(lo, hi));
        let candidate = Disc { center, radius };
        let clear = spec.overlap_allowed
            || discs.iter().all(|d| {
                let dist = ((d.center.0 - center.0).powi(2) + (d.center.1 - center.1).powi(2)).sqrt();
                dist > d.radius + radius + spec.min_gap
            });
        if clear {
            discs.push(candidate);
        }
    }

    let brightness: Vec<f64> = discs.iter().map(|_| rng.uniform_range(0.6, 1.0)).collect();
    let mut image = vec![0.0f32; size * size];
    let mut mask = BinaryMask::empty(size, size);
    for y in 0..size {
        for x in 0..size {
            let mut v = 0.0f64;
            for (d, &b) in discs.iter().zip(&brightness) {
                let dist = ((y as f64 - d.center.0).powi(2) + (x as f64 - d.center.1).powi(2)).sqrt();
                let sigma = d.radius / 4.0;
                let intensity = if dist <= d.radius { b } else { b * (-(dist - d.radius).powi(2) / (2.0 * sigma * sigma)).exp() };
                v = v.max(intensity);
                if d.contains(y, x) {
                    mask.set(y, x, true);
                }
            }
            if spec.noise_sigma > 0.0 {
                v += spec.noise_sigma * rng.next_normal();
            }
            image[y * size + x] = v.clamp(0.0, 1.0) as f32;
        }
    }
    Ok(Sample {
        image: Grid4::from_vec((1, 1, size, size), image)?,
        mask,
        truth_count: discs.len(),
        truth_centers: discs.iter().map(|d| d.center).collect(),
        truth_radii: discs.iter().map(|d| d.radius).collect(),
    })
}

/// Stacks sample images and masks into `(n, 1, s, s)` grids.
pub fn to_batch(samples: &[&Sample]) -> Result<(Grid4<f32>, Grid4<f32>)> {
    let images: Vec<&Grid4<f32>> = samples.iter().map(|s| &s.image).collect();
    let masks: Vec<Grid4<f32>> = samples.iter().map(|s| s.mask_grid()).collect();
    let mask_refs: Vec<&Grid4<f32>> = masks.iter().collect();
    Ok((Grid4::stack(&images)?, Grid4::stack(&mask_refs)?))
}

/// Reads a binary (`P5`, maxval 255) PGM into a `(1, 1, h, w)` grid scaled to `[0, 1]`.
pub fn read_pgm<T: Scalar>(path: impl AsRef<Path>) -> Result<Grid4<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes)
}

pub fn decode_pgm<T: Scalar>(bytes: &[u8]) -> Result<Grid4<T>> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Parse("PGM header ended early".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        if fields.len() == 1 && fields[0] != "P5" {
            return Err(Error::UnsupportedFormat(format!("PGM magic {:?}; only binary P5 is supported", fields[0])));
        }
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let num = |s: &str| s.parse::<usize>().map_err(|_| Error::Parse(format!("bad PGM header field {s:?}")));
    let (w, h, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if maxval != 255 {
        return Err(Error::UnsupportedFormat(format!("PGM maxval {maxval}; only 255 is supported")));
    }
    let need = w * h;
    let raster = bytes.get(pos.min(bytes.len())..).unwrap_or(&[]);
    if raster.len() < need {
        return Err(Error::Truncated { expected: need, found: raster.len() });
    }
    Grid4::from_vec((1, 1, h, w), raster[..need].iter().map(|&b| T::lit(b as f64 / 255.0)).collect())
}

/// Writes channel 0 of image 0 as binary PGM, quantizing `round(v * 255)`.
pub fn write_pgm<T: Scalar>(img: &Grid4<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pgm(img)).map_err(|e| Error::io(path, e))
}

pub fn encode_pgm<T: Scalar>(img: &Grid4<T>) -> Vec<u8> {
    let (h, w) = (img.height(), img.width());
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(img.plane_slice(0, 0).iter().map(|v| {
        let q = (v.to_f64().unwrap_or(0.0) * 255.0).round();
        q.clamp(0.0, 255.0) as u8
    }));
    out
}

/// Seeded shuffle, then consecutive train / validation / test partitions of
/// sizes `floor(n * train_frac)`, `floor(n * val_frac)` and the remainder.
pub fn split<S: Clone>(samples: &[S], train_frac: f64, val_frac: f64, rng: &mut Rng) -> Result<(Vec<S>, Vec<S>, Vec<S>)> {
    if !(0.0..=1.0).contains(&train_frac) || !(0.0..=1.0).contains(&val_frac) || train_frac + val_frac > 1.0 + 1e-12 {
        return Err(Error::InvalidArgument(format!("split fractions {train_frac} + {val_frac} must lie in [0, 1]")));
    }
    let n = samples.len();
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    let n_train = ((n as f64 * train_frac) + 1e-9).floor() as usize;
    let n_val = (((n as f64 * val_frac) + 1e-9).floor() as usize).min(n - n_train);
    let pick = |idx: &[usize]| idx.iter().map(|&i| samples[i].clone()).collect::<Vec<_>>();
    Ok((pick(&order[..n_train]), pick(&order[n_train..n_train + n_val]), pick(&order[n_train + n_val..])))
}

/// One manifest row: `index,image_path,mask_path,truth_count`. Paths are
/// relative to the dataset directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub index: usize,
    pub image_path: String,
    pub mask_path: String,
    pub truth_count: usize,
}

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const MANIFEST_HEADER: &str = "index,image_path,mask_path,truth_count";

pub fn write_manifest(dir: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let path = dir.join(MANIFEST_FILE);
    let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut text = format!("{MANIFEST_HEADER}\n");
    for e in entries {
        text.push_str(&format!("{},{},{},{}\n", e.index, e.image_path, e.mask_path, e.truth_count));
    }
    f.write_all(text.as_bytes()).map_err(|e| Error::io(&path, e))
}

pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestEntry>> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut entries = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line == MANIFEST_HEADER {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        let bad = || Error::Parse(format!("{}:{}: expected {MANIFEST_HEADER}", path.display(), lineno + 1));
        if parts.len() != 4 {
            return Err(bad());
        }
        entries.push(ManifestEntry {
            index: parts[0].parse().map_err(|_| bad())?,
            image_path: parts[1].to_string(),
            mask_path: parts[2].to_string(),
            truth_count: parts[3].parse().map_err(|_| bad())?,
        });
    }
    if entries.is_empty() {
        return Err(Error::InvalidArgument(format!("{} lists no samples", path.display())));
    }
    Ok(entries)
}

/// Writes samples as `images/NNNN.pgm` and `masks/NNNN.pgm` plus a manifest.
pub fn write_dataset(dir: &Path, samples: &[Sample]) -> Result<Vec<ManifestEntry>> {
    for sub in ["images", "masks"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let mut entries = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let entry = ManifestEntry {
            index: i,
            image_path: format!("images/{i:04}.pgm"),
            mask_path: format!("masks/{i:04}.pgm"),
            truth_count: s.truth_count,
        };
        write_pgm(&s.image, dir.join(&entry.image_path))?;
        write_pgm(&s.mask_grid(), dir.join(&entry.mask_path))?;
        entries.push(entry);
    }
    write_manifest(dir, &entries)?;
    Ok(entries)
}

/// An image/mask pair loaded from disk.
#[derive(Debug, Clone)]
pub struct LoadedSample {
    pub entry: ManifestEntry,
    pub image: Grid4<f32>,
    pub mask: Grid4<f32>,
}

/// Loads every manifest entry. Images are bilinearly resized to `size x size`
/// when needed; masks are resized and re-binarized at 0.5.
pub fn load_dataset(dir: &Path, size: Option<usize>) -> Result<Vec<LoadedSample>> {
    read_manifest(dir)?
        .into_iter()
        .map(|entry| {
            let mut image: Grid4<f32> = read_pgm(resolve(dir, &entry.image_path))?;
            let mut mask: Grid4<f32> = read_pgm(resolve(dir, &entry.mask_path))?;
            if image.shape() != mask.shape() {
                return Err(Error::ShapeMismatch(format!(
                    "sample {}: image {:?} vs mask {:?}",
                    entry.index,
                    image.shape(),
                    mask.shape()
                )));
            }
            if let Some(s) = size {
                if (image.height(), image.width()) != (s, s) {
                    image = crate::grid::resize_bilinear(&image, s, s)?;
                    mask = crate::grid::resize_bilinear(&mask, s, s)?.map(|v| if v >= 0.5 { 1.0 } else { 0.0 });
                }
            }
            let mask = mask.map(|v| if v >= 0.5 { 1.0 } else { 0.0 });
            Ok(LoadedSample { entry, image, mask })
        })
        .collect()
}

fn resolve(dir: &Path, rel: &str) -> PathBuf {
    let p = Path::new(rel);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        dir.join(p)
    }
}
