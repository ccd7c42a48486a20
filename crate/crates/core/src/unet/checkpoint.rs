//! Binary checkpoint format.
//!
//! ```text
//! "FSEG" | version: u8 | header_len: u32 LE | header: UTF-8 text | payload
//! ```
//!
//! The header holds `key = value` config lines followed by one
//! `param <name> <d0>x<d1>x... <byte offset>` line per tensor in registry
//! order. The payload is every tensor as little-endian `f32`, back to back.

use std::fmt::Write as _;
use std::path::Path;

use super::{build, UNetConfig, UNetModel};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"FSEG";
pub const CHECKPOINT_VERSION: u8 = 1;

pub fn encode_checkpoint<T: Scalar>(model: &UNetModel<T>) -> Vec<u8> {
    let cfg = model.config();
    let mut header = String::new();
    let rates: Vec<String> = cfg.dropout_schedule.iter().map(|r| r.to_string()).collect();
    // Writing to a String cannot fail.
    let _ = writeln!(header, "input_size = {}", cfg.input_size);
    let _ = writeln!(header, "base_channels = {}", cfg.base_channels);
    let _ = writeln!(header, "depth = {}", cfg.depth);
    let _ = writeln!(header, "use_fft_input = {}", cfg.use_fft_input);
    let _ = writeln!(header, "seed = {}", cfg.seed);
    let _ = writeln!(header, "dropout_schedule = {}", rates.join(","));
    let _ = writeln!(header, "rng = {}", Rng::ALGORITHM);
    let _ = writeln!(header, "rng_state = {}", model.rng_state);
    let mut offset = 0usize;
    for info in model.manifest() {
        let dims: Vec<String> = info.shape.iter().map(usize::to_string).collect();
        let _ = writeln!(header, "param {} {} {}", info.name, dims.join("x"), offset);
        offset += 4 * info.len();
    }

    let mut out = Vec::with_capacity(9 + header.len() + offset);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.push(CHECKPOINT_VERSION);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    for tensor in model.params() {
        for v in tensor {
            out.extend_from_slice(&v.to_f32_lossy().to_le_bytes());
        }
    }
    out
}

fn parse<V: std::str::FromStr>(key: &str, value: &str) -> Result<V> {
    value.trim().parse().map_err(|_| Error::Parse(format!("bad value {value:?} for {key}")))
}

struct Header {
    config: UNetConfig,
    rng_state: u64,
    params: Vec<(String, Vec<usize>, usize)>,
}

fn parse_header(text: &str) -> Result<Header> {
    let mut fields = std::collections::HashMap::new();
    let mut params = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        if let Some(rest) = line.strip_prefix("param ") {
            let parts: Vec<&str> = rest.split_whitespace().collect();
            let [name, shape, offset] = parts[..] else {
                return Err(Error::Parse(format!("bad manifest line {line:?}")));
            };
            let shape = shape.split('x').map(|d| parse::<usize>(name, d)).collect::<Result<Vec<_>>>()?;
            params.push((name.to_string(), shape, parse::<usize>(name, offset)?));
        } else if let Some((k, v)) = line.split_once('=') {
            fields.insert(k.trim().to_string(), v.trim().to_string());
        } else {
            return Err(Error::Parse(format!("bad header line {line:?}")));
        }
    }
    let get = |k: &str| fields.get(k).map(String::as_str).ok_or_else(|| Error::Parse(format!("missing header field {k}")));
    if get("rng")? != Rng::ALGORITHM {
        return Err(Error::Parse(format!("unknown generator {}", get("rng")?)));
    }
    let dropout_schedule = get("dropout_schedule")?
        .split(',')
        .map(|r| parse::<f64>("dropout_schedule", r))
        .collect::<Result<Vec<_>>>()?;
    let config = UNetConfig {
        input_size: parse("input_size", get("input_size")?)?,
        base_channels: parse("base_channels", get("base_channels")?)?,
        depth: parse("depth", get("depth")?)?,
        dropout_schedule,
        use_fft_input: parse("use_fft_input", get("use_fft_input")?)?,
        seed: parse("seed", get("seed")?)?,
    };
    Ok(Header { config, rng_state: parse("rng_state", get("rng_state")?)?, params })
}

pub fn decode_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<UNetModel<T>> {
    if bytes.len() < 9 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::UnsupportedFormat("missing FSEG magic".into()));
    }
    if bytes[4] != CHECKPOINT_VERSION {
        return Err(Error::Version { expected: CHECKPOINT_VERSION, found: bytes[4] });
    }
    let header_len = u32::from_le_bytes([bytes[5], bytes[6], bytes[7], bytes[8]]) as usize;
    let header_end = 9usize
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len())
        .ok_or(Error::Truncated { expected: 9 + header_len, found: bytes.len() })?;
    let text = std::str::from_utf8(&bytes[9..header_end]).map_err(|_| Error::Parse("header is not UTF-8".into()))?;
    let header = parse_header(text)?;

    let mut model: UNetModel<T> = build(header.config, &mut Rng::new(0))?;
    model.rng_state = header.rng_state;
    let manifest = model.manifest();
    if manifest.len() != header.params.len() {
        return Err(Error::Parse(format!(
            "manifest lists {} tensors, config implies {}",
            header.params.len(),
            manifest.len()
        )));
    }
    let mut offset = 0usize;
    for (info, (name, shape, off)) in manifest.iter().zip(&header.params) {
        if &info.name != name || &info.shape != shape || *off != offset {
            return Err(Error::Parse(format!("manifest entry {name} disagrees with config")));
        }
        offset += 4 * info.len();
    }
    let payload = &bytes[header_end..];
    if payload.len() != offset {
        return Err(Error::Truncated { expected: offset, found: payload.len() });
    }
    let mut chunks = payload.chunks_exact(4);
    for tensor in model.params_mut() {
        for (dst, c) in tensor.iter_mut().zip(&mut chunks) {
            *dst = T::lit(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64);
        }
    }
    Ok(model)
}

pub fn save<T: Scalar>(model: &UNetModel<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_checkpoint(model)).map_err(|e| Error::io(path, e))
}

pub fn load<T: Scalar>(path: impl AsRef<Path>) -> Result<UNetModel<T>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
