//! On-disk formats. JSON documents are wrapped in a `{schema_version, kind,
//! data}` envelope; beamspace tensors are a raw little-endian `f64` file plus
//! a JSON sidecar. Every write goes to a temporary file that is renamed into
//! place.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use num_complex::Complex;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::channel::{BeamspaceDims, RawBeamspace};
use crate::error::{Error, Result};
use crate::scalar::{lit, to_f64, Real};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
pub struct Envelope<D> {
    pub schema_version: u32,
    pub kind: String,
    pub data: D,
}

/// Writes `bytes` to `path` through a sibling temporary file.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_json<D: Serialize>(path: &Path, kind: &str, data: &D) -> Result<()> {
    let env = Envelope {
        schema_version: SCHEMA_VERSION,
        kind: kind.to_string(),
        data,
    };
    let mut text = serde_json::to_string_pretty(&env)?;
    text.push('\n');
    atomic_write(path, text.as_bytes())
}

pub fn read_json<D: DeserializeOwned>(path: &Path, kind: &str) -> Result<D> {
    let text = fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let found = value
        .get("schema_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::Config(format!("{}: missing schema_version", path.display())))?;
    if found != SCHEMA_VERSION as u64 {
        return Err(Error::SchemaVersion {
            found: found as u32,
            expected: SCHEMA_VERSION,
        });
    }
    let env: Envelope<D> = serde_json::from_value(value)?;
    if env.kind != kind {
        return Err(Error::Config(format!(
            "{}: expected a {kind:?} document, found {:?}",
            path.display(),
            env.kind
        )));
    }
    Ok(env.data)
}

/// Sidecar describing a tensor file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorHeader {
    pub dims: BeamspaceDims,
    pub subcarriers: Vec<u32>,
    pub subcarrier_spacing_hz: f64,
    /// Data file name, relative to the sidecar.
    pub data_file: String,
    /// Element order of the data file.
    pub layout: String,
    pub index: usize,
    pub timestamp: f64,
}

pub const TENSOR_LAYOUT: &str = "received then pilots; each (ue, el, az, subcarrier) row-major; re, im f64 little-endian";

/// Writes `<stem>.bin` and `<stem>.json`; returns the sidecar path.
pub fn write_beamspace<T: Real>(
    stem: &Path,
    raw: &RawBeamspace<T>,
    index: usize,
    timestamp: T,
) -> Result<PathBuf> {
    let bin = stem.with_extension("bin");
    let json = stem.with_extension("json");
    let mut bytes = Vec::with_capacity(32 * raw.received.len());
    for c in raw.received.iter().chain(&raw.pilots) {
        bytes.extend_from_slice(&to_f64(c.re).to_le_bytes());
        bytes.extend_from_slice(&to_f64(c.im).to_le_bytes());
    }
    atomic_write(&bin, &bytes)?;
    let header = TensorHeader {
        dims: raw.dims,
        subcarriers: raw.subcarriers.clone(),
        subcarrier_spacing_hz: to_f64(raw.subcarrier_spacing_hz),
        data_file: bin
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
        layout: TENSOR_LAYOUT.to_string(),
        index,
        timestamp: to_f64(timestamp),
    };
    write_json(&json, "beamspace_tensor", &header)?;
    Ok(json)
}

pub fn read_beamspace<T: Real>(sidecar: &Path) -> Result<(TensorHeader, RawBeamspace<T>)> {
    let header: TensorHeader = read_json(sidecar, "beamspace_tensor")?;
    let dir = sidecar.parent().unwrap_or(Path::new("."));
    let bytes = fs::read(dir.join(&header.data_file))?;
    let n = header.dims.len();
    if bytes.len() != 32 * n {
        return Err(Error::Config(format!(
            "{}: expected {} bytes, found {}",
            header.data_file,
            32 * n,
            bytes.len()
        )));
    }
    let values: Vec<Complex<T>> = bytes
        .chunks_exact(16)
        .map(|c| {
            let re = f64::from_le_bytes(c[..8].try_into().unwrap());
            let im = f64::from_le_bytes(c[8..].try_into().unwrap());
            Complex::new(lit(re), lit(im))
        })
        .collect();
    let (received, pilots) = values.split_at(n);
    let raw = RawBeamspace {
        dims: header.dims,
        subcarriers: header.subcarriers.clone(),
        subcarrier_spacing_hz: lit(header.subcarrier_spacing_hz),
        received: received.to_vec(),
        pilots: pilots.to_vec(),
    };
    Ok((header, raw))
}

/// Sidecar paths of every tensor in `dir`, sorted by name.
pub fn list_tensors(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    out.sort();
    Ok(out)
}
