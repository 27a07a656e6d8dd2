//! IQ volumes on disk: `<stem>.iq` holds little-endian `f32` pairs `(re, im)`
//! in `[wavelength][fiber][z][x]` order, `<stem>.iq.json` describes them.

use std::fs;
use std::path::{Path, PathBuf};

use pausim_core::grid::Grid;
use pausim_core::simulate::{IqVolume, VolumeMeta};
use pausim_core::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, json_err};
use crate::hash::{sha256_hex, Provenance};
use crate::{Error, Result};

pub const FORMAT: &str = "pausim-iq";
pub const ORDER: &str = "wavelength,fiber,z,x";
pub const DTYPE: &str = "complex-f32le";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub format: String,
    pub dtype: String,
    pub order: String,
    /// `[n_wavelengths, n_fibers, nz, nx]`
    pub dims: [usize; 4],
    pub grid: Grid,
    pub wavelengths_nm: Vec<f64>,
    pub seed: u64,
    #[serde(flatten)]
    pub provenance: Provenance,
    /// Digest of the raw sample file.
    pub sha256: String,
    /// Pipeline stage that produced the volume.
    #[serde(default)]
    pub stage: String,
}

/// Sidecar path for a data file: `name.ext` gets `name.ext.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn encode(volume: &IqVolume) -> Vec<u8> {
    let mut out = Vec::with_capacity(volume.data.len() * 8);
    for z in &volume.data {
        out.extend_from_slice(&(z.re as f32).to_le_bytes());
        out.extend_from_slice(&(z.im as f32).to_le_bytes());
    }
    out
}

fn decode(bytes: &[u8]) -> Vec<Complex64> {
    bytes
        .chunks_exact(8)
        .map(|c| {
            let re = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
            let im = f32::from_le_bytes([c[4], c[5], c[6], c[7]]);
            Complex64::new(re as f64, im as f64)
        })
        .collect()
}

/// Rounds every sample to `f32`, i.e. what a save/load cycle returns.
pub fn quantize(volume: &IqVolume) -> IqVolume {
    let mut out = volume.clone();
    for z in &mut out.data {
        *z = Complex64::new(z.re as f32 as f64, z.im as f32 as f64);
    }
    out
}

/// Writes `path` and its sidecar; returns the sidecar.
pub fn save_volume(path: &Path, volume: &IqVolume, provenance: &Provenance, stage: &str) -> Result<Sidecar> {
    volume.validate()?;
    let bytes = encode(volume);
    let sidecar = Sidecar {
        format: FORMAT.into(),
        dtype: DTYPE.into(),
        order: ORDER.into(),
        dims: volume.dims(),
        grid: volume.grid,
        wavelengths_nm: volume.wavelengths.clone(),
        seed: volume.meta.seed,
        provenance: provenance.clone(),
        sha256: sha256_hex(&bytes),
        stage: stage.into(),
    };
    fs::write(path, &bytes).map_err(io_err(path))?;
    write_json(&sidecar_path(path), &sidecar)?;
    Ok(sidecar)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(json_err(path))?;
    fs::write(path, text + "\n").map_err(io_err(path))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(json_err(path))
}

/// Loads a volume, checking format, dims, the data digest and, when given,
/// the expected provenance.
pub fn load_volume(path: &Path, expected: Option<&Provenance>) -> Result<(IqVolume, Sidecar)> {
    let side: Sidecar = read_json(&sidecar_path(path))?;
    let fmt = |reason: String| Error::Format { path: path.to_path_buf(), reason };
    if side.format != FORMAT || side.dtype != DTYPE || side.order != ORDER {
        return Err(fmt(format!("unsupported layout {}/{}/{}", side.format, side.dtype, side.order)));
    }
    let [nw, nf, nz, nx] = side.dims;
    if nw != side.wavelengths_nm.len() || nz != side.grid.nz || nx != side.grid.nx {
        return Err(fmt("sidecar dims disagree with its grid or wavelengths".into()));
    }
    let bytes = fs::read(path).map_err(io_err(path))?;
    if bytes.len() != nw * nf * nz * nx * 8 {
        return Err(fmt(format!("{} bytes, dims imply {}", bytes.len(), nw * nf * nz * nx * 8)));
    }
    let digest = sha256_hex(&bytes);
    if digest != side.sha256 {
        return Err(Error::Mismatch { path: path.to_path_buf(), what: "data digest", expected: side.sha256.clone(), found: digest });
    }
    if let Some(e) = expected {
        side.provenance.check(e, path)?;
    }
    let volume = IqVolume {
        grid: side.grid,
        wavelengths: side.wavelengths_nm.clone(),
        n_fibers: nf,
        data: decode(&bytes),
        meta: VolumeMeta { seed: side.seed, scene_hash: side.provenance.scene_hash.clone() },
    };
    volume.validate()?;
    Ok((volume, side))
}
