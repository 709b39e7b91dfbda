//! Raw little-endian `f32` payloads with JSON sidecars.
//!
//! A volume stored at `name.raw` has its metadata in `name.json`:
//! `{"dims": [nx, ny, nz], "voxel_pitch_mm": v, "slice_pitch_mm": s, "dtype": "f32le"}`,
//! payload x-fastest. A sinogram sidecar carries the scan geometry instead, and
//! optional weights live in a parallel `name.weights.raw`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::geometry::ScanGeometry;
use crate::sinogram::Sinogram;
use crate::volume::{Grid, Volume};

pub const DTYPE: &str = "f32le";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeHeader {
    pub dims: [usize; 3],
    pub voxel_pitch_mm: f64,
    pub slice_pitch_mm: f64,
    pub dtype: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SinogramHeader {
    pub n_views: usize,
    pub n_channels: usize,
    pub n_slices: usize,
    pub view_angles_deg: Vec<f64>,
    pub channel_pitch_mm: f64,
    #[serde(default)]
    pub detector_offset: f64,
    pub dtype: String,
    /// File name of the weights payload, relative to the sidecar.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<String>,
    /// Seed of the noise realization, when the sinogram was simulated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_level: Option<f64>,
}

pub fn sidecar_path(raw: &Path) -> PathBuf {
    raw.with_extension("json")
}

pub fn weights_path(raw: &Path) -> PathBuf {
    raw.with_extension("weights.raw")
}

pub fn encode_f32le(values: &[f64]) -> Vec<u8> {
    values
        .iter()
        .flat_map(|&v| (v as f32).to_le_bytes())
        .collect()
}

pub fn decode_f32le(bytes: &[u8]) -> Result<Vec<f64>> {
    if bytes.len() % 4 != 0 {
        return config(format!("raw payload length {} is not a multiple of 4", bytes.len()));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    write_bytes(path, text.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

fn read_payload(path: &Path, expected: usize) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let values = decode_f32le(&bytes)?;
    if values.len() != expected {
        return config(format!(
            "{} holds {} values, expected {expected}",
            path.display(),
            values.len()
        ));
    }
    Ok(values)
}

fn check_dtype(dtype: &str, path: &Path) -> Result<()> {
    if dtype != DTYPE {
        return config(format!("{}: unsupported dtype {dtype:?}", path.display()));
    }
    Ok(())
}

pub fn volume_header(grid: &Grid) -> VolumeHeader {
    VolumeHeader {
        dims: [grid.nx, grid.ny, grid.nz],
        voxel_pitch_mm: grid.voxel_pitch,
        slice_pitch_mm: grid.slice_pitch,
        dtype: DTYPE.to_string(),
    }
}

/// Writes `path` (payload) and its `.json` sidecar.
pub fn write_volume(path: &Path, v: &Volume) -> Result<()> {
    write_bytes(path, &encode_f32le(v.data()))?;
    write_json(&sidecar_path(path), &volume_header(v.grid()))
}

pub fn read_volume(path: &Path) -> Result<Volume> {
    let side = sidecar_path(path);
    let h: VolumeHeader = read_json(&side)?;
    check_dtype(&h.dtype, &side)?;
    let grid = Grid::new(h.dims[0], h.dims[1], h.dims[2]).with_pitch(h.voxel_pitch_mm, h.slice_pitch_mm);
    grid.validate()?;
    Volume::from_vec(grid, read_payload(path, grid.len())?)
}

/// Raw payload only, interpreted on a known grid.
pub fn read_volume_raw(path: &Path, grid: Grid) -> Result<Volume> {
    Volume::from_vec(grid, read_payload(path, grid.len())?)
}

pub fn sinogram_header(s: &Sinogram) -> SinogramHeader {
    let g = s.geometry();
    SinogramHeader {
        n_views: g.n_views(),
        n_channels: g.n_channels,
        n_slices: g.n_slices,
        view_angles_deg: g.view_angles_deg.clone(),
        channel_pitch_mm: g.channel_pitch,
        detector_offset: g.detector_offset,
        dtype: DTYPE.to_string(),
        weights: None,
        seed: None,
        noise_level: None,
    }
}

/// Writes the payload, the sidecar and, unless all weights are one, the weights payload.
pub fn write_sinogram(path: &Path, s: &Sinogram, mut header: SinogramHeader) -> Result<()> {
    write_bytes(path, &encode_f32le(s.data()))?;
    if s.weights().iter().any(|&w| w != 1.0) {
        let wp = weights_path(path);
        write_bytes(&wp, &encode_f32le(s.weights()))?;
        header.weights = wp.file_name().map(|n| n.to_string_lossy().into_owned());
    } else {
        header.weights = None;
    }
    write_json(&sidecar_path(path), &header)
}

pub fn read_sinogram(path: &Path) -> Result<(Sinogram, SinogramHeader)> {
    let side = sidecar_path(path);
    let h: SinogramHeader = read_json(&side)?;
    check_dtype(&h.dtype, &side)?;
    if h.view_angles_deg.len() != h.n_views {
        return config(format!("{}: n_views does not match view_angles_deg", side.display()));
    }
    let geometry = ScanGeometry {
        view_angles_deg: h.view_angles_deg.clone(),
        n_channels: h.n_channels,
        channel_pitch: h.channel_pitch_mm,
        n_slices: h.n_slices,
        detector_offset: h.detector_offset,
    };
    geometry.validate()?;
    let n = geometry.len();
    let data = read_payload(path, n)?;
    let weights = match &h.weights {
        Some(name) => {
            let wp = path.parent().unwrap_or(Path::new("")).join(name);
            read_payload(&wp, n)?
        }
        None => vec![1.0; n],
    };
    Ok((Sinogram::with_weights(geometry, data, weights)?, h))
}
