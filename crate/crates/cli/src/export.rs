use std::fs;
use std::path::{Path, PathBuf};

use image::GrayImage;
use macect::Volume;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Display mapping of an 8-bit export: `low` maps to 0 and `high` to 255.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub low: f64,
    pub high: f64,
    /// `truth-range` or `percentile-1-99`.
    pub source: String,
}

impl Window {
    /// Full range of the ground truth.
    pub fn from_truth(truth: &Volume) -> Self {
        let (low, high) = truth.min_max();
        Self {
            low,
            high,
            source: "truth-range".into(),
        }
        .widened()
    }

    /// 1st to 99th percentile of `v`.
    pub fn from_percentiles(v: &Volume) -> Self {
        let mut sorted = v.data().to_vec();
        sorted.sort_by(f64::total_cmp);
        let at = |p: f64| sorted[((sorted.len() - 1) as f64 * p).round() as usize];
        Self {
            low: at(0.01),
            high: at(0.99),
            source: "percentile-1-99".into(),
        }
        .widened()
    }

    /// Truth range when a truth is known, percentiles of `v` otherwise.
    pub fn choose(v: &Volume, truth: Option<&Volume>) -> Self {
        match truth {
            Some(t) => Self::from_truth(t),
            None => Self::from_percentiles(v),
        }
    }

    fn widened(mut self) -> Self {
        if !(self.high > self.low) {
            self.high = self.low + 1.0;
        }
        self
    }

    pub fn gray(&self, value: f64) -> u8 {
        let t = ((value - self.low) / (self.high - self.low)).clamp(0.0, 1.0);
        (255.0 * t).round() as u8
    }
}

/// Slice `k` as an 8-bit image, x along columns and y along rows.
pub fn slice_image(v: &Volume, k: usize, window: &Window) -> GrayImage {
    let (nx, ny, _) = v.dims();
    let s = v.slice(k);
    GrayImage::from_fn(nx as u32, ny as u32, |x, y| image::Luma([window.gray(s[x as usize + nx * y as usize])]))
}

/// Writes `slice_KKK.png` for every requested slice (the middle one when empty).
pub fn export_slices(dir: &Path, v: &Volume, slices: &[usize], window: &Window) -> CliResult<Vec<PathBuf>> {
    let nz = v.dims().2;
    let chosen = if slices.is_empty() { vec![nz / 2] } else { slices.to_vec() };
    chosen
        .into_iter()
        .map(|k| {
            if k >= nz {
                return Err(CliError::Config(format!("png slice {k} out of range (volume has {nz} slices)")));
            }
            let path = dir.join(format!("slice_{k:03}.png"));
            slice_image(v, k, window)
                .save(&path)
                .map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))?;
            Ok(path)
        })
        .collect()
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| CliError::Config(format!("cannot serialize {}: {e}", path.display())))?;
    text.push('\n');
    write_text(path, &text)
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))
}

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::Config(format!("cannot create {}: {e}", dir.display())))
}

/// File names relative to `dir`, for manifests.
pub fn relative_names(dir: &Path, files: &[PathBuf]) -> Vec<String> {
    files
        .iter()
        .map(|f| f.strip_prefix(dir).unwrap_or(f).to_string_lossy().into_owned())
        .collect()
}
