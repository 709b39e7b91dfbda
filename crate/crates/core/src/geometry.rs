use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::volume::Grid;

/// Parallel-beam acquisition: views rotate in the (x, y) plane about the
/// slice axis, one detector row per slice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanGeometry {
    pub view_angles_deg: Vec<f64>,
    pub n_channels: usize,
    #[serde(rename = "channel_pitch_mm")]
    pub channel_pitch: f64,
    pub n_slices: usize,
    /// Shift of the detector center, in channels.
    #[serde(default)]
    pub detector_offset: f64,
}

/// View angles of the four-view flash x-ray scanner.
pub const FOUR_VIEW_ANGLES_DEG: [f64; 4] = [18.0, 162.0, 234.0, 306.0];

impl ScanGeometry {
    pub fn new(view_angles_deg: Vec<f64>, n_channels: usize, channel_pitch: f64, n_slices: usize) -> Self {
        Self {
            view_angles_deg,
            n_channels,
            channel_pitch,
            n_slices,
            detector_offset: 0.0,
        }
    }

    /// Four-view geometry with a detector wide enough to cover the grid diagonal.
    pub fn four_view(grid: &Grid) -> Self {
        Self::new(
            FOUR_VIEW_ANGLES_DEG.to_vec(),
            covering_channels(grid),
            grid.voxel_pitch,
            grid.nz,
        )
    }

    /// `n_views` equally spaced angles over [0, 180).
    pub fn equiangular(grid: &Grid, n_views: usize) -> Self {
        let angles = (0..n_views)
            .map(|v| 180.0 * v as f64 / n_views as f64)
            .collect();
        Self::new(angles, covering_channels(grid), grid.voxel_pitch, grid.nz)
    }

    pub fn n_views(&self) -> usize {
        self.view_angles_deg.len()
    }

    pub fn len(&self) -> usize {
        self.n_views() * self.n_channels * self.n_slices
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Signed detector coordinate (mm) of the center of channel `c`.
    #[inline]
    pub fn channel_position(&self, c: usize) -> f64 {
        (c as f64 - 0.5 * (self.n_channels as f64 - 1.0) + self.detector_offset) * self.channel_pitch
    }

    /// Fractional channel index of detector coordinate `t` (mm).
    #[inline]
    pub fn channel_coordinate(&self, t: f64) -> f64 {
        t / self.channel_pitch + 0.5 * (self.n_channels as f64 - 1.0) - self.detector_offset
    }

    pub fn validate(&self) -> Result<()> {
        if self.view_angles_deg.is_empty() {
            return config("scan geometry needs at least one view");
        }
        if self.view_angles_deg.iter().any(|a| !a.is_finite()) {
            return config("view angles must be finite");
        }
        if self.n_channels == 0 || self.n_slices == 0 {
            return config("scan geometry needs positive channel and slice counts");
        }
        if !(self.channel_pitch > 0.0 && self.channel_pitch.is_finite()) {
            return config(format!("channel pitch must be positive, got {}", self.channel_pitch));
        }
        if !self.detector_offset.is_finite() {
            return config("detector offset must be finite");
        }
        Ok(())
    }

    /// Checks that this geometry can image `grid`.
    pub fn check_compatible(&self, grid: &Grid) -> Result<()> {
        self.validate()?;
        grid.validate()?;
        if self.n_slices != grid.nz {
            return config(format!(
                "geometry has {} slices but volume has nz = {}",
                self.n_slices, grid.nz
            ));
        }
        let span = self.n_channels as f64 * self.channel_pitch;
        let width = grid.nx.max(grid.ny) as f64 * grid.voxel_pitch;
        if span + 1e-9 * width < width {
            return config(format!(
                "detector spans {span} mm but the volume is {width} mm wide"
            ));
        }
        Ok(())
    }
}

/// Smallest odd channel count whose detector covers the in-plane diagonal.
fn covering_channels(grid: &Grid) -> usize {
    let diag = ((grid.nx * grid.nx + grid.ny * grid.ny) as f64).sqrt().ceil() as usize;
    diag | 1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn channel_positions_are_centered() {
        let g = ScanGeometry::new(vec![0.0], 5, 2.0, 1);
        assert_eq!(g.channel_position(2), 0.0);
        assert_eq!(g.channel_position(0), -4.0);
        assert_eq!(g.channel_coordinate(g.channel_position(3)), 3.0);
    }

    #[test]
    fn narrow_detector_is_rejected() {
        let grid = Grid::new(10, 10, 2);
        let g = ScanGeometry::new(vec![0.0], 9, 1.0, 2);
        assert!(g.check_compatible(&grid).is_err());
        let g = ScanGeometry::new(vec![0.0], 10, 1.0, 3);
        assert!(g.check_compatible(&grid).is_err());
        let g = ScanGeometry::new(vec![0.0], 10, 1.0, 2);
        assert!(g.check_compatible(&grid).is_ok());
    }

    #[test]
    fn four_view_covers_diagonal() {
        let grid = Grid::new(121, 121, 100);
        let g = ScanGeometry::four_view(&grid);
        assert_eq!(g.view_angles_deg, vec![18.0, 162.0, 234.0, 306.0]);
        assert_eq!(g.n_channels, 173);
        g.check_compatible(&grid).unwrap();
    }

    #[test]
    fn empty_views_rejected() {
        assert!(ScanGeometry::new(vec![], 4, 1.0, 1).validate().is_err());
    }
}
