//! Cracked-cylinder phantom and calibrated measurement noise.
//!
//! Crack membership is decided at voxel centers with no anti-aliasing, so a
//! crack mask can be reproduced voxel for voxel from its geometric definition.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::projector::sin_cos_deg;
use crate::sinogram::Sinogram;
use crate::volume::{Grid, Volume};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CrackKind {
    /// Planar crack running outward from the axis at azimuth `angle_deg`.
    Radial,
    /// Planar crack whose in-plane normal points along `angle_deg`, offset
    /// from the axis by `offset` voxels.
    Transverse,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrackSpec {
    pub kind: CrackKind,
    pub angle_deg: f64,
    /// Full crack thickness in voxels.
    pub width: f64,
    /// Radial range `[r0, r1]` in voxels (radial cracks only). Defaults to the whole radius.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radial_range: Option<[f64; 2]>,
    /// Half-open slice range `[k0, k1)`. Defaults to all slices.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slice_range: Option<[usize; 2]>,
    /// Signed distance of a transverse crack plane from the axis, in voxels.
    #[serde(default)]
    pub offset: f64,
    pub label: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConcentricCrack {
    /// Mid-radius of the annulus in voxels.
    pub radius: f64,
    pub width: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slice_range: Option<[usize; 2]>,
    #[serde(default = "default_concentric_label")]
    pub label: u8,
}

fn default_concentric_label() -> u8 {
    5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    /// Cylinder radius in voxels.
    pub cylinder_radius: f64,
    pub density: f64,
    #[serde(default = "default_pitch")]
    pub voxel_pitch_mm: f64,
    #[serde(default = "default_pitch")]
    pub slice_pitch_mm: f64,
    #[serde(default)]
    pub cracks: Vec<CrackSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub concentric_crack: Option<ConcentricCrack>,
}

fn default_pitch() -> f64 {
    1.0
}

impl Default for PhantomSpec {
    /// 121 x 121 x 100 cylinder with radial cracks 1 and 3 at 90 degrees,
    /// 2 and 4 at 234 degrees, and concentric crack 5. Widths and extents are
    /// stand-ins; only the dims and crack azimuths are fixed.
    fn default() -> Self {
        let radial = |angle_deg: f64, r0: f64, r1: f64, label: u8| CrackSpec {
            kind: CrackKind::Radial,
            angle_deg,
            width: 1.0,
            radial_range: Some([r0, r1]),
            slice_range: None,
            offset: 0.0,
            label,
        };
        Self {
            dims: [121, 121, 100],
            cylinder_radius: 50.0,
            density: 1.0,
            voxel_pitch_mm: 1.0,
            slice_pitch_mm: 1.0,
            cracks: vec![
                radial(90.0, 5.0, 25.0, 1),
                radial(234.0, 5.0, 25.0, 2),
                radial(90.0, 32.0, 48.0, 3),
                radial(234.0, 32.0, 48.0, 4),
            ],
            concentric_crack: Some(ConcentricCrack {
                radius: 29.0,
                width: 1.0,
                slice_range: None,
                label: 5,
            }),
        }
    }
}

impl PhantomSpec {
    /// Plain cylinder with no cracks.
    pub fn cylinder(dims: [usize; 3], radius: f64, density: f64) -> Self {
        Self {
            dims,
            cylinder_radius: radius,
            density,
            voxel_pitch_mm: 1.0,
            slice_pitch_mm: 1.0,
            cracks: Vec::new(),
            concentric_crack: None,
        }
    }

    pub fn grid(&self) -> Grid {
        Grid::new(self.dims[0], self.dims[1], self.dims[2])
            .with_pitch(self.voxel_pitch_mm, self.slice_pitch_mm)
    }

    pub fn n_cracks(&self) -> usize {
        self.cracks.len() + usize::from(self.concentric_crack.is_some())
    }

    pub fn validate(&self) -> Result<()> {
        let grid = self.grid();
        grid.validate()?;
        let r = self.cylinder_radius;
        let limit = 0.5 * self.dims[0].min(self.dims[1]) as f64;
        if !(r > 0.0 && r <= limit) {
            return config(format!("cylinder radius {r} must be in (0, {limit}]"));
        }
        if !self.density.is_finite() {
            return config("density must be finite");
        }
        let check_slices = |range: &Option<[usize; 2]>, label: u8| -> Result<()> {
            if let Some([k0, k1]) = *range {
                if k0 >= k1 || k1 > self.dims[2] {
                    return config(format!("crack {label}: slice range [{k0}, {k1}) is invalid"));
                }
            }
            Ok(())
        };
        for c in &self.cracks {
            if !(0.0..360.0).contains(&c.angle_deg) {
                return config(format!("crack {}: angle {} not in [0, 360)", c.label, c.angle_deg));
            }
            if !(c.width >= 1.0) {
                return config(format!("crack {}: width must be at least 1 voxel", c.label));
            }
            check_slices(&c.slice_range, c.label)?;
            match c.kind {
                CrackKind::Radial => {
                    let [r0, r1] = c.radial_range.unwrap_or([0.0, r]);
                    if !(0.0 <= r0 && r0 < r1) {
                        return config(format!("crack {}: radial range [{r0}, {r1}] is invalid", c.label));
                    }
                    if r1 > r {
                        return config(format!("crack {} extends outside the cylinder", c.label));
                    }
                }
                CrackKind::Transverse => {
                    if c.offset.abs() + 0.5 * c.width > r {
                        return config(format!("crack {} lies outside the cylinder", c.label));
                    }
                }
            }
        }
        if let Some(cc) = &self.concentric_crack {
            if !(cc.width >= 1.0) {
                return config("concentric crack width must be at least 1 voxel");
            }
            if !(cc.radius > 0.5 * cc.width) || cc.radius + 0.5 * cc.width > r {
                return config("concentric crack lies outside the cylinder");
            }
            check_slices(&cc.slice_range, cc.label)?;
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| crate::Error::Config(format!("phantom spec: {e}")))
    }
}

fn in_slices(range: &Option<[usize; 2]>, k: usize) -> bool {
    range.is_none_or(|[k0, k1]| k0 <= k && k < k1)
}

impl CrackSpec {
    /// Membership test at in-plane position `(x, y)` (voxels from the axis), slice `k`.
    pub fn contains(&self, x: f64, y: f64, k: usize, cylinder_radius: f64) -> bool {
        if !in_slices(&self.slice_range, k) {
            return false;
        }
        let (s, c) = sin_cos_deg(self.angle_deg);
        let along = x * c + y * s;
        let across = -x * s + y * c;
        match self.kind {
            CrackKind::Radial => {
                let [r0, r1] = self.radial_range.unwrap_or([0.0, cylinder_radius]);
                along >= r0 && along <= r1 && across.abs() <= 0.5 * self.width
            }
            CrackKind::Transverse => (along - self.offset).abs() <= 0.5 * self.width,
        }
    }
}

impl ConcentricCrack {
    pub fn contains(&self, x: f64, y: f64, k: usize) -> bool {
        in_slices(&self.slice_range, k) && ((x * x + y * y).sqrt() - self.radius).abs() <= 0.5 * self.width
    }
}

/// Uniform cylinder about the slice axis with cracks cut out as air.
pub fn make_cracked_cylinder(spec: &PhantomSpec) -> Result<Volume> {
    spec.validate()?;
    let grid = spec.grid();
    let cx = 0.5 * (grid.nx as f64 - 1.0);
    let cy = 0.5 * (grid.ny as f64 - 1.0);
    let r2 = spec.cylinder_radius * spec.cylinder_radius;
    Ok(Volume::from_fn(grid, |i, j, k| {
        let x = i as f64 - cx;
        let y = j as f64 - cy;
        if x * x + y * y > r2 {
            return 0.0;
        }
        let cracked = spec
            .cracks
            .iter()
            .any(|c| c.contains(x, y, k, spec.cylinder_radius))
            || spec.concentric_crack.as_ref().is_some_and(|cc| cc.contains(x, y, k));
        if cracked {
            0.0
        } else {
            spec.density
        }
    }))
}

/// What "signal strength" the relative noise level is measured against.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignalReference {
    /// Root mean square of the nonzero noiseless projections.
    #[default]
    Rms,
    /// Largest absolute projection value.
    Peak,
    /// Mean absolute value of the nonzero projections.
    Mean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub relative_level: f64,
    pub seed: u64,
    #[serde(default)]
    pub reference: SignalReference,
}

impl NoiseModel {
    pub fn new(relative_level: f64, seed: u64) -> Self {
        Self {
            relative_level,
            seed,
            reference: SignalReference::Rms,
        }
    }

    /// Noise standard deviation for this sinogram.
    pub fn std_for(&self, s: &Sinogram) -> f64 {
        let nonzero = s.data().iter().filter(|v| **v != 0.0);
        let strength = match self.reference {
            SignalReference::Rms => {
                let (sum, n) = nonzero.fold((0.0, 0usize), |(a, n), v| (a + v * v, n + 1));
                if n == 0 { 0.0 } else { (sum / n as f64).sqrt() }
            }
            SignalReference::Peak => s.data().iter().fold(0.0f64, |m, v| m.max(v.abs())),
            SignalReference::Mean => {
                let (sum, n) = nonzero.fold((0.0, 0usize), |(a, n), v| (a + v.abs(), n + 1));
                if n == 0 { 0.0 } else { sum / n as f64 }
            }
        };
        self.relative_level * strength
    }
}

/// Adds seeded i.i.d. Gaussian noise and sets every weight to `1 / variance`.
///
/// With a zero level the data is untouched and the weights are set to one.
pub fn add_noise(s: &Sinogram, m: &NoiseModel) -> Result<Sinogram> {
    if !(m.relative_level >= 0.0 && m.relative_level.is_finite()) {
        return config(format!("noise level must be nonnegative, got {}", m.relative_level));
    }
    let std = m.std_for(s);
    if std == 0.0 {
        let mut out = s.clone();
        out.set_weights(vec![1.0; s.len()])?;
        return Ok(out);
    }
    let normal = Normal::new(0.0, std).expect("std is positive and finite");
    let mut rng = ChaCha20Rng::seed_from_u64(m.seed);
    let data = s.data().iter().map(|v| v + normal.sample(&mut rng)).collect();
    Sinogram::with_weights(s.geometry().clone(), data, vec![1.0 / (std * std); s.len()])
}
