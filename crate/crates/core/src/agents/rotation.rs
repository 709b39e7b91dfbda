//! In-plane rotations about the slice axis and the weighted rotation average.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Agent, AgentKind};
use crate::error::{config, Result};
use crate::projector::sin_cos_deg;
use crate::volume::Volume;

/// What a bilinear sample outside the slice reads.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RotationBoundary {
    /// Air: out-of-bounds samples are 0.
    #[default]
    Zero,
    /// Nearest edge voxel.
    Clamp,
}

#[derive(Clone, Copy)]
struct Rotation {
    sin: f64,
    cos: f64,
}

/// Bilinear sample at fractional index `(sx, sy)`.
#[inline]
fn sample(img: &[f64], nx: usize, ny: usize, sx: f64, sy: f64, boundary: RotationBoundary) -> f64 {
    let (sx, sy) = match boundary {
        RotationBoundary::Zero => (sx, sy),
        RotationBoundary::Clamp => (sx.clamp(0.0, nx as f64 - 1.0), sy.clamp(0.0, ny as f64 - 1.0)),
    };
    let x0 = sx.floor();
    let y0 = sy.floor();
    if x0 < -1.0 || y0 < -1.0 || x0 >= nx as f64 || y0 >= ny as f64 {
        return 0.0;
    }
    let fx = sx - x0;
    let fy = sy - y0;
    let (x0, y0) = (x0 as isize, y0 as isize);
    let at = |i: isize, j: isize| -> f64 {
        if i < 0 || j < 0 || i >= nx as isize || j >= ny as isize {
            0.0
        } else {
            img[i as usize + nx * j as usize]
        }
    };
    let mut v = 0.0;
    // skip zero-weight taps so lattice-aligned samples are exact
    if fx < 1.0 && fy < 1.0 {
        v += (1.0 - fx) * (1.0 - fy) * at(x0, y0);
    }
    if fx > 0.0 && fy < 1.0 {
        v += fx * (1.0 - fy) * at(x0 + 1, y0);
    }
    if fx < 1.0 && fy > 0.0 {
        v += (1.0 - fx) * fy * at(x0, y0 + 1);
    }
    if fx > 0.0 && fy > 0.0 {
        v += fx * fy * at(x0 + 1, y0 + 1);
    }
    v
}

/// Adds `weight · R(x)` for one slice into `out`.
fn accumulate_rotated(
    src: &[f64],
    out: &mut [f64],
    nx: usize,
    ny: usize,
    rot: Rotation,
    weight: f64,
    boundary: RotationBoundary,
) {
    let cx = 0.5 * (nx as f64 - 1.0);
    let cy = 0.5 * (ny as f64 - 1.0);
    for j in 0..ny {
        let dy = j as f64 - cy;
        for i in 0..nx {
            let dx = i as f64 - cx;
            // output(p) = input(R(−φ) p): content turns counterclockwise by φ
            let sx = rot.cos * dx + rot.sin * dy + cx;
            let sy = -rot.sin * dx + rot.cos * dy + cy;
            out[i + nx * j] += weight * sample(src, nx, ny, sx, sy, boundary);
        }
    }
}

fn weighted_rotations(x: &Volume, angles: &[(f64, f64)], boundary: RotationBoundary) -> Volume {
    let (nx, ny, _) = x.dims();
    let rots: Vec<(Rotation, f64)> = angles
        .iter()
        .map(|&(phi, w)| {
            let (sin, cos) = sin_cos_deg(phi);
            (Rotation { sin, cos }, w)
        })
        .collect();
    let mut out = Volume::zeros(*x.grid());
    let n = x.grid().slice_len();
    if n == 0 {
        return out;
    }
    out.data_mut()
        .par_chunks_mut(n)
        .zip(x.data().par_chunks(n))
        .for_each(|(dst, src)| {
            for &(rot, w) in &rots {
                accumulate_rotated(src, dst, nx, ny, rot, w, boundary);
            }
        });
    out
}

/// Rotates every z-slice by `phi_deg` about the in-plane grid center using
/// bilinear interpolation with zero (air) outside the grid.
pub fn rotate_volume(x: &Volume, phi_deg: f64) -> Volume {
    rotate_volume_with(x, phi_deg, RotationBoundary::Zero)
}

pub fn rotate_volume_with(x: &Volume, phi_deg: f64, boundary: RotationBoundary) -> Volume {
    if phi_deg == 0.0 {
        return x.clone();
    }
    weighted_rotations(x, &[(phi_deg, 1.0)], boundary)
}

/// Hamming weights `γ_n ∝ 0.54 − 0.46 cos(2π(n + J) / 2J)`, `n = −J..=J`,
/// normalized to sum to 1. `J = 0` gives the single weight 1.
pub fn hamming_window(half_count: usize) -> Vec<f64> {
    if half_count == 0 {
        return vec![1.0];
    }
    let j = half_count as f64;
    // evaluate one half and mirror it so the window is exactly symmetric
    let half: Vec<f64> = (0..=half_count)
        .map(|m| {
            let n = m as f64 - j;
            0.54 - 0.46 * (2.0 * PI * (n + j) / (2.0 * j)).cos()
        })
        .collect();
    let raw: Vec<f64> = (0..=2 * half_count)
        .map(|m| half[m.min(2 * half_count - m)])
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|g| g / total).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RotationalAgentConfig {
    /// Half-span of the rotation fan in degrees.
    pub theta_deg: f64,
    /// Number of rotation samples on each side of zero.
    pub half_count: usize,
    pub boundary: RotationBoundary,
}

impl Default for RotationalAgentConfig {
    fn default() -> Self {
        Self {
            theta_deg: 8.0,
            half_count: 4,
            boundary: RotationBoundary::Zero,
        }
    }
}

impl RotationalAgentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta_deg >= 0.0 && self.theta_deg.is_finite()) {
            return config(format!("rotational agent: theta must be >= 0, got {}", self.theta_deg));
        }
        Ok(())
    }

    /// `(angle, weight)` pairs `(n θ/J, γ_n)` for `n = −J..=J`.
    pub fn samples(&self) -> Vec<(f64, f64)> {
        let window = hamming_window(self.half_count);
        let j = self.half_count as isize;
        let step = if j == 0 { 0.0 } else { self.theta_deg / j as f64 };
        window
            .into_iter()
            .enumerate()
            .map(|(m, g)| ((m as isize - j) as f64 * step, g))
            .collect()
    }
}

/// Weighted average of rotated copies of the input (weak rotational
/// invariance about the slice axis).
#[derive(Clone, Debug)]
pub struct RotationalAgent {
    name: String,
    cfg: RotationalAgentConfig,
    samples: Vec<(f64, f64)>,
}

impl RotationalAgent {
    pub fn new(cfg: RotationalAgentConfig) -> Result<Self> {
        cfg.validate()?;
        let samples = cfg.samples();
        let total: f64 = samples.iter().map(|s| s.1).sum();
        assert!((total - 1.0).abs() < 1e-12, "rotation window must sum to 1");
        let n = samples.len();
        for m in 0..n {
            assert!(samples[m].1 >= 0.0 && samples[m].1 == samples[n - 1 - m].1);
        }
        Ok(Self {
            name: "rotation".into(),
            cfg,
            samples,
        })
    }

    pub fn config(&self) -> &RotationalAgentConfig {
        &self.cfg
    }

    /// The `(angle, weight)` samples in use.
    pub fn samples(&self) -> &[(f64, f64)] {
        &self.samples
    }
}

impl Agent for RotationalAgent {
    fn name(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> AgentKind {
        AgentKind::Geometric
    }

    fn apply(&mut self, x: &Volume) -> Result<Volume> {
        if self.samples.iter().all(|s| s.0 == 0.0) {
            return Ok(x.clone());
        }
        Ok(weighted_rotations(x, &self.samples, self.cfg.boundary))
    }
}

pub fn rotational_agent(x: &Volume, cfg: &RotationalAgentConfig) -> Result<Volume> {
    RotationalAgent::new(cfg.clone())?.apply(x)
}
