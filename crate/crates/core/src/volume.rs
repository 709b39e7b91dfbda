//! Dense 3D scalar volumes on a regular grid.
//!
//! Storage is x-fastest, then y, then z: voxel `(i, j, k)` lives at
//! `i + nx * (j + ny * k)`. The slice axis `z` is the rotation axis of the
//! scanner; in-plane pitch is isotropic.

use serde::{Deserialize, Serialize};

use crate::error::{config, Result};

/// Grid metadata shared by a volume and everything reconstructed onto it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    /// In-plane voxel size in mm.
    pub voxel_pitch: f64,
    /// Distance between slices in mm.
    pub slice_pitch: f64,
}

impl Grid {
    pub fn new(nx: usize, ny: usize, nz: usize) -> Self {
        Self {
            nx,
            ny,
            nz,
            voxel_pitch: 1.0,
            slice_pitch: 1.0,
        }
    }

    pub fn with_pitch(mut self, voxel_pitch: f64, slice_pitch: f64) -> Self {
        self.voxel_pitch = voxel_pitch;
        self.slice_pitch = slice_pitch;
        self
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn slice_len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.nx, self.ny, self.nz)
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.nx * (j + self.ny * k)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx == 0 || self.ny == 0 || self.nz == 0 {
            return config(format!("grid dims must be positive, got {:?}", self.dims()));
        }
        if !(self.voxel_pitch > 0.0 && self.voxel_pitch.is_finite()) {
            return config(format!("voxel pitch must be positive, got {}", self.voxel_pitch));
        }
        if !(self.slice_pitch > 0.0 && self.slice_pitch.is_finite()) {
            return config(format!("slice pitch must be positive, got {}", self.slice_pitch));
        }
        Ok(())
    }

    /// Physical in-plane coordinates (mm) of the center of voxel `(i, j)`;
    /// the origin is the in-plane center of the grid.
    #[inline]
    pub fn voxel_center(&self, i: usize, j: usize) -> (f64, f64) {
        (
            (i as f64 - 0.5 * (self.nx as f64 - 1.0)) * self.voxel_pitch,
            (j as f64 - 0.5 * (self.ny as f64 - 1.0)) * self.voxel_pitch,
        )
    }
}

/// The latent image: density per voxel plus its grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    grid: Grid,
    data: Vec<f64>,
}

impl Volume {
    pub fn zeros(grid: Grid) -> Self {
        Self::filled(grid, 0.0)
    }

    pub fn filled(grid: Grid, value: f64) -> Self {
        Self {
            data: vec![value; grid.len()],
            grid,
        }
    }

    pub fn from_vec(grid: Grid, data: Vec<f64>) -> Result<Self> {
        if data.len() != grid.len() {
            return config(format!(
                "volume data has {} entries but grid {:?} needs {}",
                data.len(),
                grid.dims(),
                grid.len()
            ));
        }
        Ok(Self { grid, data })
    }

    /// Builds a volume by evaluating `f(i, j, k)` at every voxel.
    pub fn from_fn(grid: Grid, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(grid.len());
        for k in 0..grid.nz {
            for j in 0..grid.ny {
                for i in 0..grid.nx {
                    data.push(f(i, j, k));
                }
            }
        }
        Self { grid, data }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.grid.dims()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.grid.index(i, j, k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f64) {
        let idx = self.grid.index(i, j, k);
        self.data[idx] = v;
    }

    pub fn slice(&self, k: usize) -> &[f64] {
        let n = self.grid.slice_len();
        &self.data[k * n..(k + 1) * n]
    }

    pub fn slice_mut(&mut self, k: usize) -> &mut [f64] {
        let n = self.grid.slice_len();
        &mut self.data[k * n..(k + 1) * n]
    }

    pub fn same_shape(&self, other: &Volume) -> bool {
        self.dims() == other.dims()
    }

    pub fn check_same_shape(&self, other: &Volume, what: &str) -> Result<()> {
        if !self.same_shape(other) {
            return config(format!(
                "{what}: dims {:?} and {:?} differ",
                self.dims(),
                other.dims()
            ));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn dot(&self, other: &Volume) -> f64 {
        dot(&self.data, &other.data)
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// `max - min` over all voxels; zero for an empty volume.
    pub fn dynamic_range(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        let (lo, hi) = self.min_max();
        hi - lo
    }

    pub fn scale(&mut self, a: f64) {
        self.data.iter_mut().for_each(|v| *v *= a);
    }

    /// `self += a * other`
    pub fn axpy(&mut self, a: f64, other: &Volume) {
        axpy(&mut self.data, a, &other.data);
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Volume {
        Volume {
            grid: self.grid,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise `f(self, other)`. Panics if shapes differ.
    pub fn zip_map(&self, other: &Volume, f: impl Fn(f64, f64) -> f64) -> Volume {
        assert_eq!(self.data.len(), other.data.len());
        Volume {
            grid: self.grid,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    /// Euclidean distance to another volume of the same shape.
    pub fn distance(&self, other: &Volume) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += a * xi);
}
