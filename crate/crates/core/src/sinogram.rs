use crate::error::{config, Result};
use crate::geometry::ScanGeometry;

/// Measurements `y` with their per-entry weights (the diagonal of the
/// inverse noise covariance).
///
/// Indexed `(view, channel, slice)`, stored channel-fastest, then view,
/// then slice, so each slice is one contiguous 2D sinogram.
#[derive(Clone, Debug, PartialEq)]
pub struct Sinogram {
    geometry: ScanGeometry,
    data: Vec<f64>,
    weights: Vec<f64>,
}

impl Sinogram {
    pub fn zeros(geometry: ScanGeometry) -> Self {
        let n = geometry.len();
        Self {
            geometry,
            data: vec![0.0; n],
            weights: vec![1.0; n],
        }
    }

    /// Unit weights.
    pub fn from_vec(geometry: ScanGeometry, data: Vec<f64>) -> Result<Self> {
        let n = data.len();
        Self::with_weights(geometry, data, vec![1.0; n])
    }

    pub fn with_weights(geometry: ScanGeometry, data: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        geometry.validate()?;
        if data.len() != geometry.len() || weights.len() != geometry.len() {
            return config(format!(
                "sinogram payload sizes ({}, {}) do not match geometry ({} views x {} channels x {} slices)",
                data.len(),
                weights.len(),
                geometry.n_views(),
                geometry.n_channels,
                geometry.n_slices
            ));
        }
        if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return config("sinogram weights must be finite and nonnegative");
        }
        Ok(Self {
            geometry,
            data,
            weights,
        })
    }

    pub fn geometry(&self) -> &ScanGeometry {
        &self.geometry
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn set_weights(&mut self, weights: Vec<f64>) -> Result<()> {
        if weights.len() != self.data.len() {
            return config("weights length does not match sinogram");
        }
        if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return config("sinogram weights must be finite and nonnegative");
        }
        self.weights = weights;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, view: usize, channel: usize, slice: usize) -> usize {
        let g = &self.geometry;
        channel + g.n_channels * (view + g.n_views() * slice)
    }

    #[inline]
    pub fn get(&self, view: usize, channel: usize, slice: usize) -> f64 {
        self.data[self.index(view, channel, slice)]
    }

    pub fn slice_len(&self) -> usize {
        self.geometry.n_views() * self.geometry.n_channels
    }

    pub fn slice(&self, s: usize) -> &[f64] {
        let n = self.slice_len();
        &self.data[s * n..(s + 1) * n]
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.geometry.n_views(), self.geometry.n_channels, self.geometry.n_slices)
    }

    /// Verifies this sinogram was produced by a geometry with the same shape.
    pub fn check_geometry(&self, g: &ScanGeometry) -> Result<()> {
        if self.shape() != (g.n_views(), g.n_channels, g.n_slices) {
            return config(format!(
                "sinogram shape {:?} does not match geometry ({}, {}, {})",
                self.shape(),
                g.n_views(),
                g.n_channels,
                g.n_slices
            ));
        }
        Ok(())
    }

    pub fn dot(&self, other: &Sinogram) -> f64 {
        crate::volume::dot(&self.data, &other.data)
    }
}
