//! Quadratic data-fidelity machinery: the weighted least-squares forward
//! model term, its proximal map, and the qGGMRF MBIR baseline.

mod prox;
mod qggmrf;

pub use prox::{proximal_solve, ProxOptions, ProxOutcome, ProxSolver};
pub use qggmrf::{qggmrf_reconstruct, QggmrfOptions, QggmrfOutcome, QggmrfPrior, QggmrfSolver};

use crate::error::{config, Result};
use crate::geometry::ScanGeometry;
use crate::projector::{back_project, forward_project};
use crate::sinogram::Sinogram;
use crate::volume::{Grid, Volume};

/// `f(x) = (1 / 2α) ‖y − A x‖²_Λ` with `y` and `Λ` taken from the sinogram.
#[derive(Clone, Debug)]
pub struct ForwardModelTerm {
    sinogram: Sinogram,
    alpha: f64,
}

impl ForwardModelTerm {
    pub fn new(sinogram: Sinogram, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return config(format!("noise scale alpha must be positive, got {alpha}"));
        }
        Ok(Self { sinogram, alpha })
    }

    pub fn sinogram(&self) -> &Sinogram {
        &self.sinogram
    }

    pub fn geometry(&self) -> &ScanGeometry {
        self.sinogram.geometry()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn check_grid(&self, grid: &Grid) -> Result<()> {
        self.geometry().check_compatible(grid)
    }

    /// Residual `e = y − A x`.
    pub fn residual(&self, x: &Volume) -> Result<Vec<f64>> {
        let ax = forward_project(x, self.geometry())?;
        Ok(self
            .sinogram
            .data()
            .iter()
            .zip(ax.data())
            .map(|(y, a)| y - a)
            .collect())
    }

    /// Cost from a precomputed residual.
    pub fn cost_from_residual(&self, e: &[f64]) -> f64 {
        let s: f64 = e
            .iter()
            .zip(self.sinogram.weights())
            .map(|(e, w)| w * e * e)
            .sum();
        0.5 * s / self.alpha
    }

    pub fn cost(&self, x: &Volume) -> Result<f64> {
        Ok(self.cost_from_residual(&self.residual(x)?))
    }

    /// `Aᵀ Λ v / α` for a sinogram-shaped vector `v`.
    pub(crate) fn weighted_backprojection(&self, v: &[f64], grid: &Grid) -> Result<Volume> {
        let weighted: Vec<f64> = v
            .iter()
            .zip(self.sinogram.weights())
            .map(|(v, w)| v * w / self.alpha)
            .collect();
        let s = Sinogram::from_vec(self.geometry().clone(), weighted)?;
        back_project(&s, self.geometry(), grid)
    }

    /// Gradient `Aᵀ Λ (A x − y) / α`.
    pub fn gradient(&self, x: &Volume) -> Result<Volume> {
        let mut e = self.residual(x)?;
        e.iter_mut().for_each(|v| *v = -*v);
        self.weighted_backprojection(&e, x.grid())
    }
}
