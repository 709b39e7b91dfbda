//! Proximal map of the forward model term:
//! `argmin_z f(z) + ‖z − w‖² / (2σ²)`.
//!
//! The objective is a strictly convex quadratic with normal equations
//! `(AᵀΛA/α + I/σ²) z = AᵀΛy/α + w/σ²`. Both solvers stop on the gradient
//! norm relative to the right-hand side, so the answer does not depend on
//! the starting point beyond that tolerance.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ForwardModelTerm;
use crate::error::{config, Result};
use crate::projector::SliceColumns;
use crate::volume::{dot, Volume};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProxSolver {
    /// Raster-order iterative coordinate descent, one sweep per iteration.
    #[default]
    Icd,
    /// Conjugate gradient on the normal equations.
    Cg,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProxOptions {
    pub solver: ProxSolver,
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for ProxOptions {
    fn default() -> Self {
        Self {
            solver: ProxSolver::Icd,
            tol: 1e-6,
            max_iters: 200,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ProxOutcome {
    pub volume: Volume,
    pub iterations: usize,
    /// Final `‖∇‖ / ‖b‖`.
    pub relative_gradient: f64,
    pub converged: bool,
}

/// Solves the proximal problem starting from `start` (or `w` if `None`).
///
/// Hitting `max_iters` is not an error: the outcome reports `converged = false`
/// together with the final relative gradient.
pub fn proximal_solve(
    fm: &ForwardModelTerm,
    w: &Volume,
    sigma: f64,
    opts: &ProxOptions,
    start: Option<&Volume>,
) -> Result<ProxOutcome> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return config(format!("proximal scale sigma must be positive, got {sigma}"));
    }
    fm.check_grid(w.grid())?;
    if let Some(s) = start {
        s.check_same_shape(w, "proximal start")?;
    }
    let inv_s2 = 1.0 / (sigma * sigma);
    // b = AᵀΛy/α + w/σ²
    let mut b = fm.weighted_backprojection(fm.sinogram().data(), w.grid())?;
    b.axpy(inv_s2, w);
    let b_norm = b.norm();
    if b_norm == 0.0 {
        return Ok(ProxOutcome {
            volume: Volume::zeros(*w.grid()),
            iterations: 0,
            relative_gradient: 0.0,
            converged: true,
        });
    }
    let z = start.cloned().unwrap_or_else(|| w.clone());
    match opts.solver {
        ProxSolver::Icd => icd(fm, w, inv_s2, b_norm, z, opts),
        ProxSolver::Cg => cg(fm, inv_s2, &b, b_norm, z, opts),
    }
}

fn hessian_apply(fm: &ForwardModelTerm, inv_s2: f64, x: &Volume) -> Result<Volume> {
    let ax = crate::projector::forward_project(x, fm.geometry())?;
    let mut h = fm.weighted_backprojection(ax.data(), x.grid())?;
    h.axpy(inv_s2, x);
    Ok(h)
}

fn cg(
    fm: &ForwardModelTerm,
    inv_s2: f64,
    b: &Volume,
    b_norm: f64,
    mut z: Volume,
    opts: &ProxOptions,
) -> Result<ProxOutcome> {
    // r = b − H z
    let mut r = b.clone();
    r.axpy(-1.0, &hessian_apply(fm, inv_s2, &z)?);
    let mut p = r.clone();
    let mut rr = r.dot(&r);
    let mut iterations = 0;
    while rr.sqrt() > opts.tol * b_norm && iterations < opts.max_iters {
        let hp = hessian_apply(fm, inv_s2, &p)?;
        let step = rr / p.dot(&hp);
        z.axpy(step, &p);
        r.axpy(-step, &hp);
        let rr_new = r.dot(&r);
        let beta = rr_new / rr;
        rr = rr_new;
        p.scale(beta);
        p.axpy(1.0, &r);
        iterations += 1;
    }
    // report the true gradient, not the recursively updated one
    let mut g = hessian_apply(fm, inv_s2, &z)?;
    g.axpy(-1.0, b);
    let relative_gradient = g.norm() / b_norm;
    Ok(ProxOutcome {
        volume: z,
        iterations,
        relative_gradient,
        converged: relative_gradient <= opts.tol,
    })
}

fn icd(
    fm: &ForwardModelTerm,
    w: &Volume,
    inv_s2: f64,
    b_norm: f64,
    mut z: Volume,
    opts: &ProxOptions,
) -> Result<ProxOutcome> {
    let grid = *w.grid();
    let cols = SliceColumns::new(&grid, fm.geometry())?;
    let inv_alpha = 1.0 / fm.alpha();
    let weights = fm.sinogram().weights();
    let per_sino = fm.sinogram().slice_len();
    let npix = grid.slice_len();

    let mut e = fm.residual(&z)?;
    let gradient = |z: &Volume, e: &[f64]| -> Vec<f64> {
        let mut g = vec![0.0; grid.len()];
        g.par_chunks_mut(npix).enumerate().for_each(|(k, gk)| {
            let ek = &e[k * per_sino..(k + 1) * per_sino];
            let wk = &weights[k * per_sino..(k + 1) * per_sino];
            let zk = z.slice(k);
            let wv = w.slice(k);
            for (p, gp) in gk.iter_mut().enumerate() {
                let mut t = 0.0;
                for &(r, a) in cols.column(p) {
                    let r = r as usize;
                    t += wk[r] * ek[r] * a;
                }
                *gp = -t * inv_alpha + (zk[p] - wv[p]) * inv_s2;
            }
        });
        g
    };
    let g0 = gradient(&z, &e);
    let mut rel = dot(&g0, &g0).sqrt() / b_norm;
    let mut iterations = 0;
    while rel > opts.tol && iterations < opts.max_iters {
        let zdata = z.data_mut();
        zdata
            .par_chunks_mut(npix)
            .zip(e.par_chunks_mut(per_sino))
            .enumerate()
            .for_each(|(k, (zk, ek))| {
                let wk = &weights[k * per_sino..(k + 1) * per_sino];
                let wv = w.slice(k);
                for p in 0..npix {
                    let col = cols.column(p);
                    let mut t1 = 0.0;
                    let mut t2 = 0.0;
                    for &(r, a) in col {
                        let r = r as usize;
                        let la = wk[r] * a;
                        t1 += la * ek[r];
                        t2 += la * a;
                    }
                    let theta1 = -t1 * inv_alpha + (zk[p] - wv[p]) * inv_s2;
                    let theta2 = t2 * inv_alpha + inv_s2;
                    let delta = -theta1 / theta2;
                    if delta != 0.0 {
                        zk[p] += delta;
                        for &(r, a) in col {
                            ek[r as usize] -= delta * a;
                        }
                    }
                }
            });
        iterations += 1;
        let g = gradient(&z, &e);
        rel = dot(&g, &g).sqrt() / b_norm;
    }
    Ok(ProxOutcome {
        volume: z,
        iterations,
        relative_gradient: rel,
        converged: rel <= opts.tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ScanGeometry;
    use crate::projector::forward_project;
    use crate::sinogram::Sinogram;
    use crate::volume::Grid;

    fn problem() -> (ForwardModelTerm, Volume, Grid) {
        let grid = Grid::new(12, 12, 2);
        let g = ScanGeometry::new(vec![18.0, 162.0, 234.0, 306.0], 17, 1.0, 2);
        let truth = Volume::from_fn(grid, |i, j, k| {
            let (x, y) = (i as f64 - 5.5, j as f64 - 5.5);
            if x * x + y * y < 20.0 { 1.0 + 0.1 * k as f64 } else { 0.0 }
        });
        let y = forward_project(&truth, &g).unwrap();
        let w = Volume::from_fn(grid, |i, j, _| ((i + 2 * j) % 3) as f64 * 0.3);
        (ForwardModelTerm::new(y, 1.0).unwrap(), w, grid)
    }

    #[test]
    fn icd_and_cg_agree() {
        let (fm, w, _) = problem();
        let tight = |solver| ProxOptions {
            solver,
            tol: 1e-10,
            max_iters: 5000,
        };
        let a = proximal_solve(&fm, &w, 0.7, &tight(ProxSolver::Icd), None).unwrap();
        let b = proximal_solve(&fm, &w, 0.7, &tight(ProxSolver::Cg), None).unwrap();
        assert!(a.converged && b.converged);
        assert!(a.volume.distance(&b.volume) / b.volume.norm() < 1e-6);
    }

    #[test]
    fn tiny_sigma_returns_w() {
        let (fm, w, _) = problem();
        let out = proximal_solve(&fm, &w, 1e-6, &ProxOptions::default(), None).unwrap();
        assert!(out.volume.distance(&w) / w.norm() < 1e-3);
    }

    #[test]
    fn reports_nonconvergence() {
        let (fm, w, _) = problem();
        let opts = ProxOptions {
            solver: ProxSolver::Icd,
            tol: 1e-14,
            max_iters: 2,
        };
        let out = proximal_solve(&fm, &w, 10.0, &opts, None).unwrap();
        assert!(!out.converged);
        assert_eq!(out.iterations, 2);
        assert!(out.relative_gradient > 1e-14);
    }

    #[test]
    fn rejects_bad_sigma() {
        let (fm, w, _) = problem();
        assert!(proximal_solve(&fm, &w, 0.0, &ProxOptions::default(), None).is_err());
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let (fm, _, grid) = problem();
        let fm0 = ForwardModelTerm::new(Sinogram::zeros(fm.geometry().clone()), 1.0).unwrap();
        let out = proximal_solve(&fm0, &Volume::zeros(grid), 1.0, &ProxOptions::default(), None).unwrap();
        assert_eq!(out.volume.norm(), 0.0);
    }
}
