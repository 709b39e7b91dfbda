//! qGGMRF-regularized MBIR.
//!
//! Minimizes `f(x) + Σ_{s~r} b_sr ρ(x_s − x_r)` over 26-connected voxel pairs
//! with inverse-distance weights `b_sr` normalized to sum to one, and
//!
//! ```text
//! ρ(Δ) = |Δ|^p / (p σx^p) · |Δ/(T σx)|^(q−p) / (1 + |Δ/(T σx)|^(q−p))
//! ```
//!
//! Each voxel update minimizes the exact quadratic data term plus the
//! symmetric-bound quadratic surrogate of every neighbor potential, which
//! touches the potential at the current value. Every update therefore lowers
//! the true cost, so the cost is nonincreasing across passes.

use serde::{Deserialize, Serialize};

use super::ForwardModelTerm;
use crate::error::{config, Result};
use crate::projector::{forward_project, SliceColumns};
use crate::volume::{dot, Grid, Volume};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QggmrfPrior {
    pub p: f64,
    pub q: f64,
    /// Transition threshold, in units of `sigma_x`.
    pub t: f64,
    pub sigma_x: f64,
}

impl Default for QggmrfPrior {
    fn default() -> Self {
        Self {
            p: 2.0,
            q: 1.2,
            t: 1.0,
            sigma_x: 0.05,
        }
    }
}

impl QggmrfPrior {
    pub fn validate(&self) -> Result<()> {
        if !(1.0 <= self.q && self.q < self.p && self.p <= 2.0) {
            return config(format!("qGGMRF needs 1 <= q < p <= 2, got p={} q={}", self.p, self.q));
        }
        if !(self.t > 0.0 && self.sigma_x > 0.0) {
            return config("qGGMRF needs T > 0 and sigma_x > 0");
        }
        Ok(())
    }

    /// The potential `ρ(Δ)`.
    pub fn potential(&self, delta: f64) -> f64 {
        let a = delta.abs();
        if a == 0.0 {
            return 0.0;
        }
        let u = (a / (self.t * self.sigma_x)).powf(self.q - self.p);
        a.powf(self.p) / (self.p * self.sigma_x.powf(self.p)) * u / (1.0 + u)
    }

    /// `ρ'(Δ) / (2Δ)`, the curvature of the symmetric-bound surrogate at `Δ`.
    pub fn surrogate_coefficient(&self, delta: f64) -> f64 {
        // at Δ = 0 this is the p = 2 limit 1 / (2 σx²); floor |Δ| for p < 2
        let a = delta.abs().max(1e-12 * self.sigma_x);
        let u = (a / (self.t * self.sigma_x)).powf(self.q - self.p);
        let lead = if self.p == 2.0 {
            1.0 / (2.0 * self.sigma_x * self.sigma_x)
        } else {
            a.powf(self.p - 2.0) / (2.0 * self.sigma_x.powf(self.p))
        };
        if u.is_infinite() {
            return lead;
        }
        lead * u * (self.q / self.p + u) / ((1.0 + u) * (1.0 + u))
    }
}

/// 26-connected offsets with inverse-distance weights summing to one.
pub(crate) fn neighborhood() -> Vec<([isize; 3], f64)> {
    let mut out = Vec::with_capacity(26);
    for dk in -1isize..=1 {
        for dj in -1isize..=1 {
            for di in -1isize..=1 {
                if (di, dj, dk) == (0, 0, 0) {
                    continue;
                }
                let d2 = (di * di + dj * dj + dk * dk) as f64;
                out.push(([di, dj, dk], 1.0 / d2.sqrt()));
            }
        }
    }
    let total: f64 = out.iter().map(|(_, w)| w).sum();
    out.iter_mut().for_each(|(_, w)| *w /= total);
    out
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum QggmrfSolver {
    /// One raster-order coordinate sweep per pass.
    #[default]
    Icd,
    /// Per pass: rebuild the quadratic surrogate of the whole prior at the
    /// current image and take `inner` conjugate-gradient steps on it.
    Majorize { inner: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QggmrfOptions {
    pub max_passes: usize,
    /// Stop once the relative cost decrease of a pass drops below this.
    pub stop_rel_change: f64,
    #[serde(default)]
    pub solver: QggmrfSolver,
}

impl Default for QggmrfOptions {
    fn default() -> Self {
        Self {
            max_passes: 40,
            stop_rel_change: 1e-6,
            solver: QggmrfSolver::Icd,
        }
    }
}

#[derive(Clone, Debug)]
pub struct QggmrfOutcome {
    pub volume: Volume,
    /// Total cost at the start and after every completed pass.
    pub costs: Vec<f64>,
    pub passes: usize,
}

struct Neighbors {
    offsets: Vec<([isize; 3], f64)>,
}

impl Neighbors {
    /// Calls `f(index, weight)` for every in-bounds neighbor of `(i, j, k)`.
    #[inline]
    fn each(&self, grid: &Grid, i: usize, j: usize, k: usize, mut f: impl FnMut(usize, f64)) {
        for &([di, dj, dk], w) in &self.offsets {
            let (ni, nj, nk) = (i as isize + di, j as isize + dj, k as isize + dk);
            if ni < 0 || nj < 0 || nk < 0 || ni >= grid.nx as isize || nj >= grid.ny as isize || nk >= grid.nz as isize {
                continue;
            }
            f(grid.index(ni as usize, nj as usize, nk as usize), w);
        }
    }
}

/// Prior cost with each unordered pair counted once.
pub fn prior_cost(prior: &QggmrfPrior, x: &Volume) -> f64 {
    let grid = *x.grid();
    let nb = neighborhood();
    let data = x.data();
    let mut total = 0.0;
    for k in 0..grid.nz {
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let s = grid.index(i, j, k);
                for &([di, dj, dk], w) in &nb {
                    let (ni, nj, nk) = (i as isize + di, j as isize + dj, k as isize + dk);
                    if ni < 0 || nj < 0 || nk < 0 || ni >= grid.nx as isize || nj >= grid.ny as isize || nk >= grid.nz as isize {
                        continue;
                    }
                    let r = grid.index(ni as usize, nj as usize, nk as usize);
                    if r > s {
                        total += w * prior.potential(data[s] - data[r]);
                    }
                }
            }
        }
    }
    total
}

/// qGGMRF MBIR starting from `init`.
pub fn qggmrf_reconstruct(
    fm: &ForwardModelTerm,
    prior: &QggmrfPrior,
    init: &Volume,
    opts: &QggmrfOptions,
) -> Result<QggmrfOutcome> {
    prior.validate()?;
    fm.check_grid(init.grid())?;
    let mut x = init.clone();
    let mut e = fm.residual(&x)?;
    let mut costs = vec![fm.cost_from_residual(&e) + prior_cost(prior, &x)];
    let mut passes = 0;
    let cols = match opts.solver {
        QggmrfSolver::Icd => Some(SliceColumns::new(init.grid(), fm.geometry())?),
        QggmrfSolver::Majorize { .. } => None,
    };
    while passes < opts.max_passes {
        match (opts.solver, &cols) {
            (QggmrfSolver::Icd, Some(cols)) => icd_pass(fm, prior, cols, &mut x, &mut e),
            (QggmrfSolver::Majorize { inner }, _) => {
                majorize_pass(fm, prior, &mut x, inner)?;
                e = fm.residual(&x)?;
            }
            _ => unreachable!(),
        }
        passes += 1;
        let cost = fm.cost_from_residual(&e) + prior_cost(prior, &x);
        let prev = *costs.last().expect("initial cost");
        costs.push(cost);
        log::debug!("qggmrf pass {passes}: cost {cost:.6e}");
        if (prev - cost).abs() <= opts.stop_rel_change * prev.abs() {
            break;
        }
    }
    Ok(QggmrfOutcome {
        volume: x,
        costs,
        passes,
    })
}

fn icd_pass(fm: &ForwardModelTerm, prior: &QggmrfPrior, cols: &SliceColumns, x: &mut Volume, e: &mut [f64]) {
    let grid = *x.grid();
    let nb = Neighbors { offsets: neighborhood() };
    let inv_alpha = 1.0 / fm.alpha();
    let weights = fm.sinogram().weights();
    let per_sino = fm.sinogram().slice_len();
    let npix = grid.slice_len();
    for k in 0..grid.nz {
        let base = k * per_sino;
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let p = i + grid.nx * j;
                let s = p + npix * k;
                let col = cols.column(p);
                let mut t1 = 0.0;
                let mut t2 = 0.0;
                for &(r, a) in col {
                    let r = base + r as usize;
                    let la = weights[r] * a;
                    t1 += la * e[r];
                    t2 += la * a;
                }
                let theta1 = -t1 * inv_alpha;
                let theta2 = t2 * inv_alpha;
                let xs = x.data()[s];
                let data = x.data();
                let mut num = 0.0;
                let mut den = 0.0;
                nb.each(&grid, i, j, k, |r, w| {
                    let d = xs - data[r];
                    let c = w * prior.surrogate_coefficient(d);
                    num += c * d;
                    den += c;
                });
                let denom = theta2 + 2.0 * den;
                if denom <= 0.0 {
                    continue;
                }
                let delta = -(theta1 + 2.0 * num) / denom;
                if delta != 0.0 {
                    x.data_mut()[s] = xs + delta;
                    for &(r, a) in col {
                        e[base + r as usize] -= delta * a;
                    }
                }
            }
        }
    }
}

/// Graph Laplacian of the surrogate: `(L v)_s = Σ_r c_sr (v_s − v_r)`, with
/// edge weights stored once per forward offset.
struct SurrogateLaplacian {
    grid: Grid,
    forward: Vec<[isize; 3]>,
    coef: Vec<f64>,
}

impl SurrogateLaplacian {
    fn new(prior: &QggmrfPrior, x: &Volume) -> Self {
        let grid = *x.grid();
        let forward: Vec<([isize; 3], f64)> = neighborhood()
            .into_iter()
            .filter(|([di, dj, dk], _)| (*dk, *dj, *di) > (0, 0, 0))
            .collect();
        let m = forward.len();
        let mut coef = vec![0.0; grid.len() * m];
        let data = x.data();
        for k in 0..grid.nz {
            for j in 0..grid.ny {
                for i in 0..grid.nx {
                    let s = grid.index(i, j, k);
                    for (o, &([di, dj, dk], w)) in forward.iter().enumerate() {
                        let (ni, nj, nk) = (i as isize + di, j as isize + dj, k as isize + dk);
                        if ni < 0 || nj < 0 || nk < 0 || ni >= grid.nx as isize || nj >= grid.ny as isize || nk >= grid.nz as isize {
                            continue;
                        }
                        let r = grid.index(ni as usize, nj as usize, nk as usize);
                        coef[s * m + o] = w * prior.surrogate_coefficient(data[s] - data[r]);
                    }
                }
            }
        }
        Self {
            grid,
            forward: forward.into_iter().map(|(o, _)| o).collect(),
            coef,
        }
    }

    /// `out += scale * L v`
    fn apply_add(&self, v: &[f64], scale: f64, out: &mut [f64]) {
        let g = &self.grid;
        let m = self.forward.len();
        for k in 0..g.nz {
            for j in 0..g.ny {
                for i in 0..g.nx {
                    let s = g.index(i, j, k);
                    for (o, &[di, dj, dk]) in self.forward.iter().enumerate() {
                        let c = self.coef[s * m + o];
                        if c == 0.0 {
                            continue;
                        }
                        let r = g.index(
                            (i as isize + di) as usize,
                            (j as isize + dj) as usize,
                            (k as isize + dk) as usize,
                        );
                        let f = scale * c * (v[s] - v[r]);
                        out[s] += f;
                        out[r] -= f;
                    }
                }
            }
        }
    }
}

fn majorize_pass(fm: &ForwardModelTerm, prior: &QggmrfPrior, x: &mut Volume, inner: usize) -> Result<()> {
    let lap = SurrogateLaplacian::new(prior, x);
    let grid = *x.grid();
    let hess = |v: &Volume| -> Result<Volume> {
        let av = forward_project(v, fm.geometry())?;
        let mut h = fm.weighted_backprojection(av.data(), &grid)?;
        lap.apply_add(v.data(), 2.0, h.data_mut());
        Ok(h)
    };
    // gradient of the surrogate at x equals the true gradient
    let mut r = fm.gradient(x)?;
    lap.apply_add(x.data(), 2.0, r.data_mut());
    r.scale(-1.0);
    let mut p = r.clone();
    let mut rr = dot(r.data(), r.data());
    for _ in 0..inner {
        if rr == 0.0 {
            break;
        }
        let hp = hess(&p)?;
        let php = p.dot(&hp);
        if php <= 0.0 {
            break;
        }
        let step = rr / php;
        x.axpy(step, &p);
        r.axpy(-step, &hp);
        let rr_new = r.dot(&r);
        p.scale(rr_new / rr);
        p.axpy(1.0, &r);
        rr = rr_new;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_sum_to_one_and_are_inverse_distance() {
        let nb = neighborhood();
        assert_eq!(nb.len(), 26);
        let total: f64 = nb.iter().map(|(_, w)| w).sum();
        assert!((total - 1.0).abs() < 1e-15);
        let face = nb.iter().find(|(o, _)| *o == [1, 0, 0]).unwrap().1;
        let corner = nb.iter().find(|(o, _)| *o == [1, 1, 1]).unwrap().1;
        assert!((face / corner - 3f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn potential_is_even_and_convex_ish() {
        let prior = QggmrfPrior::default();
        for &d in &[0.01, 0.05, 0.3, 2.0] {
            assert_eq!(prior.potential(d), prior.potential(-d));
            assert!(prior.potential(d) > 0.0);
        }
        // convexity along a grid of points
        let xs: Vec<f64> = (-200..=200).map(|i| i as f64 * 0.002).collect();
        for w in xs.windows(3) {
            let (a, b, c) = (prior.potential(w[0]), prior.potential(w[1]), prior.potential(w[2]));
            assert!(a + c - 2.0 * b >= -1e-12);
        }
    }

    #[test]
    fn surrogate_coefficient_matches_derivative() {
        let prior = QggmrfPrior {
            sigma_x: 0.3,
            ..Default::default()
        };
        for &d in &[0.02, 0.2, 0.9, -1.7] {
            let h = 1e-6;
            let deriv = (prior.potential(d + h) - prior.potential(d - h)) / (2.0 * h);
            let coef = prior.surrogate_coefficient(d);
            assert!((coef - deriv / (2.0 * d)).abs() < 1e-6 * coef.abs().max(1.0));
        }
        // continuous at zero for p = 2
        let c0 = prior.surrogate_coefficient(0.0);
        assert!((c0 * 2.0 * 0.09 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn surrogate_majorizes() {
        let prior = QggmrfPrior::default();
        for &d0 in &[0.01, 0.1, 0.5] {
            let c = prior.surrogate_coefficient(d0);
            for i in -50..=50 {
                let d = i as f64 * 0.02;
                let bound = prior.potential(d0) + c * (d * d - d0 * d0);
                assert!(bound >= prior.potential(d) - 1e-12);
            }
        }
    }

    #[test]
    fn invalid_shapes_rejected() {
        let bad = QggmrfPrior {
            p: 1.1,
            q: 1.2,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
