//! NRMSE and SSIM scoring against a reference volume.

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::volume::Volume;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// `‖x − ref‖ / ‖ref‖` over the whole volume.
pub fn nrmse(x: &Volume, reference: &Volume) -> Result<f64> {
    x.check_same_shape(reference, "nrmse")?;
    let denom = reference.norm();
    if denom == 0.0 {
        return config("nrmse: reference volume is identically zero");
    }
    Ok(x.distance(reference) / denom)
}

/// Settings recorded next to every score.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsimSettings {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    /// Dynamic range used in the stabilizing constants.
    pub data_range: f64,
    pub mode: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub nrmse: f64,
    pub ssim: f64,
    pub per_slice_ssim: Vec<f64>,
    pub settings: SsimSettings,
}

/// Dynamic range of `reference`, falling back to 1 for constant volumes.
pub fn data_range(reference: &Volume) -> f64 {
    let l = reference.dynamic_range();
    if l > 0.0 {
        l
    } else {
        warn!("ssim: reference is constant, using data range 1");
        1.0
    }
}

fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = 0.5 * (size as f64 - 1.0);
    let w: Vec<f64> = (0..size)
        .map(|i| (-(i as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian filter, valid positions only.
fn filter_valid(img: &[f64], nx: usize, ny: usize, w: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = w.len();
    let ox = nx + 1 - n;
    let oy = ny + 1 - n;
    let mut rows = vec![0.0; ox * ny];
    for j in 0..ny {
        let src = &img[j * nx..(j + 1) * nx];
        for i in 0..ox {
            rows[i + ox * j] = w.iter().zip(&src[i..i + n]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ox * oy];
    for j in 0..oy {
        for i in 0..ox {
            out[i + ox * j] = w.iter().enumerate().map(|(t, a)| a * rows[i + ox * (j + t)]).sum();
        }
    }
    (out, ox, oy)
}

/// Window-averaged SSIM of one 2D image pair, together with its
/// contrast-structure factor (SSIM without the luminance term).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ssim2d {
    pub ssim: f64,
    pub contrast_structure: f64,
}

/// Mean SSIM of one 2D image pair.
pub fn ssim_2d(a: &[f64], b: &[f64], nx: usize, ny: usize, data_range: f64) -> f64 {
    ssim_2d_parts(a, b, nx, ny, data_range).ssim
}

pub fn ssim_2d_parts(a: &[f64], b: &[f64], nx: usize, ny: usize, data_range: f64) -> Ssim2d {
    let mut size = SSIM_WINDOW.min(nx).min(ny);
    if size % 2 == 0 {
        size -= 1;
    }
    let w = gaussian_window(size, SSIM_SIGMA);
    let c1 = (SSIM_K1 * data_range).powi(2);
    let c2 = (SSIM_K2 * data_range).powi(2);
    let prod = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> { a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect() };
    let (mu_a, ox, oy) = filter_valid(a, nx, ny, &w);
    let (mu_b, _, _) = filter_valid(b, nx, ny, &w);
    let (aa, _, _) = filter_valid(&prod(&|x, _| x * x), nx, ny, &w);
    let (bb, _, _) = filter_valid(&prod(&|_, y| y * y), nx, ny, &w);
    let (ab, _, _) = filter_valid(&prod(&|x, y| x * y), nx, ny, &w);
    let mut total = 0.0;
    let mut total_cs = 0.0;
    for p in 0..ox * oy {
        let (ma, mb) = (mu_a[p], mu_b[p]);
        let va = aa[p] - ma * ma;
        let vb = bb[p] - mb * mb;
        let cov = ab[p] - ma * mb;
        let cs = (2.0 * cov + c2) / (va + vb + c2);
        total_cs += cs;
        total += cs * (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
    }
    let n = (ox * oy) as f64;
    Ssim2d {
        ssim: total / n,
        contrast_structure: total_cs / n,
    }
}

/// Per-slice 2D SSIM with an explicit data range.
pub fn ssim_slices_with_range(x: &Volume, reference: &Volume, range: f64) -> Result<Vec<f64>> {
    x.check_same_shape(reference, "ssim")?;
    let (nx, ny, nz) = x.dims();
    Ok((0..nz)
        .into_par_iter()
        .map(|k| ssim_2d(x.slice(k), reference.slice(k), nx, ny, range))
        .collect())
}

/// Mean over z-slices of 2D SSIM (11x11 Gaussian window, std 1.5), with the
/// stabilizing constants scaled by the dynamic range of `reference`.
pub fn ssim(x: &Volume, reference: &Volume) -> Result<f64> {
    let per = ssim_slices_with_range(x, reference, data_range(reference))?;
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

pub fn evaluate(x: &Volume, reference: &Volume) -> Result<MetricReport> {
    let range = data_range(reference);
    let per_slice_ssim = ssim_slices_with_range(x, reference, range)?;
    let ssim = per_slice_ssim.iter().sum::<f64>() / per_slice_ssim.len() as f64;
    Ok(MetricReport {
        nrmse: nrmse(x, reference)?,
        ssim,
        per_slice_ssim,
        settings: SsimSettings {
            window: SSIM_WINDOW,
            sigma: SSIM_SIGMA,
            k1: SSIM_K1,
            k2: SSIM_K2,
            data_range: range,
            mode: "mean of per-slice 2D SSIM over z, valid window positions".into(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Grid;

    fn ramp() -> Volume {
        Volume::from_fn(Grid::new(20, 18, 3), |i, j, k| ((i * 3 + j * 5 + k) % 7) as f64 + 0.1 * i as f64)
    }

    #[test]
    fn nrmse_definitions() {
        let r = ramp();
        assert_eq!(nrmse(&r, &r).unwrap(), 0.0);
        assert!((nrmse(&Volume::zeros(*r.grid()), &r).unwrap() - 1.0).abs() < 1e-15);
        assert!((nrmse(&r.map(|v| 2.0 * v), &r).unwrap() - 1.0).abs() < 1e-15);
        assert!(nrmse(&r, &Volume::zeros(*r.grid())).is_err());
    }

    #[test]
    fn ssim_identity_and_shift() {
        let r = ramp();
        assert!((ssim(&r, &r).unwrap() - 1.0).abs() < 1e-12);
        let up = r.map(|v| v + 3.0);
        assert!((ssim(&up, &up).unwrap() - 1.0).abs() < 1e-12);
        // data range, hence both constants, are shift invariant; so is the
        // contrast-structure factor, which only sees mean-subtracted moments
        assert_eq!(data_range(&r), data_range(&up));
        let x = r.map(|v| v + 0.3 * (v * 7.0).sin());
        let (nx, ny, _) = r.dims();
        let base = ssim_2d_parts(x.slice(0), r.slice(0), nx, ny, 5.0);
        let xs = x.map(|v| v + 3.0);
        let shifted = ssim_2d_parts(xs.slice(0), up.slice(0), nx, ny, 5.0);
        assert!((base.contrast_structure - shifted.contrast_structure).abs() < 1e-9);
    }

    #[test]
    fn constant_reference_uses_unit_range() {
        let c = Volume::filled(Grid::new(12, 12, 1), 2.0);
        assert_eq!(data_range(&c), 1.0);
        assert!((ssim(&c, &c).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn small_slices_shrink_window() {
        let v = Volume::from_fn(Grid::new(6, 8, 1), |i, j, _| (i + j) as f64);
        assert!((ssim(&v, &v).unwrap() - 1.0).abs() < 1e-12);
    }
}
