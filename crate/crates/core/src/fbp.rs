//! Filtered back projection.

use std::f64::consts::PI;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::geometry::ScanGeometry;
use crate::projector::sin_cos_deg;
use crate::sinogram::Sinogram;
use crate::volume::{Grid, Volume};

/// How detector rows are extended before circular filtering.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    Zero,
    /// Replicate the first and last channel. Identical to zero padding when the
    /// object lies inside the field of view, and exact for constant rows.
    #[default]
    Edge,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FbpConfig {
    /// Raised-cosine roll-off cutoff as a fraction of Nyquist; `None` is pure Ram-Lak.
    #[serde(default)]
    pub apodization: Option<f64>,
    #[serde(default)]
    pub padding: Padding,
}

impl Default for FbpConfig {
    fn default() -> Self {
        Self {
            apodization: None,
            padding: Padding::Edge,
        }
    }
}

impl FbpConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(c) = self.apodization {
            if !(c > 0.0 && c <= 1.0) {
                return config(format!("apodization cutoff must be in (0, 1], got {c}"));
            }
        }
        Ok(())
    }
}

/// Padded FFT length for `n` detector channels: four times the next power
/// of two, so channel lags stay below a quarter of the padded length.
pub fn padded_len(n: usize) -> usize {
    4 * n.next_power_of_two()
}

/// Frequency response on the padded grid: the DFT of the band-limited
/// spatial ramp kernel (`1/4τ` at 0, `−1/(π²n²τ)` at odd lags, 0 at even
/// lags) times the optional raised-cosine window. The truncated kernel sums to
/// a small positive residual; it is cancelled uniformly over lags beyond
/// `n_padded / 4`, which never couple two detector channels, so the response
/// is exactly zero at DC while filtering of the measured row is unchanged.
pub fn filter_response(n_padded: usize, channel_pitch: f64, apodization: Option<f64>) -> Vec<f64> {
    let tau = channel_pitch;
    let mut kernel: Vec<Complex<f64>> = (0..n_padded)
        .map(|m| {
            let lag = m.min(n_padded - m);
            let v = if lag == 0 {
                0.25 / tau
            } else if lag % 2 == 1 {
                -1.0 / (PI * PI * (lag * lag) as f64 * tau)
            } else {
                0.0
            };
            Complex::new(v, 0.0)
        })
        .collect();
    let dead: Vec<usize> = (0..n_padded).filter(|&m| 4 * m.min(n_padded - m) > n_padded).collect();
    if !dead.is_empty() {
        let residual = kernel.iter().map(|c| c.re).sum::<f64>() / dead.len() as f64;
        dead.iter().for_each(|&m| kernel[m].re -= residual);
    }
    FftPlanner::<f64>::new().plan_fft_forward(n_padded).process(&mut kernel);
    let nyquist = 0.5 / channel_pitch;
    (0..n_padded)
        .map(|k| {
            let mirror = (n_padded - k) % n_padded;
            let ramp = 0.5 * (kernel[k].re + kernel[mirror].re);
            let f = k.min(n_padded - k) as f64 / (n_padded as f64 * channel_pitch);
            let window = match apodization {
                None => 1.0,
                Some(cut) => {
                    let fc = cut * nyquist;
                    if f >= fc {
                        0.0
                    } else {
                        0.5 + 0.5 * (PI * f / fc).cos()
                    }
                }
            };
            ramp * window
        })
        .collect()
}

/// Ramp-filters every detector row of `s`.
pub fn filter_sinogram(s: &Sinogram, cfg: &FbpConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let g = s.geometry();
    let nc = g.n_channels;
    let np = padded_len(nc);
    let response = filter_response(np, g.channel_pitch, cfg.apodization);
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(np);
    let inv = planner.plan_fft_inverse(np);
    let scale = 1.0 / np as f64;
    let mut out = vec![0.0; s.len()];
    out.par_chunks_mut(nc)
        .zip(s.data().par_chunks(nc))
        .for_each(|(dst, row)| {
            let mut buf = vec![Complex::new(0.0, 0.0); np];
            let (first, last) = (row[0], row[nc - 1]);
            for (p, b) in buf.iter_mut().enumerate() {
                // channels sit at the start; padding wraps around both ends
                let v = if p < nc {
                    row[p]
                } else {
                    match cfg.padding {
                        Padding::Zero => 0.0,
                        Padding::Edge if p < nc + (np - nc) / 2 => last,
                        Padding::Edge => first,
                    }
                };
                *b = Complex::new(v, 0.0);
            }
            fwd.process(&mut buf);
            buf.iter_mut().zip(&response).for_each(|(b, h)| *b *= h);
            inv.process(&mut buf);
            dst.iter_mut().zip(&buf).for_each(|(d, b)| *d = b.re * scale);
        });
    Ok(out)
}

/// Pixel-driven linear-interpolation back projection with weight `pi / n_views`.
fn backproject_filtered(filtered: &[f64], g: &ScanGeometry, grid: &Grid) -> Volume {
    let nc = g.n_channels;
    let nv = g.n_views();
    let weight = PI / nv as f64;
    let trig: Vec<(f64, f64)> = g.view_angles_deg.iter().map(|&a| sin_cos_deg(a)).collect();
    let mut data = vec![0.0; grid.len()];
    data.par_chunks_mut(grid.slice_len())
        .enumerate()
        .for_each(|(k, out)| {
            let sino = &filtered[k * nv * nc..(k + 1) * nv * nc];
            for j in 0..grid.ny {
                for i in 0..grid.nx {
                    let (x, y) = grid.voxel_center(i, j);
                    let mut acc = 0.0;
                    for (v, &(sin, cos)) in trig.iter().enumerate() {
                        let u = g.channel_coordinate(x * cos + y * sin);
                        let u0 = u.floor();
                        if u0 < -1.0 || u0 >= nc as f64 {
                            continue;
                        }
                        let frac = u - u0;
                        let u0 = u0 as isize;
                        let row = &sino[v * nc..(v + 1) * nc];
                        if u0 >= 0 {
                            acc += (1.0 - frac) * row[u0 as usize];
                        }
                        if u0 + 1 < nc as isize {
                            acc += frac * row[(u0 + 1) as usize];
                        }
                    }
                    out[i + grid.nx * j] = weight * acc;
                }
            }
        });
    Volume::from_vec(*grid, data).expect("grid-sized buffer")
}

/// Per-slice filtered back projection onto `grid`. Negative values are kept.
pub fn fbp_reconstruct(s: &Sinogram, g: &ScanGeometry, grid: &Grid, cfg: &FbpConfig) -> Result<Volume> {
    if g.n_views() < 1 {
        return config("FBP needs at least one view");
    }
    g.check_compatible(grid)?;
    s.check_geometry(g)?;
    let filtered = filter_sinogram(s, cfg)?;
    Ok(backproject_filtered(&filtered, g, grid))
}
