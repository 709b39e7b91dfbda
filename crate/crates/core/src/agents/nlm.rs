//! Non-local means, the reference denoiser behind the slice agents and the
//! volumetric plug-and-play agent.
//!
//! For every search offset the squared difference image is box-filtered over
//! the patch window, so the cost is `O(offsets · voxels)` independent of the
//! patch size. Borders are extended by mirror reflection.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Agent, AgentKind};
use crate::error::{config, Result};
use crate::volume::Volume;

/// A 2D image denoiser applied to one slice at a time. `img` is row-major
/// with `nx` the fast axis.
pub trait Denoiser2d: Send + Sync {
    fn name(&self) -> &str;

    fn denoise(&self, img: &[f64], nx: usize, ny: usize) -> Vec<f64>;
}

/// Mirror index into `0..n` (edge sample not repeated).
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Running box sum of width `2r + 1` along a strided line.
fn box_line(src: &[f64], src_off: usize, stride: usize, out_len: usize, r: usize, dst: &mut [f64], dst_off: usize, dst_stride: usize) {
    let w = 2 * r + 1;
    let mut acc: f64 = (0..w).map(|t| src[src_off + t * stride]).sum();
    dst[dst_off] = acc;
    for o in 1..out_len {
        acc += src[src_off + (o + w - 1) * stride] - src[src_off + (o - 1) * stride];
        dst[dst_off + o * dst_stride] = acc;
    }
}

/// Non-local means on a `dims` box with per-axis patch and search radii.
/// Weights are `exp(−d² / h²)` with `d²` the mean squared patch difference.
fn nlm(data: &[f64], dims: [usize; 3], patch: [usize; 3], search: [usize; 3], h: f64) -> Vec<f64> {
    let [nx, ny, nz] = dims;
    let n = nx * ny * nz;
    if n == 0 || h == 0.0 {
        return data.to_vec();
    }
    let r = [patch[0] + search[0], patch[1] + search[1], patch[2] + search[2]];
    let pd = [nx + 2 * r[0], ny + 2 * r[1], nz + 2 * r[2]];
    let mut u = vec![0.0; pd[0] * pd[1] * pd[2]];
    for z in 0..pd[2] {
        let sz = reflect(z as isize - r[2] as isize, nz);
        for y in 0..pd[1] {
            let sy = reflect(y as isize - r[1] as isize, ny);
            for x in 0..pd[0] {
                let sx = reflect(x as isize - r[0] as isize, nx);
                u[x + pd[0] * (y + pd[1] * z)] = data[sx + nx * (sy + ny * sz)];
            }
        }
    }
    let pidx = |x: usize, y: usize, z: usize| x + pd[0] * (y + pd[1] * z);

    // difference region: output box grown by the patch radius
    let e = [nx + 2 * patch[0], ny + 2 * patch[1], nz + 2 * patch[2]];
    let e_plane = e[0] * e[1];
    let inv_h2 = 1.0 / (h * h);
    let inv_patch = 1.0 / ((2 * patch[0] + 1) * (2 * patch[1] + 1) * (2 * patch[2] + 1)) as f64;

    let mut diff = vec![0.0; e_plane * e[2]];
    // x-then-y box sums on each difference plane
    let mut bxy = vec![0.0; nx * ny * e[2]];
    let mut acc = vec![0.0; n];
    let mut wsum = vec![0.0; n];

    let s = [search[0] as isize, search[1] as isize, search[2] as isize];
    for oz in -s[2]..=s[2] {
        for oy in -s[1]..=s[1] {
            for ox in -s[0]..=s[0] {
                let shift = ox + pd[0] as isize * (oy + pd[1] as isize * oz);
                diff.par_chunks_mut(e_plane)
                    .zip(bxy.par_chunks_mut(nx * ny))
                    .enumerate()
                    .for_each(|(qz, (dplane, bplane))| {
                        for qy in 0..e[1] {
                            for qx in 0..e[0] {
                                let p = pidx(qx + search[0], qy + search[1], qz + search[2]);
                                let d = u[p] - u[(p as isize + shift) as usize];
                                dplane[qx + e[0] * qy] = d * d;
                            }
                        }
                        let mut bx = vec![0.0; nx * e[1]];
                        for qy in 0..e[1] {
                            box_line(dplane, e[0] * qy, 1, nx, patch[0], &mut bx, nx * qy, 1);
                        }
                        for x in 0..nx {
                            box_line(&bx, x, nx, ny, patch[1], bplane, x, nx);
                        }
                    });
                acc.par_chunks_mut(nx * ny)
                    .zip(wsum.par_chunks_mut(nx * ny))
                    .enumerate()
                    .for_each(|(z, (a, ws))| {
                        for y in 0..ny {
                            for x in 0..nx {
                                let mut d2 = 0.0;
                                for t in 0..=2 * patch[2] {
                                    d2 += bxy[x + nx * (y + ny * (z + t))];
                                }
                                let w = (-d2 * inv_patch * inv_h2).exp();
                                let p = pidx(x + r[0], y + r[1], z + r[2]);
                                a[x + nx * y] += w * u[(p as isize + shift) as usize];
                                ws[x + nx * y] += w;
                            }
                        }
                    });
            }
        }
    }
    acc.iter().zip(&wsum).map(|(a, w)| a / w).collect()
}

/// 2D non-local means with a square patch and search window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NlmDenoiser {
    /// Filtering parameter `h` in intensity units; 0 disables filtering.
    pub strength: f64,
    pub patch_radius: usize,
    pub search_radius: usize,
}

impl Default for NlmDenoiser {
    fn default() -> Self {
        Self {
            strength: 0.1,
            patch_radius: 1,
            search_radius: 5,
        }
    }
}

impl NlmDenoiser {
    pub fn validate(&self) -> Result<()> {
        if !(self.strength >= 0.0 && self.strength.is_finite()) {
            return config(format!("nlm strength must be >= 0, got {}", self.strength));
        }
        Ok(())
    }
}

impl Denoiser2d for NlmDenoiser {
    fn name(&self) -> &str {
        "nlm"
    }

    fn denoise(&self, img: &[f64], nx: usize, ny: usize) -> Vec<f64> {
        if self.strength == 0.0 {
            return img.to_vec();
        }
        nlm(
            img,
            [nx, ny, 1],
            [self.patch_radius, self.patch_radius, 0],
            [self.search_radius, self.search_radius, 0],
            self.strength,
        )
    }
}

/// Parameters of the volumetric non-local means agent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NlmVolumeConfig {
    pub strength: f64,
    pub patch_radius: usize,
    pub search_radius: usize,
}

impl Default for NlmVolumeConfig {
    fn default() -> Self {
        Self {
            strength: 0.1,
            patch_radius: 1,
            search_radius: 2,
        }
    }
}

/// Non-local means over 3D patches, used as the single prior of the
/// plug-and-play method.
#[derive(Clone, Debug)]
pub struct NlmVolumeAgent {
    name: String,
    cfg: NlmVolumeConfig,
}

impl NlmVolumeAgent {
    pub fn new(cfg: NlmVolumeConfig) -> Result<Self> {
        if !(cfg.strength >= 0.0 && cfg.strength.is_finite()) {
            return config(format!("nlm strength must be >= 0, got {}", cfg.strength));
        }
        Ok(Self {
            name: "nlm3d".into(),
            cfg,
        })
    }

    pub fn config(&self) -> &NlmVolumeConfig {
        &self.cfg
    }
}

impl Agent for NlmVolumeAgent {
    fn name(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> AgentKind {
        AgentKind::Denoiser
    }

    fn apply(&mut self, x: &Volume) -> Result<Volume> {
        if self.cfg.strength == 0.0 {
            return Ok(x.clone());
        }
        let (nx, ny, nz) = x.dims();
        let p = self.cfg.patch_radius;
        let s = self.cfg.search_radius;
        let out = nlm(x.data(), [nx, ny, nz], [p; 3], [s; 3], self.cfg.strength);
        Volume::from_vec(*x.grid(), out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_indices() {
        let got: Vec<usize> = (-3..7).map(|i| reflect(i, 4)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0]);
        assert_eq!(reflect(-5, 1), 0);
    }

    #[test]
    fn brute_force_agreement() {
        let (nx, ny) = (7, 5);
        let img: Vec<f64> = (0..nx * ny).map(|p| ((p * 37) % 11) as f64 * 0.1).collect();
        let d = NlmDenoiser {
            strength: 0.3,
            patch_radius: 1,
            search_radius: 2,
        };
        let fast = d.denoise(&img, nx, ny);
        let at = |x: isize, y: isize| img[reflect(x, nx) + nx * reflect(y, ny)];
        for y in 0..ny as isize {
            for x in 0..nx as isize {
                let (mut a, mut ws) = (0.0, 0.0);
                for oy in -2..=2 {
                    for ox in -2..=2 {
                        let mut d2 = 0.0;
                        for py in -1..=1 {
                            for px in -1..=1 {
                                let t = at(x + px, y + py) - at(x + ox + px, y + oy + py);
                                d2 += t * t;
                            }
                        }
                        let w = (-d2 / 9.0 / 0.09).exp();
                        a += w * at(x + ox, y + oy);
                        ws += w;
                    }
                }
                assert!((fast[x as usize + nx * y as usize] - a / ws).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constants_preserved_and_zero_strength_is_identity() {
        let d = NlmDenoiser::default();
        let c = vec![1.7; 30];
        assert!(d.denoise(&c, 6, 5).iter().all(|&v| (v - 1.7).abs() < 1e-12));
        let z = NlmDenoiser {
            strength: 0.0,
            ..Default::default()
        };
        let img: Vec<f64> = (0..30).map(|p| p as f64).collect();
        assert_eq!(z.denoise(&img, 6, 5), img);
    }
}
