//! Per-plane slice denoising (one leg of multi-slice fusion).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::nlm::{Denoiser2d, NlmDenoiser};
use super::{Agent, AgentKind};
use crate::error::{config, Result};
use crate::volume::Volume;

/// Orientation of the 2D slices handed to the denoiser.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Plane {
    /// Constant z; image axes (x, y).
    XY,
    /// Constant x; image axes (y, z).
    YZ,
    /// Constant y; image axes (z, x).
    ZX,
}

impl Plane {
    pub const ALL: [Plane; 3] = [Plane::XY, Plane::YZ, Plane::ZX];

    /// `(n_slices, image_nx, image_ny)` for a volume of dims `(nx, ny, nz)`.
    pub fn layout(self, (nx, ny, nz): (usize, usize, usize)) -> (usize, usize, usize) {
        match self {
            Plane::XY => (nz, nx, ny),
            Plane::YZ => (nx, ny, nz),
            Plane::ZX => (ny, nz, nx),
        }
    }

    /// Volume index of pixel `(a, b)` of slice `s`.
    #[inline]
    fn voxel(self, s: usize, a: usize, b: usize, (nx, ny, _): (usize, usize, usize)) -> usize {
        let (i, j, k) = match self {
            Plane::XY => (a, b, s),
            Plane::YZ => (s, a, b),
            Plane::ZX => (b, s, a),
        };
        i + nx * (j + ny * k)
    }

    pub fn label(self) -> &'static str {
        match self {
            Plane::XY => "xy",
            Plane::YZ => "yz",
            Plane::ZX => "zx",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceDenoiserConfig {
    pub plane: Plane,
    /// Non-local means filtering parameter; 0 makes the agent the identity.
    pub strength: f64,
    #[serde(default = "default_patch_radius")]
    pub patch_radius: usize,
    #[serde(default = "default_search_radius")]
    pub search_radius: usize,
}

fn default_patch_radius() -> usize {
    1
}

fn default_search_radius() -> usize {
    5
}

impl SliceDenoiserConfig {
    pub fn new(plane: Plane, strength: f64) -> Self {
        Self {
            plane,
            strength,
            patch_radius: default_patch_radius(),
            search_radius: default_search_radius(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.strength >= 0.0 && self.strength.is_finite()) {
            return config(format!("slice denoiser strength must be >= 0, got {}", self.strength));
        }
        Ok(())
    }

    fn denoiser(&self) -> NlmDenoiser {
        NlmDenoiser {
            strength: self.strength,
            patch_radius: self.patch_radius,
            search_radius: self.search_radius,
        }
    }
}

/// Applies a 2D denoiser independently to every slice along one plane.
pub struct SliceDenoiserAgent {
    name: String,
    plane: Plane,
    denoiser: Box<dyn Denoiser2d>,
}

impl SliceDenoiserAgent {
    pub fn new(cfg: &SliceDenoiserConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self::with_denoiser(cfg.plane, Box::new(cfg.denoiser())))
    }

    /// Uses an arbitrary 2D denoiser in place of non-local means.
    pub fn with_denoiser(plane: Plane, denoiser: Box<dyn Denoiser2d>) -> Self {
        Self {
            name: format!("{}-{}", denoiser.name(), plane.label()),
            plane,
            denoiser,
        }
    }

    pub fn plane(&self) -> Plane {
        self.plane
    }
}

impl Agent for SliceDenoiserAgent {
    fn name(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> AgentKind {
        AgentKind::Denoiser
    }

    fn apply(&mut self, x: &Volume) -> Result<Volume> {
        let dims = x.dims();
        let (ns, ia, ib) = self.plane.layout(dims);
        let plane = self.plane;
        let src = x.data();
        let denoised: Vec<Vec<f64>> = (0..ns)
            .into_par_iter()
            .map(|s| {
                let mut img = vec![0.0; ia * ib];
                for b in 0..ib {
                    for a in 0..ia {
                        img[a + ia * b] = src[plane.voxel(s, a, b, dims)];
                    }
                }
                self.denoiser.denoise(&img, ia, ib)
            })
            .collect();
        let mut out = Volume::zeros(*x.grid());
        let dst = out.data_mut();
        for (s, img) in denoised.iter().enumerate() {
            for b in 0..ib {
                for a in 0..ia {
                    dst[plane.voxel(s, a, b, dims)] = img[a + ia * b];
                }
            }
        }
        Ok(out)
    }
}

pub fn slice_denoiser_agent(x: &Volume, cfg: &SliceDenoiserConfig) -> Result<Volume> {
    SliceDenoiserAgent::new(cfg)?.apply(x)
}
