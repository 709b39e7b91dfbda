use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use macect::agents::{NlmVolumeAgent, NlmVolumeConfig, RotationalAgentConfig};
use macect::fbp::FbpConfig;
use macect::geometry::FOUR_VIEW_ANGLES_DEG;
use macect::mace::MaceConfig;
use macect::mbir::{ProxOptions, ProxSolver, QggmrfOptions, QggmrfPrior, QggmrfSolver};
use macect::phantom::{NoiseModel, PhantomSpec, SignalReference};
use macect::{Grid, ScanGeometry};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Default phantom: 121 x 121 x 100 cylinder with five cracks.
pub const DEFAULT_PHANTOM_JSON: &str = include_str!("../configs/default-phantom.json");
/// Default acquisition: four views at 18, 162, 234 and 306 degrees.
pub const DEFAULT_GEOMETRY_JSON: &str = include_str!("../configs/default-geometry.json");
/// Default reconstruction run (method msf-ri on the simulated phantom).
pub const DEFAULT_RUN_JSON: &str = include_str!("../configs/default-run.json");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Fbp,
    Mbir,
    Pnp,
    Msf,
    MsfRi,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Fbp, Method::Mbir, Method::Pnp, Method::Msf, Method::MsfRi];

    pub fn label(self) -> &'static str {
        match self {
            Method::Fbp => "fbp",
            Method::Mbir => "mbir",
            Method::Pnp => "pnp",
            Method::Msf => "msf",
            Method::MsfRi => "msf-ri",
        }
    }

    /// Display name used in the metrics table.
    pub fn title(self) -> &'static str {
        match self {
            Method::Fbp => "FBP",
            Method::Mbir => "qGGMRF",
            Method::Pnp => "PnP-NLM3D",
            Method::Msf => "MSF",
            Method::MsfRi => "MSF-RI",
        }
    }

    pub fn is_consensus(self) -> bool {
        matches!(self, Method::Pnp | Method::Msf | Method::MsfRi)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Method {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.label() == s)
            .ok_or_else(|| CliError::Config(format!("unknown method {s:?} (expected fbp, mbir, pnp, msf or msf-ri)")))
    }
}

/// Noise applied when the sinogram is simulated; the seed comes from the run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSettings {
    pub relative_level: f64,
    pub reference: SignalReference,
}

impl Default for NoiseSettings {
    fn default() -> Self {
        Self {
            relative_level: 0.2,
            reference: SignalReference::Rms,
        }
    }
}

impl NoiseSettings {
    pub fn model(&self, seed: u64) -> NoiseModel {
        NoiseModel {
            relative_level: self.relative_level,
            seed,
            reference: self.reference,
        }
    }
}

/// qGGMRF baseline, also used to initialize the consensus methods.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MbirSettings {
    pub prior: QggmrfPrior,
    pub passes: usize,
    pub stop_rel_change: f64,
    pub solver: QggmrfSolver,
    /// Noise scale of the data term; 1 when the weights already hold 1/variance.
    pub alpha: f64,
    /// Apodization of the FBP volume the iterations start from.
    pub init_apodization: Option<f64>,
}

impl Default for MbirSettings {
    fn default() -> Self {
        Self {
            prior: QggmrfPrior {
                q: 1.05,
                t: 0.1,
                sigma_x: 0.1,
                ..Default::default()
            },
            passes: 8,
            stop_rel_change: 1e-6,
            solver: QggmrfSolver::Majorize { inner: 10 },
            alpha: 1.0,
            init_apodization: Some(0.3),
        }
    }
}

impl MbirSettings {
    pub fn options(&self) -> QggmrfOptions {
        QggmrfOptions {
            max_passes: self.passes,
            stop_rel_change: self.stop_rel_change,
            solver: self.solver,
        }
    }
}

/// Per-plane slice denoisers of multi-slice fusion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SliceSettings {
    /// Filtering strength for the XY, YZ and ZX planes.
    pub strengths: [f64; 3],
    pub patch_radius: usize,
    pub search_radius: usize,
}

impl Default for SliceSettings {
    fn default() -> Self {
        Self {
            strengths: [0.1, 0.1, 0.1],
            patch_radius: 1,
            search_radius: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RotationSettings {
    #[serde(flatten)]
    pub agent: RotationalAgentConfig,
    pub beta: f64,
}

impl Default for RotationSettings {
    fn default() -> Self {
        Self {
            agent: RotationalAgentConfig::default(),
            beta: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PnpSettings {
    pub rho: f64,
    pub beta: f64,
    pub denoiser: NlmVolumeConfig,
}

impl Default for PnpSettings {
    fn default() -> Self {
        Self {
            rho: 0.5,
            beta: 1.0,
            denoiser: NlmVolumeConfig::default(),
        }
    }
}

/// Everything needed to reproduce one reconstruction.
///
/// Paths are resolved relative to the directory of the config file. Without a
/// `sinogram`, measurements are simulated from the phantom, geometry and noise
/// settings with `seed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub method: Method,
    pub seed: u64,
    pub out_dir: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub geometry: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phantom: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sinogram: Option<PathBuf>,
    /// Ground truth used for the PNG window; the phantom serves when simulating.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truth: Option<PathBuf>,
    pub noise: NoiseSettings,
    pub fbp: FbpConfig,
    pub mbir: MbirSettings,
    /// Consensus settings of msf and msf-ri; `betas` weight the XY, YZ, ZX denoisers.
    pub mace: MaceConfig,
    pub forward_agent: ProxOptions,
    pub slices: SliceSettings,
    pub rotation: RotationSettings,
    pub pnp: PnpSettings,
    /// Slices exported as PNG; empty means the middle slice.
    pub png_slices: Vec<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            method: Method::MsfRi,
            seed: 7,
            out_dir: PathBuf::from("out"),
            geometry: None,
            phantom: None,
            sinogram: None,
            truth: None,
            noise: NoiseSettings::default(),
            fbp: FbpConfig {
                apodization: Some(0.3),
                ..Default::default()
            },
            mbir: MbirSettings::default(),
            mace: MaceConfig {
                betas: vec![1.0, 1.0, 1.0],
                ..Default::default()
            },
            forward_agent: ProxOptions {
                solver: ProxSolver::Cg,
                tol: 1e-4,
                max_iters: 50,
            },
            slices: SliceSettings::default(),
            rotation: RotationSettings::default(),
            pnp: PnpSettings::default(),
            png_slices: Vec::new(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> CliResult<Self> {
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("malformed run config: {e}")))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = read_text(path)?;
        let mut cfg = Self::from_json(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.geometry, &mut cfg.phantom, &mut cfg.sinogram, &mut cfg.truth]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        self.fbp.validate()?;
        self.mbir.prior.validate()?;
        if !(self.mbir.alpha > 0.0 && self.mbir.alpha.is_finite()) {
            return Err(CliError::Config(format!("mbir.alpha must be positive, got {}", self.mbir.alpha)));
        }
        if !(self.noise.relative_level >= 0.0 && self.noise.relative_level.is_finite()) {
            return Err(CliError::Config("noise.relative_level must be nonnegative".into()));
        }
        if self.mace.betas.len() != 3 {
            return Err(CliError::Config(format!(
                "mace.betas holds the XY, YZ and ZX weights; got {} values",
                self.mace.betas.len()
            )));
        }
        if self.slices.strengths.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(CliError::Config("slice strengths must be nonnegative".into()));
        }
        self.rotation.agent.validate()?;
        NlmVolumeAgent::new(self.pnp.denoiser.clone())?;
        self.mace_config(Method::MsfRi).validate()?;
        self.mace_config(Method::Pnp).validate()?;
        Ok(())
    }

    /// Effective consensus settings of `method`, with the betas of every prior agent.
    pub fn mace_config(&self, method: Method) -> MaceConfig {
        let mut cfg = self.mace.clone();
        match method {
            Method::Pnp => {
                cfg.rho = self.pnp.rho;
                cfg.betas = vec![self.pnp.beta];
            }
            Method::MsfRi => cfg.betas.push(self.rotation.beta),
            _ => {}
        }
        cfg
    }
}

/// JSON form of a scan geometry; `n_channels` defaults to covering the grid diagonal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometrySpec {
    pub view_angles_deg: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_channels: Option<usize>,
    #[serde(default = "unit")]
    pub channel_pitch_mm: f64,
    #[serde(default)]
    pub detector_offset: f64,
}

fn unit() -> f64 {
    1.0
}

impl Default for GeometrySpec {
    fn default() -> Self {
        Self {
            view_angles_deg: FOUR_VIEW_ANGLES_DEG.to_vec(),
            n_channels: None,
            channel_pitch_mm: 1.0,
            detector_offset: 0.0,
        }
    }
}

impl GeometrySpec {
    pub fn from_json(text: &str) -> CliResult<Self> {
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("malformed geometry: {e}")))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        Self::from_json(&read_text(path)?).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Geometry for `grid`, checked for compatibility.
    pub fn build(&self, grid: &Grid) -> CliResult<ScanGeometry> {
        let covering = ScanGeometry::four_view(grid);
        let n_channels = self.n_channels.unwrap_or_else(|| {
            let span = covering.n_channels as f64 * covering.channel_pitch;
            (span / self.channel_pitch_mm).ceil() as usize | 1
        });
        let g = ScanGeometry {
            view_angles_deg: self.view_angles_deg.clone(),
            n_channels,
            channel_pitch: self.channel_pitch_mm,
            n_slices: grid.nz,
            detector_offset: self.detector_offset,
        };
        g.validate()?;
        g.check_compatible(grid)?;
        Ok(g)
    }
}

pub fn load_phantom_spec(path: Option<&Path>) -> CliResult<PhantomSpec> {
    let text = match path {
        Some(p) => read_text(p)?,
        None => DEFAULT_PHANTOM_JSON.to_string(),
    };
    let spec = PhantomSpec::from_json(&text)?;
    spec.validate()?;
    Ok(spec)
}

pub fn load_geometry_spec(path: Option<&Path>) -> CliResult<GeometrySpec> {
    match path {
        Some(p) => GeometrySpec::load(p),
        None => GeometrySpec::from_json(DEFAULT_GEOMETRY_JSON),
    }
}

fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))
}
