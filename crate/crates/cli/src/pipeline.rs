use std::time::Instant;

use log::info;
use macect::agents::{
    Agent, ForwardModelAgent, NlmVolumeAgent, Plane, RotationalAgent, SliceDenoiserAgent, SliceDenoiserConfig,
};
use macect::fbp::{fbp_reconstruct, FbpConfig};
use macect::io::{read_sinogram, read_volume};
use macect::mace::{mace_solve_with_observer, ConvergenceLog, IterationRecord, StateStack};
use macect::mbir::{qggmrf_reconstruct, ForwardModelTerm};
use macect::phantom::{add_noise, make_cracked_cylinder};
use macect::projector::forward_project;
use macect::{Grid, ScanGeometry, Sinogram, Volume};

use crate::config::{load_geometry_spec, load_phantom_spec, Method, RunConfig};
use crate::error::{CliError, CliResult};

/// Measurements plus, when known, the object they came from.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub grid: Grid,
    pub geometry: ScanGeometry,
    pub sinogram: Sinogram,
    pub truth: Option<Volume>,
}

/// Loads the configured sinogram, or simulates one from the phantom.
pub fn prepare(cfg: &RunConfig) -> CliResult<Scenario> {
    let truth = match &cfg.truth {
        Some(p) => Some(read_volume(p)?),
        None => None,
    };
    if let Some(path) = &cfg.sinogram {
        let (sinogram, _) = read_sinogram(path)?;
        let grid = match &truth {
            Some(t) => *t.grid(),
            None => load_phantom_spec(cfg.phantom.as_deref())?.grid(),
        };
        let geometry = sinogram.geometry().clone();
        geometry.check_compatible(&grid)?;
        return Ok(Scenario {
            grid,
            geometry,
            sinogram,
            truth,
        });
    }
    let truth = match truth {
        Some(t) => t,
        None => make_cracked_cylinder(&load_phantom_spec(cfg.phantom.as_deref())?)?,
    };
    let grid = *truth.grid();
    let geometry = load_geometry_spec(cfg.geometry.as_deref())?.build(&grid)?;
    let sinogram = simulate(&truth, &geometry, cfg)?;
    Ok(Scenario {
        grid,
        geometry,
        sinogram,
        truth: Some(truth),
    })
}

/// Projects `truth` and adds the configured noise with the run seed.
pub fn simulate(truth: &Volume, geometry: &ScanGeometry, cfg: &RunConfig) -> CliResult<Sinogram> {
    let clean = forward_project(truth, geometry)?;
    Ok(add_noise(&clean, &cfg.noise.model(cfg.seed))?)
}

/// Result of one method.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub method: Method,
    pub volume: Volume,
    /// Residual history of consensus methods.
    pub log: Option<ConvergenceLog>,
    /// qGGMRF cost after every pass, for the mbir method.
    pub costs: Option<Vec<f64>>,
    /// Proximal scale of the forward agent, for consensus methods.
    pub sigma: Option<f64>,
    pub seconds: f64,
}

pub fn forward_term(cfg: &RunConfig, scenario: &Scenario) -> CliResult<ForwardModelTerm> {
    Ok(ForwardModelTerm::new(scenario.sinogram.clone(), cfg.mbir.alpha)?)
}

pub fn run_fbp(cfg: &FbpConfig, scenario: &Scenario) -> CliResult<Volume> {
    Ok(fbp_reconstruct(&scenario.sinogram, &scenario.geometry, &scenario.grid, cfg)?)
}

/// qGGMRF started from an apodized FBP volume.
pub fn run_mbir(cfg: &RunConfig, scenario: &Scenario) -> CliResult<RunOutput> {
    let start = Instant::now();
    let init = run_fbp(
        &FbpConfig {
            apodization: cfg.mbir.init_apodization,
            ..cfg.fbp.clone()
        },
        scenario,
    )?;
    let fm = forward_term(cfg, scenario)?;
    let out = qggmrf_reconstruct(&fm, &cfg.mbir.prior, &init, &cfg.mbir.options())?;
    info!("qggmrf: {} passes, final cost {:.6e}", out.passes, out.costs.last().copied().unwrap_or(f64::NAN));
    Ok(RunOutput {
        method: Method::Mbir,
        volume: out.volume,
        log: None,
        costs: Some(out.costs),
        sigma: None,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Agents of a consensus method: the forward-model proximal map first, then the priors.
pub fn build_agents(method: Method, cfg: &RunConfig, fm: ForwardModelTerm, sigma: f64) -> CliResult<Vec<Box<dyn Agent>>> {
    let mut agents: Vec<Box<dyn Agent>> = vec![Box::new(ForwardModelAgent::new(fm, sigma, cfg.forward_agent)?)];
    match method {
        Method::Pnp => agents.push(Box::new(NlmVolumeAgent::new(cfg.pnp.denoiser.clone())?)),
        Method::Msf | Method::MsfRi => {
            for (plane, strength) in Plane::ALL.into_iter().zip(cfg.slices.strengths) {
                let slice = SliceDenoiserConfig {
                    plane,
                    strength,
                    patch_radius: cfg.slices.patch_radius,
                    search_radius: cfg.slices.search_radius,
                };
                agents.push(Box::new(SliceDenoiserAgent::new(&slice)?));
            }
            if method == Method::MsfRi {
                agents.push(Box::new(RotationalAgent::new(cfg.rotation.agent.clone())?));
            }
        }
        Method::Fbp | Method::Mbir => {
            return Err(CliError::Config(format!("{method} is not a consensus method")));
        }
    }
    Ok(agents)
}

/// Runs a consensus method from `init`, reporting every iteration to `observer`.
pub fn run_consensus(
    method: Method,
    cfg: &RunConfig,
    scenario: &Scenario,
    init: &Volume,
    mut observer: impl FnMut(&IterationRecord, &StateStack),
) -> CliResult<RunOutput> {
    let start = Instant::now();
    let mace = cfg.mace_config(method);
    let sigma = mace.resolve_sigma(init);
    info!("{method}: rho {}, sigma {sigma:.4}, betas {:?}", mace.rho, mace.betas);
    let mut agents = build_agents(method, cfg, forward_term(cfg, scenario)?, sigma)?;
    let (volume, log) = mace_solve_with_observer(&mut agents, &mace, init, |r, w| observer(r, w))?;
    Ok(RunOutput {
        method,
        volume,
        log: Some(log),
        costs: None,
        sigma: Some(sigma),
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Runs `method`; consensus methods start from the qGGMRF volume, computed here
/// unless `mbir` already holds it.
pub fn run_method(method: Method, cfg: &RunConfig, scenario: &Scenario, mbir: Option<&Volume>) -> CliResult<RunOutput> {
    match method {
        Method::Fbp => {
            let start = Instant::now();
            let volume = run_fbp(&cfg.fbp, scenario)?;
            Ok(RunOutput {
                method,
                volume,
                log: None,
                costs: None,
                sigma: None,
                seconds: start.elapsed().as_secs_f64(),
            })
        }
        Method::Mbir => run_mbir(cfg, scenario),
        _ => {
            let owned;
            let init = match mbir {
                Some(v) => v,
                None => {
                    owned = run_mbir(cfg, scenario)?.volume;
                    &owned
                }
            };
            run_consensus(method, cfg, scenario, init, |r, _| {
                info!("{method} iteration {:>3}: residual {:.4e} ({:.1}s)", r.iteration, r.residual, r.wall_seconds)
            })
        }
    }
}
