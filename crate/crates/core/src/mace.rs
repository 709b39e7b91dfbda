//! Consensus-equilibrium solver.
//!
//! The K+1 agents act on their own copies `w_k` of the volume. `L` applies
//! agent `k` to slot `k`; `G` replaces every slot by the `μ`-weighted average.
//! A consensus equilibrium satisfies `L(w) = G(w)` and is found by the
//! Mann iteration `w ← (1 − 2ρ) w + 2ρ (2G − I)(2L − I) w`, written as
//!
//! ```text
//! x ← L(w);  z ← G(2x − w);  w ← w + 2ρ (z − x)
//! ```

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::Agent;
use crate::error::{config, Error, Result};
use crate::volume::Volume;

/// Residual growth factor and patience of the divergence guard.
pub const DIVERGENCE_FACTOR: f64 = 10.0;
pub const DIVERGENCE_PATIENCE: usize = 5;

/// The stacked state `w = [w₀, …, w_K]`.
#[derive(Clone, Debug, PartialEq)]
pub struct StateStack {
    states: Vec<Volume>,
}

impl StateStack {
    pub fn new(states: Vec<Volume>) -> Result<Self> {
        let Some(first) = states.first() else {
            return config("state stack needs at least one state");
        };
        for s in &states[1..] {
            first.check_same_shape(s, "state stack")?;
        }
        Ok(Self { states })
    }

    /// `n` copies of `v`.
    pub fn replicate(v: &Volume, n: usize) -> Result<Self> {
        Self::new(vec![v.clone(); n])
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[Volume] {
        &self.states
    }

    pub fn get(&self, k: usize) -> &Volume {
        &self.states[k]
    }

    pub fn into_states(self) -> Vec<Volume> {
        self.states
    }

    /// Euclidean norm of the concatenation.
    pub fn norm(&self) -> f64 {
        self.states.iter().map(|s| s.dot(s)).sum::<f64>().sqrt()
    }

    /// `‖self − other‖` over the concatenation.
    pub fn distance(&self, other: &StateStack) -> f64 {
        self.states
            .iter()
            .zip(&other.states)
            .map(|(a, b)| a.distance(b).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// `Σ μ_k w_k`.
    pub fn weighted_average(&self, mu: &[f64]) -> Result<Volume> {
        if mu.len() != self.len() {
            return config(format!("{} weights for {} states", mu.len(), self.len()));
        }
        let mut avg = Volume::zeros(*self.states[0].grid());
        for (s, &m) in self.states.iter().zip(mu) {
            avg.axpy(m, s);
        }
        Ok(avg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaceConfig {
    /// Mann step in (0, 1).
    pub rho: f64,
    /// Proximal scale handed to the agents; `None` means 0.2 times the
    /// dynamic range of the initial volume.
    pub sigma: Option<f64>,
    /// Prior weights `β₁ … β_K`.
    pub betas: Vec<f64>,
    pub max_iters: usize,
    pub residual_tol: f64,
    /// Progress is logged every this many iterations (0 disables).
    pub log_every: usize,
}

impl Default for MaceConfig {
    fn default() -> Self {
        Self {
            rho: 0.4,
            sigma: None,
            betas: Vec::new(),
            max_iters: 30,
            residual_tol: 0.05,
            log_every: 1,
        }
    }
}

impl MaceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return config(format!("rho must lie in (0, 1), got {}", self.rho));
        }
        if let Some(s) = self.sigma {
            if !(s > 0.0 && s.is_finite()) {
                return config(format!("sigma must be positive, got {s}"));
            }
        }
        if !(self.residual_tol >= 0.0) {
            return config(format!("residual_tol must be >= 0, got {}", self.residual_tol));
        }
        compute_mu(&self.betas).map(|_| ())
    }

    /// The configured sigma, or 0.2 times the dynamic range of `init`
    /// (1 if `init` is constant).
    pub fn resolve_sigma(&self, init: &Volume) -> f64 {
        self.sigma.unwrap_or_else(|| {
            let range = init.dynamic_range();
            if range > 0.0 {
                0.2 * range
            } else {
                warn!("mace: initial volume is constant, defaulting sigma to 1");
                1.0
            }
        })
    }
}

/// `μ = [1, β₁, …, β_K] / (1 + Σβ)`.
pub fn compute_mu(betas: &[f64]) -> Result<Vec<f64>> {
    if let Some(b) = betas.iter().find(|b| !(**b >= 0.0 && b.is_finite())) {
        return config(format!("prior weights must be finite and >= 0, got {b}"));
    }
    let total = 1.0 + betas.iter().sum::<f64>();
    Ok(std::iter::once(1.0).chain(betas.iter().copied()).map(|b| b / total).collect())
}

fn agent_error(name: &str, e: Error) -> Error {
    match e {
        Error::Agent { .. } => e,
        other => Error::Agent {
            name: name.to_string(),
            message: other.to_string(),
        },
    }
}

/// Applies agent `k` to slot `k`, all agents in parallel. Also returns the
/// wall time of each application.
pub fn apply_l_timed(agents: &mut [Box<dyn Agent>], w: &StateStack) -> Result<(StateStack, Vec<f64>)> {
    if agents.len() != w.len() {
        return config(format!("{} agents for {} states", agents.len(), w.len()));
    }
    let results: Vec<Result<(Volume, f64)>> = agents
        .par_iter_mut()
        .zip(w.states.par_iter())
        .map(|(agent, x)| {
            let t0 = Instant::now();
            let out = agent.apply(x).map_err(|e| agent_error(agent.name(), e))?;
            if !out.same_shape(x) {
                return Err(agent_error(agent.name(), Error::Config("output shape differs from input".into())));
            }
            if !out.is_finite() {
                return Err(agent_error(agent.name(), Error::Config("output is not finite".into())));
            }
            Ok((out, t0.elapsed().as_secs_f64()))
        })
        .collect();
    let mut states = Vec::with_capacity(results.len());
    let mut times = Vec::with_capacity(results.len());
    for r in results {
        let (v, t) = r?;
        states.push(v);
        times.push(t);
    }
    Ok((StateStack { states }, times))
}

pub fn apply_l(agents: &mut [Box<dyn Agent>], w: &StateStack) -> Result<StateStack> {
    apply_l_timed(agents, w).map(|(x, _)| x)
}

/// Every slot replaced by `Σ μ_k w_k`.
pub fn apply_g(w: &StateStack, mu: &[f64]) -> Result<StateStack> {
    let avg = w.weighted_average(mu)?;
    StateStack::replicate(&avg, w.len())
}

/// `‖x − G(w)‖ / ‖w‖` for agent outputs `x = L(w)`; `+∞` when `w = 0`.
pub fn residual_from_outputs(x: &StateStack, w: &StateStack, mu: &[f64]) -> Result<f64> {
    let w_norm = w.norm();
    if w_norm == 0.0 {
        warn!("mace: residual undefined for a zero state, reporting infinity");
        return Ok(f64::INFINITY);
    }
    let avg = w.weighted_average(mu)?;
    let num: f64 = x.states.iter().map(|s| s.distance(&avg).powi(2)).sum();
    Ok(num.sqrt() / w_norm)
}

/// Equilibrium residual `‖L(w) − G(w)‖ / ‖w‖`; zero exactly at a consensus
/// equilibrium.
pub fn equilibrium_residual(agents: &mut [Box<dyn Agent>], w: &StateStack, mu: &[f64]) -> Result<f64> {
    let x = apply_l(agents, w)?;
    residual_from_outputs(&x, w, mu)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub residual: f64,
    /// Seconds since the solver started.
    pub wall_seconds: f64,
    /// Seconds spent in each agent during this iteration.
    pub agent_seconds: Vec<f64>,
}

/// Per-iteration residual history of one solve.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceLog {
    pub agent_names: Vec<String>,
    pub records: Vec<IterationRecord>,
    pub converged: bool,
}

impl ConvergenceLog {
    pub fn residuals(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.residual).collect()
    }

    pub fn final_residual(&self) -> Option<f64> {
        self.records.last().map(|r| r.residual)
    }

    pub fn iterations(&self) -> usize {
        self.records.len()
    }

    /// CSV with columns `iteration,residual,wall_seconds,<agent>_seconds…`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration,residual,wall_seconds");
        for n in &self.agent_names {
            let _ = write!(s, ",{n}_seconds");
        }
        s.push('\n');
        for r in &self.records {
            let _ = write!(s, "{},{:.9e},{:.6}", r.iteration, r.residual, r.wall_seconds);
            for t in &r.agent_seconds {
                let _ = write!(s, ",{t:.6}");
            }
            s.push('\n');
        }
        s
    }

    /// CSV with columns `iteration,residual` only, which repeats exactly across runs.
    pub fn residuals_csv(&self) -> String {
        let mut s = String::from("iteration,residual\n");
        for r in &self.records {
            let _ = writeln!(s, "{},{:.9e}", r.iteration, r.residual);
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Stepwise driver of the consensus iteration.
pub struct MaceSolver<'a> {
    agents: &'a mut [Box<dyn Agent>],
    mu: Vec<f64>,
    rho: f64,
    w: StateStack,
    outputs: Option<StateStack>,
    log: ConvergenceLog,
    start: Instant,
    initial_residual: Option<f64>,
    over_threshold: usize,
}

impl<'a> MaceSolver<'a> {
    /// Every slot starts at `init`. The first agent is expected to be the
    /// data-fidelity agent, so `betas` has one entry fewer than `agents`.
    pub fn new(agents: &'a mut [Box<dyn Agent>], cfg: &MaceConfig, init: &Volume) -> Result<Self> {
        cfg.validate()?;
        let mu = compute_mu(&cfg.betas)?;
        if mu.len() != agents.len() {
            return config(format!(
                "{} agents need {} prior weights, got {}",
                agents.len(),
                agents.len().saturating_sub(1),
                cfg.betas.len()
            ));
        }
        let log = ConvergenceLog {
            agent_names: agents.iter().map(|a| a.name().to_string()).collect(),
            ..Default::default()
        };
        Ok(Self {
            w: StateStack::replicate(init, agents.len())?,
            agents,
            mu,
            rho: cfg.rho,
            outputs: None,
            log,
            start: Instant::now(),
            initial_residual: None,
            over_threshold: 0,
        })
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn state(&self) -> &StateStack {
        &self.w
    }

    /// Agent outputs `x = L(w)` of the latest step.
    pub fn outputs(&self) -> Option<&StateStack> {
        self.outputs.as_ref()
    }

    pub fn log(&self) -> &ConvergenceLog {
        &self.log
    }

    /// `Σ μ_k x_k` over the latest agent outputs (over `w` before any step).
    pub fn estimate(&self) -> Result<Volume> {
        self.outputs.as_ref().unwrap_or(&self.w).weighted_average(&self.mu)
    }

    /// One iteration. Returns the residual `‖L(w) − G(w)‖ / ‖w‖` of the state
    /// the step started from. The state is not updated when `update` is false.
    fn advance(&mut self, update: bool) -> Result<f64> {
        let (x, times) = apply_l_timed(self.agents, &self.w)?;
        let residual = residual_from_outputs(&x, &self.w, &self.mu)?;
        self.log.records.push(IterationRecord {
            iteration: self.log.records.len() + 1,
            residual,
            wall_seconds: self.start.elapsed().as_secs_f64(),
            agent_seconds: times,
        });
        if update {
            // z = G(2x − w); w ← w + 2ρ(z − x)
            let two_x_minus_w = StateStack {
                states: x
                    .states
                    .iter()
                    .zip(&self.w.states)
                    .map(|(xk, wk)| xk.zip_map(wk, |a, b| 2.0 * a - b))
                    .collect(),
            };
            let z = two_x_minus_w.weighted_average(&self.mu)?;
            let step = 2.0 * self.rho;
            for (wk, xk) in self.w.states.iter_mut().zip(&x.states) {
                let wd = wk.data_mut();
                for ((w, &xv), &zv) in wd.iter_mut().zip(xk.data()).zip(z.data()) {
                    *w += step * (zv - xv);
                }
            }
        }
        self.outputs = Some(x);
        Ok(residual)
    }

    pub fn step(&mut self) -> Result<f64> {
        self.advance(true)
    }

    /// Updates the divergence guard; errors after `DIVERGENCE_PATIENCE`
    /// consecutive residuals above `DIVERGENCE_FACTOR` times the first one.
    fn guard(&mut self, residual: f64) -> Result<()> {
        let initial = *self.initial_residual.get_or_insert(residual);
        if residual > DIVERGENCE_FACTOR * initial || !residual.is_finite() && initial.is_finite() {
            self.over_threshold += 1;
        } else {
            self.over_threshold = 0;
        }
        if self.over_threshold >= DIVERGENCE_PATIENCE {
            return Err(Error::Diverged {
                iteration: self.log.records.len(),
                residual,
                log: Box::new(self.log.clone()),
            });
        }
        Ok(())
    }
}

/// Runs the consensus iteration from `init` until the residual drops below
/// `cfg.residual_tol` or `cfg.max_iters` is reached, and returns
/// `Σ μ_k x_k` over the final agent outputs together with the residual log.
pub fn mace_solve(agents: &mut [Box<dyn Agent>], cfg: &MaceConfig, init: &Volume) -> Result<(Volume, ConvergenceLog)> {
    mace_solve_with_observer(agents, cfg, init, |_, _| {})
}

/// As [`mace_solve`], calling `observer(record, outputs)` after every
/// iteration with that iteration's agent outputs.
pub fn mace_solve_with_observer(
    agents: &mut [Box<dyn Agent>],
    cfg: &MaceConfig,
    init: &Volume,
    mut observer: impl FnMut(&IterationRecord, &StateStack),
) -> Result<(Volume, ConvergenceLog)> {
    let mut solver = MaceSolver::new(agents, cfg, init)?;
    for it in 1..=cfg.max_iters {
        let residual = solver.advance(it < cfg.max_iters)?;
        let record = solver.log.records.last().expect("record pushed");
        observer(record, solver.outputs.as_ref().expect("outputs set"));
        if cfg.log_every > 0 && (it % cfg.log_every == 0 || residual < cfg.residual_tol) {
            info!("mace iteration {it}: residual {residual:.4e}");
        }
        if residual < cfg.residual_tol {
            solver.log.converged = true;
            break;
        }
        solver.guard(residual)?;
    }
    if !solver.log.converged {
        warn!(
            "mace: stopped after {} iterations with residual {:.4e}",
            solver.log.iterations(),
            solver.log.final_residual().unwrap_or(f64::NAN)
        );
    }
    let x_hat = solver.estimate()?;
    Ok((x_hat, solver.log))
}
