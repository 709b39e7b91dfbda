use log::warn;

use super::{Agent, AgentKind};
use crate::error::{config, Result};
use crate::mbir::{proximal_solve, ForwardModelTerm, ProxOptions};
use crate::volume::Volume;

/// Solver statistics of the most recent application.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProxStats {
    pub iterations: usize,
    pub relative_gradient: f64,
    pub converged: bool,
}

/// The proximal map of the data term, warm-started from its previous output.
#[derive(Clone, Debug)]
pub struct ForwardModelAgent {
    name: String,
    fm: ForwardModelTerm,
    sigma: f64,
    opts: ProxOptions,
    warm_start: bool,
    previous: Option<Volume>,
    last: Option<ProxStats>,
}

impl ForwardModelAgent {
    pub fn new(fm: ForwardModelTerm, sigma: f64, opts: ProxOptions) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return config(format!("forward agent: sigma must be positive, got {sigma}"));
        }
        Ok(Self {
            name: "forward".into(),
            fm,
            sigma,
            opts,
            warm_start: true,
            previous: None,
            last: None,
        })
    }

    /// Start every solve from the input instead of the previous output.
    pub fn cold(mut self) -> Self {
        self.warm_start = false;
        self
    }

    pub fn term(&self) -> &ForwardModelTerm {
        &self.fm
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn options(&self) -> &ProxOptions {
        &self.opts
    }

    pub fn last_stats(&self) -> Option<ProxStats> {
        self.last
    }

    pub fn reset(&mut self) {
        self.previous = None;
        self.last = None;
    }
}

impl Agent for ForwardModelAgent {
    fn name(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> AgentKind {
        AgentKind::Proximal
    }

    fn apply(&mut self, x: &Volume) -> Result<Volume> {
        let start = if self.warm_start {
            self.previous.as_ref().filter(|p| p.same_shape(x))
        } else {
            None
        };
        let out = proximal_solve(&self.fm, x, self.sigma, &self.opts, start)?;
        if !out.converged {
            warn!(
                "forward agent: proximal solve stopped after {} iterations at relative gradient {:.3e}",
                out.iterations, out.relative_gradient
            );
        }
        self.last = Some(ProxStats {
            iterations: out.iterations,
            relative_gradient: out.relative_gradient,
            converged: out.converged,
        });
        if self.warm_start {
            self.previous = Some(out.volume.clone());
        }
        Ok(out.volume)
    }
}

pub fn forward_model_agent(fm: ForwardModelTerm, sigma: f64) -> Result<ForwardModelAgent> {
    ForwardModelAgent::new(fm, sigma, ProxOptions::default())
}
