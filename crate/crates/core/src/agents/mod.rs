//! Agents for the consensus solver.
//!
//! An agent maps a volume to a volume of the same shape. The forward-model
//! agent is the proximal map of the data term; the prior agents are either
//! proximal maps (the quadratic test agent), black-box denoisers (per-plane
//! and volumetric non-local means, external executables) or geometric
//! operators (the weighted rotation average).

mod external;
mod forward;
mod nlm;
mod quadratic;
mod rotation;
mod slice;

pub use external::ExternalCommandAgent;
pub use forward::{forward_model_agent, ForwardModelAgent, ProxStats};
pub use nlm::{Denoiser2d, NlmDenoiser, NlmVolumeAgent, NlmVolumeConfig};
pub use quadratic::{quadratic_proximal_agent, QuadraticProximalAgent};
pub use rotation::{
    hamming_window, rotate_volume, rotate_volume_with, rotational_agent, RotationBoundary,
    RotationalAgent, RotationalAgentConfig,
};
pub use slice::{slice_denoiser_agent, Plane, SliceDenoiserAgent, SliceDenoiserConfig};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::volume::Volume;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentKind {
    Proximal,
    Denoiser,
    Geometric,
}

/// A volume-to-volume operator taking part in the consensus equilibrium.
///
/// `apply` takes `&mut self` so agents can keep private state such as a
/// warm start. Distinct agents are applied concurrently, hence `Send`.
pub trait Agent: Send {
    fn name(&self) -> &str;

    fn kind(&self) -> AgentKind;

    /// Output must have the shape of `x` and be finite when `x` is.
    fn apply(&mut self, x: &Volume) -> Result<Volume>;
}

impl std::fmt::Debug for dyn Agent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} ({:?})", self.name(), self.kind())
    }
}
