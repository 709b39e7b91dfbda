//! Multi-agent consensus equilibrium (MACE) reconstruction for ultra-sparse
//! parallel-beam CT.
//!
//! The crate bundles the matched projector pair, a cracked-cylinder phantom
//! with calibrated noise, FBP and qGGMRF baselines, the MACE agents (data
//! fidelity, multi-slice denoisers, weak rotational invariance) and the
//! Douglas-Rachford consensus solver, plus NRMSE/SSIM scoring.

pub mod agents;
pub mod error;
pub mod fbp;
pub mod geometry;
pub mod io;
pub mod mace;
pub mod mbir;
pub mod metrics;
pub mod phantom;
pub mod projector;
pub mod sinogram;
pub mod volume;

pub use error::{Error, Result};
pub use geometry::ScanGeometry;
pub use sinogram::Sinogram;
pub use volume::{Grid, Volume};
