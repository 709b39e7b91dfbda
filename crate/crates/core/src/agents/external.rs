use std::path::PathBuf;
use std::process::Command;

use super::{Agent, AgentKind};
use crate::error::{Error, Result};
use crate::io::{read_volume_raw, write_volume};
use crate::volume::Volume;

/// Runs an external executable as an agent.
///
/// Each application writes the input to `in.raw` (+ `in.json`) in a fresh
/// temporary directory and runs `program [args..] <in.raw> <out.raw>`. The
/// program must write `out.raw` as little-endian f32 with the input dims.
#[derive(Clone, Debug)]
pub struct ExternalCommandAgent {
    name: String,
    program: PathBuf,
    args: Vec<String>,
    kind: AgentKind,
}

impl ExternalCommandAgent {
    pub fn new(name: impl Into<String>, program: impl Into<PathBuf>, args: Vec<String>) -> Self {
        Self {
            name: name.into(),
            program: program.into(),
            args,
            kind: AgentKind::Denoiser,
        }
    }

    pub fn with_kind(mut self, kind: AgentKind) -> Self {
        self.kind = kind;
        self
    }

    fn fail(&self, message: impl Into<String>) -> Error {
        Error::Agent {
            name: self.name.clone(),
            message: message.into(),
        }
    }
}

impl Agent for ExternalCommandAgent {
    fn name(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> AgentKind {
        self.kind
    }

    fn apply(&mut self, x: &Volume) -> Result<Volume> {
        let dir = tempfile::tempdir().map_err(|e| self.fail(format!("cannot create temp dir: {e}")))?;
        let input = dir.path().join("in.raw");
        let output = dir.path().join("out.raw");
        write_volume(&input, x)?;
        let status = Command::new(&self.program)
            .args(&self.args)
            .arg(&input)
            .arg(&output)
            .status()
            .map_err(|e| self.fail(format!("cannot run {}: {e}", self.program.display())))?;
        if !status.success() {
            return Err(self.fail(format!("{} exited with {status}", self.program.display())));
        }
        let out = read_volume_raw(&output, *x.grid()).map_err(|e| self.fail(e.to_string()))?;
        if !out.is_finite() {
            return Err(self.fail("output contains non-finite values"));
        }
        Ok(out)
    }
}
