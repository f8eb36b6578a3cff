//! Episodic cooperative environments with a shared team reward.

mod grid;
mod matrix;

pub use grid::{GridGame, GridGameSpec, GRID_ACTIONS};
pub use matrix::{MatrixGame, MatrixGameSpec, MatrixState, NONDEC_2X2};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::rng::SimRng;

/// What every agent sees after a reset or a step.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvStep {
    /// One observation vector per agent.
    pub observations: Vec<Vec<f64>>,
    /// Global state, available to centralized training only.
    pub state: Vec<f64>,
    /// Team reward for the transition that produced this step (0 after reset).
    pub reward: f64,
    pub terminated: bool,
    /// Per agent, which actions are allowed next.
    pub available_actions: Vec<Vec<bool>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnvInfo {
    pub n_agents: usize,
    pub n_actions: usize,
    pub obs_dim: usize,
    pub state_dim: usize,
    pub episode_limit: usize,
}

pub trait Environment: Send {
    fn info(&self) -> EnvInfo;
    fn reset(&mut self, rng: &mut SimRng) -> EnvStep;
    fn step(&mut self, actions: &[usize], rng: &mut SimRng) -> Result<EnvStep>;
}

/// Environment selection as it appears in an experiment config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum EnvSpec {
    /// A named built-in (`nondec-2x2`, `grid-4x4`).
    Preset { name: String },
    Matrix(MatrixGameSpec),
    Grid(GridGameSpec),
}

impl EnvSpec {
    pub fn preset(name: &str) -> Self {
        EnvSpec::Preset {
            name: name.to_string(),
        }
    }

    /// Expand presets into their concrete spec.
    pub fn resolve(&self) -> Result<EnvSpec> {
        match self {
            EnvSpec::Preset { name } => match name.as_str() {
                NONDEC_2X2 => Ok(EnvSpec::Matrix(MatrixGameSpec::nondec_2x2())),
                grid::GRID_4X4 => Ok(EnvSpec::Grid(GridGameSpec::grid_4x4())),
                other => Err(crate::Error::InvalidEnv(format!(
                    "unknown preset `{other}` (known: {NONDEC_2X2}, {})",
                    grid::GRID_4X4
                ))),
            },
            other => {
                other.validate()?;
                Ok(other.clone())
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            EnvSpec::Preset { .. } => self.resolve().map(|_| ()),
            EnvSpec::Matrix(m) => m.validate(),
            EnvSpec::Grid(g) => g.validate(),
        }
    }

    pub fn build(&self) -> Result<Box<dyn Environment>> {
        Ok(match self.resolve()? {
            EnvSpec::Matrix(m) => Box::new(MatrixGame::new(m)?),
            EnvSpec::Grid(g) => Box::new(GridGame::new(g)?),
            EnvSpec::Preset { .. } => unreachable!("resolved"),
        })
    }

    pub fn info(&self) -> Result<EnvInfo> {
        Ok(self.build()?.info())
    }

    pub fn as_matrix(&self) -> Option<MatrixGameSpec> {
        match self.resolve().ok()? {
            EnvSpec::Matrix(m) => Some(m),
            _ => None,
        }
    }
}

pub(crate) fn one_hot(n: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}
