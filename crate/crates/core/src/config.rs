//! TOML experiment configuration.
//!
//! ```toml
//! seeds = [0, 1]
//! output_dir = "runs/nondec"
//!
//! [env]
//! kind = "preset"
//! name = "nondec-2x2"
//!
//! [algorithm]
//! family = "qtranpp"
//!
//! [run]
//! total_env_steps = 5000
//! full_exploration = true
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::algo::AlgorithmSpec;
use crate::autodiff::Checkpoint;
use crate::env::EnvSpec;
use crate::error::{Error, Result};
use crate::harness::{Experiment, RunConfig};
use crate::nets::{FactoredModel, NetworkConfig};

/// Overrides the base directory of relative `output_dir` values.
pub const OUTPUT_ROOT_ENV: &str = "FACTORQ_OUTPUT_ROOT";

pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub env: EnvSpec,
    #[serde(default)]
    pub algorithm: AlgorithmSpec,
    #[serde(default)]
    pub network: NetworkConfig,
    #[serde(default)]
    pub run: RunConfig,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

impl ExperimentConfig {
    pub fn new(env: EnvSpec, algorithm: AlgorithmSpec) -> Self {
        Self {
            seeds: default_seeds(),
            output_dir: default_output_dir(),
            env,
            algorithm,
            network: NetworkConfig::default(),
            run: RunConfig::default(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim_end().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must list at least one seed".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        self.experiment().validate().map_err(|e| match e {
            Error::InvalidSpec(m) | Error::InvalidEnv(m) => Error::Config(m),
            other => other,
        })
    }

    pub fn experiment(&self) -> Experiment {
        Experiment {
            env: self.env.clone(),
            algorithm: self.algorithm,
            network: self.network,
            run: self.run,
        }
    }

    /// The config with every default written out.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }

    /// `output_dir`, rebased under `$FACTORQ_OUTPUT_ROOT` when it is relative and the variable is set.
    pub fn resolved_output_dir(&self) -> PathBuf {
        resolve_output(&self.output_dir)
    }
}

pub const CHECKPOINT_CONFIG_KEY: &str = "experiment";
pub const CHECKPOINT_SEED_KEY: &str = "seed";

/// Save online and target parameters along with the experiment that produced them.
pub fn save_checkpoint(path: &Path, exp: &Experiment, seed: u64, model: &FactoredModel<f64>) -> Result<()> {
    let cfg = ExperimentConfig {
        seeds: vec![seed],
        output_dir: PathBuf::from("."),
        env: exp.env.clone(),
        algorithm: exp.algorithm,
        network: exp.network,
        run: exp.run,
    };
    let mut ck = model.to_checkpoint();
    ck.metadata.insert(CHECKPOINT_CONFIG_KEY.into(), cfg.to_toml()?);
    ck.metadata.insert(CHECKPOINT_SEED_KEY.into(), seed.to_string());
    ck.save(path)
}

/// Rebuild the model stored by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<(ExperimentConfig, u64, FactoredModel<f64>)> {
    let ck = Checkpoint::load(path)?;
    let text = ck
        .metadata
        .get(CHECKPOINT_CONFIG_KEY)
        .ok_or_else(|| Error::Checkpoint(format!("{}: no `{CHECKPOINT_CONFIG_KEY}` metadata", path.display())))?;
    let cfg = ExperimentConfig::parse(text)?;
    let seed = ck
        .metadata
        .get(CHECKPOINT_SEED_KEY)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Checkpoint(format!("{}: bad `{CHECKPOINT_SEED_KEY}` metadata", path.display())))?;
    let mut model = cfg.experiment().build_model(seed)?;
    model.load_checkpoint(&ck)?;
    Ok((cfg, seed, model))
}

pub fn resolve_output(dir: &Path) -> PathBuf {
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) if dir.is_relative() && !root.is_empty() => PathBuf::from(root).join(dir),
        _ => dir.to_path_buf(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algo::Family;

    #[test]
    fn minimal_config_fills_defaults() {
        let c = ExperimentConfig::parse("[env]\nkind = \"preset\"\nname = \"nondec-2x2\"\n").unwrap();
        assert_eq!(c.seeds, vec![0]);
        assert_eq!(c.algorithm, AlgorithmSpec::default());
        assert_eq!(c.run, RunConfig::default());
    }

    #[test]
    fn unknown_key_is_named() {
        let text = "[env]\nkind = \"preset\"\nname = \"nondec-2x2\"\n[algorithm]\nlamda_opt = 1.0\n";
        let err = ExperimentConfig::parse(text).unwrap_err().to_string();
        assert!(err.contains("lamda_opt"), "{err}");
    }

    #[test]
    fn resolved_toml_round_trips() {
        let mut c = ExperimentConfig::new(EnvSpec::preset("grid-4x4"), AlgorithmSpec::new(Family::Qmix));
        c.seeds = vec![3, 1];
        c.run.optimizer.lr = 1e-3;
        let back = ExperimentConfig::parse(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn inline_matrix_env() {
        let text = r#"
[env]
kind = "matrix"
num_agents = 2
actions_per_agent = 2
states = [{ probability = 1.0, payoff = [1.0, 0.0, 0.0, 1.0] }]
"#;
        let c = ExperimentConfig::parse(text).unwrap();
        assert!(c.env.as_matrix().is_some());
    }

    #[test]
    fn bad_values_rejected() {
        let base = "[env]\nkind = \"preset\"\nname = \"nondec-2x2\"\n";
        for extra in ["[algorithm]\ngamma = 1.5\n", "[run]\nbatch_size = 0\n", "seeds = []\n"] {
            let text = if extra.starts_with('[') {
                format!("{base}{extra}")
            } else {
                format!("{extra}{base}")
            };
            assert!(matches!(ExperimentConfig::parse(&text), Err(Error::Config(_))), "{extra}");
        }
        assert!(ExperimentConfig::parse("[env]\nkind = \"preset\"\nname = \"nope\"\n").is_err());
    }
}
