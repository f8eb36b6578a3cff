use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{one_hot, EnvInfo, EnvStep, Environment};
use crate::error::{Error, Result};
use crate::rng::SimRng;

pub const NONDEC_2X2: &str = "nondec-2x2";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixState {
    pub probability: f64,
    /// Row-major over the joint action, agent 0 most significant.
    pub payoff: Vec<f64>,
}

/// One-step cooperative game whose payoff table depends on a latent state
/// drawn at reset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixGameSpec {
    pub num_agents: usize,
    pub actions_per_agent: usize,
    pub states: Vec<MatrixState>,
    #[serde(default)]
    pub state_observable: bool,
}

impl MatrixGameSpec {
    /// Two equiprobable hidden states: s1 pays 4 for (A,A), s2 pays 2 for (B,B).
    /// Without seeing the state the best blind policy is (A,A), worth 2 on average.
    pub fn nondec_2x2() -> Self {
        Self {
            num_agents: 2,
            actions_per_agent: 2,
            states: vec![
                MatrixState {
                    probability: 0.5,
                    payoff: vec![4.0, 2.0, 2.0, 0.0],
                },
                MatrixState {
                    probability: 0.5,
                    payoff: vec![0.0, 1.0, 1.0, 2.0],
                },
            ],
            state_observable: false,
        }
    }

    pub fn num_joint_actions(&self) -> usize {
        self.actions_per_agent.pow(self.num_agents as u32)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_agents == 0 || self.actions_per_agent == 0 {
            return Err(Error::InvalidEnv("need at least one agent and one action".into()));
        }
        if self.states.is_empty() {
            return Err(Error::InvalidEnv("matrix game has no states".into()));
        }
        let total: f64 = self.states.iter().map(|s| s.probability).sum();
        if (total - 1.0).abs() > 1e-9 || self.states.iter().any(|s| !(s.probability >= 0.0)) {
            return Err(Error::InvalidEnv(format!(
                "state probabilities must be non-negative and sum to 1, got {total}"
            )));
        }
        let n = self.num_joint_actions();
        for (k, s) in self.states.iter().enumerate() {
            if s.payoff.len() != n {
                return Err(Error::InvalidEnv(format!(
                    "state {k}: payoff has {} entries, expected {n}",
                    s.payoff.len()
                )));
            }
            if s.payoff.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidEnv(format!("state {k}: non-finite payoff")));
            }
        }
        Ok(())
    }

    pub fn joint_index(&self, actions: &[usize]) -> usize {
        actions
            .iter()
            .fold(0, |acc, &a| acc * self.actions_per_agent + a)
    }

    pub fn joint_from_index(&self, mut index: usize) -> Vec<usize> {
        let mut out = vec![0; self.num_agents];
        for slot in out.iter_mut().rev() {
            *slot = index % self.actions_per_agent;
            index /= self.actions_per_agent;
        }
        out
    }

    /// All joint actions in row-major order.
    pub fn joint_actions(&self) -> Vec<Vec<usize>> {
        (0..self.num_joint_actions())
            .map(|i| self.joint_from_index(i))
            .collect()
    }

    /// Probability-weighted payoff of a joint action over the latent states.
    pub fn expected_return(&self, actions: &[usize]) -> f64 {
        let j = self.joint_index(actions);
        self.states.iter().map(|s| s.probability * s.payoff[j]).sum()
    }

    pub fn obs_dim(&self) -> usize {
        let context = if self.state_observable {
            self.states.len()
        } else {
            1
        };
        context + self.num_agents
    }

    /// Agent observation in latent state `k`: either a constant `[1.0]` or the
    /// state one-hot, followed by the agent id one-hot.
    pub fn observation(&self, k: usize, agent: usize) -> Vec<f64> {
        let mut obs = if self.state_observable {
            one_hot(self.states.len(), k)
        } else {
            vec![1.0]
        };
        obs.extend(one_hot(self.num_agents, agent));
        obs
    }

    pub fn state_vector(&self, k: usize) -> Vec<f64> {
        one_hot(self.states.len(), k)
    }

    /// Latent states grouped by what the agents observe in them. With a
    /// hidden state every latent state falls into a single context.
    pub fn observation_contexts(&self) -> Vec<Vec<usize>> {
        if self.state_observable {
            (0..self.states.len()).map(|k| vec![k]).collect()
        } else {
            vec![(0..self.states.len()).collect()]
        }
    }

    fn step_for(&self, k: usize, reward: f64, terminated: bool) -> EnvStep {
        EnvStep {
            observations: (0..self.num_agents).map(|i| self.observation(k, i)).collect(),
            state: self.state_vector(k),
            reward,
            terminated,
            available_actions: vec![vec![true; self.actions_per_agent]; self.num_agents],
        }
    }
}

#[derive(Debug, Clone)]
pub struct MatrixGame {
    spec: MatrixGameSpec,
    state: usize,
    done: bool,
}

impl MatrixGame {
    pub fn new(spec: MatrixGameSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            spec,
            state: 0,
            done: true,
        })
    }

    pub fn spec(&self) -> &MatrixGameSpec {
        &self.spec
    }

    pub fn latent_state(&self) -> usize {
        self.state
    }
}

impl Environment for MatrixGame {
    fn info(&self) -> EnvInfo {
        EnvInfo {
            n_agents: self.spec.num_agents,
            n_actions: self.spec.actions_per_agent,
            obs_dim: self.spec.obs_dim(),
            state_dim: self.spec.states.len(),
            episode_limit: 1,
        }
    }

    fn reset(&mut self, rng: &mut SimRng) -> EnvStep {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        self.state = self.spec.states.len() - 1;
        for (k, s) in self.spec.states.iter().enumerate() {
            acc += s.probability;
            if u < acc {
                self.state = k;
                break;
            }
        }
        self.done = false;
        self.spec.step_for(self.state, 0.0, false)
    }

    fn step(&mut self, actions: &[usize], _rng: &mut SimRng) -> Result<EnvStep> {
        if self.done {
            return Err(Error::InvalidEnv("step after episode end; call reset".into()));
        }
        if actions.len() != self.spec.num_agents {
            return Err(Error::InvalidEnv(format!(
                "expected {} actions, got {}",
                self.spec.num_agents,
                actions.len()
            )));
        }
        for (agent, &a) in actions.iter().enumerate() {
            if a >= self.spec.actions_per_agent {
                return Err(Error::InvalidAction {
                    agent,
                    action: a,
                    reason: "out of range",
                });
            }
        }
        let reward = self.spec.states[self.state].payoff[self.spec.joint_index(actions)];
        self.done = true;
        Ok(self.spec.step_for(self.state, reward, true))
    }
}
