//! Recorded episodes and padded minibatches of them.

use crate::autodiff::Tensor;
use crate::env::{EnvInfo, EnvStep};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// One episode of `len` transitions. Per-step observation fields hold
/// `len + 1` entries (the final entry is the post-terminal observation).
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub obs: Vec<Vec<Vec<f64>>>,
    pub state: Vec<Vec<f64>>,
    pub avail: Vec<Vec<Vec<bool>>>,
    pub actions: Vec<Vec<usize>>,
    pub rewards: Vec<f64>,
    pub terminated: Vec<bool>,
}

impl Episode {
    pub fn start(first: &EnvStep) -> Self {
        Self {
            obs: vec![first.observations.clone()],
            state: vec![first.state.clone()],
            avail: vec![first.available_actions.clone()],
            actions: Vec::new(),
            rewards: Vec::new(),
            terminated: Vec::new(),
        }
    }

    pub fn push(&mut self, actions: Vec<usize>, next: &EnvStep) {
        self.actions.push(actions);
        self.rewards.push(next.reward);
        self.terminated.push(next.terminated);
        self.obs.push(next.observations.clone());
        self.state.push(next.state.clone());
        self.avail.push(next.available_actions.clone());
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }
}

/// Episodes padded to a common length, stored flat and row-major.
#[derive(Debug, Clone)]
pub struct EpisodeBatch {
    pub batch: usize,
    /// Number of transition slots (longest episode).
    pub max_t: usize,
    pub n_agents: usize,
    pub n_actions: usize,
    pub obs_dim: usize,
    pub state_dim: usize,
    /// `[batch, max_t + 1, n_agents, obs_dim]`
    pub obs: Vec<f64>,
    /// `[batch, max_t + 1, state_dim]`
    pub state: Vec<f64>,
    /// `[batch, max_t + 1, n_agents, n_actions]`; padding slots allow everything.
    pub avail: Vec<bool>,
    /// `[batch, max_t, n_agents]`
    pub actions: Vec<usize>,
    /// `[batch, max_t]`
    pub reward: Vec<f64>,
    pub terminated: Vec<bool>,
    /// True for real (non-padding) transitions.
    pub filled: Vec<bool>,
}

impl EpisodeBatch {
    pub fn from_episodes(info: &EnvInfo, episodes: &[&Episode]) -> Result<Self> {
        if episodes.is_empty() {
            return Err(Error::invalid("episode batch", "no episodes"));
        }
        let (n, a, od, sd) = (info.n_agents, info.n_actions, info.obs_dim, info.state_dim);
        let b = episodes.len();
        let max_t = episodes.iter().map(|e| e.len()).max().unwrap_or(0).max(1);
        let mut out = Self {
            batch: b,
            max_t,
            n_agents: n,
            n_actions: a,
            obs_dim: od,
            state_dim: sd,
            obs: vec![0.0; b * (max_t + 1) * n * od],
            state: vec![0.0; b * (max_t + 1) * sd],
            avail: vec![true; b * (max_t + 1) * n * a],
            actions: vec![0; b * max_t * n],
            reward: vec![0.0; b * max_t],
            terminated: vec![false; b * max_t],
            filled: vec![false; b * max_t],
        };
        for (bi, ep) in episodes.iter().enumerate() {
            for t in 0..=ep.len() {
                let slot = bi * (max_t + 1) + t;
                for i in 0..n {
                    let o = &ep.obs[t][i];
                    if o.len() != od {
                        return Err(Error::shape("episode obs", &[o.len()], &[od]));
                    }
                    out.obs[(slot * n + i) * od..(slot * n + i + 1) * od].copy_from_slice(o);
                    out.avail[(slot * n + i) * a..(slot * n + i + 1) * a]
                        .copy_from_slice(&ep.avail[t][i]);
                }
                out.state[slot * sd..(slot + 1) * sd].copy_from_slice(&ep.state[t]);
            }
            for t in 0..ep.len() {
                let k = bi * max_t + t;
                out.actions[k * n..(k + 1) * n].copy_from_slice(&ep.actions[t]);
                out.reward[k] = ep.rewards[t];
                out.terminated[k] = ep.terminated[t];
                out.filled[k] = true;
            }
        }
        Ok(out)
    }

    /// Observations at slot `t` for every (episode, agent), episode-major:
    /// `[batch * n_agents, obs_dim]`.
    pub fn obs_rows<T: Scalar>(&self, t: usize) -> Tensor<T> {
        let (n, od) = (self.n_agents, self.obs_dim);
        let mut data = Vec::with_capacity(self.batch * n * od);
        for b in 0..self.batch {
            let base = (b * (self.max_t + 1) + t) * n * od;
            data.extend(self.obs[base..base + n * od].iter().map(|&v| T::from_f64_lossy(v)));
        }
        Tensor::new(vec![self.batch * n, od], data).expect("consistent dims")
    }

    /// `[batch, state_dim]` at slot `t`.
    pub fn state_rows(&self, t: usize) -> Vec<f64> {
        let sd = self.state_dim;
        let mut data = Vec::with_capacity(self.batch * sd);
        for b in 0..self.batch {
            let base = (b * (self.max_t + 1) + t) * sd;
            data.extend_from_slice(&self.state[base..base + sd]);
        }
        data
    }

    pub fn avail_at(&self, b: usize, t: usize, agent: usize) -> &[bool] {
        let a = self.n_actions;
        let base = ((b * (self.max_t + 1) + t) * self.n_agents + agent) * a;
        &self.avail[base..base + a]
    }

    /// Actions at slot `t`, episode-major `[batch * n_agents]`.
    pub fn action_rows(&self, t: usize) -> Vec<usize> {
        let n = self.n_agents;
        let mut out = Vec::with_capacity(self.batch * n);
        for b in 0..self.batch {
            let k = b * self.max_t + t;
            out.extend_from_slice(&self.actions[k * n..(k + 1) * n]);
        }
        out
    }

    pub fn index(&self, b: usize, t: usize) -> usize {
        b * self.max_t + t
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(v: f64, term: bool) -> EnvStep {
        EnvStep {
            observations: vec![vec![v, 1.0], vec![v, 2.0]],
            state: vec![v],
            reward: v,
            terminated: term,
            available_actions: vec![vec![true, false], vec![true, true]],
        }
    }

    #[test]
    fn padding_and_masks() {
        let info = EnvInfo {
            n_agents: 2,
            n_actions: 2,
            obs_dim: 2,
            state_dim: 1,
            episode_limit: 3,
        };
        let mut short = Episode::start(&step(0.0, false));
        short.push(vec![0, 1], &step(1.0, true));
        let mut long = Episode::start(&step(0.0, false));
        long.push(vec![0, 0], &step(1.0, false));
        long.push(vec![0, 1], &step(2.0, true));
        let batch = EpisodeBatch::from_episodes(&info, &[&short, &long]).unwrap();
        assert_eq!(batch.max_t, 2);
        assert_eq!(batch.filled, vec![true, false, true, true]);
        assert_eq!(batch.terminated, vec![true, false, false, true]);
        assert_eq!(batch.action_rows(1), vec![0, 0, 0, 1]);
        // padded slot allows every action
        assert_eq!(batch.avail_at(0, 2, 0), &[true, true]);
        assert_eq!(batch.avail_at(1, 2, 0), &[true, false]);
        let rows = batch.obs_rows::<f64>(1);
        assert_eq!(rows.shape(), &[4, 2]);
        assert_eq!(rows.data()[..2], [1.0, 1.0]);
        assert_eq!(batch.state_rows(2), vec![0.0, 2.0]);
    }
}
