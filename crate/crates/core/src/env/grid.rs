use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::{one_hot, EnvInfo, EnvStep, Environment};
use crate::error::{Error, Result};
use crate::rng::SimRng;

pub(crate) const GRID_4X4: &str = "grid-4x4";

/// no-op, up, down, left, right
pub const GRID_ACTIONS: usize = 5;

const MOVES: [(i64, i64); GRID_ACTIONS] = [(0, 0), (0, -1), (0, 1), (-1, 0), (1, 0)];

/// Cooperative capture: a target is taken when at least two agents stand on
/// it in the same step. An optional per-agent penalty for standing next to
/// an uncaptured target rewards keeping away.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridGameSpec {
    pub width: usize,
    pub height: usize,
    pub num_agents: usize,
    pub num_targets: usize,
    pub episode_limit: usize,
    pub capture_reward: f64,
    #[serde(default)]
    pub damage_penalty: f64,
    pub sight_radius: usize,
}

impl GridGameSpec {
    pub fn grid_4x4() -> Self {
        Self {
            width: 4,
            height: 4,
            num_agents: 2,
            num_targets: 1,
            episode_limit: 10,
            capture_reward: 10.0,
            damage_penalty: 0.0,
            sight_radius: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidEnv("grid must be at least 1x1".into()));
        }
        if self.num_agents == 0 {
            return Err(Error::InvalidEnv("grid game needs at least one agent".into()));
        }
        if self.episode_limit == 0 {
            return Err(Error::InvalidEnv("episode_limit must be >= 1".into()));
        }
        if self.num_agents + self.num_targets > self.width * self.height {
            return Err(Error::InvalidEnv(format!(
                "{} agents and {} targets do not fit on a {}x{} grid",
                self.num_agents, self.num_targets, self.width, self.height
            )));
        }
        if !self.capture_reward.is_finite() || !self.damage_penalty.is_finite() {
            return Err(Error::InvalidEnv("rewards must be finite".into()));
        }
        Ok(())
    }

    fn patch(&self) -> usize {
        2 * self.sight_radius + 1
    }

    pub fn obs_dim(&self) -> usize {
        2 * self.patch() * self.patch() + self.num_agents
    }

    pub fn state_dim(&self) -> usize {
        2 * (self.num_agents + self.num_targets)
    }
}

#[derive(Debug, Clone)]
pub struct GridGame {
    spec: GridGameSpec,
    agents: Vec<(i64, i64)>,
    targets: Vec<(i64, i64)>,
    captured: Vec<bool>,
    t: usize,
    done: bool,
}

impl GridGame {
    pub fn new(spec: GridGameSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            agents: vec![(0, 0); spec.num_agents],
            targets: vec![(0, 0); spec.num_targets],
            captured: vec![false; spec.num_targets],
            spec,
            t: 0,
            done: true,
        })
    }

    pub fn agent_positions(&self) -> &[(i64, i64)] {
        &self.agents
    }

    pub fn target_positions(&self) -> &[(i64, i64)] {
        &self.targets
    }

    fn inside(&self, (x, y): (i64, i64)) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.spec.width && (y as usize) < self.spec.height
    }

    fn available(&self, agent: usize) -> Vec<bool> {
        let (x, y) = self.agents[agent];
        MOVES
            .iter()
            .map(|&(dx, dy)| self.inside((x + dx, y + dy)))
            .collect()
    }

    fn observation(&self, agent: usize) -> Vec<f64> {
        let p = self.spec.patch();
        let r = self.spec.sight_radius as i64;
        let (ax, ay) = self.agents[agent];
        let mut agents = vec![0.0; p * p];
        let mut targets = vec![0.0; p * p];
        let cell = |(x, y): (i64, i64)| {
            let (dx, dy) = (x - ax + r, y - ay + r);
            (dx >= 0 && dy >= 0 && dx < p as i64 && dy < p as i64)
                .then(|| dy as usize * p + dx as usize)
        };
        for (j, &pos) in self.agents.iter().enumerate() {
            if j != agent {
                if let Some(c) = cell(pos) {
                    agents[c] += 1.0;
                }
            }
        }
        for (&pos, &cap) in self.targets.iter().zip(&self.captured) {
            if !cap {
                if let Some(c) = cell(pos) {
                    targets[c] = 1.0;
                }
            }
        }
        let mut obs = agents;
        obs.extend(targets);
        obs.extend(one_hot(self.spec.num_agents, agent));
        obs
    }

    fn state(&self) -> Vec<f64> {
        let (w, h) = (self.spec.width as f64, self.spec.height as f64);
        let mut s = Vec::with_capacity(self.spec.state_dim());
        for &(x, y) in &self.agents {
            s.push(x as f64 / w);
            s.push(y as f64 / h);
        }
        for (&(x, y), &cap) in self.targets.iter().zip(&self.captured) {
            if cap {
                s.extend([-1.0, -1.0]);
            } else {
                s.push(x as f64 / w);
                s.push(y as f64 / h);
            }
        }
        s
    }

    fn snapshot(&self, reward: f64, terminated: bool) -> EnvStep {
        EnvStep {
            observations: (0..self.spec.num_agents).map(|i| self.observation(i)).collect(),
            state: self.state(),
            reward,
            terminated,
            available_actions: (0..self.spec.num_agents).map(|i| self.available(i)).collect(),
        }
    }
}

impl Environment for GridGame {
    fn info(&self) -> EnvInfo {
        EnvInfo {
            n_agents: self.spec.num_agents,
            n_actions: GRID_ACTIONS,
            obs_dim: self.spec.obs_dim(),
            state_dim: self.spec.state_dim(),
            episode_limit: self.spec.episode_limit,
        }
    }

    fn reset(&mut self, rng: &mut SimRng) -> EnvStep {
        let n = self.spec.num_agents + self.spec.num_targets;
        let cells = sample(rng, self.spec.width * self.spec.height, n);
        let pos: Vec<(i64, i64)> = cells
            .iter()
            .map(|c| ((c % self.spec.width) as i64, (c / self.spec.width) as i64))
            .collect();
        self.agents = pos[..self.spec.num_agents].to_vec();
        self.targets = pos[self.spec.num_agents..].to_vec();
        self.captured = vec![false; self.spec.num_targets];
        self.t = 0;
        self.done = false;
        self.snapshot(0.0, false)
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
            if a >= GRID_ACTIONS {
                return Err(Error::InvalidAction {
                    agent,
                    action: a,
                    reason: "out of range",
                });
            }
            if !self.available(agent)[a] {
                return Err(Error::InvalidAction {
                    agent,
                    action: a,
                    reason: "masked",
                });
            }
        }
        for (pos, &a) in self.agents.iter_mut().zip(actions) {
            pos.0 += MOVES[a].0;
            pos.1 += MOVES[a].1;
        }

        let mut reward = 0.0;
        for (k, &target) in self.targets.iter().enumerate() {
            if self.captured[k] {
                continue;
            }
            let here = self.agents.iter().filter(|&&p| p == target).count();
            if here >= 2 {
                self.captured[k] = true;
                reward += self.spec.capture_reward;
            }
        }
        if self.spec.damage_penalty != 0.0 {
            for &(ax, ay) in &self.agents {
                let exposed = self
                    .targets
                    .iter()
                    .zip(&self.captured)
                    .any(|(&(tx, ty), &cap)| !cap && (ax - tx).abs() + (ay - ty).abs() <= 1);
                if exposed {
                    reward -= self.spec.damage_penalty;
                }
            }
        }

        self.t += 1;
        let terminated = self.captured.iter().all(|&c| c) || self.t >= self.spec.episode_limit;
        self.done = terminated;
        Ok(self.snapshot(reward, terminated))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};
    use rand::Rng;

    fn random_episode(env: &mut GridGame, rng: &mut SimRng) -> (f64, usize) {
        let mut step = env.reset(rng);
        let (mut total, mut len) = (0.0, 0);
        while !step.terminated {
            let actions: Vec<usize> = step
                .available_actions
                .iter()
                .map(|mask| {
                    let allowed: Vec<usize> = (0..GRID_ACTIONS).filter(|&a| mask[a]).collect();
                    allowed[rng.gen_range(0..allowed.len())]
                })
                .collect();
            step = env.step(&actions, rng).unwrap();
            total += step.reward;
            len += 1;
        }
        (total, len)
    }

    #[test]
    fn reset_places_distinct_cells() {
        let mut spec = GridGameSpec::grid_4x4();
        spec.num_agents = 3;
        spec.num_targets = 4;
        let mut env = GridGame::new(spec).unwrap();
        let mut rng = stream_rng(1, Stream::Env);
        for _ in 0..100 {
            env.reset(&mut rng);
            let mut all: Vec<_> = env.agent_positions().to_vec();
            all.extend(env.target_positions());
            let n = all.len();
            all.sort();
            all.dedup();
            assert_eq!(all.len(), n);
        }
    }

    #[test]
    fn no_targets_means_zero_return() {
        let mut spec = GridGameSpec::grid_4x4();
        spec.num_targets = 0;
        spec.damage_penalty = 1.0;
        let mut env = GridGame::new(spec.clone()).unwrap();
        let mut rng = stream_rng(2, Stream::Env);
        for _ in 0..30 {
            let (ret, len) = random_episode(&mut env, &mut rng);
            assert_eq!(ret, 0.0);
            // zero targets: every target is (vacuously) captured after one step
            assert!(len <= spec.episode_limit);
        }
    }

    #[test]
    fn episodes_respect_limit_and_masks() {
        let spec = GridGameSpec::grid_4x4();
        let mut env = GridGame::new(spec.clone()).unwrap();
        let mut rng = stream_rng(4, Stream::Env);
        for _ in 0..50 {
            let (_, len) = random_episode(&mut env, &mut rng);
            assert!(len >= 1 && len <= spec.episode_limit);
        }
        let step = env.reset(&mut rng);
        for mask in &step.available_actions {
            assert!(mask[0]);
        }
    }

    #[test]
    fn capture_requires_two_agents() {
        let spec = GridGameSpec {
            width: 3,
            height: 1,
            num_agents: 2,
            num_targets: 1,
            episode_limit: 5,
            capture_reward: 10.0,
            damage_penalty: 0.5,
            sight_radius: 1,
        };
        let mut env = GridGame::new(spec).unwrap();
        let mut rng = stream_rng(0, Stream::Env);
        env.reset(&mut rng);
        env.agents = vec![(0, 0), (2, 0)];
        env.targets = vec![(1, 0)];
        // one agent steps on: no capture, both agents adjacent -> -1.0
        let s = env.step(&[4, 0], &mut rng).unwrap();
        assert_eq!(s.reward, -1.0);
        assert!(!s.terminated);
        let s = env.step(&[0, 3], &mut rng).unwrap();
        assert_eq!(s.reward, 10.0);
        assert!(s.terminated);
    }

    #[test]
    fn masked_move_is_rejected() {
        let mut env = GridGame::new(GridGameSpec::grid_4x4()).unwrap();
        let mut rng = stream_rng(0, Stream::Env);
        env.reset(&mut rng);
        env.agents[0] = (0, 0);
        assert!(matches!(
            env.step(&[3, 0], &mut rng),
            Err(Error::InvalidAction { reason: "masked", .. })
        ));
    }

    #[test]
    fn observation_and_state_dims() {
        let spec = GridGameSpec::grid_4x4();
        let mut env = GridGame::new(spec.clone()).unwrap();
        let mut rng = stream_rng(0, Stream::Env);
        let s = env.reset(&mut rng);
        assert_eq!(s.observations[0].len(), spec.obs_dim());
        assert_eq!(s.state.len(), spec.state_dim());
    }

    #[test]
    fn fixed_seed_trace_is_reproducible() {
        let run = || {
            let mut env = GridGame::new(GridGameSpec::grid_4x4()).unwrap();
            let mut rng = stream_rng(9, Stream::Env);
            (0..5).map(|_| random_episode(&mut env, &mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }
}
