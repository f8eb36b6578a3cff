use std::collections::VecDeque;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::episode::Episode;
use crate::error::{Error, Result};
use crate::rng::SimRng;

/// FIFO store of whole episodes.
#[derive(Debug, Clone)]
pub struct EpisodeBuffer {
    capacity: usize,
    episodes: VecDeque<Episode>,
}

impl EpisodeBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("buffer capacity must be >= 1".into()));
        }
        Ok(Self {
            capacity,
            episodes: VecDeque::with_capacity(capacity.min(1 << 16)),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn push(&mut self, episode: Episode) {
        if self.episodes.len() == self.capacity {
            self.episodes.pop_front();
        }
        self.episodes.push_back(episode);
    }

    /// `n` distinct episodes, uniformly.
    pub fn sample(&self, n: usize, rng: &mut SimRng) -> Result<Vec<&Episode>> {
        if n > self.episodes.len() {
            return Err(Error::invalid(
                "buffer sample",
                format!("asked for {n} episodes, only {} stored", self.episodes.len()),
            ));
        }
        Ok(sample(rng, self.episodes.len(), n)
            .into_iter()
            .map(|i| &self.episodes[i])
            .collect())
    }
}

/// Linear ε decay from `eps_start` to `eps_end` over `anneal_steps` env steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExplorationSchedule {
    pub eps_start: f64,
    pub eps_end: f64,
    pub anneal_steps: u64,
}

impl Default for ExplorationSchedule {
    fn default() -> Self {
        Self {
            eps_start: 1.0,
            eps_end: 0.05,
            anneal_steps: 20_000,
        }
    }
}

impl ExplorationSchedule {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.eps_start)
            && (0.0..=1.0).contains(&self.eps_end)
            && self.eps_end <= self.eps_start;
        if !ok {
            return Err(Error::Config(format!(
                "need 0 <= eps_end <= eps_start <= 1, got {} and {}",
                self.eps_end, self.eps_start
            )));
        }
        Ok(())
    }

    pub fn value(&self, step: u64) -> f64 {
        if step >= self.anneal_steps {
            return self.eps_end;
        }
        let frac = step as f64 / self.anneal_steps as f64;
        (self.eps_start + frac * (self.eps_end - self.eps_start)).max(self.eps_end)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvStep;
    use crate::rng::{stream_rng, Stream};
    use proptest::prelude::*;

    fn ep(tag: f64) -> Episode {
        let s = EnvStep {
            observations: vec![vec![tag]],
            state: vec![tag],
            reward: tag,
            terminated: true,
            available_actions: vec![vec![true]],
        };
        let mut e = Episode::start(&s);
        e.push(vec![0], &s);
        e
    }

    #[test]
    fn fifo_eviction() {
        let mut b = EpisodeBuffer::new(3).unwrap();
        for i in 0..5 {
            b.push(ep(i as f64));
        }
        assert_eq!(b.len(), 3);
        let mut rng = stream_rng(0, Stream::Sampling);
        let mut tags: Vec<f64> = b.sample(3, &mut rng).unwrap().iter().map(|e| e.rewards[0]).collect();
        tags.sort_by(f64::total_cmp);
        assert_eq!(tags, vec![2.0, 3.0, 4.0]);
        assert!(b.sample(4, &mut rng).is_err());
    }

    proptest! {
        #[test]
        fn samples_are_distinct_and_bounded(cap in 1usize..40, pushes in 0usize..80, seed: u64) {
            let mut b = EpisodeBuffer::new(cap).unwrap();
            for i in 0..pushes {
                b.push(ep(i as f64));
                prop_assert!(b.len() <= cap);
            }
            let n = b.len().min(32);
            let mut rng = stream_rng(seed, Stream::Sampling);
            let mut tags: Vec<i64> = b.sample(n, &mut rng).unwrap().iter().map(|e| e.rewards[0] as i64).collect();
            tags.sort();
            tags.dedup();
            prop_assert_eq!(tags.len(), n);
        }

        #[test]
        fn epsilon_monotone_and_bounded(a in 0u64..100_000, b in 0u64..100_000, anneal in 0u64..50_000) {
            let s = ExplorationSchedule { anneal_steps: anneal, ..Default::default() };
            let (lo, hi) = (a.min(b), a.max(b));
            prop_assert!(s.value(lo) >= s.value(hi));
            prop_assert!(s.value(lo) <= 1.0 && s.value(hi) >= 0.05);
        }
    }

    #[test]
    fn epsilon_endpoints() {
        let s = ExplorationSchedule::default();
        assert_eq!(s.value(0), 1.0);
        assert!((s.value(10_000) - 0.525).abs() < 1e-12);
        assert_eq!(s.value(20_000), 0.05);
        assert_eq!(s.value(1_000_000), 0.05);
    }
}
