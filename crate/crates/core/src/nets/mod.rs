//! Agent utilities, hypernetwork mixers and the joint/transformed estimators.

mod mixer;
mod model;

pub use mixer::{Mixer, MixerWeights, NetworkConfig};
pub use model::{
    Architecture, FactoredModel, JointKind, JointTables, Prepared, TransformedKind, UtilityNetwork,
};

use crate::error::{Error, Result};

/// Index of the largest allowed entry; ties go to the lowest index.
pub fn masked_argmax(q: &[f64], mask: &[bool]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, (&v, &ok)) in q.iter().zip(mask).enumerate() {
        if ok && best.is_none_or(|b| v > q[b]) {
            best = Some(i);
        }
    }
    best
}

/// Per-agent greedy actions under the availability masks.
pub fn greedy_joint_action(q: &[Vec<f64>], masks: &[Vec<bool>]) -> Result<Vec<usize>> {
    if q.len() != masks.len() {
        return Err(Error::invalid("greedy_joint_action", "one mask per agent required"));
    }
    q.iter()
        .zip(masks)
        .enumerate()
        .map(|(i, (qi, mi))| {
            if qi.len() != mi.len() {
                return Err(Error::shape("greedy_joint_action", &[qi.len()], &[mi.len()]));
            }
            masked_argmax(qi, mi).ok_or(Error::NoAvailableAction(i))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algo::{AlgorithmSpec, Family};
    use crate::autodiff::{Graph, Tensor};
    use crate::env::{EnvInfo, Environment, MatrixGame, MatrixGameSpec};
    use crate::episode::{Episode, EpisodeBatch};
    use crate::rng::{stream_rng, Stream};

    fn info(n: usize, a: usize) -> EnvInfo {
        EnvInfo {
            n_agents: n,
            n_actions: a,
            obs_dim: 1 + n,
            state_dim: 2,
            episode_limit: 1,
        }
    }

    fn model(family: Family, n: usize, a: usize, seed: u64) -> FactoredModel<f64> {
        let arch = Architecture::for_spec(&AlgorithmSpec::new(family));
        FactoredModel::new(arch, NetworkConfig::default(), info(n, a), &mut stream_rng(seed, Stream::Init)).unwrap()
    }

    #[test]
    fn greedy_tie_and_mask() {
        assert_eq!(greedy_joint_action(&[vec![1.0, 1.0]], &[vec![true, true]]).unwrap(), vec![0]);
        assert_eq!(greedy_joint_action(&[vec![5.0, 1.0]], &[vec![false, true]]).unwrap(), vec![1]);
        assert!(matches!(
            greedy_joint_action(&[vec![1.0], vec![2.0]], &[vec![true], vec![false]]),
            Err(Error::NoAvailableAction(1))
        ));
    }

    #[test]
    fn zero_final_layer_gives_zero_q() {
        let mut m = model(Family::Qmix, 2, 2, 0);
        m.params.zero_prefix("agent/fc2");
        let mut h = crate::autodiff::GruState::zeros(2, 64);
        let q = m.act_q(&[vec![1.0, 1.0, 0.0], vec![1.0, 0.0, 1.0]], &mut h).unwrap();
        assert_eq!(q, vec![vec![0.0, 0.0], vec![0.0, 0.0]]);
    }

    #[test]
    fn matrix_batch_utility_shape_and_permutation() {
        let m = model(Family::Vdn, 2, 2, 1);
        let spec = MatrixGameSpec::nondec_2x2();
        let mut env = MatrixGame::new(spec).unwrap();
        let mut rng = stream_rng(0, Stream::Env);
        let mut eps = Vec::new();
        for k in 0..3 {
            let first = env.reset(&mut rng);
            let mut ep = Episode::start(&first);
            let next = env.step(&[k % 2, 1], &mut rng).unwrap();
            ep.push(vec![k % 2, 1], &next);
            eps.push(ep);
        }
        let inf = env.info();
        let refs: Vec<&Episode> = eps.iter().collect();
        let batch = EpisodeBatch::from_episodes(&inf, &refs).unwrap();
        let mut g = Graph::new();
        let q = m.unroll_utilities(&mut g, m.frozen_online(), &batch, batch.max_t).unwrap();
        assert_eq!(q.len(), 1);
        assert_eq!(g.shape(q[0]), &[6, 2]);
        let forward = g.data(q[0]).to_vec();

        let rev: Vec<&Episode> = eps.iter().rev().collect();
        let batch = EpisodeBatch::from_episodes(&inf, &rev).unwrap();
        let mut g = Graph::new();
        let q = m.unroll_utilities(&mut g, m.frozen_online(), &batch, 1).unwrap();
        let back = g.data(q[0]).to_vec();
        // rows are (episode, agent); all observations are identical per agent here
        for e in 0..3 {
            assert_eq!(forward[e * 4..e * 4 + 4], back[(2 - e) * 4..(2 - e) * 4 + 4]);
        }
    }

    fn eval_one(m: &FactoredModel<f64>, state: &[f64], q: &[f64]) -> (f64, Vec<f64>) {
        let mut g = Graph::new();
        let p = m.frozen_online();
        let s = g.constant(Tensor::new(vec![1, state.len()], state.to_vec()).unwrap());
        let qv = g.constant(Tensor::new(vec![1, q.len()], q.to_vec()).unwrap());
        let prep = m.prepare(&mut g, p, s).unwrap();
        let jt = m.q_jt(&mut g, p, &prep, qv).unwrap();
        let heads = m.q_tran(&mut g, &prep, qv).unwrap();
        (g.value(jt).item(), heads.iter().map(|&h| g.value(h).item()).collect())
    }

    #[test]
    fn vdn_sums() {
        let m = model(Family::Vdn, 2, 2, 0);
        assert_eq!(eval_one(&m, &[1.0, 0.0], &[1.5, 0.5]).0, 2.0);
    }

    #[test]
    fn degenerate_multi_head_returns_own_utility() {
        let mut m = model(Family::Qtranpp, 3, 2, 4);
        m.params.zero_prefix("tran/");
        let (_, heads) = eval_one(&m, &[0.2, 0.8], &[0.7, -1.1, 2.5]);
        assert_eq!(heads, vec![0.7, -1.1, 2.5]);
    }

    #[test]
    fn qtran_baseline_is_additive() {
        let m = model(Family::Qtran, 2, 3, 2);
        let (_, a) = eval_one(&m, &[0.1, 0.9], &[0.3, 0.4]);
        let (_, b) = eval_one(&m, &[0.1, 0.9], &[0.3, 1.4]);
        assert!((b[0] - a[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn semi_monotonic_with_free_branch_zeroed_is_monotonic() {
        let mut m = model(Family::Qtranpp, 2, 2, 9);
        m.params.zero_prefix("jt/free/");
        let (base, _) = eval_one(&m, &[0.5, 0.5], &[0.0, 0.0]);
        let (up, _) = eval_one(&m, &[0.5, 0.5], &[0.1, 0.0]);
        assert!(up >= base);
    }

    #[test]
    fn tables_agree_with_single_evaluation() {
        let m = model(Family::Qtranpp, 2, 2, 3);
        let q = vec![vec![0.4, -0.2], vec![1.0, 0.3]];
        let tables = m.joint_tables(&[1.0, 0.0], &q).unwrap();
        let (jt, heads) = eval_one(&m, &[1.0, 0.0], &[-0.2, 1.0]);
        assert!((tables.q_jt[2] - jt).abs() < 1e-12);
        assert!((tables.q_tran[1][2] - heads[1]).abs() < 1e-12);
    }

    #[test]
    fn checkpoint_roundtrip() {
        let m = model(Family::Qmix, 2, 2, 5);
        let mut other = model(Family::Qmix, 2, 2, 6);
        other.load_checkpoint(&m.to_checkpoint()).unwrap();
        assert!(other.params.same_values(&m.params));
        assert!(other.target.same_values(&m.target));
    }
}
