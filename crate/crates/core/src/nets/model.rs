use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mixer::{Mixer, MixerWeights, NetworkConfig};
use crate::algo::{Ablation, AlgorithmSpec, Family};
use crate::autodiff::{
    Activation, Checkpoint, Graph, GruCell, GruState, Linear, Mlp, ParameterStore, Params, Tensor, Var,
};
use crate::env::EnvInfo;
use crate::episode::EpisodeBatch;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Shared-parameter DRQN: FC + ReLU, GRU, FC. The agent id is part of the
/// observation, so one set of weights serves every agent.
#[derive(Debug, Clone)]
pub struct UtilityNetwork {
    pub fc1: Linear,
    pub gru: GruCell,
    pub fc2: Linear,
}

impl UtilityNetwork {
    pub fn new(obs_dim: usize, n_actions: usize, hidden: usize) -> Self {
        Self {
            fc1: Linear::new("agent/fc1", obs_dim, hidden),
            gru: GruCell::new("agent/gru", hidden, hidden),
            fc2: Linear::new("agent/fc2", hidden, n_actions),
        }
    }

    pub fn init<T: Scalar>(&self, store: &mut ParameterStore<T>, rng: &mut impl Rng) -> Result<()> {
        self.fc1.init(store, rng)?;
        self.gru.init(store, rng)?;
        self.fc2.init(store, rng)
    }

    /// `obs: [rows, obs_dim]`, `h: [rows, hidden]` to `(q: [rows, n_actions], h')`.
    pub fn step<T: Scalar>(&self, g: &mut Graph<T>, p: Params<'_, T>, obs: Var, h: Var) -> Result<(Var, Var)> {
        let x = self.fc1.forward(g, p, obs)?;
        let x = g.relu(x);
        let h = self.gru.step(g, p, x, h)?;
        let q = self.fc2.forward(g, p, h)?;
        Ok((q, h))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JointKind {
    /// Σ q_i.
    Vdn,
    /// Monotonic hypernetwork mixer.
    Monotonic,
    /// Unconstrained mixer plus monotonic mixer.
    SemiMonotonic,
    /// MLP over the state and the chosen utilities.
    FeedForward,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransformedKind {
    None,
    /// One head per agent sharing a monotonic mixer.
    MultiHead,
    /// A single monotonic mixer.
    SingleHead,
    /// Σ q_i + V(s).
    Additive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub joint: JointKind,
    pub transformed: TransformedKind,
}

impl Architecture {
    pub fn for_spec(spec: &AlgorithmSpec) -> Self {
        use JointKind as J;
        use TransformedKind as Tr;
        let (joint, transformed) = match spec.family {
            Family::Vdn => (J::Vdn, Tr::None),
            Family::Qmix => (J::Monotonic, Tr::None),
            Family::Qtran => (J::FeedForward, Tr::Additive),
            Family::Qtranpp => match spec.ablation {
                Ablation::Mix => (J::SemiMonotonic, Tr::SingleHead),
                Ablation::Fc => (J::FeedForward, Tr::MultiHead),
                _ => (J::SemiMonotonic, Tr::MultiHead),
            },
        };
        Self { joint, transformed }
    }

    /// Number of transformed-estimator heads (0 without one).
    pub fn n_heads(&self, n_agents: usize) -> usize {
        match self.transformed {
            TransformedKind::None => 0,
            TransformedKind::MultiHead => n_agents,
            TransformedKind::SingleHead | TransformedKind::Additive => 1,
        }
    }
}

#[derive(Debug, Clone)]
enum JointNet {
    Vdn,
    Mixers { free: Option<Mixer>, mono: Mixer },
    FeedForward(Mlp),
}

#[derive(Debug, Clone)]
enum TransformedNet {
    None,
    MultiHead { mixer: Mixer, v: Mlp },
    SingleHead(Mixer),
    Additive { v: Mlp },
}

/// State-dependent parts of the estimators for a set of rows, computed once
/// and reused for every joint action evaluated on those rows.
#[derive(Debug, Clone)]
pub struct Prepared {
    rows: usize,
    state: Var,
    jt_free: Option<MixerWeights>,
    jt_mono: Option<MixerWeights>,
    tran_mix: Option<MixerWeights>,
    /// `[rows, N]` for multi-head, `[rows]` for additive.
    tran_v: Option<Var>,
}

/// Utilities, joint and transformed estimators, and a target copy of all parameters.
#[derive(Debug, Clone)]
pub struct FactoredModel<T> {
    pub arch: Architecture,
    pub net: NetworkConfig,
    pub info: EnvInfo,
    pub params: ParameterStore<T>,
    pub target: ParameterStore<T>,
    utility: UtilityNetwork,
    joint: JointNet,
    transformed: TransformedNet,
}

impl<T: Scalar> FactoredModel<T> {
    pub fn new(arch: Architecture, net: NetworkConfig, info: EnvInfo, rng: &mut impl Rng) -> Result<Self> {
        net.validate()?;
        let (n, sd, hh) = (info.n_agents, info.state_dim, net.hyper_hidden);
        let utility = UtilityNetwork::new(info.obs_dim, info.n_actions, net.hidden_dim);
        let joint = match arch.joint {
            JointKind::Vdn => JointNet::Vdn,
            JointKind::Monotonic => JointNet::Mixers {
                free: None,
                mono: Mixer::new("jt/mono", sd, n, &net, true),
            },
            JointKind::SemiMonotonic => JointNet::Mixers {
                free: Some(Mixer::new("jt/free", sd, n, &net, false)),
                mono: Mixer::new("jt/mono", sd, n, &net, true),
            },
            JointKind::FeedForward => {
                JointNet::FeedForward(Mlp::new("jt/ff", &[sd + n, hh, hh, 1], Activation::Relu))
            }
        };
        let transformed = match arch.transformed {
            TransformedKind::None => TransformedNet::None,
            TransformedKind::MultiHead => TransformedNet::MultiHead {
                mixer: Mixer::new("tran/mix", sd, n, &net, true),
                v: Mlp::new("tran/v", &[sd, hh, n], Activation::Relu),
            },
            TransformedKind::SingleHead => TransformedNet::SingleHead(Mixer::new("tran/mix", sd, n, &net, true)),
            TransformedKind::Additive => TransformedNet::Additive {
                v: Mlp::new("tran/v", &[sd, hh, 1], Activation::Relu),
            },
        };
        let mut params = ParameterStore::new();
        utility.init(&mut params, rng)?;
        match &joint {
            JointNet::Vdn => {}
            JointNet::Mixers { free, mono } => {
                if let Some(f) = free {
                    f.init(&mut params, rng)?;
                }
                mono.init(&mut params, rng)?;
            }
            JointNet::FeedForward(m) => m.init(&mut params, rng)?,
        }
        match &transformed {
            TransformedNet::None => {}
            TransformedNet::MultiHead { mixer, v } => {
                mixer.init(&mut params, rng)?;
                v.init(&mut params, rng)?;
            }
            TransformedNet::SingleHead(m) => m.init(&mut params, rng)?,
            TransformedNet::Additive { v } => v.init(&mut params, rng)?,
        }
        let target = params.clone();
        Ok(Self {
            arch,
            net,
            info,
            params,
            target,
            utility,
            joint,
            transformed,
        })
    }

    pub fn n_heads(&self) -> usize {
        self.arch.n_heads(self.info.n_agents)
    }

    pub fn utility(&self) -> &UtilityNetwork {
        &self.utility
    }

    /// Hard copy of the online parameters into the target network.
    pub fn sync_target(&mut self) -> Result<()> {
        self.target.copy_values_from(&self.params)
    }

    pub fn online(&self) -> Params<'_, T> {
        Params::live(&self.params)
    }

    pub fn frozen_online(&self) -> Params<'_, T> {
        Params::frozen(&self.params)
    }

    pub fn frozen_target(&self) -> Params<'_, T> {
        Params::frozen(&self.target)
    }

    /// Unroll the utilities over the first `steps` slots of `batch`, one
    /// `[batch * n_agents, n_actions]` q tensor per slot, episode-major rows.
    pub fn unroll_utilities(
        &self,
        g: &mut Graph<T>,
        p: Params<'_, T>,
        batch: &EpisodeBatch,
        steps: usize,
    ) -> Result<Vec<Var>> {
        let rows = batch.batch * batch.n_agents;
        let mut h = g.constant(Tensor::zeros(vec![rows, self.net.hidden_dim]));
        let mut out = Vec::with_capacity(steps);
        for t in 0..steps {
            let obs = g.constant(batch.obs_rows(t));
            let (q, h2) = self.utility.step(g, p, obs, h)?;
            out.push(q);
            h = h2;
        }
        Ok(out)
    }

    /// One acting step: q values for each row of `obs` and the advanced hidden state.
    pub fn act_q(&self, obs: &[Vec<f64>], hidden: &mut GruState<T>) -> Result<Vec<Vec<f64>>> {
        let rows = obs.len();
        if hidden.hidden.shape() != [rows, self.net.hidden_dim] {
            return Err(Error::shape("act_q hidden", hidden.hidden.shape(), &[rows, self.net.hidden_dim]));
        }
        let od = self.info.obs_dim;
        let mut flat = Vec::with_capacity(rows * od);
        for o in obs {
            if o.len() != od {
                return Err(Error::shape("act_q obs", &[o.len()], &[od]));
            }
            flat.extend(o.iter().map(|&v| T::from_f64_lossy(v)));
        }
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![rows, od], flat)?);
        let h = g.constant(hidden.hidden.clone());
        let (q, h2) = self.utility.step(&mut g, self.frozen_online(), x, h)?;
        hidden.hidden = g.value(h2).clone();
        let a = self.info.n_actions;
        Ok(g.data(q)
            .chunks(a)
            .map(|r| r.iter().map(|v| v.to_f64_lossy()).collect())
            .collect())
    }

    /// Compute hypernetwork outputs and value heads for `state: [rows, state_dim]`.
    pub fn prepare(&self, g: &mut Graph<T>, p: Params<'_, T>, state: Var) -> Result<Prepared> {
        let rows = g.shape(state)[0];
        let mut prep = Prepared {
            rows,
            state,
            jt_free: None,
            jt_mono: None,
            tran_mix: None,
            tran_v: None,
        };
        if let JointNet::Mixers { free, mono } = &self.joint {
            if let Some(f) = free {
                prep.jt_free = Some(f.weights(g, p, state)?);
            }
            prep.jt_mono = Some(mono.weights(g, p, state)?);
        }
        match &self.transformed {
            TransformedNet::None => {}
            TransformedNet::MultiHead { mixer, v } => {
                prep.tran_mix = Some(mixer.weights(g, p, state)?);
                prep.tran_v = Some(v.forward(g, p, state)?);
            }
            TransformedNet::SingleHead(m) => prep.tran_mix = Some(m.weights(g, p, state)?),
            TransformedNet::Additive { v } => {
                let out = v.forward(g, p, state)?;
                prep.tran_v = Some(g.reshape(out, vec![rows])?);
            }
        }
        Ok(prep)
    }

    fn check_q(&self, g: &Graph<T>, prep: &Prepared, q: Var) -> Result<()> {
        let want = [prep.rows, self.info.n_agents];
        if g.shape(q) != want {
            return Err(Error::shape("joint estimator input", g.shape(q), &want));
        }
        Ok(())
    }

    /// Q_jt for chosen utilities `q: [rows, N]`, returns `[rows]`.
    pub fn q_jt(&self, g: &mut Graph<T>, p: Params<'_, T>, prep: &Prepared, q: Var) -> Result<Var> {
        self.check_q(g, prep, q)?;
        match &self.joint {
            JointNet::Vdn => g.sum_axis(q, 1),
            JointNet::Mixers { .. } => {
                let mono = prep.jt_mono.expect("prepared").mix(g, q)?;
                match prep.jt_free {
                    Some(w) => {
                        let free = w.mix(g, q)?;
                        g.add(free, mono)
                    }
                    None => Ok(mono),
                }
            }
            JointNet::FeedForward(mlp) => {
                let x = g.concat(&[prep.state, q], 1)?;
                let out = mlp.forward(g, p, x)?;
                g.reshape(out, vec![prep.rows])
            }
        }
    }

    /// Every transformed-estimator head for `q: [rows, N]`, each `[rows]`.
    /// Empty when the architecture has no transformed estimator.
    pub fn q_tran(&self, g: &mut Graph<T>, prep: &Prepared, q: Var) -> Result<Vec<Var>> {
        self.check_q(g, prep, q)?;
        let n = self.info.n_agents;
        let rows = prep.rows;
        match &self.transformed {
            TransformedNet::None => Ok(Vec::new()),
            TransformedNet::SingleHead(_) => Ok(vec![prep.tran_mix.expect("prepared").mix(g, q)?]),
            TransformedNet::Additive { .. } => {
                let s = g.sum_axis(q, 1)?;
                Ok(vec![g.add(s, prep.tran_v.expect("prepared"))?])
            }
            TransformedNet::MultiHead { .. } => {
                let w = prep.tran_mix.expect("prepared");
                let v = prep.tran_v.expect("prepared");
                let mut heads = Vec::with_capacity(n);
                for i in 0..n {
                    let mut parts = Vec::with_capacity(3);
                    if i > 0 {
                        parts.push(g.slice(q, 1, 0, i)?);
                    }
                    parts.push(g.slice(v, 1, i, 1)?);
                    if i + 1 < n {
                        parts.push(g.slice(q, 1, i + 1, n - i - 1)?);
                    }
                    let input = if parts.len() == 1 {
                        parts[0]
                    } else {
                        g.concat(&parts, 1)?
                    };
                    let mixed = w.mix(g, input)?;
                    let own = g.slice(q, 1, i, 1)?;
                    let own = g.reshape(own, vec![rows])?;
                    heads.push(g.add(own, mixed)?);
                }
                Ok(heads)
            }
        }
    }

    /// Q_jt and every Q_tran head over all joint actions (agent 0 most
    /// significant) for one state, given each agent's q vector.
    pub fn joint_tables(&self, state: &[f64], q: &[Vec<f64>]) -> Result<JointTables> {
        let (n, a) = (self.info.n_agents, self.info.n_actions);
        if q.len() != n || q.iter().any(|r| r.len() != a) {
            return Err(Error::invalid("joint_tables", "q must be n_agents x n_actions"));
        }
        if state.len() != self.info.state_dim {
            return Err(Error::shape("joint_tables state", &[state.len()], &[self.info.state_dim]));
        }
        let k = a.pow(n as u32);
        let mut qdata = Vec::with_capacity(k * n);
        let mut sdata = Vec::with_capacity(k * state.len());
        for j in 0..k {
            let mut rem = j;
            let mut actions = vec![0; n];
            for slot in actions.iter_mut().rev() {
                *slot = rem % a;
                rem /= a;
            }
            qdata.extend(actions.iter().enumerate().map(|(i, &u)| T::from_f64_lossy(q[i][u])));
            sdata.extend(state.iter().map(|&v| T::from_f64_lossy(v)));
        }
        let mut g = Graph::new();
        let p = self.frozen_online();
        let s = g.constant(Tensor::new(vec![k, state.len()], sdata)?);
        let qv = g.constant(Tensor::new(vec![k, n], qdata)?);
        let prep = self.prepare(&mut g, p, s)?;
        let jt = self.q_jt(&mut g, p, &prep, qv)?;
        let heads = self.q_tran(&mut g, &prep, qv)?;
        let to_vec = |g: &Graph<T>, v: Var| g.data(v).iter().map(|x| x.to_f64_lossy()).collect::<Vec<_>>();
        Ok(JointTables {
            q_jt: to_vec(&g, jt),
            q_tran: heads.iter().map(|&h| to_vec(&g, h)).collect(),
        })
    }

    /// Online and target parameters under `online/` and `target/`.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.add_store("online/", &self.params);
        ck.add_store("target/", &self.target);
        ck
    }

    pub fn load_checkpoint(&mut self, ck: &Checkpoint) -> Result<()> {
        ck.load_into("online/", &mut self.params)?;
        ck.load_into("target/", &mut self.target)
    }
}

/// Estimator values over every joint action of one state.
#[derive(Debug, Clone, PartialEq)]
pub struct JointTables {
    pub q_jt: Vec<f64>,
    /// One table per head.
    pub q_tran: Vec<Vec<f64>>,
}
