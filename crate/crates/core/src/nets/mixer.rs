use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, Graph, Linear, Mlp, ParameterStore, Params, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Widths shared by every network of a model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    /// Utility FC and GRU width.
    pub hidden_dim: usize,
    /// Mixer hidden layer width.
    pub mixer_embed: usize,
    /// Hypernetwork and value-head hidden width.
    pub hyper_hidden: usize,
    /// Learn mixer weights directly instead of generating them from the state.
    pub heterogeneous: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 64,
            mixer_embed: 32,
            hyper_hidden: 64,
            heterogeneous: false,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 || self.mixer_embed == 0 || self.hyper_hidden == 0 {
            return Err(Error::Config("network widths must be >= 1".into()));
        }
        Ok(())
    }
}

/// One-hidden-layer mixer `f(q; θ(s)) = w2 · elu(q W1 + b1) + b2` whose
/// weights come from hypernetworks of the state. When `monotonic`, W1 and w2
/// pass through `abs`.
#[derive(Debug, Clone)]
pub struct Mixer {
    pub prefix: String,
    pub n_inputs: usize,
    pub embed: usize,
    pub monotonic: bool,
    pub heterogeneous: bool,
    hyper_w1: Mlp,
    hyper_b1: Linear,
    hyper_w2: Mlp,
    hyper_b2: Mlp,
}

/// Per-row mixer parameters, computed once and reused for many inputs.
#[derive(Debug, Clone, Copy)]
pub struct MixerWeights {
    /// `[rows or 1, n_inputs, embed]`
    pub w1: Var,
    /// `[rows, embed]`
    pub b1: Var,
    /// `[rows or 1, embed]`
    pub w2: Var,
    /// `[rows]`
    pub b2: Var,
    pub rows: usize,
}

impl Mixer {
    pub fn new(prefix: &str, state_dim: usize, n_inputs: usize, net: &NetworkConfig, monotonic: bool) -> Self {
        let (e, hh) = (net.mixer_embed, net.hyper_hidden);
        Self {
            prefix: prefix.to_string(),
            n_inputs,
            embed: e,
            monotonic,
            heterogeneous: net.heterogeneous,
            hyper_w1: Mlp::new(&format!("{prefix}/hyper_w1"), &[state_dim, hh, n_inputs * e], Activation::Relu),
            hyper_b1: Linear::new(&format!("{prefix}/hyper_b1"), state_dim, e),
            hyper_w2: Mlp::new(&format!("{prefix}/hyper_w2"), &[state_dim, hh, e], Activation::Relu),
            hyper_b2: Mlp::new(&format!("{prefix}/hyper_b2"), &[state_dim, hh, 1], Activation::Relu),
        }
    }

    fn static_w1(&self) -> String {
        format!("{}/w1", self.prefix)
    }

    fn static_w2(&self) -> String {
        format!("{}/w2", self.prefix)
    }

    pub fn init<T: Scalar>(&self, store: &mut ParameterStore<T>, rng: &mut impl Rng) -> Result<()> {
        if self.heterogeneous {
            let b1 = 1.0 / (self.n_inputs as f64).sqrt();
            store.insert_uniform(self.static_w1(), &[1, self.n_inputs, self.embed], b1, rng)?;
            let b2 = 1.0 / (self.embed as f64).sqrt();
            store.insert_uniform(self.static_w2(), &[1, self.embed], b2, rng)?;
        } else {
            self.hyper_w1.init(store, rng)?;
            self.hyper_w2.init(store, rng)?;
        }
        self.hyper_b1.init(store, rng)?;
        self.hyper_b2.init(store, rng)
    }

    /// Mixer parameters for each row of `state: [rows, state_dim]`.
    pub fn weights<T: Scalar>(&self, g: &mut Graph<T>, p: Params<'_, T>, state: Var) -> Result<MixerWeights> {
        let rows = g.shape(state)[0];
        let (n, e) = (self.n_inputs, self.embed);
        let (w1, w2) = if self.heterogeneous {
            (p.bind(g, &self.static_w1())?, p.bind(g, &self.static_w2())?)
        } else {
            let w1 = self.hyper_w1.forward(g, p, state)?;
            let w1 = g.reshape(w1, vec![rows, n, e])?;
            (w1, self.hyper_w2.forward(g, p, state)?)
        };
        let (w1, w2) = if self.monotonic {
            (g.abs(w1), g.abs(w2))
        } else {
            (w1, w2)
        };
        let b1 = self.hyper_b1.forward(g, p, state)?;
        let b2 = self.hyper_b2.forward(g, p, state)?;
        let b2 = g.reshape(b2, vec![rows])?;
        Ok(MixerWeights { w1, b1, w2, b2, rows })
    }
}

impl MixerWeights {
    /// `q: [rows, n_inputs]` to `[rows]`.
    pub fn mix<T: Scalar>(&self, g: &mut Graph<T>, q: Var) -> Result<Var> {
        let shape = g.shape(q).to_vec();
        if shape.len() != 2 || shape[0] != self.rows {
            return Err(Error::shape("mix", &shape, &[self.rows]));
        }
        let q3 = g.reshape(q, vec![shape[0], shape[1], 1])?;
        let prod = g.mul(q3, self.w1)?;
        let hidden = g.sum_axis(prod, 1)?;
        let hidden = g.add(hidden, self.b1)?;
        let hidden = g.elu(hidden);
        let out = g.mul(hidden, self.w2)?;
        let out = g.sum_axis(out, 1)?;
        g.add(out, self.b2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn eval(mixer: &Mixer, store: &ParameterStore<f64>, s: &[f64], q: &[f64]) -> f64 {
        let mut g = Graph::new();
        let sv = g.constant(Tensor::new(vec![1, s.len()], s.to_vec()).unwrap());
        let qv = g.constant(Tensor::new(vec![1, q.len()], q.to_vec()).unwrap());
        let w = mixer.weights(&mut g, Params::frozen(store), sv).unwrap();
        let out = w.mix(&mut g, qv).unwrap();
        g.value(out).item()
    }

    #[test]
    fn monotonic_in_every_input() {
        let net = NetworkConfig::default();
        let mixer = Mixer::new("m", 3, 2, &net, true);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParameterStore::new();
        mixer.init(&mut store, &mut rng).unwrap();
        for _ in 0..50 {
            let s: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let q: Vec<f64> = (0..2).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let base = eval(&mixer, &store, &s, &q);
            for j in 0..2 {
                let mut up = q.clone();
                up[j] += 0.1;
                assert!(eval(&mixer, &store, &s, &up) >= base - 1e-12);
            }
        }
    }

    #[test]
    fn heterogeneous_weights_ignore_state_shape() {
        let net = NetworkConfig {
            heterogeneous: true,
            ..NetworkConfig::default()
        };
        let mixer = Mixer::new("m", 2, 3, &net, true);
        let mut store = ParameterStore::new();
        mixer.init(&mut store, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(store.contains("m/w1") && !store.contains("m/hyper_w1/l0/w"));
        let v = eval(&mixer, &store, &[0.3, 0.1], &[1.0, 2.0, 3.0]);
        assert!(v.is_finite());
    }

    #[test]
    fn zero_weights_output_bias_only() {
        let mixer = Mixer::new("m", 2, 2, &NetworkConfig::default(), false);
        let mut store = ParameterStore::new();
        mixer.init(&mut store, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        store.zero_prefix("m/");
        assert_eq!(eval(&mixer, &store, &[1.0, -1.0], &[5.0, -7.0]), 0.0);
    }
}
