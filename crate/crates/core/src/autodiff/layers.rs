//! Dense layers and the GRU cell, described by parameter names so the same
//! layer can be evaluated against an online store or a frozen target copy.

use rand::Rng;

use super::graph::{Graph, Var};
use super::params::ParameterStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Which copy of the parameters a forward pass reads, and whether it records gradients.
#[derive(Clone, Copy)]
pub struct Params<'a, T> {
    pub store: &'a ParameterStore<T>,
    pub trainable: bool,
}

impl<'a, T: Scalar> Params<'a, T> {
    pub fn live(store: &'a ParameterStore<T>) -> Self {
        Self {
            store,
            trainable: true,
        }
    }

    pub fn frozen(store: &'a ParameterStore<T>) -> Self {
        Self {
            store,
            trainable: false,
        }
    }

    pub fn bind(&self, g: &mut Graph<T>, name: &str) -> Result<Var> {
        if self.trainable {
            g.param(self.store, name)
        } else {
            g.frozen_param(self.store, name)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    None,
    Relu,
    Elu,
    Tanh,
}

impl Activation {
    pub fn apply<T: Scalar>(self, g: &mut Graph<T>, x: Var) -> Var {
        match self {
            Activation::None => x,
            Activation::Relu => g.relu(x),
            Activation::Elu => g.elu(x),
            Activation::Tanh => g.tanh(x),
        }
    }
}

/// `y = x W + b` with `W: [in, out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: String,
    pub bias: String,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(prefix: &str, in_dim: usize, out_dim: usize) -> Self {
        Self {
            weight: format!("{prefix}/w"),
            bias: format!("{prefix}/b"),
            in_dim,
            out_dim,
        }
    }

    /// PyTorch-style default init, `U(-1/sqrt(in), 1/sqrt(in))`.
    pub fn init<T: Scalar>(&self, store: &mut ParameterStore<T>, rng: &mut impl Rng) -> Result<()> {
        let bound = 1.0 / (self.in_dim.max(1) as f64).sqrt();
        store.insert_uniform(&self.weight, &[self.in_dim, self.out_dim], bound, rng)?;
        store.insert_uniform(&self.bias, &[self.out_dim], bound, rng)
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: Params<'_, T>, x: Var) -> Result<Var> {
        let w = p.bind(g, &self.weight)?;
        let b = p.bind(g, &self.bias)?;
        let xw = g.matmul(x, w)?;
        g.add(xw, b)
    }
}

/// Stack of linear layers; `hidden_act` between layers, nothing after the last.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub hidden_act: Activation,
}

impl Mlp {
    pub fn new(prefix: &str, dims: &[usize], hidden_act: Activation) -> Self {
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(&format!("{prefix}/l{i}"), w[0], w[1]))
            .collect();
        Self { layers, hidden_act }
    }

    pub fn init<T: Scalar>(&self, store: &mut ParameterStore<T>, rng: &mut impl Rng) -> Result<()> {
        self.layers.iter().try_for_each(|l| l.init(store, rng))
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: Params<'_, T>, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, p, h)?;
            if i + 1 < self.layers.len() {
                h = self.hidden_act.apply(g, h);
            }
        }
        Ok(h)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }
}

/// Recurrent hidden state carried between steps outside of a graph
/// (acting), one row per agent per episode slot.
#[derive(Debug, Clone, PartialEq)]
pub struct GruState<T> {
    pub hidden: Tensor<T>,
}

impl<T: Scalar> GruState<T> {
    pub fn zeros(rows: usize, width: usize) -> Self {
        Self {
            hidden: Tensor::zeros(vec![rows, width]),
        }
    }

    pub fn width(&self) -> usize {
        self.hidden.shape()[1]
    }

    pub fn reset(&mut self) {
        self.hidden.data_mut().iter_mut().for_each(|v| *v = T::zero());
    }
}

/// Gated recurrent unit, gate order (reset, update, candidate):
///
/// ```text
/// r  = σ(x W_ir + b_ir + h W_hr + b_hr)
/// z  = σ(x W_iz + b_iz + h W_hz + b_hz)
/// n  = tanh(x W_in + b_in + r ⊙ (h W_hn + b_hn))
/// h' = (1 - z) ⊙ n + z ⊙ h
/// ```
#[derive(Debug, Clone)]
pub struct GruCell {
    pub w_ih: String,
    pub w_hh: String,
    pub b_ih: String,
    pub b_hh: String,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

impl GruCell {
    pub fn new(prefix: &str, input_dim: usize, hidden_dim: usize) -> Self {
        Self {
            w_ih: format!("{prefix}/w_ih"),
            w_hh: format!("{prefix}/w_hh"),
            b_ih: format!("{prefix}/b_ih"),
            b_hh: format!("{prefix}/b_hh"),
            input_dim,
            hidden_dim,
        }
    }

    pub fn init<T: Scalar>(&self, store: &mut ParameterStore<T>, rng: &mut impl Rng) -> Result<()> {
        let h = self.hidden_dim;
        let bound = 1.0 / (h.max(1) as f64).sqrt();
        store.insert_uniform(&self.w_ih, &[self.input_dim, 3 * h], bound, rng)?;
        store.insert_uniform(&self.w_hh, &[h, 3 * h], bound, rng)?;
        store.insert_uniform(&self.b_ih, &[3 * h], bound, rng)?;
        store.insert_uniform(&self.b_hh, &[3 * h], bound, rng)
    }

    /// One step. `x: [rows, input_dim]`, `h: [rows, hidden_dim]`.
    pub fn step<T: Scalar>(&self, g: &mut Graph<T>, p: Params<'_, T>, x: Var, h: Var) -> Result<Var> {
        let hd = self.hidden_dim;
        if g.shape(x).len() != 2 || g.shape(x)[1] != self.input_dim {
            return Err(Error::shape("gru input", g.shape(x), &[self.input_dim]));
        }
        if g.shape(h).len() != 2 || g.shape(h)[1] != hd || g.shape(h)[0] != g.shape(x)[0] {
            return Err(Error::shape("gru hidden", g.shape(h), &[g.shape(x)[0], hd]));
        }
        let w_ih = p.bind(g, &self.w_ih)?;
        let w_hh = p.bind(g, &self.w_hh)?;
        let b_ih = p.bind(g, &self.b_ih)?;
        let b_hh = p.bind(g, &self.b_hh)?;
        let gi = g.matmul(x, w_ih)?;
        let gi = g.add(gi, b_ih)?;
        let gh = g.matmul(h, w_hh)?;
        let gh = g.add(gh, b_hh)?;

        let i_r = g.slice(gi, 1, 0, hd)?;
        let i_z = g.slice(gi, 1, hd, hd)?;
        let i_n = g.slice(gi, 1, 2 * hd, hd)?;
        let h_r = g.slice(gh, 1, 0, hd)?;
        let h_z = g.slice(gh, 1, hd, hd)?;
        let h_n = g.slice(gh, 1, 2 * hd, hd)?;

        let r = g.add(i_r, h_r)?;
        let r = g.sigmoid(r);
        let z = g.add(i_z, h_z)?;
        let z = g.sigmoid(z);
        let rn = g.mul(r, h_n)?;
        let n = g.add(i_n, rn)?;
        let n = g.tanh(n);

        let keep = g.rsub_scalar(T::one(), z);
        let a = g.mul(keep, n)?;
        let b = g.mul(z, h)?;
        g.add(a, b)
    }
}
