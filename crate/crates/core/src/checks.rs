//! Property suites run by `factorq check`: finite-difference gradients,
//! mixer monotonicity probes, the decentralization theorem oracles and the
//! denser non-optimal signal of the clipped loss.

use rand::Rng;
use serde::Serialize;

use crate::algo::{
    condition_chain_check, decentralization_conditions, nopt_eq3_terms, nopt_qtranpp_terms, table_argmax,
    AlgorithmSpec, Family,
};
use crate::autodiff::{
    finite_difference_check, Activation, GruCell, Graph, Linear, Mlp, ParameterStore, Params, Tensor, Var,
};
use crate::env::EnvInfo;
use crate::error::{Error, Result};
use crate::nets::{Architecture, FactoredModel, Mixer, NetworkConfig};
use crate::rng::SimRng;
use rand::SeedableRng;

pub const GRAD_TOLERANCE: f64 = 1e-4;
pub const FD_STEP: f64 = 1e-5;
pub const MONO_TOLERANCE: f64 = -1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Grad,
    Mono,
    Theorem1,
    Signal,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::Grad, Suite::Mono, Suite::Theorem1, Suite::Signal];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Grad => "grad",
            Suite::Mono => "mono",
            Suite::Theorem1 => "theorem1",
            Suite::Signal => "signal",
        }
    }

    /// `all` expands to every suite.
    pub fn parse(s: &str) -> Result<Vec<Suite>> {
        match s {
            "all" => Ok(Self::ALL.to_vec()),
            other => Self::ALL
                .iter()
                .copied()
                .find(|x| x.name() == other)
                .map(|x| vec![x])
                .ok_or_else(|| Error::Config(format!("unknown suite `{other}` (grad, mono, theorem1, signal, all)"))),
        }
    }

    pub fn run(self, seed: u64) -> Result<SuiteReport> {
        match self {
            Suite::Grad => grad_suite(seed),
            Suite::Mono => mono_suite(seed, 1000),
            Suite::Theorem1 => theorem1_suite(seed, 1000),
            Suite::Signal => signal_suite(seed, 1000),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseResult {
    pub name: String,
    pub instances: usize,
    /// Worst value of the suite's metric over the instances.
    pub worst: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub seed: u64,
    pub metric: String,
    pub threshold: f64,
    pub passed: bool,
    pub cases: Vec<CaseResult>,
    /// Violated property and the instance that broke it.
    pub failures: Vec<String>,
}

impl SuiteReport {
    fn new(suite: Suite, seed: u64, metric: &str, threshold: f64) -> Self {
        Self {
            suite: suite.name().into(),
            seed,
            metric: metric.into(),
            threshold,
            passed: true,
            cases: Vec::new(),
            failures: Vec::new(),
        }
    }

    fn push(&mut self, case: CaseResult) {
        self.passed &= case.passed;
        self.cases.push(case);
    }

    fn fail(&mut self, msg: String) {
        self.passed = false;
        if self.failures.len() < 20 {
            self.failures.push(msg);
        }
    }

    pub fn worst(&self) -> f64 {
        self.cases.iter().map(|c| c.worst).fold(f64::NAN, |a, b| if a.is_nan() { b } else { a.max(b) })
    }
}

fn rng_for(seed: u64, case: u64) -> SimRng {
    let mut r = SimRng::seed_from_u64(seed);
    r.set_stream(1000 + case);
    r
}

fn uniform(rng: &mut SimRng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

/// Values at least `margin` away from zero, so no kink sits inside the
/// finite-difference stencil.
fn away_from_zero(rng: &mut SimRng, n: usize, margin: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let m: f64 = rng.gen_range(margin..2.0);
            if rng.gen::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect()
}

fn store_of(tensors: &[(&str, Vec<usize>, Vec<f64>)]) -> Result<ParameterStore<f64>> {
    let mut s = ParameterStore::new();
    for (name, shape, data) in tensors {
        s.insert(*name, Tensor::new(shape.clone(), data.clone())?)?;
    }
    Ok(s)
}

type OpCase = fn(&mut SimRng) -> Result<(ParameterStore<f64>, OpFn)>;
type OpFn = Box<dyn Fn(&mut Graph<f64>, Params<'_, f64>) -> Result<Var>>;

/// A random weighting of the output so every output element gets a distinct
/// upstream gradient.
fn weighted_sum(g: &mut Graph<f64>, y: Var, weights: &[f64]) -> Result<Var> {
    let shape = g.shape(y).to_vec();
    let w = g.constant(Tensor::new(shape, weights.to_vec())?);
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

fn unary(name: &'static str) -> (&'static str, OpCase) {
    fn build(rng: &mut SimRng, margin: f64, op: fn(&mut Graph<f64>, Var) -> Var) -> Result<(ParameterStore<f64>, OpFn)> {
        let x = away_from_zero(rng, 6, margin);
        let w = uniform(rng, 6, -1.0, 1.0);
        let store = store_of(&[("x", vec![2, 3], x)])?;
        Ok((
            store,
            Box::new(move |g, p| {
                let x = p.bind(g, "x")?;
                let y = op(g, x);
                weighted_sum(g, y, &w)
            }),
        ))
    }
    let case: OpCase = match name {
        "relu" => |r| build(r, 1e-3, |g, x| g.relu(x)),
        "elu" => |r| build(r, 1e-3, |g, x| g.elu(x)),
        "sigmoid" => |r| build(r, 0.0, |g, x| g.sigmoid(x)),
        "tanh" => |r| build(r, 0.0, |g, x| g.tanh(x)),
        "abs" => |r| build(r, 1e-3, |g, x| g.abs(x)),
        "square" => |r| build(r, 0.0, |g, x| g.square(x)),
        "neg" => |r| build(r, 0.0, |g, x| g.neg(x)),
        "scale" => |r| build(r, 0.0, |g, x| g.scale(x, 1.7)),
        "add_scalar" => |r| build(r, 0.0, |g, x| g.add_scalar(x, 0.3)),
        "rsub_scalar" => |r| build(r, 0.0, |g, x| g.rsub_scalar(0.3, x)),
        _ => unreachable!("unknown unary op"),
    };
    (name, case)
}

fn op_cases() -> Vec<(&'static str, OpCase)> {
    let mut cases: Vec<(&'static str, OpCase)> = [
        "relu",
        "elu",
        "sigmoid",
        "tanh",
        "abs",
        "square",
        "neg",
        "scale",
        "add_scalar",
        "rsub_scalar",
    ]
    .into_iter()
    .map(unary)
    .collect();
    cases.push(("matmul", |rng| {
        let a = uniform(rng, 6, -1.0, 1.0);
        let b = uniform(rng, 12, -1.0, 1.0);
        let w = uniform(rng, 8, -1.0, 1.0);
        let store = store_of(&[("a", vec![2, 3], a), ("b", vec![3, 4], b)])?;
        Ok((
            store,
            Box::new(move |g, p| {
                let a = p.bind(g, "a")?;
                let b = p.bind(g, "b")?;
                let y = g.matmul(a, b)?;
                weighted_sum(g, y, &w)
            }),
        ))
    }));
    cases.push(("add_sub_mul_broadcast", |rng| {
        let a = uniform(rng, 6, -1.0, 1.0);
        let b = uniform(rng, 3, -1.0, 1.0);
        let w = uniform(rng, 6, -1.0, 1.0);
        let store = store_of(&[("a", vec![2, 3], a), ("b", vec![3], b)])?;
        Ok((
            store,
            Box::new(move |g, p| {
                let a = p.bind(g, "a")?;
                let b = p.bind(g, "b")?;
                let s = g.add(a, b)?;
                let d = g.sub(s, b)?;
                let d = g.sub(d, b)?;
                let m = g.mul(d, b)?;
                let m = g.mul(m, a)?;
                weighted_sum(g, m, &w)
            }),
        ))
    }));
    cases.push(("reductions", |rng| {
        let a = uniform(rng, 24, -1.0, 1.0);
        let w = uniform(rng, 6, -1.0, 1.0);
        let store = store_of(&[("a", vec![2, 3, 4], a)])?;
        Ok((
            store,
            Box::new(move |g, p| {
                let a = p.bind(g, "a")?;
                let s = g.sum_axis(a, 2)?;
                let m = g.mean_axis(a, 2)?;
                let m = g.square(m);
                let y = g.add(s, m)?;
                let t = weighted_sum(g, y, &w)?;
                let a2 = g.square(a);
                let mean = g.mean(a2);
                let s0 = g.sum_axis(a, 0)?;
                let s0 = g.square(s0);
                let s0 = g.sum(s0);
                let t = g.add(t, mean)?;
                g.add(t, s0)
            }),
        ))
    }));
    cases.push(("maximum", |rng| {
        let a = uniform(rng, 6, -1.0, 1.0);
        let mut b = uniform(rng, 6, -1.0, 1.0);
        for (x, y) in a.iter().zip(b.iter_mut()) {
            if (x - *y).abs() < 1e-3 {
                *y += 0.1;
            }
        }
        let w = uniform(rng, 6, -1.0, 1.0);
        let store = store_of(&[("a", vec![6], a), ("b", vec![6], b)])?;
        Ok((
            store,
            Box::new(move |g, p| {
                let a = p.bind(g, "a")?;
                let b = p.bind(g, "b")?;
                let y = g.maximum(a, b)?;
                weighted_sum(g, y, &w)
            }),
        ))
    }));
    cases.push(("clip", |rng| {
        let lo = uniform(rng, 6, -1.0, 0.0);
        let hi: Vec<f64> = lo.iter().map(|l| l + rng.gen_range(0.1..1.0)).collect();
        let x: Vec<f64> = (0..6)
            .map(|i| loop {
                let v: f64 = rng.gen_range(-1.5..1.5);
                if (v - lo[i]).abs() > 1e-3 && (v - hi[i]).abs() > 1e-3 {
                    break v;
                }
            })
            .collect();
        let w = uniform(rng, 6, -1.0, 1.0);
        let store = store_of(&[("x", vec![6], x), ("lo", vec![6], lo), ("hi", vec![6], hi)])?;
        Ok((
            store,
            Box::new(move |g, p| {
                let x = p.bind(g, "x")?;
                let lo = p.bind(g, "lo")?;
                let hi = p.bind(g, "hi")?;
                let y = g.clip(x, lo, hi)?;
                weighted_sum(g, y, &w)
            }),
        ))
    }));
    cases.push(("concat_slice_gather_reshape", |rng| {
        let a = uniform(rng, 6, -1.0, 1.0);
        let b = uniform(rng, 4, -1.0, 1.0);
        let idx: Vec<usize> = (0..5).map(|_| rng.gen_range(0..2)).collect();
        let w = uniform(rng, 5, -1.0, 1.0);
        let store = store_of(&[("a", vec![3, 2], a), ("b", vec![2, 2], b)])?;
        Ok((
            store,
            Box::new(move |g, p| {
                let a = p.bind(g, "a")?;
                let b = p.bind(g, "b")?;
                let c = g.concat(&[a, b], 0)?;
                let s = g.slice(c, 0, 1, 3)?;
                let s = g.reshape(s, vec![6])?;
                let s = g.reshape(s, vec![3, 2])?;
                let c2 = g.concat(&[s, s], 1)?;
                let c2 = g.slice(c2, 1, 1, 2)?;
                let c2 = g.concat(&[c2, a, b], 0)?;
                let c2 = g.slice(c2, 0, 0, 5)?;
                let c2 = g.square(c2);
                let y = g.gather(c2, &idx)?;
                weighted_sum(g, y, &w)
            }),
        ))
    }));
    cases
}

fn layer_cases() -> Vec<(&'static str, OpCase)> {
    let mut cases: Vec<(&'static str, OpCase)> = Vec::new();
    cases.push(("linear", |rng| {
        let l = Linear::new("l", 3, 4);
        let mut store = ParameterStore::new();
        l.init(&mut store, rng)?;
        let x = Tensor::new(vec![2, 3], uniform(rng, 6, -1.0, 1.0))?;
        let w = uniform(rng, 8, -1.0, 1.0);
        Ok((
            store,
            Box::new(move |g, p| {
                let x = g.constant(x.clone());
                let y = l.forward(g, p, x)?;
                weighted_sum(g, y, &w)
            }),
        ))
    }));
    fn mlp_case(rng: &mut SimRng, act: Activation) -> Result<(ParameterStore<f64>, OpFn)> {
        let m = Mlp::new("m", &[3, 5, 5, 2], act);
        let mut store = ParameterStore::new();
        m.init(&mut store, rng)?;
        let x = Tensor::new(vec![2, 3], uniform(rng, 6, -1.0, 1.0))?;
        let w = uniform(rng, 4, -1.0, 1.0);
        Ok((
            store,
            Box::new(move |g, p| {
                let x = g.constant(x.clone());
                let y = m.forward(g, p, x)?;
                weighted_sum(g, y, &w)
            }),
        ))
    }
    cases.push(("mlp_relu", |rng| mlp_case(rng, Activation::Relu)));
    cases.push(("mlp_elu", |rng| mlp_case(rng, Activation::Elu)));
    cases.push(("mlp_tanh", |rng| mlp_case(rng, Activation::Tanh)));
    cases.push(("gru_bptt_3_steps", |rng| {
        let cell = GruCell::new("gru", 3, 4);
        let mut store = ParameterStore::new();
        cell.init(&mut store, rng)?;
        let xs: Vec<Tensor<f64>> = (0..3)
            .map(|_| Tensor::new(vec![2, 3], uniform(rng, 6, -1.0, 1.0)))
            .collect::<Result<_>>()?;
        let w = uniform(rng, 8, -1.0, 1.0);
        Ok((
            store,
            Box::new(move |g, p| {
                let mut h = g.constant(Tensor::zeros(vec![2, 4]));
                for x in &xs {
                    let x = g.constant(x.clone());
                    h = cell.step(g, p, x, h)?;
                }
                weighted_sum(g, h, &w)
            }),
        ))
    }));
    fn mixer_case(rng: &mut SimRng, monotonic: bool, heterogeneous: bool) -> Result<(ParameterStore<f64>, OpFn)> {
        let net = NetworkConfig {
            hidden_dim: 4,
            mixer_embed: 3,
            hyper_hidden: 5,
            heterogeneous,
        };
        let m = Mixer::new("mix", 4, 3, &net, monotonic);
        let mut store = ParameterStore::new();
        m.init(&mut store, rng)?;
        let s = Tensor::new(vec![2, 4], uniform(rng, 8, -1.0, 1.0))?;
        let q = Tensor::new(vec![2, 3], uniform(rng, 6, -2.0, 2.0))?;
        let w = uniform(rng, 2, -1.0, 1.0);
        Ok((
            store,
            Box::new(move |g, p| {
                let s = g.constant(s.clone());
                let q = g.constant(q.clone());
                let mw = m.weights(g, p, s)?;
                let y = mw.mix(g, q)?;
                weighted_sum(g, y, &w)
            }),
        ))
    }
    cases.push(("mixer_monotonic", |rng| mixer_case(rng, true, false)));
    cases.push(("mixer_free", |rng| mixer_case(rng, false, false)));
    cases.push(("mixer_heterogeneous", |rng| mixer_case(rng, true, true)));
    for (name, family) in [
        ("model_qtranpp", Family::Qtranpp),
        ("model_qtran", Family::Qtran),
        ("model_qmix", Family::Qmix),
        ("model_vdn", Family::Vdn),
    ] {
        let case: OpCase = match family {
            Family::Qtranpp => |rng| model_case(rng, Family::Qtranpp),
            Family::Qtran => |rng| model_case(rng, Family::Qtran),
            Family::Qmix => |rng| model_case(rng, Family::Qmix),
            Family::Vdn => |rng| model_case(rng, Family::Vdn),
        };
        cases.push((name, case));
    }
    cases
}

fn small_info(n_agents: usize, n_actions: usize) -> EnvInfo {
    EnvInfo {
        n_agents,
        n_actions,
        obs_dim: 3,
        state_dim: 4,
        episode_limit: 3,
    }
}

fn small_net() -> NetworkConfig {
    NetworkConfig {
        hidden_dim: 4,
        mixer_embed: 3,
        hyper_hidden: 5,
        heterogeneous: false,
    }
}

/// Utilities unrolled over 2 steps, then every estimator on the chosen actions.
fn model_case(rng: &mut SimRng, family: Family) -> Result<(ParameterStore<f64>, OpFn)> {
    let info = small_info(2, 3);
    let arch = Architecture::for_spec(&AlgorithmSpec::new(family));
    let model = FactoredModel::<f64>::new(arch, small_net(), info, rng)?;
    let store = model.params.clone();
    let obs: Vec<Tensor<f64>> = (0..2)
        .map(|_| Tensor::new(vec![2, 3], uniform(rng, 6, -1.0, 1.0)))
        .collect::<Result<_>>()?;
    let state = Tensor::new(vec![1, 4], uniform(rng, 4, -1.0, 1.0))?;
    let actions: Vec<usize> = (0..2).map(|_| rng.gen_range(0..3)).collect();
    Ok((
        store,
        Box::new(move |g, p| {
            let mut h = g.constant(Tensor::zeros(vec![2, 4]));
            let mut q = None;
            for o in &obs {
                let o = g.constant(o.clone());
                let (qt, h2) = model.utility().step(g, p, o, h)?;
                h = h2;
                q = Some(qt);
            }
            let q = q.expect("two steps");
            let chosen = g.gather(q, &actions)?;
            let chosen = g.reshape(chosen, vec![1, 2])?;
            let s = g.constant(state.clone());
            let prep = model.prepare(g, p, s)?;
            let mut total = model.q_jt(g, p, &prep, chosen)?;
            for (k, head) in model.q_tran(g, &prep, chosen)?.into_iter().enumerate() {
                let scaled = g.scale(head, 0.5 + k as f64);
                total = g.add(total, scaled)?;
            }
            Ok(g.sum(total))
        }),
    ))
}

pub fn grad_suite(seed: u64) -> Result<SuiteReport> {
    let mut report = SuiteReport::new(Suite::Grad, seed, "max relative error", GRAD_TOLERANCE);
    let all: Vec<(&str, OpCase, usize)> = op_cases()
        .into_iter()
        .map(|(n, c)| (n, c, 100))
        .chain(layer_cases().into_iter().map(|(n, c)| (n, c, 20)))
        .collect();
    for (k, (name, case, instances)) in all.into_iter().enumerate() {
        let mut rng = rng_for(seed, k as u64);
        let mut worst = 0.0f64;
        for i in 0..instances {
            let (store, f) = case(&mut rng)?;
            let err = finite_difference_check(&store, FD_STEP, |g, p| f(g, p))?;
            if !(err < GRAD_TOLERANCE) {
                report.fail(format!("{name}: relative error {err:e} at instance {i} (seed {seed})"));
            }
            worst = worst.max(err);
        }
        report.push(CaseResult {
            name: name.into(),
            instances,
            worst,
            passed: worst < GRAD_TOLERANCE,
        });
    }
    Ok(report)
}

/// Smallest finite-difference slope `(f(q + ε e_j) - f(q)) / ε` over all rows
/// and coordinates, for each head returned by `eval`.
fn min_directional(
    g: &mut Graph<f64>,
    q: &[f64],
    rows: usize,
    n: usize,
    eps: f64,
    mut eval: impl FnMut(&mut Graph<f64>, Var) -> Result<Vec<Var>>,
) -> Result<Vec<f64>> {
    let base_q = g.constant(Tensor::new(vec![rows, n], q.to_vec())?);
    let base: Vec<Vec<f64>> = eval(g, base_q)?.into_iter().map(|v| g.value(v).to_f64_vec()).collect();
    let mut worst = vec![f64::INFINITY; base.len()];
    for j in 0..n {
        let mut bumped = q.to_vec();
        for r in 0..rows {
            bumped[r * n + j] += eps;
        }
        let qv = g.constant(Tensor::new(vec![rows, n], bumped)?);
        for (h, v) in eval(g, qv)?.into_iter().enumerate() {
            for (r, &up) in g.value(v).data().iter().enumerate() {
                worst[h] = worst[h].min((up - base[h][r]) / eps);
            }
        }
    }
    Ok(worst)
}

/// `instances` random (state, q) pairs spread over freshly initialised QMIX
/// and QTRAN++ models (homogeneous and heterogeneous mixers, 2 to 4 agents).
pub fn mono_suite(seed: u64, instances: usize) -> Result<SuiteReport> {
    const EPS: f64 = 1e-4;
    const PER_MODEL: usize = 50;
    let mut report = SuiteReport::new(Suite::Mono, seed, "min directional derivative (negated)", -MONO_TOLERANCE);
    let mut qmix_worst = f64::INFINITY;
    let mut head_worst = f64::INFINITY;
    let mut rng = rng_for(seed, 0);
    let mut done = 0;
    let mut model_idx = 0;
    while done < instances {
        let rows = PER_MODEL.min(instances - done);
        let n = 2 + model_idx % 3;
        let net = NetworkConfig {
            hidden_dim: 8,
            mixer_embed: 8,
            hyper_hidden: 16,
            heterogeneous: model_idx % 4 == 3,
        };
        let info = EnvInfo {
            n_agents: n,
            n_actions: 2,
            obs_dim: 3,
            state_dim: 5,
            episode_limit: 1,
        };
        let state = Tensor::new(vec![rows, 5], uniform(&mut rng, rows * 5, -2.0, 2.0))?;
        let q = uniform(&mut rng, rows * n, -5.0, 5.0);
        for family in [Family::Qmix, Family::Qtranpp] {
            let arch = Architecture::for_spec(&AlgorithmSpec::new(family));
            let model = FactoredModel::<f64>::new(arch, net, info, &mut rng)?;
            let p = model.frozen_online();
            let mut g = Graph::new();
            let s = g.constant(state.clone());
            let prep = model.prepare(&mut g, p, s)?;
            let worst = min_directional(&mut g, &q, rows, n, EPS, |g, qv| match family {
                Family::Qmix => Ok(vec![model.q_jt(g, p, &prep, qv)?]),
                _ => model.q_tran(g, &prep, qv),
            })?;
            let w = worst.iter().copied().fold(f64::INFINITY, f64::min);
            if w < MONO_TOLERANCE {
                report.fail(format!(
                    "{}: directional derivative {w:e} on model {model_idx} (seed {seed})",
                    family.name()
                ));
            }
            if family == Family::Qmix {
                qmix_worst = qmix_worst.min(w);
            } else {
                head_worst = head_worst.min(w);
            }
        }
        done += rows;
        model_idx += 1;
    }
    for (name, w) in [("qmix_mixer", qmix_worst), ("qtranpp_heads", head_worst)] {
        report.push(CaseResult {
            name: name.into(),
            instances,
            worst: -w,
            passed: w >= MONO_TOLERANCE,
        });
    }
    Ok(report)
}

/// Random utilities with a strict per-agent argmax.
fn random_utilities(rng: &mut SimRng, n: usize, a: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
    let q: Vec<Vec<f64>> = (0..n)
        .map(|_| loop {
            let row = uniform(rng, a, -3.0, 3.0);
            let best = table_argmax(&row);
            if row.iter().enumerate().all(|(k, &v)| k == best || v < row[best] - 1e-3) {
                break row;
            }
        })
        .collect();
    let greedy = q.iter().map(|r| table_argmax(r)).collect();
    (q, greedy)
}

fn joint_from_index(j: usize, n: usize, a: usize) -> Vec<usize> {
    let mut u = vec![0; n];
    let mut rem = j;
    for slot in u.iter_mut().rev() {
        *slot = rem % a;
        rem /= a;
    }
    u
}

fn joint_index(u: &[usize], a: usize) -> usize {
    u.iter().fold(0, |acc, &x| acc * a + x)
}

/// Sufficiency: tables built to satisfy the four conditions always have
/// `argmax Q_jt = ū`. Necessity: every decentralizable table admits an
/// α-scaled linear `Q_tran` that passes the condition chain.
pub fn theorem1_suite(seed: u64, instances: usize) -> Result<SuiteReport> {
    let mut report = SuiteReport::new(Suite::Theorem1, seed, "failed instances", 0.0);
    let mut rng = rng_for(seed, 0);
    let mut suff_fail = 0usize;
    for i in 0..instances {
        let n = rng.gen_range(2..=3);
        let a = rng.gen_range(2..=4);
        let (q, greedy) = random_utilities(&mut rng, n, a);
        let k = a.pow(n as u32);
        let w = uniform(&mut rng, n, 0.1, 2.0);
        let c = rng.gen_range(-2.0..2.0);
        // Monotone in every q_i: a positive linear part plus a positive-weight softplus.
        let tran: Vec<f64> = (0..k)
            .map(|j| {
                let u = joint_from_index(j, n, a);
                let lin: f64 = (0..n).map(|m| w[m] * q[m][u[m]]).sum();
                lin + (1.0 + (0.5 * lin).exp()).ln() + c
            })
            .collect();
        let g = joint_index(&greedy, a);
        let jt: Vec<f64> = (0..k)
            .map(|j| if j == g { tran[j] } else { tran[j] - rng.gen_range(0.0..3.0) })
            .collect();
        let conds = decentralization_conditions(&q, &jt, &tran, &greedy, 0.0);
        let argmax_ok = table_argmax(&jt) == g && jt.iter().enumerate().all(|(j, &v)| j == g || v < jt[g]);
        if !conds.all() || !argmax_ok {
            suff_fail += 1;
            report.fail(format!(
                "sufficiency: instance {i} (n={n}, a={a}, seed {seed}) conditions {conds:?} argmax {}",
                table_argmax(&jt)
            ));
        }
    }
    report.push(CaseResult {
        name: "sufficiency".into(),
        instances,
        worst: suff_fail as f64,
        passed: suff_fail == 0,
    });

    let mut nec_fail = 0usize;
    let mut max_halvings = 0usize;
    for i in 0..instances {
        let n = rng.gen_range(2..=3);
        let a = rng.gen_range(2..=4);
        let (q, greedy) = random_utilities(&mut rng, n, a);
        let k = a.pow(n as u32);
        let g = joint_index(&greedy, a);
        let mut jt = uniform(&mut rng, k, -3.0, 3.0);
        let top = jt.iter().enumerate().filter(|&(j, _)| j != g).map(|(_, &v)| v).fold(f64::MIN, f64::max);
        jt[g] = top + rng.gen_range(1e-3..1.0);
        let mut alpha = vec![1.0; n];
        let mut halvings = 0;
        let build = |alpha: &[f64]| -> Vec<f64> {
            (0..k)
                .map(|j| {
                    let u = joint_from_index(j, n, a);
                    (0..n).map(|m| alpha[m] * (q[m][u[m]] - q[m][greedy[m]])).sum::<f64>() + jt[g]
                })
                .collect()
        };
        let mut tran = build(&alpha);
        while tran.iter().zip(&jt).any(|(c, d)| c < d) && halvings < 200 {
            alpha.iter_mut().for_each(|x| *x *= 0.5);
            halvings += 1;
            tran = build(&alpha);
        }
        max_halvings = max_halvings.max(halvings);
        let chain = condition_chain_check(&jt, &[tran.clone()], g);
        let head = &chain.heads[0];
        let conds = decentralization_conditions(&q, &jt, &tran, &greedy, 0.0);
        let chain_ok = head.upper_bounds_jt && head.max.gt_ac == 0.0 && head.max.gt_ad == 0.0 && head.mean.eq_ab == 0.0;
        if !(conds.all() && chain_ok) {
            nec_fail += 1;
            report.fail(format!(
                "necessity: instance {i} (n={n}, a={a}, seed {seed}) after {halvings} halvings, conditions {conds:?}"
            ));
        }
    }
    report.push(CaseResult {
        name: format!("necessity (max {max_halvings} halvings)"),
        instances,
        worst: nec_fail as f64,
        passed: nec_fail == 0,
    });
    Ok(report)
}

/// Entries with `Q_tran(u) > Q_jt(ū) > Q_jt(u)`: the clipped non-optimal loss
/// must push on `Q_tran(u)` every time, the original max-based one never.
pub fn signal_suite(seed: u64, instances: usize) -> Result<SuiteReport> {
    let mut report = SuiteReport::new(Suite::Signal, seed, "entries with the wrong gradient", 0.0);
    let mut rng = rng_for(seed, 0);
    let mut d = Vec::with_capacity(instances);
    let mut a = Vec::with_capacity(instances);
    let mut c = Vec::with_capacity(instances);
    for _ in 0..instances {
        let lo: f64 = rng.gen_range(-5.0..5.0);
        let mid = lo + rng.gen_range(1e-3..3.0);
        let hi = mid + rng.gen_range(1e-3..3.0);
        d.push(lo);
        a.push(mid);
        c.push(hi);
    }
    let grads = |eq3: bool| -> Result<Vec<f64>> {
        let mut g = Graph::<f64>::new();
        let jt_u = g.variable(Tensor::new(vec![instances], d.clone())?);
        let tran_u = g.variable(Tensor::new(vec![instances], c.clone())?);
        let terms = if eq3 {
            nopt_eq3_terms(&mut g, jt_u, tran_u)?
        } else {
            nopt_qtranpp_terms(&mut g, jt_u, &a, tran_u, false)?
        };
        let total = g.sum(terms);
        g.backward(total)?;
        Ok(g.grad(tran_u).map(|x| x.to_vec()).unwrap_or_else(|| vec![0.0; instances]))
    };
    let pp = grads(false)?;
    let eq3 = grads(true)?;
    let pp_zero = pp.iter().filter(|&&x| x == 0.0).count();
    let eq3_nonzero = eq3.iter().filter(|&&x| x != 0.0).count();
    if pp_zero > 0 {
        report.fail(format!("clipped loss: {pp_zero} entries without gradient on Q_tran(u) (seed {seed})"));
    }
    if eq3_nonzero > 0 {
        report.fail(format!("max loss: {eq3_nonzero} entries with gradient on Q_tran(u) (seed {seed})"));
    }
    report.push(CaseResult {
        name: "clipped_nonzero".into(),
        instances,
        worst: pp_zero as f64,
        passed: pp_zero == 0,
    });
    report.push(CaseResult {
        name: "max_zero".into(),
        instances,
        worst: eq3_nonzero as f64,
        passed: eq3_nonzero == 0,
    });
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_names_parse() {
        assert_eq!(Suite::parse("all").unwrap().len(), 4);
        assert_eq!(Suite::parse("mono").unwrap(), vec![Suite::Mono]);
        assert!(Suite::parse("speed").is_err());
    }

    #[test]
    fn small_runs_pass() {
        assert!(mono_suite(1, 60).unwrap().passed);
        assert!(theorem1_suite(1, 50).unwrap().passed);
        assert!(signal_suite(1, 50).unwrap().passed);
    }
}
