use rand::Rng;

use super::condition::ChainViolation;
use super::spec::{Ablation, AlgorithmSpec, Family, HeadMode};
use crate::autodiff::{Graph, Tensor, Var};
use crate::episode::EpisodeBatch;
use crate::error::{Error, Result};
use crate::nets::{masked_argmax, FactoredModel};
use crate::rng::SimRng;
use crate::scalar::Scalar;

/// Scalar values of one evaluation of the training objective.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub l_td: f64,
    pub l_opt: f64,
    pub l_nopt: f64,
    pub total: f64,
    /// Mean violation of each relation of the condition chain over the batch.
    pub violation: ChainViolation,
}

/// The objective as a live graph, ready for `backward(total)`.
pub struct LossGraph<T> {
    pub graph: Graph<T>,
    pub total: Var,
    pub l_td: Var,
    pub l_opt: Option<Var>,
    pub l_nopt: Option<Var>,
    pub breakdown: LossBreakdown,
}

fn constant<T: Scalar>(g: &mut Graph<T>, values: &[f64]) -> Var {
    g.constant(Tensor::from_vec(values.iter().map(|&v| T::from_f64_lossy(v)).collect()))
}

fn values<T: Scalar>(g: &Graph<T>, v: Var) -> Vec<f64> {
    g.data(v).iter().map(|x| x.to_f64_lossy()).collect()
}

/// `Σ_r weight_r · sq_r`.
fn weighted_sum<T: Scalar>(g: &mut Graph<T>, sq: Var, weight: &[f64]) -> Result<Var> {
    let w = constant(g, weight);
    let prod = g.mul(sq, w)?;
    Ok(g.sum(prod))
}

/// Per-entry QTRAN++ non-optimal-action term.
///
/// Where `Q_jt(u) >= Q_jt(ū)` the term is `(Q_jt(u) - Q_tran(u))²`; otherwise
/// it is `(clip(Q_tran(u), Q_jt(u), Q_jt(ū)) - Q_tran(u))²` with the clipped
/// value acting as a target whose lower bound stays live. The branch and the
/// upper bound only ever see detached values. `fix` detaches `Q_jt(u)` too.
pub fn nopt_qtranpp_terms<T: Scalar>(
    g: &mut Graph<T>,
    jt_u: Var,
    jt_bar: &[f64],
    tran_u: Var,
    fix: bool,
) -> Result<Var> {
    let d = values(g, jt_u);
    if d.len() != jt_bar.len() || g.shape(tran_u) != g.shape(jt_u) {
        return Err(Error::shape("loss_nopt", g.shape(jt_u), g.shape(tran_u)));
    }
    let upper: Vec<bool> = d.iter().zip(jt_bar).map(|(&du, &a)| du >= a).collect();
    let m1: Vec<f64> = upper.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    let m2: Vec<f64> = m1.iter().map(|v| 1.0 - v).collect();
    // In the upper branch the clip output is discarded; any hi >= lo keeps it well-defined.
    let hi: Vec<f64> = d.iter().zip(jt_bar).zip(&upper).map(|((&du, &a), &u)| if u { du } else { a }).collect();
    let lo = if fix { g.detach(jt_u) } else { jt_u };
    let hi = constant(g, &hi);
    let x = g.detach(tran_u);
    let clipped = g.clip(x, lo, hi)?;
    let m1 = constant(g, &m1);
    let m2 = constant(g, &m2);
    let keep = g.mul(m1, lo)?;
    let band = g.mul(m2, clipped)?;
    let target = g.add(keep, band)?;
    let diff = g.sub(target, tran_u)?;
    Ok(g.square(diff))
}

/// Per-entry optimal-action term `(Q_jt(ū) - Q_tran(ū))²`; `detach_jt` stops
/// the gradient into the true estimator.
pub fn opt_terms<T: Scalar>(g: &mut Graph<T>, jt_bar: Var, tran_bar: Var, detach_jt: bool) -> Result<Var> {
    let jt = if detach_jt { g.detach(jt_bar) } else { jt_bar };
    let diff = g.sub(jt, tran_bar)?;
    Ok(g.square(diff))
}

/// Per-entry original QTRAN non-optimal term `(max{Q_jt(u), Q_tran(u)} - Q_tran(u))²`
/// with the max detached.
pub fn nopt_eq3_terms<T: Scalar>(g: &mut Graph<T>, jt_u: Var, tran_u: Var) -> Result<Var> {
    let m = g.maximum(jt_u, tran_u)?;
    let m = g.detach(m);
    let diff = g.sub(m, tran_u)?;
    Ok(g.square(diff))
}

struct Rows {
    /// `[R, N]` utilities of the stored actions.
    q_u: Var,
    /// `[R, N]` utilities of the greedy actions.
    q_bar: Var,
    same: Vec<bool>,
    valid: Vec<f64>,
    count: f64,
}

fn stack<T: Scalar>(g: &mut Graph<T>, parts: &[Var]) -> Result<Var> {
    if parts.len() == 1 {
        Ok(parts[0])
    } else {
        g.concat(parts, 0)
    }
}

/// Greedy actions per row `(episode, agent)` of a detached q tensor.
fn greedy_rows<T: Scalar>(g: &Graph<T>, q: Var, batch: &EpisodeBatch, t: usize) -> Result<Vec<usize>> {
    let a = batch.n_actions;
    let data = values(g, q);
    let mut out = Vec::with_capacity(batch.batch * batch.n_agents);
    for b in 0..batch.batch {
        for i in 0..batch.n_agents {
            let r = b * batch.n_agents + i;
            let mask = batch.avail_at(b, t, i);
            out.push(masked_argmax(&data[r * a..(r + 1) * a], mask).ok_or(Error::NoAvailableAction(i))?);
        }
    }
    Ok(out)
}

fn state_const<T: Scalar>(g: &mut Graph<T>, batch: &EpisodeBatch, slots: impl Iterator<Item = usize>) -> Result<Var> {
    let mut data = Vec::new();
    let mut rows = 0;
    for t in slots {
        data.extend(batch.state_rows(t).into_iter().map(T::from_f64_lossy));
        rows += batch.batch;
    }
    Ok(g.constant(Tensor::new(vec![rows, batch.state_dim], data)?))
}

/// Build the combined objective for `batch`. Rows are ordered slot-major
/// (`t * batch + b`) over the `max_t` transition slots.
pub fn build_losses<T: Scalar>(
    model: &FactoredModel<T>,
    batch: &EpisodeBatch,
    spec: &AlgorithmSpec,
    rng: &mut SimRng,
) -> Result<LossGraph<T>> {
    spec.validate()?;
    let (bsz, n, max_t) = (batch.batch, batch.n_agents, batch.max_t);
    let slot_idx = |t: usize, b: usize| batch.index(b, t);
    let needs_boot = |t: usize, b: usize| {
        let k = slot_idx(t, b);
        batch.filled[k] && !batch.terminated[k]
    };
    let bootstrap = spec.gamma > 0.0 && (0..max_t).any(|t| (0..bsz).any(|b| needs_boot(t, b)));
    let extra = bootstrap && (0..bsz).any(|b| needs_boot(max_t - 1, b));
    let steps = max_t + usize::from(extra);

    let mut g = Graph::new();
    let online = model.online();
    let qs = model.unroll_utilities(&mut g, online, batch, steps)?;

    let mut u_parts = Vec::with_capacity(max_t);
    let mut bar_parts = Vec::with_capacity(max_t);
    let mut same = Vec::with_capacity(max_t * bsz);
    let mut valid = Vec::with_capacity(max_t * bsz);
    for t in 0..max_t {
        let actions = batch.action_rows(t);
        let greedy = greedy_rows(&g, qs[t], batch, t)?;
        let qu = g.gather(qs[t], &actions)?;
        u_parts.push(g.reshape(qu, vec![bsz, n])?);
        let qb = g.gather(qs[t], &greedy)?;
        bar_parts.push(g.reshape(qb, vec![bsz, n])?);
        for b in 0..bsz {
            same.push(actions[b * n..(b + 1) * n] == greedy[b * n..(b + 1) * n]);
            valid.push(if batch.filled[slot_idx(t, b)] { 1.0 } else { 0.0 });
        }
    }
    let count: f64 = valid.iter().sum::<f64>().max(1.0);
    let rows = Rows {
        q_u: stack(&mut g, &u_parts)?,
        q_bar: stack(&mut g, &bar_parts)?,
        same,
        valid,
        count,
    };
    let r = rows.valid.len();

    // TD target.
    let mut y: Vec<f64> = (0..max_t)
        .flat_map(|t| (0..bsz).map(move |b| (t, b)))
        .map(|(t, b)| batch.reward[slot_idx(t, b)])
        .collect();
    if bootstrap {
        let next = target_next_values(model, batch, &g, &qs, steps)?;
        for t in 0..max_t {
            for b in 0..bsz {
                if needs_boot(t, b) {
                    y[t * bsz + b] += spec.gamma * next[t * bsz + b];
                }
            }
        }
    }

    let state = state_const(&mut g, batch, 0..max_t)?;
    let prep = model.prepare(&mut g, online, state)?;
    let jt_u = model.q_jt(&mut g, online, &prep, rows.q_u)?;
    let yv = constant(&mut g, &y);
    let td = g.sub(jt_u, yv)?;
    let td = g.square(td);
    let w: Vec<f64> = rows.valid.iter().map(|v| v / rows.count).collect();
    let l_td = weighted_sum(&mut g, td, &w)?;

    let heads_u = model.q_tran(&mut g, &prep, rows.q_u)?;
    let jt_bar = model.q_jt(&mut g, online, &prep, rows.q_bar)?;
    let heads_bar = model.q_tran(&mut g, &prep, rows.q_bar)?;

    let mut out = LossGraph {
        total: l_td,
        l_td,
        l_opt: None,
        l_nopt: None,
        breakdown: LossBreakdown::default(),
        graph: Graph::new(),
    };

    let d_vals = values(&g, jt_u);
    let a_vals = values(&g, jt_bar);
    let violation = if heads_u.is_empty() {
        batch_violation(&rows, &a_vals, &[a_vals.clone()], &[d_vals.clone()], &d_vals)
    } else {
        let b_vals: Vec<Vec<f64>> = heads_bar.iter().map(|&h| values(&g, h)).collect();
        let c_vals: Vec<Vec<f64>> = heads_u.iter().map(|&h| values(&g, h)).collect();
        batch_violation(&rows, &a_vals, &b_vals, &c_vals, &d_vals)
    };

    if spec.family.has_transformed() && !heads_u.is_empty() {
        let h = heads_u.len();
        let head_w: Vec<Vec<f64>> = match spec.head_mode {
            HeadMode::All => (0..h)
                .map(|_| rows.valid.iter().map(|v| v / (rows.count * h as f64)).collect())
                .collect(),
            HeadMode::Random => {
                let pick: Vec<usize> = (0..r).map(|_| rng.gen_range(0..h)).collect();
                (0..h)
                    .map(|k| {
                        (0..r)
                            .map(|i| if pick[i] == k { rows.valid[i] / rows.count } else { 0.0 })
                            .collect()
                    })
                    .collect()
            }
        };
        let eq3 = spec.family == Family::Qtran || spec.ablation == Ablation::Lb;
        let fix = spec.ablation == Ablation::Fix;
        let mut opt_parts = Vec::with_capacity(h);
        let mut nopt_parts = Vec::with_capacity(h);
        for k in 0..h {
            let sq = opt_terms(&mut g, jt_bar, heads_bar[k], eq3 || fix)?;
            opt_parts.push(weighted_sum(&mut g, sq, &head_w[k])?);
            let sq = if eq3 {
                nopt_eq3_terms(&mut g, jt_u, heads_u[k])?
            } else {
                nopt_qtranpp_terms(&mut g, jt_u, &a_vals, heads_u[k], fix)?
            };
            nopt_parts.push(weighted_sum(&mut g, sq, &head_w[k])?);
        }
        let l_opt = sum_vars(&mut g, &opt_parts)?;
        let l_nopt = sum_vars(&mut g, &nopt_parts)?;
        let a = g.scale(l_opt, T::from_f64_lossy(spec.lambda_opt));
        let b = g.scale(l_nopt, T::from_f64_lossy(spec.lambda_nopt));
        let total = g.add(l_td, a)?;
        out.total = g.add(total, b)?;
        out.l_opt = Some(l_opt);
        out.l_nopt = Some(l_nopt);
    }

    let item = |v: Var| g.value(v).item().to_f64_lossy();
    out.breakdown = LossBreakdown {
        l_td: item(l_td),
        l_opt: out.l_opt.map_or(0.0, item),
        l_nopt: out.l_nopt.map_or(0.0, item),
        total: item(out.total),
        violation,
    };
    out.graph = g;
    Ok(out)
}

fn sum_vars<T: Scalar>(g: &mut Graph<T>, vars: &[Var]) -> Result<Var> {
    let mut acc = vars[0];
    for &v in &vars[1..] {
        acc = g.add(acc, v)?;
    }
    Ok(acc)
}

/// `Q_jt^target(s', ū')` for every slot-major row, with `ū'` the online
/// greedy action at the next slot. Rows whose next slot was not unrolled get 0.
fn target_next_values<T: Scalar>(
    model: &FactoredModel<T>,
    batch: &EpisodeBatch,
    online_graph: &Graph<T>,
    online_q: &[Var],
    steps: usize,
) -> Result<Vec<f64>> {
    let (bsz, n, max_t) = (batch.batch, batch.n_agents, batch.max_t);
    let mut tg = Graph::new();
    let p = model.frozen_target();
    let tq = model.unroll_utilities(&mut tg, p, batch, steps)?;
    let next_slots: Vec<usize> = (1..steps).collect();
    if next_slots.is_empty() {
        return Ok(vec![0.0; max_t * bsz]);
    }
    let mut parts = Vec::with_capacity(next_slots.len());
    for &t in &next_slots {
        let greedy = greedy_rows(online_graph, online_q[t], batch, t)?;
        let q = tg.gather(tq[t], &greedy)?;
        parts.push(tg.reshape(q, vec![bsz, n])?);
    }
    let q = stack(&mut tg, &parts)?;
    let state = state_const(&mut tg, batch, next_slots.iter().copied())?;
    let prep = model.prepare(&mut tg, p, state)?;
    let jt = model.q_jt(&mut tg, p, &prep, q)?;
    let mut out = values(&tg, jt);
    out.resize(max_t * bsz, 0.0);
    Ok(out)
}

/// Mean chain violations over valid rows and heads. The equality is measured
/// on every row, the strict relations only where the stored action is not
/// the greedy one.
fn batch_violation(rows: &Rows, a: &[f64], b: &[Vec<f64>], c: &[Vec<f64>], d: &[f64]) -> ChainViolation {
    let mut sum = ChainViolation::default();
    let (mut n_eq, mut n_gt) = (0.0, 0.0);
    for (bh, ch) in b.iter().zip(c) {
        for r in 0..rows.valid.len() {
            if rows.valid[r] == 0.0 {
                continue;
            }
            sum.eq_ab += (a[r] - bh[r]).abs();
            n_eq += 1.0;
            if !rows.same[r] {
                sum.gt_ac += (ch[r] - a[r]).max(0.0);
                sum.gt_cd += (d[r] - ch[r]).max(0.0);
                sum.gt_ad += (d[r] - a[r]).max(0.0);
                n_gt += 1.0;
            }
        }
    }
    let div = |x: f64, n: f64| if n > 0.0 { x / n } else { 0.0 };
    ChainViolation {
        eq_ab: div(sum.eq_ab, n_eq),
        gt_ac: div(sum.gt_ac, n_gt),
        gt_cd: div(sum.gt_cd, n_gt),
        gt_ad: div(sum.gt_ad, n_gt),
    }
}

/// Forward-only evaluation of the objective (no gradient bookkeeping used).
pub fn combined_loss<T: Scalar>(
    model: &FactoredModel<T>,
    batch: &EpisodeBatch,
    spec: &AlgorithmSpec,
    rng: &mut SimRng,
) -> Result<LossBreakdown> {
    Ok(build_losses(model, batch, spec, rng)?.breakdown)
}

/// Run backward on the objective and add the gradients into the online store.
pub fn accumulate_gradients<T: Scalar>(
    model: &mut FactoredModel<T>,
    batch: &EpisodeBatch,
    spec: &AlgorithmSpec,
    rng: &mut SimRng,
) -> Result<LossBreakdown> {
    let mut lg = build_losses(model, batch, spec, rng)?;
    lg.graph.backward(lg.total)?;
    lg.graph.accumulate_param_grads(&mut model.params)?;
    Ok(lg.breakdown)
}
