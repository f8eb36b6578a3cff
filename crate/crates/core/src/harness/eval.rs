use std::fmt::Write as _;

use serde::Serialize;

use super::run::collect_episode;
use crate::algo::{condition_chain_check, ChainReport, ChainViolation};
use crate::autodiff::GruState;
use crate::env::{EnvSpec, MatrixGameSpec};
use crate::error::Result;
use crate::nets::{greedy_joint_action, FactoredModel, JointTables};
use crate::rng::SimRng;
use crate::scalar::Scalar;

/// Estimator tables for one latent state of a matrix game.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StateTables {
    pub state: usize,
    pub probability: f64,
    /// `utilities[i][a]`
    pub utilities: Vec<Vec<f64>>,
    pub greedy: Vec<usize>,
    pub q_jt: Vec<f64>,
    pub q_tran: Vec<Vec<f64>>,
}

/// Probability-weighted tables over the latent states that look identical to the agents.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContextTables {
    pub states: Vec<usize>,
    pub greedy: Vec<usize>,
    pub q_jt: Vec<f64>,
    pub q_tran: Vec<Vec<f64>>,
    pub report: ChainReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatrixTables {
    pub num_agents: usize,
    pub actions_per_agent: usize,
    pub per_state: Vec<StateTables>,
    pub contexts: Vec<ContextTables>,
    /// Analytic expected return of the greedy policy over all latent states.
    pub expected_return: f64,
}

impl MatrixTables {
    /// Per head, the largest context mean violation.
    pub fn mean_violation_per_head(&self) -> Vec<f64> {
        let h = self.contexts.first().map_or(0, |c| c.report.heads.len());
        (0..h)
            .map(|k| {
                self.contexts
                    .iter()
                    .map(|c| c.report.heads[k].mean_violation)
                    .fold(0.0, f64::max)
            })
            .collect()
    }

    pub fn violation(&self) -> ChainViolation {
        average(self.contexts.iter().map(|c| c.report.mean()))
    }
}

fn average(items: impl Iterator<Item = ChainViolation>) -> ChainViolation {
    let mut out = ChainViolation::default();
    let mut n = 0.0;
    for v in items {
        out.eq_ab += v.eq_ab;
        out.gt_ac += v.gt_ac;
        out.gt_cd += v.gt_cd;
        out.gt_ad += v.gt_ad;
        n += 1.0;
    }
    if n > 0.0 {
        out.eq_ab /= n;
        out.gt_ac /= n;
        out.gt_cd /= n;
        out.gt_ad /= n;
    }
    out
}

/// Transformed heads, or Q_jt itself when the model has none.
fn heads_or_jt(t: &JointTables) -> Vec<Vec<f64>> {
    if t.q_tran.is_empty() {
        vec![t.q_jt.clone()]
    } else {
        t.q_tran.clone()
    }
}

pub fn matrix_tables<T: Scalar>(model: &FactoredModel<T>, spec: &MatrixGameSpec) -> Result<MatrixTables> {
    let n = spec.num_agents;
    let mut per_state = Vec::with_capacity(spec.states.len());
    for (k, st) in spec.states.iter().enumerate() {
        let obs: Vec<Vec<f64>> = (0..n).map(|i| spec.observation(k, i)).collect();
        let mut h = GruState::zeros(n, model.net.hidden_dim);
        let utilities = model.act_q(&obs, &mut h)?;
        let masks = vec![vec![true; spec.actions_per_agent]; n];
        let greedy = greedy_joint_action(&utilities, &masks)?;
        let tables = model.joint_tables(&spec.state_vector(k), &utilities)?;
        per_state.push(StateTables {
            state: k,
            probability: st.probability,
            utilities,
            greedy,
            q_jt: tables.q_jt.clone(),
            q_tran: heads_or_jt(&tables),
        });
    }
    let mut contexts = Vec::new();
    for members in spec.observation_contexts() {
        let weight: f64 = members.iter().map(|&k| spec.states[k].probability).sum();
        let w = |k: usize| if weight > 0.0 { spec.states[k].probability / weight } else { 1.0 / members.len() as f64 };
        let kk = spec.num_joint_actions();
        let mut q_jt = vec![0.0; kk];
        let heads = per_state[members[0]].q_tran.len();
        let mut q_tran = vec![vec![0.0; kk]; heads];
        for &k in &members {
            for j in 0..kk {
                q_jt[j] += w(k) * per_state[k].q_jt[j];
                for (hd, tab) in q_tran.iter_mut().enumerate() {
                    tab[j] += w(k) * per_state[k].q_tran[hd][j];
                }
            }
        }
        let greedy = per_state[members[0]].greedy.clone();
        let report = condition_chain_check(&q_jt, &q_tran, spec.joint_index(&greedy));
        contexts.push(ContextTables {
            states: members,
            greedy,
            q_jt,
            q_tran,
            report,
        });
    }
    let expected_return = per_state
        .iter()
        .zip(&spec.states)
        .map(|(s, st)| st.probability * st.payoff[spec.joint_index(&s.greedy)])
        .sum();
    Ok(MatrixTables {
        num_agents: n,
        actions_per_agent: spec.actions_per_agent,
        per_state,
        contexts,
        expected_return,
    })
}

/// `A-B` style label of a joint action.
pub fn action_label(actions: &[usize]) -> String {
    actions
        .iter()
        .map(|&a| {
            if a < 26 {
                char::from(b'A' + a as u8).to_string()
            } else {
                a.to_string()
            }
        })
        .collect::<Vec<_>>()
        .join("-")
}

/// Result of one greedy evaluation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub mean_return: f64,
    pub std_return: f64,
    pub greedy_action: String,
    pub violation: ChainViolation,
    pub mean_violation_per_head: Vec<f64>,
    pub tables: Option<MatrixTables>,
}

/// Greedy (ε = 0) rollouts plus condition-chain statistics. Matrix games are
/// checked on their tables; other environments on every visited step, over
/// the full joint action space.
pub fn evaluate<T: Scalar>(
    model: &FactoredModel<T>,
    env_spec: &EnvSpec,
    episodes: usize,
    rng: &mut SimRng,
) -> Result<Evaluation> {
    let mut env = env_spec.build()?;
    let mut returns = Vec::with_capacity(episodes);
    let mut rollouts = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let ep = collect_episode(env.as_mut(), model, 0.0, rng, None)?;
        returns.push(ep.total_reward());
        rollouts.push(ep);
    }
    let (mean_return, std_return) = mean_std(&returns);

    if let Some(m) = env_spec.as_matrix() {
        let tables = matrix_tables(model, &m)?;
        let greedy_action = tables
            .contexts
            .iter()
            .map(|c| action_label(&c.greedy))
            .collect::<Vec<_>>()
            .join("/");
        return Ok(Evaluation {
            mean_return,
            std_return,
            greedy_action,
            violation: tables.violation(),
            mean_violation_per_head: tables.mean_violation_per_head(),
            tables: Some(tables),
        });
    }

    let n = model.info.n_agents;
    let mut reports: Vec<ChainReport> = Vec::new();
    let mut greedy_action = String::new();
    for ep in &rollouts {
        let mut h = GruState::zeros(n, model.net.hidden_dim);
        for t in 0..ep.len() {
            let q = model.act_q(&ep.obs[t], &mut h)?;
            let greedy = greedy_joint_action(&q, &ep.avail[t])?;
            if greedy_action.is_empty() {
                greedy_action = action_label(&greedy);
            }
            let tables = model.joint_tables(&ep.state[t], &q)?;
            let a = model.info.n_actions;
            let idx = greedy.iter().fold(0, |acc, &u| acc * a + u);
            reports.push(condition_chain_check(&tables.q_jt, &heads_or_jt(&tables), idx));
        }
    }
    let heads = reports.first().map_or(0, |r| r.heads.len());
    let per_head = (0..heads)
        .map(|k| reports.iter().map(|r| r.heads[k].mean_violation).sum::<f64>() / reports.len() as f64)
        .collect();
    Ok(Evaluation {
        mean_return,
        std_return,
        greedy_action,
        violation: average(reports.iter().map(ChainReport::mean)),
        mean_violation_per_head: per_head,
        tables: None,
    })
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Plain-text dump keyed by (state, joint_action, estimator).
///
/// Lines starting with `#` carry metadata; the rest is a CSV with header
/// `state,joint_action,estimator,value`. `state` is `s1`, `s2`, ... for
/// latent states and `ctx1`, ... for observation-context averages.
/// Estimators are `q_jt` and `q_tran_1` ... `q_tran_N`.
pub fn qtable_dump(tables: &MatrixTables, header: &[(&str, String)]) -> String {
    let mut out = String::from("# factorq q-table dump v1\n");
    for (k, v) in header {
        let _ = writeln!(out, "# {k}={v}");
    }
    let _ = writeln!(out, "# agents={} actions={}", tables.num_agents, tables.actions_per_agent);
    for s in &tables.per_state {
        let _ = writeln!(out, "# greedy s{}={}", s.state + 1, action_label(&s.greedy));
    }
    for (c, ctx) in tables.contexts.iter().enumerate() {
        let _ = writeln!(out, "# greedy ctx{}={}", c + 1, action_label(&ctx.greedy));
    }
    let _ = writeln!(out, "# expected_return={}", tables.expected_return);
    out.push_str("state,joint_action,estimator,value\n");
    let spec_actions = |j: usize| {
        let mut rem = j;
        let mut u = vec![0; tables.num_agents];
        for slot in u.iter_mut().rev() {
            *slot = rem % tables.actions_per_agent;
            rem /= tables.actions_per_agent;
        }
        action_label(&u)
    };
    let mut emit = |label: String, q_jt: &[f64], q_tran: &[Vec<f64>]| {
        for (j, v) in q_jt.iter().enumerate() {
            let _ = writeln!(out, "{label},{},q_jt,{v}", spec_actions(j));
        }
        for (h, tab) in q_tran.iter().enumerate() {
            for (j, v) in tab.iter().enumerate() {
                let _ = writeln!(out, "{label},{},q_tran_{},{v}", spec_actions(j), h + 1);
            }
        }
    };
    for s in &tables.per_state {
        emit(format!("s{}", s.state + 1), &s.q_jt, &s.q_tran);
    }
    for (c, ctx) in tables.contexts.iter().enumerate() {
        emit(format!("ctx{}", c + 1), &ctx.q_jt, &ctx.q_tran);
    }
    out
}

/// Human-readable grids in the row = agent 1, column = agent 2 layout.
/// Only meaningful for two agents; other sizes fall back to one line per entry.
pub fn format_tables(tables: &MatrixTables) -> String {
    let mut out = String::new();
    let a = tables.actions_per_agent;
    let grid = |out: &mut String, title: &str, t: &[f64]| {
        let _ = writeln!(out, "{title}");
        if tables.num_agents == 2 {
            let head: Vec<String> = (0..a).map(|j| format!("{:>8}", action_label(&[j]))).collect();
            let _ = writeln!(out, "      {}", head.join(""));
            for r in 0..a {
                let row: Vec<String> = (0..a).map(|c| format!("{:>8.3}", t[r * a + c])).collect();
                let _ = writeln!(out, "  {:>3} {}", action_label(&[r]), row.join(""));
            }
        } else {
            for (j, v) in t.iter().enumerate() {
                let _ = writeln!(out, "  {j}: {v:.3}");
            }
        }
    };
    for s in &tables.per_state {
        grid(&mut out, &format!("Q_jt(s{})", s.state + 1), &s.q_jt);
        for (h, t) in s.q_tran.iter().enumerate() {
            grid(&mut out, &format!("Q_tran^({})(s{})", h + 1, s.state + 1), t);
        }
    }
    for (c, ctx) in tables.contexts.iter().enumerate() {
        let label = if tables.contexts.len() == 1 {
            "averaged over states".to_string()
        } else {
            format!("context {}", c + 1)
        };
        grid(&mut out, &format!("Q_jt ({label})"), &ctx.q_jt);
        for (h, t) in ctx.q_tran.iter().enumerate() {
            grid(&mut out, &format!("Q_tran^({}) ({label})", h + 1), t);
        }
        let _ = writeln!(out, "greedy {}", action_label(&ctx.greedy));
    }
    let _ = writeln!(out, "expected return of greedy policy {:.3}", tables.expected_return);
    out
}
