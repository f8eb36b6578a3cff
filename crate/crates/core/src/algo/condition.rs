//! The condition chain `Q_jt(ū) = Q_tran(ū) > Q_tran(u) > Q_jt(u)` on
//! enumerated joint-action tables, and the decentralization conditions it
//! rests on.
//!
//! Labels: (a) `Q_jt(ū)`, (b) `Q_tran(ū)`, (c) `Q_tran(u)`, (d) `Q_jt(u)`.

use serde::Serialize;

/// Violation magnitudes of the four relations, all non-negative.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct ChainViolation {
    /// `|a - b|`
    pub eq_ab: f64,
    /// `max(0, c - a)`
    pub gt_ac: f64,
    /// `max(0, d - c)`
    pub gt_cd: f64,
    /// `max(0, d - a)`
    pub gt_ad: f64,
}

impl ChainViolation {
    pub fn total(&self) -> f64 {
        self.eq_ab + self.gt_ac + self.gt_cd + self.gt_ad
    }

    fn max_with(&mut self, o: &ChainViolation) {
        self.eq_ab = self.eq_ab.max(o.eq_ab);
        self.gt_ac = self.gt_ac.max(o.gt_ac);
        self.gt_cd = self.gt_cd.max(o.gt_cd);
        self.gt_ad = self.gt_ad.max(o.gt_ad);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeadReport {
    /// Equality gap, and mean strict-relation gaps over non-greedy joint actions.
    pub mean: ChainViolation,
    pub max: ChainViolation,
    /// Per joint action: the equality gap at `ū`, else the sum of the three strict gaps.
    pub per_action: Vec<f64>,
    /// Mean of `per_action`.
    pub mean_violation: f64,
    /// `Q_tran(u) >= Q_jt(u)` for every joint action.
    pub upper_bounds_jt: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainReport {
    pub greedy: usize,
    pub heads: Vec<HeadReport>,
}

impl ChainReport {
    /// Relation-wise means averaged over heads.
    pub fn mean(&self) -> ChainViolation {
        let h = self.heads.len().max(1) as f64;
        let mut out = ChainViolation::default();
        for r in &self.heads {
            out.eq_ab += r.mean.eq_ab / h;
            out.gt_ac += r.mean.gt_ac / h;
            out.gt_cd += r.mean.gt_cd / h;
            out.gt_ad += r.mean.gt_ad / h;
        }
        out
    }

    pub fn max_mean_violation(&self) -> f64 {
        self.heads.iter().map(|h| h.mean_violation).fold(0.0, f64::max)
    }
}

/// Check the chain on full tables over the joint actions. `greedy` is the
/// index of `ū`. Each entry of `q_tran` is one head's table.
pub fn condition_chain_check(q_jt: &[f64], q_tran: &[Vec<f64>], greedy: usize) -> ChainReport {
    let a = q_jt[greedy];
    let heads = q_tran
        .iter()
        .map(|tran| {
            let b = tran[greedy];
            let eq = (a - b).abs();
            let mut sum = ChainViolation {
                eq_ab: eq,
                ..Default::default()
            };
            let mut max = sum;
            let mut per_action = Vec::with_capacity(q_jt.len());
            let mut upper = true;
            for (u, (&d, &c)) in q_jt.iter().zip(tran).enumerate() {
                upper &= c >= d;
                if u == greedy {
                    per_action.push(eq);
                    continue;
                }
                let v = ChainViolation {
                    eq_ab: 0.0,
                    gt_ac: (c - a).max(0.0),
                    gt_cd: (d - c).max(0.0),
                    gt_ad: (d - a).max(0.0),
                };
                sum.gt_ac += v.gt_ac;
                sum.gt_cd += v.gt_cd;
                sum.gt_ad += v.gt_ad;
                max.max_with(&v);
                per_action.push(v.total());
            }
            let others = (q_jt.len() - 1).max(1) as f64;
            let mean = ChainViolation {
                eq_ab: eq,
                gt_ac: sum.gt_ac / others,
                gt_cd: sum.gt_cd / others,
                gt_ad: sum.gt_ad / others,
            };
            let mean_violation = per_action.iter().sum::<f64>() / per_action.len() as f64;
            HeadReport {
                mean,
                max,
                per_action,
                mean_violation,
                upper_bounds_jt: upper,
            }
        })
        .collect();
    ChainReport { greedy, heads }
}

/// Which of the four decentralization conditions hold for one table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DecentralizationConditions {
    /// `Q_tran(ū) = Q_jt(ū)`
    pub optimal_match: bool,
    /// `Q_tran(u) >= Q_jt(u)` everywhere
    pub upper_bound: bool,
    /// `Q_tran` is non-decreasing in each `q_i` (checked on the table)
    pub monotone: bool,
    /// `ū` is each agent's strict utility argmax
    pub greedy_is_argmax: bool,
}

impl DecentralizationConditions {
    pub fn all(&self) -> bool {
        self.optimal_match && self.upper_bound && self.monotone && self.greedy_is_argmax
    }
}

/// Evaluate the conditions on explicit tables. `q[i][a]` are the utilities,
/// tables are indexed by joint action (agent 0 most significant) and `greedy`
/// is the claimed `ū` as per-agent actions.
pub fn decentralization_conditions(
    q: &[Vec<f64>],
    q_jt: &[f64],
    q_tran: &[f64],
    greedy: &[usize],
    tol: f64,
) -> DecentralizationConditions {
    let n = q.len();
    let a = q.first().map_or(0, Vec::len);
    let index = |u: &[usize]| u.iter().fold(0, |acc, &x| acc * a + x);
    let g = index(greedy);
    let greedy_is_argmax = greedy.iter().enumerate().all(|(i, &ui)| {
        q[i].iter().enumerate().all(|(k, &v)| k == ui || v < q[i][ui])
    });
    let optimal_match = (q_tran[g] - q_jt[g]).abs() <= tol;
    let upper_bound = q_tran.iter().zip(q_jt).all(|(&c, &d)| c >= d - tol);
    let mut monotone = true;
    let mut u = vec![0; n];
    'outer: for j in 0..q_jt.len() {
        let mut rem = j;
        for slot in u.iter_mut().rev() {
            *slot = rem % a;
            rem /= a;
        }
        for i in 0..n {
            let orig = u[i];
            for alt in 0..a {
                if q[i][alt] >= q[i][orig] {
                    u[i] = alt;
                    let k = index(&u);
                    u[i] = orig;
                    if q_tran[k] < q_tran[j] - tol {
                        monotone = false;
                        break 'outer;
                    }
                }
            }
        }
    }
    DecentralizationConditions {
        optimal_match,
        upper_bound,
        monotone,
        greedy_is_argmax,
    }
}

/// Index of the largest table entry, lowest index on ties.
pub fn table_argmax(table: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in table.iter().enumerate() {
        if v > table[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn satisfied_chain_reports_zero() {
        // ū = 0, Q_jt(ū) = Q_tran(ū) = 3, Q_tran(u) = 2, Q_jt(u) = 1
        let r = condition_chain_check(&[3.0, 1.0], &[vec![3.0, 2.0]], 0);
        assert_eq!(r.heads[0].mean, ChainViolation::default());
        assert_eq!(r.heads[0].mean_violation, 0.0);
        assert!(r.heads[0].upper_bounds_jt);
    }

    #[test]
    fn transformed_above_optimum_is_a_violation_of_one() {
        let r = condition_chain_check(&[3.0, 1.0], &[vec![3.0, 4.0]], 0);
        assert_eq!(r.heads[0].max.gt_ac, 1.0);
        assert_eq!(r.heads[0].max.gt_cd, 0.0);
    }

    #[test]
    fn conditions_on_hand_table() {
        // 2 agents x 2 actions, ū = (0, 0)
        let q = vec![vec![1.0, 0.0], vec![2.0, 1.0]];
        let tran = vec![3.0, 2.0, 2.0, 1.0];
        let jt = vec![3.0, 1.5, 0.0, 1.0];
        let c = decentralization_conditions(&q, &jt, &tran, &[0, 0], 1e-12);
        assert!(c.all(), "{c:?}");
        assert_eq!(table_argmax(&jt), 0);
        let bad_tran = vec![3.0, 2.0, 2.0, 3.5];
        let c = decentralization_conditions(&q, &jt, &bad_tran, &[0, 0], 1e-12);
        assert!(!c.monotone);
    }
}
