//! Barnard's exact unconditional test for two binomial proportions.
//!
//! Statistic: unpooled Wald `(p_b - p_a) / sqrt(p_a q_a / n_a + p_b q_b / n_b)`.
//! A zero standard error gives `±inf` by the sign of the difference, or `0`
//! for equal proportions. The p-value is the largest tail probability over a
//! grid of common success probabilities.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Scalar;

pub const DEFAULT_GRID_STEP: f64 = 0.001;

/// Variant label written into report metadata.
pub const BARNARD_VARIANT: &str = "wald-unpooled, one-sided (b > a), nuisance grid 0.001";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Table2x2 {
    pub successes_a: u32,
    pub trials_a: u32,
    pub successes_b: u32,
    pub trials_b: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid 2x2 table: {0}")]
pub struct TableError(&'static str);

impl Table2x2 {
    pub fn new(successes_a: u32, trials_a: u32, successes_b: u32, trials_b: u32) -> Result<Self, TableError> {
        if trials_a == 0 || trials_b == 0 {
            return Err(TableError("trials must be at least 1"));
        }
        if successes_a > trials_a || successes_b > trials_b {
            return Err(TableError("successes exceed trials"));
        }
        Ok(Table2x2 {
            successes_a,
            trials_a,
            successes_b,
            trials_b,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Alternative {
    /// Sample b has the higher success probability.
    Greater,
    Less,
    TwoSided,
}

pub fn wald_statistic<S: Scalar>(x_a: u32, n_a: u32, x_b: u32, n_b: u32) -> S {
    let (na, nb) = (S::from_count(n_a as usize), S::from_count(n_b as usize));
    let pa = S::from_count(x_a as usize) / na;
    let pb = S::from_count(x_b as usize) / nb;
    let diff = pb - pa;
    let var = pa * (S::one() - pa) / na + pb * (S::one() - pb) / nb;
    if var > S::zero() {
        diff / var.sqrt()
    } else if diff > S::zero() {
        S::infinity()
    } else if diff < S::zero() {
        S::neg_infinity()
    } else {
        S::zero()
    }
}

fn ln_factorials<S: Scalar>(n: usize) -> Vec<S> {
    let mut out = Vec::with_capacity(n + 1);
    let mut acc = S::zero();
    out.push(acc);
    for i in 1..=n {
        acc += S::from_count(i).ln();
        out.push(acc);
    }
    out
}

/// Binomial pmf over `0..=n` at success probability `pi`.
fn pmf<S: Scalar>(n: usize, pi: S, lnf: &[S]) -> Vec<S> {
    if pi <= S::zero() || pi >= S::one() {
        let hit = if pi <= S::zero() { 0 } else { n };
        return (0..=n).map(|k| if k == hit { S::one() } else { S::zero() }).collect();
    }
    let (lp, lq) = (pi.ln(), (S::one() - pi).ln());
    (0..=n)
        .map(|k| {
            let kk = S::from_count(k);
            let rest = S::from_count(n - k);
            (lnf[n] - lnf[k] - lnf[n - k] + kk * lp + rest * lq).exp()
        })
        .collect()
}

fn at_least_as_extreme<S: Scalar>(t: S, observed: S, alternative: Alternative) -> bool {
    // statistics equal up to rounding count as ties
    let tol = S::from_f64_lossy(1e-9);
    let close = |a: S, b: S| {
        a == b || (a.is_finite() && b.is_finite() && (a - b).abs() <= tol * (S::one() + a.abs().max(b.abs())))
    };
    match alternative {
        Alternative::Greater => t >= observed || close(t, observed),
        Alternative::Less => t <= observed || close(t, observed),
        Alternative::TwoSided => t.abs() >= observed.abs() || close(t.abs(), observed.abs()),
    }
}

/// One-sided (b > a) p-value on the default grid.
pub fn barnard_exact(table: &Table2x2) -> f64 {
    barnard_exact_with::<f64>(table, Alternative::Greater, DEFAULT_GRID_STEP)
}

pub fn barnard_exact_with<S: Scalar>(table: &Table2x2, alternative: Alternative, grid_step: f64) -> S {
    let (na, nb) = (table.trials_a as usize, table.trials_b as usize);
    let observed: S = wald_statistic(table.successes_a, table.trials_a, table.successes_b, table.trials_b);
    let extreme: Vec<Vec<bool>> = (0..=na)
        .map(|i| {
            (0..=nb)
                .map(|j| {
                    let t: S = wald_statistic(i as u32, table.trials_a, j as u32, table.trials_b);
                    at_least_as_extreme(t, observed, alternative)
                })
                .collect()
        })
        .collect();
    let lnf = ln_factorials::<S>(na.max(nb));
    let steps = (1.0 / grid_step).round() as usize;
    let mut best = S::zero();
    for g in 0..=steps {
        let pi = S::from_count(g) / S::from_count(steps);
        let pa = pmf(na, pi, &lnf);
        let pb = pmf(nb, pi, &lnf);
        let mut total = S::zero();
        for (i, row) in extreme.iter().enumerate() {
            let mut inner = S::zero();
            for (j, &hit) in row.iter().enumerate() {
                if hit {
                    inner += pb[j];
                }
            }
            total += pa[i] * inner;
        }
        if total > best {
            best = total;
        }
    }
    best.min(S::one())
}
