//! Exact robust dynamic programming for R-contamination uncertainty sets.
//!
//! The robust Bellman backup of a policy replaces the next-state expectation
//! with the support function of the contamination set,
//!
//!   (T_pi V)(s) = sum_a pi(a|s) ( c(s,a) + gamma ((1-R) p.V + R max V) ),
//!
//! a gamma-contraction whose fixed point is the robust value function. The
//! smoothed variant replaces `max` with the LogSumExp operator.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::mdp::TabularMdp;
use crate::policy::PolicyHandle;

/// Per-state values V(s).
#[derive(Clone, Debug, PartialEq)]
pub struct ValueTable {
    pub values: Vec<f64>,
}

impl ValueTable {
    pub fn zeros(num_states: usize) -> Self {
        ValueTable {
            values: vec![0.0; num_states],
        }
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Per-state-action values Q(s, a).
#[derive(Clone, Debug, PartialEq)]
pub struct QTable {
    pub values: Vec<Vec<f64>>,
}

impl QTable {
    pub fn zeros(num_states: usize, num_actions: usize) -> Self {
        QTable {
            values: vec![vec![0.0; num_actions]; num_states],
        }
    }

    /// V(s) = sum_a pi(a|s) Q(s,a).
    pub fn value_under(&self, pi: &[Vec<f64>]) -> ValueTable {
        ValueTable {
            values: self
                .values
                .iter()
                .zip(pi)
                .map(|(q, p)| q.iter().zip(p).map(|(qa, pa)| qa * pa).sum())
                .collect(),
        }
    }
}

/// Which Bellman operator a policy evaluation uses.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EvalMode {
    /// Standard expectation backup; the contamination radius is ignored.
    Nominal,
    /// Worst-case backup with the `max V` contamination term.
    Robust,
    /// `max` replaced by LSE(sigma, .).
    Smoothed(f64),
}

impl EvalMode {
    fn sigma(&self) -> Option<f64> {
        match self {
            EvalMode::Smoothed(s) => Some(*s),
            _ => None,
        }
    }

    fn validate(&self) -> Result<()> {
        if let EvalMode::Smoothed(s) = self {
            if !(*s > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "sigma must be positive, got {s}"
                )));
            }
        }
        Ok(())
    }
}

/// Support function of the R-contamination set around `p`, evaluated at V:
/// (1-R) p.V + R max V.
pub fn support_function(p: &[f64], v: &[f64], radius: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&radius) {
        return Err(Error::InvalidParameter(format!(
            "radius must lie in [0, 1], got {radius}"
        )));
    }
    if p.len() != v.len() {
        return Err(Error::InvalidParameter("p and V length mismatch".into()));
    }
    let expectation: f64 = p.iter().zip(v).map(|(pi, vi)| pi * vi).sum();
    let vmax = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok((1.0 - radius) * expectation + radius * vmax)
}

/// LSE(sigma, V) = log(sum_i exp(sigma V_i)) / sigma, evaluated max-shifted
/// so it stays finite for arbitrarily large sigma.
pub fn lse(sigma: f64, v: &[f64]) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    if v.is_empty() {
        return Err(Error::InvalidParameter("empty vector in LSE".into()));
    }
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = v.iter().map(|&x| (sigma * (x - m)).exp()).sum();
    Ok(m + sum.ln() / sigma)
}

/// Softmax weights exp(sigma V_i) / sum_j exp(sigma V_j), max-shifted.
pub fn softmax_weights(sigma: f64, v: &[f64]) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|&x| (sigma * (x - m)).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Lowest-index argmax; the tie-break rule used everywhere in this crate.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn contamination_term(mdp: &TabularMdp, v: &[f64], mode: EvalMode) -> Result<f64> {
    Ok(match mode {
        EvalMode::Nominal => 0.0,
        EvalMode::Robust => mdp.radius * v.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        EvalMode::Smoothed(sigma) => mdp.radius * lse(sigma, v)?,
    })
}

fn transition_weight(mdp: &TabularMdp, mode: EvalMode) -> f64 {
    match mode {
        EvalMode::Nominal => 1.0,
        _ => 1.0 - mdp.radius,
    }
}

fn bellman_backup(
    mdp: &TabularMdp,
    pi: &[Vec<f64>],
    v: &[f64],
    mode: EvalMode,
    cost_shift: f64,
) -> Result<Vec<f64>> {
    if v.len() != mdp.num_states || pi.len() != mdp.num_states {
        return Err(Error::InvalidParameter("shape mismatch in Bellman backup".into()));
    }
    let tail = contamination_term(mdp, v, mode)?;
    let w = transition_weight(mdp, mode);
    let mut out = vec![0.0; mdp.num_states];
    for s in 0..mdp.num_states {
        let mut acc = 0.0;
        for a in 0..mdp.num_actions {
            let pv: f64 = mdp.kernel[s][a].iter().zip(v).map(|(p, x)| p * x).sum();
            acc += pi[s][a] * (mdp.cost[s][a] + cost_shift + mdp.gamma * (w * pv + tail));
        }
        out[s] = acc;
    }
    Ok(out)
}

fn q_backup(
    mdp: &TabularMdp,
    v: &[f64],
    mode: EvalMode,
    cost_shift: f64,
) -> Result<QTable> {
    let tail = contamination_term(mdp, v, mode)?;
    let w = transition_weight(mdp, mode);
    let mut q = QTable::zeros(mdp.num_states, mdp.num_actions);
    for s in 0..mdp.num_states {
        for a in 0..mdp.num_actions {
            let pv: f64 = mdp.kernel[s][a].iter().zip(v).map(|(p, x)| p * x).sum();
            q.values[s][a] = mdp.cost[s][a] + cost_shift + mdp.gamma * (w * pv + tail);
        }
    }
    Ok(q)
}

/// One application of the robust Bellman operator T_pi.
pub fn robust_bellman_apply(
    mdp: &TabularMdp,
    policy: &PolicyHandle,
    v: &ValueTable,
) -> Result<ValueTable> {
    let pi = policy.prob_table(mdp.num_states);
    Ok(ValueTable {
        values: bellman_backup(mdp, &pi, &v.values, EvalMode::Robust, 0.0)?,
    })
}

/// One application of the smoothed robust Bellman operator.
pub fn smoothed_bellman_apply(
    mdp: &TabularMdp,
    policy: &PolicyHandle,
    v: &ValueTable,
    sigma: f64,
) -> Result<ValueTable> {
    EvalMode::Smoothed(sigma).validate()?;
    let pi = policy.prob_table(mdp.num_states);
    Ok(ValueTable {
        values: bellman_backup(mdp, &pi, &v.values, EvalMode::Smoothed(sigma), 0.0)?,
    })
}

/// Fixed-point policy evaluation from V = 0.
///
/// Stops once the sup-norm step falls below `tol (1-gamma)/gamma`, which
/// guarantees `||V - V*||_inf <= tol`. Q is filled by one backup from the
/// converged V.
pub fn solve_value(
    mdp: &TabularMdp,
    policy: &PolicyHandle,
    mode: EvalMode,
    tol: f64,
) -> Result<(ValueTable, QTable)> {
    solve_value_opts(mdp, policy, mode, tol, false)
}

/// As [`solve_value`], optionally applying the nonnegativity cost shift
/// c'(s,a) = c(s,a) + gamma R log|S| / sigma in smoothed mode.
pub fn solve_value_opts(
    mdp: &TabularMdp,
    policy: &PolicyHandle,
    mode: EvalMode,
    tol: f64,
    cost_shift: bool,
) -> Result<(ValueTable, QTable)> {
    let pi = policy.prob_table(mdp.num_states);
    solve_value_table(mdp, &pi, mode, tol, cost_shift)
}

/// Policy-evaluation entry point on an explicit probability table.
pub fn solve_value_table(
    mdp: &TabularMdp,
    pi: &[Vec<f64>],
    mode: EvalMode,
    tol: f64,
    cost_shift: bool,
) -> Result<(ValueTable, QTable)> {
    mode.validate()?;
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tol must be positive, got {tol}")));
    }
    let shift = if cost_shift {
        match mode.sigma() {
            Some(sigma) => mdp.gamma * mdp.radius * (mdp.num_states as f64).ln() / sigma,
            None => 0.0,
        }
    } else {
        0.0
    };

    let gamma = mdp.gamma;
    let stop = if gamma > 0.0 {
        tol * (1.0 - gamma) / gamma
    } else {
        tol
    };
    // A-priori contraction bound on the iteration count, plus margin.
    let cap = if gamma > 0.0 {
        ((tol * (1.0 - gamma)).ln() / gamma.ln()).ceil().max(1.0) as usize + 64
    } else {
        4
    };

    let mut v = vec![0.0; mdp.num_states];
    let mut residual = f64::INFINITY;
    for _ in 0..cap {
        let next = bellman_backup(mdp, pi, &v, mode, shift)?;
        residual = next
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        v = next;
        if residual <= stop {
            let q = q_backup(mdp, &v, mode, shift)?;
            return Ok((ValueTable { values: v }, q));
        }
    }
    Err(Error::NoConvergence {
        max_iters: cap,
        residual,
    })
}

/// Start of a visitation computation: a single state or a distribution.
#[derive(Clone, Debug)]
pub enum Start<'a> {
    State(usize),
    Dist(&'a [f64]),
}

fn start_vector(start: &Start, num_states: usize) -> Vec<f64> {
    match start {
        Start::State(s) => {
            let mut e = vec![0.0; num_states];
            e[*s] = 1.0;
            e
        }
        Start::Dist(d) => d.to_vec(),
    }
}

fn policy_transition_matrix(mdp: &TabularMdp, pi: &[Vec<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(mdp.num_states, mdp.num_states, |s, sp| {
        (0..mdp.num_actions)
            .map(|a| pi[s][a] * mdp.kernel[s][a][sp])
            .sum()
    })
}

/// Discounted visitation distribution
/// d_s(s') = (1-gamma+gamma R) sum_t (gamma(1-R))^t P(S_t = s' | S_0 ~ start),
/// computed exactly by a linear solve.
pub fn visitation_distribution(
    mdp: &TabularMdp,
    policy: &PolicyHandle,
    start: Start,
) -> Result<Vec<f64>> {
    let pi = policy.prob_table(mdp.num_states);
    visitation_table(mdp, &pi, start)
}

pub fn visitation_table(mdp: &TabularMdp, pi: &[Vec<f64>], start: Start) -> Result<Vec<f64>> {
    let n = mdp.num_states;
    let decay = mdp.gamma * (1.0 - mdp.radius);
    let p = policy_transition_matrix(mdp, pi);
    // d = (1-decay) e + decay P^T d
    let system = DMatrix::identity(n, n) - p.transpose() * decay;
    let rhs = DVector::from_vec(start_vector(&start, n)) * (1.0 - decay);
    let d = system
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numeric("singular visitation system".into()))?;
    Ok(d.iter().cloned().collect())
}

/// Visitation distributions from every start state at once (one LU
/// factorization, |S| solves). Row s is d_s.
pub fn visitation_all_states(mdp: &TabularMdp, pi: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = mdp.num_states;
    let decay = mdp.gamma * (1.0 - mdp.radius);
    let p = policy_transition_matrix(mdp, pi);
    let system = DMatrix::identity(n, n) - p.transpose() * decay;
    let lu = system.lu();
    let mut rows = Vec::with_capacity(n);
    for s in 0..n {
        let mut e = DVector::zeros(n);
        e[s] = 1.0 - decay;
        let d = lu
            .solve(&e)
            .ok_or_else(|| Error::Numeric("singular visitation system".into()))?;
        rows.push(d.iter().cloned().collect());
    }
    Ok(rows)
}

/// Stationary worst-case model: each kernel row becomes
/// (1-R) p + R e_{s*} with s* the (lowest-index) argmax of V.
pub fn worst_case_kernel(mdp: &TabularMdp, v: &ValueTable) -> Result<TabularMdp> {
    if v.values.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("non-finite value table".into()));
    }
    let s_star = argmax(&v.values);
    let mut out = mdp.clone();
    for s in 0..mdp.num_states {
        for a in 0..mdp.num_actions {
            for sp in 0..mdp.num_states {
                out.kernel[s][a][sp] *= 1.0 - mdp.radius;
            }
            out.kernel[s][a][s_star] += mdp.radius;
        }
    }
    Ok(out)
}
