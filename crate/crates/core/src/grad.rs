//! Robust policy (sub)gradients.
//!
//! `psi_subgradient` evaluates the exact robust sub-gradient
//!
//!   psi_rho(theta) = gamma R / ((1-gamma)(1-gamma+gamma R)) *
//!                      sum_s d_{s*}(s) sum_a grad pi(a|s) Q(s,a)
//!                  + 1 / (1-gamma+gamma R) *
//!                      sum_s d_rho(s) sum_a grad pi(a|s) Q(s,a),
//!
//! with s* the argmax of the robust value function. `grad_j_sigma` evaluates
//! the gradient of the smoothed objective, which replaces the argmax point
//! mass by softmax(sigma, V_sigma) weights.

use crate::dp::{
    argmax, solve_value, softmax_weights, visitation_all_states, visitation_table, EvalMode,
    Start,
};
use crate::error::{Error, Result};
use crate::mdp::TabularMdp;
use crate::policy::PolicyHandle;

/// Solver tolerance used for all exact gradient/objective evaluations. Tight
/// enough that finite-difference probes at h = 1e-6 are not polluted by
/// fixed-point error.
pub const VALUE_TOL: f64 = 1e-11;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradKind {
    SubGradient,
    Smoothed,
    MonteCarlo,
}

/// A flat parameter-space gradient vector with its provenance.
#[derive(Clone, Debug)]
pub struct GradientEstimate {
    pub vector: Vec<f64>,
    pub kind: GradKind,
}

/// Performance measure rho and exploratory optimization measure mu.
#[derive(Clone, Debug)]
pub struct ObjectiveSpec {
    pub rho: Vec<f64>,
    pub mu: Vec<f64>,
}

impl ObjectiveSpec {
    pub fn new(rho: Vec<f64>, mu: Vec<f64>) -> Result<Self> {
        for (name, d) in [("rho", &rho), ("mu", &mu)] {
            let sum: f64 = d.iter().sum();
            if d.is_empty() || d.iter().any(|&p| !(0.0..=1.0).contains(&p)) || (sum - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidParameter(format!("{name} is not a distribution")));
            }
        }
        if mu.iter().cloned().fold(f64::INFINITY, f64::min) <= 0.0 {
            return Err(Error::InvalidParameter("mu must have full support".into()));
        }
        Ok(ObjectiveSpec { rho, mu })
    }

    /// Uniform rho = mu over `num_states` states.
    pub fn uniform(num_states: usize) -> Self {
        let u = vec![1.0 / num_states as f64; num_states];
        ObjectiveSpec { rho: u.clone(), mu: u }
    }

    pub fn mu_min(&self) -> f64 {
        self.mu.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

/// J = sum_s rho(s) V(s) under the requested Bellman operator.
pub fn objective(
    mdp: &TabularMdp,
    policy: &PolicyHandle,
    spec: &ObjectiveSpec,
    mode: EvalMode,
) -> Result<f64> {
    let (v, _) = solve_value(mdp, policy, mode, VALUE_TOL)?;
    Ok(spec.rho.iter().zip(&v.values).map(|(r, x)| r * x).sum())
}

/// Accumulates g += w * sum_a Q(s,a) grad pi(a|s) for one state.
fn accumulate_state(
    policy: &PolicyHandle,
    s: usize,
    q_row: &[f64],
    w: f64,
    g: &mut [f64],
) {
    if w == 0.0 {
        return;
    }
    for (a, &qa) in q_row.iter().enumerate() {
        let grad = policy.grad(s, a);
        for (gi, di) in g.iter_mut().zip(&grad) {
            *gi += w * qa * di;
        }
    }
}

/// Robust sub-gradient with an explicit start measure (Eq. form above with
/// rho replaced by `measure`).
pub fn psi_with_measure(
    mdp: &TabularMdp,
    policy: &PolicyHandle,
    measure: &[f64],
) -> Result<GradientEstimate> {
    let n = mdp.num_states;
    let (v, q) = solve_value(mdp, policy, EvalMode::Robust, VALUE_TOL)?;
    let pi = policy.prob_table(n);
    let s_star = argmax(&v.values);
    let d_star = visitation_table(mdp, &pi, Start::State(s_star))?;
    let d_meas = visitation_table(mdp, &pi, Start::Dist(measure))?;

    let denom = 1.0 - mdp.gamma + mdp.gamma * mdp.radius;
    let c_star = mdp.gamma * mdp.radius / ((1.0 - mdp.gamma) * denom);
    let c_meas = 1.0 / denom;

    let mut g = vec![0.0; policy.param_dim()];
    for s in 0..n {
        let w = c_star * d_star[s] + c_meas * d_meas[s];
        accumulate_state(policy, s, &q.values[s], w, &mut g);
    }
    Ok(GradientEstimate {
        vector: g,
        kind: GradKind::SubGradient,
    })
}

/// The robust sub-gradient psi_rho(theta).
pub fn psi_subgradient(
    mdp: &TabularMdp,
    policy: &PolicyHandle,
    spec: &ObjectiveSpec,
) -> Result<GradientEstimate> {
    psi_with_measure(mdp, policy, &spec.rho)
}

/// Gradient of the smoothed objective with an explicit start measure.
pub fn grad_j_sigma_with_measure(
    mdp: &TabularMdp,
    policy: &PolicyHandle,
    measure: &[f64],
    sigma: f64,
) -> Result<GradientEstimate> {
    let n = mdp.num_states;
    let (v, q) = solve_value(mdp, policy, EvalMode::Smoothed(sigma), VALUE_TOL)?;
    let pi = policy.prob_table(n);
    let d_all = visitation_all_states(mdp, &pi)?;
    let soft = softmax_weights(sigma, &v.values);

    let denom = 1.0 - mdp.gamma + mdp.gamma * mdp.radius;
    let gr = mdp.gamma * mdp.radius / (1.0 - mdp.gamma);

    // Combined start weighting: measure + gr * softmax(sigma, V), pushed
    // through the visitation kernel once.
    let mut d_comb = vec![0.0; n];
    for s in 0..n {
        let w = measure[s] + gr * soft[s];
        if w == 0.0 {
            continue;
        }
        for sp in 0..n {
            d_comb[sp] += w * d_all[s][sp];
        }
    }

    let mut g = vec![0.0; policy.param_dim()];
    for sp in 0..n {
        accumulate_state(policy, sp, &q.values[sp], d_comb[sp] / denom, &mut g);
    }
    Ok(GradientEstimate {
        vector: g,
        kind: GradKind::Smoothed,
    })
}

/// Gradient of J_sigma(theta) (Theorem-form: B(rho) plus softmax-weighted
/// worst-start correction).
pub fn grad_j_sigma(
    mdp: &TabularMdp,
    policy: &PolicyHandle,
    spec: &ObjectiveSpec,
    sigma: f64,
) -> Result<GradientEstimate> {
    grad_j_sigma_with_measure(mdp, policy, &spec.rho, sigma)
}

/// PL residual check for the direct parameterization: returns
/// (lhs, rhs) with lhs = J_rho(theta) - j_star and rhs the gradient-dominance
/// upper bound using psi_mu (robust mode) or grad J_sigma,mu plus the sigma
/// slack (smoothed mode). The max over comparison policies decomposes per
/// state and is attained at a simplex vertex.
pub fn pl_residual(
    mdp: &TabularMdp,
    policy: &PolicyHandle,
    spec: &ObjectiveSpec,
    j_star: f64,
    mode: EvalMode,
) -> Result<(f64, f64)> {
    let direct = policy
        .as_direct()
        .ok_or_else(|| Error::Unsupported("pl_residual requires a direct policy".into()))?;
    let (grad, slack) = match mode {
        EvalMode::Robust => (psi_with_measure(mdp, policy, &spec.mu)?, 0.0),
        EvalMode::Smoothed(sigma) => (
            grad_j_sigma_with_measure(mdp, policy, &spec.mu, sigma)?,
            (mdp.gamma * mdp.radius / (1.0 - mdp.gamma))
                * 2.0
                * (mdp.num_states as f64).ln()
                / sigma,
        ),
        EvalMode::Nominal => {
            return Err(Error::Unsupported(
                "pl_residual is defined for robust and smoothed modes".into(),
            ))
        }
    };

    let lhs = objective(mdp, policy, spec, EvalMode::Robust)? - j_star;

    let c_pl = 1.0 / ((1.0 - mdp.gamma) * spec.mu_min());
    let a_count = mdp.num_actions;
    let mut gap = 0.0;
    for s in 0..mdp.num_states {
        let row = &grad.vector[s * a_count..(s + 1) * a_count];
        let inner: f64 = direct.table[s].iter().zip(row).map(|(p, g)| p * g).sum();
        let best = row.iter().cloned().fold(f64::INFINITY, f64::min);
        gap += inner - best;
    }
    Ok((lhs, c_pl * gap + slack))
}

/// Central finite differences of `f` at `theta`.
pub fn finite_diff_gradient<F: FnMut(&[f64]) -> Result<f64>>(
    mut f: F,
    theta: &[f64],
    h: f64,
) -> Result<Vec<f64>> {
    let mut probe = theta.to_vec();
    let mut g = vec![0.0; theta.len()];
    for i in 0..theta.len() {
        probe[i] = theta[i] + h;
        let fp = f(&probe)?;
        probe[i] = theta[i] - h;
        let fm = f(&probe)?;
        probe[i] = theta[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
    Ok(g)
}

/// Finite differences of an objective with respect to policy parameters.
pub fn finite_diff_objective(
    mdp: &TabularMdp,
    policy: &PolicyHandle,
    spec: &ObjectiveSpec,
    mode: EvalMode,
    h: f64,
) -> Result<Vec<f64>> {
    let theta = policy.params();
    let mut probe = policy.clone();
    finite_diff_gradient(
        |t| {
            probe.set_params(t);
            objective(mdp, &probe, spec, mode)
        },
        &theta,
        h,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::garnet_generate;
    use crate::policy::DirectPolicy;
    use crate::rng::Streams;
    use rand::Rng;

    fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
        let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let n: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
        d / n.max(1e-12)
    }

    fn random_interior_policy<R: Rng>(n: usize, a: usize, rng: &mut R) -> PolicyHandle {
        let mut table = vec![vec![0.0; a]; n];
        for row in &mut table {
            let mut total = 0.0;
            for x in row.iter_mut() {
                *x = 0.1 + rng.random::<f64>();
                total += *x;
            }
            for x in row.iter_mut() {
                *x /= total;
            }
        }
        PolicyHandle::Direct(DirectPolicy::from_table(table).unwrap())
    }

    #[test]
    fn objective_single_state_closed_form() {
        let mdp = TabularMdp::new(0.9, 0.3, vec![vec![0.5]], vec![vec![vec![1.0]]]).unwrap();
        let policy = PolicyHandle::Direct(DirectPolicy::uniform(1, 1));
        let spec = ObjectiveSpec::uniform(1);
        for mode in [EvalMode::Nominal, EvalMode::Robust, EvalMode::Smoothed(7.0)] {
            let j = objective(&mdp, &policy, &spec, mode).unwrap();
            assert!((j - 5.0).abs() < 1e-8, "{mode:?}");
        }
    }

    #[test]
    fn objective_averages_values() {
        // Two absorbing states, costs 0.1 and 0.3: V = [1, 3], uniform rho -> 2.
        let mdp = TabularMdp::new(
            0.9,
            0.0,
            vec![vec![0.1], vec![0.3]],
            vec![vec![vec![1.0, 0.0]], vec![vec![0.0, 1.0]]],
        )
        .unwrap();
        let policy = PolicyHandle::Direct(DirectPolicy::uniform(2, 1));
        let spec = ObjectiveSpec::uniform(2);
        let j = objective(&mdp, &policy, &spec, EvalMode::Robust).unwrap();
        assert!((j - 2.0).abs() < 1e-8);
        // Point-mass rho picks out a single value.
        let point = ObjectiveSpec::new(vec![0.0, 1.0], vec![0.5, 0.5]).unwrap();
        let jp = objective(&mdp, &policy, &point, EvalMode::Robust).unwrap();
        assert!((jp - 3.0).abs() < 1e-8);
    }

    #[test]
    fn psi_entries_nonnegative_direct() {
        let mut rng = Streams::new(31).stream(&[0]);
        let mdp = garnet_generate(4, 3, 4, 0.9, 0.2, &mut rng).unwrap();
        let policy = random_interior_policy(4, 3, &mut rng);
        let spec = ObjectiveSpec::uniform(4);
        let psi = psi_subgradient(&mdp, &policy, &spec).unwrap();
        assert!(psi.vector.iter().all(|&g| g >= 0.0));
    }

    #[test]
    fn psi_matches_finite_differences_interior() {
        let streams = Streams::new(44);
        let mut hits = 0;
        let mut tries = 0;
        for k in 0..8u64 {
            let mut rng = streams.stream(&[k]);
            let mdp = garnet_generate(3, 2, 3, 0.9, 0.15, &mut rng).unwrap();
            let policy = random_interior_policy(3, 2, &mut rng);
            let spec = ObjectiveSpec::uniform(3);
            let psi = psi_subgradient(&mdp, &policy, &spec).unwrap();
            let fd =
                finite_diff_objective(&mdp, &policy, &spec, EvalMode::Robust, 1e-6).unwrap();
            tries += 1;
            if rel_l2(&psi.vector, &fd) < 1e-3 {
                hits += 1;
            }
        }
        // J is differentiable only a.e.; the occasional nonsmooth draw is fine.
        assert!(hits >= tries - 1, "only {hits}/{tries} matched");
    }

    #[test]
    fn grad_j_sigma_matches_finite_differences() {
        let streams = Streams::new(45);
        for (k, sigma) in [(0u64, 1.0), (1, 10.0), (2, 100.0)] {
            let mut rng = streams.stream(&[k]);
            let mdp = garnet_generate(3, 2, 3, 0.9, 0.2, &mut rng).unwrap();
            let policy = random_interior_policy(3, 2, &mut rng);
            let spec = ObjectiveSpec::uniform(3);
            let g = grad_j_sigma(&mdp, &policy, &spec, sigma).unwrap();
            let fd = finite_diff_objective(&mdp, &policy, &spec, EvalMode::Smoothed(sigma), 1e-6)
                .unwrap();
            assert!(rel_l2(&g.vector, &fd) < 1e-5, "sigma {sigma}");
        }
    }

    #[test]
    fn grad_j_sigma_single_state_closed_form() {
        // |S| = 1: J = sum_a pi(a) c(a) / (1 - gamma s) at s = sum pi, so the
        // partial derivative at the simplex point is (c_a + gamma V)/(1-gamma).
        let mdp = TabularMdp::new(
            0.9,
            0.4,
            vec![vec![0.2, 0.8]],
            vec![vec![vec![1.0], vec![1.0]]],
        )
        .unwrap();
        let policy = PolicyHandle::Direct(DirectPolicy::uniform(1, 2));
        let spec = ObjectiveSpec::uniform(1);
        let g = grad_j_sigma(&mdp, &policy, &spec, 10.0).unwrap();
        let v = 0.5 / (1.0 - 0.9);
        for (a, &c) in [0.2, 0.8].iter().enumerate() {
            let expect = (c + 0.9 * v) / (1.0 - 0.9);
            assert!((g.vector[a] - expect).abs() < 1e-7, "action {a}");
        }
    }

    #[test]
    fn r_zero_gradient_is_sigma_free_and_matches_psi() {
        let mut rng = Streams::new(46).stream(&[0]);
        let mdp = garnet_generate(4, 2, 4, 0.9, 0.0, &mut rng).unwrap();
        let policy = random_interior_policy(4, 2, &mut rng);
        let spec = ObjectiveSpec::uniform(4);
        let g1 = grad_j_sigma(&mdp, &policy, &spec, 1.0).unwrap();
        let g2 = grad_j_sigma(&mdp, &policy, &spec, 100.0).unwrap();
        let psi = psi_subgradient(&mdp, &policy, &spec).unwrap();
        for i in 0..g1.vector.len() {
            assert!((g1.vector[i] - g2.vector[i]).abs() < 1e-9);
            assert!((g1.vector[i] - psi.vector[i]).abs() < 1e-7);
        }
    }

    #[test]
    fn pl_residual_nonnegative_gap_at_random_policies() {
        // lhs <= rhs is the full PL check (needs j_star); here j_star = 0 is a
        // valid lower bound on J for nonnegative costs, so lhs is an
        // overestimate and the vertex-gap rhs must still be nonnegative.
        let mut rng = Streams::new(47).stream(&[0]);
        let mdp = garnet_generate(3, 2, 3, 0.9, 0.15, &mut rng).unwrap();
        let policy = random_interior_policy(3, 2, &mut rng);
        let spec = ObjectiveSpec::uniform(3);
        let (_, rhs) = pl_residual(&mdp, &policy, &spec, 0.0, EvalMode::Robust).unwrap();
        assert!(rhs >= 0.0);
        let (_, rhs_s) =
            pl_residual(&mdp, &policy, &spec, 0.0, EvalMode::Smoothed(10.0)).unwrap();
        assert!(rhs_s >= 0.0);
    }

    #[test]
    fn pl_residual_rejects_mlp() {
        let streams = Streams::new(48);
        let mut rng = streams.stream(&[0]);
        let mdp = garnet_generate(3, 2, 3, 0.9, 0.15, &mut rng).unwrap();
        let policy = PolicyHandle::Mlp(crate::policy::MlpPolicy::new(3, 5, 2, &mut rng));
        let spec = ObjectiveSpec::uniform(3);
        assert!(pl_residual(&mdp, &policy, &spec, 0.0, EvalMode::Robust).is_err());
    }

    #[test]
    fn finite_diff_quadratic_and_linear() {
        let g = finite_diff_gradient(
            |t| Ok(t.iter().map(|x| x * x).sum()),
            &[1.0, 2.0],
            1e-5,
        )
        .unwrap();
        assert!((g[0] - 2.0).abs() < 1e-8);
        assert!((g[1] - 4.0).abs() < 1e-8);
        let lin = finite_diff_gradient(|t| Ok(3.0 * t[0] - t[1]), &[0.3, -0.7], 0.1).unwrap();
        assert!((lin[0] - 3.0).abs() < 1e-12);
        assert!((lin[1] + 1.0).abs() < 1e-12);
    }
}
