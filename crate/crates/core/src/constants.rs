//! Closed-form smoothness, Lipschitz and gradient-dominance constants for
//! the robust objective, plus the smoothing schedule they induce.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Problem-level quantities the constants depend on.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ConstantInputs {
    /// Lipschitz constant of theta -> pi(.|s) (1 for the direct class).
    pub k_pi: f64,
    /// Smoothness constant of theta -> pi(.|s) (0 for the direct class).
    pub l_pi: f64,
    /// Minimum mass of the exploratory initial distribution mu.
    pub mu_min: f64,
    pub gamma: f64,
    pub radius: f64,
    pub sigma: f64,
    pub num_states: usize,
    pub num_actions: usize,
    /// Critic error level epsilon entering the bias/variance bounds.
    pub eps_est: f64,
}

/// The derived constants.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustConstants {
    /// Lipschitz constant of theta -> V^theta.
    pub l_v: f64,
    /// Gradient-dominance (PL) constant.
    pub c_pl: f64,
    /// Bound on the smoothed value function.
    pub c_sigma: f64,
    /// Lipschitz constant of theta -> V_sigma^theta.
    pub c_v_sigma: f64,
    /// Smoothness constant of the inner term B(s, theta).
    pub k_b: f64,
    /// Smoothness constant of the smoothed objective J_sigma.
    pub l_sigma: f64,
    /// Norm bound on inexact gradient estimates.
    pub c_g: f64,
    /// Bias bound on inexact gradient estimates.
    pub b_g: f64,
}

pub fn compute_constants(inp: &ConstantInputs) -> Result<RobustConstants> {
    let ConstantInputs {
        k_pi,
        l_pi,
        mu_min,
        gamma,
        radius,
        sigma,
        num_states,
        num_actions,
        eps_est,
    } = *inp;
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::InvalidParameter(format!("gamma must be in [0, 1), got {gamma}")));
    }
    if !(0.0..=1.0).contains(&radius) {
        return Err(Error::InvalidParameter(format!("radius must be in [0, 1], got {radius}")));
    }
    if !(sigma > 0.0) {
        return Err(Error::InvalidParameter(format!("sigma must be positive, got {sigma}")));
    }
    if !(mu_min > 0.0) {
        return Err(Error::InvalidParameter(format!("mu_min must be positive, got {mu_min}")));
    }

    let s = num_states as f64;
    let a = num_actions as f64;
    let log_s = s.ln();
    let one_m_g = 1.0 - gamma;
    let denom = 1.0 - gamma + gamma * radius;
    let gr = gamma * radius / one_m_g;
    let eps = eps_est;

    let l_v = k_pi * a / (one_m_g * one_m_g);
    let c_pl = 1.0 / (one_m_g * mu_min);
    let c_sigma = (1.0 + 2.0 * gamma * radius * log_s / sigma) / one_m_g;
    let c_v_sigma = a * k_pi * c_sigma / one_m_g;
    let k_b = (a * c_sigma * l_pi + a * k_pi * c_v_sigma) / denom
        + 2.0 * a * a * gamma * (1.0 - radius) * k_pi * k_pi * c_sigma / (denom * denom);
    let l_sigma = k_b
        + gr * (s.sqrt() * k_b + 2.0 * sigma * s * c_v_sigma * k_pi * a * c_sigma / denom);
    let b_g = 2.0 * sigma * eps * (sigma * eps).exp() * gr * a * (eps + c_sigma) / denom
        + gr * a * eps / denom
        + a * eps / denom;
    let c_g = (gr + 1.0) * a * (c_sigma + eps) / denom;

    Ok(RobustConstants {
        l_v,
        c_pl,
        c_sigma,
        c_v_sigma,
        k_b,
        l_sigma,
        c_g,
        b_g,
    })
}

/// Smoothing parameter ensuring the smoothed/robust objective gap stays
/// within eps/2: sigma = 2 gamma R log|S| / (eps (1-gamma)).
pub fn sigma_for_accuracy(gamma: f64, radius: f64, num_states: usize, eps: f64) -> f64 {
    2.0 * gamma * radius * (num_states as f64).ln() / (eps * (1.0 - gamma))
}

/// Iteration budget from the global convergence schedule:
/// T = 64 |S| C_PL^2 L_sigma C_sigma / eps^2.
pub fn iteration_budget(consts: &RobustConstants, num_states: usize, eps: f64) -> f64 {
    64.0 * num_states as f64 * consts.c_pl * consts.c_pl * consts.l_sigma * consts.c_sigma
        / (eps * eps)
}
