//! Projected (sub)gradient descent on the robust and smoothed objectives,
//! plus the brute-force optimal-policy oracle used as ground truth in tests.

use serde::{Deserialize, Serialize};

use crate::constants::{compute_constants, ConstantInputs};
use crate::dp::{solve_value_table, EvalMode};
use crate::error::{Error, Result};
use crate::grad::{
    grad_j_sigma_with_measure, objective, psi_with_measure, GradientEstimate, ObjectiveSpec,
};
use crate::mdp::TabularMdp;
use crate::policy::{DirectPolicy, PolicyHandle};
use crate::simplex::project_rows_in_place;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum StepSchedule {
    Constant(f64),
    /// alpha = 1 / L_sigma from the computed smoothness constant.
    OneOverL,
    /// alpha = 1 / (2 L_sigma), the safe step from the convergence analysis.
    HalfOverL,
    /// alpha_t = a / (t + 1); square-summable but not summable.
    Harmonic(f64),
}

impl StepSchedule {
    pub fn step(&self, t: usize, l_sigma: Option<f64>) -> Result<f64> {
        let alpha = match self {
            StepSchedule::Constant(a) => *a,
            StepSchedule::OneOverL => {
                1.0 / l_sigma.ok_or_else(|| {
                    Error::InvalidParameter("schedule needs L_sigma (set sigma)".into())
                })?
            }
            StepSchedule::HalfOverL => {
                0.5 / l_sigma.ok_or_else(|| {
                    Error::InvalidParameter("schedule needs L_sigma (set sigma)".into())
                })?
            }
            StepSchedule::Harmonic(a) => a / (t as f64 + 1.0),
        };
        if !(alpha > 0.0) {
            return Err(Error::InvalidParameter(format!("nonpositive step {alpha}")));
        }
        Ok(alpha)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iterations: usize,
    pub schedule: StepSchedule,
    pub sigma: Option<f64>,
    pub seed: u64,
    /// Store theta every this many iterations; 0 disables snapshots.
    pub snapshot_period: usize,
    /// Also evaluate the nominal objective each iteration (extra solve).
    pub record_nominal: bool,
}

impl TrainConfig {
    pub fn new(iterations: usize, schedule: StepSchedule) -> Self {
        TrainConfig {
            iterations,
            schedule,
            sigma: None,
            seed: 0,
            snapshot_period: 0,
            record_nominal: false,
        }
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = Some(sigma);
        self
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: usize,
    pub j_robust: f64,
    pub j_sigma: Option<f64>,
    pub j_nominal: Option<f64>,
    pub grad_norm: f64,
    pub gradient_mapping_norm: f64,
    pub wall_time: f64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct TrainTrace {
    pub rows: Vec<TraceRow>,
    /// (iteration, theta) pairs taken every snapshot period.
    pub snapshots: Vec<(usize, Vec<Vec<f64>>)>,
}

impl TrainTrace {
    pub fn best_j_robust(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| r.j_robust)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn final_j_robust(&self) -> f64 {
        self.rows.last().map_or(f64::NAN, |r| r.j_robust)
    }

    /// Running minimum of J_robust; nonincreasing by construction.
    pub fn min_so_far(&self) -> Vec<f64> {
        let mut best = f64::INFINITY;
        self.rows
            .iter()
            .map(|r| {
                best = best.min(r.j_robust);
                best
            })
            .collect()
    }
}

/// Projected-step residual G^alpha(theta) = (theta - Proj(theta - alpha g)) / alpha.
pub fn gradient_mapping(
    policy: &DirectPolicy,
    grad: &GradientEstimate,
    alpha: f64,
) -> Result<Vec<f64>> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidParameter(format!("alpha must be positive, got {alpha}")));
    }
    let theta = policy.params();
    let mut stepped: Vec<f64> = theta
        .iter()
        .zip(&grad.vector)
        .map(|(x, g)| x - alpha * g)
        .collect();
    project_rows_in_place(&mut stepped, policy.num_actions())?;
    Ok(theta
        .iter()
        .zip(&stepped)
        .map(|(x, p)| (x - p) / alpha)
        .collect())
}

fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn l_sigma_for(mdp: &TabularMdp, spec: &ObjectiveSpec, sigma: Option<f64>) -> Option<f64> {
    let sigma = sigma?;
    let inputs = ConstantInputs {
        k_pi: 1.0,
        l_pi: 0.0,
        mu_min: spec.mu_min(),
        gamma: mdp.gamma,
        radius: mdp.radius,
        sigma,
        num_states: mdp.num_states,
        num_actions: mdp.num_actions,
        eps_est: 0.0,
    };
    compute_constants(&inputs).ok().map(|c| c.l_sigma)
}

fn run_projected_descent<G>(
    mdp: &TabularMdp,
    init: &DirectPolicy,
    spec: &ObjectiveSpec,
    config: &TrainConfig,
    mut gradient: G,
) -> Result<(DirectPolicy, TrainTrace)>
where
    G: FnMut(&PolicyHandle) -> Result<GradientEstimate>,
{
    let start = std::time::Instant::now();
    let l_sigma = l_sigma_for(mdp, spec, config.sigma);
    let mut handle = PolicyHandle::Direct(init.clone());
    let mut trace = TrainTrace::default();

    for t in 0..=config.iterations {
        let grad = gradient(&handle)?;
        let direct = handle.as_direct().unwrap();
        let alpha = config.schedule.step(t, l_sigma)?;
        let mapping = gradient_mapping(direct, &grad, alpha)?;

        let j_robust = objective(mdp, &handle, spec, EvalMode::Robust)?;
        let j_sigma = match config.sigma {
            Some(s) => Some(objective(mdp, &handle, spec, EvalMode::Smoothed(s))?),
            None => None,
        };
        let j_nominal = if config.record_nominal {
            Some(objective(mdp, &handle, spec, EvalMode::Nominal)?)
        } else {
            None
        };
        trace.rows.push(TraceRow {
            t,
            j_robust,
            j_sigma,
            j_nominal,
            grad_norm: l2_norm(&grad.vector),
            gradient_mapping_norm: l2_norm(&mapping),
            wall_time: start.elapsed().as_secs_f64(),
        });
        if config.snapshot_period > 0 && t % config.snapshot_period == 0 {
            trace.snapshots.push((t, direct.table.clone()));
        }

        if t == config.iterations {
            break;
        }
        let mut theta = handle.params();
        for (x, g) in theta.iter_mut().zip(&grad.vector) {
            *x -= alpha * g;
        }
        project_rows_in_place(&mut theta, mdp.num_actions)?;
        handle.set_params(&theta);
    }

    Ok((handle.as_direct().unwrap().clone(), trace))
}

/// Algorithm: theta <- Proj(theta - alpha_t psi_mu(theta)), T iterations.
pub fn run_rpg(
    mdp: &TabularMdp,
    init: &DirectPolicy,
    spec: &ObjectiveSpec,
    config: &TrainConfig,
) -> Result<(DirectPolicy, TrainTrace)> {
    run_projected_descent(mdp, init, spec, config, |h| psi_with_measure(mdp, h, &spec.mu))
}

/// Smoothed variant: descend the exact gradient of J_sigma,mu.
pub fn run_srpg(
    mdp: &TabularMdp,
    init: &DirectPolicy,
    spec: &ObjectiveSpec,
    config: &TrainConfig,
) -> Result<(DirectPolicy, TrainTrace)> {
    let sigma = config
        .sigma
        .ok_or_else(|| Error::InvalidParameter("run_srpg requires sigma".into()))?;
    run_projected_descent(mdp, init, spec, config, |h| {
        grad_j_sigma_with_measure(mdp, h, &spec.mu, sigma)
    })
}

/// Exhaustive search over deterministic policies. Valid as an optimality
/// oracle because rectangular robust MDPs admit deterministic optima.
pub fn brute_force_optimum(
    mdp: &TabularMdp,
    spec: &ObjectiveSpec,
    mode: EvalMode,
) -> Result<(DirectPolicy, f64)> {
    let count = (mdp.num_actions as f64).powi(mdp.num_states as i32);
    if count > 4096.0 {
        return Err(Error::TooLarge(format!(
            "brute force needs |A|^|S| <= 4096, got {count}"
        )));
    }
    let total = count as usize;
    let mut best_j = f64::INFINITY;
    let mut best_actions = vec![0usize; mdp.num_states];
    let mut actions = vec![0usize; mdp.num_states];
    for idx in 0..total {
        let mut k = idx;
        for slot in actions.iter_mut() {
            *slot = k % mdp.num_actions;
            k /= mdp.num_actions;
        }
        let pi = DirectPolicy::deterministic(&actions, mdp.num_actions);
        let (v, _) = solve_value_table(mdp, &pi.table, mode, 1e-10, false)?;
        let j: f64 = spec.rho.iter().zip(&v.values).map(|(r, x)| r * x).sum();
        // Strict improvement keeps the first enumerated policy on ties.
        if j < best_j {
            best_j = j;
            best_actions.copy_from_slice(&actions);
        }
    }
    Ok((
        DirectPolicy::deterministic(&best_actions, mdp.num_actions),
        best_j,
    ))
}
