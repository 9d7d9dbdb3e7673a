//! Robust actor-critic: Monte-Carlo gradient estimation with
//! geometric-horizon rollouts on the centroid kernel, fed by a robust-TD (or
//! exact, in test mode) critic, with projected actor updates.

use rand::Rng;

use crate::constants::{compute_constants, ConstantInputs};
use crate::dp::{argmax, softmax_weights, solve_value, EvalMode, QTable};
use crate::error::{Error, Result};
use crate::grad::{objective, ObjectiveSpec};
use crate::mdp::TabularMdp;
use crate::optim::{gradient_mapping, StepSchedule, TraceRow, TrainTrace};
use crate::policy::PolicyHandle;
use crate::rng::Streams;
use crate::simplex::project_rows_in_place;
use crate::td::{robust_td_tabular, sample_index, sample_transition, TdSchedule};

/// Draw from P(T = k) = (1-gamma+gamma R)(gamma-gamma R)^k, k >= 0, by
/// inversion. The terminal state of a T-step on-policy rollout is then
/// distributed as the discounted visitation distribution of its start.
pub fn sample_geometric_horizon<R: Rng>(gamma: f64, radius: f64, rng: &mut R) -> usize {
    let fail = gamma * (1.0 - radius);
    if fail <= 0.0 {
        return 0;
    }
    let u: f64 = rng.random();
    ((1.0 - u).ln() / fail.ln()).floor() as usize
}

/// How the worst-start (D) rollout picks its initial state.
#[derive(Clone, Copy, Debug)]
pub enum DStart {
    /// Lowest-index argmax of V_t.
    ArgMax,
    /// x0 ~ softmax(sigma, V_t), max-shifted.
    Softmax(f64),
}

/// Critic used inside the actor loop.
#[derive(Clone, Copy, Debug)]
pub enum CriticMode {
    /// Test mode: Q_t from the exact fixed point.
    Exact,
    /// Tabular robust TD for `steps` transitions per outer iteration.
    Td { steps: usize, schedule: TdSchedule },
}

#[derive(Clone, Debug)]
pub struct AcConfig {
    pub outer_iters: usize,
    pub rollouts: usize,
    pub critic: CriticMode,
    pub sigma: Option<f64>,
    pub schedule: StepSchedule,
    pub seed: u64,
    pub snapshot_period: usize,
}

impl AcConfig {
    pub fn new(outer_iters: usize, rollouts: usize, critic: CriticMode) -> Self {
        AcConfig {
            outer_iters,
            rollouts,
            critic,
            sigma: None,
            schedule: StepSchedule::Harmonic(1.0),
            seed: 0,
            snapshot_period: 0,
        }
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = Some(sigma);
        self
    }
}

fn rollout_terminal<R: Rng>(
    mdp: &TabularMdp,
    pi: &[Vec<f64>],
    start: usize,
    horizon: usize,
    rng: &mut R,
) -> usize {
    let mut s = start;
    for _ in 0..horizon {
        let a = sample_index(&pi[s], rng);
        s = sample_transition(mdp, s, a, rng);
    }
    s
}

fn terminal_gradient_term(
    policy: &PolicyHandle,
    q: &QTable,
    s: usize,
    denom: f64,
) -> Vec<f64> {
    let mut term = vec![0.0; policy.param_dim()];
    for (a, &qa) in q.values[s].iter().enumerate() {
        let grad = policy.grad(s, a);
        for (t, g) in term.iter_mut().zip(&grad) {
            *t += qa * g / denom;
        }
    }
    term
}

/// One Monte-Carlo gradient sample g^j = B^j + (gamma R/(1-gamma)) D^j. The
/// B and D rollouts share the horizon draw.
pub fn sample_gradient_estimate<R: Rng>(
    mdp: &TabularMdp,
    policy: &PolicyHandle,
    q: &QTable,
    rho: &[f64],
    d_start: DStart,
    rng: &mut R,
) -> Vec<f64> {
    let pi = policy.prob_table(mdp.num_states);
    let v = q.value_under(&pi);
    let denom = 1.0 - mdp.gamma + mdp.gamma * mdp.radius;
    let gr = mdp.gamma * mdp.radius / (1.0 - mdp.gamma);

    let horizon = sample_geometric_horizon(mdp.gamma, mdp.radius, rng);

    let b_start = sample_index(rho, rng);
    let b_term = rollout_terminal(mdp, &pi, b_start, horizon, rng);
    let mut g = terminal_gradient_term(policy, q, b_term, denom);

    if gr > 0.0 {
        let x0 = match d_start {
            DStart::ArgMax => argmax(&v.values),
            DStart::Softmax(sigma) => sample_index(&softmax_weights(sigma, &v.values), rng),
        };
        let d_term = rollout_terminal(mdp, &pi, x0, horizon, rng);
        let d = terminal_gradient_term(policy, q, d_term, denom);
        for (gi, di) in g.iter_mut().zip(&d) {
            *gi += gr * di;
        }
    }
    g
}

/// Mean of M independent gradient samples, each on its own index-derived
/// substream (reproducible regardless of evaluation order).
pub fn mean_gradient_estimate(
    mdp: &TabularMdp,
    policy: &PolicyHandle,
    q: &QTable,
    rho: &[f64],
    d_start: DStart,
    rollouts: usize,
    streams: &Streams,
) -> Vec<f64> {
    let mut mean = vec![0.0; policy.param_dim()];
    for j in 0..rollouts {
        let mut rng = streams.stream(&[j as u64]);
        let g = sample_gradient_estimate(mdp, policy, q, rho, d_start, &mut rng);
        for (m, gi) in mean.iter_mut().zip(&g) {
            *m += gi / rollouts as f64;
        }
    }
    mean
}

fn critic_estimate(
    mdp: &TabularMdp,
    policy: &PolicyHandle,
    rho: &[f64],
    mode: CriticMode,
    sigma: Option<f64>,
    streams: &Streams,
) -> Result<QTable> {
    match mode {
        CriticMode::Exact => {
            let eval = match sigma {
                Some(s) => EvalMode::Smoothed(s),
                None => EvalMode::Robust,
            };
            Ok(solve_value(mdp, policy, eval, 1e-9)?.1)
        }
        CriticMode::Td { steps, schedule } => robust_td_tabular(
            mdp,
            policy,
            rho,
            steps,
            sigma,
            schedule,
            streams.stream(&[0]),
        ),
    }
}

fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn run_ac_loop(
    mdp: &TabularMdp,
    init: &PolicyHandle,
    spec: &ObjectiveSpec,
    config: &AcConfig,
    d_start: DStart,
) -> Result<(PolicyHandle, TrainTrace)> {
    let start = std::time::Instant::now();
    let streams = Streams::new(config.seed);
    let mut policy = init.clone();
    let mut trace = TrainTrace::default();
    let l_sigma = config.sigma.and_then(|sigma| {
        compute_constants(&ConstantInputs {
            k_pi: 1.0,
            l_pi: 0.0,
            mu_min: spec.mu_min(),
            gamma: mdp.gamma,
            radius: mdp.radius,
            sigma,
            num_states: mdp.num_states,
            num_actions: mdp.num_actions,
            eps_est: 0.0,
        })
        .ok()
        .map(|c| c.l_sigma)
    });

    for t in 0..=config.outer_iters {
        let q = critic_estimate(
            mdp,
            &policy,
            &spec.rho,
            config.critic,
            config.sigma,
            &streams.child(2 * t as u64),
        )?;
        let g = mean_gradient_estimate(
            mdp,
            &policy,
            &q,
            &spec.rho,
            d_start,
            config.rollouts,
            &streams.child(2 * t as u64 + 1),
        );
        let alpha = config.schedule.step(t, l_sigma)?;

        let j_robust = objective(mdp, &policy, spec, EvalMode::Robust)?;
        let j_sigma = match config.sigma {
            Some(s) => Some(objective(mdp, &policy, spec, EvalMode::Smoothed(s))?),
            None => None,
        };
        let mapping_norm = match policy.as_direct() {
            Some(direct) => l2_norm(&gradient_mapping(
                direct,
                &crate::grad::GradientEstimate {
                    vector: g.clone(),
                    kind: crate::grad::GradKind::MonteCarlo,
                },
                alpha,
            )?),
            None => l2_norm(&g),
        };
        trace.rows.push(TraceRow {
            t,
            j_robust,
            j_sigma,
            j_nominal: None,
            grad_norm: l2_norm(&g),
            gradient_mapping_norm: mapping_norm,
            wall_time: start.elapsed().as_secs_f64(),
        });
        if config.snapshot_period > 0 && t % config.snapshot_period == 0 {
            if let Some(direct) = policy.as_direct() {
                trace.snapshots.push((t, direct.table.clone()));
            }
        }

        if t == config.outer_iters {
            break;
        }
        let mut theta = policy.params();
        for (x, gi) in theta.iter_mut().zip(&g) {
            *x -= alpha * gi;
        }
        if policy.as_direct().is_some() {
            project_rows_in_place(&mut theta, mdp.num_actions)?;
        }
        policy.set_params(&theta);
    }
    Ok((policy, trace))
}

/// Robust actor-critic: argmax worst-start rollouts, robust (max) critic
/// target. Works for direct and MLP actors.
pub fn run_robust_ac(
    mdp: &TabularMdp,
    init: &PolicyHandle,
    spec: &ObjectiveSpec,
    config: &AcConfig,
) -> Result<(PolicyHandle, TrainTrace)> {
    run_ac_loop(mdp, init, spec, config, DStart::ArgMax)
}

/// Smoothed tabular variant: worst-start state sampled from
/// softmax(sigma, V_t), smoothed critic target.
pub fn run_smoothed_ac_tabular(
    mdp: &TabularMdp,
    init: &PolicyHandle,
    spec: &ObjectiveSpec,
    config: &AcConfig,
) -> Result<(PolicyHandle, TrainTrace)> {
    let sigma = config
        .sigma
        .ok_or_else(|| Error::InvalidParameter("smoothed actor-critic requires sigma".into()))?;
    if init.as_direct().is_none() {
        return Err(Error::Unsupported(
            "smoothed tabular actor-critic requires a direct policy".into(),
        ));
    }
    run_ac_loop(mdp, init, spec, config, DStart::Softmax(sigma))
}

/// Closed-form bias bound b_g of the inexact-critic gradient estimator.
pub fn estimator_bias_bound(inputs: &ConstantInputs, eps_est: f64, sigma: f64) -> Result<f64> {
    let mut inp = *inputs;
    inp.eps_est = eps_est;
    inp.sigma = sigma;
    Ok(compute_constants(&inp)?.b_g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grad::grad_j_sigma;
    use crate::mdp::garnet_generate;
    use crate::policy::DirectPolicy;

    fn uniform_handle(n: usize, a: usize) -> PolicyHandle {
        PolicyHandle::Direct(DirectPolicy::uniform(n, a))
    }

    #[test]
    fn geometric_horizon_full_contamination_is_zero() {
        let mut rng = Streams::new(80).stream(&[0]);
        for _ in 0..100 {
            assert_eq!(sample_geometric_horizon(0.9, 1.0, &mut rng), 0);
        }
    }

    #[test]
    fn geometric_horizon_law_and_mean() {
        let (gamma, radius) = (0.9, 0.1);
        let p = 1.0 - gamma + gamma * radius;
        let mut rng = Streams::new(81).stream(&[0]);
        let n = 200_000;
        let mut zeros = 0usize;
        let mut total = 0u64;
        for _ in 0..n {
            let t = sample_geometric_horizon(gamma, radius, &mut rng);
            if t == 0 {
                zeros += 1;
            }
            total += t as u64;
        }
        assert!((zeros as f64 / n as f64 - p).abs() < 0.005);
        let mean = total as f64 / n as f64;
        let expect = (1.0 - p) / p;
        assert!((mean - expect).abs() / expect < 0.02, "{mean} vs {expect}");
    }

    #[test]
    fn estimator_unbiased_with_exact_critic() {
        let streams = Streams::new(82);
        let mdp = garnet_generate(3, 2, 3, 0.9, 0.2, &mut streams.stream(&[0])).unwrap();
        let policy = uniform_handle(3, 2);
        let spec = ObjectiveSpec::uniform(3);
        let sigma = 10.0;
        let (_, q) = solve_value(&mdp, &policy, EvalMode::Smoothed(sigma), 1e-10).unwrap();
        let exact = grad_j_sigma(&mdp, &policy, &spec, sigma).unwrap().vector;

        let m = 20_000;
        let sub = streams.child(1);
        let mut mean = vec![0.0; 6];
        let mut sq = vec![0.0; 6];
        for j in 0..m {
            let mut rng = sub.stream(&[j as u64]);
            let g = sample_gradient_estimate(
                &mdp,
                &policy,
                &q,
                &spec.rho,
                DStart::Softmax(sigma),
                &mut rng,
            );
            for i in 0..6 {
                mean[i] += g[i] / m as f64;
                sq[i] += g[i] * g[i] / m as f64;
            }
        }
        for i in 0..6 {
            let var = (sq[i] - mean[i] * mean[i]).max(0.0);
            let se = (var / m as f64).sqrt();
            assert!(
                (mean[i] - exact[i]).abs() <= 3.0 * se + 1e-9,
                "coord {i}: {} vs {} (se {se})",
                mean[i],
                exact[i]
            );
        }
    }

    #[test]
    fn estimator_norm_bounded_by_c_g() {
        let streams = Streams::new(83);
        let mdp = garnet_generate(4, 2, 4, 0.9, 0.15, &mut streams.stream(&[0])).unwrap();
        let policy = uniform_handle(4, 2);
        let sigma = 10.0;
        let (_, q) = solve_value(&mdp, &policy, EvalMode::Smoothed(sigma), 1e-10).unwrap();
        let consts = compute_constants(&ConstantInputs {
            k_pi: 1.0,
            l_pi: 0.0,
            mu_min: 0.25,
            gamma: 0.9,
            radius: 0.15,
            sigma,
            num_states: 4,
            num_actions: 2,
            eps_est: 0.0,
        })
        .unwrap();
        let rho = vec![0.25; 4];
        let mut rng = streams.stream(&[1]);
        for _ in 0..500 {
            let g = sample_gradient_estimate(&mdp, &policy, &q, &rho, DStart::Softmax(sigma), &mut rng);
            let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!(norm <= consts.c_g, "{norm} > {}", consts.c_g);
        }
    }

    #[test]
    fn r_zero_drops_worst_start_branch() {
        let streams = Streams::new(84);
        let mdp = garnet_generate(3, 2, 3, 0.9, 0.0, &mut streams.stream(&[0])).unwrap();
        let policy = uniform_handle(3, 2);
        let (_, q) = solve_value(&mdp, &policy, EvalMode::Robust, 1e-10).unwrap();
        let rho = vec![1.0 / 3.0; 3];
        // With R = 0 the D rollout never runs, so identical streams give
        // identical samples whatever the D start rule.
        for j in 0..20u64 {
            let mut r1 = streams.stream(&[1, j]);
            let mut r2 = streams.stream(&[1, j]);
            let a = sample_gradient_estimate(&mdp, &policy, &q, &rho, DStart::ArgMax, &mut r1);
            let b =
                sample_gradient_estimate(&mdp, &policy, &q, &rho, DStart::Softmax(5.0), &mut r2);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn softmax_start_uniform_for_constant_values() {
        let w = softmax_weights(3.0, &[0.4, 0.4, 0.4]);
        for x in w {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn ac_improves_on_bandit() {
        let mdp = TabularMdp::new(
            0.9,
            0.1,
            vec![vec![0.0, 1.0]],
            vec![vec![vec![1.0], vec![1.0]]],
        )
        .unwrap();
        let spec = ObjectiveSpec::uniform(1);
        let mut config = AcConfig::new(150, 32, CriticMode::Exact);
        config.schedule = StepSchedule::Harmonic(1.0);
        config.seed = 5;
        let init = uniform_handle(1, 2);
        let (_, trace) = run_robust_ac(&mdp, &init, &spec, &config).unwrap();
        assert!(trace.final_j_robust() < 0.5, "{}", trace.final_j_robust());
    }

    #[test]
    fn smoothed_ac_iterates_feasible() {
        let streams = Streams::new(85);
        let mdp = garnet_generate(3, 2, 3, 0.9, 0.2, &mut streams.stream(&[0])).unwrap();
        let spec = ObjectiveSpec::uniform(3);
        let mut config = AcConfig::new(25, 8, CriticMode::Exact).with_sigma(10.0);
        config.schedule = StepSchedule::Harmonic(0.5);
        config.snapshot_period = 1;
        config.seed = 9;
        let init = uniform_handle(3, 2);
        let (_, trace) = run_smoothed_ac_tabular(&mdp, &init, &spec, &config).unwrap();
        assert_eq!(trace.snapshots.len(), 26);
        for (_, theta) in &trace.snapshots {
            for row in theta {
                assert!(row.iter().all(|&p| p >= -1e-10));
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn bias_bound_zero_at_exact_critic_and_monotone() {
        let inputs = ConstantInputs {
            k_pi: 1.0,
            l_pi: 0.0,
            mu_min: 0.5,
            gamma: 0.9,
            radius: 0.1,
            sigma: 10.0,
            num_states: 4,
            num_actions: 2,
            eps_est: 0.0,
        };
        assert_eq!(estimator_bias_bound(&inputs, 0.0, 10.0).unwrap(), 0.0);
        let mut prev = 0.0;
        for eps in [1e-4, 1e-3, 1e-2, 1e-1] {
            let b = estimator_bias_bound(&inputs, eps, 10.0).unwrap();
            assert!(b > prev);
            prev = b;
        }
        // Hand evaluation at gamma=0.9, R=0.1, |A|=2, sigma=10, eps=1e-3.
        let (gamma, r, a, sigma, eps): (f64, f64, f64, f64, f64) = (0.9, 0.1, 2.0, 10.0, 1e-3);
        let denom = 1.0 - gamma + gamma * r;
        let gr = gamma * r / (1.0 - gamma);
        let c_sigma = (1.0 + 2.0 * gamma * r * 4.0f64.ln() / sigma) / (1.0 - gamma);
        let hand = 2.0 * sigma * eps * (sigma * eps).exp() * gr * a * (eps + c_sigma) / denom
            + gr * a * eps / denom
            + a * eps / denom;
        let got = estimator_bias_bound(&inputs, eps, sigma).unwrap();
        assert!((got - hand).abs() < 1e-12);
    }
}
