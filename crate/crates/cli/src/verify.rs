//! `verify` subcommand: randomized invariant battery over the library,
//! printing one pass/fail line per property. Exits nonzero on any failure.

use anyhow::{bail, Result};
use rand::Rng;
use rmdp::dp::{lse, solve_value, worst_case_kernel, EvalMode};
use rmdp::grad::{finite_diff_objective, objective, psi_subgradient, ObjectiveSpec};
use rmdp::policy::{DirectPolicy, PolicyHandle};
use rmdp::simplex::project_row_simplex;
use rmdp::td::TdSchedule;
use rmdp::{garnet_generate, robust_td_tabular, Streams, TabularMdp};

struct Sizes {
    vectors: usize,
    pairs: usize,
    grads: usize,
    draws: usize,
    td_steps: usize,
}

const FULL: Sizes = Sizes { vectors: 1000, pairs: 200, grads: 8, draws: 1_000_000, td_steps: 50_000 };
const SMALL: Sizes = Sizes { vectors: 100, pairs: 40, grads: 3, draws: 100_000, td_steps: 20_000 };

fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let n: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    d / n.max(1e-12)
}

fn random_mdp<R: Rng>(states: usize, actions: usize, radius: f64, rng: &mut R) -> TabularMdp {
    garnet_generate(states, actions, states, 0.9, radius, rng).unwrap()
}

fn random_interior_policy<R: Rng>(states: usize, actions: usize, rng: &mut R) -> DirectPolicy {
    let table: Vec<Vec<f64>> = (0..states)
        .map(|_| {
            let raw: Vec<f64> = (0..actions).map(|_| rng.random_range(0.2..1.0)).collect();
            let sum: f64 = raw.iter().sum();
            raw.into_iter().map(|x| x / sum).collect()
        })
        .collect();
    DirectPolicy::from_table(table).unwrap()
}

fn check_simplex_projection(sizes: &Sizes, streams: &Streams) -> bool {
    let mut rng = streams.stream(&[0]);
    for _ in 0..sizes.vectors {
        let n = rng.random_range(2..8usize);
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let p = match project_row_simplex(&v) {
            Ok(p) => p,
            Err(_) => return false,
        };
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || p.iter().any(|&x| x < -1e-12) {
            return false;
        }
        // Projection of a point already on the simplex is the identity.
        let again = project_row_simplex(&p).unwrap();
        if p.iter().zip(&again).any(|(a, b)| (a - b).abs() > 1e-9) {
            return false;
        }
    }
    true
}

fn check_lse_bracket(sizes: &Sizes, streams: &Streams) -> bool {
    let mut rng = streams.stream(&[1]);
    for _ in 0..sizes.vectors {
        let n = rng.random_range(2..12usize);
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-50.0..50.0)).collect();
        let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for sigma in [0.5, 5.0, 100.0, 1e6] {
            let x = match lse(sigma, &v) {
                Ok(x) => x,
                Err(_) => return false,
            };
            let upper = max + (n as f64).ln() / sigma;
            if !x.is_finite() || x < max - 1e-9 || x > upper + 1e-9 {
                return false;
            }
        }
    }
    true
}

fn check_contraction(sizes: &Sizes, streams: &Streams) -> bool {
    use rmdp::dp::{robust_bellman_apply, ValueTable};
    let mut rng = streams.stream(&[2]);
    for _ in 0..sizes.pairs {
        let mdp = random_mdp(4, 3, 0.2, &mut rng);
        let pi = PolicyHandle::Direct(random_interior_policy(4, 3, &mut rng));
        let u: Vec<f64> = (0..4).map(|_| rng.random_range(-5.0..5.0)).collect();
        let w: Vec<f64> = (0..4).map(|_| rng.random_range(-5.0..5.0)).collect();
        let tu = robust_bellman_apply(&mdp, &pi, &ValueTable { values: u.clone() }).unwrap();
        let tw = robust_bellman_apply(&mdp, &pi, &ValueTable { values: w.clone() }).unwrap();
        let num = tu
            .values
            .iter()
            .zip(&tw.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let den = u.iter().zip(&w).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if num > mdp.gamma * den + 1e-9 {
            return false;
        }
    }
    true
}

fn check_smoothing_bound(sizes: &Sizes, streams: &Streams) -> bool {
    let mut rng = streams.stream(&[3]);
    for _ in 0..sizes.grads.max(5) {
        let mdp = random_mdp(5, 2, 0.15, &mut rng);
        let handle = PolicyHandle::Direct(random_interior_policy(5, 2, &mut rng));
        for sigma in [1.0, 10.0, 100.0] {
            let v = solve_value(&mdp, &handle, EvalMode::Robust, 1e-10).unwrap().0;
            let vs = solve_value(&mdp, &handle, EvalMode::Smoothed(sigma), 1e-10).unwrap().0;
            let bound = mdp.gamma * mdp.radius * (mdp.num_states as f64).ln()
                / ((1.0 - mdp.gamma) * sigma);
            let gap = v
                .values
                .iter()
                .zip(&vs.values)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            if gap > bound + 1e-8 {
                return false;
            }
        }
    }
    true
}

fn check_grad_fd(sizes: &Sizes, streams: &Streams) -> bool {
    let mut rng = streams.stream(&[4]);
    for _ in 0..sizes.grads {
        let mdp = random_mdp(4, 2, 0.1, &mut rng);
        let handle = PolicyHandle::Direct(random_interior_policy(4, 2, &mut rng));
        let spec = ObjectiveSpec::uniform(4);
        let sigma = 10.0;
        let g = rmdp::grad_j_sigma(&mdp, &handle, &spec, sigma).unwrap();
        let fd = finite_diff_objective(&mdp, &handle, &spec, EvalMode::Smoothed(sigma), 1e-6)
            .unwrap();
        if rel_l2(&g.vector, &fd) > 1e-4 {
            return false;
        }
    }
    true
}

fn check_psi_fd(sizes: &Sizes, streams: &Streams) -> bool {
    // Sub-gradient correctness holds almost everywhere; demand 80% of draws.
    let mut rng = streams.stream(&[5]);
    let total = sizes.grads * 3;
    let mut hits = 0;
    for _ in 0..total {
        let mdp = random_mdp(4, 2, 0.15, &mut rng);
        let handle = PolicyHandle::Direct(random_interior_policy(4, 2, &mut rng));
        let spec = ObjectiveSpec::uniform(4);
        let g = psi_subgradient(&mdp, &handle, &spec).unwrap();
        let fd = finite_diff_objective(&mdp, &handle, &spec, EvalMode::Robust, 1e-6).unwrap();
        if rel_l2(&g.vector, &fd) <= 1e-3 {
            hits += 1;
        }
    }
    hits * 5 >= total * 4
}

fn check_geometric_law(sizes: &Sizes, streams: &Streams) -> bool {
    let mut rng = streams.stream(&[6]);
    let (gamma, radius) = (0.9, 0.1);
    let mut zeros = 0usize;
    let mut sum = 0.0;
    for _ in 0..sizes.draws {
        let t = rmdp::ac::sample_geometric_horizon(gamma, radius, &mut rng);
        if t == 0 {
            zeros += 1;
        }
        sum += t as f64;
    }
    let n = sizes.draws as f64;
    let p0 = zeros as f64 / n;
    let mean = sum / n;
    let expect_p0 = 1.0 - gamma + gamma * radius;
    let expect_mean = (gamma - gamma * radius) / expect_p0;
    (p0 - expect_p0).abs() < 0.004 && (mean / expect_mean - 1.0).abs() < 0.02
}

fn check_worst_case_attainment(sizes: &Sizes, streams: &Streams) -> bool {
    // Evaluating the policy on the adversarial kernel (at radius 0) must
    // reproduce the robust value.
    let mut rng = streams.stream(&[7]);
    for _ in 0..sizes.grads {
        let mdp = random_mdp(5, 3, 0.2, &mut rng);
        let handle = PolicyHandle::Direct(random_interior_policy(5, 3, &mut rng));
        let (v, _) = solve_value(&mdp, &handle, EvalMode::Robust, 1e-10).unwrap();
        let adversarial = worst_case_kernel(&mdp, &v).unwrap().with_radius(0.0);
        let (v_adv, _) = solve_value(&adversarial, &handle, EvalMode::Robust, 1e-10).unwrap();
        let gap = v
            .values
            .iter()
            .zip(&v_adv.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if gap > 1e-7 {
            return false;
        }
    }
    true
}

fn check_td_sanity(sizes: &Sizes, streams: &Streams) -> bool {
    // Single-state chain: Q must approach c/(1-gamma) = 5 regardless of R.
    let mdp = TabularMdp::new(0.9, 0.1, vec![vec![0.5]], vec![vec![vec![1.0]]]).unwrap();
    let handle = PolicyHandle::Direct(DirectPolicy::uniform(1, 1));
    let q = robust_td_tabular(
        &mdp,
        &handle,
        &[1.0],
        sizes.td_steps,
        None,
        TdSchedule::Polynomial { a: 1.0, power: 0.7 },
        streams.stream(&[8]),
    )
    .unwrap();
    (q.values[0][0] - 5.0).abs() < 0.1
}

fn check_objective_monotone_in_radius(sizes: &Sizes, streams: &Streams) -> bool {
    let mut rng = streams.stream(&[9]);
    for _ in 0..sizes.grads {
        let mdp = random_mdp(5, 2, 0.0, &mut rng);
        let handle = PolicyHandle::Direct(random_interior_policy(5, 2, &mut rng));
        let spec = ObjectiveSpec::uniform(5);
        let mut last = f64::NEG_INFINITY;
        for r in [0.0, 0.1, 0.2, 0.4] {
            let j = objective(&mdp.with_radius(r), &handle, &spec, EvalMode::Robust).unwrap();
            if j < last - 1e-9 {
                return false;
            }
            last = j;
        }
    }
    true
}

pub fn run(small_suite: bool) -> Result<()> {
    let sizes = if small_suite { SMALL } else { FULL };
    let streams = Streams::new(0xC0FFEE);
    let checks: Vec<(&str, fn(&Sizes, &Streams) -> bool)> = vec![
        ("simplex_projection", check_simplex_projection),
        ("lse_bracket", check_lse_bracket),
        ("bellman_contraction", check_contraction),
        ("smoothing_bound", check_smoothing_bound),
        ("smoothed_gradient_fd", check_grad_fd),
        ("subgradient_fd_ae", check_psi_fd),
        ("geometric_horizon_law", check_geometric_law),
        ("worst_case_attainment", check_worst_case_attainment),
        ("td_fixed_point", check_td_sanity),
        ("radius_monotonicity", check_objective_monotone_in_radius),
    ];
    let mut failures = 0;
    for (name, check) in checks {
        let ok = check(&sizes, &streams);
        println!("verify {name}: {}", if ok { "PASS" } else { "FAIL" });
        if !ok {
            failures += 1;
        }
    }
    if failures > 0 {
        bail!("{failures} propert{} failed", if failures == 1 { "y" } else { "ies" });
    }
    Ok(())
}
