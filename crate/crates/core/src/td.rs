//! Model-free robust policy evaluation.
//!
//! Samples come only from the centroid kernel; robustness enters through the
//! TD target, which mixes the sampled next value (weight 1-R) with the
//! maximal (or LSE-smoothed) state value (weight R).

use rand::Rng;

use crate::dp::{lse, QTable};
use crate::error::{Error, Result};
use crate::mdp::TabularMdp;
use crate::policy::PolicyHandle;

/// Default critic hidden width.
pub const MLP_CRITIC_HIDDEN: usize = 20;

/// Inverse-CDF sample from a finite distribution.
pub fn sample_index<R: Rng>(dist: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in dist.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    dist.len() - 1
}

/// One draw from the centroid kernel row p(.|s,a).
pub fn sample_transition<R: Rng>(mdp: &TabularMdp, s: usize, a: usize, rng: &mut R) -> usize {
    sample_index(&mdp.kernel[s][a], rng)
}

/// On-policy transition with the successor action included.
#[derive(Clone, Copy, Debug)]
pub struct Transition {
    pub s: usize,
    pub a: usize,
    pub cost: f64,
    pub next_s: usize,
    pub next_a: usize,
}

/// On-policy generator of centroid-kernel transitions. Starts from rho and
/// resets to rho periodically so no single recurrent class starves the rest.
pub struct SampleStream<'a, R: Rng> {
    mdp: &'a TabularMdp,
    pi: Vec<Vec<f64>>,
    rho: Vec<f64>,
    rng: R,
    state: usize,
    action: usize,
    since_reset: usize,
    pub reset_period: usize,
}

impl<'a, R: Rng> SampleStream<'a, R> {
    pub fn new(mdp: &'a TabularMdp, policy: &PolicyHandle, rho: Vec<f64>, mut rng: R) -> Self {
        let pi = policy.prob_table(mdp.num_states);
        let state = sample_index(&rho, &mut rng);
        let action = sample_index(&pi[state], &mut rng);
        SampleStream {
            mdp,
            pi,
            rho,
            rng,
            state,
            action,
            since_reset: 0,
            reset_period: 1000,
        }
    }

    pub fn next_transition(&mut self) -> Transition {
        let (s, a) = (self.state, self.action);
        let cost = self.mdp.cost[s][a];
        let next_s = sample_transition(self.mdp, s, a, &mut self.rng);
        let next_a = sample_index(&self.pi[next_s], &mut self.rng);
        self.since_reset += 1;
        if self.since_reset >= self.reset_period {
            self.state = sample_index(&self.rho, &mut self.rng);
            self.action = sample_index(&self.pi[self.state], &mut self.rng);
            self.since_reset = 0;
        } else {
            self.state = next_s;
            self.action = next_a;
        }
        Transition {
            s,
            a,
            cost,
            next_s,
            next_a,
        }
    }
}

/// Robbins-Monro step schedule for TD runs.
#[derive(Clone, Copy, Debug)]
pub enum TdSchedule {
    /// alpha_t = a / (1 + t)^power.
    Polynomial { a: f64, power: f64 },
    Constant(f64),
}

impl Default for TdSchedule {
    fn default() -> Self {
        TdSchedule::Polynomial { a: 0.5, power: 0.7 }
    }
}

impl TdSchedule {
    pub fn step(&self, t: usize) -> f64 {
        match self {
            TdSchedule::Polynomial { a, power } => a / (1.0 + t as f64).powf(*power),
            TdSchedule::Constant(a) => *a,
        }
    }
}

/// The TD error of the robust target with a scalar worst-state value:
/// delta = Q(s,a) - c - gamma (1-R) q_next - gamma R v_star.
pub fn td_delta(q_sa: f64, cost: f64, q_next: f64, v_star: f64, gamma: f64, radius: f64) -> f64 {
    q_sa - cost - gamma * (1.0 - radius) * q_next - gamma * radius * v_star
}

fn state_values(q: &QTable, pi: &[Vec<f64>]) -> Vec<f64> {
    q.value_under(pi).values
}

/// Tabular robust TD. With `sigma = None` the contamination term uses
/// max_s V_t(s); with `Some(sigma)` it uses LSE(sigma, V_t).
pub fn robust_td_tabular<R: Rng>(
    mdp: &TabularMdp,
    policy: &PolicyHandle,
    rho: &[f64],
    steps: usize,
    sigma: Option<f64>,
    schedule: TdSchedule,
    rng: R,
) -> Result<QTable> {
    if let Some(s) = sigma {
        if !(s > 0.0) {
            return Err(Error::InvalidParameter(format!("sigma must be positive, got {s}")));
        }
    }
    let pi = policy.prob_table(mdp.num_states);
    let mut stream = SampleStream::new(mdp, policy, rho.to_vec(), rng);
    let mut q = QTable::zeros(mdp.num_states, mdp.num_actions);

    for t in 0..steps {
        let tr = stream.next_transition();
        let v = state_values(&q, &pi);
        let worst = match sigma {
            Some(s) => lse(s, &v)?,
            None => v.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        };
        let target =
            tr.cost + mdp.gamma * (1.0 - mdp.radius) * v[tr.next_s] + mdp.gamma * mdp.radius * worst;
        let alpha = schedule.step(t);
        q.values[tr.s][tr.a] += alpha * (target - q.values[tr.s][tr.a]);
    }
    Ok(q)
}

/// Two-layer tanh critic over a one-hot state with one output head per
/// action.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpCritic {
    pub num_states: usize,
    pub hidden: usize,
    pub num_actions: usize,
    /// hidden x num_states, row-major
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// num_actions x hidden, row-major
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl MlpCritic {
    pub fn new<R: Rng>(num_states: usize, hidden: usize, num_actions: usize, rng: &mut R) -> Self {
        let s1 = 1.0 / (num_states as f64).sqrt();
        let s2 = 1.0 / (hidden as f64).sqrt();
        let mut sample = |n: usize, scale: f64| -> Vec<f64> {
            (0..n)
                .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * scale)
                .collect()
        };
        MlpCritic {
            num_states,
            hidden,
            num_actions,
            w1: sample(hidden * num_states, s1),
            b1: vec![0.0; hidden],
            w2: sample(num_actions * hidden, s2),
            b2: vec![0.0; num_actions],
        }
    }

    pub fn zeros(num_states: usize, hidden: usize, num_actions: usize) -> Self {
        MlpCritic {
            num_states,
            hidden,
            num_actions,
            w1: vec![0.0; hidden * num_states],
            b1: vec![0.0; hidden],
            w2: vec![0.0; num_actions * hidden],
            b2: vec![0.0; num_actions],
        }
    }

    pub fn param_dim(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.param_dim());
        v.extend_from_slice(&self.w1);
        v.extend_from_slice(&self.b1);
        v.extend_from_slice(&self.w2);
        v.extend_from_slice(&self.b2);
        v
    }

    pub fn set_params(&mut self, params: &[f64]) {
        debug_assert_eq!(params.len(), self.param_dim());
        let (n1, n2, n3) = (self.w1.len(), self.b1.len(), self.w2.len());
        self.w1.copy_from_slice(&params[..n1]);
        self.b1.copy_from_slice(&params[n1..n1 + n2]);
        self.w2.copy_from_slice(&params[n1 + n2..n1 + n2 + n3]);
        self.b2.copy_from_slice(&params[n1 + n2 + n3..]);
    }

    fn hidden_activations(&self, s: usize) -> Vec<f64> {
        (0..self.hidden)
            .map(|j| (self.w1[j * self.num_states + s] + self.b1[j]).tanh())
            .collect()
    }

    /// All action-head values at state s.
    pub fn forward(&self, s: usize) -> Vec<f64> {
        let h = self.hidden_activations(s);
        (0..self.num_actions)
            .map(|k| {
                let mut z = self.b2[k];
                for j in 0..self.hidden {
                    z += self.w2[k * self.hidden + j] * h[j];
                }
                z
            })
            .collect()
    }

    pub fn q(&self, s: usize, a: usize) -> f64 {
        self.forward(s)[a]
    }

    pub fn q_table(&self) -> QTable {
        QTable {
            values: (0..self.num_states).map(|s| self.forward(s)).collect(),
        }
    }

    fn param_norm(&self) -> f64 {
        self.params().iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// Value and parameter-gradient of Q_zeta(s, a).
pub fn mlp_forward_backward(critic: &MlpCritic, s: usize, a: usize) -> (f64, Vec<f64>) {
    let h = critic.hidden_activations(s);
    let mut value = critic.b2[a];
    for j in 0..critic.hidden {
        value += critic.w2[a * critic.hidden + j] * h[j];
    }

    let mut grad = vec![0.0; critic.param_dim()];
    let (n1, n2, n3) = (critic.w1.len(), critic.b1.len(), critic.w2.len());
    for j in 0..critic.hidden {
        grad[n1 + n2 + a * critic.hidden + j] = h[j];
        let gu = critic.w2[a * critic.hidden + j] * (1.0 - h[j] * h[j]);
        grad[j * critic.num_states + s] = gu;
        grad[n1 + j] = gu;
    }
    grad[n1 + n2 + n3 + a] = 1.0;
    (value, grad)
}

/// Semi-gradient robust TD with a parametric critic: no gradient flows
/// through the target.
pub fn robust_td_fa<R: Rng>(
    mdp: &TabularMdp,
    policy: &PolicyHandle,
    rho: &[f64],
    mut critic: MlpCritic,
    steps: usize,
    schedule: TdSchedule,
    rng: R,
) -> Result<MlpCritic> {
    let pi = policy.prob_table(mdp.num_states);
    let mut stream = SampleStream::new(mdp, policy, rho.to_vec(), rng);

    for t in 0..steps {
        let tr = stream.next_transition();
        let q_all = critic.q_table();
        let v_star = q_all
            .value_under(&pi)
            .values
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max);
        let (q_sa, grad) = mlp_forward_backward(&critic, tr.s, tr.a);
        let delta = td_delta(
            q_sa,
            tr.cost,
            q_all.values[tr.next_s][tr.next_a],
            v_star,
            mdp.gamma,
            mdp.radius,
        );
        let beta = schedule.step(t);
        let mut params = critic.params();
        for (p, g) in params.iter_mut().zip(&grad) {
            *p -= beta * delta * g;
        }
        critic.set_params(&params);

        if t % 1000 == 0 {
            let norm = critic.param_norm();
            if norm > 1e6 {
                return Err(Error::CriticDiverged { norm, limit: 1e6 });
            }
        }
    }
    Ok(critic)
}
