//! Policy classes: direct (tabular simplex) parameterization and a small
//! tanh MLP with a per-state softmax head.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simplex::project_row_simplex;

/// Direct parameterization: pi(a|s) = theta[s][a], each row on the simplex.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectPolicy {
    pub table: Vec<Vec<f64>>,
}

impl DirectPolicy {
    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        DirectPolicy {
            table: vec![vec![1.0 / num_actions as f64; num_actions]; num_states],
        }
    }

    pub fn from_table(table: Vec<Vec<f64>>) -> Result<Self> {
        for (s, row) in table.iter().enumerate() {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|&p| p < -1e-12) || (sum - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidModel(format!(
                    "policy row {s} is not on the simplex (sum {sum})"
                )));
            }
        }
        Ok(DirectPolicy { table })
    }

    /// Deterministic policy selecting `actions[s]` in state s.
    pub fn deterministic(actions: &[usize], num_actions: usize) -> Self {
        let table = actions
            .iter()
            .map(|&a| {
                let mut row = vec![0.0; num_actions];
                row[a] = 1.0;
                row
            })
            .collect();
        DirectPolicy { table }
    }

    pub fn num_states(&self) -> usize {
        self.table.len()
    }

    pub fn num_actions(&self) -> usize {
        self.table.first().map_or(0, |r| r.len())
    }

    pub fn params(&self) -> Vec<f64> {
        self.table.iter().flatten().copied().collect()
    }

    pub fn set_params(&mut self, params: &[f64]) {
        let a = self.num_actions();
        for (s, chunk) in params.chunks(a).enumerate() {
            self.table[s].copy_from_slice(chunk);
        }
    }

    /// Projects every row back onto the simplex.
    pub fn project(&mut self) -> Result<()> {
        for row in &mut self.table {
            let p = project_row_simplex(row)?;
            row.copy_from_slice(&p);
        }
        Ok(())
    }
}

/// Two-layer tanh network over a one-hot state, softmax output head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpPolicy {
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

/// Default hidden width for policy networks.
pub const MLP_POLICY_HIDDEN: usize = 15;

impl MlpPolicy {
    pub fn new<R: Rng>(num_states: usize, hidden: usize, num_actions: usize, rng: &mut R) -> Self {
        let scale1 = 1.0 / (num_states as f64).sqrt();
        let scale2 = 1.0 / (hidden as f64).sqrt();
        let mut sample = |n: usize, scale: f64| -> Vec<f64> {
            (0..n)
                .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * scale)
                .collect()
        };
        MlpPolicy {
            num_states,
            hidden,
            num_actions,
            w1: sample(hidden * num_states, scale1),
            b1: vec![0.0; hidden],
            w2: sample(num_actions * hidden, scale2),
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

    fn logits(&self, h: &[f64]) -> Vec<f64> {
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

    pub fn evaluate(&self, s: usize) -> Vec<f64> {
        let h = self.hidden_activations(s);
        softmax(&self.logits(&h))
    }

    /// Gradient of pi(a|s) with respect to the full parameter vector.
    pub fn grad(&self, s: usize, a: usize) -> Vec<f64> {
        let h = self.hidden_activations(s);
        let pi = softmax(&self.logits(&h));

        // d pi_a / d z_k = pi_a (delta_ak - pi_k)
        let gz: Vec<f64> = (0..self.num_actions)
            .map(|k| pi[a] * (if k == a { 1.0 } else { 0.0 } - pi[k]))
            .collect();

        let mut grad = vec![0.0; self.param_dim()];
        let (n1, n2, n3) = (self.w1.len(), self.b1.len(), self.w2.len());

        // w2 and b2
        for k in 0..self.num_actions {
            for j in 0..self.hidden {
                grad[n1 + n2 + k * self.hidden + j] = gz[k] * h[j];
            }
            grad[n1 + n2 + n3 + k] = gz[k];
        }
        // back through tanh into w1 (only the one-hot column s) and b1
        for j in 0..self.hidden {
            let mut gh = 0.0;
            for k in 0..self.num_actions {
                gh += gz[k] * self.w2[k * self.hidden + j];
            }
            let gu = gh * (1.0 - h[j] * h[j]);
            grad[j * self.num_states + s] = gu;
            grad[n1 + j] = gu;
        }
        grad
    }
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|&x| (x - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Uniform policy abstraction used by the gradient, TD and actor-critic code.
#[derive(Clone, Debug)]
pub enum PolicyHandle {
    Direct(DirectPolicy),
    Mlp(MlpPolicy),
}

impl PolicyHandle {
    pub fn evaluate(&self, s: usize) -> Vec<f64> {
        match self {
            PolicyHandle::Direct(p) => p.table[s].clone(),
            PolicyHandle::Mlp(p) => p.evaluate(s),
        }
    }

    /// Flat parameter-space gradient of pi(a|s).
    pub fn grad(&self, s: usize, a: usize) -> Vec<f64> {
        match self {
            PolicyHandle::Direct(p) => {
                let mut g = vec![0.0; p.num_states() * p.num_actions()];
                g[s * p.num_actions() + a] = 1.0;
                g
            }
            PolicyHandle::Mlp(p) => p.grad(s, a),
        }
    }

    pub fn param_dim(&self) -> usize {
        match self {
            PolicyHandle::Direct(p) => p.num_states() * p.num_actions(),
            PolicyHandle::Mlp(p) => p.param_dim(),
        }
    }

    pub fn params(&self) -> Vec<f64> {
        match self {
            PolicyHandle::Direct(p) => p.params(),
            PolicyHandle::Mlp(p) => p.params(),
        }
    }

    pub fn set_params(&mut self, params: &[f64]) {
        match self {
            PolicyHandle::Direct(p) => p.set_params(params),
            PolicyHandle::Mlp(p) => p.set_params(params),
        }
    }

    /// pi(a|s) for every state, as a dense table.
    pub fn prob_table(&self, num_states: usize) -> Vec<Vec<f64>> {
        (0..num_states).map(|s| self.evaluate(s)).collect()
    }

    pub fn as_direct(&self) -> Option<&DirectPolicy> {
        match self {
            PolicyHandle::Direct(p) => Some(p),
            PolicyHandle::Mlp(_) => None,
        }
    }
}
