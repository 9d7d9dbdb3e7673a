//! Tabular MDPs with R-contamination uncertainty, JSON round-trip, and the
//! Garnet benchmark generator.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-sum tolerance for kernel and distribution validation.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// A finite MDP with centroid kernel `p[s][a][s']`, cost `c[s][a]` in [0,1],
/// discount `gamma` in [0,1) and contamination radius `radius` in [0,1].
///
/// The uncertainty set around each kernel row is
/// `{(1-R) p + R q : q a distribution}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabularMdp {
    pub num_states: usize,
    pub num_actions: usize,
    pub gamma: f64,
    pub radius: f64,
    pub cost: Vec<Vec<f64>>,
    pub kernel: Vec<Vec<Vec<f64>>>,
}

impl TabularMdp {
    pub fn new(
        gamma: f64,
        radius: f64,
        cost: Vec<Vec<f64>>,
        kernel: Vec<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        let num_states = kernel.len();
        let num_actions = kernel.first().map_or(0, |row| row.len());
        let mdp = TabularMdp {
            num_states,
            num_actions,
            gamma,
            radius,
            cost,
            kernel,
        };
        mdp.validate()?;
        Ok(mdp)
    }

    /// Checks all structural invariants, naming the offending field.
    pub fn validate(&self) -> Result<()> {
        if self.num_states == 0 || self.num_actions == 0 {
            return Err(Error::InvalidModel(
                "num_states and num_actions must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::InvalidModel(format!(
                "gamma: must satisfy 0 <= gamma < 1, got {}",
                self.gamma
            )));
        }
        if !(0.0..=1.0).contains(&self.radius) {
            return Err(Error::InvalidModel(format!(
                "radius: must lie in [0, 1], got {}",
                self.radius
            )));
        }
        if self.cost.len() != self.num_states
            || self.cost.iter().any(|row| row.len() != self.num_actions)
        {
            return Err(Error::InvalidModel(format!(
                "cost: expected shape {}x{}",
                self.num_states, self.num_actions
            )));
        }
        for (s, row) in self.cost.iter().enumerate() {
            for (a, &c) in row.iter().enumerate() {
                if !(0.0..=1.0).contains(&c) {
                    return Err(Error::InvalidModel(format!(
                        "cost[{s}][{a}]: must lie in [0, 1], got {c}"
                    )));
                }
            }
        }
        if self.kernel.len() != self.num_states {
            return Err(Error::InvalidModel(format!(
                "kernel: expected {} state rows",
                self.num_states
            )));
        }
        for (s, per_action) in self.kernel.iter().enumerate() {
            if per_action.len() != self.num_actions {
                return Err(Error::InvalidModel(format!(
                    "kernel[{s}]: expected {} action rows",
                    self.num_actions
                )));
            }
            for (a, row) in per_action.iter().enumerate() {
                if row.len() != self.num_states {
                    return Err(Error::InvalidModel(format!(
                        "kernel[{s}][{a}]: expected {} entries",
                        self.num_states
                    )));
                }
                let mut sum = 0.0;
                for (sp, &p) in row.iter().enumerate() {
                    if !p.is_finite() || p < 0.0 {
                        return Err(Error::InvalidModel(format!(
                            "kernel[{s}][{a}][{sp}]: entries must be finite and >= 0, got {p}"
                        )));
                    }
                    sum += p;
                }
                if (sum - 1.0).abs() > ROW_SUM_TOL {
                    return Err(Error::InvalidModel(format!(
                        "kernel[{s}][{a}]: row sums to {sum}, expected 1"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Same model with a different contamination radius.
    pub fn with_radius(&self, radius: f64) -> TabularMdp {
        TabularMdp {
            radius,
            ..self.clone()
        }
    }

    pub fn kernel_row(&self, s: usize, a: usize) -> &[f64] {
        &self.kernel[s][a]
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mdp: TabularMdp = serde_json::from_str(text)?;
        mdp.validate()?;
        Ok(mdp)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Generates a Garnet instance G(num_states, num_actions).
///
/// Kernel rows have exactly `branching` nonzero entries with uniformly
/// random support and Dirichlet(1,..,1) masses. The reward is 1 for taking
/// action 0 in state 0 or action 1 in any other state, 0 otherwise; costs
/// are stored as c = 1 - r. `gamma` and `radius` come from the caller.
pub fn garnet_generate<R: Rng>(
    num_states: usize,
    num_actions: usize,
    branching: usize,
    gamma: f64,
    radius: f64,
    rng: &mut R,
) -> Result<TabularMdp> {
    if num_states < 2 || num_actions < 2 {
        return Err(Error::InvalidParameter(
            "garnet requires num_states >= 2 and num_actions >= 2".into(),
        ));
    }
    if branching == 0 || branching > num_states {
        return Err(Error::InvalidParameter(format!(
            "branching must lie in 1..={num_states}, got {branching}"
        )));
    }

    let mut kernel = vec![vec![vec![0.0; num_states]; num_actions]; num_states];
    let mut indices: Vec<usize> = (0..num_states).collect();
    for s in 0..num_states {
        for a in 0..num_actions {
            // Partial Fisher-Yates: first `branching` entries are the support.
            for i in 0..branching {
                let j = rng.random_range(i..num_states);
                indices.swap(i, j);
            }
            // Dirichlet(1,..,1) masses via normalized Exp(1) draws.
            let mut total = 0.0;
            let mut mass = vec![0.0; branching];
            for m in mass.iter_mut() {
                let u: f64 = rng.random::<f64>();
                *m = -(1.0 - u).ln();
                total += *m;
            }
            for (i, m) in mass.iter().enumerate() {
                kernel[s][a][indices[i]] = m / total;
            }
            // Exact stochasticity: push rounding error into the largest entry.
            let sum: f64 = kernel[s][a].iter().sum();
            let imax = (0..num_states)
                .max_by(|&i, &j| kernel[s][a][i].partial_cmp(&kernel[s][a][j]).unwrap())
                .unwrap();
            kernel[s][a][imax] += 1.0 - sum;
        }
    }

    let mut cost = vec![vec![1.0; num_actions]; num_states];
    cost[0][0] = 0.0;
    for s in 1..num_states {
        cost[s][1] = 0.0;
    }

    TabularMdp::new(gamma, radius, cost, kernel)
}
