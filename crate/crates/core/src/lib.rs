//! Robust Markov decision processes under R-contamination uncertainty:
//! exact robust dynamic programming, robust policy (sub)gradients and their
//! smoothed variants, robust temporal-difference evaluation, and
//! actor-critic training.

pub mod ac;
pub mod constants;
pub mod dp;
pub mod error;
pub mod grad;
pub mod mdp;
pub mod optim;
pub mod policy;
pub mod rng;
pub mod simplex;
pub mod td;

pub use ac::{run_robust_ac, run_smoothed_ac_tabular, AcConfig, CriticMode};
pub use constants::{compute_constants, ConstantInputs, RobustConstants};
pub use dp::{solve_value, EvalMode, QTable, ValueTable};
pub use error::{Error, Result};
pub use grad::{grad_j_sigma, objective, psi_subgradient, GradientEstimate, ObjectiveSpec};
pub use mdp::{garnet_generate, TabularMdp};
pub use optim::{
    brute_force_optimum, run_rpg, run_srpg, StepSchedule, TrainConfig, TrainTrace,
};
pub use policy::{DirectPolicy, MlpPolicy, PolicyHandle};
pub use rng::Streams;
pub use td::{robust_td_fa, robust_td_tabular, MlpCritic, TdSchedule};
