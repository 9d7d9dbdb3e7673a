//! `train` subcommand: run one of the training modes over independent
//! trials (in parallel), then write per-iteration CSV records plus a
//! percentile summary across trials.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use rayon::prelude::*;
use rmdp::dp::EvalMode;
use rmdp::grad::{objective, ObjectiveSpec};
use rmdp::mdp::garnet_generate;
use rmdp::policy::{DirectPolicy, PolicyHandle};
use rmdp::td::{robust_td_tabular, TdSchedule};
use rmdp::{
    run_robust_ac, run_rpg, run_smoothed_ac_tabular, run_srpg, AcConfig, CriticMode,
    StepSchedule, Streams, TabularMdp, TrainConfig, TrainTrace,
};

#[derive(Clone, Copy, Debug, PartialEq, ValueEnum)]
pub enum Mode {
    Rpg,
    Srpg,
    Ac,
    #[value(alias = "smoothed_ac")]
    SmoothedAc,
    #[value(alias = "nominal_pg")]
    NominalPg,
    #[value(alias = "nominal_ac")]
    NominalAc,
    #[value(alias = "td_eval")]
    TdEval,
}

impl Mode {
    fn is_nominal(self) -> bool {
        matches!(self, Mode::NominalPg | Mode::NominalAc)
    }

    fn needs_sigma(self) -> bool {
        matches!(self, Mode::Srpg | Mode::SmoothedAc)
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ScheduleKind {
    Harmonic,
    Constant,
    OneOverL,
    HalfOverL,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    mode: Mode,
    /// Generate a fresh Garnet instance per trial: `--garnet STATES ACTIONS`.
    #[arg(long, num_args = 2, value_names = ["STATES", "ACTIONS"], conflicts_with = "mdp")]
    garnet: Option<Vec<usize>>,
    /// Kernel branching factor for --garnet; defaults to STATES.
    #[arg(long)]
    branching: Option<usize>,
    /// Load a fixed MDP instead of generating Garnets.
    #[arg(long)]
    mdp: Option<PathBuf>,
    #[arg(long, default_value_t = 0.9)]
    gamma: f64,
    /// Contamination radius; overrides the radius stored in --mdp files.
    #[arg(short = 'R', long)]
    radius: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(short = 'T', long, default_value_t = 200)]
    iterations: usize,
    #[arg(long, value_enum, default_value_t = ScheduleKind::Harmonic)]
    schedule: ScheduleKind,
    /// `a` in alpha_t = a/(t+1) (harmonic) or alpha_t = a (constant).
    #[arg(long, default_value_t = 0.5)]
    step_size: f64,
    #[arg(long, default_value_t = 1)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Rollouts per gradient estimate (ac / smoothed-ac).
    #[arg(long, default_value_t = 32)]
    rollouts: usize,
    /// TD steps per critic fit (ac modes); 0 selects the exact critic.
    #[arg(long, default_value_t = 2000)]
    critic_steps: usize,
    /// Total TD steps for --mode td-eval.
    #[arg(long, default_value_t = 200_000)]
    td_steps: usize,
    /// TD step size alpha_t = a / (1+t)^power (critics and td-eval).
    #[arg(long, default_value_t = 1.0)]
    td_step_a: f64,
    #[arg(long, default_value_t = 0.55)]
    td_step_power: f64,
    /// Write policy tables every this many iterations to <output>.snapshots.json.
    #[arg(long, default_value_t = 0)]
    snapshot_period: usize,
    #[arg(long)]
    output: PathBuf,
}

struct Row {
    trial: usize,
    iteration: usize,
    metric: &'static str,
    value: f64,
}

struct TrialResult {
    rows: Vec<Row>,
    snapshots: Vec<(usize, Vec<Vec<f64>>)>,
}

fn build_schedule(kind: ScheduleKind, step_size: f64) -> StepSchedule {
    match kind {
        ScheduleKind::Harmonic => StepSchedule::Harmonic(step_size),
        ScheduleKind::Constant => StepSchedule::Constant(step_size),
        ScheduleKind::OneOverL => StepSchedule::OneOverL,
        ScheduleKind::HalfOverL => StepSchedule::HalfOverL,
    }
}

/// Environment for one trial. Garnet mode draws a fresh instance per trial;
/// file mode reuses the loaded MDP.
fn trial_mdp(args: &TrainArgs, base: &Option<TabularMdp>, trial: usize) -> Result<TabularMdp> {
    if let Some(mdp) = base {
        return Ok(mdp.clone());
    }
    let dims = args.garnet.as_ref().unwrap();
    let (states, actions) = (dims[0], dims[1]);
    let branching = args.branching.unwrap_or(states);
    let radius = args.radius.unwrap_or(0.1);
    let mut rng = Streams::new(args.seed).stream(&[0, trial as u64]);
    Ok(garnet_generate(
        states, actions, branching, args.gamma, radius, &mut rng,
    )?)
}

/// Worst-case objective per iteration. When training and evaluation use the
/// same radius this is the trace column; otherwise (nominal modes) each
/// stored policy is re-scored against the contaminated model.
fn robust_curve(
    trace: &TrainTrace,
    eval_mdp: &TabularMdp,
    train_radius: f64,
    spec: &ObjectiveSpec,
) -> Result<Vec<f64>> {
    if train_radius == eval_mdp.radius {
        return Ok(trace.rows.iter().map(|r| r.j_robust).collect());
    }
    trace
        .snapshots
        .iter()
        .map(|(_, table)| {
            let handle = PolicyHandle::Direct(DirectPolicy { table: table.clone() });
            Ok(objective(eval_mdp, &handle, spec, EvalMode::Robust)?)
        })
        .collect()
}

fn trace_rows(
    trial: usize,
    trace: &TrainTrace,
    eval_mdp: &TabularMdp,
    train_radius: f64,
    spec: &ObjectiveSpec,
) -> Result<Vec<Row>> {
    let j_robust = robust_curve(trace, eval_mdp, train_radius, spec)?;
    let horizon_reward = 1.0 / (1.0 - eval_mdp.gamma);
    let mut rows = Vec::with_capacity(trace.rows.len() * 4);
    for (row, &jr) in trace.rows.iter().zip(&j_robust) {
        rows.push(Row { trial, iteration: row.t, metric: "j_robust", value: jr });
        rows.push(Row {
            trial,
            iteration: row.t,
            metric: "worst_case_reward",
            value: horizon_reward - jr,
        });
        if let Some(js) = row.j_sigma {
            rows.push(Row { trial, iteration: row.t, metric: "j_sigma", value: js });
        }
        rows.push(Row { trial, iteration: row.t, metric: "grad_norm", value: row.grad_norm });
        rows.push(Row {
            trial,
            iteration: row.t,
            metric: "gradient_mapping_norm",
            value: row.gradient_mapping_norm,
        });
    }
    Ok(rows)
}

fn run_trial(args: &TrainArgs, base: &Option<TabularMdp>, trial: usize) -> Result<TrialResult> {
    let eval_mdp = {
        let mut mdp = trial_mdp(args, base, trial)?;
        if let Some(r) = args.radius {
            mdp = mdp.with_radius(r);
        }
        mdp
    };
    let spec = ObjectiveSpec::uniform(eval_mdp.num_states);
    let schedule = build_schedule(args.schedule, args.step_size);
    let train_mdp = if args.mode.is_nominal() {
        eval_mdp.with_radius(0.0)
    } else {
        eval_mdp.clone()
    };
    let init = DirectPolicy::uniform(eval_mdp.num_states, eval_mdp.num_actions);
    let trial_seed = Streams::new(args.seed).child(1).child(trial as u64).master();
    let td_schedule = TdSchedule::Polynomial { a: args.td_step_a, power: args.td_step_power };

    if args.mode == Mode::TdEval {
        let handle = PolicyHandle::Direct(init);
        let q = robust_td_tabular(
            &eval_mdp,
            &handle,
            &spec.rho,
            args.td_steps,
            args.sigma,
            td_schedule,
            Streams::new(trial_seed).stream(&[0]),
        )?;
        let pi = handle.prob_table(eval_mdp.num_states);
        let v = q.value_under(&pi);
        let j: f64 = spec.rho.iter().zip(&v.values).map(|(r, x)| r * x).sum();
        let rows = vec![
            Row { trial, iteration: 0, metric: "j_estimate", value: j },
            Row {
                trial,
                iteration: 0,
                metric: "worst_case_reward",
                value: 1.0 / (1.0 - eval_mdp.gamma) - j,
            },
        ];
        return Ok(TrialResult { rows, snapshots: vec![] });
    }

    let trace = match args.mode {
        Mode::Rpg | Mode::NominalPg | Mode::Srpg => {
            let mut config = TrainConfig::new(args.iterations, schedule);
            config.seed = trial_seed;
            config.snapshot_period = 1;
            if args.mode == Mode::Srpg {
                let sigma = args.sigma.context("--mode srpg requires --sigma")?;
                config = config.with_sigma(sigma);
                run_srpg(&train_mdp, &init, &spec, &config)?.1
            } else {
                run_rpg(&train_mdp, &init, &spec, &config)?.1
            }
        }
        Mode::Ac | Mode::NominalAc | Mode::SmoothedAc => {
            let critic = if args.critic_steps == 0 {
                CriticMode::Exact
            } else {
                CriticMode::Td { steps: args.critic_steps, schedule: td_schedule }
            };
            let mut config = AcConfig::new(args.iterations, args.rollouts, critic);
            config.schedule = schedule;
            config.seed = trial_seed;
            config.snapshot_period = 1;
            let handle = PolicyHandle::Direct(init);
            if args.mode == Mode::SmoothedAc {
                let sigma = args.sigma.context("--mode smoothed-ac requires --sigma")?;
                config = config.with_sigma(sigma);
                run_smoothed_ac_tabular(&train_mdp, &handle, &spec, &config)?.1
            } else {
                run_robust_ac(&train_mdp, &handle, &spec, &config)?.1
            }
        }
        Mode::TdEval => unreachable!(),
    };

    let rows = trace_rows(trial, &trace, &eval_mdp, train_mdp.radius, &spec)?;
    let snapshots = if args.snapshot_period > 0 {
        trace
            .snapshots
            .into_iter()
            .filter(|(t, _)| t % args.snapshot_period == 0)
            .collect()
    } else {
        vec![]
    };
    Ok(TrialResult { rows, snapshots })
}

fn fmt_value(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_csv(path: &Path, rows: &[Row]) -> Result<()> {
    let mut out = String::from("trial,iteration,metric,value\n");
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            row.trial,
            row.iteration,
            row.metric,
            fmt_value(row.value)
        ));
    }
    std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = p * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

fn write_summary(path: &Path, rows: &[Row]) -> Result<()> {
    // Group across trials, keyed by iteration then metric.
    let mut groups: BTreeMap<(usize, &'static str), Vec<f64>> = BTreeMap::new();
    for row in rows {
        groups
            .entry((row.iteration, row.metric))
            .or_default()
            .push(row.value);
    }
    let mut out = String::from("iteration,metric,p05,p50,p95\n");
    for ((iteration, metric), mut values) in groups {
        values.sort_by(|a, b| a.total_cmp(b));
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            iteration,
            metric,
            fmt_value(percentile(&values, 0.05)),
            fmt_value(percentile(&values, 0.50)),
            fmt_value(percentile(&values, 0.95)),
        ));
    }
    std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    path.with_file_name(format!("{stem}.{suffix}"))
}

pub fn run(args: &TrainArgs) -> Result<()> {
    if args.garnet.is_none() && args.mdp.is_none() {
        bail!("provide an environment: --garnet STATES ACTIONS or --mdp FILE");
    }
    if args.trials == 0 {
        bail!("--trials must be positive");
    }
    if args.needs_sigma_missing() {
        bail!("--mode {:?} requires --sigma", args.mode);
    }
    let base = match &args.mdp {
        Some(path) => Some(TabularMdp::load(path)?),
        None => None,
    };

    let results: Vec<TrialResult> = (0..args.trials)
        .into_par_iter()
        .map(|trial| run_trial(args, &base, trial))
        .collect::<Result<Vec<_>>>()?;

    let rows: Vec<Row> = results.iter().flat_map(|r| r.rows.iter()).map(|r| Row {
        trial: r.trial,
        iteration: r.iteration,
        metric: r.metric,
        value: r.value,
    }).collect();
    write_csv(&args.output, &rows)?;
    write_summary(&sibling(&args.output, "summary.csv"), &rows)?;

    if args.snapshot_period > 0 {
        let snapshots: Vec<_> = results
            .iter()
            .enumerate()
            .map(|(trial, r)| serde_json::json!({ "trial": trial, "snapshots": r.snapshots }))
            .collect();
        let path = sibling(&args.output, "snapshots.json");
        std::fs::write(&path, serde_json::to_string_pretty(&snapshots)?)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    eprintln!(
        "wrote {} rows for {} trial(s) to {}",
        rows.len(),
        args.trials,
        args.output.display()
    );
    Ok(())
}

impl TrainArgs {
    fn needs_sigma_missing(&self) -> bool {
        self.mode.needs_sigma() && self.sigma.is_none()
    }
}
