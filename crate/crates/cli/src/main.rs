//! Experiment driver: generate Garnet instances, train robust/nominal
//! agents, evaluate stored policies under the worst case, verify library
//! invariants, and print the closed-form constants.

mod train;
mod verify;

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rmdp::dp::EvalMode;
use rmdp::grad::{objective, ObjectiveSpec};
use rmdp::mdp::garnet_generate;
use rmdp::policy::{DirectPolicy, PolicyHandle};
use rmdp::td::{robust_td_tabular, TdSchedule};
use rmdp::{compute_constants, ConstantInputs, Streams, TabularMdp};

#[derive(Parser)]
#[command(name = "robustmdp", about = "Robust MDP training and evaluation harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random Garnet MDP and write it as JSON.
    GarnetGen(GarnetGenArgs),
    /// Train an agent and write per-iteration CSV records.
    Train(train::TrainArgs),
    /// Score a stored policy on an MDP, exactly or by robust TD.
    Evaluate(EvaluateArgs),
    /// Run the invariant battery; nonzero exit on any failure.
    Verify(VerifyArgs),
    /// Print the closed-form constants for the given problem parameters.
    Constants(ConstantsArgs),
}

#[derive(Args)]
struct GarnetGenArgs {
    #[arg(long)]
    states: usize,
    #[arg(long)]
    actions: usize,
    /// Nonzero entries per kernel row; defaults to fully supported rows.
    #[arg(long)]
    branching: Option<usize>,
    #[arg(long, default_value_t = 0.9)]
    gamma: f64,
    #[arg(short = 'R', long, default_value_t = 0.1)]
    radius: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum EvalMethod {
    Exact,
    Td,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    mdp: PathBuf,
    /// Policy JSON ({"table": [[...]]}); uniform when omitted.
    #[arg(long)]
    policy: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = EvalMethod::Exact)]
    method: EvalMethod,
    /// TD sample size per repetition.
    #[arg(long, default_value_t = 200)]
    samples: usize,
    #[arg(long, default_value_t = 30)]
    repeats: usize,
    #[arg(long)]
    sigma: Option<f64>,
    /// TD step size alpha_t = a / (1+t)^power.
    #[arg(long, default_value_t = 1.0)]
    td_step_a: f64,
    #[arg(long, default_value_t = 0.55)]
    td_step_power: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct VerifyArgs {
    /// Reduced sample counts for a quick run.
    #[arg(long)]
    small_suite: bool,
}

#[derive(Args)]
struct ConstantsArgs {
    #[arg(long, default_value_t = 0.9)]
    gamma: f64,
    #[arg(short = 'R', long, default_value_t = 0.1)]
    radius: f64,
    #[arg(long, default_value_t = 10.0)]
    sigma: f64,
    #[arg(long)]
    states: usize,
    #[arg(long)]
    actions: usize,
    #[arg(long, default_value_t = 1.0)]
    k_pi: f64,
    #[arg(long, default_value_t = 0.0)]
    l_pi: f64,
    #[arg(long)]
    mu_min: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    eps_est: f64,
}

fn init_thread_pool() -> Result<()> {
    if let Ok(value) = std::env::var("ROBUSTMDP_THREADS") {
        let threads: usize = value
            .parse()
            .context("ROBUSTMDP_THREADS must be a positive integer")?;
        if threads == 0 {
            bail!("ROBUSTMDP_THREADS must be positive");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("thread pool init failed")?;
    }
    Ok(())
}

fn load_policy(path: Option<&PathBuf>, mdp: &TabularMdp) -> Result<DirectPolicy> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading policy {}", p.display()))?;
            let policy: DirectPolicy = serde_json::from_str(&text)?;
            if policy.num_states() != mdp.num_states || policy.num_actions() != mdp.num_actions {
                bail!("policy shape does not match the MDP");
            }
            Ok(policy)
        }
        None => Ok(DirectPolicy::uniform(mdp.num_states, mdp.num_actions)),
    }
}

fn cmd_garnet_gen(args: &GarnetGenArgs) -> Result<()> {
    let branching = args.branching.unwrap_or(args.states);
    let mut rng = Streams::new(args.seed).stream(&[0]);
    let mdp = garnet_generate(
        args.states,
        args.actions,
        branching,
        args.gamma,
        args.radius,
        &mut rng,
    )?;
    mdp.save(&args.output)?;
    eprintln!("wrote {}", args.output.display());
    Ok(())
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let mdp = TabularMdp::load(&args.mdp)?;
    let policy = load_policy(args.policy.as_ref(), &mdp)?;
    let handle = PolicyHandle::Direct(policy);
    let spec = ObjectiveSpec::uniform(mdp.num_states);

    let values: Vec<f64> = match args.method {
        EvalMethod::Exact => {
            let mode = match args.sigma {
                Some(s) => EvalMode::Smoothed(s),
                None => EvalMode::Robust,
            };
            vec![objective(&mdp, &handle, &spec, mode)?]
        }
        EvalMethod::Td => {
            let streams = Streams::new(args.seed);
            let pi = handle.prob_table(mdp.num_states);
            (0..args.repeats)
                .map(|rep| {
                    let q = robust_td_tabular(
                        &mdp,
                        &handle,
                        &spec.rho,
                        args.samples,
                        args.sigma,
                        TdSchedule::Polynomial { a: args.td_step_a, power: args.td_step_power },
                        streams.stream(&[rep as u64]),
                    )?;
                    let v = q.value_under(&pi);
                    Ok(spec.rho.iter().zip(&v.values).map(|(r, x)| r * x).sum())
                })
                .collect::<rmdp::Result<Vec<f64>>>()?
        }
    };
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let out = serde_json::json!({ "mean": mean, "values": values });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn cmd_constants(args: &ConstantsArgs) -> Result<()> {
    let inputs = ConstantInputs {
        k_pi: args.k_pi,
        l_pi: args.l_pi,
        mu_min: args.mu_min.unwrap_or(1.0 / args.states as f64),
        gamma: args.gamma,
        radius: args.radius,
        sigma: args.sigma,
        num_states: args.states,
        num_actions: args.actions,
        eps_est: args.eps_est,
    };
    let constants = compute_constants(&inputs)?;
    println!("{}", serde_json::to_string_pretty(&constants)?);
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    let result = init_thread_pool().and_then(|_| match &cli.command {
        Command::GarnetGen(args) => cmd_garnet_gen(args),
        Command::Train(args) => train::run(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Verify(args) => verify::run(args.small_suite),
        Command::Constants(args) => cmd_constants(args),
    });
    if let Err(err) = result {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}
