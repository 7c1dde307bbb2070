//! `lll`: simulate lifelong learning runs, exercise the lower-bound
//! construction, refine feature sets and sweep sample complexity.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 usage or configuration error,
//! 3 invariant violation, 4 solver non-convergence.

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand};

use config::Settings;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Config(String),
    Invariant(String),
    Solver(String),
    Io(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            Self::Io(_) => 1,
            Self::Usage(_) | Self::Config(_) => 2,
            Self::Invariant(_) => 3,
            Self::Solver(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Usage(m) | Self::Config(m) => write!(f, "configuration error: {m}"),
            Self::Invariant(m) => write!(f, "invariant violated: {m}"),
            Self::Solver(m) => write!(f, "solver did not converge: {m}"),
            Self::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl From<lll_core::Error> for CliError {
    fn from(e: lll_core::Error) -> Self {
        match e {
            lll_core::Error::Solver(m) => Self::Solver(m),
            other => Self::Config(other.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "lll",
    version,
    about = "Lifelong learning of shared linear representations"
)]
struct Cli {
    /// Directory for CSV, report and config.resolved files.
    #[arg(
        long,
        global = true,
        env = "LLL_OUTPUT_DIR",
        default_value = "lll-output"
    )]
    output_dir: PathBuf,
    /// Worker threads for parallel trials (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run Basic LLL, LLL-RR and/or joint training on planted problems.
    Simulate(SimulateArgs),
    /// Exercise the adversarial lower-bound construction.
    Lowerbound(LowerboundArgs),
    /// Fit a low-dimensional subspace to a feature file.
    Refine(RefineArgs),
    /// Measure total samples across a grid of d or epsilon.
    Sweep(SweepArgs),
}

/// Run settings; every flag is also a config-file key (dashes become underscores).
#[derive(Args, Default)]
struct RunFlags {
    #[arg(long)]
    d: Option<String>,
    #[arg(long)]
    k: Option<String>,
    #[arg(long)]
    m: Option<String>,
    /// Samples per task for joint training.
    #[arg(long = "N", visible_alias = "n-per-task")]
    n_per_task: Option<String>,
    #[arg(long)]
    epsilon: Option<String>,
    /// Accuracy of new features (`auto`: epsilon / (acc_constant sqrt k)).
    #[arg(long)]
    epsilon_acc: Option<String>,
    #[arg(long)]
    acc_constant: Option<String>,
    /// Sample-complexity constant of the single-task learner.
    #[arg(long)]
    c_s: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    trials: Option<String>,
    /// basic, rr, joint, a comma list, or all.
    #[arg(long)]
    mode: Option<String>,
    /// oracle or monte_carlo.
    #[arg(long)]
    check_mode: Option<String>,
    /// on_new_feature or threshold(R).
    #[arg(long)]
    refine_every: Option<String>,
    /// full or minimal.
    #[arg(long)]
    rr_rounding: Option<String>,
    /// ipm or mwu.
    #[arg(long)]
    solver: Option<String>,
    #[arg(long)]
    solver_max_iters: Option<String>,
    #[arg(long)]
    solver_tol: Option<String>,
    #[arg(long)]
    perceptron_passes: Option<String>,
    /// Separation angle of the effective-dimension diagnostic.
    #[arg(long)]
    gamma: Option<String>,
}

impl RunFlags {
    fn pairs(self) -> Vec<(&'static str, Option<String>)> {
        vec![
            ("d", self.d),
            ("k", self.k),
            ("m", self.m),
            ("N", self.n_per_task),
            ("epsilon", self.epsilon),
            ("epsilon_acc", self.epsilon_acc),
            ("acc_constant", self.acc_constant),
            ("c_s", self.c_s),
            ("seed", self.seed),
            ("trials", self.trials),
            ("mode", self.mode),
            ("check_mode", self.check_mode),
            ("refine_every", self.refine_every),
            ("rr_rounding", self.rr_rounding),
            ("solver", self.solver),
            ("solver_max_iters", self.solver_max_iters),
            ("solver_tol", self.solver_tol),
            ("perceptron_passes", self.perceptron_passes),
            ("gamma", self.gamma),
        ]
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// key=value settings file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    run: RunFlags,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    run: RunFlags,
    /// Comma-separated ambient dimensions.
    #[arg(long)]
    d_grid: Option<String>,
    /// Comma-separated target errors.
    #[arg(long)]
    epsilon_grid: Option<String>,
}

#[derive(Args)]
struct LowerboundArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    k: Option<String>,
    /// Random combination tasks (`auto`: min(2^(k/2), 4096)).
    #[arg(long)]
    n_random: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Target error; the default allocation is epsilon / sqrt(k) per basis task.
    #[arg(long)]
    epsilon: Option<String>,
    /// Explicit comma-separated per-task errors.
    #[arg(long)]
    eps_vector: Option<String>,
    /// Random tasks to measure (`auto`: n_random).
    #[arg(long)]
    trials: Option<String>,
    /// Input dimension used for costing.
    #[arg(long)]
    d_cost: Option<String>,
}

#[derive(Args)]
struct RefineArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Feature file: one whitespace-separated vector per line.
    #[arg(long)]
    input: Option<String>,
    #[arg(long)]
    k: Option<String>,
    /// Rounding keeps min(c k - 1, rank) eigenvectors.
    #[arg(long)]
    c: Option<String>,
    #[arg(long)]
    solver: Option<String>,
    #[arg(long)]
    solver_max_iters: Option<String>,
    #[arg(long, visible_alias = "tol")]
    solver_tol: Option<String>,
    /// Where to write the rounded basis (default: OUTPUT_DIR/basis.txt).
    #[arg(long)]
    basis_out: Option<String>,
    /// Also write the SDP solution to this file.
    #[arg(long)]
    dump_sdp: Option<String>,
}

fn usage(name: &str) -> String {
    let mut cmd = Cli::command();
    cmd.build();
    match cmd.find_subcommand_mut(name) {
        Some(sub) => sub.render_usage().to_string(),
        None => cmd.render_usage().to_string(),
    }
}

fn dispatch(command: Command, out: &Path) -> Result<(), CliError> {
    use commands::*;
    match command {
        Command::Simulate(a) => {
            let s = Settings::resolve(
                RUN_KEYS,
                &run_defaults("all"),
                a.config.as_deref(),
                &a.run.pairs(),
            )?;
            simulate(&s, out)
        }
        Command::Sweep(a) => {
            let mut flags = a.run.pairs();
            flags.push(("d_grid", a.d_grid));
            flags.push(("epsilon_grid", a.epsilon_grid));
            let s = Settings::resolve(
                SWEEP_KEYS,
                &run_defaults("basic"),
                a.config.as_deref(),
                &flags,
            )?;
            sweep(&s, out)
        }
        Command::Lowerbound(a) => {
            let defaults = [
                ("k", "16".to_string()),
                ("n_random", config::AUTO.to_string()),
                ("seed", "0".to_string()),
                ("epsilon", "0.1".to_string()),
                ("eps_vector", config::AUTO.to_string()),
                ("trials", config::AUTO.to_string()),
                ("d_cost", "100".to_string()),
            ];
            let flags = [
                ("k", a.k),
                ("n_random", a.n_random),
                ("seed", a.seed),
                ("epsilon", a.epsilon),
                ("eps_vector", a.eps_vector),
                ("trials", a.trials),
                ("d_cost", a.d_cost),
            ];
            let s = Settings::resolve(LOWERBOUND_KEYS, &defaults, a.config.as_deref(), &flags)?;
            lowerbound(&s, out)
        }
        Command::Refine(a) => {
            let defaults = [
                ("c", "2".to_string()),
                ("solver", "ipm".to_string()),
                ("solver_max_iters", config::AUTO.to_string()),
                ("solver_tol", lll_core::refinement::DEFAULT_TOL.to_string()),
                ("basis_out", config::AUTO.to_string()),
            ];
            let flags = [
                ("input", a.input),
                ("k", a.k),
                ("c", a.c),
                ("solver", a.solver),
                ("solver_max_iters", a.solver_max_iters),
                ("solver_tol", a.solver_tol),
                ("basis_out", a.basis_out),
                ("dump_sdp", a.dump_sdp),
            ];
            let s = Settings::resolve(REFINE_KEYS, &defaults, a.config.as_deref(), &flags)?;
            refine(&s, out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            eprintln!("configuration error: --jobs must be positive");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
        {
            eprintln!("warning: could not size the worker pool: {e}");
        }
    }
    let name = match &cli.command {
        Command::Simulate(_) => "simulate",
        Command::Lowerbound(_) => "lowerbound",
        Command::Refine(_) => "refine",
        Command::Sweep(_) => "sweep",
    };
    match dispatch(cli.command, &cli.output_dir) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            if matches!(e, CliError::Usage(_)) {
                eprintln!("\n{}", usage(name));
                eprintln!("For more information, try '--help'.");
            }
            ExitCode::from(e.code())
        }
    }
}
