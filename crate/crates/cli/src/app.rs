//! Subcommand dispatch and the exit-code contract.

use std::ffi::OsString;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use pinn_core::network::{Checkpoint, CheckpointError};
use pinn_core::optim::OptimizerKind;
use pinn_core::problems::{ProblemSpec, ShmParams, WaveParams};
use pinn_core::trainer::{self, run_stem, Init, RunOutput, StopReason, TrainError};

use crate::config::{ConfigError, FileConfig, Overrides};
use crate::recipes::{self, RECIPES};

pub const EXIT_CONVERGED: i32 = 0;
pub const EXIT_BUDGET: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_INCOMPATIBLE: i32 = 3;
pub const EXIT_DIVERGED: i32 = 4;

pub const OUT_DIR_ENV: &str = "PINN_FORGE_OUT";

#[derive(Debug, Parser)]
#[command(name = "pinn-forge", version, about = "Train physics-informed networks on the oscillator and wave benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train from a config file.
    Train(TrainArgs),
    /// Fine-tune a saved network on the configured problem.
    Transfer(TrainArgs),
    /// Relative L2 error and field dump of a checkpoint.
    Eval(EvalArgs),
    /// Run a named experiment end to end.
    Reproduce(ReproduceArgs),
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// Output directory (falls back to $PINN_FORGE_OUT, then ./runs).
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Worker threads for loss evaluation.
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    optimizer: Option<OptimizerKind>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    target_loss: Option<f64>,
    #[arg(long)]
    base_checkpoint: Option<PathBuf>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Problem to evaluate on; defaults to the one recorded in the checkpoint.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Debug, Args)]
struct ReproduceArgs {
    /// One of: shm-sweep, shm-transfer-chain, wave-c1, wave-transfer-chain.
    recipe: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    common: CommonArgs,
}

/// A failure with its exit code.
#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::usage(e.to_string())
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::usage(format!("i/o: {e}"))
    }
}

fn checkpoint_code(e: &CheckpointError) -> i32 {
    match e {
        CheckpointError::Io(_) => EXIT_USAGE,
        _ => EXIT_INCOMPATIBLE,
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        let code = match &e {
            TrainError::Architecture { .. } => EXIT_INCOMPATIBLE,
            TrainError::Checkpoint(c) => checkpoint_code(c),
            TrainError::Diverged { .. } => EXIT_DIVERGED,
            TrainError::Curriculum { source, .. } => Failure::from_ref(source),
            _ => EXIT_USAGE,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl Failure {
    fn from_ref(e: &TrainError) -> i32 {
        match e {
            TrainError::Architecture { .. } => EXIT_INCOMPATIBLE,
            TrainError::Checkpoint(c) => checkpoint_code(c),
            TrainError::Diverged { .. } => EXIT_DIVERGED,
            TrainError::Curriculum { source, .. } => Failure::from_ref(source),
            _ => EXIT_USAGE,
        }
    }
}

fn out_dir(common: &CommonArgs) -> PathBuf {
    common
        .out_dir
        .clone()
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_CONVERGED };
        }
    };
    let threads = match &cli.command {
        Command::Train(a) | Command::Transfer(a) => a.common.threads,
        Command::Eval(a) => a.common.threads,
        Command::Reproduce(a) => a.common.threads,
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads.max(1)).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start thread pool: {e}");
            return EXIT_USAGE;
        }
    };
    let result = pool.install(|| match cli.command {
        Command::Train(a) => cmd_train(a, false),
        Command::Transfer(a) => cmd_train(a, true),
        Command::Eval(a) => cmd_eval(a),
        Command::Reproduce(a) => cmd_reproduce(a),
    });
    match result {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn cmd_train(args: TrainArgs, transfer: bool) -> Result<i32, Failure> {
    if transfer && args.base_checkpoint.is_none() {
        return Err(Failure::usage("transfer requires --base-checkpoint"));
    }
    let file = FileConfig::load(&args.config)?;
    let overrides = Overrides {
        seed: args.seed,
        optimizer: args.optimizer,
        max_epochs: args.max_epochs,
        target_loss: args.target_loss,
        base_checkpoint: args.base_checkpoint.clone(),
    };
    let resolved = file.resolve(&overrides)?;
    let mut cfg = resolved.train;
    if let Init::FromCheckpoint(path) = &cfg.init {
        // load up front so a bad checkpoint maps to its own exit code
        let chk = trainer::load_compatible(path, &cfg.layer_dims)?;
        if chk.params.input_width() != cfg.problem.input_dim() {
            return Err(Failure {
                code: EXIT_INCOMPATIBLE,
                message: format!("checkpoint is for a {} problem", chk.meta.problem_kind),
            });
        }
        cfg.init = Init::Params(chk.params);
    }
    let outcome = trainer::train(&cfg)?;
    let out = RunOutput {
        dir: out_dir(&args.common),
        wall_time_in_metrics: resolved.wall_time_in_metrics,
    };
    let files = out.persist(&outcome)?;
    println!(
        "{} {} {}: {:?} after {} epochs, final loss {:.3e}, relative L2 error {:.2}%",
        cfg.problem.kind(),
        cfg.problem.constant(),
        cfg.optimizer.kind().name(),
        outcome.stop,
        outcome.metrics.len(),
        outcome.checkpoint.meta.final_loss,
        outcome.final_l2
    );
    println!("checkpoint: {}", files.checkpoint.display());
    println!("metrics: {}", files.metrics.display());
    Ok(match outcome.stop {
        StopReason::Converged => EXIT_CONVERGED,
        StopReason::BudgetExhausted | StopReason::Stalled => EXIT_BUDGET,
    })
}

fn problem_from_meta(chk: &Checkpoint) -> Result<ProblemSpec, Failure> {
    let c = chk.meta.problem_constant;
    let bad = |e: pinn_core::problems::ProblemError| Failure {
        code: EXIT_INCOMPATIBLE,
        message: format!("checkpoint metadata: {e}"),
    };
    match chk.meta.problem_kind.as_str() {
        "shm" => Ok(ProblemSpec::Shm(ShmParams::from_omega0(c).map_err(bad)?)),
        "wave" => Ok(ProblemSpec::Wave(WaveParams::new(c).map_err(bad)?)),
        other => Err(Failure {
            code: EXIT_INCOMPATIBLE,
            message: format!("checkpoint names unknown problem {other:?}"),
        }),
    }
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, Failure> {
    Checkpoint::load(path).map_err(|e| Failure {
        code: checkpoint_code(&e),
        message: format!("{}: {e}", path.display()),
    })
}

fn cmd_eval(args: EvalArgs) -> Result<i32, Failure> {
    let chk = load_checkpoint(&args.checkpoint)?;
    let problem = match &args.config {
        Some(path) => FileConfig::load(path)?.problem()?,
        None => problem_from_meta(&chk)?,
    };
    let dump = trainer::evaluate(&chk.params, &problem)?;
    let dir = out_dir(&args.common);
    fs::create_dir_all(&dir)?;
    let mut meta = chk.meta.clone();
    meta.problem_kind = problem.kind().to_string();
    meta.problem_constant = problem.constant();
    let path = dir.join(format!("{}_field.csv", run_stem(&meta)));
    dump.write_csv(io::BufWriter::new(fs::File::create(&path)?))?;
    println!("{:.2}", dump.l2_rel_error);
    eprintln!("field: {}", path.display());
    Ok(EXIT_CONVERGED)
}

fn cmd_reproduce(args: ReproduceArgs) -> Result<i32, Failure> {
    if !RECIPES.contains(&args.recipe.as_str()) {
        return Err(Failure::usage(format!(
            "unknown recipe {:?}; available: {}",
            args.recipe,
            RECIPES.join(", ")
        )));
    }
    let dir = out_dir(&args.common).join(&args.recipe);
    let out = RunOutput::new(&dir);
    let rows = recipes::run_recipe(&args.recipe, args.seed, &out)?;
    fs::create_dir_all(&dir)?;
    recipes::write_runs_csv(&rows, io::BufWriter::new(fs::File::create(dir.join("runs.csv"))?))?;
    recipes::write_table_csv(&rows, io::BufWriter::new(fs::File::create(dir.join("summary.csv"))?))?;
    for r in &rows {
        println!(
            "{} {} {}: {} epochs, loss {:.3e}, relative L2 {:.3}%",
            r.problem, r.constant, r.method, r.epochs, r.final_loss, r.l2_rel_error
        );
    }
    let all = rows.iter().all(|r| r.converged);
    Ok(if all { EXIT_CONVERGED } else { EXIT_BUDGET })
}
