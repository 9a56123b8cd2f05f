//! Named end-to-end experiments.
//!
//! The settings here are the calibrated ones used by the acceptance suite;
//! they differ from the bare problem defaults where noted.

use std::io::{self, Write};

use pinn_core::optim::{AdamConfig, LbfgsConfig};
use pinn_core::problems::{ProblemSpec, ShmParams, WaveParams};
use pinn_core::trainer::{
    run_curriculum, train, CurriculumSpec, OptimizerChoice, RunOutput, StopReason, TrainConfig, TrainError, TrainOutcome,
};

pub const RECIPES: [&str; 4] = ["shm-sweep", "shm-transfer-chain", "wave-c1", "wave-transfer-chain"];

pub const SHM_SWEEP: [f64; 5] = [20.0, 30.0, 40.0, 50.0, 60.0];
pub const SHM_CHAIN: [f64; 3] = [40.0, 50.0, 60.0];
pub const WAVE_CHAIN: [f64; 4] = [1.0, 1.5, 2.0, 4.0];

/// Interior points for oscillator runs above 30 rad/s. With the default 100
/// the optimizer finds a spurious solution that drops to zero between two
/// collocation points near t = 0.
pub const SHM_TRANSFER_POINTS: usize = 400;

/// L-BFGS history for the oscillator; 10 pairs stall at 60 rad/s.
pub const SHM_LBFGS_MEMORY: usize = 100;

pub const SHM_BASE_OMEGA: f64 = 30.0;

fn shm(omega0: f64) -> ProblemSpec {
    ProblemSpec::Shm(ShmParams::from_omega0(omega0).expect("recipe frequencies are under-damped"))
}

fn wave(c: f64) -> ProblemSpec {
    ProblemSpec::Wave(WaveParams::new(c).expect("recipe velocities are positive"))
}

pub fn shm_lbfgs() -> LbfgsConfig {
    LbfgsConfig {
        memory: SHM_LBFGS_MEMORY,
        ..Default::default()
    }
}

/// Cold-start hybrid run: 1 000 Adam epochs, then L-BFGS, 10 000 in total.
pub fn shm_hybrid(omega0: f64, seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig::new(
        shm(omega0),
        OptimizerChoice::Hybrid {
            adam_epochs: 1_000,
            lbfgs_epochs: 9_000,
            adam: AdamConfig::default(),
            lbfgs: shm_lbfgs(),
        },
        10_000,
    );
    cfg.target_loss = 1e-4;
    cfg.seed = seed;
    cfg
}

/// Cold-start single-optimizer run for the sweep.
pub fn shm_cold(omega0: f64, optimizer: OptimizerChoice, max_epochs: usize, seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig::new(shm(omega0), optimizer, max_epochs);
    if omega0 > SHM_BASE_OMEGA {
        cfg.plan.n_interior = SHM_TRANSFER_POINTS;
    }
    cfg.target_loss = 1e-4;
    cfg.seed = seed;
    cfg
}

/// The 30 rad/s source model, trained with Adam.
pub fn shm_base(seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig::new(shm(SHM_BASE_OMEGA), OptimizerChoice::Adam(AdamConfig { lr: 3e-3, ..Default::default() }), 30_000);
    cfg.target_loss = 1e-3;
    cfg.seed = seed;
    cfg
}

/// L-BFGS fine-tuning stage at `omega0`; the caller supplies the warm start.
pub fn shm_transfer_stage(omega0: f64, max_epochs: usize, target_loss: f64) -> TrainConfig {
    let mut cfg = TrainConfig::new(shm(omega0), OptimizerChoice::Lbfgs(shm_lbfgs()), max_epochs);
    cfg.plan.n_interior = SHM_TRANSFER_POINTS;
    cfg.target_loss = target_loss;
    cfg
}

pub const SHM_CHAIN_EPOCHS: usize = 10_000;
pub const SHM_CHAIN_TARGET: f64 = 5e-4;

pub fn wave_stage(c: f64, max_epochs: usize, target_loss: f64, seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig::new(wave(c), OptimizerChoice::Lbfgs(LbfgsConfig::default()), max_epochs);
    cfg.target_loss = target_loss;
    cfg.seed = seed;
    cfg
}

/// Same as [`wave_stage`] with the longer L-BFGS history used by the chain.
pub fn wave_chain_stage(c: f64, seed: u64) -> TrainConfig {
    let mut cfg = wave_stage(c, WAVE_CHAIN_EPOCHS, WAVE_CHAIN_TARGET, seed);
    cfg.optimizer = OptimizerChoice::Lbfgs(LbfgsConfig {
        memory: WAVE_CHAIN_MEMORY,
        ..Default::default()
    });
    cfg
}

pub const WAVE_C1_EPOCHS: usize = 5_000;
pub const WAVE_CHAIN_MEMORY: usize = 100;
pub const WAVE_CHAIN_EPOCHS: usize = 10_000;
pub const WAVE_CHAIN_TARGET: f64 = 1e-4;

/// One line of a recipe summary.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub problem: &'static str,
    pub constant: f64,
    pub method: String,
    pub epochs: usize,
    pub final_loss: f64,
    pub l2_rel_error: f64,
    pub converged: bool,
}

impl SummaryRow {
    pub fn from_outcome(method: impl Into<String>, cfg: &TrainConfig, outcome: &TrainOutcome) -> Self {
        Self {
            problem: cfg.problem.kind(),
            constant: cfg.problem.constant(),
            method: method.into(),
            epochs: outcome.metrics.len(),
            final_loss: outcome.checkpoint.meta.final_loss,
            l2_rel_error: outcome.final_l2,
            converged: outcome.stop == StopReason::Converged,
        }
    }
}

/// Long-form summary: one row per run.
pub fn write_runs_csv<W: Write>(rows: &[SummaryRow], mut w: W) -> io::Result<()> {
    writeln!(w, "problem,constant,method,epochs,final_loss,l2_rel_error,converged")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.problem, r.constant, r.method, r.epochs, r.final_loss, r.l2_rel_error, r.converged
        )?;
    }
    Ok(())
}

/// Wide summary: one row per constant, one relative-error column per
/// method (blank where a method was not run).
pub fn write_table_csv<W: Write>(rows: &[SummaryRow], mut w: W) -> io::Result<()> {
    let mut methods: Vec<&str> = Vec::new();
    let mut constants: Vec<f64> = Vec::new();
    for r in rows {
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
        if !constants.contains(&r.constant) {
            constants.push(r.constant);
        }
    }
    writeln!(w, "constant,{}", methods.join(","))?;
    for c in constants {
        let cells: Vec<String> = methods
            .iter()
            .map(|m| {
                rows.iter()
                    .find(|r| r.constant == c && r.method == *m)
                    .map(|r| format!("{:.3}", r.l2_rel_error))
                    .unwrap_or_default()
            })
            .collect();
        writeln!(w, "{c},{}", cells.join(","))?;
    }
    Ok(())
}

/// Runs a recipe, persisting every run under `out`.
pub fn run_recipe(name: &str, seed: u64, out: &RunOutput) -> Result<Vec<SummaryRow>, TrainError> {
    let mut rows = Vec::new();
    let mut persist = |method: &str, cfg: &TrainConfig, outcome: &TrainOutcome| -> Result<(), TrainError> {
        out.persist(outcome)?;
        rows.push(SummaryRow::from_outcome(method, cfg, outcome));
        Ok(())
    };
    match name {
        "shm-sweep" => {
            for w0 in SHM_SWEEP {
                let adam = shm_cold(w0, OptimizerChoice::Adam(AdamConfig::default()), 20_000, seed);
                persist("adam", &adam, &train(&adam)?)?;
                let lbfgs = shm_cold(w0, OptimizerChoice::Lbfgs(shm_lbfgs()), 10_000, seed);
                persist("lbfgs", &lbfgs, &train(&lbfgs)?)?;
            }
        }
        "shm-transfer-chain" => {
            let mut stages = vec![shm_base(seed)];
            stages.extend(SHM_CHAIN.iter().map(|&w0| shm_transfer_stage(w0, SHM_CHAIN_EPOCHS, SHM_CHAIN_TARGET)));
            let spec = CurriculumSpec { stages };
            for r in run_curriculum(&spec, Some(out))? {
                let method = if r.stage == 0 { "adam" } else { "transfer" };
                rows.push(SummaryRow::from_outcome(method, &spec.stages[r.stage], &r.outcome));
            }
        }
        "wave-c1" => {
            let cfg = wave_stage(1.0, WAVE_C1_EPOCHS, 1e-5, seed);
            persist("lbfgs", &cfg, &train(&cfg)?)?;
        }
        "wave-transfer-chain" => {
            let stages: Vec<TrainConfig> = WAVE_CHAIN
                .iter()
                .map(|&c| wave_chain_stage(c, seed))
                .collect();
            let spec = CurriculumSpec { stages };
            for r in run_curriculum(&spec, Some(out))? {
                let method = if r.stage == 0 { "lbfgs" } else { "transfer" };
                rows.push(SummaryRow::from_outcome(method, &spec.stages[r.stage], &r.outcome));
            }
            let cold = wave_chain_stage(4.0, seed);
            let cold_out = RunOutput {
                dir: out.dir.join("cold"),
                wall_time_in_metrics: out.wall_time_in_metrics,
            };
            let outcome = train(&cold)?;
            cold_out.persist(&outcome)?;
            rows.push(SummaryRow::from_outcome("cold", &cold, &outcome));
        }
        other => return Err(TrainError::InvalidConfig(format!("unknown recipe {other:?}"))),
    }
    Ok(rows)
}
