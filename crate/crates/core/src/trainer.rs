//! Training runs, warm starts and the transfer-learning curriculum.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use thiserror::Error;

use crate::network::{Checkpoint, CheckpointError, CheckpointMeta, FORMAT_VERSION};
use crate::network::{NetworkError, NetworkParams};
use crate::optim::{Adam, AdamConfig, Lbfgs, LbfgsConfig, Objective, OptimError, OptimizerKind};
use crate::problems::{predict, relative_l2, LossBreakdown, LossEvaluator, LossWeights, ProblemError, ProblemSpec, TermEvaluation};
use crate::sampling::{build_point_set, SamplingError, SamplingPlan};

/// Consecutive non-finite losses tolerated before a run is declared diverged.
pub const DIVERGENCE_PATIENCE: usize = 5;

pub const METRICS_HEADER: &str = "epoch,loss_total,loss_F,loss_I,loss_B,lambda_I,l2_rel_error,grad_norm,wall_time_ms";

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint architecture {found:?} does not match configured network {expected:?}")]
    Architecture { expected: Vec<usize>, found: Vec<usize> },
    #[error("training diverged after {epochs} epochs (loss non-finite for {DIVERGENCE_PATIENCE} consecutive epochs)")]
    Diverged { epochs: usize, last: Box<MetricsRecord> },
    #[error("curriculum aborted at stage {stage} after {completed} completed stages: {source}")]
    Curriculum {
        stage: usize,
        completed: usize,
        #[source]
        source: Box<TrainError>,
    },
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub enum OptimizerChoice {
    Adam(AdamConfig),
    Lbfgs(LbfgsConfig),
    /// Adam for `adam_epochs`, then L-BFGS with empty history for `lbfgs_epochs`.
    Hybrid {
        adam_epochs: usize,
        lbfgs_epochs: usize,
        adam: AdamConfig,
        lbfgs: LbfgsConfig,
    },
}

impl OptimizerChoice {
    pub fn kind(&self) -> OptimizerKind {
        match self {
            OptimizerChoice::Adam(_) => OptimizerKind::Adam,
            OptimizerChoice::Lbfgs(_) => OptimizerKind::Lbfgs,
            OptimizerChoice::Hybrid { .. } => OptimizerKind::Hybrid,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    /// Glorot-uniform from the run seed.
    Fresh,
    FromCheckpoint(PathBuf),
    /// Warm start from parameters in memory.
    Params(NetworkParams),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub problem: ProblemSpec,
    pub plan: SamplingPlan,
    pub weights: LossWeights,
    pub layer_dims: Vec<usize>,
    pub optimizer: OptimizerChoice,
    pub max_epochs: usize,
    pub target_loss: f64,
    pub seed: u64,
    pub init: Init,
    /// Relative L2 error is computed every this many epochs (and on the last
    /// row); other rows carry NaN.
    pub l2_every: usize,
}

impl TrainConfig {
    /// Problem defaults with the given optimizer and budget.
    pub fn new(problem: ProblemSpec, optimizer: OptimizerChoice, max_epochs: usize) -> Self {
        Self {
            plan: problem.default_plan(),
            weights: problem.default_weights(),
            layer_dims: problem.default_layer_dims(),
            target_loss: problem.default_target_loss(),
            problem,
            optimizer,
            max_epochs,
            seed: 0,
            init: Init::Fresh,
            l2_every: 100,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.max_epochs == 0 {
            return Err(TrainError::InvalidConfig("max_epochs must be positive".into()));
        }
        if !(self.target_loss > 0.0) {
            return Err(TrainError::InvalidConfig(format!("target_loss must be positive, got {}", self.target_loss)));
        }
        if self.l2_every == 0 {
            return Err(TrainError::InvalidConfig("l2_every must be positive".into()));
        }
        if self.layer_dims.first() != Some(&self.problem.input_dim()) || self.layer_dims.last() != Some(&1) {
            return Err(TrainError::InvalidConfig(format!(
                "layer dims {:?} must start with {} inputs and end with one output",
                self.layer_dims,
                self.problem.input_dim()
            )));
        }
        self.weights.validate()?;
        match &self.optimizer {
            OptimizerChoice::Adam(a) => a.validate()?,
            OptimizerChoice::Lbfgs(l) => l.validate()?,
            OptimizerChoice::Hybrid { adam, lbfgs, .. } => {
                adam.validate()?;
                lbfgs.validate()?;
            }
        }
        Ok(())
    }

    /// Epochs the run may take.
    pub fn budget(&self) -> usize {
        match self.optimizer {
            OptimizerChoice::Hybrid {
                adam_epochs,
                lbfgs_epochs,
                ..
            } => self.max_epochs.min(adam_epochs + lbfgs_epochs),
            _ => self.max_epochs,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRecord {
    /// 1-based; row `e` holds the loss at the start of epoch `e`.
    pub epoch: usize,
    pub loss_total: f64,
    pub loss_f: f64,
    pub loss_i: f64,
    pub loss_b: f64,
    pub lambda_i: f64,
    pub l2_rel_error: f64,
    pub grad_norm: f64,
    pub wall_time_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Converged,
    BudgetExhausted,
    /// L-BFGS could not make progress even from a fresh history.
    Stalled,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub metrics: Vec<MetricsRecord>,
    pub stop: StopReason,
    /// Relative L2 error of the final parameters.
    pub final_l2: f64,
}

impl TrainOutcome {
    pub fn converged(&self) -> bool {
        self.stop == StopReason::Converged
    }

    /// First epoch whose loss met `target`.
    pub fn epochs_to(&self, target: f64) -> Option<usize> {
        self.metrics.iter().find(|m| m.loss_total <= target).map(|m| m.epoch)
    }
}

/// Loss evaluator plus a short memory of recent evaluations, so the point
/// accepted by a line search is not recomputed at the next epoch.
struct CachedLoss {
    evaluator: LossEvaluator,
    recent: Vec<(Vec<f64>, TermEvaluation)>,
}

const CACHE_SIZE: usize = 8;

impl CachedLoss {
    fn terms(&mut self, flat: &[f64]) -> Result<TermEvaluation, ProblemError> {
        if let Some((_, t)) = self.recent.iter().find(|(p, _)| p.as_slice() == flat) {
            return Ok(t.clone());
        }
        let t = self.evaluator.evaluate(flat)?;
        if self.recent.len() == CACHE_SIZE {
            self.recent.remove(0);
        }
        self.recent.push((flat.to_vec(), t.clone()));
        Ok(t)
    }
}

struct EpochObjective<'a> {
    loss: &'a mut CachedLoss,
    weights: LossWeights,
    epoch_index: usize,
    max_epochs: usize,
}

impl Objective for EpochObjective<'_> {
    fn evaluate(&mut self, x: &[f64], grad: &mut [f64]) -> Result<f64, OptimError> {
        let terms = self.loss.terms(x).map_err(|e| OptimError::Objective(e.to_string()))?;
        let (b, g) = terms
            .combine(&self.weights, self.epoch_index, self.max_epochs)
            .map_err(|e| OptimError::Objective(e.to_string()))?;
        grad.copy_from_slice(&g);
        Ok(b.total)
    }
}

enum Stepper {
    Adam(Adam),
    Lbfgs(Lbfgs),
}

fn initial_params(cfg: &TrainConfig) -> Result<NetworkParams, TrainError> {
    let params = match &cfg.init {
        Init::Fresh => return Ok(NetworkParams::init(&cfg.layer_dims, cfg.seed)?),
        Init::FromCheckpoint(path) => Checkpoint::load(path)?.params,
        Init::Params(p) => p.clone(),
    };
    if params.layer_dims() != cfg.layer_dims.as_slice() {
        return Err(TrainError::Architecture {
            expected: cfg.layer_dims.clone(),
            found: params.layer_dims().to_vec(),
        });
    }
    Ok(params)
}

/// Relative L2 error (percent) of `params` on the problem's evaluation grid.
pub fn l2_error(params: &NetworkParams, problem: &ProblemSpec) -> Result<f64, TrainError> {
    let grid = problem.evaluation_grid();
    let pred = predict(params, &grid)?;
    let exact: Vec<f64> = grid.iter().map(|p| problem.exact(p)).collect();
    Ok(relative_l2(&pred, &exact)?)
}

/// Trains until the loss target is met or the epoch budget is spent.
pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    let mut params = initial_params(cfg)?;
    let points = build_point_set(&cfg.plan, &cfg.problem)?;
    let mut loss = CachedLoss {
        evaluator: LossEvaluator::new(&cfg.problem, &points, &cfg.layer_dims)?,
        recent: Vec::new(),
    };
    let n = params.flat().len();
    let budget = cfg.budget();
    let adam_epochs = match cfg.optimizer {
        OptimizerChoice::Adam(_) => budget,
        OptimizerChoice::Lbfgs(_) => 0,
        OptimizerChoice::Hybrid { adam_epochs, .. } => adam_epochs,
    };
    let (adam_cfg, lbfgs_cfg) = match &cfg.optimizer {
        OptimizerChoice::Adam(a) => (*a, LbfgsConfig::default()),
        OptimizerChoice::Lbfgs(l) => (AdamConfig::default(), *l),
        OptimizerChoice::Hybrid { adam, lbfgs, .. } => (*adam, *lbfgs),
    };

    let start = Instant::now();
    let mut metrics: Vec<MetricsRecord> = Vec::with_capacity(budget);
    let mut stepper: Option<Stepper> = None;
    let mut non_finite = 0;
    let mut stop = StopReason::BudgetExhausted;
    let mut flat = params.flat().to_vec();

    for epoch in 1..=budget {
        let idx = epoch - 1;
        let terms = loss.terms(&flat)?;
        let (breakdown, grad) = terms.combine(&cfg.weights, idx, cfg.max_epochs)?;
        let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        let l2 = if epoch % cfg.l2_every == 0 || epoch == budget || epoch == 1 {
            match params.set_flat(&flat) {
                Ok(()) => l2_error(&params, &cfg.problem).unwrap_or(f64::NAN),
                Err(_) => f64::NAN,
            }
        } else {
            f64::NAN
        };
        let record = record(epoch, &breakdown, l2, grad_norm, &start);
        metrics.push(record);

        if !breakdown.total.is_finite() || !grad_norm.is_finite() {
            non_finite += 1;
            if non_finite >= DIVERGENCE_PATIENCE {
                return Err(TrainError::Diverged {
                    epochs: epoch,
                    last: Box::new(record),
                });
            }
            continue;
        }
        non_finite = 0;
        if breakdown.total <= cfg.target_loss {
            stop = StopReason::Converged;
            break;
        }

        let use_adam = idx < adam_epochs;
        let stepper = match (&mut stepper, use_adam) {
            (Some(Stepper::Adam(_)), true) | (Some(Stepper::Lbfgs(_)), false) => stepper.as_mut().expect("present"),
            _ => stepper.insert(if use_adam {
                Stepper::Adam(Adam::new(n, adam_cfg)?)
            } else {
                Stepper::Lbfgs(Lbfgs::new(lbfgs_cfg)?)
            }),
        };
        match stepper {
            Stepper::Adam(adam) => {
                adam.step(&mut flat, &grad, breakdown.total)?;
            }
            Stepper::Lbfgs(lbfgs) => {
                let mut objective = EpochObjective {
                    loss: &mut loss,
                    weights: cfg.weights,
                    epoch_index: idx,
                    max_epochs: cfg.max_epochs,
                };
                let mut f = breakdown.total;
                let mut g = grad;
                let mut report = lbfgs.step_from(&mut flat, &mut f, &mut g, &mut objective)?;
                if !report.accepted && lbfgs.history_len() > 0 {
                    lbfgs.reset();
                    report = lbfgs.step_from(&mut flat, &mut f, &mut g, &mut objective)?;
                }
                if !report.accepted {
                    stop = StopReason::Stalled;
                    break;
                }
            }
        }
    }

    params.set_flat(&flat)?;
    let last = metrics.last().copied();
    let (final_loss, final_l2) = match (stop, last) {
        (StopReason::BudgetExhausted, _) | (_, None) => {
            // parameters moved after the last recorded row
            let terms = loss.terms(&flat)?;
            let (b, _) = terms.combine(&cfg.weights, budget, cfg.max_epochs)?;
            (b.total, l2_error(&params, &cfg.problem)?)
        }
        (_, Some(m)) => {
            let l2 = if m.l2_rel_error.is_nan() {
                l2_error(&params, &cfg.problem)?
            } else {
                m.l2_rel_error
            };
            (m.loss_total, l2)
        }
    };
    if let Some(m) = metrics.last_mut() {
        if m.l2_rel_error.is_nan() && stop != StopReason::BudgetExhausted {
            m.l2_rel_error = final_l2;
        }
    }
    let checkpoint = Checkpoint {
        params,
        meta: CheckpointMeta {
            problem_kind: cfg.problem.kind().to_string(),
            problem_constant: cfg.problem.constant(),
            optimizer: cfg.optimizer.kind().name().to_string(),
            epoch: metrics.len(),
            final_loss,
            seed: cfg.seed,
            format_version: FORMAT_VERSION,
        },
    };
    Ok(TrainOutcome {
        checkpoint,
        metrics,
        stop,
        final_l2,
    })
}

fn record(epoch: usize, b: &LossBreakdown, l2: f64, grad_norm: f64, start: &Instant) -> MetricsRecord {
    MetricsRecord {
        epoch,
        loss_total: b.total,
        loss_f: b.l_f,
        loss_i: b.l_i,
        loss_b: b.l_b,
        lambda_i: b.lambda_i,
        l2_rel_error: l2,
        grad_norm,
        wall_time_ms: start.elapsed().as_millis() as u64,
    }
}

/// Ordered stages; every stage after the first starts from the previous
/// stage's final parameters, whatever its own `init` says.
#[derive(Debug, Clone)]
pub struct CurriculumSpec {
    pub stages: Vec<TrainConfig>,
}

#[derive(Debug, Clone)]
pub struct StageResult {
    pub stage: usize,
    pub outcome: TrainOutcome,
}

/// Runs the stages in order. When `out_dir` is set, each stage's checkpoint
/// and metrics are written there as soon as it finishes.
pub fn run_curriculum(spec: &CurriculumSpec, out_dir: Option<&RunOutput>) -> Result<Vec<StageResult>, TrainError> {
    let Some(first) = spec.stages.first() else {
        return Err(TrainError::InvalidConfig("curriculum has no stages".into()));
    };
    if let Some(bad) = spec.stages.iter().find(|s| s.layer_dims != first.layer_dims) {
        return Err(TrainError::Architecture {
            expected: first.layer_dims.clone(),
            found: bad.layer_dims.clone(),
        });
    }
    let mut results: Vec<StageResult> = Vec::new();
    for (i, stage) in spec.stages.iter().enumerate() {
        let mut cfg = stage.clone();
        if let Some(prev) = results.last() {
            cfg.init = Init::Params(prev.outcome.checkpoint.params.clone());
        }
        let wrap = |e: TrainError| TrainError::Curriculum {
            stage: i,
            completed: i,
            source: Box::new(e),
        };
        let outcome = train(&cfg).map_err(wrap)?;
        if let Some(out) = out_dir {
            out.persist(&outcome).map_err(|e| wrap(e.into()))?;
        }
        results.push(StageResult { stage: i, outcome });
    }
    Ok(results)
}

/// Trained network on the evaluation grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldDump {
    pub l2_rel_error: f64,
    /// `(x, t, exact, predicted)`; `x` is 0 for time-only problems.
    pub rows: Vec<[f64; 4]>,
}

impl FieldDump {
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "x,t,u_exact,u_pred,abs_err")?;
        for [x, t, e, p] in &self.rows {
            writeln!(w, "{x},{t},{e},{p},{}", (p - e).abs())?;
        }
        Ok(())
    }
}

/// Relative L2 error and field dump of `params` on `problem`.
pub fn evaluate(params: &NetworkParams, problem: &ProblemSpec) -> Result<FieldDump, TrainError> {
    if params.input_width() != problem.input_dim() {
        return Err(TrainError::Architecture {
            expected: problem.default_layer_dims(),
            found: params.layer_dims().to_vec(),
        });
    }
    let grid = problem.evaluation_grid();
    let pred = predict(params, &grid)?;
    let exact: Vec<f64> = grid.iter().map(|p| problem.exact(p)).collect();
    let l2 = relative_l2(&pred, &exact)?;
    let rows = grid
        .iter()
        .zip(exact.iter().zip(&pred))
        .map(|(p, (&e, &u))| match p {
            [t] => [0.0, *t, e, u],
            [x, t] => [*x, *t, e, u],
            _ => unreachable!("problems have one or two inputs"),
        })
        .collect();
    Ok(FieldDump { l2_rel_error: l2, rows })
}

/// Writes the metrics CSV. Wall times are replaced by 0 unless
/// `with_wall_time`, which keeps files byte-identical across reruns.
pub fn write_metrics_csv<W: Write>(records: &[MetricsRecord], mut w: W, with_wall_time: bool) -> io::Result<()> {
    writeln!(w, "{METRICS_HEADER}")?;
    for m in records {
        let wall = if with_wall_time { m.wall_time_ms } else { 0 };
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            m.epoch, m.loss_total, m.loss_f, m.loss_i, m.loss_b, m.lambda_i, m.l2_rel_error, m.grad_norm, wall
        )?;
    }
    Ok(())
}

pub fn write_timing_csv<W: Write>(records: &[MetricsRecord], mut w: W) -> io::Result<()> {
    writeln!(w, "epoch,wall_time_ms")?;
    for m in records {
        writeln!(w, "{},{}", m.epoch, m.wall_time_ms)?;
    }
    Ok(())
}

/// Output directory layout for runs.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub dir: PathBuf,
    pub wall_time_in_metrics: bool,
}

/// Files written for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunFiles {
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub timing: PathBuf,
}

/// `<problem>_<constant>_<optimizer>`.
pub fn run_stem(meta: &CheckpointMeta) -> String {
    format!("{}_{}_{}", meta.problem_kind, meta.problem_constant, meta.optimizer)
}

impl RunOutput {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: dir.into(),
            wall_time_in_metrics: false,
        }
    }

    pub fn persist(&self, outcome: &TrainOutcome) -> io::Result<RunFiles> {
        fs::create_dir_all(&self.dir)?;
        let meta = &outcome.checkpoint.meta;
        let stem = run_stem(meta);
        let files = RunFiles {
            checkpoint: self.dir.join(format!("{stem}_{}.json", meta.epoch)),
            metrics: self.dir.join(format!("{stem}_metrics.csv")),
            timing: self.dir.join(format!("{stem}_metrics.timing.csv")),
        };
        outcome.checkpoint.save(&files.checkpoint).map_err(|e| match e {
            CheckpointError::Io(io) => io,
            other => io::Error::other(other.to_string()),
        })?;
        write_metrics_csv(&outcome.metrics, io::BufWriter::new(fs::File::create(&files.metrics)?), self.wall_time_in_metrics)?;
        write_timing_csv(&outcome.metrics, io::BufWriter::new(fs::File::create(&files.timing)?))?;
        Ok(files)
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }
}

/// Loads a checkpoint and checks it fits `layer_dims`.
pub fn load_compatible(path: &Path, layer_dims: &[usize]) -> Result<Checkpoint, TrainError> {
    let chk = Checkpoint::load(path)?;
    if chk.params.layer_dims() != layer_dims {
        return Err(TrainError::Architecture {
            expected: layer_dims.to_vec(),
            found: chk.params.layer_dims().to_vec(),
        });
    }
    Ok(chk)
}
