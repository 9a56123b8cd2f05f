//! Benchmark problems and the weighted residual loss.
//!
//! Every residual used here is affine in the network output channels:
//! `r = sum_c coef_c * channel_c - target`, where a channel is the value or a
//! first/second derivative along one input axis. A [`ResidualFamily`] holds
//! one such rule and the points it is enforced on. Each loss term
//! (interior `L_F`, initial `L_I`, boundary `L_B`) is the sum over its
//! families of the mean squared residual.

mod shm;
mod wave;

pub use shm::ShmParams;
pub use wave::WaveParams;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::batch::{Channel, JetBatch};
use crate::autodiff::{self, AutodiffError, OpKind, Tape, Var};
use crate::network::{NetworkError, NetworkParams, NetworkView};
use crate::sampling::{equidistant, PointCloud, PointSet, SamplingPlan, Scheme};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProblemError {
    #[error("oscillator is not under-damped (delta = {delta}, omega0 = {omega0})")]
    NotUnderdamped { delta: f64, omega0: f64 },
    #[error("wave velocity must be positive, got {0}")]
    InvalidVelocity(f64),
    #[error("loss weights must be nonnegative with at least one positive")]
    InvalidWeights,
    #[error("{0:?} loss term has positive weight but no points")]
    EmptyTerm(Term),
    #[error("prediction and exact samples differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("relative error undefined: exact field is identically zero")]
    ZeroReference,
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ProblemSpec {
    Shm(ShmParams),
    Wave(WaveParams),
}

impl ProblemSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            ProblemSpec::Shm(_) => "shm",
            ProblemSpec::Wave(_) => "wave",
        }
    }

    /// omega_0 for the oscillator, c for the wave equation.
    pub fn constant(&self) -> f64 {
        match self {
            ProblemSpec::Shm(p) => p.omega0(),
            ProblemSpec::Wave(p) => p.c,
        }
    }

    /// Same problem family with a different frequency / velocity.
    pub fn with_constant(&self, value: f64) -> Result<Self, ProblemError> {
        Ok(match self {
            ProblemSpec::Shm(p) => ProblemSpec::Shm(ShmParams::new(p.mass, p.friction, value * value * p.mass, p.t_max)?),
            ProblemSpec::Wave(p) => {
                let mut q = WaveParams::new(value)?;
                q.x_max = p.x_max;
                q.t_max = p.t_max;
                ProblemSpec::Wave(q)
            }
        })
    }

    pub fn input_dim(&self) -> usize {
        match self {
            ProblemSpec::Shm(_) => 1,
            ProblemSpec::Wave(_) => 2,
        }
    }

    /// Bounds per network input coordinate: `[t]` or `[x, t]`.
    pub fn domain(&self) -> Vec<(f64, f64)> {
        match self {
            ProblemSpec::Shm(p) => vec![(0.0, p.t_max)],
            ProblemSpec::Wave(p) => vec![(0.0, p.x_max), (0.0, p.t_max)],
        }
    }

    pub fn exact(&self, point: &[f64]) -> f64 {
        match self {
            ProblemSpec::Shm(p) => p.exact(point[0]),
            ProblemSpec::Wave(p) => p.exact(point[0], point[1]),
        }
    }

    pub fn default_layer_dims(&self) -> Vec<usize> {
        vec![self.input_dim(), 64, 64, 64, 64, 1]
    }

    pub fn default_plan(&self) -> SamplingPlan {
        match self {
            ProblemSpec::Shm(_) => SamplingPlan {
                n_interior: 100,
                n_spatial_boundary: 0,
                n_temporal_boundary: 1,
                bounds: self.domain(),
                scheme: Scheme::Equidistant,
                skip: 1,
            },
            ProblemSpec::Wave(_) => SamplingPlan {
                n_interior: 512,
                n_spatial_boundary: 64,
                n_temporal_boundary: 32,
                bounds: self.domain(),
                scheme: Scheme::Sobol,
                skip: 1,
            },
        }
    }

    pub fn default_weights(&self) -> LossWeights {
        match self {
            ProblemSpec::Shm(_) => LossWeights {
                w_f: 1e-4,
                w_i: 1.0,
                w_b: 0.0,
                temporal_decay: None,
            },
            ProblemSpec::Wave(_) => LossWeights {
                w_f: 1.0,
                w_i: 1.0,
                w_b: 1.0,
                temporal_decay: Some(5.0),
            },
        }
    }

    pub fn default_target_loss(&self) -> f64 {
        match self {
            ProblemSpec::Shm(_) => 1e-3,
            ProblemSpec::Wave(_) => 1e-5,
        }
    }

    /// Fixed grid for relative-error reporting: 1000 times for the
    /// oscillator, 100 x 100 (x-major) for the wave equation.
    pub fn evaluation_grid(&self) -> PointCloud {
        match self {
            ProblemSpec::Shm(p) => PointCloud::from_coords(1, equidistant(1000, 0.0, p.t_max).expect("valid grid")),
            ProblemSpec::Wave(p) => {
                let xs = equidistant(100, 0.0, p.x_max).expect("valid grid");
                let ts = equidistant(100, 0.0, p.t_max).expect("valid grid");
                let mut grid = PointCloud::new(2);
                for &x in &xs {
                    for &t in &ts {
                        grid.push(&[x, t]);
                    }
                }
                grid
            }
        }
    }

    /// The residual rules of this problem on the given point set.
    pub fn residual_families(&self, points: &PointSet) -> Vec<ResidualFamily> {
        match self {
            ProblemSpec::Shm(p) => {
                let ic = &points.temporal_boundary;
                vec![
                    ResidualFamily {
                        name: "interior",
                        term: Term::Interior,
                        points: points.interior.clone(),
                        axes: vec![0],
                        coeffs: vec![
                            (Channel::D2(0), p.mass),
                            (Channel::D1(0), p.friction),
                            (Channel::Value, p.stiffness),
                        ],
                        target: vec![0.0; points.interior.len()],
                    },
                    ResidualFamily {
                        name: "initial_value",
                        term: Term::Initial,
                        points: ic.clone(),
                        axes: vec![],
                        coeffs: vec![(Channel::Value, 1.0)],
                        target: vec![1.0; ic.len()],
                    },
                    ResidualFamily {
                        name: "initial_rate",
                        term: Term::Initial,
                        points: ic.clone(),
                        axes: vec![0],
                        coeffs: vec![(Channel::D1(0), 1.0)],
                        target: vec![0.0; ic.len()],
                    },
                ]
            }
            ProblemSpec::Wave(p) => {
                let ic = &points.temporal_boundary;
                let sin_x: Vec<f64> = ic.iter().map(|q| p.initial_value(q[0])).collect();
                let rate: Vec<f64> = ic.iter().map(|q| p.initial_rate(q[0])).collect();
                let mut families = vec![ResidualFamily {
                    name: "interior",
                    term: Term::Interior,
                    points: points.interior.clone(),
                    // axis list: x then t
                    axes: vec![0, 1],
                    coeffs: vec![(Channel::D2(1), 1.0), (Channel::D2(0), -p.c * p.c)],
                    target: vec![0.0; points.interior.len()],
                }];
                for (i, b) in points.spatial_boundary.iter().enumerate() {
                    families.push(ResidualFamily {
                        name: if i == 0 { "boundary_lower" } else { "boundary_upper" },
                        term: Term::Boundary,
                        points: b.clone(),
                        axes: vec![],
                        coeffs: vec![(Channel::Value, 1.0)],
                        target: vec![0.0; b.len()],
                    });
                }
                families.push(ResidualFamily {
                    name: "initial_value",
                    term: Term::Initial,
                    points: ic.clone(),
                    axes: vec![],
                    coeffs: vec![(Channel::Value, 1.0)],
                    target: sin_x,
                });
                families.push(ResidualFamily {
                    name: "initial_rate",
                    term: Term::Initial,
                    points: ic.clone(),
                    axes: vec![1],
                    coeffs: vec![(Channel::D1(0), 1.0)],
                    target: rate,
                });
                families
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Term {
    Interior,
    Initial,
    Boundary,
}

impl Term {
    fn index(self) -> usize {
        match self {
            Term::Interior => 0,
            Term::Initial => 1,
            Term::Boundary => 2,
        }
    }
}

/// `r_i = sum_c coef_c * channel_c(p_i) - target_i` over `points`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualFamily {
    pub name: &'static str,
    pub term: Term,
    pub points: PointCloud,
    /// Input axes carried as jets; `Channel` axis indices refer to this list.
    pub axes: Vec<usize>,
    pub coeffs: Vec<(Channel, f64)>,
    pub target: Vec<f64>,
}

impl ResidualFamily {
    /// Residuals from a batched forward pass.
    pub fn residuals(&self, batch: &JetBatch<'_>) -> Vec<f64> {
        let mut r: Vec<f64> = self.target.iter().map(|t| -t).collect();
        for &(ch, coef) in &self.coeffs {
            for (ri, v) in r.iter_mut().zip(batch.channel(ch)) {
                *ri += coef * v;
            }
        }
        r
    }

    /// Residuals recorded on a scalar tape, one nested jet per axis and point.
    pub fn residuals_on_tape(&self, net: &NetworkParams, tape: &mut Tape) -> Result<Vec<Var>, AutodiffError> {
        let mut out = Vec::with_capacity(self.points.len());
        for (point, &target) in self.points.iter().zip(&self.target) {
            let jets = if self.axes.is_empty() {
                // value only: differentiate along axis 0 and keep the value channel
                vec![autodiff::nested_second_derivative(net, point, 0, tape)?]
            } else {
                self.axes
                    .iter()
                    .map(|&axis| autodiff::nested_second_derivative(net, point, axis, tape))
                    .collect::<Result<Vec<_>, _>>()?
            };
            let mut acc = tape.constant(-target);
            for &(ch, coef) in &self.coeffs {
                let var = match ch {
                    Channel::Value => jets[0].val,
                    Channel::D1(k) => jets[k].d1,
                    Channel::D2(k) => jets[k].d2,
                };
                let scaled = tape.scale(var, coef)?;
                acc = tape.add(acc, scaled)?;
            }
            out.push(acc);
        }
        Ok(out)
    }
}

/// Loss-term weights. With `temporal_decay = Some(C_t)` the initial-condition
/// weight follows `C_t (1 - epoch / max_epochs) + 1` instead of `w_i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub w_f: f64,
    pub w_i: f64,
    pub w_b: f64,
    pub temporal_decay: Option<f64>,
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), ProblemError> {
        let all = [self.w_f, self.w_i, self.w_b, self.temporal_decay.unwrap_or(0.0)];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || [self.w_f, self.w_i, self.w_b].iter().all(|w| *w == 0.0) {
            return Err(ProblemError::InvalidWeights);
        }
        Ok(())
    }

    /// Effective weight of the initial-condition term at `epoch`.
    pub fn initial_weight(&self, epoch: usize, max_epochs: usize) -> f64 {
        match self.temporal_decay {
            Some(c_t) => {
                let progress = if max_epochs == 0 {
                    1.0
                } else {
                    (epoch as f64 / max_epochs as f64).min(1.0)
                };
                c_t * (1.0 - progress) + 1.0
            }
            None => self.w_i,
        }
    }

    fn term_weights(&self, epoch: usize, max_epochs: usize) -> [f64; 3] {
        [self.w_f, self.initial_weight(epoch, max_epochs), self.w_b]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub total: f64,
    pub l_f: f64,
    pub l_i: f64,
    pub l_b: f64,
    /// Weight applied to `l_i`.
    pub lambda_i: f64,
}

/// Residual vectors grouped by loss term, one vector per family.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResidualValues {
    pub interior: Vec<Vec<f64>>,
    pub initial: Vec<Vec<f64>>,
    pub boundary: Vec<Vec<f64>>,
}

impl ResidualValues {
    fn term(&self, i: usize) -> &[Vec<f64>] {
        match i {
            0 => &self.interior,
            1 => &self.initial,
            _ => &self.boundary,
        }
    }
}

fn mean_square(r: &[f64]) -> f64 {
    if r.is_empty() {
        0.0
    } else {
        r.iter().map(|v| v * v).sum::<f64>() / r.len() as f64
    }
}

fn assemble(means: [f64; 3], counts: [usize; 3], weights: &LossWeights, epoch: usize, max_epochs: usize) -> Result<LossBreakdown, ProblemError> {
    weights.validate()?;
    let w = weights.term_weights(epoch, max_epochs);
    for (i, term) in [Term::Interior, Term::Initial, Term::Boundary].into_iter().enumerate() {
        if w[i] > 0.0 && counts[i] == 0 {
            return Err(ProblemError::EmptyTerm(term));
        }
    }
    Ok(LossBreakdown {
        total: w[0] * means[0] + w[1] * means[1] + w[2] * means[2],
        l_f: means[0],
        l_i: means[1],
        l_b: means[2],
        lambda_i: w[1],
    })
}

/// Weighted sum of per-term mean squared residuals.
pub fn composite_loss(residuals: &ResidualValues, weights: &LossWeights, epoch: usize, max_epochs: usize) -> Result<LossBreakdown, ProblemError> {
    let mut means = [0.0; 3];
    let mut counts = [0; 3];
    for i in 0..3 {
        for r in residuals.term(i) {
            means[i] += mean_square(r);
            counts[i] += r.len();
        }
    }
    assemble(means, counts, weights, epoch, max_epochs)
}

/// Records the composite loss on a scalar tape. Reference route for the
/// batched evaluator.
pub fn composite_loss_on_tape(
    families: &[ResidualFamily],
    net: &NetworkParams,
    weights: &LossWeights,
    epoch: usize,
    max_epochs: usize,
    tape: &mut Tape,
) -> Result<Var, ProblemError> {
    let w = weights.term_weights(epoch, max_epochs);
    let mut total = tape.constant(0.0);
    for fam in families {
        if fam.points.is_empty() {
            continue;
        }
        let scale = w[fam.term.index()] / fam.points.len() as f64;
        for r in fam.residuals_on_tape(net, tape)? {
            let sq = tape.unary(OpKind::Square, r)?;
            let term = tape.scale(sq, scale)?;
            total = tape.add(total, term)?;
        }
    }
    Ok(total)
}

/// Percentage `100 |pred - exact|_2 / |exact|_2`.
pub fn relative_l2(prediction: &[f64], exact: &[f64]) -> Result<f64, ProblemError> {
    if prediction.len() != exact.len() {
        return Err(ProblemError::LengthMismatch(prediction.len(), exact.len()));
    }
    let denom: f64 = exact.iter().map(|e| e * e).sum::<f64>();
    if denom == 0.0 {
        return Err(ProblemError::ZeroReference);
    }
    let num: f64 = prediction.iter().zip(exact).map(|(p, e)| (p - e) * (p - e)).sum();
    Ok(100.0 * (num / denom).sqrt())
}

/// Per-term mean squared residuals and their parameter gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct TermEvaluation {
    pub means: [f64; 3],
    pub counts: [usize; 3],
    pub grads: [Vec<f64>; 3],
}

impl TermEvaluation {
    /// Loss breakdown and total gradient under the weights at `epoch`.
    pub fn combine(&self, weights: &LossWeights, epoch: usize, max_epochs: usize) -> Result<(LossBreakdown, Vec<f64>), ProblemError> {
        let breakdown = assemble(self.means, self.counts, weights, epoch, max_epochs)?;
        let w = weights.term_weights(epoch, max_epochs);
        let mut grad = vec![0.0; self.grads[0].len()];
        for (wi, g) in w.iter().zip(&self.grads) {
            if *wi != 0.0 {
                for (acc, gi) in grad.iter_mut().zip(g) {
                    *acc += wi * gi;
                }
            }
        }
        Ok((breakdown, grad))
    }
}

/// Batched loss and gradient evaluation over fixed residual families.
///
/// Points are split into fixed-size chunks that may run on the rayon pool;
/// partial sums are reduced in chunk order, so results do not depend on the
/// number of threads.
#[derive(Debug, Clone)]
pub struct LossEvaluator {
    dims: Vec<usize>,
    families: Vec<ResidualFamily>,
    chunk: usize,
}

const CHUNK_POINTS: usize = 128;

impl LossEvaluator {
    pub fn new(problem: &ProblemSpec, points: &PointSet, layer_dims: &[usize]) -> Result<Self, ProblemError> {
        if layer_dims.first() != Some(&problem.input_dim()) {
            return Err(NetworkError::WidthMismatch {
                expected: problem.input_dim(),
                got: layer_dims.first().copied().unwrap_or(0),
            }
            .into());
        }
        Ok(Self {
            dims: layer_dims.to_vec(),
            families: problem.residual_families(points),
            chunk: CHUNK_POINTS,
        })
    }

    pub fn families(&self) -> &[ResidualFamily] {
        &self.families
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn param_count(&self) -> usize {
        crate::network::param_count(&self.dims)
    }

    fn chunks(&self) -> Vec<(usize, std::ops::Range<usize>)> {
        let mut out = Vec::new();
        for (f, fam) in self.families.iter().enumerate() {
            let n = fam.points.len();
            let mut start = 0;
            while start < n {
                let end = (start + self.chunk).min(n);
                out.push((f, start..end));
                start = end;
            }
        }
        out
    }

    /// Residual values only.
    pub fn residuals(&self, flat: &[f64]) -> Result<ResidualValues, ProblemError> {
        let net = NetworkView::new(&self.dims, flat)?;
        let mut out = ResidualValues::default();
        for fam in &self.families {
            let batch = JetBatch::forward(net, fam.points.coords(), &fam.axes)?;
            let r = fam.residuals(&batch);
            match fam.term {
                Term::Interior => out.interior.push(r),
                Term::Initial => out.initial.push(r),
                Term::Boundary => out.boundary.push(r),
            }
        }
        Ok(out)
    }

    /// Mean squared residual per term plus its gradient.
    pub fn evaluate(&self, flat: &[f64]) -> Result<TermEvaluation, ProblemError> {
        let net = NetworkView::new(&self.dims, flat)?;
        let n_params = flat.len();
        let partials: Vec<Result<(usize, f64, Vec<f64>), ProblemError>> = self
            .chunks()
            .into_par_iter()
            .map(|(f, range)| {
                let fam = &self.families[f];
                let dim = fam.points.dim();
                let coords = &fam.points.coords()[range.start * dim..range.end * dim];
                let batch = JetBatch::forward(net, coords, &fam.axes)?;
                let mut r: Vec<f64> = fam.target[range.clone()].iter().map(|t| -t).collect();
                for &(ch, coef) in &fam.coeffs {
                    for (ri, v) in r.iter_mut().zip(batch.channel(ch)) {
                        *ri += coef * v;
                    }
                }
                let n_family = fam.points.len() as f64;
                let sum_sq: f64 = r.iter().map(|v| v * v).sum();
                let mut adjoint = vec![0.0; batch.columns()];
                for &(ch, coef) in &fam.coeffs {
                    let cols = batch.channel_range(ch);
                    for (a, ri) in adjoint[cols].iter_mut().zip(&r) {
                        *a += coef * 2.0 * ri / n_family;
                    }
                }
                let mut grad = vec![0.0; n_params];
                batch.backward(&adjoint, &mut grad);
                Ok((f, sum_sq / n_family, grad))
            })
            .collect();
        let mut means = [0.0; 3];
        let mut counts = [0; 3];
        let mut grads = [vec![0.0; n_params], vec![0.0; n_params], vec![0.0; n_params]];
        for fam in &self.families {
            counts[fam.term.index()] += fam.points.len();
        }
        for partial in partials {
            let (f, mean_part, grad) = partial?;
            let t = self.families[f].term.index();
            means[t] += mean_part;
            for (acc, g) in grads[t].iter_mut().zip(&grad) {
                *acc += g;
            }
        }
        Ok(TermEvaluation { means, counts, grads })
    }
}

/// Network predictions on `points` (value channel only).
pub fn predict(net: &NetworkParams, points: &PointCloud) -> Result<Vec<f64>, ProblemError> {
    let mut out = Vec::with_capacity(points.len());
    let dim = points.dim();
    for chunk in points.coords().chunks(1024 * dim) {
        let batch = JetBatch::forward(net.view(), chunk, &[])?;
        out.extend_from_slice(batch.channel(Channel::Value));
    }
    Ok(out)
}
