use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::{check_finite, dot, norm, Objective, OptimError, StepReport};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LbfgsConfig {
    /// Curvature pairs kept.
    pub memory: usize,
    /// First trial step length of each line search.
    pub initial_step: f64,
    /// Sufficient-decrease constant.
    pub c1: f64,
    /// Curvature constant.
    pub c2: f64,
    /// Objective evaluations allowed per line search.
    pub max_evals: usize,
    /// Pairs with `s.y` at or below this are discarded.
    pub curvature_eps: f64,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            memory: 10,
            initial_step: 1.0,
            c1: 1e-4,
            c2: 0.9,
            max_evals: 25,
            curvature_eps: 1e-10,
        }
    }
}

impl LbfgsConfig {
    pub fn validate(&self) -> Result<(), OptimError> {
        let ok = self.memory > 0
            && self.initial_step > 0.0
            && self.initial_step.is_finite()
            && 0.0 < self.c1
            && self.c1 < self.c2
            && self.c2 < 1.0
            && self.max_evals > 0
            && self.curvature_eps >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(OptimError::InvalidConfig(format!("{self:?}")))
        }
    }
}

/// Bracket width (in parameter space) below which the zoom phase gives up.
const TOLERANCE_CHANGE: f64 = 1e-9;

/// Minimizer of the cubic through two points with slopes, clamped to
/// `bounds` (or to the interval spanned by the points).
fn cubic_interpolate(x1: f64, f1: f64, g1: f64, x2: f64, f2: f64, g2: f64, bounds: Option<(f64, f64)>) -> f64 {
    let (lo, hi) = bounds.unwrap_or(if x1 <= x2 { (x1, x2) } else { (x2, x1) });
    let d1 = g1 + g2 - 3.0 * (f1 - f2) / (x1 - x2);
    let d2_square = d1 * d1 - g1 * g2;
    let t = if d2_square >= 0.0 {
        let d2 = d2_square.sqrt();
        let min_pos = if x1 <= x2 {
            x2 - (x2 - x1) * ((g2 + d2 - d1) / (g2 - g1 + 2.0 * d2))
        } else {
            x1 - (x1 - x2) * ((g1 + d2 - d1) / (g1 - g2 + 2.0 * d2))
        };
        min_pos.max(lo).min(hi)
    } else {
        0.5 * (lo + hi)
    };
    if t.is_finite() {
        t
    } else {
        0.5 * (lo + hi)
    }
}

#[derive(Debug, Clone, Copy)]
struct Probe {
    t: f64,
    f: f64,
    gtd: f64,
}

struct LineSearch {
    t: f64,
    f: f64,
    grad: Vec<f64>,
    /// Strong Wolfe conditions hold at `t`.
    wolfe: bool,
    evals: usize,
}

struct Evaluator<'a, O: Objective + ?Sized> {
    objective: &'a mut O,
    x: &'a [f64],
    d: &'a [f64],
    trial: Vec<f64>,
}

impl<O: Objective + ?Sized> Evaluator<'_, O> {
    fn at(&mut self, t: f64) -> Result<(f64, Vec<f64>, f64), OptimError> {
        for ((ti, xi), di) in self.trial.iter_mut().zip(self.x).zip(self.d) {
            *ti = xi + t * di;
        }
        let mut g = vec![0.0; self.x.len()];
        let f = self.objective.evaluate(&self.trial, &mut g)?;
        // treat blow-ups as "too far" so the search backtracks
        if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return Ok((f64::INFINITY, g, f64::NAN));
        }
        let gtd = dot(&g, self.d);
        Ok((f, g, gtd))
    }
}

/// Bracketing and zoom line search enforcing the strong Wolfe conditions.
fn strong_wolfe<O: Objective + ?Sized>(
    objective: &mut O,
    x: &[f64],
    d: &[f64],
    f0: f64,
    g0: &[f64],
    gtd0: f64,
    t_init: f64,
    cfg: &LbfgsConfig,
) -> Result<LineSearch, OptimError> {
    let d_norm = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut ev = Evaluator {
        objective,
        x,
        d,
        trial: vec![0.0; x.len()],
    };
    let mut t = t_init;
    let (mut f_new, mut g_new, mut gtd_new) = ev.at(t)?;
    let mut evals = 1;
    let mut prev = Probe { t: 0.0, f: f0, gtd: gtd0 };
    let mut g_prev = g0.to_vec();

    let mut bracket: Vec<(Probe, Vec<f64>)>;
    let mut wolfe = false;
    loop {
        if evals > cfg.max_evals {
            bracket = vec![(Probe { t: 0.0, f: f0, gtd: gtd0 }, g0.to_vec()), (Probe { t, f: f_new, gtd: gtd_new }, g_new)];
            break;
        }
        let cur = Probe { t, f: f_new, gtd: gtd_new };
        if f_new > f0 + cfg.c1 * t * gtd0 || (evals > 2 && f_new >= prev.f) {
            bracket = vec![(prev, g_prev), (cur, g_new)];
            break;
        }
        if gtd_new.abs() <= -cfg.c2 * gtd0 {
            bracket = vec![(cur, g_new)];
            wolfe = true;
            break;
        }
        if gtd_new >= 0.0 {
            bracket = vec![(prev, g_prev), (cur, g_new)];
            break;
        }
        if evals == cfg.max_evals {
            bracket = vec![(Probe { t: 0.0, f: f0, gtd: gtd0 }, g0.to_vec()), (cur, g_new)];
            break;
        }
        // extrapolate
        let min_step = t + 0.01 * (t - prev.t);
        let max_step = t * 10.0;
        let next = cubic_interpolate(prev.t, prev.f, prev.gtd, t, f_new, gtd_new, Some((min_step, max_step)));
        prev = cur;
        g_prev = g_new;
        t = next;
        (f_new, g_new, gtd_new) = ev.at(t)?;
        evals += 1;
    }

    if bracket.len() == 1 {
        let (p, g) = bracket.pop().expect("one entry");
        return Ok(LineSearch { t: p.t, f: p.f, grad: g, wolfe, evals });
    }

    // zoom
    let mut insufficient = false;
    let (mut low, mut high) = if bracket[0].0.f <= bracket[1].0.f { (0, 1) } else { (1, 0) };
    while !wolfe && evals < cfg.max_evals {
        let (a, b) = (bracket[0].0, bracket[1].0);
        if (b.t - a.t).abs() * d_norm < TOLERANCE_CHANGE {
            break;
        }
        let mut t = cubic_interpolate(a.t, a.f, a.gtd, b.t, b.f, b.gtd, None);
        let (bmin, bmax) = (a.t.min(b.t), a.t.max(b.t));
        let eps = 0.1 * (bmax - bmin);
        if (bmax - t).min(t - bmin) < eps {
            if insufficient || t >= bmax || t <= bmin {
                t = if (t - bmax).abs() < (t - bmin).abs() { bmax - eps } else { bmin + eps };
                insufficient = false;
            } else {
                insufficient = true;
            }
        } else {
            insufficient = false;
        }
        let (f_new, g_new, gtd_new) = ev.at(t)?;
        evals += 1;
        let cur = Probe { t, f: f_new, gtd: gtd_new };
        if f_new > f0 + cfg.c1 * t * gtd0 || f_new >= bracket[low].0.f {
            bracket[high] = (cur, g_new);
            (low, high) = if bracket[0].0.f <= bracket[1].0.f { (0, 1) } else { (1, 0) };
        } else {
            if gtd_new.abs() <= -cfg.c2 * gtd0 {
                wolfe = true;
            } else if gtd_new * (bracket[high].0.t - bracket[low].0.t) >= 0.0 {
                bracket[high] = bracket[low].clone();
            }
            bracket[low] = (cur, g_new);
        }
    }
    let (p, g) = bracket.swap_remove(low);
    Ok(LineSearch { t: p.t, f: p.f, grad: g, wolfe, evals })
}

/// Accepts a line search result that failed the curvature test but still
/// achieved sufficient decrease.
fn acceptable(ls: &LineSearch, f0: f64, gtd0: f64, c1: f64) -> bool {
    ls.wolfe || (ls.t > 0.0 && ls.f.is_finite() && ls.f < f0 && ls.f <= f0 + c1 * ls.t * gtd0)
}

/// Limited-memory BFGS with a strong Wolfe line search.
#[derive(Debug, Clone)]
pub struct Lbfgs {
    config: LbfgsConfig,
    history: VecDeque<(Vec<f64>, Vec<f64>, f64)>,
    evaluations: usize,
}

impl Lbfgs {
    pub fn new(config: LbfgsConfig) -> Result<Self, OptimError> {
        config.validate()?;
        Ok(Self {
            config,
            history: VecDeque::new(),
            evaluations: 0,
        })
    }

    pub fn config(&self) -> &LbfgsConfig {
        &self.config
    }

    pub fn history_len(&self) -> usize {
        self.history.len()
    }

    /// Objective evaluations spent in line searches so far.
    pub fn evaluations(&self) -> usize {
        self.evaluations
    }

    pub fn reset(&mut self) {
        self.history.clear();
    }

    /// Two-loop recursion: `-H g` with `H_0 = gamma I`.
    pub fn direction(&self, grad: &[f64]) -> Vec<f64> {
        let mut q: Vec<f64> = grad.iter().map(|g| -g).collect();
        let mut alphas = Vec::with_capacity(self.history.len());
        for (s, y, rho) in self.history.iter().rev() {
            let a = rho * dot(s, &q);
            for (qi, yi) in q.iter_mut().zip(y) {
                *qi -= a * yi;
            }
            alphas.push(a);
        }
        if let Some((s, y, _)) = self.history.back() {
            let gamma = dot(s, y) / dot(y, y);
            q.iter_mut().for_each(|v| *v *= gamma);
        }
        for ((s, y, rho), a) in self.history.iter().zip(alphas.into_iter().rev()) {
            let b = rho * dot(y, &q);
            for (qi, si) in q.iter_mut().zip(s) {
                *qi += (a - b) * si;
            }
        }
        q
    }

    /// One iteration from `params`, where `loss` and `grad` hold the
    /// objective at `params`. On acceptance all three are advanced to the
    /// new point; otherwise they are left as they were.
    pub fn step_from<O: Objective + ?Sized>(
        &mut self,
        params: &mut [f64],
        loss: &mut f64,
        grad: &mut Vec<f64>,
        objective: &mut O,
    ) -> Result<StepReport, OptimError> {
        if params.len() != grad.len() {
            return Err(OptimError::LengthMismatch {
                params: params.len(),
                grad: grad.len(),
            });
        }
        check_finite(grad)?;
        if !loss.is_finite() {
            return Err(OptimError::NonFiniteLoss(*loss));
        }
        let grad_norm = norm(grad);
        let mut report = StepReport {
            loss_before: *loss,
            loss_after: None,
            grad_norm,
            step_size: 0.0,
            accepted: false,
        };
        if grad_norm == 0.0 {
            return Ok(report);
        }
        let mut d = self.direction(grad);
        let mut gtd = dot(grad, &d);
        if !(gtd < 0.0) {
            self.history.clear();
            d = grad.iter().map(|g| -g).collect();
            gtd = -grad_norm * grad_norm;
        }
        let t0 = if self.history.is_empty() {
            let l1: f64 = grad.iter().map(|g| g.abs()).sum();
            (1.0 / l1).min(1.0) * self.config.initial_step
        } else {
            self.config.initial_step
        };
        let ls = strong_wolfe(objective, params, &d, *loss, grad, gtd, t0, &self.config)?;
        self.evaluations += ls.evals;
        if !acceptable(&ls, *loss, gtd, self.config.c1) {
            return Ok(report);
        }
        let s: Vec<f64> = d.iter().map(|di| ls.t * di).collect();
        let y: Vec<f64> = ls.grad.iter().zip(grad.iter()).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > self.config.curvature_eps {
            if self.history.len() == self.config.memory {
                self.history.pop_front();
            }
            self.history.push_back((s.clone(), y, 1.0 / sy));
        }
        for (p, si) in params.iter_mut().zip(&s) {
            *p += si;
        }
        *loss = ls.f;
        *grad = ls.grad;
        report.loss_after = Some(ls.f);
        report.step_size = ls.t;
        report.accepted = true;
        Ok(report)
    }
}

/// Full-matrix BFGS sharing the line search; only practical for small
/// problems and kept as a reference for [`Lbfgs`].
#[derive(Debug, Clone)]
pub struct DenseBfgs {
    config: LbfgsConfig,
    /// Row-major inverse Hessian estimate; `None` until the first update.
    h: Option<Vec<f64>>,
    n: usize,
}

impl DenseBfgs {
    pub fn new(n: usize, config: LbfgsConfig) -> Result<Self, OptimError> {
        config.validate()?;
        Ok(Self { config, h: None, n })
    }

    pub fn direction(&self, grad: &[f64]) -> Vec<f64> {
        match &self.h {
            None => grad.iter().map(|g| -g).collect(),
            Some(h) => (0..self.n).map(|i| -dot(&h[i * self.n..(i + 1) * self.n], grad)).collect(),
        }
    }

    pub fn step_from<O: Objective + ?Sized>(
        &mut self,
        params: &mut [f64],
        loss: &mut f64,
        grad: &mut Vec<f64>,
        objective: &mut O,
    ) -> Result<StepReport, OptimError> {
        check_finite(grad)?;
        let n = self.n;
        let grad_norm = norm(grad);
        let mut report = StepReport {
            loss_before: *loss,
            loss_after: None,
            grad_norm,
            step_size: 0.0,
            accepted: false,
        };
        if grad_norm == 0.0 {
            return Ok(report);
        }
        let mut d = self.direction(grad);
        let mut gtd = dot(grad, &d);
        if !(gtd < 0.0) {
            self.h = None;
            d = grad.iter().map(|g| -g).collect();
            gtd = -grad_norm * grad_norm;
        }
        let t0 = if self.h.is_none() {
            let l1: f64 = grad.iter().map(|g| g.abs()).sum();
            (1.0 / l1).min(1.0) * self.config.initial_step
        } else {
            self.config.initial_step
        };
        let ls = strong_wolfe(objective, params, &d, *loss, grad, gtd, t0, &self.config)?;
        if !acceptable(&ls, *loss, gtd, self.config.c1) {
            return Ok(report);
        }
        let s: Vec<f64> = d.iter().map(|di| ls.t * di).collect();
        let y: Vec<f64> = ls.grad.iter().zip(grad.iter()).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > self.config.curvature_eps {
            let h = self.h.get_or_insert_with(|| {
                let gamma = sy / dot(&y, &y);
                let mut eye = vec![0.0; n * n];
                (0..n).for_each(|i| eye[i * n + i] = gamma);
                eye
            });
            let rho = 1.0 / sy;
            let hy: Vec<f64> = (0..n).map(|i| dot(&h[i * n..(i + 1) * n], &y)).collect();
            let yhy = dot(&y, &hy);
            // H <- H - rho (s hy' + hy s') + (rho^2 y'Hy + rho) s s'
            for i in 0..n {
                for j in 0..n {
                    h[i * n + j] += -rho * (s[i] * hy[j] + hy[i] * s[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
                }
            }
        }
        for (p, si) in params.iter_mut().zip(&s) {
            *p += si;
        }
        *loss = ls.f;
        *grad = ls.grad;
        report.loss_after = Some(ls.f);
        report.step_size = ls.t;
        report.accepted = true;
        Ok(report)
    }
}
