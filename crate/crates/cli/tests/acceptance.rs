//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.
//!
//! `PINN_ACCEPTANCE=1,2,4` restricts the run to the listed criteria.

use std::f64::consts::PI;
use std::fs;
use std::process::Command;
use std::time::Instant;

use pinn_core::autodiff::batch::{Channel, JetBatch};
use pinn_core::autodiff::{backward, nested_second_derivative, Jet2, Tape};
use pinn_core::network::NetworkParams;
use pinn_core::optim::{Adam, AdamConfig, Lbfgs, LbfgsConfig, OptimError};
use pinn_core::problems::{composite_loss_on_tape, LossEvaluator, ProblemSpec, ShmParams, WaveParams};
use pinn_core::sampling::{build_point_set, sobol_2d, SamplingPlan, Scheme};
use pinn_core::trainer::{run_curriculum, train, CurriculumSpec, Init, TrainOutcome};
use pinn_forge::recipes::{self, SHM_CHAIN, WAVE_CHAIN};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

const SEEDS: [u64; 3] = [0, 1, 2];

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

/// Runs `trial` per seed until two seeds agree; passes when two pass.
fn two_of_three(mut trial: impl FnMut(u64) -> (bool, String)) -> Verdict {
    let (mut passed, mut failed) = (0, 0);
    let mut notes = Vec::new();
    for seed in SEEDS {
        let (ok, note) = trial(seed);
        println!("    seed {seed}: {} {note}", if ok { "ok" } else { "no" });
        notes.push(format!("seed {seed} {}", if ok { "ok" } else { "no" }));
        if ok {
            passed += 1;
        } else {
            failed += 1;
        }
        if passed >= 2 || failed >= 2 {
            break;
        }
    }
    Verdict::new(passed >= 2, notes.join(", "))
}

// ---------------------------------------------------------------- 1

fn random_dims(rng: &mut StdRng, input: usize) -> Vec<usize> {
    let depth = rng.random_range(1..=3);
    let mut dims = vec![input];
    dims.extend((0..depth).map(|_| rng.random_range(1..=8)));
    dims.push(1);
    dims
}

fn random_net(rng: &mut StdRng, dims: &[usize]) -> NetworkParams {
    let mut net = NetworkParams::init(dims, rng.random()).unwrap();
    let flat: Vec<f64> = net.flat().iter().map(|w| w + rng.random_range(-0.5..0.5)).collect();
    net.set_flat(&flat).unwrap();
    net
}

/// Largest gradient deviation relative to the largest finite-difference
/// component, for both the batched and the tape route.
fn gradient_deviation(problem: &ProblemSpec, plan: &SamplingPlan, net: &NetworkParams) -> f64 {
    let points = build_point_set(plan, problem).unwrap();
    let ev = LossEvaluator::new(problem, &points, net.layer_dims()).unwrap();
    let weights = problem.default_weights();
    let (epoch, max) = (3, 10);
    let loss_at = |flat: &[f64]| ev.evaluate(flat).unwrap().combine(&weights, epoch, max).unwrap().0.total;
    let (_, batch) = ev.evaluate(net.flat()).unwrap().combine(&weights, epoch, max).unwrap();

    let mut tape = Tape::for_params(net.flat());
    let out = composite_loss_on_tape(ev.families(), net, &weights, epoch, max, &mut tape).unwrap();
    let taped = backward(&tape, out).unwrap();

    // five-point central differences
    let fd: Vec<f64> = (0..net.flat().len())
        .map(|k| {
            let h = 1e-4 * (1.0 + net.flat()[k].abs());
            let at = |s: f64| {
                let mut p = net.flat().to_vec();
                p[k] += s * h;
                loss_at(&p)
            };
            (-at(2.0) + 8.0 * at(1.0) - 8.0 * at(-1.0) + at(-2.0)) / (12.0 * h)
        })
        .collect();
    let scale = fd.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let worst = fd
        .iter()
        .zip(batch.iter().zip(taped.iter()))
        .map(|(f, (b, t))| (f - b).abs().max((f - t).abs()))
        .fold(0.0f64, f64::max);
    worst / scale
}

/// Same for the second input derivative along every axis, against
/// `(f(x+h) - 2 f(x) + f(x-h)) / h^2`.
fn second_derivative_deviation(rng: &mut StdRng, net: &NetworkParams, bounds: &[(f64, f64)]) -> f64 {
    let h = 1e-3;
    let (mut worst, mut scale) = (0.0f64, 0.0f64);
    for _ in 0..5 {
        let x: Vec<f64> = bounds.iter().map(|&(lo, hi)| rng.random_range(lo..hi)).collect();
        for axis in 0..x.len() {
            let at = |s: f64| {
                let mut p = x.clone();
                p[axis] += s * h;
                net.forward_value(&p).unwrap()
            };
            let fd = (at(1.0) - 2.0 * at(0.0) + at(-1.0)) / (h * h);
            let mut tape = Tape::for_params(net.flat());
            let jet = nested_second_derivative(net, &x, axis, &mut tape).unwrap();
            let taped = tape.value(jet.d2);
            let batch = JetBatch::forward(net.view(), &x, &[axis]).unwrap();
            let batched = batch.channel(Channel::D2(0))[0];
            scale = scale.max(fd.abs());
            worst = worst.max((fd - taped).abs()).max((fd - batched).abs());
        }
    }
    worst / scale
}

fn criterion_1() -> Verdict {
    let mut rng = StdRng::seed_from_u64(2024);
    let shm = ProblemSpec::Shm(ShmParams::from_omega0(20.0).unwrap());
    let mut shm_plan = shm.default_plan();
    shm_plan.n_interior = 12;
    let wave = ProblemSpec::Wave(WaveParams::new(2.0).unwrap());
    let wave_plan = SamplingPlan {
        n_interior: 10,
        n_spatial_boundary: 4,
        n_temporal_boundary: 5,
        bounds: wave.domain(),
        scheme: Scheme::Sobol,
        skip: 1,
    };
    let (mut grad_worst, mut d2_worst) = (0.0f64, 0.0f64);
    for i in 0..10 {
        let (problem, plan) = if i % 2 == 0 { (&shm, &shm_plan) } else { (&wave, &wave_plan) };
        let dims = random_dims(&mut rng, problem.input_dim());
        let net = random_net(&mut rng, &dims);
        grad_worst = grad_worst.max(gradient_deviation(problem, plan, &net));
        d2_worst = d2_worst.max(second_derivative_deviation(&mut rng, &net, &problem.domain()));
        // the other problem on a network of the same hidden shape
        let (other, other_plan) = if i % 2 == 0 { (&wave, &wave_plan) } else { (&shm, &shm_plan) };
        let mut dims = dims;
        dims[0] = other.input_dim();
        let net = random_net(&mut rng, &dims);
        grad_worst = grad_worst.max(gradient_deviation(other, other_plan, &net));
    }
    Verdict::new(
        grad_worst <= 1e-5 && d2_worst <= 1e-4,
        format!("gradient rel dev {grad_worst:.2e} (<= 1e-5), second derivative rel dev {d2_worst:.2e} (<= 1e-4)"),
    )
}

// ---------------------------------------------------------------- 2

fn criterion_2() -> Verdict {
    let mut rng = StdRng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for w0 in [20.0, 40.0] {
        let p = ShmParams::from_omega0(w0).unwrap();
        assert_eq!(p.delta(), 2.0);
        // u(t) = a e^{-delta t} cos(omega t + phi), differentiated by hand
        let (d, w, a, phi) = (p.delta(), p.omega(), 2.0 * p.amplitude(), p.phase());
        let u = |t: f64| a * (-d * t).exp() * (w * t + phi).cos();
        let du = |t: f64| a * (-d * t).exp() * (-d * (w * t + phi).cos() - w * (w * t + phi).sin());
        let ddu = |t: f64| {
            a * (-d * t).exp() * ((d * d - w * w) * (w * t + phi).cos() + 2.0 * d * w * (w * t + phi).sin())
        };
        for _ in 0..50 {
            let t = rng.random_range(0.0..p.t_max);
            let r = p.mass * ddu(t) + p.friction * du(t) + p.stiffness * u(t);
            worst = worst.max(r.abs());
        }
        worst = worst.max((u(0.0) - 1.0).abs()).max(du(0.0).abs());
    }
    for c in [1.0, 2.0, 4.0] {
        let p = WaveParams::new(c).unwrap();
        let u_tt = |x: f64, t: f64| -c * c * x.sin() * ((c * t).cos() + (c * t).sin() / c);
        let u_xx = |x: f64, t: f64| -x.sin() * ((c * t).cos() + (c * t).sin() / c);
        let u_t = |x: f64, t: f64| x.sin() * (-c * (c * t).sin() + (c * t).cos());
        for _ in 0..50 {
            let x = rng.random_range(0.0..p.x_max);
            let t = rng.random_range(0.0..p.t_max);
            worst = worst.max((u_tt(x, t) - c * c * u_xx(x, t)).abs());
            // the library's closed form against the hand-written one
            let hand = x.sin() * ((c * t).cos() + (c * t).sin() / c);
            worst = worst.max((p.exact(x, t) - hand).abs());
            worst = worst.max((p.exact(x, 0.0) - p.initial_value(x)).abs());
            worst = worst.max((u_t(x, 0.0) - p.initial_rate(x)).abs());
            worst = worst.max(p.exact(0.0, t).abs()).max(p.exact(PI, t).abs());
        }
    }
    // the jet route used by the residual families
    for w0 in [20.0, 40.0] {
        let p = ShmParams::from_omega0(w0).unwrap();
        for _ in 0..50 {
            let t = rng.random_range(0.0..p.t_max);
            worst = worst.max(p.residual(p.exact_jet(t)).abs());
        }
    }
    for c in [1.0, 2.0, 4.0] {
        for _ in 0..50 {
            let x = rng.random_range(0.0..PI);
            let t = rng.random_range(0.0..2.0 * PI);
            let along_t = {
                let tj = Jet2::seed(t).scale(c);
                (tj.cos() + tj.sin().scale(1.0 / c)).scale(x.sin())
            };
            let along_x = Jet2::seed(x).sin().scale((c * t).cos() + (c * t).sin() / c);
            worst = worst.max((along_t.d2 - c * c * along_x.d2).abs());
        }
    }
    Verdict::new(worst < 1e-8, format!("max residual {worst:.2e} (< 1e-8)"))
}

// ---------------------------------------------------------------- 3

fn spd5() -> Vec<f64> {
    let b = [
        [2.0, -1.0, 0.0, 1.0, 3.0],
        [0.0, 1.0, 2.0, -1.0, 0.0],
        [1.0, 0.0, -2.0, 0.0, 1.0],
        [3.0, 1.0, 0.0, 2.0, -1.0],
        [0.0, -1.0, 1.0, 1.0, 2.0],
    ];
    let mut a = vec![0.0; 25];
    for i in 0..5 {
        for j in 0..5 {
            a[i * 5 + j] = (0..5).map(|k| b[k][i] * b[k][j]).sum::<f64>() + if i == j { 1.0 } else { 0.0 };
        }
    }
    a
}

/// Gaussian elimination with partial pivoting.
fn solve(a: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = rhs.len();
    let mut m: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut row = a[i * n..(i + 1) * n].to_vec();
            row.push(rhs[i]);
            row
        })
        .collect();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs())).unwrap();
        m.swap(c, p);
        for r in c + 1..n {
            let f = m[r][c] / m[c][c];
            for k in c..=n {
                m[r][k] -= f * m[c][k];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        x[r] = (m[r][n] - (r + 1..n).map(|k| m[r][k] * x[k]).sum::<f64>()) / m[r][r];
    }
    x
}

fn criterion_3() -> Verdict {
    let mut notes = Vec::new();

    let mut adam = Adam::new(1, AdamConfig { lr: 0.1, ..Default::default() }).unwrap();
    let mut theta = [0.0];
    adam.step(&mut theta, &[1.0], 0.0).unwrap();
    let adam_ok = (theta[0] + 0.099999999).abs() <= 1e-9;
    notes.push(format!("adam {:.10}", theta[0]));

    // 1/2 x'Ax - b'x from -x*, so the minimizer sits at the origin after the shift
    let a = spd5();
    let b = [1.0, -2.0, 0.5, 3.0, -1.0];
    let x_star = solve(&a, &b);
    let mut quad = |x: &[f64], g: &mut [f64]| -> Result<f64, OptimError> {
        let mut f = 0.0;
        for i in 0..5 {
            g[i] = (0..5).map(|j| a[i * 5 + j] * x[j]).sum();
            f += 0.5 * x[i] * g[i];
        }
        Ok(f)
    };
    let mut x: Vec<f64> = x_star.iter().map(|v| -v).collect();
    let mut g = vec![0.0; 5];
    let mut loss = quad(&x, &mut g).unwrap();
    let mut opt = Lbfgs::new(LbfgsConfig { memory: 5, c1: 1e-8, c2: 1e-6, ..Default::default() }).unwrap();
    let mut spd_steps = 0;
    while x.iter().fold(0.0f64, |m, v| m.max(v.abs())) > 1e-8 && spd_steps < 5 {
        if opt.step_from(&mut x, &mut loss, &mut g, &mut quad).unwrap().accepted {
            spd_steps += 1;
        } else {
            break;
        }
    }
    let spd_ok = x.iter().fold(0.0f64, |m, v| m.max(v.abs())) <= 1e-8;
    notes.push(format!("spd {spd_steps} steps"));

    let mut rosen = |x: &[f64], g: &mut [f64]| -> Result<f64, OptimError> {
        let (a, b) = (x[0], x[1]);
        g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
        g[1] = 200.0 * (b - a * a);
        Ok((1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2))
    };
    let mut x = vec![-1.2, 1.0];
    let mut g = vec![0.0; 2];
    let mut loss = rosen(&x, &mut g).unwrap();
    let mut opt = Lbfgs::new(LbfgsConfig::default()).unwrap();
    let mut steps = 0;
    let off = |x: &[f64]| (x[0] - 1.0).abs().max((x[1] - 1.0).abs());
    while off(&x) > 1e-6 && steps < 100 {
        opt.step_from(&mut x, &mut loss, &mut g, &mut rosen).unwrap();
        steps += 1;
    }
    let rosen_ok = off(&x) <= 1e-6;
    notes.push(format!("rosenbrock {steps} steps"));

    Verdict::new(adam_ok && spd_ok && rosen_ok, notes.join(", "))
}

// ---------------------------------------------------------------- 4

fn criterion_4() -> Verdict {
    // unscrambled 2-D listing with the conventional direction numbers
    let reference = [
        [0.0, 0.0],
        [0.5, 0.5],
        [0.75, 0.25],
        [0.25, 0.75],
        [0.375, 0.375],
        [0.875, 0.875],
        [0.625, 0.125],
        [0.125, 0.625],
    ];
    let got = sobol_2d(8, 0);
    Verdict::new(got == reference, format!("{got:?}"))
}

// ---------------------------------------------------------------- 5

fn criterion_5() -> Verdict {
    two_of_three(|seed| {
        let cfg = recipes::shm_hybrid(20.0, seed);
        let out = train(&cfg).unwrap();
        let reached = out.epochs_to(1e-3);
        let ok = reached.is_some() && out.metrics.len() <= 10_000 && out.final_l2 <= 2.0;
        (ok, format!("loss <= 1e-3 at epoch {reached:?}, final L2 {:.3}%", out.final_l2))
    })
}

// ---------------------------------------------------------------- 6 and 7

fn shm_base(seed: u64) -> TrainOutcome {
    let out = train(&recipes::shm_base(seed)).unwrap();
    println!(
        "    base 30 rad/s seed {seed}: {} epochs, loss {:.2e}, L2 {:.3}%",
        out.metrics.len(),
        out.checkpoint.meta.final_loss,
        out.final_l2
    );
    out
}

fn criterion_6(base0: &TrainOutcome) -> Verdict {
    two_of_three(|seed| {
        let base = if seed == 0 { base0.clone() } else { shm_base(seed) };
        let mut warm = recipes::shm_transfer_stage(40.0, 5_000, 1e-2);
        warm.seed = seed;
        warm.init = Init::Params(base.checkpoint.params.clone());
        let warm = train(&warm).unwrap();
        let mut cold = recipes::shm_transfer_stage(40.0, 5_000, 1e-2);
        cold.seed = seed;
        let cold = train(&cold).unwrap();
        let ok = warm.converged() && !cold.converged();
        (
            ok,
            format!(
                "transfer {:?} epochs to 1e-2, cold {:?} (final loss {:.2e})",
                warm.epochs_to(1e-2),
                cold.epochs_to(1e-2),
                cold.checkpoint.meta.final_loss
            ),
        )
    })
}

fn criterion_7(base0: &TrainOutcome) -> Verdict {
    let mut stages: Vec<_> = SHM_CHAIN
        .iter()
        .map(|&w0| recipes::shm_transfer_stage(w0, recipes::SHM_CHAIN_EPOCHS, recipes::SHM_CHAIN_TARGET))
        .collect();
    stages[0].init = Init::Params(base0.checkpoint.params.clone());
    let results = run_curriculum(&CurriculumSpec { stages }, None).unwrap();
    let notes: Vec<String> = results
        .iter()
        .zip(SHM_CHAIN)
        .map(|(r, w0)| format!("{w0}: {:.3}% in {} epochs", r.outcome.final_l2, r.outcome.metrics.len()))
        .collect();
    let ok = results.len() == SHM_CHAIN.len() && results.iter().all(|r| r.outcome.final_l2 <= 2.0);
    Verdict::new(ok, notes.join(", "))
}

// ---------------------------------------------------------------- 8

fn criterion_8() -> Verdict {
    let cfg = recipes::wave_stage(1.0, recipes::WAVE_C1_EPOCHS, 1e-5, 0);
    assert_eq!(
        (cfg.plan.n_interior, cfg.plan.n_spatial_boundary, cfg.plan.n_temporal_boundary),
        (512, 64, 32)
    );
    let out = train(&cfg).unwrap();
    Verdict::new(
        out.metrics.len() <= 5_000 && out.final_l2 <= 0.5,
        format!("L2 {:.3}% after {} epochs", out.final_l2, out.metrics.len()),
    )
}

// ---------------------------------------------------------------- 9

fn criterion_9() -> Verdict {
    let budget = recipes::WAVE_CHAIN_EPOCHS;
    two_of_three(|seed| {
        let stages = WAVE_CHAIN
            .iter()
            .map(|&c| recipes::wave_chain_stage(c, seed))
            .collect();
        let results = run_curriculum(&CurriculumSpec { stages }, None).unwrap();
        let mut note: Vec<String> = results
            .iter()
            .zip(WAVE_CHAIN)
            .map(|(r, c)| format!("c={c}: {} epochs{}", r.outcome.metrics.len(), if r.outcome.converged() { "" } else { " (no)" }))
            .collect();
        let all = results.iter().all(|r| r.outcome.converged());
        let warm = results.last().map(|r| r.outcome.metrics.len()).unwrap_or(usize::MAX);
        let cold = train(&recipes::wave_chain_stage(4.0, seed)).unwrap();
        // an unconverged cold run counts as exceeding the budget
        let cold_epochs = if cold.converged() { cold.metrics.len() } else { budget + 1 };
        note.push(format!(
            "cold c=4: {}",
            if cold.converged() { format!("{cold_epochs} epochs") } else { format!("not converged, loss {:.2e}", cold.checkpoint.meta.final_loss) }
        ));
        (all && warm < cold_epochs, note.join(", "))
    })
}

// ---------------------------------------------------------------- 10

const REPRO_CONFIG: &str = r#"[problem]
kind = "shm"
constant = 20.0

[optimizer]
kind = "hybrid"
adam_epochs = 50
lbfgs_epochs = 50

[run]
max_epochs = 100
target_loss = 1e-12
"#;

fn criterion_10() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("shm.toml");
    fs::write(&cfg, REPRO_CONFIG).unwrap();
    let run = |name: &str| {
        let out = tmp.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_pinn-forge"))
            .args(["train", "--config", cfg.to_str().unwrap(), "--seed", "11", "--threads", "1", "--out-dir"])
            .arg(&out)
            .output()
            .unwrap();
        (status.status.code(), fs::read(out.join("shm_20_hybrid_metrics.csv")).ok())
    };
    let (code_a, a) = run("a");
    let (code_b, b) = run("b");
    let rows = a.as_ref().map(|m| m.iter().filter(|&&c| c == b'\n').count().saturating_sub(1));
    let ok = a.is_some() && a == b && rows == Some(100);
    Verdict::new(ok, format!("exit codes {code_a:?}/{code_b:?}, {rows:?} rows, identical: {}", a == b))
}

fn main() {
    let only: Option<Vec<u32>> = std::env::var("PINN_ACCEPTANCE")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let wanted = |n: u32| only.as_ref().is_none_or(|v| v.contains(&n));

    let mut failures = 0;
    let mut report = |n: u32, name: &str, f: &mut dyn FnMut() -> Verdict| {
        if !wanted(n) {
            return;
        }
        println!("criterion {n} ({name}) running");
        let start = Instant::now();
        let v = f();
        let status = if v.pass { "PASS" } else { "FAIL" };
        println!("criterion {n:>2} {status}  {name}: {} [{:.1}s]", v.detail, start.elapsed().as_secs_f64());
        if !v.pass {
            failures += 1;
        }
    };

    report(1, "autodiff oracles", &mut criterion_1);
    report(2, "exact-solution nullity", &mut criterion_2);
    report(3, "optimizer oracles", &mut criterion_3);
    report(4, "sobol conformance", &mut criterion_4);
    report(5, "oscillator 20 rad/s cold start", &mut criterion_5);
    let base0 = (wanted(6) || wanted(7)).then(|| shm_base(0));
    if let Some(base0) = &base0 {
        report(6, "transfer beats cold start at 40 rad/s", &mut || criterion_6(base0));
        report(7, "oscillator chain 40, 50, 60 rad/s", &mut || criterion_7(base0));
    }
    report(8, "wave c=1", &mut criterion_8);
    report(9, "wave chain c = 1, 1.5, 2, 4", &mut criterion_9);
    report(10, "reproducible metrics", &mut criterion_10);

    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
