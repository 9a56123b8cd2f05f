use pinn_core::network::NetworkParams;
use pinn_core::optim::{AdamConfig, LbfgsConfig};
use pinn_core::problems::{LossEvaluator, ProblemSpec, ShmParams, WaveParams};
use pinn_core::sampling::build_point_set;
use pinn_core::trainer::{
    l2_error, run_curriculum, train, write_metrics_csv, CurriculumSpec, Init, OptimizerChoice, StopReason, TrainConfig,
    TrainError,
};

fn shm(w0: f64) -> ProblemSpec {
    ProblemSpec::Shm(ShmParams::from_omega0(w0).unwrap())
}

fn small(problem: ProblemSpec, optimizer: OptimizerChoice, epochs: usize) -> TrainConfig {
    let mut cfg = TrainConfig::new(problem, optimizer, epochs);
    cfg.layer_dims = vec![problem.input_dim(), 8, 8, 1];
    if let ProblemSpec::Wave(_) = problem {
        cfg.plan.n_interior = 32;
        cfg.plan.n_spatial_boundary = 8;
        cfg.plan.n_temporal_boundary = 8;
    }
    cfg
}

fn csv(cfg: &TrainConfig) -> String {
    let o = train(cfg).unwrap();
    let mut buf = Vec::new();
    write_metrics_csv(&o.metrics, &mut buf, false).unwrap();
    String::from_utf8(buf).unwrap()
}

#[test]
fn zero_budget_rejected() {
    let cfg = small(shm(20.0), OptimizerChoice::Adam(AdamConfig::default()), 0);
    assert!(matches!(train(&cfg), Err(TrainError::InvalidConfig(_))));
}

#[test]
fn identical_configs_give_identical_traces() {
    let cfg = small(shm(20.0), OptimizerChoice::Lbfgs(LbfgsConfig::default()), 30);
    assert_eq!(csv(&cfg), csv(&cfg));
    let wave = small(
        ProblemSpec::Wave(WaveParams::new(2.0).unwrap()),
        OptimizerChoice::Hybrid {
            adam_epochs: 5,
            lbfgs_epochs: 10,
            adam: AdamConfig::default(),
            lbfgs: LbfgsConfig::default(),
        },
        20,
    );
    assert_eq!(csv(&wave), csv(&wave));
}

#[test]
fn hybrid_degenerates_to_single_optimizers() {
    let lb = LbfgsConfig::default();
    let ad = AdamConfig::default();
    let pure_lbfgs = small(shm(20.0), OptimizerChoice::Lbfgs(lb), 15);
    let hybrid_lbfgs = small(
        shm(20.0),
        OptimizerChoice::Hybrid { adam_epochs: 0, lbfgs_epochs: 15, adam: ad, lbfgs: lb },
        15,
    );
    assert_eq!(csv(&pure_lbfgs), csv(&hybrid_lbfgs));
    let pure_adam = small(shm(20.0), OptimizerChoice::Adam(ad), 15);
    let hybrid_adam = small(
        shm(20.0),
        OptimizerChoice::Hybrid { adam_epochs: 15, lbfgs_epochs: 0, adam: ad, lbfgs: lb },
        15,
    );
    assert_eq!(csv(&pure_adam), csv(&hybrid_adam));
}

#[test]
fn metrics_rows_and_progress() {
    let cfg = small(shm(20.0), OptimizerChoice::Lbfgs(LbfgsConfig::default()), 50);
    let o = train(&cfg).unwrap();
    assert_eq!(o.stop, StopReason::BudgetExhausted);
    assert_eq!(o.metrics.len(), 50);
    for (i, m) in o.metrics.iter().enumerate() {
        assert_eq!(m.epoch, i + 1);
        assert!(m.loss_total >= 0.0 && m.loss_f >= 0.0 && m.loss_i >= 0.0 && m.loss_b >= 0.0);
        assert!(m.grad_norm >= 0.0);
    }
    let best = o.metrics.iter().map(|m| m.loss_total).fold(f64::INFINITY, f64::min);
    assert!(best <= o.metrics[0].loss_total);
    assert!(!o.metrics[0].l2_rel_error.is_nan());
    assert!(o.metrics[1].l2_rel_error.is_nan());
    assert_eq!(o.checkpoint.meta.epoch, 50);
    assert_eq!(o.checkpoint.meta.optimizer, "lbfgs");
}

#[test]
fn target_loss_stops_early() {
    let mut cfg = small(shm(20.0), OptimizerChoice::Lbfgs(LbfgsConfig::default()), 200);
    cfg.target_loss = 10.0;
    let o = train(&cfg).unwrap();
    assert_eq!(o.stop, StopReason::Converged);
    assert!(o.metrics.last().unwrap().loss_total <= 10.0);
    assert!(o.metrics[..o.metrics.len() - 1].iter().all(|m| m.loss_total > 10.0));
    assert_eq!(o.checkpoint.meta.final_loss, o.metrics.last().unwrap().loss_total);
}

#[test]
fn overflowing_network_diverges() {
    let dims = [1, 8, 8, 1];
    let mut net = NetworkParams::init(&dims, 1).unwrap();
    let mut flat = net.flat().to_vec();
    let n = flat.len();
    for v in &mut flat[n - 9..n - 1] {
        *v = 1e200;
    }
    net.set_flat(&flat).unwrap();
    let mut cfg = small(shm(20.0), OptimizerChoice::Adam(AdamConfig::default()), 50);
    cfg.init = Init::Params(net);
    match train(&cfg) {
        Err(TrainError::Diverged { epochs, last }) => {
            assert_eq!(epochs, 5);
            assert!(!last.loss_total.is_finite());
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn warm_start_architecture_mismatch() {
    let mut cfg = small(shm(20.0), OptimizerChoice::Adam(AdamConfig::default()), 5);
    cfg.init = Init::Params(NetworkParams::init(&[1, 4, 1], 0).unwrap());
    assert!(matches!(train(&cfg), Err(TrainError::Architecture { .. })));
    let a = small(shm(20.0), OptimizerChoice::Adam(AdamConfig::default()), 5);
    let mut b = small(shm(30.0), OptimizerChoice::Adam(AdamConfig::default()), 5);
    b.layer_dims = vec![1, 4, 1];
    assert!(matches!(
        run_curriculum(&CurriculumSpec { stages: vec![a, b] }, None),
        Err(TrainError::Architecture { .. })
    ));
}

#[test]
fn curriculum_warm_start_is_parameter_exact() {
    let stages: Vec<TrainConfig> = [1.0, 1.5, 2.0]
        .iter()
        .map(|&c| {
            let mut cfg = small(ProblemSpec::Wave(WaveParams::new(c).unwrap()), OptimizerChoice::Lbfgs(LbfgsConfig::default()), 12);
            cfg.seed = 4;
            cfg
        })
        .collect();
    let results = run_curriculum(&CurriculumSpec { stages: stages.clone() }, None).unwrap();
    assert_eq!(results.len(), 3);
    for i in 1..3 {
        let prev = &results[i - 1].outcome.checkpoint.params;
        let cfg = &stages[i];
        let points = build_point_set(&cfg.plan, &cfg.problem).unwrap();
        let ev = LossEvaluator::new(&cfg.problem, &points, &cfg.layer_dims).unwrap();
        let (b, _) = ev.evaluate(prev.flat()).unwrap().combine(&cfg.weights, 0, cfg.max_epochs).unwrap();
        let first = results[i].outcome.metrics[0].loss_total;
        assert!((first - b.total).abs() <= 1e-12 * b.total.abs(), "{first} vs {}", b.total);
        assert_eq!(results[i].outcome.checkpoint.params.layer_dims(), prev.layer_dims());
    }
}

#[test]
fn fresh_networks_are_far_from_the_oscillator() {
    let problem = shm(20.0);
    for seed in 0..5 {
        let net = NetworkParams::init(&problem.default_layer_dims(), seed).unwrap();
        assert!(l2_error(&net, &problem).unwrap() > 10.0);
    }
}
