use mirrorflow::data::{gen_circle_dataset, gen_teacher, Dataset};
use mirrorflow::diagnostics::{layer_duals, MarginOptions};
use mirrorflow::flow::{
    dual_of, init_params, md_step, run, run_with_theta, schedule_lr, InitSpec, RunSpec, Schedule, TrainState,
};
use mirrorflow::io::write_metrics_csv;
use mirrorflow::network::{Activation, HomogeneousNet, Matrix, Params};
use mirrorflow::potentials::{LayerPotentials, MirrorPotential};

fn circle_spec(potential: MirrorPotential, hidden: usize, k: usize, lr: f64, steps: usize) -> RunSpec {
    let teacher = gen_teacher(1, 3, 2).unwrap();
    let net = HomogeneousNet::new(vec![2, hidden, 1], Activation::Relu, false).unwrap();
    RunSpec {
        potentials: LayerPotentials::uniform(potential, net.depth()),
        net,
        data: gen_circle_dataset(&teacher, 1, k).unwrap(),
        schedule: Schedule::constant(lr, steps),
        init: InitSpec {
            scale: 0.3,
            ..InitSpec::default()
        },
        seed: 7,
        log_every: 10,
        margins: MarginOptions::default(),
    }
}

fn linear_1d() -> (HomogeneousNet, Dataset) {
    let net = HomogeneousNet::new(vec![1, 1], Activation::Linear, false).unwrap();
    let data = Dataset::new(vec![vec![1.0], vec![2.0], vec![-0.5]], vec![1.0, 1.0, -1.0]).unwrap();
    (net, data)
}

fn total_dual(pots: &LayerPotentials, theta: &Params) -> f64 {
    layer_duals(pots, theta).unwrap().iter().sum()
}

#[test]
fn zero_steps_logs_only_the_initial_record() {
    let spec = circle_spec(MirrorPotential::euclidean(), 10, 20, 0.1, 0);
    let traj = run(&spec).unwrap();
    assert_eq!(traj.records.len(), 1);
    assert_eq!(traj.records[0].step, 0);
    assert_eq!(traj.final_state.theta, traj.initial_theta);
}

#[test]
fn dual_stays_consistent_with_primal() {
    for pot in [
        MirrorPotential::hyperbolic(0.1).unwrap(),
        MirrorPotential::smoothed(3.0, 1.0).unwrap(),
        MirrorPotential::smoothed(10.0, 0.1).unwrap(),
        MirrorPotential::euclidean(),
    ] {
        let spec = circle_spec(pot, 10, 30, 0.005, 0);
        let theta0 = init_params(&spec.net, &spec.init, spec.seed);
        let mut state = TrainState::new(theta0, &spec.potentials, &spec.net, &spec.data, 0).unwrap();
        for _ in 0..200 {
            state = md_step(&state, &spec.potentials, &spec.net, &spec.data, &spec.schedule).unwrap();
            let recomputed = dual_of(&state.theta, &spec.potentials).unwrap();
            let zmax = state.dual.max_abs();
            for (a, b) in recomputed.iter().zip(state.dual.iter()) {
                assert!((a - b).abs() <= 1e-9 * (1.0 + zmax), "{:?}: {a} vs {b}", pot.kind());
            }
        }
    }
}

#[test]
fn identical_seeds_give_identical_csv() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = circle_spec(MirrorPotential::hyperbolic(0.5).unwrap(), 12, 40, 0.005, 300);
    spec.schedule = spec.schedule.rescaled();
    let paths = [dir.path().join("a.csv"), dir.path().join("b.csv")];
    for p in &paths {
        write_metrics_csv(p, &run(&spec).unwrap().records).unwrap();
    }
    let a = std::fs::read(&paths[0]).unwrap();
    assert_eq!(a, std::fs::read(&paths[1]).unwrap());
    assert!(!a.is_empty());
}

#[test]
fn euclidean_matches_plain_gradient_descent() {
    let spec = circle_spec(MirrorPotential::euclidean(), 8, 25, 0.005, 0);
    let theta0 = init_params(&spec.net, &spec.init, spec.seed);
    let mut state = TrainState::new(theta0.clone(), &spec.potentials, &spec.net, &spec.data, 0).unwrap();
    let mut theta = theta0;
    for _ in 0..1000 {
        state = md_step(&state, &spec.potentials, &spec.net, &spec.data, &spec.schedule).unwrap();
        let lg = spec.net.loss_and_grad(&theta, &spec.data).unwrap();
        // θ ← θ − η∇ℒ with ∇ℒ = −ℒ·grad_hat.
        theta.axpy(0.005 * lg.log_loss.exp(), &lg.grad_hat);
    }
    for (a, b) in state.theta.iter().zip(theta.iter()) {
        assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()), "{a} vs {b}");
    }
}

#[test]
fn separable_linear_loss_decreases_every_step() {
    let (net, data) = linear_1d();
    let spec = RunSpec {
        potentials: LayerPotentials::uniform(MirrorPotential::euclidean(), 1),
        net,
        data,
        schedule: Schedule::constant(0.05, 2000),
        init: InitSpec::default(),
        seed: 0,
        log_every: 1,
        margins: MarginOptions::default(),
    };
    let theta0 = Params {
        layers: vec![Matrix::from_rows(&[&[-0.3]]).unwrap()],
    };
    let traj = run_with_theta(&spec, theta0).unwrap();
    assert_eq!(traj.records.len(), 2001);
    for w in traj.records.windows(2) {
        assert!(w[1].log_loss < w[0].log_loss, "step {}", w[1].step);
    }
}

#[test]
fn hyperbolic_rescaling_follows_the_schedule() {
    let mut spec = circle_spec(MirrorPotential::hyperbolic(0.1).unwrap(), 20, 40, 0.005, 20000);
    spec.schedule = spec.schedule.rescaled();
    spec.schedule.stop_log_loss = 1e-8f64.ln();
    spec.log_every = 1;
    let traj = run(&spec).unwrap();
    assert!(traj.halt.is_none(), "{:?}", traj.halt);
    let mut rescaled_steps = 0;
    for w in traj.records.windows(2) {
        let (prev, cur) = (&w[0], &w[1]);
        let expected = schedule_lr(&spec.schedule, prev.log_loss, prev.q_min > 0.0);
        assert!((cur.eta_eff - expected).abs() <= 1e-12 * expected, "step {}", cur.step);
        assert!((cur.time - prev.time - cur.eta_eff).abs() <= 1e-9 * cur.time);
        if expected > spec.schedule.base_lr {
            rescaled_steps += 1;
            // Δtime · ℒ = factor · η
            let product = cur.eta_eff * prev.log_loss.exp();
            assert!((product - 0.1 * 0.005).abs() <= 1e-12);
        }
    }
    assert!(rescaled_steps > 0, "rescaling never activated");
    assert!(traj.last().q_min > 0.0);
    let times: Vec<f64> = traj.records.iter().map(|r| r.time).collect();
    assert!(times.windows(2).all(|w| w[1] > w[0]));
}

#[test]
fn small_steps_decrease_the_loss() {
    for pot in [
        MirrorPotential::euclidean(),
        MirrorPotential::hyperbolic(0.5).unwrap(),
        MirrorPotential::smoothed(3.0, 1.0).unwrap(),
    ] {
        let mut spec = circle_spec(pot, 10, 30, 0.01, 2000);
        spec.log_every = 1;
        let traj = run(&spec).unwrap();
        let ok = traj
            .records
            .windows(2)
            .filter(|w| w[1].log_loss <= w[0].log_loss)
            .count();
        let total = traj.records.len() - 1;
        assert!(ok as f64 >= 0.99 * total as f64, "{:?}: {ok}/{total}", pot.kind());
    }
}

#[test]
fn dual_growth_is_controlled_by_the_loss() {
    for pot in [
        MirrorPotential::euclidean(),
        MirrorPotential::hyperbolic(0.1).unwrap(),
        MirrorPotential::smoothed(3.0, 1.0).unwrap(),
    ] {
        let mut spec = circle_spec(pot, 20, 40, 0.005, 0);
        spec.schedule = Schedule::constant(0.005, 0).rescaled();
        let theta0 = init_params(&spec.net, &spec.init, spec.seed);
        let mut state = TrainState::new(theta0, &spec.potentials, &spec.net, &spec.data, 0).unwrap();
        let depth = spec.net.depth() as f64;
        let mut checked = 0;
        for _ in 0..20000 {
            let q0 = total_dual(&spec.potentials, &state.theta);
            let next = md_step(&state, &spec.potentials, &spec.net, &spec.data, &spec.schedule).unwrap();
            if state.all_classified() && state.log_loss < 0.0 {
                let dq = total_dual(&spec.potentials, &next.theta) - q0;
                let dt = next.time - state.time;
                let loss = state.log_loss.exp();
                let bound = depth * loss * (-state.log_loss) * 0.9;
                assert!(dq / dt >= bound, "{:?} step {}: {} < {bound}", pot.kind(), next.step, dq / dt);
                checked += 1;
            }
            state = next;
            if state.log_loss < 1e-6f64.ln() {
                break;
            }
        }
        assert!(checked > 100, "{:?}: only {checked} separated steps", pot.kind());
    }
}
