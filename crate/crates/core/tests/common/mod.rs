#![allow(dead_code)]

use mirrorflow::potentials::{MirrorPotential, PotentialKind};
use rand::{RngExt, SeedableRng};
use rand_pcg::Pcg64;

pub const LAMBDAS: [f64; 4] = [1e-4, 0.1, 1.0, 10.0];

/// Hyperbolic, smoothed p ∈ {2, 3, 10} and Euclidean for every λ in [`LAMBDAS`].
pub fn potential_grid() -> Vec<MirrorPotential> {
    let mut out = Vec::new();
    for &lambda in &LAMBDAS {
        out.push(MirrorPotential::hyperbolic(lambda).unwrap());
        for p in [2.0, 3.0, 10.0] {
            out.push(MirrorPotential::smoothed(p, lambda).unwrap());
        }
        out.push(MirrorPotential::euclidean());
    }
    out
}

/// Signed values with log-uniform magnitude in [1e-3, 10].
pub fn sample_scalar(rng: &mut Pcg64) -> f64 {
    let mag = 10f64.powf(rng.random_range(-3.0..1.0));
    if rng.random_bool(0.5) {
        mag
    } else {
        -mag
    }
}

pub fn sample_vec(rng: &mut Pcg64, n: usize) -> Vec<f64> {
    (0..n).map(|_| sample_scalar(rng)).collect()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

/// sup_t (t·z − r(t)) by golden-section search. The objective is concave
/// with maximizer inside `[lo, hi]`.
pub fn numeric_conjugate(pot: &MirrorPotential, z: f64, mut lo: f64, mut hi: f64) -> f64 {
    let f = |t: f64| t * z - pot.r_scalar(t);
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - inv_phi * (hi - lo);
    let mut b = lo + inv_phi * (hi - lo);
    let (mut fa, mut fb) = (f(a), f(b));
    for _ in 0..200 {
        if fa < fb {
            lo = a;
            a = b;
            fa = fb;
            b = lo + inv_phi * (hi - lo);
            fb = f(b);
        } else {
            hi = b;
            b = a;
            fb = fa;
            a = hi - inv_phi * (hi - lo);
            fa = f(a);
        }
        if hi - lo <= 1e-14 * (1.0 + lo.abs().max(hi.abs())) {
            break;
        }
    }
    f(0.5 * (lo + hi))
}

/// Every duality invariant at one vector θ. Returns a description of the
/// first violation.
pub fn check_point(pot: &MirrorPotential, theta: &[f64]) -> Result<(), String> {
    let tag = format!("{:?} λ={} p={}", pot.kind(), pot.lambda(), pot.p());
    let b = pot.eval_bundle(theta).map_err(|e| e.to_string())?;
    let q = pot.dual_of_grad(theta).map_err(|e| e.to_string())?;

    // Fenchel-Young.
    let inner: f64 = theta.iter().zip(&b.grad).map(|(t, g)| t * g).sum();
    if (inner - b.r - q).abs() > 1e-10 * (1.0 + b.r.abs()) {
        return Err(format!("{tag}: Fenchel-Young residual {} at {theta:?}", inner - b.r - q));
    }

    let h = 1e-6;
    for (i, &t) in theta.iter().enumerate() {
        let fd_grad = (pot.r_scalar(t + h) - pot.r_scalar(t - h)) / (2.0 * h);
        if rel(fd_grad, b.grad[i]) > 1e-5 && (fd_grad - b.grad[i]).abs() > 1e-8 {
            return Err(format!("{tag}: grad {} vs finite difference {fd_grad} at {t}", b.grad[i]));
        }
        let fd_metric = (pot.grad_scalar(t + h) - pot.grad_scalar(t - h)) / (2.0 * h);
        if rel(fd_metric, b.metric_diag[i]) > 1e-5 {
            return Err(format!("{tag}: metric {} vs finite difference {fd_metric} at {t}", b.metric_diag[i]));
        }
        if !(b.metric_diag[i] > 0.0) {
            return Err(format!("{tag}: metric not positive at {t}"));
        }

        // Conjugate oracle on a bracket around the maximizer.
        let width = 1.0 + 2.0 * t.abs();
        let oracle = numeric_conjugate(pot, b.grad[i], t - width, t + width);
        let closed = pot.dual_scalar(t);
        if rel(oracle, closed) > 1e-6 && (oracle - closed).abs() > 1e-12 {
            return Err(format!("{tag}: Q closed form {closed} vs numeric sup {oracle} at {t}"));
        }
    }

    let back = pot.grad_inverse(&b.grad).map_err(|e| e.to_string())?;
    for (t, r) in theta.iter().zip(&back) {
        if rel(*t, *r) > 1e-9 {
            return Err(format!("{tag}: grad_inverse(grad({t})) = {r}"));
        }
    }
    // θ doubles as a dual point for the other direction.
    let primal = pot.grad_inverse(theta).map_err(|e| e.to_string())?;
    for (z, t) in theta.iter().zip(&primal) {
        let again = pot.grad_scalar(*t);
        if rel(*z, again) > 1e-9 {
            return Err(format!("{tag}: grad(grad_inverse({z})) = {again}"));
        }
    }

    let alpha_q = pot.alpha() * q;
    let semi = pot.semihomogeneity_margin(theta).map_err(|e| e.to_string())?;
    if semi < -1e-12 * (1.0 + alpha_q) {
        return Err(format!("{tag}: semihomogeneity margin {semi} at {theta:?}"));
    }

    let phi = pot.horizon(theta).map_err(|e| e.to_string())?;
    let normalized = pot.normalized_dual(theta).map_err(|e| e.to_string())?;
    let bounds = pot.horizon_gap_bounds(theta.len());
    if !bounds.holds(phi, normalized) {
        return Err(format!("{tag}: sandwich fails, φ={phi} (αQ)^(1/α)={normalized} {bounds:?}"));
    }
    Ok(())
}

/// η·(αQ(∇R(θ/η)))^{1/α}.
pub fn horizon_limit(pot: &MirrorPotential, theta: &[f64], eta: f64) -> f64 {
    let scaled: Vec<f64> = theta.iter().map(|t| t / eta).collect();
    eta * pot.normalized_dual(&scaled).unwrap()
}

/// The horizon function agrees with its defining limit, monotonically.
/// For smoothed p = 2 the λ term is also quadratic and the limit is
/// √(1+λ)·‖θ‖₂.
pub fn check_horizon_limit(pot: &MirrorPotential, theta: &[f64]) -> Result<(), String> {
    let mut phi = pot.horizon(theta).unwrap();
    if pot.kind() == PotentialKind::Smoothed && pot.p() == 2.0 {
        phi *= (1.0 + pot.lambda()).sqrt();
    }
    let errs: Vec<f64> = [1e-2, 1e-4, 1e-6]
        .iter()
        .map(|&eta| (horizon_limit(pot, theta, eta) - phi).abs() / phi)
        .collect();
    if errs[2] > 1e-3 {
        return Err(format!("{:?}: relative error {} at η=1e-6", pot.kind(), errs[2]));
    }
    // Ties at round-off level count as non-increasing.
    if errs.windows(2).any(|w| w[1] > w[0] + 1e-12) {
        return Err(format!("{:?}: errors {errs:?} not non-increasing", pot.kind()));
    }
    Ok(())
}

/// Runs the duality checks on `points` random vectors per potential.
pub fn duality_suite(points: usize, seed: u64) -> Result<usize, String> {
    let mut rng = Pcg64::seed_from_u64(seed);
    let grid = potential_grid();
    let mut checked = 0;
    for pot in &grid {
        for _ in 0..points {
            let n = rng.random_range(1..=6);
            let theta = sample_vec(&mut rng, n);
            check_point(pot, &theta)?;
            let big: Vec<f64> = theta.iter().map(|t| t.signum() * t.abs().clamp(0.1, 10.0)).collect();
            check_horizon_limit(pot, &big)?;
            checked += 1;
        }
    }
    // The Euclidean potential and smoothed p = 2, λ = 0 share one map.
    let euc = MirrorPotential::euclidean();
    let sm = MirrorPotential::smoothed(2.0, 0.0).unwrap();
    for _ in 0..points {
        let theta = sample_vec(&mut rng, 4);
        let (a, b) = (euc.eval_bundle(&theta).unwrap(), sm.eval_bundle(&theta).unwrap());
        let pairs = [
            (a.r, b.r),
            (euc.dual_of_grad(&theta).unwrap(), sm.dual_of_grad(&theta).unwrap()),
            (euc.horizon(&theta).unwrap(), sm.horizon(&theta).unwrap()),
        ];
        for (x, y) in pairs.iter().chain(a.grad.iter().zip(&b.grad).map(|(x, y)| (*x, *y)).collect::<Vec<_>>().iter()) {
            if (x - y).abs() > 1e-12 * (1.0 + x.abs()) {
                return Err(format!("Euclidean vs smoothed p=2 λ=0: {x} vs {y}"));
            }
        }
        assert_eq!(euc.kind(), PotentialKind::Euclidean);
    }
    Ok(checked)
}
