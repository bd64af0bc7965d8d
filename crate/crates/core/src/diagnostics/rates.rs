use serde::{Deserialize, Serialize};

use super::MetricsRecord;
use crate::error::{Error, Result};

/// The slice of a logged record that rate diagnostics need.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub time: f64,
    pub log_loss: f64,
    /// (αQ(∇R(θ)))^{L/α}.
    pub q_scale: f64,
    pub q_soft_margin: f64,
}

impl RatePoint {
    /// Recovers (αQ)^{L/α} as q_min/q_margin.
    pub fn from_record(r: &MetricsRecord) -> Self {
        RatePoint {
            time: r.time,
            log_loss: r.log_loss,
            q_scale: r.q_min / r.q_margin,
            q_soft_margin: r.q_soft_margin,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub loss_slope: f64,
    pub q_over_logt: Vec<f64>,
    pub g_bound_ok: bool,
    /// First logged time with ℒ < 1.
    pub t0: f64,
    /// Number of records in the final-decade fit.
    pub fit_points: usize,
}

const MIN_POINTS: usize = 100;
const MIN_DECADES: f64 = 2.0;
const G_SLACK: f64 = 0.9;
const G_RTOL: f64 = 1e-8;

/// Loss-rate diagnostics over the part of a trajectory after ℒ first drops
/// below 1.
pub fn rate_report(points: &[RatePoint], depth: usize, alpha: f64) -> Result<RateReport> {
    let start = points
        .iter()
        .position(|p| p.log_loss < 0.0)
        .ok_or_else(|| Error::InsufficientTrajectory("loss never drops below 1".into()))?;
    let tail = &points[start..];
    let positive: Vec<&RatePoint> = tail.iter().filter(|p| p.time > 0.0).collect();
    if positive.len() < MIN_POINTS {
        return Err(Error::InsufficientTrajectory(format!(
            "{} records after separation, need {MIN_POINTS}",
            positive.len()
        )));
    }
    let t_first = positive[0].time;
    let t_last = positive[positive.len() - 1].time;
    let decades = (t_last / t_first).log10();
    if decades < MIN_DECADES {
        return Err(Error::InsufficientTrajectory(format!(
            "time spans {decades:.2} decades after separation, need {MIN_DECADES}"
        )));
    }

    let window: Vec<(f64, f64)> = positive
        .iter()
        .filter(|p| p.time >= t_last / 10.0)
        .map(|p| (p.time.ln(), -p.log_loss))
        .collect();
    let loss_slope = ls_slope(&window);

    let q_over_logt = positive
        .iter()
        .filter(|p| p.time > 1.0)
        .map(|p| p.q_scale / p.time.ln())
        .collect();

    let l = depth as f64;
    let first = &tail[0];
    let exponent = alpha / l - 2.0;
    let rate = G_SLACK * (l * l / alpha) * first.q_soft_margin.powf(alpha / l);
    let z0 = -first.log_loss;
    let g_bound_ok = tail.iter().all(|p| {
        let rhs = rate * (p.time - first.time);
        if rhs <= 0.0 {
            return true;
        }
        ln_g_integral(z0, -p.log_loss, exponent) >= rhs.ln()
    });

    Ok(RateReport {
        loss_slope,
        q_over_logt,
        g_bound_ok,
        t0: first.time,
        fit_points: window.len(),
    })
}

fn ls_slope(xy: &[(f64, f64)]) -> f64 {
    let n = xy.len() as f64;
    let mx = xy.iter().map(|p| p.0).sum::<f64>() / n;
    let my = xy.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = xy.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xy.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// G = ∫_{u0}^{u1} (ln u)^{exponent} du for 1 < u0 ≤ u1.
pub fn g_integral(u0: f64, u1: f64, exponent: f64) -> f64 {
    ln_g_integral(u0.ln(), u1.ln(), exponent).exp()
}

/// ln G with u = e^z, so G = e^{z1} ∫_{z0}^{z1} z^b e^{z − z1} dz. Returns −∞
/// for an empty interval.
fn ln_g_integral(z0: f64, z1: f64, b: f64) -> f64 {
    if z1 <= z0 {
        return f64::NEG_INFINITY;
    }
    let f = |z: f64| z.powf(b) * (z - z1).exp();
    const PANELS: usize = 64;
    let h = (z1 - z0) / PANELS as f64;
    let coarse: Vec<(f64, f64, f64, f64, f64)> = (0..PANELS)
        .map(|i| {
            let a = z0 + i as f64 * h;
            let c = if i + 1 == PANELS { z1 } else { a + h };
            let (fa, fm, fc) = (f(a), f(0.5 * (a + c)), f(c));
            (a, c, fa, fm, fc)
        })
        .collect();
    let estimate: f64 = coarse
        .iter()
        .map(|&(a, c, fa, fm, fc)| simpson(a, c, fa, fm, fc))
        .sum();
    let tol = G_RTOL * estimate.abs() / PANELS as f64;
    let total: f64 = coarse
        .iter()
        .map(|&(a, c, fa, fm, fc)| adaptive(&f, a, c, fa, fm, fc, simpson(a, c, fa, fm, fc), tol, 50))
        .sum();
    z1 + total.ln()
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn adaptive<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let (flm, frm) = (f(lm), f(rm));
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let diff = left + right - whole;
    if depth == 0 || diff.abs() <= 15.0 * tol {
        return left + right + diff / 15.0;
    }
    adaptive(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + adaptive(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}
