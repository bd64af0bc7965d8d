use serde::{Deserialize, Serialize};

use super::{metric_flat, total_dual};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::network::{HomogeneousNet, LossGrad, Params};
use crate::potentials::{LayerPotentials, PotentialKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    pub epsilon: f64,
    pub delta: f64,
    pub multipliers: Vec<f64>,
    pub beta: f64,
    pub e_tan: f64,
    /// Set for the hyperbolic potential, where ε is only an empirical signal.
    pub heuristic: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngleReport {
    pub beta: f64,
    pub e_tan: f64,
}

/// Radial alignment β and tangential energy E_tan of a velocity at θ,
/// both measured in the metric ∇²R(θ).
pub fn angle_report(potentials: &LayerPotentials, theta: &Params, velocity: &Params) -> AngleReport {
    let metric = metric_flat(potentials, theta);
    let t = theta.flat();
    let v = velocity.flat();
    let mut tt = 0.0;
    let mut tv = 0.0;
    let mut vv = 0.0;
    for ((&ti, &vi), &mi) in t.iter().zip(&v).zip(&metric) {
        tt += ti * mi * ti;
        tv += ti * mi * vi;
        vv += vi * mi * vi;
    }
    let q = total_dual(potentials, theta);
    AngleReport {
        beta: tv / (tt.sqrt() * vv.sqrt()),
        e_tan: (vv - tv * tv / tt) / q,
    }
}

/// Approximate-KKT certificate for the normalized point θ/q_min^{1/L}.
pub fn kkt_report(
    potentials: &LayerPotentials,
    net: &HomogeneousNet,
    theta: &Params,
    data: &Dataset,
) -> Result<KktReport> {
    let loss = net.loss_and_grad(theta, data)?;
    kkt_from_loss(potentials, net.depth(), theta, &loss)
}

/// β and E_tan of the continuous direction −(∇²R)⁻¹∇ℒ. Defined even when the
/// data is not yet separated, where [`kkt_report`] errors.
pub fn descent_angles(
    potentials: &LayerPotentials,
    net: &HomogeneousNet,
    theta: &Params,
    data: &Dataset,
) -> Result<AngleReport> {
    let loss = net.loss_and_grad(theta, data)?;
    Ok(continuous_angles(potentials, theta, &loss))
}

fn continuous_angles(potentials: &LayerPotentials, theta: &Params, loss: &LossGrad) -> AngleReport {
    angle_report(potentials, theta, &metric_inverse_apply(potentials, theta, &loss.grad_hat))
}

/// M⁻¹g with M = ∇²R(θ), in the shape of θ.
fn metric_inverse_apply(potentials: &LayerPotentials, theta: &Params, g: &Params) -> Params {
    let mut out = g.clone();
    for ((o, m), p) in out.layers.iter_mut().zip(&theta.layers).zip(potentials.iter()) {
        for (oi, &ti) in o.data.iter_mut().zip(&m.data) {
            *oi /= p.metric_scalar(ti);
        }
    }
    out
}

pub(crate) fn kkt_from_loss(
    potentials: &LayerPotentials,
    depth: usize,
    theta: &Params,
    loss: &LossGrad,
) -> Result<KktReport> {
    let q_min = loss.margins.q_min;
    if !(q_min > 0.0) {
        return Err(Error::Infeasible { q_min });
    }
    let pot = potentials
        .common()
        .ok_or_else(|| Error::UndefinedMargin("KKT report needs one potential shared by all layers".into()))?;
    let alpha = pot.alpha();
    let l = depth as f64;
    let q_total = total_dual(potentials, theta);

    // dθ/dt ∝ M⁻¹ ĝ; the common factor exp(log_loss) cancels in every ratio below.
    let h = metric_inverse_apply(potentials, theta, &loss.grad_hat);
    let metric = metric_flat(potentials, theta);
    let t = theta.flat();
    let hv = h.flat();
    let norm_m = |v: &[f64]| -> f64 {
        v.iter().zip(&metric).map(|(x, m)| x * m * x).sum::<f64>().sqrt()
    };
    let theta_m = norm_m(&t);
    let h_m = norm_m(&hv);
    if !(h_m > 0.0) {
        return Err(Error::UndefinedMargin("descent direction vanishes".into()));
    }

    let lead = (alpha * q_total).powf(2.0 / alpha - 1.0) * theta_m / h_m;
    let lam_scale = lead * q_min.powf(1.0 - 2.0 / l);
    let multipliers: Vec<f64> = loss.softmax_weights.iter().map(|w| lam_scale * w).collect();
    let c = lead * q_min.powf(-1.0 / l);

    let theta_tilde: Vec<f64> = t.iter().map(|x| x / q_min.powf(1.0 / l)).collect();
    let sub = pot.half_sq_horizon_grad(&theta_tilde);
    let epsilon = sub
        .iter()
        .zip(loss.grad_hat.iter())
        .map(|(s, g)| (s - c * g).powi(2))
        .sum::<f64>()
        .sqrt();
    let delta = multipliers
        .iter()
        .zip(&loss.margins.q)
        .map(|(lam, q)| lam * (q / q_min - 1.0))
        .fold(0.0, f64::max);

    let angles = continuous_angles(potentials, theta, loss);
    Ok(KktReport {
        epsilon,
        delta,
        multipliers,
        beta: angles.beta,
        e_tan: angles.e_tan,
        heuristic: pot.kind() == PotentialKind::Hyperbolic,
    })
}
