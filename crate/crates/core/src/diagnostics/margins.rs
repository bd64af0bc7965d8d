use serde::{Deserialize, Serialize};

use super::{layer_duals, total_dual, MarginOptions};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::network::{log_sum_exp, HomogeneousNet, MarginVector, Params};
use crate::potentials::{norm_k, LayerPotentials, MirrorPotential};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginReport {
    pub q_min: f64,
    pub q_margin: f64,
    pub q_soft_margin: f64,
    pub gap_bound: f64,
    /// (k, q_min/‖θ‖_k^L) for k = 1, 2, p.
    pub lk_margins: Vec<(f64, f64)>,
    /// (k, q_min/Π_i‖W_i‖_k) for k = 1, 2, p.
    pub lk_layerwise: Vec<(f64, f64)>,
    pub horizon_margin: f64,
    pub multi_q_margin: f64,
}

impl MarginReport {
    /// γ̃_Q ≤ γ_Q ≤ γ̃_Q + gap_bound, compared in unnormalized form.
    pub fn sandwich_holds(&self) -> bool {
        let lower = self.q_soft_margin <= self.q_margin;
        let slack = 1e-14 * self.q_margin.abs().max(self.gap_bound);
        lower && self.q_margin <= self.q_soft_margin + self.gap_bound + slack
    }
}

/// Margins of θ on `data`. Fields that need a common α are NaN when layers
/// use potentials of different homogeneity.
pub fn margin_report(
    potentials: &LayerPotentials,
    net: &HomogeneousNet,
    theta: &Params,
    data: &Dataset,
    options: &MarginOptions,
) -> Result<MarginReport> {
    let m = net.margins(theta, data)?;
    let neg: Vec<f64> = m.q.iter().map(|v| -v).collect();
    let log_loss = log_sum_exp(&neg);
    margin_report_from(potentials, net.depth(), theta, &m, log_loss, options)
}

pub(crate) fn margin_report_from(
    potentials: &LayerPotentials,
    depth: usize,
    theta: &Params,
    margins: &MarginVector,
    log_loss: f64,
    options: &MarginOptions,
) -> Result<MarginReport> {
    let q_total = total_dual(potentials, theta);
    if !(q_total > 0.0) {
        return Err(Error::UndefinedMargin(format!(
            "Q(∇R(θ)) = {q_total}"
        )));
    }
    let l = depth as f64;
    let q_min = margins.q_min;
    let k = margins.q.len() as f64;

    let (q_margin, q_soft_margin, gap_bound, horizon_margin) = match potentials.common_alpha() {
        Some(alpha) => {
            let scale = (alpha * q_total).powf(l / alpha);
            let horizon = potentials
                .common()
                .map(|p| p.horizon_unchecked(&theta.flat()))
                .unwrap_or(f64::NAN);
            (
                q_min / scale,
                -log_loss / scale,
                k.ln() / scale,
                q_min / horizon.powf(l),
            )
        }
        None => (f64::NAN, f64::NAN, f64::NAN, f64::NAN),
    };

    let duals = layer_duals(potentials, theta)?;
    let multi: f64 = duals
        .iter()
        .zip(potentials.iter())
        .map(|(&q, p)| (p.alpha() * q).powf(1.0 / p.alpha()))
        .product();

    Ok(MarginReport {
        q_min,
        q_margin,
        q_soft_margin,
        gap_bound,
        lk_margins: lk_margins(theta, q_min, depth, options.p, false),
        lk_layerwise: lk_margins(theta, q_min, depth, options.p, true),
        horizon_margin,
        multi_q_margin: q_min / multi,
    })
}

/// L_k margins for k ∈ {1, 2, p}, global-norm or layerwise-product form.
pub fn lk_margins(theta: &Params, q_min: f64, depth: usize, p: f64, layerwise: bool) -> Vec<(f64, f64)> {
    let flat = theta.flat();
    [1.0, 2.0, p]
        .into_iter()
        .map(|k| {
            let denom = if layerwise {
                theta.layers.iter().map(|m| norm_k(&m.data, k)).product()
            } else {
                norm_k(&flat, k).powi(depth as i32)
            };
            (k, q_min / denom)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentGap {
    pub gap: f64,
    pub bound: f64,
}

impl AlignmentGap {
    pub fn holds(&self) -> bool {
        self.gap <= self.bound * (1.0 + 1e-12) + 1e-15
    }
}

/// Relative gap between (αQ(∇R(θ)))^{1/α} and φ_α(θ), with its bound.
pub fn alignment_gap(potential: &MirrorPotential, theta: &[f64]) -> Result<AlignmentGap> {
    let normalized = potential.normalized_dual(theta)?;
    if !(normalized > 0.0) {
        return Err(Error::UndefinedMargin("alignment gap at Q = 0".into()));
    }
    let horizon = potential.horizon_unchecked(theta);
    let b = potential.horizon_gap_bounds(theta.len());
    Ok(AlignmentGap {
        gap: (normalized - horizon) / normalized,
        bound: (b.c - 1.0) + b.a / normalized,
    })
}
