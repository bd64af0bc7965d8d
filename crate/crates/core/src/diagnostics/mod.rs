//! Measurable quantities along a mirror-descent trajectory.
//!
//! Everything here is a pure function of parameters, data and (for rates)
//! logged trajectories. Quantities that are undefined at a given point, such
//! as KKT residuals before the data is separated, are reported as NaN in
//! [`MetricsRecord`].

mod kkt;
mod margins;
mod ntk;
mod prune;
mod rates;
mod reparam;
mod two_layer;

pub use kkt::{angle_report, descent_angles, kkt_report, AngleReport, KktReport};
pub use margins::{alignment_gap, lk_margins, margin_report, AlignmentGap, MarginReport};
pub use ntk::ntk_gram;
pub use prune::{prune_eval, prune_layerwise, PrunePoint};
pub use rates::{g_integral, rate_report, RatePoint, RateReport};
pub use reparam::{reparam_compare, LinearExpLoss, QuadraticLoss, ReparamReport, SmoothLoss};
pub use two_layer::{two_layer_report, NeuronBalance, TwoLayerReport};

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::flow::TrainState;
use crate::network::{HomogeneousNet, Params};
use crate::potentials::LayerPotentials;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarginOptions {
    /// Use Π_i‖W_i‖_k instead of ‖θ‖_k^L for the L_k margins.
    #[serde(default)]
    pub layerwise: bool,
    /// Exponent of the `margin_lp` column.
    #[serde(default = "default_margin_p")]
    pub p: f64,
    /// Relative threshold for counting active neurons.
    #[serde(default = "default_tau")]
    pub tau: f64,
}

fn default_margin_p() -> f64 {
    3.0
}

fn default_tau() -> f64 {
    0.01
}

impl Default for MarginOptions {
    fn default() -> Self {
        MarginOptions {
            layerwise: false,
            p: default_margin_p(),
            tau: default_tau(),
        }
    }
}

/// One logged row. Field order is the CSV column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: usize,
    pub time: f64,
    pub eta_eff: f64,
    pub log_loss: f64,
    pub q_min: f64,
    pub q_soft_margin: f64,
    pub q_margin: f64,
    pub margin_l1: f64,
    pub margin_l2: f64,
    pub margin_lp: f64,
    pub horizon_margin: f64,
    pub multi_q_margin: f64,
    pub balance_drift_max: f64,
    pub beta: f64,
    pub e_tan: f64,
    pub kkt_eps: f64,
    pub kkt_delta: f64,
    pub alignment_gap: f64,
    pub active_neurons: f64,
    pub objective_alpha_half: f64,
}

pub const METRICS_COLUMNS: [&str; 20] = [
    "step",
    "time",
    "eta_eff",
    "log_loss",
    "q_min",
    "q_soft_margin",
    "q_margin",
    "margin_l1",
    "margin_l2",
    "margin_lp",
    "horizon_margin",
    "multi_q_margin",
    "balance_drift_max",
    "beta",
    "e_tan",
    "kkt_eps",
    "kkt_delta",
    "alignment_gap",
    "active_neurons",
    "objective_alpha_half",
];

/// Q_i(∇R_i(W_i)) − Q_{i+1}(∇R_{i+1}(W_{i+1})) for adjacent layers.
pub fn balance_residuals(potentials: &LayerPotentials, theta: &Params) -> Result<Vec<f64>> {
    if theta.layers.len() < 2 {
        return Err(Error::Shape("balance residuals need at least two layers".into()));
    }
    if potentials.len() != theta.layers.len() {
        return Err(Error::Shape(format!(
            "{} potentials for {} layers",
            potentials.len(),
            theta.layers.len()
        )));
    }
    let duals = layer_duals(potentials, theta)?;
    Ok(duals.windows(2).map(|w| w[0] - w[1]).collect())
}

/// Q_i(∇R_i(W_i)) per layer.
pub fn layer_duals(potentials: &LayerPotentials, theta: &Params) -> Result<Vec<f64>> {
    theta
        .layers
        .iter()
        .zip(potentials.iter())
        .map(|(m, p)| p.dual_of_grad(&m.data))
        .collect()
}

/// max_i |entry_i(t) − entry_i(0)|.
pub fn balance_drift(initial: &[f64], current: &[f64]) -> f64 {
    initial
        .iter()
        .zip(current)
        .map(|(a, b)| (b - a).abs())
        .fold(0.0, f64::max)
}

/// Diagonal metric ∇²R over all layers, flattened.
pub(crate) fn metric_flat(potentials: &LayerPotentials, theta: &Params) -> Vec<f64> {
    theta
        .layers
        .iter()
        .zip(potentials.iter())
        .flat_map(|(m, p)| m.data.iter().map(move |&t| p.metric_scalar(t)))
        .collect()
}

/// Σ_i Q_i(∇R_i(W_i)).
pub(crate) fn total_dual(potentials: &LayerPotentials, theta: &Params) -> f64 {
    theta
        .layers
        .iter()
        .zip(potentials.iter())
        .map(|(m, p)| p.dual_sum(&m.data))
        .sum()
}

/// Fixed inputs for computing [`MetricsRecord`]s along one run.
pub struct RecordContext<'a> {
    pub net: &'a HomogeneousNet,
    pub potentials: &'a LayerPotentials,
    pub data: &'a Dataset,
    pub options: &'a MarginOptions,
    initial_balance: Option<Vec<f64>>,
}

impl<'a> RecordContext<'a> {
    pub fn new(
        net: &'a HomogeneousNet,
        potentials: &'a LayerPotentials,
        data: &'a Dataset,
        options: &'a MarginOptions,
        theta0: &Params,
    ) -> Self {
        RecordContext {
            net,
            potentials,
            data,
            options,
            initial_balance: balance_residuals(potentials, theta0).ok(),
        }
    }
}

pub fn metrics_record(ctx: &RecordContext<'_>, state: &TrainState) -> MetricsRecord {
    let theta = &state.theta;
    let nan = f64::NAN;
    let margins = margins::margin_report_from(
        ctx.potentials,
        ctx.net.depth(),
        theta,
        &state.loss.margins,
        state.log_loss,
        ctx.options,
    )
    .ok();
    let drift = match &ctx.initial_balance {
        Some(b0) => balance_residuals(ctx.potentials, theta)
            .map(|b| balance_drift(b0, &b))
            .unwrap_or(nan),
        None => nan,
    };
    let (beta, e_tan) = match &state.last_step {
        Some(delta) => {
            let a = angle_report(ctx.potentials, &delta.theta_before, &delta.velocity);
            (a.beta, a.e_tan)
        }
        None => (nan, nan),
    };
    let (kkt_eps, kkt_delta) = match kkt::kkt_from_loss(ctx.potentials, ctx.net.depth(), theta, &state.loss) {
        Ok(k) => (k.epsilon, k.delta),
        Err(_) => (nan, nan),
    };
    let alignment = ctx
        .potentials
        .common()
        .and_then(|p| alignment_gap(p, &theta.flat()).ok())
        .map_or(nan, |g| g.gap);
    let (active, objective) = match ctx.potentials.common_alpha() {
        Some(alpha) if ctx.net.depth() == 2 => {
            match two_layer_report(&theta.layers[1].data, &theta.layers[0], alpha, ctx.options.tau) {
                Ok(r) => (r.active_count as f64, r.objective),
                Err(_) => (nan, nan),
            }
        }
        _ => (nan, nan),
    };
    let (m1, m2, mp) = match &margins {
        Some(m) => {
            let src = if ctx.options.layerwise {
                &m.lk_layerwise
            } else {
                &m.lk_margins
            };
            (src[0].1, src[1].1, src[2].1)
        }
        None => (nan, nan, nan),
    };
    MetricsRecord {
        step: state.step,
        time: state.time,
        eta_eff: state.last_step.as_ref().map_or(nan, |d| d.eta_eff),
        log_loss: state.log_loss,
        q_min: state.loss.margins.q_min,
        q_soft_margin: margins.as_ref().map_or(nan, |m| m.q_soft_margin),
        q_margin: margins.as_ref().map_or(nan, |m| m.q_margin),
        margin_l1: m1,
        margin_l2: m2,
        margin_lp: mp,
        horizon_margin: margins.as_ref().map_or(nan, |m| m.horizon_margin),
        multi_q_margin: margins.as_ref().map_or(nan, |m| m.multi_q_margin),
        balance_drift_max: drift,
        beta,
        e_tan,
        kkt_eps,
        kkt_delta,
        alignment_gap: alignment,
        active_neurons: active,
        objective_alpha_half: objective,
    }
}

/// Final-state summary of a run, as emitted by `mirrorflow diagnose`.
/// Reports that are undefined for the run (for example KKT before
/// separation, or rates on a short trajectory) are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunDiagnostics {
    pub final_margins: Option<MarginReport>,
    pub kkt: Option<KktReport>,
    pub rates: Option<RateReport>,
    pub alignment: Option<AlignmentGap>,
    pub sparsity: Option<TwoLayerReport>,
    pub prune_curve: Vec<PrunePoint>,
}

pub const DEFAULT_PRUNE_FRACTIONS: [f64; 3] = [0.5, 0.8, 0.9];

/// Diagnostics of the final parameters `theta` of a run with logged `records`.
pub fn run_diagnostics(
    net: &HomogeneousNet,
    potentials: &LayerPotentials,
    data: &Dataset,
    options: &MarginOptions,
    records: &[MetricsRecord],
    theta: &Params,
    prune_fractions: &[f64],
) -> Result<RunDiagnostics> {
    net.check_params(theta)?;
    let alpha = potentials.common_alpha();
    let rates = alpha.and_then(|a| {
        let points: Vec<RatePoint> = records.iter().map(RatePoint::from_record).collect();
        rate_report(&points, net.depth(), a).ok()
    });
    let sparsity = match alpha {
        Some(a) if net.depth() == 2 => {
            two_layer_report(&theta.layers[1].data, &theta.layers[0], a, options.tau).ok()
        }
        _ => None,
    };
    Ok(RunDiagnostics {
        final_margins: margin_report(potentials, net, theta, data, options).ok(),
        kkt: kkt_report(potentials, net, theta, data).ok(),
        rates,
        alignment: potentials
            .common()
            .and_then(|p| alignment_gap(p, &theta.flat()).ok()),
        sparsity,
        prune_curve: prune_eval(net, theta, data, prune_fractions)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Matrix;
    use crate::potentials::MirrorPotential;

    #[test]
    fn euclidean_equal_norms_balance() {
        let theta = Params {
            layers: vec![
                Matrix::from_rows(&[&[2.0, 0.0]]).unwrap(),
                Matrix::from_rows(&[&[0.0], &[2.0]]).unwrap(),
            ],
        };
        let pots = LayerPotentials::uniform(MirrorPotential::euclidean(), 2);
        assert_eq!(balance_residuals(&pots, &theta).unwrap(), vec![0.0]);
    }

    #[test]
    fn hyperbolic_origin_balance() {
        let theta = Params {
            layers: vec![Matrix::zeros(1, 1), Matrix::zeros(1, 2)],
        };
        let pots = LayerPotentials::uniform(MirrorPotential::hyperbolic(1.0).unwrap(), 2);
        assert_eq!(balance_residuals(&pots, &theta).unwrap(), vec![-1.0]);
    }

    #[test]
    fn balance_needs_two_layers() {
        let theta = Params {
            layers: vec![Matrix::zeros(1, 1)],
        };
        let pots = LayerPotentials::uniform(MirrorPotential::euclidean(), 1);
        assert!(balance_residuals(&pots, &theta).is_err());
    }

    #[test]
    fn drift_is_max_abs_change() {
        assert_eq!(balance_drift(&[1.0, -2.0], &[1.5, -4.0]), 2.0);
    }
}
