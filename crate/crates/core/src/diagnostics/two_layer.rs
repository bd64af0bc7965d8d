use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::Matrix;
use crate::potentials::{norm_k, MirrorPotential};

/// Rescale-invariant view of a two-layer network f = Σ_j a_j σ(⟨w_j, x⟩).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoLayerReport {
    pub a_tilde: Vec<f64>,
    pub w_tilde: Matrix,
    /// Σ_j |ã_j|^{α/2}.
    pub objective: f64,
    pub active_count: usize,
    /// Per-neuron balance residuals; empty unless filled by [`neuron_balance`].
    pub neuron_balance: Vec<f64>,
}

/// Per-neuron balance, relative to an optional initial value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuronBalance {
    pub residuals: Vec<f64>,
}

impl NeuronBalance {
    /// Q(∇R(a_j)) − Q(∇R(w_j)) for each hidden neuron j.
    pub fn compute(potential: &MirrorPotential, a: &[f64], w: &Matrix) -> Self {
        NeuronBalance {
            residuals: a
                .iter()
                .enumerate()
                .map(|(j, &aj)| potential.dual_scalar(aj) - w.row(j).iter().map(|&t| potential.dual_scalar(t)).sum::<f64>())
                .collect(),
        }
    }

    pub fn relative_to(mut self, initial: &NeuronBalance) -> Self {
        for (r, r0) in self.residuals.iter_mut().zip(&initial.residuals) {
            *r -= r0;
        }
        self
    }
}

/// Normalizes each hidden neuron to unit ‖w_j‖_α and pushes the scale into
/// the output weight. `a` are the output weights, `w` the hidden weights with
/// one row per neuron.
pub fn two_layer_report(a: &[f64], w: &Matrix, alpha: f64, tau: f64) -> Result<TwoLayerReport> {
    if a.len() != w.rows {
        return Err(Error::Shape(format!(
            "{} output weights for {} hidden neurons",
            a.len(),
            w.rows
        )));
    }
    if !(alpha == 1.0 || alpha >= 2.0) {
        return Err(Error::InvalidPotential(format!(
            "two-layer report needs α = 1 or α ≥ 2, got {alpha}"
        )));
    }
    let mut w_tilde = w.clone();
    let mut a_tilde = Vec::with_capacity(a.len());
    for (j, &aj) in a.iter().enumerate() {
        let norm = norm_k(w.row(j), alpha);
        let row = &mut w_tilde.data[j * w.cols..(j + 1) * w.cols];
        if norm > 0.0 {
            row.iter_mut().for_each(|x| *x /= norm);
            a_tilde.push(aj * norm);
        } else {
            row.iter_mut().for_each(|x| *x = 0.0);
            a_tilde.push(0.0);
        }
    }
    let max_abs = a_tilde.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    let active_count = a_tilde.iter().filter(|x| x.abs() > tau * max_abs).count();
    Ok(TwoLayerReport {
        objective: a_tilde.iter().map(|x| x.abs().powf(alpha / 2.0)).sum(),
        a_tilde,
        w_tilde,
        active_count,
        neuron_balance: Vec::new(),
    })
}
