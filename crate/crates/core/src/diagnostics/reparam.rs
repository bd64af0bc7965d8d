use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

/// A differentiable loss of an elementwise parameter vector.
pub trait SmoothLoss {
    fn grad(&self, theta: &[f64]) -> Vec<f64>;
}

/// ½‖θ − target‖².
#[derive(Debug, Clone)]
pub struct QuadraticLoss {
    pub target: Vec<f64>,
}

impl SmoothLoss for QuadraticLoss {
    fn grad(&self, theta: &[f64]) -> Vec<f64> {
        theta.iter().zip(&self.target).map(|(t, c)| t - c).collect()
    }
}

/// Σ_i exp(−y_i⟨θ, x_i⟩) for a linear model.
#[derive(Debug, Clone)]
pub struct LinearExpLoss {
    pub data: Dataset,
}

impl SmoothLoss for LinearExpLoss {
    fn grad(&self, theta: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; theta.len()];
        for (x, y) in self.data.iter() {
            let q: f64 = y * x.iter().zip(theta).map(|(a, b)| a * b).sum::<f64>();
            let w = -y * (-q).exp();
            for (gi, xi) in g.iter_mut().zip(x) {
                *gi += w * xi;
            }
        }
        g
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReparamReport {
    /// max over steps of ‖θ_A − u⊙v‖∞.
    pub deviation: f64,
    /// max over steps of |u² − v² − √λ|∞.
    pub conservation_drift: f64,
}

/// Compares the hyperbolic mirror flow on θ with gradient flow on θ = u⊙v.
///
/// Route A is explicit Euler on dθ = −√(4θ²+λ)⊙∇ℒ dt. Route B advances
/// (u, v) with the gradient held fixed over each step, which is an exact
/// hyperbolic rotation and keeps u² − v² = √λ to round-off.
pub fn reparam_compare(
    lambda: f64,
    loss: &dyn SmoothLoss,
    theta0: &[f64],
    eta: f64,
    steps: usize,
) -> Result<ReparamReport> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidPotential(format!("λ must be > 0, got {lambda}")));
    }
    let c = lambda.sqrt();
    let mut theta = theta0.to_vec();
    let mut u: Vec<f64> = theta0
        .iter()
        .map(|&t| (0.5 * (c + (4.0 * t * t + lambda).sqrt())).sqrt())
        .collect();
    let mut v: Vec<f64> = theta0.iter().zip(&u).map(|(t, ui)| t / ui).collect();

    let mut deviation = 0.0_f64;
    let mut drift = 0.0_f64;
    for _ in 0..steps {
        let ga = loss.grad(&theta);
        for (t, g) in theta.iter_mut().zip(&ga) {
            *t -= eta * (4.0 * *t * *t + lambda).sqrt() * g;
        }
        let uv: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a * b).collect();
        let gb = loss.grad(&uv);
        for ((ui, vi), g) in u.iter_mut().zip(v.iter_mut()).zip(&gb) {
            let (ch, sh) = ((eta * g).cosh(), (eta * g).sinh());
            let (u0, v0) = (*ui, *vi);
            *ui = u0 * ch - v0 * sh;
            *vi = v0 * ch - u0 * sh;
        }
        for ((t, ui), vi) in theta.iter().zip(&u).zip(&v) {
            deviation = deviation.max((t - ui * vi).abs());
            drift = drift.max((ui * ui - vi * vi - c).abs());
        }
    }
    Ok(ReparamReport {
        deviation,
        conservation_drift: drift,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_means_zero_deviation() {
        let loss = QuadraticLoss { target: vec![0.3, -1.0] };
        let r = reparam_compare(0.5, &loss, &[0.3, -1.0], 1e-3, 1000).unwrap();
        assert_eq!(r.deviation, 0.0);
    }

    #[test]
    fn rejects_nonpositive_lambda() {
        let loss = QuadraticLoss { target: vec![1.0] };
        assert!(reparam_compare(0.0, &loss, &[0.0], 1e-3, 10).is_err());
    }

    #[test]
    fn first_order_agreement_and_conservation() {
        let loss = QuadraticLoss { target: vec![0.1] };
        let coarse = reparam_compare(1.0, &loss, &[0.0], 1e-4, 10_000).unwrap();
        let fine = reparam_compare(1.0, &loss, &[0.0], 5e-5, 20_000).unwrap();
        assert!(coarse.deviation <= 1e-6, "{}", coarse.deviation);
        let ratio = coarse.deviation / fine.deviation;
        assert!((ratio - 2.0).abs() < 0.1, "{ratio}");
        assert!(coarse.conservation_drift <= 1e-8);
    }
}
