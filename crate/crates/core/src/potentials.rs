//! Separable mirror potentials.
//!
//! Every potential here is a sum of a scalar convex function `r` applied per
//! coordinate, so all operations reduce to closed-form scalar maps:
//!
//! | kind        | r(t)                                   | Q(r'(t))               | horizon          | alpha |
//! |-------------|----------------------------------------|------------------------|------------------|-------|
//! | euclidean   | t²/2                                   | t²/2                   | ‖θ‖₂             | 2     |
//! | hyperbolic  | t·asinh(t/√λ) − √(t²+λ)                | √(t²+λ)                | ‖θ‖₁             | 1     |
//! | smoothed    | \|t\|^p/p + λt²/2                        | \|t\|^p/q + λt²/2        | (p−1)^{1/p}‖θ‖_p | p     |
//!
//! A network-level potential is a list of per-layer potentials
//! ([`LayerPotentials`]).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Newton/bisection iteration cap for the smoothed-potential inverse.
pub const MAX_ROOT_ITERS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PotentialKind {
    Euclidean,
    Hyperbolic,
    Smoothed,
}

impl PotentialKind {
    pub fn name(self) -> &'static str {
        match self {
            PotentialKind::Euclidean => "euclidean",
            PotentialKind::Hyperbolic => "hyperbolic",
            PotentialKind::Smoothed => "smoothed",
        }
    }
}

impl std::fmt::Display for PotentialKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A validated separable mirror potential.
///
/// Fields are private so the invariants (λ > 0 for hyperbolic, p ≥ 2 for
/// smoothed, α derived from the kind) cannot be bypassed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MirrorPotential {
    kind: PotentialKind,
    lambda: f64,
    p: f64,
}

/// Value, gradient and diagonal Hessian of a potential at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    pub r: f64,
    pub grad: Vec<f64>,
    pub metric_diag: Vec<f64>,
}

/// Constants `(c, a)` with φ ≤ (αQ)^{1/α} ≤ c·φ + a.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HorizonBounds {
    pub c: f64,
    pub a: f64,
}

impl HorizonBounds {
    /// Checks the sandwich at one point, with a relative slack for round-off.
    pub fn holds(&self, horizon: f64, normalized_dual: f64) -> bool {
        let slack = 1e-12 * (1.0 + normalized_dual.abs());
        horizon <= normalized_dual + slack && normalized_dual <= self.c * horizon + self.a + slack
    }
}

impl MirrorPotential {
    pub fn euclidean() -> Self {
        MirrorPotential {
            kind: PotentialKind::Euclidean,
            lambda: 0.0,
            p: 2.0,
        }
    }

    pub fn hyperbolic(lambda: f64) -> Result<Self> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::InvalidPotential(format!(
                "hyperbolic entropy requires lambda > 0, got {lambda}"
            )));
        }
        Ok(MirrorPotential {
            kind: PotentialKind::Hyperbolic,
            lambda,
            p: 1.0,
        })
    }

    pub fn smoothed(p: f64, lambda: f64) -> Result<Self> {
        if !(p.is_finite() && p >= 2.0) {
            return Err(Error::InvalidPotential(format!(
                "smoothed potential requires p >= 2, got {p}"
            )));
        }
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::InvalidPotential(format!(
                "smoothed potential requires lambda >= 0, got {lambda}"
            )));
        }
        Ok(MirrorPotential {
            kind: PotentialKind::Smoothed,
            lambda,
            p,
        })
    }

    /// Builds a potential from its config fields; `p` is only read for the
    /// smoothed kind.
    pub fn from_parts(kind: PotentialKind, lambda: f64, p: f64) -> Result<Self> {
        match kind {
            PotentialKind::Euclidean => Ok(Self::euclidean()),
            PotentialKind::Hyperbolic => Self::hyperbolic(lambda),
            PotentialKind::Smoothed => Self::smoothed(p, lambda),
        }
    }

    pub fn kind(&self) -> PotentialKind {
        self.kind
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Exponent of the smoothed potential (2 for Euclidean, 1 for hyperbolic).
    pub fn p(&self) -> f64 {
        self.p
    }

    /// Asymptotic homogeneity degree.
    pub fn alpha(&self) -> f64 {
        match self.kind {
            PotentialKind::Euclidean => 2.0,
            PotentialKind::Hyperbolic => 1.0,
            PotentialKind::Smoothed => self.p,
        }
    }

    // ---- scalar maps -------------------------------------------------------

    #[inline]
    pub fn r_scalar(&self, t: f64) -> f64 {
        match self.kind {
            PotentialKind::Euclidean => 0.5 * t * t,
            PotentialKind::Hyperbolic => {
                let s = self.lambda.sqrt();
                // f64::asinh is evaluated in an overflow-free log1p form.
                t * (t / s).asinh() - t.hypot(s)
            }
            PotentialKind::Smoothed => t.abs().powf(self.p) / self.p + 0.5 * self.lambda * t * t,
        }
    }

    #[inline]
    pub fn grad_scalar(&self, t: f64) -> f64 {
        match self.kind {
            PotentialKind::Euclidean => t,
            PotentialKind::Hyperbolic => (t / self.lambda.sqrt()).asinh(),
            PotentialKind::Smoothed => t.abs().powf(self.p - 2.0) * t + self.lambda * t,
        }
    }

    #[inline]
    pub fn metric_scalar(&self, t: f64) -> f64 {
        match self.kind {
            PotentialKind::Euclidean => 1.0,
            PotentialKind::Hyperbolic => 1.0 / t.hypot(self.lambda.sqrt()),
            PotentialKind::Smoothed => (self.p - 1.0) * t.abs().powf(self.p - 2.0) + self.lambda,
        }
    }

    /// Q(r'(t)) per coordinate.
    #[inline]
    pub fn dual_scalar(&self, t: f64) -> f64 {
        match self.kind {
            PotentialKind::Euclidean => 0.5 * t * t,
            PotentialKind::Hyperbolic => t.hypot(self.lambda.sqrt()),
            PotentialKind::Smoothed => {
                let inv_q = (self.p - 1.0) / self.p;
                inv_q * t.abs().powf(self.p) + 0.5 * self.lambda * t * t
            }
        }
    }

    /// Solves r'(t) = z for t.
    pub fn grad_inverse_scalar(&self, z: f64) -> Result<f64> {
        match self.kind {
            PotentialKind::Euclidean => Ok(z),
            PotentialKind::Hyperbolic => Ok(self.lambda.sqrt() * z.sinh()),
            PotentialKind::Smoothed => {
                if z == 0.0 {
                    return Ok(0.0);
                }
                let target = z.abs();
                let s = if self.p == 2.0 {
                    target / (1.0 + self.lambda)
                } else if self.p == 3.0 {
                    // s² + λs = target, in the cancellation-free form.
                    2.0 * target / (self.lambda + (self.lambda * self.lambda + 4.0 * target).sqrt())
                } else {
                    self.smoothed_root(target)?
                };
                Ok(s.copysign(z))
            }
        }
    }

    /// Root of s^{p−1} + λs = target on s > 0 by bracketed Newton.
    fn smoothed_root(&self, target: f64) -> Result<f64> {
        let pm1 = self.p - 1.0;
        let g = |s: f64| s.powf(pm1) + self.lambda * s - target;
        // Each term alone is bounded by the target, so the root lies below
        // both of these.
        let mut hi = target.powf(1.0 / pm1);
        if self.lambda > 0.0 {
            hi = hi.min(target / self.lambda);
        }
        let mut lo = 0.0_f64;
        // g is convex and increasing, so Newton from the right endpoint
        // descends monotonically; bisection only guards round-off excursions.
        let mut s = hi;
        for _ in 0..MAX_ROOT_ITERS {
            let gs = g(s);
            if gs == 0.0 {
                return Ok(s);
            }
            if gs > 0.0 {
                hi = s;
            } else {
                lo = s;
            }
            let dg = pm1 * s.powf(pm1 - 1.0) + self.lambda;
            let mut next = s - gs / dg;
            if !(next > lo && next < hi) || !next.is_finite() {
                next = 0.5 * (lo + hi);
            }
            if (next - s).abs() <= 1e-15 * s.abs() || hi - lo <= 1e-15 * hi {
                return Ok(next);
            }
            s = next;
        }
        Err(Error::RootFind {
            target,
            iterations: MAX_ROOT_ITERS,
        })
    }

    // ---- vector operations -------------------------------------------------

    fn check(theta: &[f64]) -> Result<()> {
        match theta.iter().position(|t| !t.is_finite()) {
            Some(index) => Err(Error::NonFinite { index }),
            None => Ok(()),
        }
    }

    pub fn value(&self, theta: &[f64]) -> Result<f64> {
        Self::check(theta)?;
        Ok(theta.iter().map(|&t| self.r_scalar(t)).sum())
    }

    pub fn eval_bundle(&self, theta: &[f64]) -> Result<Bundle> {
        Self::check(theta)?;
        Ok(Bundle {
            r: theta.iter().map(|&t| self.r_scalar(t)).sum(),
            grad: theta.iter().map(|&t| self.grad_scalar(t)).collect(),
            metric_diag: theta.iter().map(|&t| self.metric_scalar(t)).collect(),
        })
    }

    /// Q(∇R(θ)) in closed form.
    pub fn dual_of_grad(&self, theta: &[f64]) -> Result<f64> {
        Self::check(theta)?;
        Ok(self.dual_sum(theta))
    }

    /// Unchecked Q(∇R(θ)) for hot loops over already-validated parameters.
    pub(crate) fn dual_sum(&self, theta: &[f64]) -> f64 {
        theta.iter().map(|&t| self.dual_scalar(t)).sum()
    }

    pub fn grad_inverse(&self, z: &[f64]) -> Result<Vec<f64>> {
        Self::check(z)?;
        z.iter().map(|&zi| self.grad_inverse_scalar(zi)).collect()
    }

    /// Horizon function φ_α(θ).
    pub fn horizon(&self, theta: &[f64]) -> Result<f64> {
        Self::check(theta)?;
        Ok(self.horizon_unchecked(theta))
    }

    pub(crate) fn horizon_unchecked(&self, theta: &[f64]) -> f64 {
        match self.kind {
            PotentialKind::Euclidean => norm_k(theta, 2.0),
            PotentialKind::Hyperbolic => norm_k(theta, 1.0),
            PotentialKind::Smoothed => (self.p - 1.0).powf(1.0 / self.p) * norm_k(theta, self.p),
        }
    }

    /// (αQ(∇R(θ)))^{1/α}, the quantity the horizon function approximates.
    pub fn normalized_dual(&self, theta: &[f64]) -> Result<f64> {
        Ok((self.alpha() * self.dual_of_grad(theta)?).powf(1.0 / self.alpha()))
    }

    /// Sandwich constants relating φ_α and (αQ)^{1/α} in dimension `n`.
    pub fn horizon_gap_bounds(&self, n: usize) -> HorizonBounds {
        let n = n as f64;
        match self.kind {
            PotentialKind::Euclidean => HorizonBounds { c: 1.0, a: 0.0 },
            PotentialKind::Hyperbolic => HorizonBounds {
                c: 1.0,
                a: n * self.lambda.sqrt(),
            },
            PotentialKind::Smoothed => {
                let p = self.p;
                HorizonBounds {
                    c: ((p - 1.0 + 0.5 * p * self.lambda) / (p - 1.0)).powf(1.0 / p),
                    a: (0.5 * p * self.lambda * n).powf(1.0 / p),
                }
            }
        }
    }

    /// αQ(∇R(θ)) − ‖θ‖²_{∇²R}; nonnegative for every potential here.
    pub fn semihomogeneity_margin(&self, theta: &[f64]) -> Result<f64> {
        Self::check(theta)?;
        let alpha_q = self.alpha() * self.dual_sum(theta);
        let metric_norm: f64 = theta.iter().map(|&t| t * t * self.metric_scalar(t)).sum();
        Ok(alpha_q - metric_norm)
    }

    /// A Clarke subgradient of ½φ_α² at θ (sign(0) = 0 for the ℓ₁ case).
    pub fn half_sq_horizon_grad(&self, theta: &[f64]) -> Vec<f64> {
        match self.kind {
            PotentialKind::Euclidean => theta.to_vec(),
            PotentialKind::Hyperbolic => {
                let l1 = norm_k(theta, 1.0);
                theta.iter().map(|&t| l1 * sign0(t)).collect()
            }
            PotentialKind::Smoothed => {
                let p = self.p;
                let np = norm_k(theta, p);
                if np == 0.0 {
                    return vec![0.0; theta.len()];
                }
                let scale = (p - 1.0).powf(2.0 / p) * np.powf(2.0 - p);
                theta
                    .iter()
                    .map(|&t| scale * t.abs().powf(p - 2.0) * t)
                    .collect()
            }
        }
    }
}

#[inline]
fn sign0(t: f64) -> f64 {
    if t > 0.0 {
        1.0
    } else if t < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// ℓ_k norm for k ≥ 1.
pub fn norm_k(v: &[f64], k: f64) -> f64 {
    if k == 1.0 {
        v.iter().map(|x| x.abs()).sum()
    } else if k == 2.0 {
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    } else {
        // Scale by the max entry so large k cannot overflow.
        let m = v.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()));
        if m == 0.0 {
            return 0.0;
        }
        m * v.iter().map(|x| (x.abs() / m).powf(k)).sum::<f64>().powf(1.0 / k)
    }
}

/// Per-layer potentials for a layer-separable network potential.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerPotentials {
    layers: Vec<MirrorPotential>,
}

impl LayerPotentials {
    pub fn uniform(potential: MirrorPotential, depth: usize) -> Self {
        LayerPotentials {
            layers: vec![potential; depth],
        }
    }

    pub fn new(layers: Vec<MirrorPotential>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidPotential("empty per-layer potential list".into()));
        }
        Ok(LayerPotentials { layers })
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn layer(&self, i: usize) -> &MirrorPotential {
        &self.layers[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &MirrorPotential> {
        self.layers.iter()
    }

    /// The common potential when every layer uses the same one.
    pub fn common(&self) -> Option<&MirrorPotential> {
        let first = &self.layers[0];
        self.layers.iter().all(|p| p == first).then_some(first)
    }

    /// Common α when all layers share the same homogeneity degree.
    pub fn common_alpha(&self) -> Option<f64> {
        let a = self.layers[0].alpha();
        self.layers.iter().all(|p| p.alpha() == a).then_some(a)
    }
}
