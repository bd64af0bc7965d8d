//! Discrete mirror descent in the dual variables.
//!
//! Each layer keeps its dual iterate z_i = ∇R_i(W_i). A step moves the duals
//! along −∇ℒ and maps back to the primal with the potential's gradient
//! inverse:
//!
//! ```text
//! z_i ← z_i − η_eff ∇_iℒ(θ) = z_i + η_eff·exp(log ℒ)·ĝ_i
//! W_i ← (∇R_i)^{-1}(z_i)
//! ```
//!
//! With time rescaling active η_eff = factor·η/ℒ, so the dual increment is
//! `factor·η·ĝ` and never touches the (possibly subnormal) loss scale.

use log::{debug, info};
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use rand_pcg::Pcg32;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::diagnostics::{self, MarginOptions, MetricsRecord, RecordContext};
use crate::error::{Error, Result};
use crate::network::{HomogeneousNet, LossGrad, Matrix, Params};
use crate::potentials::LayerPotentials;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub base_lr: f64,
    pub rescale_enabled: bool,
    pub rescale_threshold: f64,
    pub rescale_factor: f64,
    pub max_steps: usize,
    pub stop_log_loss: f64,
}

impl Schedule {
    pub fn constant(base_lr: f64, max_steps: usize) -> Self {
        Schedule {
            base_lr,
            rescale_enabled: false,
            rescale_threshold: 0.1,
            rescale_factor: 0.1,
            max_steps,
            stop_log_loss: default_stop_log_loss(),
        }
    }

    pub fn rescaled(mut self) -> Self {
        self.rescale_enabled = true;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr.is_finite() && self.base_lr > 0.0) {
            return Err(Error::Config(format!("train.lr must be positive, got {}", self.base_lr)));
        }
        if !(self.rescale_threshold > 0.0) {
            return Err(Error::Config(format!(
                "train.rescale.threshold must be positive, got {}",
                self.rescale_threshold
            )));
        }
        if !(self.rescale_factor > 0.0) {
            return Err(Error::Config(format!(
                "train.rescale.factor must be positive, got {}",
                self.rescale_factor
            )));
        }
        Ok(())
    }

    fn rescale_active(&self, log_loss: f64, all_classified: bool) -> bool {
        self.rescale_enabled && all_classified && log_loss < self.rescale_threshold.ln()
    }
}

/// ln(1e-50).
pub fn default_stop_log_loss() -> f64 {
    1e-50f64.ln()
}

/// Effective learning rate for the next step.
pub fn schedule_lr(schedule: &Schedule, log_loss: f64, all_classified: bool) -> f64 {
    if schedule.rescale_active(log_loss, all_classified) {
        schedule.rescale_factor * schedule.base_lr * (-log_loss).exp()
    } else {
        schedule.base_lr
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitScheme {
    /// Gaussian with std = scale / fan_in.
    Meanfield,
    /// Gaussian with std = √(2 / fan_in).
    He,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitSpec {
    pub scheme: InitScheme,
    pub scale: f64,
}

impl Default for InitSpec {
    fn default() -> Self {
        InitSpec {
            scheme: InitScheme::Meanfield,
            scale: 1.0,
        }
    }
}

pub fn init_params(net: &HomogeneousNet, init: &InitSpec, seed: u64) -> Params {
    let mut rng = Pcg32::seed_from_u64(seed);
    let layers = net
        .widths()
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let std = match init.scheme {
                InitScheme::Meanfield => init.scale / fan_in as f64,
                InitScheme::He => (2.0 / fan_in as f64).sqrt(),
            };
            let normal = Normal::new(0.0, std).expect("finite std");
            Matrix {
                rows: fan_out,
                cols: fan_in,
                data: (0..fan_in * fan_out).map(|_| normal.sample(&mut rng)).collect(),
            }
        })
        .collect();
    Params { layers }
}

/// The update applied by the most recent step.
#[derive(Debug, Clone)]
pub struct StepDelta {
    pub theta_before: Params,
    /// Δθ / Δtime.
    pub velocity: Params,
    pub eta_eff: f64,
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub theta: Params,
    pub dual: Params,
    pub step: usize,
    pub time: f64,
    pub log_loss: f64,
    pub rng_seed: u64,
    /// Loss, softmax weights and descent direction at `theta`.
    pub loss: LossGrad,
    pub last_step: Option<StepDelta>,
}

impl TrainState {
    /// Starts at θ₀ with the dual set to ∇R(θ₀).
    pub fn new(
        theta: Params,
        potentials: &LayerPotentials,
        net: &HomogeneousNet,
        data: &Dataset,
        rng_seed: u64,
    ) -> Result<Self> {
        net.check_params(&theta)?;
        check_depth(potentials, net)?;
        let dual = dual_of(&theta, potentials)?;
        let loss = net.loss_and_grad(&theta, data)?;
        Ok(TrainState {
            theta,
            dual,
            step: 0,
            time: 0.0,
            log_loss: loss.log_loss,
            rng_seed,
            loss,
            last_step: None,
        })
    }

    pub fn all_classified(&self) -> bool {
        self.loss.margins.q_min > 0.0
    }
}

fn check_depth(potentials: &LayerPotentials, net: &HomogeneousNet) -> Result<()> {
    if potentials.len() != net.depth() {
        return Err(Error::Config(format!(
            "{} per-layer potentials for a network with {} layers",
            potentials.len(),
            net.depth()
        )));
    }
    Ok(())
}

/// Layerwise ∇R_i(W_i).
pub fn dual_of(theta: &Params, potentials: &LayerPotentials) -> Result<Params> {
    let mut dual = theta.clone();
    for (i, m) in dual.layers.iter_mut().enumerate() {
        m.data = potentials.layer(i).eval_bundle(&m.data)?.grad;
    }
    Ok(dual)
}

/// One explicit Euler step of the dual dynamics.
pub fn md_step(
    state: &TrainState,
    potentials: &LayerPotentials,
    net: &HomogeneousNet,
    data: &Dataset,
    schedule: &Schedule,
) -> Result<TrainState> {
    let all_classified = state.all_classified();
    let eta_eff = schedule_lr(schedule, state.log_loss, all_classified);
    let coeff = if schedule.rescale_active(state.log_loss, all_classified) {
        schedule.rescale_factor * schedule.base_lr
    } else {
        eta_eff * state.log_loss.exp()
    };
    let next_step = state.step + 1;
    let diverged = |reason: String| Error::Divergence {
        step: next_step,
        reason,
    };

    let mut dual = state.dual.clone();
    dual.axpy(coeff, &state.loss.grad_hat);
    if !dual.is_finite() {
        return Err(diverged("non-finite dual iterate".into()));
    }
    let mut theta = Params::zeros_like(&state.theta);
    for (i, (m, z)) in theta.layers.iter_mut().zip(&dual.layers).enumerate() {
        m.data = potentials.layer(i).grad_inverse(&z.data)?;
    }
    if !theta.is_finite() {
        return Err(diverged("non-finite primal iterate".into()));
    }
    let loss = net.loss_and_grad(&theta, data)?;
    if !loss.log_loss.is_finite() || !loss.grad_hat.is_finite() {
        return Err(diverged(format!("loss became {}", loss.log_loss)));
    }
    let mut velocity = theta.clone();
    velocity.axpy(-1.0, &state.theta);
    velocity.scale(1.0 / eta_eff);

    Ok(TrainState {
        theta,
        dual,
        step: next_step,
        time: state.time + eta_eff,
        log_loss: loss.log_loss,
        rng_seed: state.rng_seed,
        loss,
        last_step: Some(StepDelta {
            theta_before: state.theta.clone(),
            velocity,
            eta_eff,
        }),
    })
}

/// Fully resolved inputs for one training run.
#[derive(Debug, Clone)]
pub struct RunSpec {
    pub net: HomogeneousNet,
    pub potentials: LayerPotentials,
    pub data: Dataset,
    pub schedule: Schedule,
    pub init: InitSpec,
    pub seed: u64,
    pub log_every: usize,
    pub margins: MarginOptions,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub records: Vec<MetricsRecord>,
    pub initial_theta: Params,
    /// Last good state (the final state unless the run diverged).
    pub final_state: TrainState,
    /// Divergence diagnostic when the run halted early.
    pub halt: Option<String>,
}

impl Trajectory {
    pub fn last(&self) -> &MetricsRecord {
        self.records.last().expect("trajectory always has the initial record")
    }
}

pub fn run(spec: &RunSpec) -> Result<Trajectory> {
    run_with_theta(spec, init_params(&spec.net, &spec.init, spec.seed))
}

/// Runs from an explicit θ₀; the dual is always initialized as ∇R(θ₀).
pub fn run_with_theta(spec: &RunSpec, theta0: Params) -> Result<Trajectory> {
    spec.schedule.validate()?;
    if spec.log_every == 0 {
        return Err(Error::Config("train.log_every must be at least 1".into()));
    }
    let mut state = TrainState::new(
        theta0.clone(),
        &spec.potentials,
        &spec.net,
        &spec.data,
        spec.seed,
    )?;
    let ctx = RecordContext::new(&spec.net, &spec.potentials, &spec.data, &spec.margins, &theta0);
    let mut records = vec![diagnostics::metrics_record(&ctx, &state)];
    let mut halt = None;
    info!(
        "run start: {} layers, {} params, K={}",
        spec.net.depth(),
        theta0.num_params(),
        spec.data.len()
    );

    while state.step < spec.schedule.max_steps && state.log_loss > spec.schedule.stop_log_loss {
        match md_step(&state, &spec.potentials, &spec.net, &spec.data, &spec.schedule) {
            Ok(next) => state = next,
            Err(e @ Error::Divergence { .. }) => {
                info!("halting: {e}");
                halt = Some(e.to_string());
                break;
            }
            Err(e) => return Err(e),
        }
        if state.step % spec.log_every == 0 {
            records.push(diagnostics::metrics_record(&ctx, &state));
            debug!("step {} log_loss {:.6e}", state.step, state.log_loss);
        }
    }
    if records.last().map(|r| r.step) != Some(state.step) {
        records.push(diagnostics::metrics_record(&ctx, &state));
    }
    info!(
        "run end: step {} time {:.4e} log_loss {:.4e}",
        state.step, state.time, state.log_loss
    );
    Ok(Trajectory {
        records,
        initial_theta: theta0,
        final_state: state,
        halt,
    })
}
