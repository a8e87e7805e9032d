//! Discrete-time approximation of the late-phase gradient flow:
//! loss-normalized descent with an update-norm clamp, step-halving retries to
//! keep the loss nonincreasing, and accuracy-indexed checkpointing.
//!
//! Time is indexed by `τ = ln(n/L(W))`, which removes step-size and other
//! implementation coincidences from recorded series. Flow time (the sum of
//! effective step sizes) is tracked as well so the rate identities can be
//! compared against finite differences.

use thiserror::Error;

use crate::losses::{self, LossKind};
use crate::metrics::{self, MetricsError, MetricsRecord};
use crate::models::{Example, ModelError, PredictorSpec};
use crate::numeric;
use crate::params::{ParamVec, ParamsError};

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("warmup failed to reach L(W) < 0.99·ℓ(0) within {steps} steps")]
    WarmupFailed { steps: u64 },
    #[error(
        "flow stalled at step {step} (τ = {tau}): 30 step halvings could not avoid a loss increase"
    )]
    StalledFlow { step: u64, tau: f64 },
    #[error("initial iterate violates L(W) < ℓ(0)")]
    InitCheck,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Params(#[from] ParamsError),
}

/// Driver configuration. `base_step` is divided by the current total loss;
/// the resulting update is clamped to norm `clamp`.
#[derive(Debug, Clone)]
pub struct FlowConfig {
    pub base_step: f64,
    pub clamp: f64,
    /// Stop once `τ = ln(n/L(W))` reaches this value.
    pub target_accuracy: f64,
    /// Emit a record whenever `τ` crosses the next multiple of this spacing.
    pub checkpoint_spacing: f64,
    pub max_steps: u64,
    pub seed: u64,
    /// Switch the loss/margin accumulators to double-double once `τ` exceeds
    /// `extended_threshold`.
    pub extended_precision: bool,
    pub extended_threshold: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            base_step: 0.05,
            clamp: 0.1,
            target_accuracy: 60.0,
            checkpoint_spacing: 0.5,
            max_steps: 5_000_000,
            seed: 0,
            extended_precision: false,
            extended_threshold: 50.0,
        }
    }
}

/// Current iterate plus the accumulated path data.
#[derive(Debug, Clone)]
pub struct FlowState {
    pub w: ParamVec,
    pub step: u64,
    /// `ln L(W)`.
    pub loss_log: f64,
    /// `ln(n / L(W)) = ln n − loss_log`.
    pub tau: f64,
    /// Normalized smoothed margin `ᾱ = α/‖W‖^L`.
    pub alpha_norm: f64,
    /// Cumulative path length of `W̃`.
    pub zeta: f64,
    /// Accumulated flow time (sum of effective step sizes).
    pub t_flow: f64,
    /// `W̃` at this iterate.
    pub last_dir: Vec<f64>,
}

/// Checkpointed records plus the final iterate.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub records: Vec<MetricsRecord>,
    pub final_state: FlowState,
}

fn margins_of(
    spec: &PredictorSpec,
    w: &ParamVec,
    dataset: &[Example],
) -> Result<Vec<f64>, ModelError> {
    dataset.iter().map(|ex| spec.margin(w, ex)).collect()
}

fn use_extended(cfg: &FlowConfig, tau: f64) -> bool {
    cfg.extended_precision && tau > cfg.extended_threshold
}

/// True iff `Σ ℓ(p_i(W)) < ℓ(0)`.
pub fn check_init(
    kind: LossKind,
    spec: &PredictorSpec,
    dataset: &[Example],
    w: &ParamVec,
) -> Result<bool, FlowError> {
    let margins = margins_of(spec, w, dataset)?;
    let loss_log = losses::log_total_loss(kind, &margins);
    Ok(loss_log < kind.ell_at_zero().ln())
}

/// Options for the plain-descent warmup establishing the initial-risk
/// condition.
#[derive(Debug, Clone)]
pub struct WarmupOpts {
    pub step: f64,
    pub max_steps: u64,
}

impl Default for WarmupOpts {
    fn default() -> Self {
        Self {
            step: 0.005,
            max_steps: 2_000_000,
        }
    }
}

/// Plain gradient descent with a fixed small step until `L(W) < 0.99·ℓ(0)`.
pub fn warmup(
    spec: &PredictorSpec,
    dataset: &[Example],
    w_init: ParamVec,
    kind: LossKind,
    opts: &WarmupOpts,
) -> Result<ParamVec, FlowError> {
    let target = (0.99 * kind.ell_at_zero()).ln();
    let mut w = w_init;
    for step in 0..opts.max_steps {
        let (margins, g) = metrics::loss_gradient(spec, &w, dataset, kind)?;
        if losses::log_total_loss(kind, &margins) < target {
            return Ok(w);
        }
        let data: Vec<f64> = w
            .data()
            .iter()
            .zip(&g)
            .map(|(wi, gi)| wi - opts.step * gi)
            .collect();
        if data.iter().any(|x| !x.is_finite()) {
            log::warn!("warmup diverged at step {step}; reduce the step or the init scale");
            return Err(FlowError::WarmupFailed { steps: step });
        }
        w = w.with_data(data)?;
    }
    Err(FlowError::WarmupFailed {
        steps: opts.max_steps,
    })
}

/// Initial state for a run; requires the initial-risk condition.
pub fn init_state(
    spec: &PredictorSpec,
    dataset: &[Example],
    kind: LossKind,
    cfg: &FlowConfig,
    w0: ParamVec,
) -> Result<FlowState, FlowError> {
    if !check_init(kind, spec, dataset, &w0)? {
        return Err(FlowError::InitCheck);
    }
    let margins = margins_of(spec, &w0, dataset)?;
    let n = dataset.len() as f64;
    let loss_log = losses::log_total_loss(kind, &margins);
    let tau = n.ln() - loss_log;
    let loss_log = if use_extended(cfg, tau) {
        losses::log_total_loss_ext(kind, &margins, true)
    } else {
        loss_log
    };
    let alpha_norm = kind.ell_inverse_from_log(loss_log) / w0.norm().powf(spec.degree());
    let last_dir = w0.unit()?;
    Ok(FlowState {
        w: w0,
        step: 0,
        loss_log,
        tau: n.ln() - loss_log,
        alpha_norm,
        zeta: 0.0,
        t_flow: 0.0,
        last_dir,
    })
}

/// One loss-normalized descent step. Returns the new state and the norm of
/// the applied update (0 when the gradient vanished).
fn step_inner(
    state: &FlowState,
    spec: &PredictorSpec,
    dataset: &[Example],
    kind: LossKind,
    cfg: &FlowConfig,
) -> Result<(FlowState, f64), FlowError> {
    let (_, g) = metrics::loss_gradient(spec, &state.w, dataset, kind)?;
    let norm_g = numeric::norm(&g);
    if norm_g == 0.0 {
        let mut next = state.clone();
        next.step += 1;
        return Ok((next, 0.0));
    }
    let extended = use_extended(cfg, state.tau);
    let loss = state.loss_log.exp();
    let eta_loss = if loss > 0.0 {
        cfg.base_step / loss
    } else {
        f64::INFINITY
    };
    let mut eta = eta_loss.min(cfg.clamp / norm_g);
    let n = dataset.len() as f64;
    let degree = spec.degree();
    for _ in 0..=30 {
        let data: Vec<f64> = state
            .w
            .data()
            .iter()
            .zip(&g)
            .map(|(wi, gi)| wi - eta * gi)
            .collect();
        let w_new = state.w.with_data(data)?;
        let margins = margins_of(spec, &w_new, dataset)?;
        let loss_log_new = losses::log_total_loss_ext(kind, &margins, extended);
        let alpha_norm_new = kind.ell_inverse_from_log(loss_log_new) / w_new.norm().powf(degree);
        // Relative non-increase of the loss, and non-decrease of ᾱ: the flow
        // has dᾱ/dt ≥ 0, so halving the step recovers both properties.
        let loss_ok = loss_log_new <= state.loss_log + 1e-12;
        let alpha_ok = alpha_norm_new >= state.alpha_norm - 1e-12 * state.alpha_norm.abs().max(1.0);
        if loss_ok && alpha_ok {
            let dir = w_new.unit()?;
            let chord: Vec<f64> = dir
                .iter()
                .zip(&state.last_dir)
                .map(|(a, b)| a - b)
                .collect();
            let next = FlowState {
                w: w_new,
                step: state.step + 1,
                loss_log: loss_log_new,
                tau: n.ln() - loss_log_new,
                alpha_norm: alpha_norm_new,
                zeta: state.zeta + numeric::norm(&chord),
                t_flow: state.t_flow + eta,
                last_dir: dir,
            };
            return Ok((next, eta * norm_g));
        }
        eta *= 0.5;
    }
    log::warn!(
        "flow stalled at step {} (τ = {:.3}, ‖g‖ = {:.3e})",
        state.step,
        state.tau,
        norm_g
    );
    Err(FlowError::StalledFlow {
        step: state.step,
        tau: state.tau,
    })
}

/// One public step of the flow.
pub fn step(
    state: &FlowState,
    spec: &PredictorSpec,
    dataset: &[Example],
    kind: LossKind,
    cfg: &FlowConfig,
) -> Result<FlowState, FlowError> {
    Ok(step_inner(state, spec, dataset, kind, cfg)?.0)
}

/// Run the flow until `τ ≥ target_accuracy` or the step budget is exhausted,
/// recording a metrics checkpoint at every crossing of `checkpoint_spacing`.
pub fn run(
    spec: &PredictorSpec,
    dataset: &[Example],
    kind: LossKind,
    cfg: &FlowConfig,
    w0: ParamVec,
) -> Result<Trajectory, FlowError> {
    let mut state = init_state(spec, dataset, kind, cfg, w0)?;
    let spacing = cfg.checkpoint_spacing;
    let record = |s: &FlowState| -> Result<MetricsRecord, FlowError> {
        Ok(metrics::build_record(
            spec,
            &s.w,
            dataset,
            kind,
            s.step,
            s.t_flow,
            s.zeta,
            use_extended(cfg, s.tau),
        )?)
    };
    let mut records = vec![record(&state)?];
    let mut next_mark = spacing * ((state.tau / spacing).floor() + 1.0);
    while state.tau < cfg.target_accuracy && state.step < cfg.max_steps {
        let (next, update_norm) = step_inner(&state, spec, dataset, kind, cfg)?;
        state = next;
        if update_norm == 0.0 {
            log::warn!("gradient vanished at step {}; stopping run", state.step);
            break;
        }
        if state.tau >= next_mark {
            records.push(record(&state)?);
            next_mark = spacing * ((state.tau / spacing).floor() + 1.0);
        }
    }
    if state.tau > records.last().map(|r| r.tau).unwrap_or(f64::NEG_INFINITY) + 1e-12 {
        records.push(record(&state)?);
    }
    Ok(Trajectory {
        records,
        final_state: state,
    })
}
