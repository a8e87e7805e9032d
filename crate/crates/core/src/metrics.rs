//! Trajectory diagnostics: alignment angle, margin distribution, the rate
//! identities for the normalized smoothed margin and path length, the
//! gradient potential, per-partition alignment, node directions, and the
//! planar covering predicate.

use std::f64::consts::TAU;

use thiserror::Error;

use crate::losses::{self, LossKind};
use crate::models::{Example, ModelError, PredictorSpec};
use crate::numeric;
use crate::params::{self, ParamVec, ParamsError};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("zero-norm parameter vector")]
    ZeroNorm,
    #[error("zero vector where a direction is required")]
    ZeroVector,
    #[error("covering check requires planar directions, got dimension {0}")]
    UnsupportedDimension(usize),
    #[error("margin distribution not scale invariant at example {index}: {got} vs {want}")]
    ScaleInvariance { index: usize, got: f64, want: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Params(#[from] ParamsError),
}

/// Angle in `[0, π]` between `W` and `-g`.
///
/// Uses the half-angle form `2·atan2(‖û − v̂‖, ‖û + v̂‖)`, which stays
/// accurate for nearly aligned vectors where `acos` of a rounded cosine
/// would floor out near `1e-8`.
pub fn alignment_angle(w: &ParamVec, g: &[f64]) -> Result<f64, MetricsError> {
    let nw = w.norm();
    let ng = numeric::norm(g);
    if nw == 0.0 {
        return Err(MetricsError::ZeroNorm);
    }
    if ng == 0.0 {
        return Err(MetricsError::ZeroVector);
    }
    let unit_w = w.unit()?;
    let mut diff = Vec::with_capacity(unit_w.len());
    let mut sum = Vec::with_capacity(unit_w.len());
    for (u, gi) in unit_w.iter().zip(g) {
        let v = -gi / ng;
        diff.push(u - v);
        sum.push(u + v);
    }
    Ok(2.0 * numeric::norm(&diff).atan2(numeric::norm(&sum)))
}

/// Normalized margins `p_i / ‖W‖^L`.
pub fn margin_distribution(
    margins: &[f64],
    norm_w: f64,
    degree: f64,
) -> Result<Vec<f64>, MetricsError> {
    if norm_w <= 0.0 {
        return Err(MetricsError::ZeroNorm);
    }
    let scale = norm_w.powf(degree);
    Ok(margins.iter().map(|p| p / scale).collect())
}

/// Flow-time rates reconstructed from one iterate:
/// `rate_alpha = dᾱ/dt`, `rate_zeta = dζ/dt`, and `rate_tau = dτ/dt`.
#[derive(Debug, Clone, Copy)]
pub struct RatePair {
    pub rate_alpha: f64,
    pub rate_zeta: f64,
    pub rate_tau: f64,
}

/// Evaluate the analytic right-hand sides
/// `dᾱ/dt = ‖∂_r ᾱ‖‖∂_r L‖ + ‖∂_⊥ ᾱ‖‖∂_⊥ L‖` and `dζ/dt = ‖∂_⊥ L‖/‖W‖`,
/// using `∂̄α = ∂̄L/ℓ′(α)`, `∂_r ᾱ = L(β−α)/‖W‖^{L+1} W̃`, and
/// `∂_⊥ ᾱ = ∂_⊥ α/‖W‖^L`.
pub fn rate_identities(
    w: &ParamVec,
    grad_l: &[f64],
    kind: LossKind,
    margins: &[f64],
    degree: f64,
) -> Result<RatePair, MetricsError> {
    let norm_w = w.norm();
    if norm_w == 0.0 {
        return Err(MetricsError::ZeroNorm);
    }
    let beta = losses::beta(kind, margins);
    let alpha = losses::smoothed_margin(kind, margins);
    let rs = params::decompose(grad_l, w)?;
    let radial_l = rs.radial_norm();
    let spherical_l = rs.spherical_norm();
    let ell_prime_alpha = kind.ell_prime(alpha).abs();
    let pow_l = norm_w.powf(degree);
    // Radial part of ∇ᾱ; β ≥ α under the initial-risk assumption, clamp the
    // rounding residue.
    let radial_ta = degree * (beta - alpha).max(0.0) / (pow_l * norm_w);
    let spherical_ta = spherical_l / (ell_prime_alpha * pow_l);
    let rate_alpha = radial_ta * radial_l + spherical_ta * spherical_l;
    let rate_zeta = spherical_l / norm_w;
    // dτ/dt = ‖∇L‖²/L(W), evaluated as a product of representable ratios.
    let norm_g = numeric::norm(grad_l);
    let loss = losses::log_total_loss(kind, margins).exp();
    let rate_tau = if loss > 0.0 {
        (norm_g / loss) * norm_g
    } else {
        0.0
    };
    Ok(RatePair {
        rate_alpha,
        rate_zeta,
        rate_tau,
    })
}

/// `J(W) = ‖∇α‖² / ‖W‖^{2L−2}`, evaluated as a squared ratio so extreme
/// accuracies do not underflow.
pub fn j_potential(w: &ParamVec, grad_alpha: &[f64], degree: f64) -> Result<f64, MetricsError> {
    let norm_w = w.norm();
    if norm_w == 0.0 {
        return Err(MetricsError::ZeroNorm);
    }
    let r = numeric::norm(grad_alpha) / norm_w.powf(degree - 1.0);
    Ok(r * r)
}

/// `⟨∇α, W⟩ / ‖W‖^L`; converges to `aL` along runs.
pub fn asymptotic_euler(
    w: &ParamVec,
    grad_alpha: &[f64],
    degree: f64,
) -> Result<f64, MetricsError> {
    let norm_w = w.norm();
    if norm_w == 0.0 {
        return Err(MetricsError::ZeroNorm);
    }
    Ok(numeric::dot(grad_alpha, w.data()) / norm_w.powf(degree))
}

/// Per-segment alignment report: norm share `‖U_j‖/‖W‖`, gradient share
/// `‖g_j‖/‖g‖`, and the cosine of `(U_j, -g_j)` (0 when either block is 0).
#[derive(Debug, Clone)]
pub struct SegmentAlignment {
    pub name: String,
    pub norm_share: f64,
    pub grad_share: f64,
    pub cosine: f64,
}

pub fn partition_alignment(
    w: &ParamVec,
    grad_l: &[f64],
) -> Result<Vec<SegmentAlignment>, MetricsError> {
    let norm_w = w.norm();
    let norm_g = numeric::norm(grad_l);
    if norm_w == 0.0 {
        return Err(MetricsError::ZeroNorm);
    }
    if norm_g == 0.0 {
        return Err(MetricsError::ZeroVector);
    }
    Ok(w.partition()
        .iter()
        .enumerate()
        .map(|(j, seg)| {
            let u = w.segment(j);
            let g = &grad_l[seg.offset..seg.offset + seg.len];
            let nu = numeric::norm(u);
            let ng = numeric::norm(g);
            let cosine = if nu == 0.0 || ng == 0.0 {
                0.0
            } else {
                (-numeric::dot(u, g) / (nu * ng)).clamp(-1.0, 1.0)
            };
            SegmentAlignment {
                name: seg.name.clone(),
                norm_share: nu / norm_w,
                grad_share: ng / norm_g,
                cosine,
            }
        })
        .collect())
}

/// Normalized per-segment directions `θ_j = U_j/‖U_j‖`, with the zero vector
/// for segments below `1e-14 · ‖W‖`.
pub fn node_directions(w: &ParamVec) -> Vec<Vec<f64>> {
    let threshold = 1e-14 * w.norm();
    (0..w.partition().len())
        .map(|j| {
            let u = w.segment(j);
            let n = numeric::norm(u);
            if n <= threshold {
                vec![0.0; u.len()]
            } else {
                u.iter().map(|v| v / n).collect()
            }
        })
        .collect()
}

/// Result of the planar covering measurement.
#[derive(Debug, Clone, Copy)]
pub struct CoveringReport {
    /// Worst distance from a grid direction to the nearer node of each sign
    /// class, plus the certified grid slack.
    pub epsilon_cover: f64,
    /// Certified slack `2π/N` added to the measured maximum.
    pub grid_slack: f64,
    /// `max_j ‖θ_j(t_0) − θ̄_j‖` when final directions are supplied.
    pub epsilon_drift: Option<f64>,
}

/// Measure how well `dirs` cover the unit circle in both sign classes.
///
/// `signs[j] = ±1` selects the class of node `j`; zero directions are
/// skipped. The maximum over `n_grid` equally spaced probes underestimates
/// the true supremum by at most the grid resolution, which is added to the
/// reported value.
pub fn covering_check(
    dirs: &[Vec<f64>],
    signs: &[f64],
    n_grid: usize,
    final_dirs: Option<&[Vec<f64>]>,
) -> Result<CoveringReport, MetricsError> {
    if let Some(d) = dirs.iter().find(|d| d.len() != 2) {
        return Err(MetricsError::UnsupportedDimension(d.len()));
    }
    assert_eq!(dirs.len(), signs.len());
    let live = |want: f64| {
        dirs.iter()
            .zip(signs)
            .filter(move |(d, &s)| s == want && numeric::norm(d) > 0.0)
            .map(|(d, _)| d)
    };
    let mut worst = 0.0f64;
    for g in 0..n_grid {
        let angle = TAU * g as f64 / n_grid as f64;
        let probe = [angle.cos(), angle.sin()];
        let mut per_sign = 0.0f64;
        for want in [1.0, -1.0] {
            let nearest = live(want)
                .map(|d| numeric::norm(&[d[0] - probe[0], d[1] - probe[1]]))
                .fold(f64::INFINITY, f64::min);
            per_sign = per_sign.max(nearest);
        }
        worst = worst.max(per_sign);
    }
    let grid_slack = TAU / n_grid as f64;
    let epsilon_drift = final_dirs.map(|fin| {
        dirs.iter()
            .zip(fin)
            .map(|(a, b)| {
                let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
                numeric::norm(&diff)
            })
            .fold(0.0f64, f64::max)
    });
    Ok(CoveringReport {
        epsilon_cover: worst + grid_slack,
        grid_slack,
        epsilon_drift,
    })
}

/// Everything recorded at one accuracy checkpoint.
#[derive(Debug, Clone)]
pub struct MetricsRecord {
    pub step: u64,
    /// Accumulated flow time (sum of effective step sizes).
    pub t_flow: f64,
    pub tau: f64,
    pub log_loss: f64,
    pub norm_w: f64,
    pub alpha: f64,
    pub alpha_norm: f64,
    pub beta: f64,
    pub zeta: f64,
    pub theta: f64,
    pub j_potential: f64,
    pub margins_norm: Vec<f64>,
    pub duals: Vec<f64>,
    pub shares: Vec<f64>,
    pub node_dirs: Vec<Vec<f64>>,
    pub rate_alpha: f64,
    pub rate_zeta: f64,
    pub rate_tau: f64,
    pub euler_residual: f64,
    /// Direction `W̃` at record time (not serialized to CSV).
    pub w_unit: Vec<f64>,
}

/// Total-loss gradient `g = Σ ℓ′(p_i) ∇p_i` together with the margins.
pub fn loss_gradient(
    spec: &PredictorSpec,
    w: &ParamVec,
    dataset: &[Example],
    kind: LossKind,
) -> Result<(Vec<f64>, Vec<f64>), MetricsError> {
    let mut g = vec![0.0; w.len()];
    let mut margins = Vec::with_capacity(dataset.len());
    for ex in dataset {
        let p = spec.margin(w, ex)?;
        margins.push(p);
        let coef = kind.ell_prime(p);
        if coef != 0.0 {
            let gp = spec.grad_margin(w, ex)?;
            for (gi, gpi) in g.iter_mut().zip(&gp) {
                *gi += coef * gpi;
            }
        }
    }
    Ok((margins, g))
}

/// Compute a full record from the current iterate. Performs the margin
/// scale-invariance self-check by re-evaluating the margins at `2W`.
#[allow(clippy::too_many_arguments)]
pub fn build_record(
    spec: &PredictorSpec,
    w: &ParamVec,
    dataset: &[Example],
    kind: LossKind,
    step: u64,
    t_flow: f64,
    zeta: f64,
    extended: bool,
) -> Result<MetricsRecord, MetricsError> {
    let norm_w = w.norm();
    if norm_w == 0.0 {
        return Err(MetricsError::ZeroNorm);
    }
    let degree = spec.degree();
    let (margins, g) = loss_gradient(spec, w, dataset, kind)?;
    let snap = losses::snapshot(kind, &margins, norm_w, degree, extended);
    let tau = (dataset.len() as f64).ln() - snap.loss_log;
    let margins_norm = margin_distribution(&margins, norm_w, degree)?;

    // Scale-invariance self-check: margins at 2W must equal 2^L p exactly up
    // to rounding.
    {
        let w2 = w.scaled(2.0)?;
        let scale = 2.0f64.powf(degree);
        for (i, ex) in dataset.iter().enumerate() {
            let rescaled = spec.margin(&w2, ex)? / (norm_w * 2.0).powf(degree);
            let want = margins[i] * scale / (norm_w * 2.0).powf(degree);
            let tol = 1e-10 * (1.0 + want.abs());
            if (rescaled - want).abs() > tol {
                return Err(MetricsError::ScaleInvariance {
                    index: i,
                    got: rescaled,
                    want,
                });
            }
        }
    }

    let norm_g = numeric::norm(&g);
    let (theta, j_pot, rates, euler_residual) = if norm_g == 0.0 {
        (
            0.0,
            0.0,
            RatePair {
                rate_alpha: 0.0,
                rate_zeta: 0.0,
                rate_tau: 0.0,
            },
            0.0,
        )
    } else {
        let theta = alignment_angle(w, &g)?;
        let ell_prime_alpha = kind.ell_prime(snap.alpha);
        let grad_alpha: Vec<f64> = g.iter().map(|gi| gi / ell_prime_alpha).collect();
        let j_pot = j_potential(w, &grad_alpha, degree)?;
        let euler_value = asymptotic_euler(w, &grad_alpha, degree)?;
        let euler_residual = (euler_value - degree * snap.beta / norm_w.powf(degree)).abs();
        let rates = rate_identities(w, &g, kind, &margins, degree)?;
        (theta, j_pot, rates, euler_residual)
    };

    Ok(MetricsRecord {
        step,
        t_flow,
        tau,
        log_loss: snap.loss_log,
        norm_w,
        alpha: snap.alpha,
        alpha_norm: snap.alpha_norm,
        beta: snap.beta,
        zeta,
        theta,
        j_potential: j_pot,
        margins_norm,
        duals: snap.duals,
        shares: params::partition_shares(w, degree)?,
        node_dirs: node_directions(w),
        rate_alpha: rates.rate_alpha,
        rate_zeta: rates.rate_zeta,
        rate_tau: rates.rate_tau,
        euler_residual,
        w_unit: w.unit()?,
    })
}
