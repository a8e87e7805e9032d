//! Independent oracles and end-to-end checks for the margin-maximization
//! consequences: the hard-margin direction via polytope distance, rank-one
//! layer limits, matrix-game equilibria, and the planar covering/global
//! margin machinery.
//!
//! Every oracle is deliberately independent of the descent path it validates:
//! the max-margin direction comes from a Gilbert/MDM iteration on the convex
//! hull, game values carry certified duality gaps, and brute-force support
//! enumeration backs the game solver in tests.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::flow::Trajectory;
use crate::losses::LossKind;
use crate::metrics::{self, MetricsError};
use crate::models::{node_features, squared_relu_sign, Example, ModelError, PredictorSpec};
use crate::numeric;
use crate::params::ParamVec;

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("dataset is not linearly separable (origin lies in the hull of y_i x_i)")]
    NotSeparable,
    #[error("zero matrix has no singular directions")]
    ZeroMatrix,
    #[error(
        "solver did not reach the requested gap in {iters} iterations (best gap {best_gap:e})"
    )]
    NotConverged { iters: u64, best_gap: f64 },
    #[error("operation requires planar inputs, got dimension {0}")]
    UnsupportedDimension(usize),
    #[error("invalid input: {0}")]
    BadInput(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

// ---------------------------------------------------------------------------
// Small dense matrices
// ---------------------------------------------------------------------------

/// Row-major dense matrix; all verification problems here are at most a few
/// hundred rows by a few thousand columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len());
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Mat {
        let mut out = Mat::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.set(c, r, self.at(r, c));
            }
        }
        out
    }

    /// `A · v`.
    pub fn mat_vec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|r| numeric::dot(self.row(r), v))
            .collect()
    }

    /// `Aᵀ · v`.
    pub fn mat_t_vec(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for r in 0..self.rows {
            let vr = v[r];
            if vr != 0.0 {
                for (o, a) in out.iter_mut().zip(self.row(r)) {
                    *o += vr * a;
                }
            }
        }
        out
    }

    pub fn mat_mul(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows);
        let mut out = Mat::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self.at(r, k);
                if a != 0.0 {
                    for c in 0..other.cols {
                        out.data[r * other.cols + c] += a * other.at(k, c);
                    }
                }
            }
        }
        out
    }

    pub fn frob_norm(&self) -> f64 {
        numeric::norm(&self.data)
    }
}

// ---------------------------------------------------------------------------
// Hard-margin direction via polytope distance
// ---------------------------------------------------------------------------

/// Output of the polytope-distance solver.
#[derive(Debug, Clone)]
pub struct MaxMarginResult {
    /// Unit max-margin direction.
    pub direction: Vec<f64>,
    /// `min_i y_i ⟨x_i, u⟩` at the returned direction.
    pub margin: f64,
    /// Certified duality gap: `margin ≤ γ* ≤ margin + certificate_gap`.
    pub certificate_gap: f64,
}

/// Minimum-norm point of `conv{y_i x_i}` via the Mitchell–Demyanov–Malozemov
/// exchange rule, run until the duality gap drops below `tol`.
pub fn max_margin_linear(dataset: &[Example], tol: f64) -> Result<MaxMarginResult, VerifyError> {
    if dataset.is_empty() {
        return Err(VerifyError::BadInput("empty dataset".into()));
    }
    let dim = dataset[0].x.len();
    let points: Vec<Vec<f64>> = dataset
        .iter()
        .map(|ex| ex.x.iter().map(|v| ex.y * v).collect::<Vec<f64>>())
        .collect();
    if points.iter().any(|p| p.len() != dim) {
        return Err(VerifyError::BadInput("ragged dataset".into()));
    }
    let n = points.len();
    // Start from the shortest generator.
    let start = (0..n)
        .min_by(|&a, &b| {
            numeric::norm(&points[a])
                .partial_cmp(&numeric::norm(&points[b]))
                .unwrap()
        })
        .unwrap();
    let mut lambda = vec![0.0; n];
    lambda[start] = 1.0;
    let max_iters = 2_000_000u64;
    let mut best_gap = f64::INFINITY;
    for _ in 0..max_iters {
        let mut z = vec![0.0; dim];
        for (li, p) in lambda.iter().zip(&points) {
            if *li > 0.0 {
                for (zi, pi) in z.iter_mut().zip(p) {
                    *zi += li * pi;
                }
            }
        }
        let norm_z = numeric::norm(&z);
        if norm_z <= tol {
            return Err(VerifyError::NotSeparable);
        }
        let dots: Vec<f64> = points.iter().map(|p| numeric::dot(p, &z)).collect();
        let i_to = (0..n)
            .min_by(|&a, &b| dots[a].partial_cmp(&dots[b]).unwrap())
            .unwrap();
        let i_from = (0..n)
            .filter(|&i| lambda[i] > 0.0)
            .max_by(|&a, &b| dots[a].partial_cmp(&dots[b]).unwrap())
            .unwrap();
        let margin = dots[i_to] / norm_z;
        let gap = norm_z - margin;
        best_gap = best_gap.min(gap);
        if gap <= tol {
            let direction: Vec<f64> = z.iter().map(|v| v / norm_z).collect();
            return Ok(MaxMarginResult {
                direction,
                margin,
                certificate_gap: gap,
            });
        }
        // Shift mass from the worst in-support generator to the best one.
        let diff: Vec<f64> = points[i_to]
            .iter()
            .zip(&points[i_from])
            .map(|(a, b)| a - b)
            .collect();
        let denom = numeric::dot(&diff, &diff);
        if denom == 0.0 {
            break;
        }
        let step = (-numeric::dot(&z, &diff) / denom).clamp(0.0, lambda[i_from]);
        if step == 0.0 {
            break;
        }
        lambda[i_from] -= step;
        lambda[i_to] += step;
    }
    Err(VerifyError::NotConverged {
        iters: max_iters,
        best_gap,
    })
}

/// Planar hard-margin oracle for cross-checks: scan `n_angles` directions,
/// then refine around the best by golden-section search.
pub fn margin_grid_search_2d(dataset: &[Example], n_angles: usize) -> Result<f64, VerifyError> {
    if dataset.iter().any(|ex| ex.x.len() != 2) {
        return Err(VerifyError::UnsupportedDimension(
            dataset.first().map(|e| e.x.len()).unwrap_or(0),
        ));
    }
    let eval = |phi: f64| -> f64 {
        let u = [phi.cos(), phi.sin()];
        dataset
            .iter()
            .map(|ex| ex.y * numeric::dot(&ex.x, &u))
            .fold(f64::INFINITY, f64::min)
    };
    let tau = std::f64::consts::TAU;
    let mut best_phi = 0.0;
    let mut best = f64::NEG_INFINITY;
    for k in 0..n_angles {
        let phi = tau * k as f64 / n_angles as f64;
        let v = eval(phi);
        if v > best {
            best = v;
            best_phi = phi;
        }
    }
    // Golden-section refinement on the bracket around the best grid angle.
    let step = tau / n_angles as f64;
    let (mut lo, mut hi) = (best_phi - step, best_phi + step);
    let inv_phi = (5.0f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let (mut f1, mut f2) = (eval(x1), eval(x2));
    for _ in 0..200 {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = eval(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = eval(x1);
        }
    }
    Ok(best.max(f1).max(f2))
}

// ---------------------------------------------------------------------------
// Singular values by power iteration
// ---------------------------------------------------------------------------

fn top_singular_triplet(a: &Mat) -> Option<(f64, Vec<f64>, Vec<f64>)> {
    let frob = a.frob_norm();
    if frob == 0.0 {
        return None;
    }
    let mut best: Option<(f64, Vec<f64>, Vec<f64>)> = None;
    // Two deterministic starts guard against a seed orthogonal to the top
    // right-singular subspace.
    for seed in 0..2 {
        let mut v: Vec<f64> = (0..a.cols)
            .map(|i| {
                if seed == 0 {
                    1.0 + 0.37 * (i as f64 + 1.0).sqrt()
                } else if i % 2 == 0 {
                    1.0 / (i + 1) as f64
                } else {
                    -1.0 / (i + 2) as f64
                }
            })
            .collect();
        let nv = numeric::norm(&v);
        for x in &mut v {
            *x /= nv;
        }
        let mut sigma_prev = -1.0;
        for _ in 0..100_000 {
            let av = a.mat_vec(&v);
            let sigma = numeric::norm(&av);
            if sigma == 0.0 {
                break;
            }
            let mut w = a.mat_t_vec(&av);
            let nw = numeric::norm(&w);
            if nw == 0.0 {
                break;
            }
            for x in &mut w {
                *x /= nw;
            }
            v = w;
            if (sigma - sigma_prev).abs() <= 1e-14 * sigma.max(1e-300) {
                break;
            }
            sigma_prev = sigma;
        }
        let av = a.mat_vec(&v);
        let s = numeric::norm(&av);
        if s > 0.0 {
            let u: Vec<f64> = av.iter().map(|x| x / s).collect();
            if best.as_ref().map(|(bs, _, _)| s > *bs).unwrap_or(true) {
                best = Some((s, u, v.clone()));
            }
        }
    }
    best
}

/// Ratio `σ₂/σ₁` of the second to first singular value; 0 means rank one.
pub fn rank_one_residual(a: &Mat) -> Result<f64, VerifyError> {
    let (sigma1, u, v) = top_singular_triplet(a).ok_or(VerifyError::ZeroMatrix)?;
    // Deflate and take the top singular value of the remainder.
    let mut b = a.clone();
    for r in 0..a.rows {
        for c in 0..a.cols {
            b.data[r * a.cols + c] -= sigma1 * u[r] * v[c];
        }
    }
    // Anything at rounding scale of the deflation is exact rank one.
    if b.frob_norm() <= 1e-14 * sigma1 {
        return Ok(0.0);
    }
    let sigma2 = top_singular_triplet(&b).map(|(s, _, _)| s).unwrap_or(0.0);
    Ok((sigma2 / sigma1).min(1.0))
}

// ---------------------------------------------------------------------------
// Zero-sum matrix games
// ---------------------------------------------------------------------------

/// Approximate equilibrium of the zero-sum game `min_q max_s qᵀ M s`.
#[derive(Debug, Clone)]
pub struct GameResult {
    pub value: f64,
    pub row_strategy: Vec<f64>,
    pub col_strategy: Vec<f64>,
    /// Certified gap: `max_j (qᵀM)_j − min_i (M s)_i` at the returned pair.
    pub gap: f64,
}

fn softmax_normalized(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let w: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let total = numeric::sum(w.iter().copied());
    w.into_iter().map(|x| x / total).collect()
}

fn game_gap(m: &Mat, q: &[f64], s: &[f64]) -> f64 {
    let col_payoffs = m.mat_t_vec(q);
    let row_payoffs = m.mat_vec(s);
    let best_col = col_payoffs.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let best_row = row_payoffs.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    best_col - best_row
}

/// Optimistic multiplicative-weights self-play for both players with
/// averaged iterates, run until the certified gap of the better of the last
/// and averaged strategy pairs drops below `tol`.
pub fn game_value(m: &Mat, tol: f64, max_iters: u64) -> Result<GameResult, VerifyError> {
    if m.data.iter().any(|v| !v.is_finite()) {
        return Err(VerifyError::BadInput("non-finite payoff".into()));
    }
    let (n, cols) = (m.rows, m.cols);
    let scale = m.data.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let uniform_q = vec![1.0 / n as f64; n];
    let uniform_s = vec![1.0 / cols as f64; cols];
    if scale == 0.0 {
        return Ok(GameResult {
            value: 0.0,
            row_strategy: uniform_q,
            col_strategy: uniform_s,
            gap: 0.0,
        });
    }
    let eta = 0.125 / scale;
    let mut lq = vec![0.0; n];
    let mut ls = vec![0.0; cols];
    let mut q = uniform_q.clone();
    let mut s = uniform_s.clone();
    let mut prev_row_payoff = m.mat_vec(&s);
    let mut prev_col_payoff = m.mat_t_vec(&q);
    let mut sum_q = vec![0.0; n];
    let mut sum_s = vec![0.0; cols];
    let mut best: Option<GameResult> = None;
    let mut count = 0.0f64;
    for iter in 1..=max_iters {
        let row_payoff = m.mat_vec(&s);
        let col_payoff = m.mat_t_vec(&q);
        for i in 0..n {
            lq[i] -= eta * (2.0 * row_payoff[i] - prev_row_payoff[i]);
        }
        for j in 0..cols {
            ls[j] += eta * (2.0 * col_payoff[j] - prev_col_payoff[j]);
        }
        prev_row_payoff = row_payoff;
        prev_col_payoff = col_payoff;
        q = softmax_normalized(&lq);
        s = softmax_normalized(&ls);
        for (a, b) in sum_q.iter_mut().zip(&q) {
            *a += b;
        }
        for (a, b) in sum_s.iter_mut().zip(&s) {
            *a += b;
        }
        count += 1.0;
        if iter % 64 == 0 || iter == max_iters {
            let avg_q: Vec<f64> = sum_q.iter().map(|x| x / count).collect();
            let avg_s: Vec<f64> = sum_s.iter().map(|x| x / count).collect();
            for (cand_q, cand_s) in [(&q, &s), (&avg_q, &avg_s)] {
                let gap = game_gap(m, cand_q, cand_s);
                if best.as_ref().map(|b| gap < b.gap).unwrap_or(true) {
                    let value = numeric::dot(cand_q, &m.mat_vec(cand_s));
                    best = Some(GameResult {
                        value,
                        row_strategy: cand_q.clone(),
                        col_strategy: cand_s.clone(),
                        gap,
                    });
                }
            }
            if let Some(b) = &best {
                if b.gap <= tol {
                    return Ok(normalize_result(b.clone()));
                }
            }
        }
    }
    Err(VerifyError::NotConverged {
        iters: max_iters,
        best_gap: best.map(|b| b.gap).unwrap_or(f64::INFINITY),
    })
}

fn normalize_result(mut r: GameResult) -> GameResult {
    let sq = numeric::sum(r.row_strategy.iter().copied());
    for x in &mut r.row_strategy {
        *x /= sq;
    }
    let ss = numeric::sum(r.col_strategy.iter().copied());
    for x in &mut r.col_strategy {
        *x /= ss;
    }
    r
}

/// Exact game value by Shapley–Snow support enumeration; brute-force test
/// oracle, feasible for n, m ≤ 6.
pub fn support_enumeration_value(m: &Mat) -> Result<f64, VerifyError> {
    let (n, cols) = (m.rows, m.cols);
    if n > 12 || cols > 12 {
        return Err(VerifyError::BadInput(
            "support enumeration limited to small games".into(),
        ));
    }
    let tol = 1e-9;
    let mut values = Vec::new();
    for mask_r in 1u32..(1 << n) {
        let rows: Vec<usize> = (0..n).filter(|i| mask_r >> i & 1 == 1).collect();
        let k = rows.len();
        for mask_c in 1u32..(1 << cols) {
            let cs: Vec<usize> = (0..cols).filter(|j| mask_c >> j & 1 == 1).collect();
            if cs.len() != k {
                continue;
            }
            // Column strategy on the support plus the value v:
            // Σ_j M[i][j] s_j − v = 0 for i in rows; Σ s_j = 1.
            let mut a = vec![vec![0.0; k + 1]; k + 1];
            let mut b = vec![0.0; k + 1];
            for (ri, &i) in rows.iter().enumerate() {
                for (ci, &j) in cs.iter().enumerate() {
                    a[ri][ci] = m.at(i, j);
                }
                a[ri][k] = -1.0;
            }
            for ci in 0..k {
                a[k][ci] = 1.0;
            }
            b[k] = 1.0;
            let Some(sol_s) = gauss_solve(a, b) else {
                continue;
            };
            // Row strategy: Σ_i q_i M[i][j] − v = 0 for j in cs; Σ q_i = 1.
            let mut a = vec![vec![0.0; k + 1]; k + 1];
            let mut b = vec![0.0; k + 1];
            for (ci, &j) in cs.iter().enumerate() {
                for (ri, &i) in rows.iter().enumerate() {
                    a[ci][ri] = m.at(i, j);
                }
                a[ci][k] = -1.0;
            }
            for ri in 0..k {
                a[k][ri] = 1.0;
            }
            b[k] = 1.0;
            let Some(sol_q) = gauss_solve(a, b) else {
                continue;
            };
            let v = sol_s[k];
            if sol_s[..k].iter().any(|&x| x < -tol) || sol_q[..k].iter().any(|&x| x < -tol) {
                continue;
            }
            if (sol_q[k] - v).abs() > 1e-6 {
                continue;
            }
            // Off-support optimality for both players.
            let mut full_s = vec![0.0; cols];
            for (ci, &j) in cs.iter().enumerate() {
                full_s[j] = sol_s[ci].max(0.0);
            }
            let mut full_q = vec![0.0; n];
            for (ri, &i) in rows.iter().enumerate() {
                full_q[i] = sol_q[ri].max(0.0);
            }
            let row_payoffs = m.mat_vec(&full_s);
            if row_payoffs.iter().any(|&p| p < v - 1e-7) {
                continue;
            }
            let col_payoffs = m.mat_t_vec(&full_q);
            if col_payoffs.iter().any(|&p| p > v + 1e-7) {
                continue;
            }
            values.push(v);
        }
    }
    if values.is_empty() {
        return Err(VerifyError::BadInput("no basic equilibrium found".into()));
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(values[values.len() / 2])
}

fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot =
            (col..n).max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())?;
        if a[pivot][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f != 0.0 {
                for k in col..n {
                    a[row][k] -= f * a[col][k];
                }
                b[row] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in row + 1..n {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    Some(x)
}

/// `min_i max_j φ_ij`: the inner maximum over the simplex of a linear form is
/// attained at a vertex.
pub fn local_guarantee_value(phi: &Mat) -> f64 {
    (0..phi.rows)
        .map(|i| phi.row(i).iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b)))
        .fold(f64::INFINITY, f64::min)
}

// ---------------------------------------------------------------------------
// Planar global margin game
// ---------------------------------------------------------------------------

/// Certified value of the planar signed-measure margin game.
#[derive(Debug, Clone)]
pub struct GlobalMarginResult {
    /// Equilibrium value over the discretized atom set.
    pub value: f64,
    /// Certified discretization slack `2·(2π/N)`.
    pub grid_slack: f64,
    /// Certified solver gap at the returned strategies.
    pub solver_gap: f64,
    pub row_strategy: Vec<f64>,
}

/// Value of `max_ν min_i y_i ∫ max{0, x_iᵀθ}² dν(θ)` over signed measures of
/// mass at most 1 on the circle, reduced to `2N + 1` atoms (N directions × 2
/// signs plus a null action) and solved by multiplicative weights on
/// subgames inside a double-oracle loop with exact best responses over the
/// full atom set.
pub fn global_margin_2d(
    dataset: &[Example],
    n_grid: usize,
    tol: f64,
) -> Result<GlobalMarginResult, VerifyError> {
    if dataset.is_empty() {
        return Err(VerifyError::BadInput("empty dataset".into()));
    }
    if let Some(ex) = dataset.iter().find(|ex| ex.x.len() != 2) {
        return Err(VerifyError::UnsupportedDimension(ex.x.len()));
    }
    if let Some(ex) = dataset.iter().find(|ex| numeric::norm(&ex.x) > 1.0 + 1e-9) {
        return Err(VerifyError::BadInput(format!(
            "global margin game requires ‖x‖ ≤ 1, got {}",
            numeric::norm(&ex.x)
        )));
    }
    let n = dataset.len();
    let n_atoms = 2 * n_grid + 1;
    // Payoff of atom (θ_g, ±) to row i; the final column is the null action.
    let mut payoff = Mat::zeros(n, n_atoms);
    for g in 0..n_grid {
        let angle = std::f64::consts::TAU * g as f64 / n_grid as f64;
        let theta = [angle.cos(), angle.sin()];
        for (i, ex) in dataset.iter().enumerate() {
            let z = numeric::dot(&ex.x, &theta).max(0.0);
            let v = ex.y * z * z;
            payoff.set(i, 2 * g, v);
            payoff.set(i, 2 * g + 1, -v);
        }
    }

    // Double-oracle loop over rows and atoms.
    let mut row_set: Vec<usize> = vec![0];
    let mut atom_set: Vec<usize> = vec![n_atoms - 1];
    let mut result: Option<GlobalMarginResult> = None;
    for _outer in 0..600 {
        let sub = Mat::new(
            row_set.len(),
            atom_set.len(),
            row_set
                .iter()
                .flat_map(|&i| atom_set.iter().map(move |&j| (i, j)))
                .map(|(i, j)| payoff.at(i, j))
                .collect(),
        );
        let sub_res = game_value(&sub, (tol / 4.0).max(1e-9), 40_000_000)?;
        // Expand to full strategies.
        let mut q = vec![0.0; n];
        for (k, &i) in row_set.iter().enumerate() {
            q[i] = sub_res.row_strategy[k];
        }
        let mut s = vec![0.0; n_atoms];
        for (k, &j) in atom_set.iter().enumerate() {
            s[j] = sub_res.col_strategy[k];
        }
        // Exact best responses over the full sets certify the gap.
        let col_payoffs = payoff.mat_t_vec(&q);
        let (best_atom, best_atom_val) = col_payoffs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(j, v)| (j, *v))
            .unwrap();
        let row_payoffs = payoff.mat_vec(&s);
        let (best_row, best_row_val) = row_payoffs
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, v)| (i, *v))
            .unwrap();
        let gap = best_atom_val - best_row_val;
        let value = numeric::dot(&q, &row_payoffs);
        if result.as_ref().map(|r| gap < r.solver_gap).unwrap_or(true) {
            result = Some(GlobalMarginResult {
                value,
                grid_slack: 2.0 * std::f64::consts::TAU / n_grid as f64,
                solver_gap: gap,
                row_strategy: q.clone(),
            });
        }
        if gap <= tol {
            return Ok(result.unwrap());
        }
        let mut grew = false;
        if !atom_set.contains(&best_atom) {
            atom_set.push(best_atom);
            grew = true;
        }
        if !row_set.contains(&best_row) {
            row_set.push(best_row);
            grew = true;
        }
        if !grew {
            // Supports closed but the subgame solution was not tight enough;
            // tighten by re-solving, which game_value enforces via its own
            // tolerance. Bail out to avoid cycling.
            break;
        }
    }
    Err(VerifyError::NotConverged {
        iters: 600,
        best_gap: result.map(|r| r.solver_gap).unwrap_or(f64::INFINITY),
    })
}

// ---------------------------------------------------------------------------
// Verification reports
// ---------------------------------------------------------------------------

/// One named residual check; passes when `value ≤ tolerance`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckResult {
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl CheckResult {
    fn new(value: f64, tolerance: f64) -> Self {
        Self {
            value,
            tolerance,
            pass: value.is_finite() && value <= tolerance,
        }
    }
}

/// Named residuals with pass/fail flags.
#[derive(Debug, Clone, Default)]
pub struct VerifyReport {
    pub checks: BTreeMap<String, CheckResult>,
}

impl VerifyReport {
    fn insert(&mut self, name: &str, value: f64, tolerance: f64) {
        self.checks
            .insert(name.to_string(), CheckResult::new(value, tolerance));
    }

    pub fn all_pass(&self) -> bool {
        self.checks.values().all(|c| c.pass)
    }
}

fn layer_matrices(spec: &PredictorSpec, w: &ParamVec) -> Result<Vec<Mat>, VerifyError> {
    let PredictorSpec::DeepLinear { dims } = spec else {
        return Err(VerifyError::BadInput(
            "deep-linear verification needs a DeepLinear spec".into(),
        ));
    };
    let mut out = Vec::new();
    for (j, seg) in w.partition().iter().enumerate() {
        let rows = dims[j + 1];
        let cols = dims[j];
        if seg.len != rows * cols {
            return Err(VerifyError::BadInput(
                "partition does not match dims".into(),
            ));
        }
        out.push(Mat::new(rows, cols, w.segment(j).to_vec()));
    }
    Ok(out)
}

/// Check the rank-one layer limits and the max-margin alignment of a deep
/// linear run: per-layer `σ₂/σ₁`, the angle between the normalized product
/// and the polytope-distance direction, adjacent singular-vector chaining,
/// and (planar data only) the cross-check of the polytope oracle against an
/// angle grid search.
pub fn verify_deep_linear(
    spec: &PredictorSpec,
    traj: &Trajectory,
    dataset: &[Example],
    tol_rank: f64,
    tol_angle: f64,
) -> Result<VerifyReport, VerifyError> {
    let w = &traj.final_state.w;
    let layers = layer_matrices(spec, w)?;
    let mut report = VerifyReport::default();
    for (j, a) in layers.iter().enumerate() {
        let res = rank_one_residual(a)?;
        report.insert(&format!("rank_one_residual_layer{}", j + 1), res, tol_rank);
    }
    // Chained directions: the top right-singular vector of layer j matches
    // the top left-singular vector of layer j-1 (up to sign).
    for j in 1..layers.len() {
        let (_, _, v_right) = top_singular_triplet(&layers[j]).ok_or(VerifyError::ZeroMatrix)?;
        let (_, u_left, _) = top_singular_triplet(&layers[j - 1]).ok_or(VerifyError::ZeroMatrix)?;
        let c = numeric::dot(&v_right, &u_left).abs().clamp(0.0, 1.0);
        report.insert(
            &format!("chain_consistency_layer{}", j + 1),
            c.acos(),
            5.0 * tol_angle,
        );
    }
    // Product direction against the independent max-margin oracle.
    let mm = max_margin_linear(dataset, 1e-8)?;
    let mut product = layers.last().unwrap().clone();
    for a in layers.iter().rev().skip(1) {
        product = product.mat_mul(a);
    }
    let pn = product.frob_norm();
    if pn == 0.0 {
        return Err(VerifyError::ZeroMatrix);
    }
    let u_prod: Vec<f64> = product.data.iter().map(|v| v / pn).collect();
    let cosine = numeric::dot(&u_prod, &mm.direction).clamp(-1.0, 1.0);
    report.insert("product_angle", cosine.acos(), tol_angle);
    if dataset.first().map(|e| e.x.len()) == Some(2) {
        let oracle = margin_grid_search_2d(dataset, 1_000_000)?;
        report.insert("gilbert_grid_cross_check", (mm.margin - oracle).abs(), 1e-6);
    }
    Ok(report)
}

/// Tolerances for the 2-homogeneous verification.
#[derive(Debug, Clone)]
pub struct TwoHomoTols {
    /// Local guarantee residual.
    pub local: f64,
    /// |Σ q − 1| at the final record.
    pub dual_sum: f64,
    /// Dual mass allowed on examples away from the minimum margin.
    pub off_support: f64,
    /// Share threshold above which a node must attain the game value.
    pub support_share_threshold: f64,
    /// Relative deviation allowed in `Σ_i q_i φ_ij(θ̄_j)` for supported nodes.
    pub support_value_rel: f64,
    /// Extra slack in the global-guarantee comparison.
    pub global_extra: f64,
    /// Solver tolerance for the global game.
    pub global_tol: f64,
}

impl Default for TwoHomoTols {
    fn default() -> Self {
        Self {
            local: 1e-2,
            dual_sum: 1e-3,
            off_support: 1e-2,
            support_share_threshold: 1e-2,
            support_value_rel: 1e-2,
            global_extra: 1e-2,
            global_tol: 1e-4,
        }
    }
}

/// Check the local and global margin guarantees of a squared-ReLU run.
///
/// Covering is measured at the first recorded checkpoint; the global part
/// requires planar inputs with `‖x‖ ≤ 1` and is skipped otherwise.
pub fn verify_two_homo(
    spec: &PredictorSpec,
    kind: LossKind,
    traj: &Trajectory,
    dataset: &[Example],
    cover_grid: usize,
    tols: &TwoHomoTols,
) -> Result<VerifyReport, VerifyError> {
    let PredictorSpec::SquaredRelu { width, .. } = spec else {
        return Err(VerifyError::BadInput(
            "two-homo verification needs a SquaredRelu spec".into(),
        ));
    };
    let first = traj
        .records
        .first()
        .ok_or_else(|| VerifyError::BadInput("trajectory has no records".into()))?;
    let last = traj.records.last().unwrap();
    let mut report = VerifyReport::default();

    // (i) Local guarantee: final minimum normalized margin against the
    // row-max value of the node-feature matrix at the final directions.
    let theta_bar = &last.node_dirs;
    let n = dataset.len();
    let mut phi = Mat::zeros(n, *width);
    for (i, ex) in dataset.iter().enumerate() {
        for j in 0..*width {
            phi.set(i, j, node_features(ex, &theta_bar[j], j + 1));
        }
    }
    let local = local_guarantee_value(&phi);
    let final_min_margin = last
        .margins_norm
        .iter()
        .fold(f64::INFINITY, |a, &b| a.min(b));
    report.insert(
        "local_guarantee_residual",
        (final_min_margin - local).abs(),
        tols.local,
    );

    // (ii) Shares form a probability vector for L = 2.
    let share_sum = numeric::sum(last.shares.iter().copied());
    report.insert("shares_sum_residual", (share_sum - 1.0).abs(), 1e-6);

    // (iii) Supported nodes attain the limiting value a (estimated by the
    // final normalized smoothed margin).
    let a_est = last.alpha_norm;
    let mut support_dev = 0.0f64;
    for j in 0..*width {
        if last.shares[j] > tols.support_share_threshold {
            let v = numeric::sum(
                dataset
                    .iter()
                    .enumerate()
                    .map(|(i, _)| last.duals[i] * phi.at(i, j)),
            );
            support_dev = support_dev.max((v - a_est).abs());
        }
    }
    report.insert(
        "support_value_residual",
        support_dev / a_est.abs().max(1e-12),
        tols.support_value_rel,
    );

    // Dual optimality at the final record.
    let dual_sum = numeric::sum(last.duals.iter().copied());
    report.insert("dual_sum_residual", (dual_sum - 1.0).abs(), tols.dual_sum);
    let margin_cut = final_min_margin + 0.05 * a_est;
    let off_mass = numeric::sum(
        last.margins_norm
            .iter()
            .zip(&last.duals)
            .filter(|(p, _)| **p > margin_cut)
            .map(|(_, q)| *q),
    );
    report.insert("dual_off_support_mass", off_mass, tols.off_support);
    let _ = kind;

    // (iv) Covering at the first checkpoint, drift against final directions.
    let signs: Vec<f64> = (1..=*width).map(squared_relu_sign).collect();
    let planar = spec.input_dim() == 2;
    if planar {
        let cover = metrics::covering_check(&first.node_dirs, &signs, cover_grid, Some(theta_bar))?;
        report.insert("cover_epsilon", cover.epsilon_cover, 2.0 + cover.grid_slack);
        report.insert(
            "cover_drift",
            cover.epsilon_drift.unwrap_or(f64::INFINITY),
            2.0,
        );

        // (v) Global guarantee: final margin within 4ε plus certified slack
        // of the signed-measure game value.
        let global = global_margin_2d(dataset, cover_grid, tols.global_tol)?;
        let slack = global.grid_slack + global.solver_gap + tols.global_extra;
        let deficit = global.value - 4.0 * cover.epsilon_cover - final_min_margin;
        report.insert("global_margin_deficit", deficit, slack);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(x: &[f64], y: f64) -> Example {
        Example::new(x.to_vec(), y).unwrap()
    }

    #[test]
    fn max_margin_symmetric_pair() {
        let data = vec![ex(&[1.0, 0.0], 1.0), ex(&[-1.0, 0.0], -1.0)];
        let r = max_margin_linear(&data, 1e-10).unwrap();
        assert!((r.direction[0] - 1.0).abs() < 1e-9);
        assert!((r.margin - 1.0).abs() < 1e-9);
    }

    #[test]
    fn max_margin_single_point() {
        let data = vec![ex(&[0.0, 2.0], 1.0)];
        let r = max_margin_linear(&data, 1e-10).unwrap();
        assert!((r.direction[1] - 1.0).abs() < 1e-9);
        assert!((r.margin - 2.0).abs() < 1e-9);
    }

    #[test]
    fn max_margin_three_points_vs_grid() {
        let data = vec![
            ex(&[1.0, 1.0], 1.0),
            ex(&[1.0, -1.0], 1.0),
            ex(&[-1.0, 0.0], -1.0),
        ];
        let r = max_margin_linear(&data, 1e-10).unwrap();
        assert!((r.direction[0] - 1.0).abs() < 1e-8);
        assert!((r.margin - 1.0).abs() < 1e-9);
        let oracle = margin_grid_search_2d(&data, 1_000_000).unwrap();
        assert!((r.margin - oracle).abs() <= 1e-6);
    }

    #[test]
    fn max_margin_inseparable() {
        let data = vec![ex(&[1.0, 0.0], 1.0), ex(&[1.0, 0.0], -1.0)];
        assert!(matches!(
            max_margin_linear(&data, 1e-8),
            Err(VerifyError::NotSeparable)
        ));
    }

    #[test]
    fn rank_one_examples() {
        // Outer product u vᵀ.
        let u = [1.0, -2.0, 0.5];
        let v = [0.3, 0.7];
        let mut m = Mat::zeros(3, 2);
        for r in 0..3 {
            for c in 0..2 {
                m.set(r, c, u[r] * v[c]);
            }
        }
        assert!(rank_one_residual(&m).unwrap() <= 1e-10);

        let eye = Mat::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
        assert!((rank_one_residual(&eye).unwrap() - 1.0).abs() < 1e-10);

        let d = Mat::new(2, 2, vec![3.0, 0.0, 0.0, 1.0]);
        assert!((rank_one_residual(&d).unwrap() - 1.0 / 3.0).abs() < 1e-10);

        assert!(matches!(
            rank_one_residual(&Mat::zeros(2, 2)),
            Err(VerifyError::ZeroMatrix)
        ));
    }

    #[test]
    fn game_matching_pennies_and_constant() {
        let eye = Mat::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
        let r = game_value(&eye, 1e-6, 10_000_000).unwrap();
        assert!((r.value - 0.5).abs() < 1e-5);
        assert!((r.row_strategy[0] - 0.5).abs() < 1e-3);
        assert!((r.col_strategy[0] - 0.5).abs() < 1e-3);
        assert!(r.gap <= 1e-6);

        let c = Mat::new(2, 3, vec![0.7; 6]);
        let r = game_value(&c, 1e-9, 1_000_000).unwrap();
        assert!((r.value - 0.7).abs() < 1e-9);
    }

    #[test]
    fn game_vs_support_enumeration() {
        use rand::prelude::*;
        use rand_chacha::ChaCha8Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for trial in 0..20 {
            let n = rng.random_range(2..=4);
            let m = rng.random_range(2..=4);
            let mat = Mat::new(
                n,
                m,
                (0..n * m).map(|_| rng.random_range(0.0..1.0)).collect(),
            );
            let exact = support_enumeration_value(&mat).unwrap();
            let approx = game_value(&mat, 1e-6, 20_000_000).unwrap();
            assert!(
                (exact - approx.value).abs() <= 1e-4,
                "trial {trial}: exact {exact} vs approx {}",
                approx.value
            );
        }
    }

    #[test]
    fn local_guarantee_examples() {
        let phi = Mat::new(2, 2, vec![1.0, 2.0, 3.0, 0.0]);
        assert_eq!(local_guarantee_value(&phi), 2.0);
        let c = Mat::new(3, 2, vec![0.4; 6]);
        assert_eq!(local_guarantee_value(&c), 0.4);
    }

    #[test]
    fn local_guarantee_dominates_game_value() {
        use rand::prelude::*;
        use rand_chacha::ChaCha8Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let mat = Mat::new(3, 3, (0..9).map(|_| rng.random_range(-1.0..1.0)).collect());
            let g = game_value(&mat, 1e-7, 20_000_000).unwrap();
            assert!(local_guarantee_value(&mat) >= g.value - g.gap - 1e-6);
        }
    }

    #[test]
    fn global_margin_single_and_antipodal() {
        // A single aligned example: one atom at θ = x saturates the mass.
        let data = vec![ex(&[1.0, 0.0], 1.0)];
        let g = global_margin_2d(&data, 512, 1e-5).unwrap();
        assert!(
            (g.value - 1.0).abs() <= g.grid_slack + 1e-4,
            "value {}",
            g.value
        );

        // Two antipodal positives: half mass on each of ±e₁ gives 1/2.
        let data = vec![ex(&[1.0, 0.0], 1.0), ex(&[-1.0, 0.0], 1.0)];
        let g = global_margin_2d(&data, 512, 1e-5).unwrap();
        assert!(
            (g.value - 0.5).abs() <= g.grid_slack + 1e-4,
            "value {}",
            g.value
        );
    }

    #[test]
    fn mat_helpers() {
        let a = Mat::new(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(a.mat_vec(&[1.0, 0.0, -1.0]), vec![-2.0, -2.0]);
        assert_eq!(a.transpose().at(2, 1), 6.0);
        let b = Mat::new(3, 1, vec![1.0, 1.0, 1.0]);
        assert_eq!(a.mat_mul(&b).data, vec![6.0, 15.0]);
    }
}
