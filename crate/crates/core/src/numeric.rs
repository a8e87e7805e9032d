//! Compensated floating-point primitives shared by the rest of the crate.
//!
//! Trajectories sweep `‖W‖` and loss values across many orders of magnitude,
//! so every accumulation that feeds a monotonicity or residual check goes
//! through Neumaier summation, and norms are rescaled by the largest entry to
//! avoid spurious under/overflow. An optional double-double accumulator backs
//! the extended-precision mode of the flow driver.

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    correction: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.correction += (self.sum - t) + x;
        } else {
            self.correction += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.correction
    }
}

/// Compensated sum of an iterator of terms.
pub fn sum<I: IntoIterator<Item = f64>>(xs: I) -> f64 {
    let mut acc = CompensatedSum::new();
    for x in xs {
        acc.add(x);
    }
    acc.value()
}

/// Compensated inner product.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = CompensatedSum::new();
    for (x, y) in a.iter().zip(b) {
        acc.add(x * y);
    }
    acc.value()
}

/// Euclidean norm, rescaled by the largest magnitude so that vectors with
/// entries near the under/overflow thresholds still produce a usable value.
pub fn norm(v: &[f64]) -> f64 {
    let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if scale == 0.0 || !scale.is_finite() {
        return if scale == 0.0 { 0.0 } else { f64::INFINITY };
    }
    let mut acc = CompensatedSum::new();
    for x in v {
        let r = x / scale;
        acc.add(r * r);
    }
    scale * acc.value().sqrt()
}

/// `ln Σ exp(v_i)` with max-shift and compensated accumulation.
///
/// Returns `-inf` for an empty slice.
pub fn logsumexp(v: &[f64]) -> f64 {
    let m = v.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let mut acc = CompensatedSum::new();
    for x in v {
        acc.add((x - m).exp());
    }
    m + acc.value().ln()
}

/// `ln(1 + e^z)`, stable for large arguments of either sign.
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Unevaluated double-double value `hi + lo` with `|lo| <= ulp(hi)/2`.
///
/// Only addition of plain `f64` terms is needed: the extended-precision mode
/// uses this as an accumulator, the summands themselves remain doubles.
#[derive(Debug, Clone, Copy, Default)]
pub struct DoubleDouble {
    hi: f64,
    lo: f64,
}

impl DoubleDouble {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        // Knuth two-sum of (hi, x), then fold the previous low part in.
        let s = self.hi + x;
        let bb = s - self.hi;
        let err = (self.hi - (s - bb)) + (x - bb);
        self.hi = s;
        self.lo += err;
        // Renormalize.
        let t = self.hi + self.lo;
        self.lo -= t - self.hi;
        self.hi = t;
    }

    pub fn value(&self) -> f64 {
        self.hi + self.lo
    }
}

/// `ln Σ exp(v_i)` with the double-double accumulator.
pub fn logsumexp_dd(v: &[f64]) -> f64 {
    let m = v.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let mut acc = DoubleDouble::zero();
    for x in v {
        acc.add((x - m).exp());
    }
    m + acc.value().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_recovers_cancellation() {
        // 1 + 1e-16 repeated: naive summation drops every small term.
        let mut acc = CompensatedSum::new();
        acc.add(1.0);
        for _ in 0..1000 {
            acc.add(1e-16);
        }
        assert!((acc.value() - (1.0 + 1000.0 * 1e-16)).abs() < 1e-18);
    }

    #[test]
    fn norm_handles_extreme_scales() {
        assert_eq!(norm(&[0.0, 0.0]), 0.0);
        assert!((norm(&[3.0, 4.0]) - 5.0).abs() < 1e-15);
        let tiny = norm(&[1e-200, 1e-200]);
        assert!((tiny - 1e-200 * 2.0f64.sqrt()).abs() < 1e-214);
        let huge = norm(&[1e200, 1e200]);
        assert!((huge / (1e200 * 2.0f64.sqrt()) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn logsumexp_matches_naive_at_moderate_scale() {
        let v = [0.3f64, -1.2, 2.0];
        let naive = v.iter().map(|x| x.exp()).sum::<f64>().ln();
        assert!((logsumexp(&v) - naive).abs() < 1e-14);
        // Far below the underflow threshold of a naive evaluation.
        let shifted: Vec<f64> = v.iter().map(|x| x - 800.0).collect();
        assert!((logsumexp(&shifted) - (naive - 800.0)).abs() < 1e-12);
    }

    #[test]
    fn softplus_stable_both_tails() {
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-16);
        assert!((softplus(-800.0)).abs() < 1e-300);
        assert!((softplus(800.0) - 800.0).abs() < 1e-12);
    }

    #[test]
    fn double_double_sums_exactly() {
        let mut dd = DoubleDouble::zero();
        dd.add(1e16);
        dd.add(1.0);
        dd.add(-1e16);
        assert_eq!(dd.value(), 1.0);
    }
}
