//! Positively homogeneous predictors with hand-coded reverse-mode gradients.
//!
//! Four architectures: the shallow squared-ReLU net with alternating fixed
//! signs, deep linear chains, bias-free ReLU MLPs with optional 1-D
//! max-pooling, and the frozen-activation linear baseline. Gradients follow a
//! fixed selection at nondifferentiable points: ReLU and squared-ReLU
//! derivatives are 0 at 0, and max-pooling ties resolve to the lowest index.
//! Evaluations landing within `1e-12` of a kink are logged at debug level.

use thiserror::Error;

use crate::numeric;
use crate::params::{ParamVec, Segment};

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("shape mismatch: expected {expected} {what}, got {got}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid architecture: {0}")]
    BadSpec(String),
}

/// Labeled example with `y ∈ {-1, +1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub x: Vec<f64>,
    pub y: f64,
}

impl Example {
    pub fn new(x: Vec<f64>, y: f64) -> Result<Self, ModelError> {
        if y != 1.0 && y != -1.0 {
            return Err(ModelError::BadSpec(format!("label must be ±1, got {y}")));
        }
        Ok(Self { x, y })
    }
}

/// Frozen data of the NTK baseline: base directions and signs captured at
/// construction; only the outer linear coefficients are trained.
#[derive(Debug, Clone, PartialEq)]
pub struct NtkBase {
    pub input_dim: usize,
    /// `width × input_dim`, row-major.
    pub weights: Vec<f64>,
    /// `±1` per node.
    pub signs: Vec<f64>,
}

/// Architecture descriptor; all variants are `L`-positively homogeneous in
/// the trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum PredictorSpec {
    /// `Φ(x; W) = Σ_j (-1)^j max{0, w_j^T x}^2` with nodes indexed from 1.
    SquaredRelu { input_dim: usize, width: usize },
    /// `Φ(x; W) = A_L ⋯ A_1 x`; `dims = [d_0, …, d_L]` with `d_L = 1`.
    DeepLinear { dims: Vec<usize> },
    /// Bias-free ReLU MLP; `pools[j]` is the window of the 1-D max-pool after
    /// the ReLU of hidden layer `j+1` (1 disables pooling).
    ReluMlp { dims: Vec<usize>, pools: Vec<usize> },
    /// `Φ(x; V) = Σ_j s_j ⟨v_j, x⟩ max{0, ⟨w_j, x⟩}` with frozen `w, s`.
    NtkFrozen { base: NtkBase },
}

/// Fixed sign of squared-ReLU node `j` (1-based): `(-1)^j`.
pub fn squared_relu_sign(j: usize) -> f64 {
    if j % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

const KINK_EPS: f64 = 1e-12;

fn note_kink(arch: &'static str, pre: f64) {
    if pre.abs() <= KINK_EPS {
        log::debug!("{arch}: evaluation within {KINK_EPS:e} of a kink (pre-activation {pre:e})");
    }
}

impl PredictorSpec {
    pub fn validate(&self) -> Result<(), ModelError> {
        match self {
            PredictorSpec::SquaredRelu { input_dim, width } => {
                if *input_dim == 0 || *width == 0 {
                    return Err(ModelError::BadSpec("zero input_dim or width".into()));
                }
            }
            PredictorSpec::DeepLinear { dims } => {
                if dims.len() < 2 || dims.contains(&0) || *dims.last().unwrap() != 1 {
                    return Err(ModelError::BadSpec(format!(
                        "deep linear dims must be [d_0, …, d_L] with d_L = 1, got {dims:?}"
                    )));
                }
            }
            PredictorSpec::ReluMlp { dims, pools } => {
                if dims.len() < 2 || dims.contains(&0) || *dims.last().unwrap() != 1 {
                    return Err(ModelError::BadSpec(format!(
                        "relu mlp dims must be [d_0, …, d_L] with d_L = 1, got {dims:?}"
                    )));
                }
                if pools.len() != dims.len() - 2 {
                    return Err(ModelError::BadSpec(format!(
                        "expected {} pool windows, got {}",
                        dims.len() - 2,
                        pools.len()
                    )));
                }
                for (j, &p) in pools.iter().enumerate() {
                    if p == 0 || dims[j + 1] % p != 0 {
                        return Err(ModelError::BadSpec(format!(
                            "pool window {p} does not divide layer width {}",
                            dims[j + 1]
                        )));
                    }
                }
            }
            PredictorSpec::NtkFrozen { base } => {
                if base.input_dim == 0 || base.signs.is_empty() {
                    return Err(ModelError::BadSpec("empty NTK base".into()));
                }
                if base.weights.len() != base.signs.len() * base.input_dim {
                    return Err(ModelError::BadSpec(
                        "NTK base weights/signs length mismatch".into(),
                    ));
                }
                if base.signs.iter().any(|s| s.abs() != 1.0) {
                    return Err(ModelError::BadSpec("NTK signs must be ±1".into()));
                }
            }
        }
        Ok(())
    }

    /// Homogeneity degree `L`.
    pub fn degree(&self) -> f64 {
        match self {
            PredictorSpec::SquaredRelu { .. } => 2.0,
            PredictorSpec::DeepLinear { dims } => (dims.len() - 1) as f64,
            PredictorSpec::ReluMlp { dims, .. } => (dims.len() - 1) as f64,
            PredictorSpec::NtkFrozen { .. } => 1.0,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            PredictorSpec::SquaredRelu { input_dim, .. } => *input_dim,
            PredictorSpec::DeepLinear { dims } | PredictorSpec::ReluMlp { dims, .. } => dims[0],
            PredictorSpec::NtkFrozen { base } => base.input_dim,
        }
    }

    /// Per-layer `(rows, cols)` for the matrix architectures, taking pooling
    /// into account for the MLP.
    fn layer_shapes(&self) -> Vec<(usize, usize)> {
        match self {
            PredictorSpec::DeepLinear { dims } => {
                (1..dims.len()).map(|j| (dims[j], dims[j - 1])).collect()
            }
            PredictorSpec::ReluMlp { dims, pools } => (1..dims.len())
                .map(|j| {
                    let cols = if j == 1 {
                        dims[0]
                    } else {
                        dims[j - 1] / pools[j - 2]
                    };
                    (dims[j], cols)
                })
                .collect(),
            _ => Vec::new(),
        }
    }

    pub fn param_len(&self) -> usize {
        match self {
            PredictorSpec::SquaredRelu { input_dim, width } => input_dim * width,
            PredictorSpec::DeepLinear { .. } | PredictorSpec::ReluMlp { .. } => {
                self.layer_shapes().iter().map(|(r, c)| r * c).sum()
            }
            PredictorSpec::NtkFrozen { base } => base.input_dim * base.signs.len(),
        }
    }

    /// Natural parameter partition: per-node rows for the shallow nets,
    /// per-layer matrices for the deep ones.
    pub fn partition(&self) -> Vec<Segment> {
        match self {
            PredictorSpec::SquaredRelu { input_dim, width } => (0..*width)
                .map(|j| Segment::new(format!("node{}", j + 1), j * input_dim, *input_dim))
                .collect(),
            PredictorSpec::NtkFrozen { base } => (0..base.signs.len())
                .map(|j| Segment::new(format!("node{}", j + 1), j * base.input_dim, base.input_dim))
                .collect(),
            PredictorSpec::DeepLinear { .. } | PredictorSpec::ReluMlp { .. } => {
                let mut out = Vec::new();
                let mut offset = 0;
                for (j, (r, c)) in self.layer_shapes().iter().enumerate() {
                    out.push(Segment::new(format!("layer{}", j + 1), offset, r * c));
                    offset += r * c;
                }
                out
            }
        }
    }

    /// Zero parameter vector with the natural partition.
    pub fn zero_params(&self) -> ParamVec {
        ParamVec::new(vec![0.0; self.param_len()], self.partition())
            .expect("zero vector always satisfies the partition")
    }

    /// Parameter vector from raw data with the natural partition.
    pub fn params_from(&self, data: Vec<f64>) -> Result<ParamVec, ModelError> {
        if data.len() != self.param_len() {
            return Err(ModelError::ShapeMismatch {
                what: "parameters",
                expected: self.param_len(),
                got: data.len(),
            });
        }
        ParamVec::new(data, self.partition())
            .map_err(|e| ModelError::BadSpec(format!("invalid parameters: {e}")))
    }

    fn check_shapes(&self, w: &ParamVec, x: &[f64]) -> Result<(), ModelError> {
        if w.len() != self.param_len() {
            return Err(ModelError::ShapeMismatch {
                what: "parameters",
                expected: self.param_len(),
                got: w.len(),
            });
        }
        if x.len() != self.input_dim() {
            return Err(ModelError::ShapeMismatch {
                what: "input coordinates",
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// `Φ(x; W)`.
    pub fn forward(&self, w: &ParamVec, x: &[f64]) -> Result<f64, ModelError> {
        self.check_shapes(w, x)?;
        let data = w.data();
        Ok(match self {
            PredictorSpec::SquaredRelu { input_dim, width } => {
                let mut acc = numeric::CompensatedSum::new();
                for j in 0..*width {
                    let row = &data[j * input_dim..(j + 1) * input_dim];
                    let z = numeric::dot(row, x);
                    note_kink("squared_relu", z);
                    let r = z.max(0.0);
                    acc.add(squared_relu_sign(j + 1) * r * r);
                }
                acc.value()
            }
            PredictorSpec::DeepLinear { .. } => {
                let (acts, _) = self.deep_forward(data, x);
                acts.last().unwrap()[0]
            }
            PredictorSpec::ReluMlp { .. } => {
                let (acts, _) = self.deep_forward(data, x);
                acts.last().unwrap()[0]
            }
            PredictorSpec::NtkFrozen { base } => {
                let d = base.input_dim;
                let mut acc = numeric::CompensatedSum::new();
                for (j, s) in base.signs.iter().enumerate() {
                    let wj = &base.weights[j * d..(j + 1) * d];
                    let vj = &data[j * d..(j + 1) * d];
                    let z = numeric::dot(wj, x);
                    note_kink("ntk_frozen", z);
                    acc.add(s * numeric::dot(vj, x) * z.max(0.0));
                }
                acc.value()
            }
        })
    }

    /// Margin `p(W) = y · Φ(x; W)`.
    pub fn margin(&self, w: &ParamVec, ex: &Example) -> Result<f64, ModelError> {
        Ok(ex.y * self.forward(w, &ex.x)?)
    }

    /// `∇_W p(W)` under the fixed kink convention.
    pub fn grad_margin(&self, w: &ParamVec, ex: &Example) -> Result<Vec<f64>, ModelError> {
        self.check_shapes(w, &ex.x)?;
        let data = w.data();
        let x = &ex.x;
        let mut grad = vec![0.0; w.len()];
        match self {
            PredictorSpec::SquaredRelu { input_dim, width } => {
                for j in 0..*width {
                    let row = &data[j * input_dim..(j + 1) * input_dim];
                    let z = numeric::dot(row, x);
                    note_kink("squared_relu", z);
                    if z > 0.0 {
                        let coef = ex.y * squared_relu_sign(j + 1) * 2.0 * z;
                        for (g, xi) in grad[j * input_dim..(j + 1) * input_dim]
                            .iter_mut()
                            .zip(x.iter())
                        {
                            *g = coef * xi;
                        }
                    }
                }
            }
            PredictorSpec::DeepLinear { .. } | PredictorSpec::ReluMlp { .. } => {
                self.deep_backward(data, x, ex.y, &mut grad);
            }
            PredictorSpec::NtkFrozen { base } => {
                let d = base.input_dim;
                for (j, s) in base.signs.iter().enumerate() {
                    let wj = &base.weights[j * d..(j + 1) * d];
                    let z = numeric::dot(wj, x);
                    note_kink("ntk_frozen", z);
                    if z > 0.0 {
                        let coef = ex.y * s * z;
                        for (g, xi) in grad[j * d..(j + 1) * d].iter_mut().zip(x.iter()) {
                            *g = coef * xi;
                        }
                    }
                }
            }
        }
        Ok(grad)
    }

    /// Forward pass for the matrix architectures. Returns the per-layer
    /// activations entering each layer (`acts[0] = x`, `acts[L]` the scalar
    /// output) and the pooling argmax indices of each hidden layer.
    fn deep_forward(&self, data: &[f64], x: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<usize>>) {
        let shapes = self.layer_shapes();
        let n_layers = shapes.len();
        let pools: &[usize] = match self {
            PredictorSpec::ReluMlp { pools, .. } => pools,
            _ => &[],
        };
        let relu = matches!(self, PredictorSpec::ReluMlp { .. });
        let mut acts: Vec<Vec<f64>> = vec![x.to_vec()];
        let mut pool_idx: Vec<Vec<usize>> = Vec::new();
        let mut offset = 0;
        for (j, &(rows, cols)) in shapes.iter().enumerate() {
            let mat = &data[offset..offset + rows * cols];
            offset += rows * cols;
            let input = acts.last().unwrap();
            let mut out: Vec<f64> = (0..rows)
                .map(|r| numeric::dot(&mat[r * cols..(r + 1) * cols], input))
                .collect();
            if relu && j + 1 < n_layers {
                for z in &mut out {
                    note_kink("relu_mlp", *z);
                    *z = z.max(0.0);
                }
                let window = pools[j];
                if window > 1 {
                    let mut pooled = Vec::with_capacity(out.len() / window);
                    let mut idx = Vec::with_capacity(out.len() / window);
                    for chunk_start in (0..out.len()).step_by(window) {
                        let chunk = &out[chunk_start..chunk_start + window];
                        // Strict comparison keeps the lowest index on ties.
                        let mut best = 0;
                        for (i, v) in chunk.iter().enumerate() {
                            if *v > chunk[best] {
                                best = i;
                            }
                        }
                        pooled.push(chunk[best]);
                        idx.push(chunk_start + best);
                    }
                    out = pooled;
                    pool_idx.push(idx);
                } else {
                    pool_idx.push(Vec::new());
                }
            }
            acts.push(out);
        }
        (acts, pool_idx)
    }

    fn deep_backward(&self, data: &[f64], x: &[f64], y: f64, grad: &mut [f64]) {
        let shapes = self.layer_shapes();
        let n_layers = shapes.len();
        let relu = matches!(self, PredictorSpec::ReluMlp { .. });
        let pools: &[usize] = match self {
            PredictorSpec::ReluMlp { pools, .. } => pools,
            _ => &[],
        };
        // Re-run the forward pass keeping pre-activations for the masks.
        let mut pre: Vec<Vec<f64>> = Vec::with_capacity(n_layers);
        let mut inputs: Vec<Vec<f64>> = vec![x.to_vec()];
        let mut pool_idx: Vec<Vec<usize>> = Vec::new();
        let mut offsets = Vec::with_capacity(n_layers);
        let mut offset = 0;
        for (j, &(rows, cols)) in shapes.iter().enumerate() {
            offsets.push(offset);
            let mat = &data[offset..offset + rows * cols];
            offset += rows * cols;
            let input = inputs.last().unwrap();
            let raw: Vec<f64> = (0..rows)
                .map(|r| numeric::dot(&mat[r * cols..(r + 1) * cols], input))
                .collect();
            let mut out = raw.clone();
            pre.push(raw);
            if relu && j + 1 < n_layers {
                for z in &mut out {
                    *z = z.max(0.0);
                }
                let window = pools[j];
                if window > 1 {
                    let mut pooled = Vec::with_capacity(out.len() / window);
                    let mut idx = Vec::with_capacity(out.len() / window);
                    for chunk_start in (0..out.len()).step_by(window) {
                        let chunk = &out[chunk_start..chunk_start + window];
                        let mut best = 0;
                        for (i, v) in chunk.iter().enumerate() {
                            if *v > chunk[best] {
                                best = i;
                            }
                        }
                        pooled.push(chunk[best]);
                        idx.push(chunk_start + best);
                    }
                    out = pooled;
                    pool_idx.push(idx);
                } else {
                    pool_idx.push(Vec::new());
                }
            }
            inputs.push(out);
        }
        // Backward: d(margin)/d(output) = y.
        let mut g_out = vec![y];
        for j in (0..n_layers).rev() {
            let (rows, cols) = shapes[j];
            let mat = &data[offsets[j]..offsets[j] + rows * cols];
            let input = &inputs[j];
            let g_mat = &mut grad[offsets[j]..offsets[j] + rows * cols];
            for r in 0..rows {
                let gr = g_out[r];
                if gr != 0.0 {
                    for c in 0..cols {
                        g_mat[r * cols + c] = gr * input[c];
                    }
                }
            }
            if j == 0 {
                break;
            }
            // Gradient w.r.t. this layer's (pooled) input.
            let mut g_in = vec![0.0; cols];
            for r in 0..rows {
                let gr = g_out[r];
                if gr != 0.0 {
                    for c in 0..cols {
                        g_in[c] += gr * mat[r * cols + c];
                    }
                }
            }
            if relu {
                let prev_width = pre[j - 1].len();
                let window = pools[j - 1];
                let mut g_act = vec![0.0; prev_width];
                if window > 1 {
                    for (slot, &src) in pool_idx[j - 1].iter().enumerate() {
                        g_act[src] = g_in[slot];
                    }
                } else {
                    g_act.copy_from_slice(&g_in);
                }
                for (g, &z) in g_act.iter_mut().zip(&pre[j - 1]) {
                    if z <= 0.0 {
                        *g = 0.0;
                    }
                }
                g_out = g_act;
            } else {
                g_out = g_in;
            }
        }
    }
}

impl PredictorSpec {
    /// Distance from `(W, x)` to the nearest nondifferentiability: the
    /// smallest pre-activation magnitude, and for pooled layers the smallest
    /// top-two gap within a window. `+inf` for the smooth architectures.
    pub fn min_kink_distance(&self, w: &ParamVec, x: &[f64]) -> Result<f64, ModelError> {
        self.check_shapes(w, x)?;
        let data = w.data();
        Ok(match self {
            PredictorSpec::SquaredRelu { input_dim, width } => (0..*width)
                .map(|j| numeric::dot(&data[j * input_dim..(j + 1) * input_dim], x).abs())
                .fold(f64::INFINITY, f64::min),
            PredictorSpec::NtkFrozen { base } => {
                let d = base.input_dim;
                (0..base.signs.len())
                    .map(|j| numeric::dot(&base.weights[j * d..(j + 1) * d], x).abs())
                    .fold(f64::INFINITY, f64::min)
            }
            PredictorSpec::DeepLinear { .. } => f64::INFINITY,
            PredictorSpec::ReluMlp { pools, .. } => {
                let shapes = self.layer_shapes();
                let n_layers = shapes.len();
                let mut dist = f64::INFINITY;
                let mut input = x.to_vec();
                let mut offset = 0;
                for (j, &(rows, cols)) in shapes.iter().enumerate() {
                    let mat = &data[offset..offset + rows * cols];
                    offset += rows * cols;
                    let raw: Vec<f64> = (0..rows)
                        .map(|r| numeric::dot(&mat[r * cols..(r + 1) * cols], &input))
                        .collect();
                    if j + 1 == n_layers {
                        break;
                    }
                    for z in &raw {
                        dist = dist.min(z.abs());
                    }
                    let mut act: Vec<f64> = raw.iter().map(|z| z.max(0.0)).collect();
                    let window = pools[j];
                    if window > 1 {
                        let mut pooled = Vec::with_capacity(act.len() / window);
                        for chunk in act.chunks(window) {
                            let mut best = 0;
                            let mut second = f64::NEG_INFINITY;
                            for (i, v) in chunk.iter().enumerate() {
                                if *v > chunk[best] {
                                    second = chunk[best];
                                    best = i;
                                } else if i != best && *v > second {
                                    second = *v;
                                }
                            }
                            if second > f64::NEG_INFINITY {
                                dist = dist.min(chunk[best] - second);
                            }
                            pooled.push(chunk[best]);
                        }
                        act = pooled;
                    }
                    input = act;
                }
                dist
            }
        })
    }
}

/// Node feature `φ_ij(θ) = y_i (-1)^j max{0, θ^T x_i}^2` for a unit (or zero)
/// direction `θ` and 1-based node index `j`.
pub fn node_features(ex: &Example, theta: &[f64], j: usize) -> f64 {
    let z = numeric::dot(theta, &ex.x).max(0.0);
    ex.y * squared_relu_sign(j) * z * z
}
