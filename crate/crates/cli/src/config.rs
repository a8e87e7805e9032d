//! Experiment configuration: JSON documents that round-trip losslessly and
//! map onto the core model, loss, and flow types.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use homoflow_core::flow::FlowConfig;
use homoflow_core::losses::LossKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelConfig {
    SquaredRelu {
        input_dim: usize,
        width: usize,
    },
    DeepLinear {
        dims: Vec<usize>,
    },
    ReluMlp {
        dims: Vec<usize>,
        #[serde(default)]
        pools: Vec<usize>,
    },
    /// Frozen-activation linear baseline; the base directions and signs are
    /// drawn once from `base_seed` (matching a squared-ReLU run's
    /// initialization when seeds and scales agree).
    NtkFrozen {
        input_dim: usize,
        width: usize,
        base_seed: u64,
        base_scale: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossConfig {
    Exp,
    Logistic,
}

impl From<LossConfig> for LossKind {
    fn from(l: LossConfig) -> Self {
        match l {
            LossConfig::Exp => LossKind::Exp,
            LossConfig::Logistic => LossKind::Logistic,
        }
    }
}

fn default_base_step() -> f64 {
    0.05
}
fn default_clamp() -> f64 {
    0.1
}
fn default_target_accuracy() -> f64 {
    60.0
}
fn default_checkpoint_spacing() -> f64 {
    0.5
}
fn default_max_steps() -> u64 {
    5_000_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowParams {
    #[serde(default = "default_base_step")]
    pub base_step: f64,
    #[serde(default = "default_clamp")]
    pub clamp: f64,
    #[serde(default = "default_target_accuracy")]
    pub target_accuracy: f64,
    #[serde(default = "default_checkpoint_spacing")]
    pub checkpoint_spacing: f64,
    #[serde(default = "default_max_steps")]
    pub max_steps: u64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for FlowParams {
    fn default() -> Self {
        Self {
            base_step: default_base_step(),
            clamp: default_clamp(),
            target_accuracy: default_target_accuracy(),
            checkpoint_spacing: default_checkpoint_spacing(),
            max_steps: default_max_steps(),
            seed: 0,
        }
    }
}

impl FlowParams {
    /// Core flow configuration; `extended` comes from HOMOFLOW_PRECISION.
    pub fn to_core(&self, extended: bool) -> FlowConfig {
        FlowConfig {
            base_step: self.base_step,
            clamp: self.clamp,
            target_accuracy: self.target_accuracy,
            checkpoint_spacing: self.checkpoint_spacing,
            max_steps: self.max_steps,
            seed: self.seed,
            extended_precision: extended,
            extended_threshold: 50.0,
        }
    }
}

/// Labeling rule for generated planar data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Labeler {
    /// Random 16-unit one-hidden-layer ReLU scorer with biases.
    #[default]
    Mlp,
    /// Random bias-free linear functional (labels separable through the
    /// origin; suitable for deep linear runs without the bias coordinate).
    Linear,
    /// Random bias-free ReLU scorer (conic sectors; suitable for planar
    /// squared-ReLU runs where the covering check applies).
    Conic,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenParams {
    pub seed: u64,
    pub n_raw: usize,
    pub margin_floor: f64,
    #[serde(default)]
    pub labeler: Labeler,
    /// Embed the plane by appending a constant 1 coordinate.
    #[serde(default = "default_true")]
    pub append_bias: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    Generate(GenParams),
    File { path: PathBuf },
}

fn default_init_scale() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitParams {
    #[serde(default = "default_init_scale")]
    pub scale: f64,
}

impl Default for InitParams {
    fn default() -> Self {
        Self {
            scale: default_init_scale(),
        }
    }
}

fn default_warmup_step() -> f64 {
    0.005
}
fn default_warmup_max_steps() -> u64 {
    2_000_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarmupParams {
    #[serde(default = "default_warmup_step")]
    pub step: f64,
    #[serde(default = "default_warmup_max_steps")]
    pub max_steps: u64,
}

impl Default for WarmupParams {
    fn default() -> Self {
        Self {
            step: default_warmup_step(),
            max_steps: default_warmup_max_steps(),
        }
    }
}

fn default_cover_grid() -> usize {
    4096
}
fn default_tol_rank() -> f64 {
    1e-2
}
fn default_tol_angle() -> f64 {
    1e-2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyParams {
    #[serde(default = "default_cover_grid")]
    pub cover_grid: usize,
    #[serde(default = "default_tol_rank")]
    pub tol_rank: f64,
    #[serde(default = "default_tol_angle")]
    pub tol_angle: f64,
}

impl Default for VerifyParams {
    fn default() -> Self {
        Self {
            cover_grid: default_cover_grid(),
            tol_rank: default_tol_rank(),
            tol_angle: default_tol_angle(),
        }
    }
}

/// Complete experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub loss: LossConfig,
    #[serde(default)]
    pub flow: FlowParams,
    pub dataset: DatasetSource,
    #[serde(default)]
    pub init: InitParams,
    #[serde(default)]
    pub warmup: WarmupParams,
    #[serde(default)]
    pub verify: VerifyParams,
    pub out_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", path.display()))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trip() {
        let cfg = ExperimentConfig {
            model: ModelConfig::SquaredRelu {
                input_dim: 3,
                width: 256,
            },
            loss: LossConfig::Exp,
            flow: FlowParams {
                seed: 42,
                ..Default::default()
            },
            dataset: DatasetSource::Generate(GenParams {
                seed: 42,
                n_raw: 200,
                margin_floor: 0.2,
                labeler: Labeler::Mlp,
                append_bias: true,
            }),
            init: InitParams::default(),
            warmup: WarmupParams::default(),
            verify: VerifyParams::default(),
            out_dir: PathBuf::from("out"),
        };
        let emitted = crate::emit::json_to_string(&serde_json::to_value(&cfg).unwrap());
        let parsed: ExperimentConfig = serde_json::from_str(&emitted).unwrap();
        assert_eq!(cfg, parsed);
    }

    #[test]
    fn defaults_fill_in() {
        let text = r#"{
            "model": {"kind": "deep_linear", "dims": [2, 4, 4, 1]},
            "loss": "exp",
            "dataset": {"generate": {"seed": 7, "n_raw": 80, "margin_floor": 0.25,
                                      "labeler": "linear", "append_bias": false}},
            "out_dir": "out"
        }"#;
        let cfg: ExperimentConfig = serde_json::from_str(text).unwrap();
        assert_eq!(cfg.flow.base_step, 0.05);
        assert_eq!(cfg.flow.target_accuracy, 60.0);
        assert_eq!(cfg.verify.cover_grid, 4096);
    }
}
