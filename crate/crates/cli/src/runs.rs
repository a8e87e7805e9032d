//! Orchestration: build the model and dataset from a config, seed the
//! initial parameters, establish the initial-risk condition, and run the
//! flow.

use anyhow::{bail, Context, Result};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use homoflow_core::flow::{self, FlowConfig, FlowState, Trajectory, WarmupOpts};
use homoflow_core::losses::{self, LossKind};
use homoflow_core::metrics;
use homoflow_core::models::{NtkBase, PredictorSpec};
use homoflow_core::params::ParamVec;

use crate::config::{ExperimentConfig, ModelConfig};
use crate::data::{self, Dataset};

/// Everything needed to execute one experiment.
pub struct Prepared {
    pub spec: PredictorSpec,
    pub dataset: Dataset,
    pub kind: LossKind,
    pub flow_cfg: FlowConfig,
    pub init_w: ParamVec,
    pub warmup: WarmupOpts,
}

pub fn extended_precision_from_env() -> bool {
    std::env::var("HOMOFLOW_PRECISION")
        .map(|v| v == "extended")
        .unwrap_or(false)
}

fn sample_normal(rng: &mut ChaCha8Rng, len: usize, scale: f64) -> Vec<f64> {
    (0..len)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

pub fn build_model(cfg: &ModelConfig) -> Result<PredictorSpec> {
    let spec = match cfg {
        ModelConfig::SquaredRelu { input_dim, width } => PredictorSpec::SquaredRelu {
            input_dim: *input_dim,
            width: *width,
        },
        ModelConfig::DeepLinear { dims } => PredictorSpec::DeepLinear { dims: dims.clone() },
        ModelConfig::ReluMlp { dims, pools } => {
            let pools = if pools.is_empty() && dims.len() >= 2 {
                vec![1; dims.len() - 2]
            } else {
                pools.clone()
            };
            PredictorSpec::ReluMlp {
                dims: dims.clone(),
                pools,
            }
        }
        ModelConfig::NtkFrozen {
            input_dim,
            width,
            base_seed,
            base_scale,
        } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*base_seed);
            let weights = sample_normal(&mut rng, width * input_dim, *base_scale);
            let signs = (1..=*width)
                .map(homoflow_core::models::squared_relu_sign)
                .collect();
            PredictorSpec::NtkFrozen {
                base: NtkBase {
                    input_dim: *input_dim,
                    weights,
                    signs,
                },
            }
        }
    };
    spec.validate()?;
    Ok(spec)
}

pub fn load_dataset(config: &ExperimentConfig) -> Result<Dataset> {
    match &config.dataset {
        crate::config::DatasetSource::Generate(params) => Ok(data::gen_synthetic(params)?),
        crate::config::DatasetSource::File { path } => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading dataset {}", path.display()))?;
            Ok(data::dataset_from_json(&text)?)
        }
    }
}

pub fn prepare(config: &ExperimentConfig) -> Result<Prepared> {
    let spec = build_model(&config.model)?;
    let dataset = load_dataset(config)?;
    if dataset.examples.is_empty() {
        bail!("dataset is empty");
    }
    if spec.input_dim() != dataset.input_dim() {
        bail!(
            "model expects input dimension {} but dataset has {}",
            spec.input_dim(),
            dataset.input_dim()
        );
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.flow.seed);
    let init_w = spec.params_from(sample_normal(&mut rng, spec.param_len(), config.init.scale))?;
    Ok(Prepared {
        spec,
        dataset,
        kind: config.loss.into(),
        flow_cfg: config.flow.to_core(extended_precision_from_env()),
        init_w,
        warmup: WarmupOpts {
            step: config.warmup.step,
            max_steps: config.warmup.max_steps,
        },
    })
}

/// Warmup to the initial-risk condition and run the flow to the target
/// accuracy.
pub fn execute(p: &Prepared) -> Result<Trajectory> {
    let w0 = flow::warmup(
        &p.spec,
        &p.dataset.examples,
        p.init_w.clone(),
        p.kind,
        &p.warmup,
    )?;
    Ok(flow::run(
        &p.spec,
        &p.dataset.examples,
        p.kind,
        &p.flow_cfg,
        w0,
    )?)
}

/// Trajectory with a single record at the given iterate; used for
/// negative-control verifications of untrained weights.
pub fn single_record_trajectory(
    spec: &PredictorSpec,
    dataset: &[homoflow_core::models::Example],
    kind: LossKind,
    w: ParamVec,
) -> Result<Trajectory> {
    let margins: Vec<f64> = dataset
        .iter()
        .map(|ex| spec.margin(&w, ex))
        .collect::<Result<_, _>>()?;
    let loss_log = losses::log_total_loss(kind, &margins);
    let record = metrics::build_record(spec, &w, dataset, kind, 0, 0.0, 0.0, false)?;
    let alpha_norm = kind.ell_inverse_from_log(loss_log) / w.norm().powf(spec.degree());
    let last_dir = w.unit()?;
    let state = FlowState {
        w,
        step: 0,
        loss_log,
        tau: (dataset.len() as f64).ln() - loss_log,
        alpha_norm,
        zeta: 0.0,
        t_flow: 0.0,
        last_dir,
    };
    Ok(Trajectory {
        records: vec![record],
        final_state: state,
    })
}
