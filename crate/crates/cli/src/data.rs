//! Synthetic planar data: points labeled by a seeded random scorer, with
//! low-margin points deleted, an optional bias coordinate appended, and a
//! global rescale to keep every ‖x_i‖ ≤ 1.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde_json::Value;
use thiserror::Error;

use homoflow_core::models::Example;

use crate::config::{GenParams, Labeler};
use crate::emit;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("one class stayed empty after {0} resampling attempts")]
    DegenerateData(usize),
    #[error("invalid dataset file: {0}")]
    BadFile(String),
}

/// Generation metadata kept alongside the examples.
#[derive(Debug, Clone, PartialEq)]
pub struct GenMeta {
    pub params: GenParams,
    /// Number of points surviving the margin filter.
    pub n_kept: usize,
    /// Global factor the coordinates were divided by.
    pub scale: f64,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub examples: Vec<Example>,
    pub meta: Option<GenMeta>,
}

impl Dataset {
    pub fn input_dim(&self) -> usize {
        self.examples.first().map(|e| e.x.len()).unwrap_or(0)
    }
}

/// Seeded scorer used to label the plane. The default is a 16-unit ReLU
/// network with biases; the bias-free variants keep the labels invariant
/// under positive scaling of the input, so homogeneous predictors can
/// separate them without an embedded bias coordinate.
enum Scorer {
    /// `out_bias + Σ c_u · relu(a_u · x + b_u)`.
    Net {
        hidden: Vec<([f64; 2], f64, f64)>,
        out_bias: f64,
    },
    /// `a · x` through the origin.
    Linear { a: [f64; 2] },
}

impl Scorer {
    fn sample(rng: &mut ChaCha8Rng, labeler: Labeler) -> Self {
        match labeler {
            Labeler::Mlp => Scorer::Net {
                hidden: (0..16)
                    .map(|_| {
                        (
                            [rng.sample(StandardNormal), rng.sample(StandardNormal)],
                            rng.sample::<f64, _>(StandardNormal),
                            rng.sample::<f64, _>(StandardNormal),
                        )
                    })
                    .collect(),
                out_bias: rng.sample(StandardNormal),
            },
            Labeler::Conic => Scorer::Net {
                hidden: (0..16)
                    .map(|_| {
                        (
                            [rng.sample(StandardNormal), rng.sample(StandardNormal)],
                            0.0,
                            rng.sample::<f64, _>(StandardNormal),
                        )
                    })
                    .collect(),
                out_bias: 0.0,
            },
            Labeler::Linear => Scorer::Linear {
                a: [rng.sample(StandardNormal), rng.sample(StandardNormal)],
            },
        }
    }

    fn score(&self, x: &[f64; 2]) -> f64 {
        match self {
            Scorer::Net { hidden, out_bias } => {
                let mut s = *out_bias;
                for (a, b, c) in hidden {
                    s += c * (a[0] * x[0] + a[1] * x[1] + b).max(0.0);
                }
                s
            }
            Scorer::Linear { a } => a[0] * x[0] + a[1] * x[1],
        }
    }
}

/// Sample `n_raw` points uniformly in `[-1,1]²`, label them with the seeded
/// scorer, delete points whose |score| falls below `margin_floor · max
/// |score|`, optionally append the constant-1 coordinate, and rescale so all
/// ‖x_i‖ ≤ 1. Resamples the points (scorer fixed) until both classes are
/// present, up to 100 attempts.
pub fn gen_synthetic(params: &GenParams) -> Result<Dataset, DataError> {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let scorer = Scorer::sample(&mut rng, params.labeler);
    let attempts = 100;
    for attempt in 0..attempts {
        let points: Vec<[f64; 2]> = (0..params.n_raw)
            .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
            .collect();
        let scores: Vec<f64> = points.iter().map(|p| scorer.score(p)).collect();
        let max_abs = scores.iter().fold(0.0f64, |m, s| m.max(s.abs()));
        if max_abs == 0.0 {
            continue;
        }
        let threshold = params.margin_floor * max_abs;
        let mut kept: Vec<(Vec<f64>, f64)> = Vec::new();
        for (p, s) in points.iter().zip(&scores) {
            if s.abs() >= threshold {
                let mut x = vec![p[0], p[1]];
                if params.append_bias {
                    x.push(1.0);
                }
                kept.push((x, if *s >= 0.0 { 1.0 } else { -1.0 }));
            }
        }
        let pos = kept.iter().filter(|(_, y)| *y > 0.0).count();
        if pos == 0 || pos == kept.len() || kept.is_empty() {
            log::debug!("resampling dataset (attempt {attempt}): one-sided labels");
            continue;
        }
        let scale = kept
            .iter()
            .map(|(x, _)| homoflow_core::numeric::norm(x))
            .fold(0.0f64, f64::max);
        let examples: Vec<Example> = kept
            .into_iter()
            .map(|(x, y)| Example::new(x.into_iter().map(|v| v / scale).collect(), y).unwrap())
            .collect();
        let n_kept = examples.len();
        return Ok(Dataset {
            examples,
            meta: Some(GenMeta {
                params: params.clone(),
                n_kept,
                scale,
            }),
        });
    }
    Err(DataError::DegenerateData(attempts))
}

/// Serialize to the dataset JSON document (deterministic byte-for-byte).
pub fn dataset_to_json(ds: &Dataset) -> String {
    let examples: Vec<Value> = ds
        .examples
        .iter()
        .map(|ex| {
            serde_json::json!({
                "x": ex.x,
                "y": ex.y as i64,
            })
        })
        .collect();
    let mut root = serde_json::Map::new();
    if let Some(meta) = &ds.meta {
        root.insert(
            "meta".into(),
            serde_json::json!({
                "seed": meta.params.seed,
                "n_raw": meta.params.n_raw,
                "margin_floor": meta.params.margin_floor,
                "labeler": serde_json::to_value(meta.params.labeler).unwrap(),
                "append_bias": meta.params.append_bias,
                "n_kept": meta.n_kept,
                "scale": meta.scale,
            }),
        );
    }
    root.insert("examples".into(), Value::Array(examples));
    emit::json_to_string(&Value::Object(root))
}

pub fn dataset_from_json(text: &str) -> Result<Dataset, DataError> {
    let v: Value = serde_json::from_str(text).map_err(|e| DataError::BadFile(e.to_string()))?;
    let examples = v
        .get("examples")
        .and_then(Value::as_array)
        .ok_or_else(|| DataError::BadFile("missing examples".into()))?;
    let examples = examples
        .iter()
        .map(|e| {
            let x: Vec<f64> = e
                .get("x")
                .and_then(Value::as_array)
                .ok_or_else(|| DataError::BadFile("example missing x".into()))?
                .iter()
                .map(|v| {
                    v.as_f64()
                        .ok_or_else(|| DataError::BadFile("bad coordinate".into()))
                })
                .collect::<Result<_, _>>()?;
            let y = e
                .get("y")
                .and_then(Value::as_f64)
                .ok_or_else(|| DataError::BadFile("example missing y".into()))?;
            Example::new(x, y).map_err(|e| DataError::BadFile(e.to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Dataset {
        examples,
        meta: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(labeler: Labeler, append_bias: bool) -> GenParams {
        GenParams {
            seed: 42,
            n_raw: 200,
            margin_floor: 0.2,
            labeler,
            append_bias,
        }
    }

    #[test]
    fn zero_floor_keeps_everything() {
        let p = GenParams {
            margin_floor: 0.0,
            ..params(Labeler::Mlp, true)
        };
        let ds = gen_synthetic(&p).unwrap();
        assert_eq!(ds.examples.len(), 200);
    }

    #[test]
    fn norms_bounded_and_bias_constant() {
        let ds = gen_synthetic(&params(Labeler::Mlp, true)).unwrap();
        let scale = ds.meta.as_ref().unwrap().scale;
        for ex in &ds.examples {
            assert!(homoflow_core::numeric::norm(&ex.x) <= 1.0 + 1e-12);
            assert_eq!(ex.x.len(), 3);
            // Last coordinate was the appended 1 before the global rescale.
            assert!((ex.x[2] - 1.0 / scale).abs() < 1e-15);
        }
        assert!(ds.examples.iter().any(|e| e.y > 0.0));
        assert!(ds.examples.iter().any(|e| e.y < 0.0));
    }

    #[test]
    fn deterministic_bytes() {
        let a = dataset_to_json(&gen_synthetic(&params(Labeler::Mlp, true)).unwrap());
        let b = dataset_to_json(&gen_synthetic(&params(Labeler::Mlp, true)).unwrap());
        assert_eq!(a, b);
        let ds = dataset_from_json(&a).unwrap();
        assert_eq!(
            ds.examples.len(),
            gen_synthetic(&params(Labeler::Mlp, true))
                .unwrap()
                .examples
                .len()
        );
    }

    #[test]
    fn conic_labels_are_scale_invariant() {
        let ds = gen_synthetic(&params(Labeler::Conic, false)).unwrap();
        assert_eq!(ds.input_dim(), 2);
        // Bias-free scorer: labels depend only on direction.
        let mut rng = ChaCha8Rng::seed_from_u64(ds.meta.as_ref().unwrap().params.seed);
        let scorer = Scorer::sample(&mut rng, Labeler::Conic);
        for ex in ds.examples.iter().take(20) {
            let s1 = scorer.score(&[ex.x[0], ex.x[1]]);
            let s2 = scorer.score(&[2.0 * ex.x[0], 2.0 * ex.x[1]]);
            assert_eq!(s1.signum(), s2.signum());
        }
    }

    #[test]
    fn linear_labels_separable_through_origin() {
        let ds = gen_synthetic(&params(Labeler::Linear, false)).unwrap();
        let mm = homoflow_core::verify::max_margin_linear(&ds.examples, 1e-8).unwrap();
        assert!(mm.margin > 0.0);
    }
}
