//! Flat parameter vectors with named partitions, and the radial/spherical
//! decomposition used by the rate and alignment diagnostics.
//!
//! Every quantity tracked downstream is a function of the flat vector `W`,
//! so parameters are stored contiguously; the partition gives per-layer or
//! per-node views without reshaping.

use thiserror::Error;

use crate::numeric;

#[derive(Debug, Error, PartialEq)]
pub enum ParamsError {
    #[error("parameter vector has zero norm")]
    ZeroNorm,
    #[error("vector length {got} does not match parameter length {expected}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("non-finite entry at index {0}")]
    NonFinite(usize),
    #[error("partition does not tile [0, {len}): {reason}")]
    BadPartition { len: usize, reason: String },
    #[error("homogeneity degree must be positive, got {0}")]
    BadDegree(f64),
}

/// Named contiguous block of a parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

impl Segment {
    pub fn new(name: impl Into<String>, offset: usize, len: usize) -> Self {
        Self {
            name: name.into(),
            offset,
            len,
        }
    }
}

/// Flat parameter vector with an ordered partition covering `[0, k)`.
///
/// Value-semantic: immutable after construction, updated only through
/// copy-and-update constructors.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVec {
    data: Vec<f64>,
    partition: Vec<Segment>,
}

impl ParamVec {
    pub fn new(data: Vec<f64>, partition: Vec<Segment>) -> Result<Self, ParamsError> {
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            return Err(ParamsError::NonFinite(i));
        }
        let mut cursor = 0usize;
        for seg in &partition {
            if seg.offset != cursor {
                return Err(ParamsError::BadPartition {
                    len: data.len(),
                    reason: format!(
                        "segment {:?} starts at {} but previous coverage ends at {}",
                        seg.name, seg.offset, cursor
                    ),
                });
            }
            cursor += seg.len;
        }
        if cursor != data.len() {
            return Err(ParamsError::BadPartition {
                len: data.len(),
                reason: format!("segments cover [0, {cursor})"),
            });
        }
        Ok(Self { data, partition })
    }

    /// Single-segment vector named `w`.
    pub fn whole(data: Vec<f64>) -> Result<Self, ParamsError> {
        let len = data.len();
        Self::new(data, vec![Segment::new("w", 0, len)])
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn partition(&self) -> &[Segment] {
        &self.partition
    }

    pub fn segment(&self, j: usize) -> &[f64] {
        let seg = &self.partition[j];
        &self.data[seg.offset..seg.offset + seg.len]
    }

    /// Euclidean (Frobenius) norm of the flat vector.
    pub fn norm(&self) -> f64 {
        numeric::norm(&self.data)
    }

    /// Normalized direction `W̃ = W/‖W‖`.
    pub fn unit(&self) -> Result<Vec<f64>, ParamsError> {
        let n = self.norm();
        if n == 0.0 {
            return Err(ParamsError::ZeroNorm);
        }
        Ok(self.data.iter().map(|x| x / n).collect())
    }

    /// Copy-and-update with the same partition.
    pub fn with_data(&self, data: Vec<f64>) -> Result<Self, ParamsError> {
        if data.len() != self.data.len() {
            return Err(ParamsError::ShapeMismatch {
                expected: self.data.len(),
                got: data.len(),
            });
        }
        Self::new(data, self.partition.clone())
    }

    pub fn scaled(&self, c: f64) -> Result<Self, ParamsError> {
        self.with_data(self.data.iter().map(|x| c * x).collect())
    }
}

/// Split of a vector into its component along `W̃` and the orthogonal rest.
#[derive(Debug, Clone)]
pub struct RadialSpherical {
    pub radial: Vec<f64>,
    pub spherical: Vec<f64>,
}

impl RadialSpherical {
    pub fn radial_norm(&self) -> f64 {
        numeric::norm(&self.radial)
    }

    pub fn spherical_norm(&self) -> f64 {
        numeric::norm(&self.spherical)
    }
}

/// Decompose `g` into radial and spherical parts with respect to `W`.
///
/// `radial = ⟨g, W̃⟩ W̃`, `spherical = g − radial`.
pub fn decompose(g: &[f64], w: &ParamVec) -> Result<RadialSpherical, ParamsError> {
    if g.len() != w.len() {
        return Err(ParamsError::ShapeMismatch {
            expected: w.len(),
            got: g.len(),
        });
    }
    let unit = w.unit()?;
    let coef = numeric::dot(g, &unit);
    let radial: Vec<f64> = unit.iter().map(|u| coef * u).collect();
    let spherical: Vec<f64> = g.iter().zip(&radial).map(|(gi, ri)| gi - ri).collect();
    Ok(RadialSpherical { radial, spherical })
}

/// Per-segment norm shares `s_j = ‖U_j‖^L / ‖W‖^L`.
pub fn partition_shares(w: &ParamVec, degree: f64) -> Result<Vec<f64>, ParamsError> {
    if degree <= 0.0 {
        return Err(ParamsError::BadDegree(degree));
    }
    let n = w.norm();
    if n == 0.0 {
        return Err(ParamsError::ZeroNorm);
    }
    Ok((0..w.partition().len())
        .map(|j| (numeric::norm(w.segment(j)) / n).powf(degree))
        .collect())
}
