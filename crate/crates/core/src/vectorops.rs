//! Embedding vectors and cosine similarity.
//!
//! All arithmetic is carried out in `f64`. Stored embeddings may be narrowed to
//! `f32` by the store, but every similarity that feeds a threshold decision is
//! accumulated at double precision so that values sitting right at the cache
//! threshold do not flip because of rounding.

use std::ops::Deref;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Norms below this are rejected rather than producing NaN similarities.
pub const ZERO_NORM_EPS: f64 = 1e-12;

/// Allowed deviation of a [`UnitEmbedding`]'s norm from 1.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VectorError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("vector norm is zero or too small to normalize")]
    ZeroVector,
    #[error("embedding must have at least one component")]
    Empty,
    #[error("embedding component {index} is not finite")]
    NonFinite { index: usize },
    #[error("embedding norm {norm} is not within tolerance of 1")]
    NotUnit { norm: f64 },
}

/// A dense, finite, non-empty real vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self, VectorError> {
        if values.is_empty() {
            return Err(VectorError::Empty);
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(VectorError::NonFinite { index });
        }
        Ok(Self(values))
    }

    pub fn from_f32(values: &[f32]) -> Result<Self, VectorError> {
        Self::new(values.iter().map(|&v| f64::from(v)).collect())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    pub fn scaled(&self, factor: f64) -> Result<Self, VectorError> {
        Self::new(self.0.iter().map(|v| v * factor).collect())
    }
}

impl TryFrom<Vec<f64>> for Embedding {
    type Error = VectorError;

    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(values)
    }
}

impl From<Embedding> for Vec<f64> {
    fn from(e: Embedding) -> Self {
        e.0
    }
}

impl Deref for Embedding {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// An [`Embedding`] whose Euclidean norm is 1 (within [`UNIT_NORM_TOLERANCE`]).
///
/// The only ways to obtain one are [`normalize`] and [`UnitEmbedding::try_from_unit`],
/// so code holding a `UnitEmbedding` may use [`dot`] as the cosine similarity.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitEmbedding(Embedding);

impl UnitEmbedding {
    /// Wraps values that are already unit length, without rescaling them.
    pub fn try_from_unit(values: Vec<f64>) -> Result<Self, VectorError> {
        let e = Embedding::new(values)?;
        let n = e.norm();
        if (n - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(VectorError::NotUnit { norm: n });
        }
        Ok(Self(e))
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }

    pub fn values(&self) -> &[f64] {
        self.0.values()
    }

    pub fn as_embedding(&self) -> &Embedding {
        &self.0
    }

    /// Values narrowed to `f32`, the store's on-disk and in-memory width.
    pub fn to_f32(&self) -> Vec<f32> {
        self.0.iter().map(|&v| v as f32).collect()
    }
}

impl Deref for UnitEmbedding {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

fn norm(values: &[f64]) -> f64 {
    values.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn raw_dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_dims(a: usize, b: usize) -> Result<(), VectorError> {
    if a != b {
        return Err(VectorError::DimensionMismatch {
            expected: a,
            actual: b,
        });
    }
    Ok(())
}

/// Cosine of the angle between `a` and `b`, clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &Embedding, b: &Embedding) -> Result<f64, VectorError> {
    check_dims(a.dim(), b.dim())?;
    let na = a.norm();
    let nb = b.norm();
    if na < ZERO_NORM_EPS || nb < ZERO_NORM_EPS {
        return Err(VectorError::ZeroVector);
    }
    // (a·b)/(|a||b|) is computed with a symmetric expression so that swapping
    // the arguments yields a bit-identical result.
    Ok((raw_dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Scales `a` to unit length.
pub fn normalize(a: &Embedding) -> Result<UnitEmbedding, VectorError> {
    let n = a.norm();
    if n < ZERO_NORM_EPS {
        return Err(VectorError::ZeroVector);
    }
    let values = a.iter().map(|v| v / n).collect();
    Ok(UnitEmbedding(Embedding(values)))
}

/// Dot product of two unit vectors, i.e. their cosine similarity.
pub fn dot(a: &UnitEmbedding, b: &UnitEmbedding) -> Result<f64, VectorError> {
    check_dims(a.dim(), b.dim())?;
    Ok(unit_dot(a, b))
}

/// Dimension-unchecked dot product clamped to `[-1, 1]`; callers guarantee equal dims.
pub(crate) fn unit_dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    raw_dot(a, b).clamp(-1.0, 1.0)
}
