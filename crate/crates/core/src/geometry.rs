//! Embedding types and the lift from inner-product space onto the unit sphere.
//!
//! Documents are scaled by the collection-wide maximum norm `M` and pushed off
//! the equator by `sqrt(1 - |phi|^2 / M^2)`; queries are normalized and get a
//! trailing zero. After the lift, ranking documents by ascending Euclidean
//! distance to a query is the same as ranking them by descending raw inner
//! product, since `|q - d|^2 = 2 - 2 <q, phi> / (|psi| M)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative slack allowed when a document norm is compared against `M`.
pub const SCALE_TOLERANCE: f64 = 1e-9;

/// An encoder output in `R^l`, before the lift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f32>", into = "Vec<f32>")]
pub struct RawEmbedding(Vec<f32>);

impl RawEmbedding {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidParameter("embedding has length 0".into()));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(pos));
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0
            .iter()
            .map(|&v| f64::from(v) * f64::from(v))
            .sum::<f64>()
            .sqrt()
    }

    /// Raw inner product, accumulated in `f64`.
    pub fn dot(&self, other: &RawEmbedding) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(&a, &b)| f64::from(a) * f64::from(b))
            .sum()
    }
}

impl TryFrom<Vec<f32>> for RawEmbedding {
    type Error = Error;

    fn try_from(values: Vec<f32>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<RawEmbedding> for Vec<f32> {
    fn from(e: RawEmbedding) -> Self {
        e.0
    }
}

/// A lifted, unit-norm vector in `R^{l+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformedEmbedding(Vec<f64>);

impl TransformedEmbedding {
    /// Wraps values that are already on the unit sphere (e.g. read back from
    /// a persisted index). Fails if the norm is off by more than `1e-6`.
    pub fn from_lifted(values: Vec<f64>) -> Result<Self> {
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(pos));
        }
        let norm = l2_norm(&values);
        if (norm - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidParameter(format!(
                "lifted embedding has norm {norm}, expected 1"
            )));
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.0.iter().map(|&v| v as f32).collect()
    }

    pub fn dot(&self, other: &TransformedEmbedding) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }
}

/// The constant `M`: the largest document norm in the collection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollectionScale {
    max_norm: f64,
}

impl CollectionScale {
    pub fn new(max_norm: f64) -> Result<Self> {
        if !(max_norm.is_finite() && max_norm > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "collection scale must be positive and finite, got {max_norm}"
            )));
        }
        Ok(Self { max_norm })
    }

    pub fn max_norm(&self) -> f64 {
        self.max_norm
    }
}

pub fn collection_max_norm<'a, I>(docs: I) -> Result<CollectionScale>
where
    I: IntoIterator<Item = &'a RawEmbedding>,
{
    let mut docs = docs.into_iter();
    let first = docs.next().ok_or(Error::EmptyCollection)?;
    let dim = first.dim();
    let mut max_norm = first.norm();
    for doc in docs {
        if doc.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: doc.dim(),
            });
        }
        max_norm = max_norm.max(doc.norm());
    }
    if max_norm == 0.0 {
        return Err(Error::AllZeroVectors);
    }
    CollectionScale::new(max_norm)
}

pub fn lift_document(phi: &RawEmbedding, scale: CollectionScale) -> Result<TransformedEmbedding> {
    let m = scale.max_norm;
    let norm = phi.norm();
    if norm - m > SCALE_TOLERANCE * m.max(1.0) {
        return Err(Error::NormExceedsScale { norm, max_norm: m });
    }
    // the boundary case |phi| = M can land a hair above 1
    let radicand = (1.0 - (norm * norm) / (m * m)).clamp(0.0, 1.0);
    let mut values = Vec::with_capacity(phi.dim() + 1);
    values.extend(phi.as_slice().iter().map(|&v| f64::from(v) / m));
    values.push(radicand.sqrt());
    Ok(TransformedEmbedding(values))
}

pub fn lift_query(psi: &RawEmbedding) -> Result<TransformedEmbedding> {
    let norm = psi.norm();
    if norm == 0.0 {
        return Err(Error::ZeroNormQuery);
    }
    let mut values = Vec::with_capacity(psi.dim() + 1);
    values.extend(psi.as_slice().iter().map(|&v| f64::from(v) / norm));
    values.push(0.0);
    Ok(TransformedEmbedding(values))
}

pub fn distance(a: &TransformedEmbedding, b: &TransformedEmbedding) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    Ok(squared_distance_f64(&a.0, &b.0).sqrt())
}

pub(crate) fn l2_norm(values: &[f64]) -> f64 {
    values.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub(crate) fn squared_distance_f64(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

/// Squared distance between an `f64` query and an `f32` stored row.
///
/// Four independent accumulators; the summation order is fixed so results are
/// reproducible bit-for-bit across calls.
#[inline]
pub(crate) fn squared_distance_mixed(query: &[f64], row: &[f32]) -> f64 {
    debug_assert_eq!(query.len(), row.len());
    let mut acc = [0.0f64; 4];
    let q_chunks = query.chunks_exact(4);
    let r_chunks = row.chunks_exact(4);
    let q_tail = q_chunks.remainder();
    let r_tail = r_chunks.remainder();
    for (q, r) in q_chunks.zip(r_chunks) {
        for lane in 0..4 {
            let d = q[lane] - f64::from(r[lane]);
            acc[lane] += d * d;
        }
    }
    let mut tail = 0.0;
    for (q, r) in q_tail.iter().zip(r_tail) {
        let d = q - f64::from(*r);
        tail += d * d;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(v: &[f32]) -> RawEmbedding {
        RawEmbedding::new(v.to_vec()).unwrap()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn max_norm_of_hand_vectors() {
        let scale = collection_max_norm(&[raw(&[3.0, 4.0]), raw(&[0.0, 1.0])]).unwrap();
        assert_eq!(scale.max_norm(), 5.0);
        let scale = collection_max_norm(&[raw(&[1.0, 0.0])]).unwrap();
        assert_eq!(scale.max_norm(), 1.0);
    }

    #[test]
    fn max_norm_errors() {
        let empty: Vec<RawEmbedding> = vec![];
        assert!(matches!(
            collection_max_norm(&empty),
            Err(Error::EmptyCollection)
        ));
        assert!(matches!(
            collection_max_norm(&[raw(&[0.0, 0.0]), raw(&[0.0, 0.0])]),
            Err(Error::AllZeroVectors)
        ));
        assert!(matches!(
            collection_max_norm(&[raw(&[1.0, 0.0]), raw(&[1.0])]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn raw_embedding_rejects_nan_and_empty() {
        assert!(matches!(
            RawEmbedding::new(vec![1.0, f32::NAN]),
            Err(Error::NonFinite(1))
        ));
        assert!(RawEmbedding::new(vec![]).is_err());
    }

    #[test]
    fn lift_document_examples() {
        let s5 = CollectionScale::new(5.0).unwrap();
        let s10 = CollectionScale::new(10.0).unwrap();
        let lifted = lift_document(&raw(&[3.0, 4.0]), s5).unwrap();
        assert!(close(lifted.as_slice(), &[0.6, 0.8, 0.0], 1e-12));
        let lifted = lift_document(&raw(&[3.0, 4.0]), s10).unwrap();
        assert!(close(lifted.as_slice(), &[0.3, 0.4, 0.75f64.sqrt()], 1e-12));
        assert!((lifted.as_slice()[2] - 0.866_025_403_784_438_6).abs() < 1e-12);
        let lifted = lift_document(&raw(&[0.0, 0.0]), s5).unwrap();
        assert_eq!(lifted.as_slice(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn lift_document_rejects_oversized() {
        let s = CollectionScale::new(1.0).unwrap();
        assert!(matches!(
            lift_document(&raw(&[2.0, 0.0]), s),
            Err(Error::NormExceedsScale { .. })
        ));
    }

    #[test]
    fn lift_document_on_boundary_is_not_nan() {
        let v = raw(&[0.1, 0.2, 0.3, 0.7]);
        let s = CollectionScale::new(v.norm() * (1.0 - 1e-12)).unwrap();
        let lifted = lift_document(&v, s).unwrap();
        assert!(lifted.as_slice().iter().all(|x| x.is_finite()));
        assert_eq!(*lifted.as_slice().last().unwrap(), 0.0);
    }

    #[test]
    fn lift_query_examples() {
        assert_eq!(
            lift_query(&raw(&[0.0, 2.0])).unwrap().as_slice(),
            &[0.0, 1.0, 0.0]
        );
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!(close(
            lift_query(&raw(&[1.0, 1.0])).unwrap().as_slice(),
            &[h, h, 0.0],
            1e-15
        ));
        assert!(matches!(
            lift_query(&raw(&[0.0, 0.0])),
            Err(Error::ZeroNormQuery)
        ));
    }

    #[test]
    fn distance_examples() {
        let a = TransformedEmbedding::from_lifted(vec![1.0, 0.0, 0.0]).unwrap();
        let b = TransformedEmbedding::from_lifted(vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(distance(&a, &a).unwrap(), 0.0);
        assert!((distance(&a, &b).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        let c = TransformedEmbedding::from_lifted(vec![1.0, 0.0]).unwrap();
        assert!(matches!(
            distance(&a, &c),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn mixed_kernel_matches_plain_sum() {
        let q: Vec<f64> = (0..11).map(|i| (i as f64 * 0.37).sin()).collect();
        let r: Vec<f32> = (0..11).map(|i| (i as f32 * 0.11).cos()).collect();
        let plain: f64 = q
            .iter()
            .zip(&r)
            .map(|(a, b)| (a - f64::from(*b)).powi(2))
            .sum();
        assert!((squared_distance_mixed(&q, &r) - plain).abs() < 1e-12);
    }
}
