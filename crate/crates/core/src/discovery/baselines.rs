//! Hard-assignment strategies used for comparison with the learned head.

use super::SimilarityMatrix;
use crate::{math, Error, Result};

/// Max over each support's proposals, mean over supports, argmax over the
/// query proposals (lowest index on ties).
pub fn heuristic_discovery(s: &SimilarityMatrix) -> usize {
    let (n, m) = (s.n(), s.m());
    let support: Vec<f64> = (0..n)
        .map(|i| {
            let total: f64 = (0..m)
                .map(|k| {
                    (0..n)
                        .map(|j| s.get(i, k, j))
                        .fold(f64::NEG_INFINITY, f64::max)
                })
                .sum();
            total / m as f64
        })
        .collect();
    math::argmax(&support).expect("matrix has at least one row")
}

/// Region whose feature is most cosine-similar to the concept embedding.
pub fn baseline_region_word(
    query: &crate::scenario::RegionFeatureSet,
    w_c: &[f64],
) -> Result<usize> {
    if w_c.len() != query.d() {
        return Err(Error::Shape(format!(
            "embedding dim {} vs feature dim {}",
            w_c.len(),
            query.d()
        )));
    }
    let scores: Vec<f64> = query
        .rows()
        .map(|f| math::cosine(f, w_c).ok_or_else(|| Error::ZeroVector("text embedding".into())))
        .collect::<Result<_>>()?;
    Ok(math::argmax(&scores).expect("non-empty query"))
}

/// Largest region (lowest index on ties).
pub fn baseline_max_size(areas: &[f64]) -> Result<usize> {
    math::argmax(areas).ok_or_else(|| Error::Empty("no region areas".into()))
}
