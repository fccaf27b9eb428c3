use super::{DiscoveryHead, SimilarityMatrix};
use crate::corpus::ConceptId;
use crate::scenario::RegionFeatureSet;
use crate::{math, Error, Result};

/// Softmax-weighted combination of a query image's region features.
#[derive(Debug, Clone, PartialEq)]
pub struct Prototype {
    pub features: Vec<f64>,
    /// One weight per query proposal; a point of the probability simplex.
    pub weights: Vec<f64>,
    pub query: String,
    pub concept: ConceptId,
}

impl Prototype {
    /// `Σ p_i f_i` over the rows of a row-major `n × d` matrix.
    pub fn from_weights(
        weights: Vec<f64>,
        features: &[f64],
        d: usize,
        query: impl Into<String>,
        concept: ConceptId,
    ) -> Result<Self> {
        if features.len() != weights.len() * d {
            return Err(Error::Shape(format!(
                "{} weights for {} feature values",
                weights.len(),
                features.len()
            )));
        }
        let mut fp = vec![0.0; d];
        for (p, row) in weights.iter().zip(features.chunks(d)) {
            for (acc, v) in fp.iter_mut().zip(row) {
                *acc += p * v;
            }
        }
        Ok(Self {
            features: fp,
            weights,
            query: query.into(),
            concept,
        })
    }

    /// Proposal with the largest weight (lowest index on ties).
    pub fn argmax(&self) -> usize {
        math::argmax(&self.weights).expect("prototype has at least one weight")
    }
}

/// `p = softmax(Φ(S))` row-wise, then `f_p = Σ p_i f_i` with raw features.
pub fn discover_prototype(
    s: &SimilarityMatrix,
    head: &DiscoveryHead,
    query: &RegionFeatureSet,
    concept: ConceptId,
) -> Result<Prototype> {
    if query.n() != s.n() {
        return Err(Error::Shape(format!(
            "query has {} regions, matrix has {}",
            query.n(),
            s.n()
        )));
    }
    let logits = head.logits(s)?;
    if logits.iter().any(|l| !l.is_finite()) {
        return Err(Error::NonFinite(format!(
            "head logits for query {}",
            query.image_id
        )));
    }
    let p = math::softmax(&logits);
    Prototype::from_weights(
        p,
        query.features(),
        query.d(),
        query.image_id.clone(),
        concept,
    )
}
