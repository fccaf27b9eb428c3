use std::collections::HashMap;

use crate::corpus::ConceptId;
use crate::scenario::TextEmbeddingTable;
use crate::{math, Error, Result};

/// Fixed logit scale for image-caption cosine similarities.
pub const DEFAULT_TEMPERATURE: f64 = 10.0;

/// Frozen classifier whose rows are unit-normalised concept embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct OpenVocabClassifier {
    d: usize,
    concepts: Vec<ConceptId>,
    rows: Vec<f64>,
    row_of: HashMap<ConceptId, usize>,
}

impl OpenVocabClassifier {
    /// One row per concept in `concepts`, in the order given.
    pub fn from_table<I>(table: &TextEmbeddingTable, concepts: I) -> Result<Self>
    where
        I: IntoIterator<Item = ConceptId>,
    {
        let mut rows = Vec::new();
        let mut ids = Vec::new();
        for c in concepts {
            let w = table.get(c).ok_or(Error::UnknownConcept(c.0))?;
            rows.extend(
                math::normalized(w).ok_or_else(|| Error::ZeroVector(format!("concept {c}")))?,
            );
            ids.push(c);
        }
        Self::from_rows(table.d(), ids, rows)
    }

    /// Rows are normalised on the way in.
    pub fn from_rows(d: usize, concepts: Vec<ConceptId>, rows: Vec<f64>) -> Result<Self> {
        if concepts.is_empty() {
            return Err(Error::Empty("classifier has no concepts".into()));
        }
        if rows.len() != concepts.len() * d {
            return Err(Error::Shape(format!(
                "{} values for {} rows of {d}",
                rows.len(),
                concepts.len()
            )));
        }
        let mut unit = Vec::with_capacity(rows.len());
        for (c, r) in concepts.iter().zip(rows.chunks(d)) {
            unit.extend(
                math::normalized(r).ok_or_else(|| Error::ZeroVector(format!("concept {c}")))?,
            );
        }
        Self::from_unit_rows(d, concepts, unit)
    }

    /// Rows taken as stored, so a saved classifier reloads bit for bit.
    pub(crate) fn from_unit_rows(
        d: usize,
        concepts: Vec<ConceptId>,
        unit: Vec<f64>,
    ) -> Result<Self> {
        if concepts.is_empty() || unit.len() != concepts.len() * d {
            return Err(Error::Shape(format!(
                "{} values for {} rows of {d}",
                unit.len(),
                concepts.len()
            )));
        }
        if unit.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("classifier rows".into()));
        }
        let mut row_of = HashMap::new();
        for (i, &c) in concepts.iter().enumerate() {
            if row_of.insert(c, i).is_some() {
                return Err(Error::Config(format!(
                    "concept {c} appears twice in the classifier"
                )));
            }
        }
        Ok(Self {
            d,
            concepts,
            rows: unit,
            row_of,
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Number of classes `K`.
    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    pub fn concepts(&self) -> &[ConceptId] {
        &self.concepts
    }

    pub fn row_index(&self, c: ConceptId) -> Option<usize> {
        self.row_of.get(&c).copied()
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.rows[k * self.d..(k + 1) * self.d]
    }

    pub fn rows(&self) -> &[f64] {
        &self.rows
    }

    /// `s = W f`.
    pub fn logits(&self, f: &[f64]) -> Vec<f64> {
        self.rows.chunks(self.d).map(|w| math::dot(w, f)).collect()
    }

    /// `Wᵀ g`.
    pub fn transpose_mul(&self, g: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.d];
        for (w, gk) in self.rows.chunks(self.d).zip(g) {
            for (o, v) in out.iter_mut().zip(w) {
                *o += gk * v;
            }
        }
        out
    }
}

/// `-log σ(s_c) - Σ_{k≠c} log(1 - σ(s_k))`, via softplus.
pub fn bce_from_logits(logits: &[f64], positive: usize) -> f64 {
    logits
        .iter()
        .enumerate()
        .map(|(k, &s)| {
            if k == positive {
                math::softplus(-s)
            } else {
                math::softplus(s)
            }
        })
        .sum()
}

/// Region-word BCE of a prototype against the whole vocabulary.
pub fn region_word_loss(
    f_p: &[f64],
    classifier: &OpenVocabClassifier,
    concept: ConceptId,
) -> Result<f64> {
    if f_p.len() != classifier.d() {
        return Err(Error::Shape(format!(
            "prototype dim {} vs classifier dim {}",
            f_p.len(),
            classifier.d()
        )));
    }
    let c = classifier
        .row_index(concept)
        .ok_or(Error::UnknownConcept(concept.0))?;
    Ok(bce_from_logits(&classifier.logits(f_p), c))
}

/// In-batch image-caption BCE: diagonal pairs positive, the rest negative,
/// averaged over images.
pub fn image_text_loss(
    images: &[Vec<f64>],
    captions: &[Vec<f64>],
    temperature: f64,
) -> Result<f64> {
    if images.is_empty() || images.len() != captions.len() {
        return Err(Error::Shape(format!(
            "{} images vs {} captions",
            images.len(),
            captions.len()
        )));
    }
    let unit = |rows: &[Vec<f64>], what: &str| -> Result<Vec<Vec<f64>>> {
        rows.iter()
            .enumerate()
            .map(|(i, r)| {
                math::normalized(r).ok_or_else(|| Error::ZeroVector(format!("{what} row {i}")))
            })
            .collect()
    };
    let xs = unit(images, "image")?;
    let ts = unit(captions, "caption")?;
    let b = xs.len();
    let mut total = 0.0;
    for (a, x) in xs.iter().enumerate() {
        let logits: Vec<f64> = ts.iter().map(|t| temperature * math::dot(x, t)).collect();
        total += bce_from_logits(&logits, a);
    }
    Ok(total / b as f64)
}
