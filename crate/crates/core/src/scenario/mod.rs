//! Region-feature worlds with oracle labels.
//!
//! A scenario bundles captions, per-image region features, concept text
//! embeddings and the ground truth saying which regions instantiate which
//! concept. Real backbone features can be loaded through [`codec`].

pub mod codec;
mod generate;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::{CaptionRecord, ConceptId, Lexicon};
use crate::{math, Error, Result};

pub use generate::{generate_scenario, Orthogonalize, ScenarioConfig};

/// Axis-aligned box in abstract pixel units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let b = Self { x1, y1, x2, y2 };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x1, self.y1, self.x2, self.y2]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.x1 >= self.x2 || self.y1 >= self.y2 {
            return Err(Error::InvalidBox(format!("{self:?}")));
        }
        Ok(())
    }

    pub fn area(&self) -> f64 {
        (self.x2 - self.x1) * (self.y2 - self.y1)
    }
}

/// The `n` region proposals of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionFeatureSet {
    pub image_id: String,
    n: usize,
    d: usize,
    features: Vec<f64>,
    areas: Option<Vec<f64>>,
    boxes: Option<Vec<BBox>>,
}

impl RegionFeatureSet {
    /// Validates shapes, finiteness, non-zero rows and box/area agreement.
    pub fn new(
        image_id: impl Into<String>,
        n: usize,
        d: usize,
        features: Vec<f64>,
        areas: Option<Vec<f64>>,
        boxes: Option<Vec<BBox>>,
    ) -> Result<Self> {
        let image_id = image_id.into();
        if n == 0 || d == 0 {
            return Err(Error::Shape(format!(
                "image {image_id}: n and d must be positive"
            )));
        }
        if features.len() != n * d {
            return Err(Error::Shape(format!(
                "image {image_id}: expected {} feature values, got {}",
                n * d,
                features.len()
            )));
        }
        if let Some(bad) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "image {image_id}: region {}",
                bad / d
            )));
        }
        for (i, row) in features.chunks(d).enumerate() {
            if row.iter().all(|&v| v == 0.0) {
                return Err(Error::ZeroVector(format!("image {image_id}: region {i}")));
            }
        }
        let areas = match (areas, &boxes) {
            (Some(a), _) => Some(a),
            (None, Some(b)) => Some(b.iter().map(BBox::area).collect()),
            (None, None) => None,
        };
        if let Some(a) = &areas {
            if a.len() != n {
                return Err(Error::Shape(format!(
                    "image {image_id}: {} areas for {n} regions",
                    a.len()
                )));
            }
            if a.iter().any(|v| !v.is_finite() || *v <= 0.0) {
                return Err(Error::NonFinite(format!(
                    "image {image_id}: areas must be positive and finite"
                )));
            }
        }
        if let Some(b) = &boxes {
            if b.len() != n {
                return Err(Error::Shape(format!(
                    "image {image_id}: {} boxes for {n} regions",
                    b.len()
                )));
            }
            for (i, bx) in b.iter().enumerate() {
                bx.validate()
                    .map_err(|_| Error::InvalidBox(format!("image {image_id}: region {i}")))?;
                let a = areas.as_ref().expect("derived from boxes")[i];
                if (a - bx.area()).abs() > 1e-9 * a.max(1.0) {
                    return Err(Error::Shape(format!(
                        "image {image_id}: area of region {i} disagrees with its box"
                    )));
                }
            }
        }
        Ok(Self {
            image_id,
            n,
            d,
            features,
            areas,
            boxes,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.features.chunks(self.d)
    }

    /// Row-major `n × d` values.
    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn areas(&self) -> Option<&[f64]> {
        self.areas.as_deref()
    }

    pub fn boxes(&self) -> Option<&[BBox]> {
        self.boxes.as_deref()
    }

    /// Same set with new feature values, keeping id, areas and boxes.
    pub fn with_features(&self, features: Vec<f64>) -> Result<Self> {
        Self::new(
            self.image_id.clone(),
            self.n,
            self.d,
            features,
            self.areas.clone(),
            self.boxes.clone(),
        )
    }

    /// Whole-image proxy feature: the mean region feature.
    pub fn image_feature(&self) -> Vec<f64> {
        image_feature(&self.features, self.n, self.d)
    }
}

/// Column means of a row-major `n × d` matrix.
pub fn image_feature(features: &[f64], n: usize, d: usize) -> Vec<f64> {
    let mut mean = vec![0.0; d];
    for row in features.chunks(d) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    mean
}

/// How caption embeddings are derived from concept embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CaptionRule {
    /// Mean of the caption's concept embeddings, unit-normalised.
    MeanOfConcepts = 0,
}

/// Concept text embeddings `w_c`.
#[derive(Debug, Clone, PartialEq)]
pub struct TextEmbeddingTable {
    d: usize,
    rule: CaptionRule,
    rows: BTreeMap<ConceptId, Vec<f64>>,
}

impl TextEmbeddingTable {
    pub fn new(d: usize, rule: CaptionRule, rows: BTreeMap<ConceptId, Vec<f64>>) -> Result<Self> {
        for (c, w) in &rows {
            if w.len() != d {
                return Err(Error::Shape(format!(
                    "concept {c}: embedding has {} dims, expected {d}",
                    w.len()
                )));
            }
            if w.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("concept {c} embedding")));
            }
            if w.iter().all(|&v| v == 0.0) {
                return Err(Error::ZeroVector(format!("concept {c} embedding")));
            }
        }
        Ok(Self { d, rule, rows })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn rule(&self) -> CaptionRule {
        self.rule
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, c: ConceptId) -> Option<&[f64]> {
        self.rows.get(&c).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ConceptId, &[f64])> {
        self.rows.iter().map(|(&c, w)| (c, w.as_slice()))
    }

    /// Caption embedding for a set of concepts according to the rule tag.
    pub fn caption_embedding(&self, concepts: &[ConceptId]) -> Result<Vec<f64>> {
        if concepts.is_empty() {
            return Err(Error::Empty("caption has no concepts".into()));
        }
        let mut acc = vec![0.0; self.d];
        for &c in concepts {
            let w = self.get(c).ok_or(Error::UnknownConcept(c.0))?;
            let w = math::normalized(w).ok_or_else(|| Error::ZeroVector(format!("concept {c}")))?;
            for (a, v) in acc.iter_mut().zip(&w) {
                *a += v;
            }
        }
        math::normalized(&acc)
            .ok_or_else(|| Error::ZeroVector("caption embedding cancels out".into()))
    }
}

/// Which regions instantiate which concept.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScenarioTruth {
    regions: BTreeMap<String, Vec<(usize, ConceptId)>>,
    boxes: BTreeMap<(String, ConceptId), Vec<BBox>>,
}

impl ScenarioTruth {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, image: &str, region: usize, concept: ConceptId) {
        let list = self.regions.entry(image.to_string()).or_default();
        if !list.contains(&(region, concept)) {
            list.push((region, concept));
            list.sort();
        }
    }

    pub fn insert_box(&mut self, image: &str, concept: ConceptId, bx: BBox) {
        self.boxes
            .entry((image.to_string(), concept))
            .or_default()
            .push(bx);
    }

    pub fn pairs(&self, image: &str) -> &[(usize, ConceptId)] {
        self.regions.get(image).map_or(&[], Vec::as_slice)
    }

    /// True region indices for `(image, concept)`, ascending.
    pub fn true_regions(&self, image: &str, concept: ConceptId) -> Vec<usize> {
        self.pairs(image)
            .iter()
            .filter(|(_, c)| *c == concept)
            .map(|(r, _)| *r)
            .collect()
    }

    pub fn gt_boxes(&self, image: &str, concept: ConceptId) -> &[BBox] {
        self.boxes
            .get(&(image.to_string(), concept))
            .map_or(&[], Vec::as_slice)
    }

    pub fn has_boxes(&self) -> bool {
        !self.boxes.is_empty()
    }

    pub fn images(&self) -> impl Iterator<Item = &str> {
        self.regions.keys().map(String::as_str)
    }
}

/// A complete oracle-labelled dataset.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub lexicon: Lexicon,
    /// Captions with concepts already extracted.
    pub records: Vec<CaptionRecord>,
    pub features: Vec<RegionFeatureSet>,
    pub text: TextEmbeddingTable,
    pub truth: ScenarioTruth,
    /// Latent unit prototype per concept.
    pub prototypes: Vec<Vec<f64>>,
    by_id: HashMap<String, usize>,
}

impl Scenario {
    /// Generates the scenario from `config.seed`.
    pub fn generate(config: &ScenarioConfig) -> Result<Self> {
        let mut rng = crate::seeds::rng_for(config.seed, crate::seeds::Stream::Scenario);
        generate_scenario(config, &mut rng)
    }

    pub(crate) fn assemble(
        config: ScenarioConfig,
        lexicon: Lexicon,
        records: Vec<CaptionRecord>,
        features: Vec<RegionFeatureSet>,
        text: TextEmbeddingTable,
        truth: ScenarioTruth,
        prototypes: Vec<Vec<f64>>,
    ) -> Self {
        let by_id = features
            .iter()
            .enumerate()
            .map(|(i, f)| (f.image_id.clone(), i))
            .collect();
        Self {
            config,
            lexicon,
            records,
            features,
            text,
            truth,
            prototypes,
            by_id,
        }
    }

    pub fn image_index(&self, image_id: &str) -> Option<usize> {
        self.by_id.get(image_id).copied()
    }

    pub fn regions(&self, image_id: &str) -> Option<&RegionFeatureSet> {
        self.image_index(image_id).map(|i| &self.features[i])
    }

    pub fn record(&self, image_id: &str) -> Option<&CaptionRecord> {
        self.image_index(image_id).map(|i| &self.records[i])
    }

    pub fn n(&self) -> usize {
        self.config.n
    }

    pub fn d(&self) -> usize {
        self.config.d
    }

    /// Corpus file contents (`image_id<TAB>caption`).
    pub fn corpus_text(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&r.image_id);
            out.push('\t');
            out.push_str(&r.caption);
            out.push('\n');
        }
        out
    }
}
