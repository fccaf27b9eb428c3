use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{CaptionRecord, ConceptGroupIndex};
use crate::discovery::{
    DiscoveryHead, GuideWeights, HeadGrad, OpenVocabClassifier, RowLayout, DEFAULT_TEMPERATURE,
};
use crate::scenario::{RegionFeatureSet, Scenario, TextEmbeddingTable};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Images per mini-group (one query plus `group_size - 1` supports).
    pub group_size: usize,
    pub mini_groups_per_batch: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub lambda_region_word: f64,
    pub lambda_image_text: f64,
    pub hidden: usize,
    pub layout: RowLayout,
    /// Off replaces the guide weights by all ones (plain cosine).
    pub text_guidance: bool,
    pub temperature: f64,
    pub train_head: bool,
    pub train_features: bool,
    /// Steps between cover-rate evaluations; 0 disables them.
    pub eval_interval: usize,
    pub seed: u64,
    pub eval_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            group_size: 8,
            mini_groups_per_batch: 4,
            steps: 2000,
            learning_rate: 0.01,
            momentum: 0.9,
            lambda_region_word: 0.1,
            lambda_image_text: 0.1,
            hidden: 128,
            layout: RowLayout::Raw,
            text_guidance: true,
            temperature: DEFAULT_TEMPERATURE,
            train_head: true,
            train_features: true,
            eval_interval: 200,
            seed: 0,
            eval_seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.group_size < 2 {
            return bad("group_size must be at least 2");
        }
        if self.mini_groups_per_batch == 0 || self.hidden == 0 {
            return bad("mini_groups_per_batch and hidden must be at least 1");
        }
        if !(self.lambda_region_word >= 0.0 && self.lambda_image_text >= 0.0) {
            return bad("loss weights must be non-negative");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad("temperature must be positive");
        }
        Ok(())
    }
}

/// Which parameter groups receive updates. The classifier is always frozen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Trainable {
    pub head: bool,
    pub features: bool,
}

/// Learnable per-image region features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStore {
    n: usize,
    d: usize,
    ids: Vec<String>,
    index: HashMap<String, usize>,
    pub(crate) data: Vec<Vec<f64>>,
}

impl FeatureStore {
    pub fn from_sets(sets: &[RegionFeatureSet]) -> Result<Self> {
        let first = sets
            .first()
            .ok_or_else(|| Error::Empty("no feature sets".into()))?;
        let (n, d) = (first.n(), first.d());
        let mut store = Self {
            n,
            d,
            ids: Vec::new(),
            index: HashMap::new(),
            data: Vec::new(),
        };
        for s in sets {
            store.push(&s.image_id, s.n(), s.d(), s.features().to_vec())?;
        }
        Ok(store)
    }

    pub(crate) fn from_parts(n: usize, d: usize, entries: Vec<(String, Vec<f64>)>) -> Result<Self> {
        let mut store = Self {
            n,
            d,
            ids: Vec::new(),
            index: HashMap::new(),
            data: Vec::new(),
        };
        for (id, values) in entries {
            store.push(&id, n, d, values)?;
        }
        Ok(store)
    }

    fn push(&mut self, id: &str, n: usize, d: usize, values: Vec<f64>) -> Result<()> {
        if n != self.n || d != self.d || values.len() != n * d {
            return Err(Error::Shape(format!(
                "image {id} does not match store shape {}x{}",
                self.n, self.d
            )));
        }
        if self.index.insert(id.to_string(), self.ids.len()).is_some() {
            return Err(Error::DuplicateImage(id.to_string()));
        }
        self.ids.push(id.to_string());
        self.data.push(values);
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn slot(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.slot(id).map(|i| self.data[i].as_slice())
    }

    pub fn values(&self, slot: usize) -> &[f64] {
        &self.data[slot]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().flatten().all(|v| v.is_finite())
    }
}

/// Head, frozen classifier and learnable features.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub head: DiscoveryHead,
    pub classifier: OpenVocabClassifier,
    pub store: FeatureStore,
    pub trainable: Trainable,
    pub text_guidance: bool,
    pub temperature: f64,
}

impl ModelState {
    /// Fresh state for a scenario: He-initialised head sized for
    /// `config.group_size`, classifier over the index's concepts, features
    /// copied from the scenario.
    pub fn init<R: Rng + ?Sized>(
        scenario: &Scenario,
        index: &ConceptGroupIndex,
        config: &TrainConfig,
        rng: &mut R,
    ) -> Result<Self> {
        Self::from_parts(&scenario.features, &scenario.text, index, config, rng)
    }

    pub fn from_parts<R: Rng + ?Sized>(
        features: &[RegionFeatureSet],
        text: &TextEmbeddingTable,
        index: &ConceptGroupIndex,
        config: &TrainConfig,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let store = FeatureStore::from_sets(features)?;
        let head = DiscoveryHead::new(
            config.group_size - 1,
            store.n(),
            config.hidden,
            config.layout,
            rng,
        )?;
        let classifier = OpenVocabClassifier::from_table(text, index.concepts())?;
        if classifier.d() != store.d() {
            return Err(Error::Shape(format!(
                "text dim {} vs feature dim {}",
                classifier.d(),
                store.d()
            )));
        }
        Ok(Self {
            head,
            classifier,
            store,
            trainable: Trainable {
                head: config.train_head,
                features: config.train_features,
            },
            text_guidance: config.text_guidance,
            temperature: config.temperature,
        })
    }

    /// Guide weights for a concept under this state's guidance setting.
    pub fn guide(&self, concept: crate::corpus::ConceptId) -> Result<GuideWeights> {
        let k = self
            .classifier
            .row_index(concept)
            .ok_or(Error::UnknownConcept(concept.0))?;
        if self.text_guidance {
            crate::discovery::text_guide_weights(self.classifier.row(k))
        } else {
            Ok(GuideWeights::uniform(self.classifier.d()))
        }
    }

    /// Current features of an image as a validated set (areas/boxes taken
    /// from `template`).
    pub fn region_set(&self, template: &RegionFeatureSet) -> Result<RegionFeatureSet> {
        let values = self.store.get(&template.image_id).ok_or_else(|| {
            Error::Config(format!(
                "image {} is not in the feature store",
                template.image_id
            ))
        })?;
        template.with_features(values.to_vec())
    }

    pub fn is_finite(&self) -> bool {
        self.head.is_finite() && self.store.is_finite()
    }
}

/// Per-group gradients; feature gradients are keyed by store slot and only
/// present for images that took part in the batch.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub head: Option<HeadGrad>,
    pub features: BTreeMap<usize, Vec<f64>>,
}

impl GradientBundle {
    pub fn is_finite(&self) -> bool {
        self.head.as_ref().is_none_or(HeadGrad::is_finite)
            && self.features.values().flatten().all(|v| v.is_finite())
    }
}

/// Caption embedding per image id.
pub type CaptionEmbeddings = HashMap<String, Vec<f64>>;

pub fn caption_embeddings(
    records: &[CaptionRecord],
    table: &TextEmbeddingTable,
) -> Result<CaptionEmbeddings> {
    records
        .iter()
        .filter(|r| !r.concepts.is_empty())
        .map(|r| Ok((r.image_id.clone(), table.caption_embedding(&r.concepts)?)))
        .collect()
}
