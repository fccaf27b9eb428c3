use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{covers, CoverMode, EvalOptions, PseudoLabel, Strategy};
use crate::scenario::ScenarioTruth;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptCover {
    pub concept: usize,
    pub cover_rate: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyReport {
    pub strategy: Strategy,
    pub cover_rate: f64,
    pub samples: usize,
    pub per_concept: Vec<ConceptCover>,
}

impl StrategyReport {
    pub fn from_labels(
        strategy: Strategy,
        labels: &[PseudoLabel],
        truth: &ScenarioTruth,
        mode: CoverMode,
    ) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Empty("no pseudo labels to score".into()));
        }
        let mut tally: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
        let mut hits = 0;
        for l in labels {
            let hit = covers(l, truth, mode)?;
            let t = tally.entry(l.concept.0).or_default();
            t.0 += usize::from(hit);
            t.1 += 1;
            hits += usize::from(hit);
        }
        Ok(Self {
            strategy,
            cover_rate: hits as f64 / labels.len() as f64,
            samples: labels.len(),
            per_concept: tally
                .into_iter()
                .map(|(concept, (h, n))| ConceptCover {
                    concept,
                    cover_rate: h as f64 / n as f64,
                    samples: n,
                })
                .collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub options: EvalOptions,
    pub strategies: Vec<StrategyReport>,
}

impl EvalReport {
    pub fn get(&self, strategy: Strategy) -> Option<&StrategyReport> {
        self.strategies.iter().find(|s| s.strategy == strategy)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One overall row (`concept_id = all`) per strategy, then one row per
    /// concept.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("strategy,concept_id,cover_rate,samples\n");
        for s in &self.strategies {
            let name = s.strategy.name();
            let _ = writeln!(out, "{name},all,{},{}", s.cover_rate, s.samples);
            for c in &s.per_concept {
                let _ = writeln!(out, "{name},{},{},{}", c.concept, c.cover_rate, c.samples);
            }
        }
        out
    }
}
