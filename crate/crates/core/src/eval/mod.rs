//! Cover-rate evaluation of pseudo labels and strategy comparison.

mod ablate;
mod report;

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{ConceptGroupIndex, ConceptId};
use crate::discovery::{
    baseline_max_size, baseline_region_word, build_similarity_matrix, discover_prototype,
    heuristic_discovery,
};
use crate::scenario::{BBox, Scenario, ScenarioTruth};
use crate::seeds::{self, Stream};
use crate::training::ModelState;
use crate::{Error, Result};

pub use ablate::{ablate, AblationAxis, AblationRow};
pub use report::{ConceptCover, EvalReport, StrategyReport};

/// IoU of two axis-aligned boxes; 0 when they do not overlap.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let w = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let h = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = w * h;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoverMode {
    /// The assigned region is one of the true regions of the concept.
    #[default]
    Index,
    /// The assigned box overlaps its best-matching ground-truth box of the
    /// concept with IoU above 0.5.
    Box,
}

/// One hard assignment of a concept to a query region.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabel {
    pub image_id: String,
    pub concept: ConceptId,
    pub region: usize,
    pub bbox: Option<BBox>,
}

/// Fraction of labels that cover their concept.
pub fn cover_rate(labels: &[PseudoLabel], truth: &ScenarioTruth, mode: CoverMode) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::Empty("no pseudo labels to score".into()));
    }
    let mut hits = 0usize;
    for l in labels {
        if covers(l, truth, mode)? {
            hits += 1;
        }
    }
    Ok(hits as f64 / labels.len() as f64)
}

fn covers(l: &PseudoLabel, truth: &ScenarioTruth, mode: CoverMode) -> Result<bool> {
    Ok(match mode {
        CoverMode::Index => truth
            .true_regions(&l.image_id, l.concept)
            .contains(&l.region),
        CoverMode::Box => {
            let bx = l.bbox.as_ref().ok_or_else(|| {
                Error::Config(format!("box mode needs a box for image {}", l.image_id))
            })?;
            truth
                .gt_boxes(&l.image_id, l.concept)
                .iter()
                .map(|g| iou(bx, g))
                .fold(0.0, f64::max)
                > 0.5
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    RegionRegion,
    RegionWord,
    MaxSize,
    Heuristic,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Self::RegionRegion,
        Self::RegionWord,
        Self::MaxSize,
        Self::Heuristic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::RegionRegion => "region_region",
            Self::RegionWord => "region_word",
            Self::MaxSize => "max_size",
            Self::Heuristic => "heuristic",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub group_size: usize,
    pub seed: u64,
    pub mode: CoverMode,
}

/// A query image and the supports it is evaluated against.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalQuery {
    pub concept: ConceptId,
    pub query: String,
    pub supports: Vec<String>,
}

/// Every member of every concept group serves as a query once, with
/// `group_size - 1` supports drawn from the other members: without
/// replacement when there are enough, with replacement otherwise. A
/// singleton group uses the query itself as its support.
pub fn plan_queries(
    index: &ConceptGroupIndex,
    group_size: usize,
    seed: u64,
) -> Result<Vec<EvalQuery>> {
    if group_size < 2 {
        return Err(Error::Config(format!(
            "group_size must be at least 2, got {group_size}"
        )));
    }
    let m = group_size - 1;
    let mut rng = seeds::rng_for(seed, Stream::Eval);
    let mut plan = Vec::new();
    for (concept, entry) in index.iter() {
        for (q, query) in entry.images.iter().enumerate() {
            let others: Vec<&String> = entry
                .images
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != q)
                .map(|(_, s)| s)
                .collect();
            let supports: Vec<String> = if others.is_empty() {
                vec![query.clone(); m]
            } else if others.len() >= m {
                index::sample(&mut rng, others.len(), m)
                    .into_iter()
                    .map(|i| others[i].clone())
                    .collect()
            } else {
                (0..m)
                    .map(|_| others[rng.random_range(0..others.len())].clone())
                    .collect()
            };
            plan.push(EvalQuery {
                concept,
                query: query.clone(),
                supports,
            });
        }
    }
    Ok(plan)
}

/// Hard assignments for every planned query. Region features come from the
/// state's store; areas and boxes from the scenario.
pub fn pseudo_labels(
    state: &ModelState,
    scenario: &Scenario,
    plan: &[EvalQuery],
    strategy: Strategy,
) -> Result<Vec<PseudoLabel>> {
    plan.par_iter()
        .map(|q| label_one(state, scenario, q, strategy))
        .collect()
}

fn label_one(
    state: &ModelState,
    scenario: &Scenario,
    q: &EvalQuery,
    strategy: Strategy,
) -> Result<PseudoLabel> {
    let set = |id: &str| -> Result<crate::scenario::RegionFeatureSet> {
        let template = scenario
            .regions(id)
            .ok_or_else(|| Error::Config(format!("image {id} has no region features")))?;
        state.region_set(template)
    };
    let query = set(&q.query)?;
    let region = match strategy {
        Strategy::MaxSize => {
            let areas = query
                .areas()
                .ok_or_else(|| Error::Config(format!("image {} has no areas", q.query)))?;
            baseline_max_size(areas)?
        }
        Strategy::RegionWord => {
            let k = state
                .classifier
                .row_index(q.concept)
                .ok_or(Error::UnknownConcept(q.concept.0))?;
            baseline_region_word(&query, state.classifier.row(k))?
        }
        Strategy::RegionRegion | Strategy::Heuristic => {
            let supports = q
                .supports
                .iter()
                .map(|s| set(s))
                .collect::<Result<Vec<_>>>()?;
            let refs: Vec<_> = supports.iter().collect();
            let s = build_similarity_matrix(&query, &refs, &state.guide(q.concept)?)?;
            if strategy == Strategy::Heuristic {
                heuristic_discovery(&s)
            } else {
                discover_prototype(&s, &state.head, &query, q.concept)?.argmax()
            }
        }
    };
    Ok(PseudoLabel {
        image_id: q.query.clone(),
        concept: q.concept,
        region,
        bbox: query.boxes().map(|b| b[region]),
    })
}

/// Cover rate of one strategy under `options`.
pub fn evaluate(
    state: &ModelState,
    scenario: &Scenario,
    index: &ConceptGroupIndex,
    options: &EvalOptions,
    strategy: Strategy,
) -> Result<f64> {
    let plan = plan_queries(index, options.group_size, options.seed)?;
    cover_rate(
        &pseudo_labels(state, scenario, &plan, strategy)?,
        &scenario.truth,
        options.mode,
    )
}

/// All strategies on one shared query plan, overall and per concept.
pub fn compare_strategies(
    state: &ModelState,
    scenario: &Scenario,
    index: &ConceptGroupIndex,
    options: &EvalOptions,
) -> Result<EvalReport> {
    let plan = plan_queries(index, options.group_size, options.seed)?;
    let mut strategies = Vec::with_capacity(Strategy::ALL.len());
    for strategy in Strategy::ALL {
        let labels = pseudo_labels(state, scenario, &plan, strategy)?;
        strategies.push(StrategyReport::from_labels(
            strategy,
            &labels,
            &scenario.truth,
            options.mode,
        )?);
    }
    Ok(EvalReport {
        options: *options,
        strategies,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn label(image: &str, region: usize, c: usize) -> PseudoLabel {
        PseudoLabel {
            image_id: image.into(),
            concept: ConceptId(c),
            region,
            bbox: None,
        }
    }

    #[test]
    fn iou_examples() {
        let a = BBox::new(0.0, 0.0, 2.0, 2.0).unwrap();
        let b = BBox::new(1.0, 1.0, 3.0, 3.0).unwrap();
        assert!((iou(&a, &b) - 1.0 / 7.0).abs() < 1e-15);
        assert_eq!(iou(&a, &a), 1.0);
        let far = BBox::new(5.0, 5.0, 6.0, 6.0).unwrap();
        assert_eq!(iou(&a, &far), 0.0);
    }

    #[test]
    fn three_of_four_covered() {
        let mut truth = ScenarioTruth::new();
        for (img, r) in [("a", 1), ("b", 2), ("c", 0), ("d", 3)] {
            truth.insert(img, r, ConceptId(7));
        }
        let labels = [
            label("a", 1, 7),
            label("b", 2, 7),
            label("c", 0, 7),
            label("d", 0, 7),
        ];
        assert_eq!(cover_rate(&labels, &truth, CoverMode::Index).unwrap(), 0.75);
    }

    #[test]
    fn wrong_concept_is_not_covered() {
        let mut truth = ScenarioTruth::new();
        truth.insert("a", 1, ConceptId(3));
        assert_eq!(
            cover_rate(&[label("a", 1, 4)], &truth, CoverMode::Index).unwrap(),
            0.0
        );
    }

    #[test]
    fn empty_labels_rejected() {
        assert!(cover_rate(&[], &ScenarioTruth::new(), CoverMode::Index).is_err());
    }

    #[test]
    fn box_mode_uses_best_matching_box() {
        let mut truth = ScenarioTruth::new();
        truth.insert_box(
            "a",
            ConceptId(1),
            BBox::new(10.0, 10.0, 12.0, 12.0).unwrap(),
        );
        truth.insert_box("a", ConceptId(1), BBox::new(0.0, 0.0, 2.0, 2.0).unwrap());
        let mut l = label("a", 0, 1);
        // IoU 3 / 4 with the second box, 0 with the first.
        l.bbox = Some(BBox::new(0.0, 0.0, 2.0, 1.5).unwrap());
        assert_eq!(
            cover_rate(std::slice::from_ref(&l), &truth, CoverMode::Box).unwrap(),
            1.0
        );
        // IoU 2 / 6.
        l.bbox = Some(BBox::new(1.0, 0.0, 3.0, 2.0).unwrap());
        assert_eq!(
            cover_rate(std::slice::from_ref(&l), &truth, CoverMode::Box).unwrap(),
            0.0
        );
    }
}
