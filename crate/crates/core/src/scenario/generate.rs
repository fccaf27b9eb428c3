use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{BBox, CaptionRule, RegionFeatureSet, Scenario, ScenarioTruth, TextEmbeddingTable};
use crate::corpus::{CaptionRecord, ConceptId, Lexicon};
use crate::{math, Error, Result};

/// Whether concept prototypes are made mutually orthogonal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Orthogonalize {
    /// Orthogonalise when `num_concepts <= d`, otherwise leave random.
    Auto,
    /// Always orthogonalise; generation fails when `num_concepts > d`.
    Always,
    Never,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub num_concepts: usize,
    pub d: usize,
    /// Proposals per image.
    pub n: usize,
    /// Images whose primary caption concept is each concept.
    pub images_per_concept: usize,
    /// Unmentioned clutter objects per image; their proposals fill the
    /// regions not taken by caption concepts.
    pub distractor_count: usize,
    /// Per-dimension standard deviation of region feature noise.
    pub noise_sigma: f64,
    /// Probability that a caption carries a second concept.
    pub multi_concept_rate: f64,
    /// Probability that the second concept is the primary's fixed companion
    /// (concepts are paired 0–1, 2–3, ...) rather than a uniform pick.
    pub companion_affinity: f64,
    /// Inclusive range of true instances per caption concept.
    pub instances_per_image: (usize, usize),
    pub orthogonalize: Orthogonalize,
    /// Rotation (degrees) between a concept's text embedding and its visual
    /// prototype. Zero means perfectly aligned.
    pub misaligned_text_deg: f64,
    /// Probability that the largest region of an image is a true region of
    /// its primary concept.
    pub max_size_bias: f64,
    pub boxes: bool,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            num_concepts: 50,
            d: 32,
            n: 16,
            images_per_concept: 25,
            distractor_count: 3,
            noise_sigma: 0.05,
            multi_concept_rate: 0.3,
            companion_affinity: 0.5,
            instances_per_image: (1, 2),
            orthogonalize: Orthogonalize::Auto,
            misaligned_text_deg: 0.0,
            max_size_bias: 0.5,
            boxes: false,
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.num_concepts == 0 || self.d == 0 || self.n == 0 || self.images_per_concept == 0 {
            return bad("num_concepts, d, n and images_per_concept must be at least 1");
        }
        if self.distractor_count == 0 {
            return bad("distractor_count must be at least 1");
        }
        let (lo, hi) = self.instances_per_image;
        if lo == 0 || lo > hi {
            return bad("instances_per_image must satisfy 1 <= min <= max");
        }
        let worst = if self.multi_concept_rate > 0.0 {
            2 * hi
        } else {
            hi
        };
        if worst > self.n {
            return bad("n is too small for the maximum number of true instances");
        }
        if !(0.0..=1.0).contains(&self.multi_concept_rate)
            || !(0.0..=1.0).contains(&self.companion_affinity)
            || !(0.0..=1.0).contains(&self.max_size_bias)
        {
            return bad("rates must lie in [0, 1]");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma must be finite and non-negative");
        }
        if !self.misaligned_text_deg.is_finite() {
            return bad("misaligned_text_deg must be finite");
        }
        if self.orthogonalize == Orthogonalize::Always && self.num_concepts > self.d {
            return Err(Error::Config(format!(
                "cannot orthogonalise {} prototypes in {} dimensions",
                self.num_concepts, self.d
            )));
        }
        Ok(())
    }

    fn orthogonal(&self) -> bool {
        match self.orthogonalize {
            Orthogonalize::Always => true,
            Orthogonalize::Auto => self.num_concepts <= self.d,
            Orthogonalize::Never => false,
        }
    }
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Vec<f64> {
    (0..d)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn unit<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Vec<f64> {
    loop {
        if let Some(u) = math::normalized(&gaussian(rng, d)) {
            return u;
        }
    }
}

/// Removes the components along `basis` (assumed orthonormal) and normalises.
fn orthonormal_against(v: &mut Vec<f64>, basis: &[Vec<f64>]) -> bool {
    // two passes keep round-off orthogonality near machine precision
    for _ in 0..2 {
        for b in basis {
            let p = math::dot(v, b);
            for (x, y) in v.iter_mut().zip(b) {
                *x -= p * y;
            }
        }
    }
    match math::normalized(v) {
        Some(u) if math::norm(v) > 1e-8 => {
            *v = u;
            true
        }
        _ => false,
    }
}

fn prototypes<R: Rng + ?Sized>(config: &ScenarioConfig, rng: &mut R) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(config.num_concepts);
    for _ in 0..config.num_concepts {
        if config.orthogonal() {
            loop {
                let mut v = gaussian(rng, config.d);
                if orthonormal_against(&mut v, &out) {
                    out.push(v);
                    break;
                }
            }
        } else {
            out.push(unit(rng, config.d));
        }
    }
    out
}

fn text_embedding<R: Rng + ?Sized>(proto: &[f64], degrees: f64, rng: &mut R) -> Vec<f64> {
    if degrees == 0.0 || proto.len() < 2 {
        return proto.to_vec();
    }
    let basis = [proto.to_vec()];
    let mut v = gaussian(rng, proto.len());
    while !orthonormal_against(&mut v, &basis) {
        v = gaussian(rng, proto.len());
    }
    let theta = degrees.to_radians();
    let w: Vec<f64> = proto
        .iter()
        .zip(&v)
        .map(|(p, q)| theta.cos() * p + theta.sin() * q)
        .collect();
    math::normalized(&w).expect("rotation of a unit vector is non-zero")
}

fn companion(c: usize, k: usize) -> usize {
    if c ^ 1 < k {
        c ^ 1
    } else {
        (c + 1) % k
    }
}

fn term(c: usize) -> String {
    format!("obj{c}")
}

/// Builds a synthetic world: captions, features, text embeddings and truth.
pub fn generate_scenario<R: Rng + ?Sized>(
    config: &ScenarioConfig,
    rng: &mut R,
) -> Result<Scenario> {
    config.validate()?;
    let k = config.num_concepts;
    let (n, d) = (config.n, config.d);
    let protos = prototypes(config, rng);

    let mut rows = BTreeMap::new();
    for (c, p) in protos.iter().enumerate() {
        rows.insert(
            ConceptId(c),
            text_embedding(p, config.misaligned_text_deg, rng),
        );
    }
    let text = TextEmbeddingTable::new(d, CaptionRule::MeanOfConcepts, rows)?;
    let lexicon = Lexicon::new((0..k).map(term))?;

    let mut records = Vec::new();
    let mut sets = Vec::new();
    let mut truth = ScenarioTruth::new();

    for primary in 0..k {
        for _ in 0..config.images_per_concept {
            let image_id = format!("img{:06}", records.len());

            let mut concepts = vec![primary];
            if k > 1 && rng.random_bool(config.multi_concept_rate) {
                let second = if rng.random_bool(config.companion_affinity) {
                    companion(primary, k)
                } else {
                    let mut c = rng.random_range(0..k - 1);
                    if c >= primary {
                        c += 1;
                    }
                    c
                };
                concepts.push(second);
            }

            // (concept, is_true) per region before shuffling; None = background noise
            let mut layout: Vec<(Option<usize>, bool)> = Vec::with_capacity(n);
            let (lo, hi) = config.instances_per_image;
            for &c in &concepts {
                for _ in 0..rng.random_range(lo..=hi) {
                    layout.push((Some(c), true));
                }
            }
            let mut others: Vec<usize> = (0..k).filter(|c| !concepts.contains(c)).collect();
            others.shuffle(rng);
            others.truncate(config.distractor_count);
            let mut slot = 0;
            while layout.len() < n {
                if others.is_empty() {
                    layout.push((None, false));
                } else if slot < others.len() {
                    layout.push((Some(others[slot]), false));
                    slot += 1;
                } else {
                    layout.push((Some(others[rng.random_range(0..others.len())]), false));
                }
            }
            layout.shuffle(rng);

            let mut features = Vec::with_capacity(n * d);
            for &(c, _) in &layout {
                let base = match c {
                    Some(c) => protos[c].clone(),
                    None => unit(rng, d),
                };
                loop {
                    let row: Vec<f64> = base
                        .iter()
                        .map(|b| b + config.noise_sigma * rng.sample::<f64, _>(StandardNormal))
                        .collect();
                    if math::norm(&row) > 1e-12 {
                        features.extend(row);
                        break;
                    }
                }
            }

            let primary_regions: Vec<usize> = (0..n)
                .filter(|&i| layout[i] == (Some(primary), true))
                .collect();
            let other_regions: Vec<usize> = (0..n)
                .filter(|&i| layout[i] != (Some(primary), true))
                .collect();
            let target = if rng.random_bool(config.max_size_bias) || other_regions.is_empty() {
                primary_regions[rng.random_range(0..primary_regions.len())]
            } else {
                other_regions[rng.random_range(0..other_regions.len())]
            };

            let (areas, boxes) = if config.boxes {
                let mut dims: Vec<(f64, f64)> = (0..n)
                    .map(|_| (rng.random_range(5.0..40.0), rng.random_range(5.0..40.0)))
                    .collect();
                let max_w = dims
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| *i != target)
                    .map(|(_, v)| v.0)
                    .fold(0.0, f64::max);
                let max_h = dims
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| *i != target)
                    .map(|(_, v)| v.1)
                    .fold(0.0, f64::max);
                dims[target] = (
                    max_w + rng.random_range(1.0..5.0),
                    max_h + rng.random_range(1.0..5.0),
                );
                let boxes: Vec<BBox> = dims
                    .into_iter()
                    .map(|(w, h)| {
                        let x1 = rng.random_range(0.0..60.0);
                        let y1 = rng.random_range(0.0..60.0);
                        BBox {
                            x1,
                            y1,
                            x2: x1 + w,
                            y2: y1 + h,
                        }
                    })
                    .collect();
                (None, Some(boxes))
            } else {
                let mut areas: Vec<f64> = (0..n).map(|_| rng.random_range(1.0..100.0)).collect();
                let max_other = areas
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| *i != target)
                    .map(|(_, a)| *a)
                    .fold(0.0, f64::max);
                areas[target] = max_other + rng.random_range(1.0..10.0);
                (Some(areas), None)
            };

            for (i, &(c, is_true)) in layout.iter().enumerate() {
                if let (Some(c), true) = (c, is_true) {
                    truth.insert(&image_id, i, ConceptId(c));
                    if let Some(b) = &boxes {
                        truth.insert_box(&image_id, ConceptId(c), b[i]);
                    }
                }
            }

            let caption = format!(
                "a photo of {}",
                concepts
                    .iter()
                    .map(|&c| term(c))
                    .collect::<Vec<_>>()
                    .join(" and ")
            );
            let mut record = CaptionRecord::new(image_id.clone(), caption);
            record.concepts = concepts.iter().map(|&c| ConceptId(c)).collect();
            records.push(record);
            sets.push(RegionFeatureSet::new(
                image_id, n, d, features, areas, boxes,
            )?);
        }
    }

    Ok(Scenario::assemble(
        config.clone(),
        lexicon,
        records,
        sets,
        text,
        truth,
        protos,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_concept_index, extract_concepts};

    fn small() -> ScenarioConfig {
        ScenarioConfig {
            num_concepts: 6,
            d: 8,
            n: 6,
            images_per_concept: 5,
            distractor_count: 2,
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn zero_noise_true_regions_are_identical_directions() {
        let cfg = ScenarioConfig {
            noise_sigma: 0.0,
            ..small()
        };
        let s = Scenario::generate(&cfg).unwrap();
        for c in 0..cfg.num_concepts {
            let mut rows = Vec::new();
            for set in &s.features {
                for r in s.truth.true_regions(&set.image_id, ConceptId(c)) {
                    rows.push(set.row(r).to_vec());
                }
            }
            for a in &rows {
                for b in &rows {
                    assert!((math::cosine(a, b).unwrap() - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn orthogonal_prototypes_give_zero_cross_similarity() {
        let cfg = ScenarioConfig {
            noise_sigma: 0.0,
            orthogonalize: Orthogonalize::Always,
            ..small()
        };
        let s = Scenario::generate(&cfg).unwrap();
        for set in &s.features {
            for &(r, c) in s.truth.pairs(&set.image_id) {
                for j in 0..set.n() {
                    let same = s.truth.true_regions(&set.image_id, c).contains(&j);
                    if !same {
                        assert!(math::cosine(set.row(r), set.row(j)).unwrap().abs() < 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn single_concept_captions_without_multi_rate() {
        let cfg = ScenarioConfig {
            multi_concept_rate: 0.0,
            ..small()
        };
        let s = Scenario::generate(&cfg).unwrap();
        assert!(s.records.iter().all(|r| r.concepts.len() == 1));
    }

    #[test]
    fn every_group_member_has_a_true_region() {
        let cfg = ScenarioConfig {
            multi_concept_rate: 0.7,
            ..small()
        };
        let s = Scenario::generate(&cfg).unwrap();
        let mut records = s.records.clone();
        let idx = build_concept_index(&mut records, &s.lexicon, 1).unwrap();
        for (c, g) in idx.iter() {
            for img in &g.images {
                assert!(!s.truth.true_regions(img, c).is_empty());
            }
        }
        for r in &s.records {
            assert_eq!(extract_concepts(&r.caption, &s.lexicon), r.concepts);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = ScenarioConfig {
            num_concepts: 200,
            d: 32,
            n: 16,
            images_per_concept: 25,
            seed: 7,
            ..Default::default()
        };
        let a = Scenario::generate(&cfg).unwrap();
        let b = Scenario::generate(&cfg).unwrap();
        assert_eq!(a.features, b.features);
        assert_eq!(a.records, b.records);
        assert_eq!(a.text, b.text);
        assert_eq!(a.truth, b.truth);
    }

    #[test]
    fn orthogonalisation_needs_room() {
        let cfg = ScenarioConfig {
            num_concepts: 9,
            d: 8,
            orthogonalize: Orthogonalize::Always,
            ..small()
        };
        assert!(matches!(Scenario::generate(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn max_size_bias_one_makes_primary_largest() {
        for boxes in [false, true] {
            let cfg = ScenarioConfig {
                max_size_bias: 1.0,
                boxes,
                ..small()
            };
            let s = Scenario::generate(&cfg).unwrap();
            for (set, rec) in s.features.iter().zip(&s.records) {
                let largest = math::argmax(set.areas().unwrap()).unwrap();
                assert!(s
                    .truth
                    .true_regions(&set.image_id, rec.concepts[0])
                    .contains(&largest));
            }
        }
    }

    #[test]
    fn misaligned_text_rotates_by_requested_angle() {
        let cfg = ScenarioConfig {
            misaligned_text_deg: 60.0,
            ..small()
        };
        let s = Scenario::generate(&cfg).unwrap();
        for (c, w) in s.text.iter() {
            let cos = math::cosine(w, &s.prototypes[c.0]).unwrap();
            assert!((cos - 0.5).abs() < 1e-9);
        }
    }

    #[test]
    fn boxes_are_recorded_in_truth() {
        let cfg = ScenarioConfig {
            boxes: true,
            ..small()
        };
        let s = Scenario::generate(&cfg).unwrap();
        assert!(s.truth.has_boxes());
        for set in &s.features {
            for &(r, c) in s.truth.pairs(&set.image_id) {
                assert!(s
                    .truth
                    .gt_boxes(&set.image_id, c)
                    .contains(&set.boxes().unwrap()[r]));
            }
        }
    }
}
