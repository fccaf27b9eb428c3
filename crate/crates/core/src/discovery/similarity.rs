use crate::math;
use crate::scenario::RegionFeatureSet;
use crate::{Error, Result};

/// Per-dimension similarity weights `√d · |w_c| / ‖w_c‖`.
///
/// Entries are non-negative and the vector has ℓ2 norm `√d`, so uniform
/// magnitudes reduce the weighted similarity to plain cosine.
#[derive(Debug, Clone, PartialEq)]
pub struct GuideWeights(Vec<f64>);

impl GuideWeights {
    /// All-ones weights: the unguided (cosine) case.
    pub fn uniform(d: usize) -> Self {
        Self(vec![1.0; d])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn d(&self) -> usize {
        self.0.len()
    }
}

pub fn text_guide_weights(w_c: &[f64]) -> Result<GuideWeights> {
    let norm = math::norm(w_c);
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::ZeroVector("text embedding".into()));
    }
    let scale = (w_c.len() as f64).sqrt() / norm;
    Ok(GuideWeights(w_c.iter().map(|v| v.abs() * scale).collect()))
}

/// `w̄ᵀ (f_i/‖f_i‖ ∘ f_j/‖f_j‖)`.
pub fn text_guided_similarity(f_i: &[f64], f_j: &[f64], guide: &GuideWeights) -> Result<f64> {
    if f_i.len() != f_j.len() || f_i.len() != guide.d() {
        return Err(Error::Shape(format!(
            "feature dims {} and {} with guide dim {}",
            f_i.len(),
            f_j.len(),
            guide.d()
        )));
    }
    let ni = math::norm(f_i);
    let nj = math::norm(f_j);
    if ni == 0.0 || nj == 0.0 {
        return Err(Error::ZeroVector("region feature".into()));
    }
    Ok(f_i
        .iter()
        .zip(f_j)
        .zip(guide.as_slice())
        .map(|((a, b), w)| w * (a / ni) * (b / nj))
        .sum())
}

/// Query-by-support similarities, `n × (m·n)`, support blocks in order.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    n: usize,
    m: usize,
    values: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn from_values(n: usize, m: usize, values: Vec<f64>) -> Result<Self> {
        if n == 0 || m == 0 || values.len() != n * m * n {
            return Err(Error::Shape(format!(
                "{} values for an {n}x({m}*{n}) matrix",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("similarity matrix".into()));
        }
        Ok(Self { n, m, values })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.m * self.n;
        &self.values[i * w..(i + 1) * w]
    }

    /// Entry for query region `i` against region `j` of support `k`.
    pub fn get(&self, i: usize, k: usize, j: usize) -> f64 {
        self.values[i * self.m * self.n + k * self.n + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

pub fn build_similarity_matrix(
    query: &RegionFeatureSet,
    supports: &[&RegionFeatureSet],
    guide: &GuideWeights,
) -> Result<SimilarityMatrix> {
    if supports.is_empty() {
        return Err(Error::Empty("no support images".into()));
    }
    let (n, d) = (query.n(), query.d());
    for s in supports {
        if s.n() != n || s.d() != d {
            return Err(Error::Shape(format!(
                "support {} is {}x{}, query {} is {n}x{d}",
                s.image_id,
                s.n(),
                s.d(),
                query.image_id
            )));
        }
    }
    if guide.d() != d {
        return Err(Error::Shape(format!(
            "guide dim {} vs feature dim {d}",
            guide.d()
        )));
    }
    let units = |set: &RegionFeatureSet| -> Vec<f64> {
        set.rows()
            .flat_map(|r| math::normalized(r).expect("validated non-zero rows"))
            .collect()
    };
    let q = units(query);
    let s: Vec<Vec<f64>> = supports.iter().map(|s| units(s)).collect();
    let refs: Vec<&[f64]> = s.iter().map(Vec::as_slice).collect();
    SimilarityMatrix::from_values(
        n,
        supports.len(),
        similarity_from_units(&q, &refs, n, d, guide),
    )
}

/// Similarity values from already unit-normalised row-major features.
pub fn similarity_from_units(
    query: &[f64],
    supports: &[&[f64]],
    n: usize,
    d: usize,
    guide: &GuideWeights,
) -> Vec<f64> {
    let m = supports.len();
    let w = guide.as_slice();
    let mut out = vec![0.0; n * m * n];
    let mut weighted = vec![0.0; d];
    for i in 0..n {
        let qi = &query[i * d..(i + 1) * d];
        for t in 0..d {
            weighted[t] = w[t] * qi[t];
        }
        let row = &mut out[i * m * n..(i + 1) * m * n];
        for (k, sup) in supports.iter().enumerate() {
            for j in 0..n {
                row[k * n + j] = math::dot(&weighted, &sup[j * d..(j + 1) * d]);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const SQRT2: f64 = std::f64::consts::SQRT_2;

    #[test]
    fn guide_weights_direct_formula() {
        let w = text_guide_weights(&[3.0, 4.0]).unwrap();
        assert!((w.0[0] - 3.0 * SQRT2 / 5.0).abs() < 1e-15);
        assert!((w.0[1] - 4.0 * SQRT2 / 5.0).abs() < 1e-15);
        let w = text_guide_weights(&[0.0, 1.0]).unwrap();
        assert_eq!(w.0[0], 0.0);
        assert!((w.0[1] - SQRT2).abs() < 1e-15);
    }

    #[test]
    fn equal_magnitudes_give_all_ones() {
        let w = text_guide_weights(&[-0.7, 0.7, 0.7, -0.7]).unwrap();
        for v in w.as_slice() {
            assert!((v - 1.0).abs() < 1e-15);
        }
        assert!(text_guide_weights(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn guidance_masks_and_amplifies() {
        let f = [1.0, 0.0];
        let masked = text_guide_weights(&[0.0, 1.0]).unwrap();
        assert_eq!(text_guided_similarity(&f, &f, &masked).unwrap(), 0.0);
        let full = text_guide_weights(&[1.0, 0.0]).unwrap();
        assert!((text_guided_similarity(&f, &f, &full).unwrap() - SQRT2).abs() < 1e-15);
        assert!(text_guided_similarity(&f, &[0.0, 0.0], &full).is_err());
    }

    #[test]
    fn uniform_guide_is_cosine() {
        let a = [0.3, -2.0, 1.1];
        let b = [1.5, 0.2, -0.4];
        let s = text_guided_similarity(&a, &b, &GuideWeights::uniform(3)).unwrap();
        assert!((s - crate::math::cosine(&a, &b).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn identical_single_regions_give_one() {
        let q = RegionFeatureSet::new("q", 1, 2, vec![0.6, 0.8], None, None).unwrap();
        let s = RegionFeatureSet::new("s", 1, 2, vec![0.6, 0.8], None, None).unwrap();
        let m = build_similarity_matrix(&q, &[&s], &GuideWeights::uniform(2)).unwrap();
        assert_eq!(m.values().len(), 1);
        assert!((m.get(0, 0, 0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn orthogonal_query_gives_zero_matrix() {
        let q = RegionFeatureSet::new(
            "q",
            2,
            4,
            vec![1.0, 0.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0],
            None,
            None,
        )
        .unwrap();
        let s = RegionFeatureSet::new(
            "s",
            2,
            4,
            vec![0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 3.0, -1.0],
            None,
            None,
        )
        .unwrap();
        let m = build_similarity_matrix(&q, &[&s, &s], &GuideWeights::uniform(4)).unwrap();
        assert!(m.values().iter().all(|&v| v == 0.0));
        assert_eq!((m.n(), m.m()), (2, 2));
    }

    #[test]
    fn inconsistent_shapes_rejected() {
        let q = RegionFeatureSet::new("q", 2, 2, vec![1.0; 4], None, None).unwrap();
        let s = RegionFeatureSet::new("s", 1, 2, vec![1.0; 2], None, None).unwrap();
        assert!(matches!(
            build_similarity_matrix(&q, &[&s], &GuideWeights::uniform(2)),
            Err(Error::Shape(_))
        ));
        assert!(build_similarity_matrix(&q, &[], &GuideWeights::uniform(2)).is_err());
    }
}
