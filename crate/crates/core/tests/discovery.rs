use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cooccur_core::corpus::ConceptId;
use cooccur_core::discovery::{
    baseline_max_size, baseline_region_word, build_similarity_matrix, discover_prototype,
    heuristic_discovery, image_text_loss, region_word_loss, text_guide_weights,
    text_guided_similarity, DiscoveryHead, GuideWeights, OpenVocabClassifier, RowLayout,
    SimilarityMatrix,
};
use cooccur_core::scenario::{image_feature, RegionFeatureSet};

fn normal_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn set(rng: &mut ChaCha8Rng, id: &str, n: usize, d: usize) -> RegionFeatureSet {
    RegionFeatureSet::new(
        id,
        n,
        d,
        (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect(),
        None,
        None,
    )
    .unwrap()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn naive_sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[test]
fn similarity_matrix_matches_scalar_op_entrywise() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (n, m, d) = (4, 2, 8);
    let query = set(&mut rng, "q", n, d);
    let supports: Vec<_> = (0..m)
        .map(|k| set(&mut rng, &format!("s{k}"), n, d))
        .collect();
    let refs: Vec<_> = supports.iter().collect();
    let guide = text_guide_weights(&normal_vec(&mut rng, d)).unwrap();
    let s = build_similarity_matrix(&query, &refs, &guide).unwrap();
    for i in 0..n {
        for (k, sup) in supports.iter().enumerate() {
            for j in 0..n {
                let expected = text_guided_similarity(query.row(i), sup.row(j), &guide).unwrap();
                assert!((s.get(i, k, j) - expected).abs() < 1e-12);
                assert_eq!(s.row(i)[k * n + j], s.get(i, k, j));
            }
        }
    }
}

#[test]
fn region_word_loss_matches_naive_for_five_classes() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..200 {
        let d = 6;
        let rows: Vec<f64> = (0..5).flat_map(|_| normal_vec(&mut rng, d)).collect();
        let clf = OpenVocabClassifier::from_rows(d, (0..5).map(ConceptId).collect(), rows).unwrap();
        let f: Vec<f64> = normal_vec(&mut rng, d).iter().map(|x| x * 4.0).collect();
        let c = rng.random_range(0..5);
        let mut naive = 0.0;
        for k in 0..5 {
            let s: f64 = clf.row(k).iter().zip(&f).map(|(a, b)| a * b).sum();
            assert!(s.abs() <= 10.0 + 1e-9);
            naive += if k == c {
                -naive_sigmoid(s).ln()
            } else {
                -(1.0 - naive_sigmoid(s)).ln()
            };
        }
        let got = region_word_loss(&f, &clf, ConceptId(c)).unwrap();
        assert!((got - naive).abs() < 1e-9, "{got} vs {naive}");
    }
}

#[test]
fn image_text_loss_matches_double_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (b, d, tau) = (8, 5, 10.0);
    let images: Vec<Vec<f64>> = (0..b).map(|_| normal_vec(&mut rng, d)).collect();
    let captions: Vec<Vec<f64>> = (0..b).map(|_| normal_vec(&mut rng, d)).collect();
    let mut naive = 0.0;
    for (a, x) in images.iter().enumerate() {
        for (bb, t) in captions.iter().enumerate() {
            let cos = x.iter().zip(t).map(|(p, q)| p * q).sum::<f64>() / (norm(x) * norm(t));
            let sig = naive_sigmoid(tau * cos);
            naive -= if a == bb { sig.ln() } else { (1.0 - sig).ln() };
        }
    }
    naive /= b as f64;
    let got = image_text_loss(&images, &captions, tau).unwrap();
    assert!((got - naive).abs() < 1e-9, "{got} vs {naive}");
}

#[test]
fn single_aligned_pair_costs_softplus_of_minus_tau() {
    let v = vec![vec![0.3, -0.4, 1.2]];
    let got = image_text_loss(&v, &v, 10.0).unwrap();
    assert!((got + naive_sigmoid(10.0).ln()).abs() < 1e-12);
}

#[test]
fn baselines_match_naive_scans() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..200 {
        let (n, d) = (rng.random_range(1..10), rng.random_range(1..6));
        let q = set(&mut rng, "q", n, d);
        let w = normal_vec(&mut rng, d);
        if norm(&w) == 0.0 {
            continue;
        }
        let mut best = (0, f64::NEG_INFINITY);
        for i in 0..n {
            let f = q.row(i);
            let cos = f.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / (norm(f) * norm(&w));
            if cos > best.1 {
                best = (i, cos);
            }
        }
        assert_eq!(baseline_region_word(&q, &w).unwrap(), best.0);

        let areas: Vec<f64> = (0..n).map(|_| rng.random_range(1..5) as f64).collect();
        let mut largest = 0;
        for i in 1..n {
            if areas[i] > areas[largest] {
                largest = i;
            }
        }
        assert_eq!(baseline_max_size(&areas).unwrap(), largest);
    }
    assert_eq!(baseline_max_size(&[3.0, 7.0, 2.0]).unwrap(), 1);
    assert_eq!(baseline_max_size(&[2.0, 2.0, 2.0]).unwrap(), 0);
    assert!(baseline_max_size(&[]).is_err());
}

#[test]
fn image_feature_is_column_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (n, d) = (16, 7);
    let feats: Vec<f64> = (0..n * d).map(|_| rng.random_range(-3.0..3.0)).collect();
    let got = image_feature(&feats, n, d);
    for t in 0..d {
        let mut col = 0.0;
        for i in 0..n {
            col += feats[i * d + t];
        }
        assert!((got[t] - col / n as f64).abs() < 1e-12);
    }
    assert_eq!(image_feature(&[1.0, 0.0, 0.0, 1.0], 2, 2), vec![0.5, 0.5]);
    assert_eq!(image_feature(&[2.0, -1.0], 1, 2), vec![2.0, -1.0]);
}

#[test]
fn random_head_prototype_stays_on_simplex_and_in_hull() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..100 {
        let (n, m, d) = (8, rng.random_range(1..4), 5);
        let head = DiscoveryHead::new(m, n, 16, RowLayout::Raw, &mut rng).unwrap();
        let q = set(&mut rng, "q", n, d);
        let sup: Vec<_> = (0..m)
            .map(|k| set(&mut rng, &format!("s{k}"), n, d))
            .collect();
        let refs: Vec<_> = sup.iter().collect();
        let s = build_similarity_matrix(&q, &refs, &GuideWeights::uniform(d)).unwrap();
        let p = discover_prototype(&s, &head, &q, ConceptId(0)).unwrap();
        assert!((p.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        for t in 0..d {
            let lo = (0..n).map(|i| q.row(i)[t]).fold(f64::INFINITY, f64::min);
            let hi = (0..n)
                .map(|i| q.row(i)[t])
                .fold(f64::NEG_INFINITY, f64::max);
            assert!(p.features[t] >= lo - 1e-12 && p.features[t] <= hi + 1e-12);
        }
    }
}

fn vec_strategy(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0f64..5.0, d).prop_filter("non-zero", |v| norm(v) > 1e-3)
}

fn triple() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
    (1usize..12).prop_flat_map(|d| (vec_strategy(d), vec_strategy(d), vec_strategy(d)))
}

proptest! {
    #[test]
    fn similarity_is_symmetric((fi, fj, w) in triple()) {
        let g = text_guide_weights(&w).unwrap();
        let a = text_guided_similarity(&fi, &fj, &g).unwrap();
        let b = text_guided_similarity(&fj, &fi, &g).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn similarity_ignores_feature_and_text_scale((fi, fj, w) in triple(), a in 0.01f64..100.0, b in 0.01f64..100.0, c in 0.01f64..100.0) {
        let g = text_guide_weights(&w).unwrap();
        let base = text_guided_similarity(&fi, &fj, &g).unwrap();
        let scale = |v: &[f64], s: f64| v.iter().map(|x| x * s).collect::<Vec<_>>();
        let g2 = text_guide_weights(&scale(&w, c)).unwrap();
        let scaled = text_guided_similarity(&scale(&fi, a), &scale(&fj, b), &g2).unwrap();
        prop_assert!((base - scaled).abs() < 1e-9);
    }

    #[test]
    fn similarity_is_bounded_by_largest_guide_weight((fi, fj, w) in triple()) {
        let g = text_guide_weights(&w).unwrap();
        let s = text_guided_similarity(&fi, &fj, &g).unwrap();
        let bound = g.as_slice().iter().copied().fold(0.0, f64::max);
        prop_assert!(s.abs() <= bound + 1e-12);
        prop_assert!(bound <= (w.len() as f64).sqrt() + 1e-12);
    }

    #[test]
    fn heuristic_ignores_support_order(n in 1usize..7, m in 1usize..5, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values: Vec<f64> = (0..n * m * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let base = heuristic_discovery(&SimilarityMatrix::from_values(n, m, values.clone()).unwrap());
        let mut order: Vec<usize> = (0..m).collect();
        order.reverse();
        let mut permuted = vec![0.0; values.len()];
        for i in 0..n {
            for (k_new, &k_old) in order.iter().enumerate() {
                permuted[i * m * n + k_new * n..i * m * n + (k_new + 1) * n]
                    .copy_from_slice(&values[i * m * n + k_old * n..i * m * n + (k_old + 1) * n]);
            }
        }
        prop_assert_eq!(heuristic_discovery(&SimilarityMatrix::from_values(n, m, permuted).unwrap()), base);
    }
}
