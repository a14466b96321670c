mod common;

use std::sync::Arc;

use proptest::prelude::*;
use sfv::fixtures::{fixture_backbone, random_image};
use sfv::readout::predict;
use sfv::saliency::{beta_weights, check_bound, parallel_saliency, AttributionConfig, AttributionMethod};
use sfv::similarity::{neuron_similarity, select_reference, Candidate};
use sfv::{vjp, Location, ReadoutModel, Tensor};

use common::{flat_image, opponent_backbone, small_backbone};

fn vec_in(lo: f64, hi: f64, n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(lo..hi, n)
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn vjp_is_linear_in_the_adjoint(seed in 0u64..1000, alpha in -3.0f64..3.0) {
        let b = small_backbone(seed);
        let x = random_image(16, seed + 1);
        let (_, rec) = b.extract_features(&x).unwrap();
        let g1 = Tensor::from_fn(&[8], |i| ((i as u64 * 7 + seed) % 5) as f64 - 2.0);
        let g2 = Tensor::from_fn(&[8], |i| ((i as u64 * 3 + seed) % 7) as f64 * 0.5 - 1.0);
        let mut combo = g1.scale(alpha);
        combo.add_scaled(1.0, &g2).unwrap();
        let lhs = vjp(&rec, &combo).unwrap();
        let mut rhs = vjp(&rec, &g1).unwrap().scale(alpha);
        rhs.add_scaled(1.0, &vjp(&rec, &g2).unwrap()).unwrap();
        let scale = 1.0 + rhs.max_abs();
        for (l, r) in lhs.data().iter().zip(rhs.data()) {
            prop_assert!((l - r).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn similarity_is_symmetric_and_scale_invariant(
        a1 in vec_in(0.0, 2.0, 16),
        a2 in vec_in(0.0, 2.0, 16),
        w in vec_in(-1.0, 1.0, 16),
        alpha in 0.01f64..100.0,
    ) {
        let Ok(s) = neuron_similarity(&a1, &a2, &w) else { return Ok(()) };
        prop_assert!(s.abs() <= 1.0 + 1e-12);
        prop_assert!(close(s, neuron_similarity(&a2, &a1, &w).unwrap(), 1e-12));
        let scaled: Vec<f64> = a1.iter().map(|v| alpha * v).collect();
        prop_assert!(close(s, neuron_similarity(&scaled, &a2, &w).unwrap(), 1e-12));
        let neg: Vec<f64> = w.iter().map(|v| -v).collect();
        prop_assert!(close(s, neuron_similarity(&a1, &a2, &neg).unwrap(), 1e-12));
    }

    #[test]
    fn zero_weight_dimensions_are_ignored(
        a1 in vec_in(0.0, 2.0, 12),
        a2 in vec_in(0.1, 2.0, 12),
        mut w in vec_in(0.1, 1.0, 12),
        k in 0usize..12,
        replacement in -50.0f64..50.0,
    ) {
        w[k] = 0.0;
        let Ok(s) = neuron_similarity(&a1, &a2, &w) else { return Ok(()) };
        let mut b1 = a1.clone();
        b1[k] = replacement;
        prop_assert_eq!(s, neuron_similarity(&b1, &a2, &w).unwrap());
    }

    #[test]
    fn beta_is_symmetric_nonnegative_and_sums_to_similarity(
        a_in in vec_in(0.0, 3.0, 24),
        a_out in vec_in(0.0, 3.0, 24),
        w in vec_in(-2.0, 2.0, 24),
    ) {
        let Ok(beta) = beta_weights(&a_in, &a_out, &w) else { return Ok(()) };
        prop_assert_eq!(&beta, &beta_weights(&a_out, &a_in, &w).unwrap());
        prop_assert!(beta.iter().all(|&b| b >= 0.0));
        let s = neuron_similarity(&a_in, &a_out, &w).unwrap();
        prop_assert!((beta.iter().sum::<f64>() - s).abs() < 1e-12);
    }

    #[test]
    fn predict_is_linear(a in vec_in(-1.0, 1.0, 64), w in vec_in(-1.0, 1.0, 64), alpha in -10.0f64..10.0) {
        let y = predict(&w, &a).unwrap();
        let aw: Vec<f64> = w.iter().map(|v| alpha * v).collect();
        let aa: Vec<f64> = a.iter().map(|v| alpha * v).collect();
        prop_assert!((predict(&aw, &a).unwrap() - alpha * y).abs() <= 1e-12 * (1.0 + (alpha * y).abs()));
        prop_assert!((predict(&w, &aa).unwrap() - alpha * y).abs() <= 1e-12 * (1.0 + (alpha * y).abs()));
    }

    #[test]
    fn selection_ignores_candidate_norms(
        x in vec_in(0.1, 1.0, 8),
        feats in prop::collection::vec(vec_in(0.0, 1.0, 8), 2..12),
        scales in prop::collection::vec(0.01f64..100.0, 12),
        w in vec_in(-1.0, 1.0, 8),
    ) {
        let plain: Vec<Candidate> = feats.iter().enumerate()
            .map(|(i, f)| Candidate::new(format!("c{i}"), f.clone()))
            .collect();
        let scaled: Vec<Candidate> = feats.iter().zip(&scales).enumerate()
            .map(|(i, (f, k))| Candidate::new(format!("c{i}"), f.iter().map(|v| v * k).collect()))
            .collect();
        let (Ok(a), Ok(b)) = (select_reference(&x, &plain, &w), select_reference(&x, &scaled, &w)) else {
            return Ok(());
        };
        // near-ties may legitimately reorder under rounding
        let ss = neuron_similarity(&x, &plain[b.index].features, &w).unwrap();
        prop_assert!(a.index == b.index || (a.similarity - ss).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn features_are_nonnegative(seed in 0u64..10_000, u in 0.0f64..1.0, v in 0.0f64..1.0) {
        let b = small_backbone(seed).with_readout_location(Location { u, v }).unwrap();
        let (a, _) = b.extract_features(&random_image(16, seed)).unwrap();
        prop_assert!(a.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn attribution_method_does_not_change_beta_or_bound(seed in 0u64..10_000, steps in 1usize..6) {
        let b = Arc::new(small_backbone(seed));
        let w = sfv::fixtures::sparse_weights(8, 5, seed);
        let model = ReadoutModel::at_default_location(b, w).unwrap();
        let (x1, x2) = (random_image(16, seed + 11), random_image(16, seed + 12));
        let vanilla = AttributionConfig { smoothing_sigma: 1.0, ..AttributionConfig::default() };
        let ig = AttributionConfig {
            method: AttributionMethod::IntegratedGradients,
            ig_steps: steps,
            ..vanilla.clone()
        };
        let (Ok(p), Ok(q)) = (
            parallel_saliency(&model, ("o", &x1), ("i", &x2), &vanilla),
            parallel_saliency(&model, ("o", &x1), ("i", &x2), &ig),
        ) else {
            return Ok(());
        };
        prop_assert_eq!(&p.beta, &q.beta);
        prop_assert_eq!(p.similarity.value, q.similarity.value);
        prop_assert!((q.beta.iter().sum::<f64>() - q.similarity.value).abs() < 1e-12);
        for map in [&p.out_map, &p.in_map, &q.out_map, &q.in_map] {
            prop_assert!(check_bound(map).is_ok());
        }
    }

    #[test]
    fn identical_images_give_identical_maps(seed in 0u64..10_000) {
        let b = Arc::new(small_backbone(seed));
        let model = ReadoutModel::at_default_location(b, vec![1.0; 8]).unwrap();
        let x = random_image(16, seed + 3);
        let Ok(p) = parallel_saliency(&model, ("a", &x), ("b", &x), &AttributionConfig::default()) else {
            return Ok(());
        };
        prop_assert!((p.similarity.value - 1.0).abs() < 1e-12);
        prop_assert_eq!(p.out_map.values, p.in_map.values);
    }

    #[test]
    fn disjoint_weighted_supports_give_zero_maps(r in 0.5f64..1.0, g in 0.5f64..1.0, lo in 0.0f64..0.2) {
        let b = Arc::new(opponent_backbone(8));
        let model = ReadoutModel::at_default_location(b, vec![1.0, 1.0, 1.0]).unwrap();
        let red = flat_image(8, [r, lo, 0.0]);
        let green = flat_image(8, [lo, g, 0.0]);
        let p = parallel_saliency(&model, ("red", &red), ("green", &green), &AttributionConfig::default()).unwrap();
        prop_assert_eq!(p.similarity.value, 0.0);
        prop_assert!(p.out_map.values.data().iter().all(|&v| v == 0.0));
        prop_assert!(p.in_map.values.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_feature_weights_attain_the_bound(seed in 0u64..10_000, k in 0usize..64) {
        let b = fixture_backbone();
        let (x1, x2) = (random_image(32, seed), random_image(32, seed + 1));
        let (a1, _) = b.extract_features(&x1).unwrap();
        let (a2, _) = b.extract_features(&x2).unwrap();
        prop_assume!(a1[k] > 0.0 && a2[k] > 0.0);
        let mut w = vec![0.0; 64];
        w[k] = 0.7;
        let model = ReadoutModel::at_default_location(Arc::new(b), w).unwrap();
        let p = parallel_saliency(&model, ("o", &x1), ("i", &x2), &AttributionConfig::default()).unwrap();
        prop_assert!((p.similarity.value - 1.0).abs() < 1e-12);
        prop_assert!((p.beta[k] - 1.0).abs() < 1e-12);
        prop_assert!((p.out_map.l2_norm - 1.0).abs() < 1e-12);
        prop_assert!((p.in_map.l2_norm - 1.0).abs() < 1e-12);
    }
}
