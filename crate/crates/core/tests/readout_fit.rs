use std::sync::Arc;

use sfv::fixtures::{fixture_backbone, recovery_problem, sparse_weights, RecoverySpec};
use sfv::manifest::Split;
use sfv::ops::bilinear_sample;
use sfv::readout::{evaluate, fit_readout_on_maps, mse, TrainConfig, TrainingStimulus};
use sfv::{BackboneModel, Error};

fn problem(w_star: &[f64], snr: f64, seed: u64) -> (Arc<BackboneModel>, Vec<TrainingStimulus>) {
    let b = fixture_backbone();
    let spec = RecoverySpec {
        n_train: 160,
        n_val: 40,
        n_test: 40,
        snr,
        seed,
    };
    let data = recovery_problem(&b, w_star, &spec).unwrap();
    (Arc::new(b), data)
}

fn fast(reg_weight: f64, epochs: usize) -> TrainConfig {
    TrainConfig {
        learning_rate: 1e-2,
        reg_weight,
        epochs,
        ..TrainConfig::default()
    }
}

#[test]
fn noiseless_responses_are_recovered() {
    let w_star = sparse_weights(64, 10, 3);
    let (b, data) = problem(&w_star, f64::INFINITY, 40);
    let (model, _) = fit_readout_on_maps(&data, b, &fast(1e-4, 4000)).unwrap();
    let test = evaluate(&model, &data, Split::Test, 0.05).unwrap();
    assert!(test.pearson_r > 0.99, "r = {}", test.pearson_r);
    assert!(test.significant);

    let mut by_size: Vec<usize> = (0..64).filter(|&i| w_star[i] != 0.0).collect();
    by_size.sort_by(|&i, &j| w_star[j].abs().total_cmp(&w_star[i].abs()));
    for &i in &by_size[..3] {
        assert_eq!(model.weights[i].signum(), w_star[i].signum(), "feature {i}");
    }
}

#[test]
fn huge_penalty_pins_weights_near_zero() {
    let (b, data) = problem(&sparse_weights(64, 10, 4), 10.0, 41);
    let cfg = TrainConfig {
        reg_weight: 1e6,
        epochs: 200,
        ..TrainConfig::default()
    };
    let (model, _) = fit_readout_on_maps(&data, b, &cfg).unwrap();
    let max = model.weights.iter().fold(0.0f64, |m, w| m.max(w.abs()));
    assert!(max < 1e-2, "{max}");
}

#[test]
fn identical_seeds_replay_bit_for_bit() {
    let (b, data) = problem(&sparse_weights(64, 10, 5), 10.0, 42);
    let cfg = TrainConfig { seed: 9, ..fast(0.1, 150) };
    let (m1, l1) = fit_readout_on_maps(&data, b.clone(), &cfg).unwrap();
    let (m2, l2) = fit_readout_on_maps(&data, b.clone(), &cfg).unwrap();
    assert_eq!(l1, l2);
    assert_eq!(m1.weights, m2.weights);
    assert_eq!(m1.location, m2.location);
    let (m3, _) = fit_readout_on_maps(&data, b, &TrainConfig { seed: 10, ..cfg }).unwrap();
    assert_ne!(m1.weights, m3.weights);
}

#[test]
fn returned_snapshot_has_the_lowest_validation_error() {
    let (b, data) = problem(&sparse_weights(64, 10, 6), 2.0, 43);
    let (model, log) = fit_readout_on_maps(&data, b, &fast(0.01, 600)).unwrap();
    assert_eq!(log.epochs.len(), 600);
    assert!(log.epochs.iter().all(|e| log.best_val_mse <= e.val_mse));
    assert_eq!(log.epochs[log.best_epoch - 1].val_mse, log.best_val_mse);

    let val: Vec<&TrainingStimulus> = data.iter().filter(|s| s.split == Split::Val).collect();
    let feats: Vec<Vec<f64>> = val.iter().map(|s| bilinear_sample(&s.featmap, model.location).unwrap()).collect();
    let ys: Vec<f64> = val.iter().map(|s| s.response).collect();
    assert_eq!(mse(&model.weights, &feats, &ys).unwrap(), log.best_val_mse);
}

#[test]
fn penalty_sparsifies_the_solution() {
    let (b, data) = problem(&sparse_weights(64, 10, 7), 10.0, 44);
    let small = |lambda: f64| {
        let (m, _) = fit_readout_on_maps(&data, b.clone(), &fast(lambda, 1500)).unwrap();
        m.weights.iter().filter(|w| w.abs() < 1e-3).count()
    };
    let (sparse, dense) = (small(0.1), small(0.0));
    assert!(sparse > dense, "{sparse} vs {dense}");
}

#[test]
fn non_finite_loss_reports_the_epoch() {
    let (b, mut data) = problem(&sparse_weights(64, 10, 8), 10.0, 45);
    let k = data.iter().position(|s| s.split == Split::Train).unwrap();
    data[k].response = f64::NAN;
    match fit_readout_on_maps(&data, b, &fast(0.1, 10)) {
        Err(Error::NonFiniteLoss { epoch, .. }) => assert_eq!(epoch, 1),
        other => panic!("expected a non-finite loss, got {other:?}"),
    }
}

#[test]
fn missing_splits_are_rejected() {
    let (b, data) = problem(&sparse_weights(64, 10, 9), 10.0, 46);
    let no_val: Vec<TrainingStimulus> = data.into_iter().filter(|s| s.split != Split::Val).collect();
    assert!(matches!(
        fit_readout_on_maps(&no_val, b, &fast(0.1, 10)),
        Err(Error::Empty(_))
    ));
}
