//! Linear readout on backbone features: prediction, the sparse training
//! objective, Adam fitting with validation-based model selection, and
//! held-out evaluation.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backbone::BackboneModel;
use crate::error::{ContainerError, Error, Result};
use crate::manifest::{ResponseManifest, Split};
use crate::ops::{self, Location};
use crate::optim::Adam;
use crate::record::ComputationRecord;
use crate::stats;
use crate::tensor::Tensor;
use crate::weights::WeightContainer;

/// `ŷ = ⟨a, w⟩`.
pub fn predict(weights: &[f64], features: &[f64]) -> Result<f64> {
    if weights.len() != features.len() {
        return Err(Error::shape(
            "predict",
            format!("{} weights vs {} features", weights.len(), features.len()),
        ));
    }
    Ok(weights.iter().zip(features).map(|(w, a)| w * a).sum())
}

/// Smoothed L½ penalty `Σ (w_i² + ε)^¼`.
pub fn sparsity_penalty(weights: &[f64], eps: f64) -> f64 {
    weights.iter().map(|w| (w * w + eps).powf(0.25)).sum()
}

/// Mean squared error plus `λ · Σ (w_i² + ε)^¼`.
pub fn loss(
    weights: &[f64],
    features: &[Vec<f64>],
    responses: &[f64],
    lambda: f64,
    eps: f64,
) -> Result<f64> {
    Ok(mse(weights, features, responses)? + lambda * sparsity_penalty(weights, eps))
}

pub fn mse(weights: &[f64], features: &[Vec<f64>], responses: &[f64]) -> Result<f64> {
    if features.is_empty() {
        return Err(Error::Empty("loss"));
    }
    if features.len() != responses.len() {
        return Err(Error::shape(
            "loss",
            format!("{} feature rows vs {} responses", features.len(), responses.len()),
        ));
    }
    let mut total = 0.0;
    for (a, &y) in features.iter().zip(responses) {
        let r = predict(weights, a)? - y;
        total += r * r;
    }
    Ok(total / features.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReadoutModel {
    pub weights: Vec<f64>,
    pub location: Location,
    pub backbone: Arc<BackboneModel>,
}

impl ReadoutModel {
    pub fn new(backbone: Arc<BackboneModel>, weights: Vec<f64>, location: Location) -> Result<Self> {
        if weights.len() != backbone.feature_dim() {
            return Err(Error::shape(
                "readout",
                format!(
                    "{} weights for a backbone with {} features",
                    weights.len(),
                    backbone.feature_dim()
                ),
            ));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::invalid("readout", "weights must be finite"));
        }
        location.validate()?;
        Ok(Self {
            weights,
            location,
            backbone,
        })
    }

    /// Readout at the backbone's default location.
    pub fn at_default_location(backbone: Arc<BackboneModel>, weights: Vec<f64>) -> Result<Self> {
        let loc = backbone.readout_location();
        Self::new(backbone, weights, loc)
    }

    pub fn feature_dim(&self) -> usize {
        self.weights.len()
    }

    pub fn features(&self, image: &Tensor) -> Result<(Vec<f64>, ComputationRecord)> {
        self.backbone.extract_features_at(image, self.location)
    }

    pub fn predict(&self, features: &[f64]) -> Result<f64> {
        predict(&self.weights, features)
    }

    pub fn predict_image(&self, image: &Tensor) -> Result<f64> {
        let (a, _) = self.features(image)?;
        self.predict(&a)
    }

    /// Backbone copy whose readout location is this model's location.
    pub fn located_backbone(&self) -> BackboneModel {
        self.backbone
            .with_readout_location(self.location)
            .expect("location validated at construction")
    }

    pub fn to_container(&self) -> WeightContainer {
        let mut c = WeightContainer::new();
        c.insert_meta("kind", "readout");
        c.insert_meta(
            "readout_location",
            format!("{:?} {:?}", self.location.u, self.location.v),
        );
        c.insert_tensor(
            "readout.weight",
            Tensor::new(vec![self.weights.len()], self.weights.clone()).expect("non-empty"),
        );
        c
    }

    pub fn from_container(
        c: &WeightContainer,
        backbone: Arc<BackboneModel>,
    ) -> std::result::Result<Self, ContainerError> {
        let kind = c.require_meta("kind")?;
        if kind != "readout" {
            return Err(ContainerError::Header {
                line: 0,
                reason: format!("container kind is {kind:?}, expected \"readout\""),
            });
        }
        let location = crate::backbone::parse_location(c.require_meta("readout_location")?)?;
        let w = c.require_tensor("readout.weight")?;
        if w.shape() != [backbone.feature_dim()] {
            return Err(ContainerError::ShapeMismatch {
                name: "readout.weight".into(),
                expected: vec![backbone.feature_dim()],
                found: w.shape().to_vec(),
            });
        }
        Ok(Self {
            weights: w.data().to_vec(),
            location,
            backbone,
        })
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: impl AsRef<std::path::Path>, backbone: Arc<BackboneModel>) -> Result<Self> {
        let path = path.as_ref();
        let c = WeightContainer::load(path)?;
        Self::from_container(&c, backbone).map_err(|source| Error::Container {
            path: path.to_path_buf(),
            source,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub reg_weight: f64,
    pub epochs: usize,
    pub reg_epsilon: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Standard deviation of the random initial weights.
    pub init_std: f64,
    pub train_location: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            reg_weight: 0.1,
            epochs: 2500,
            reg_epsilon: 1e-8,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            init_std: 1e-3,
            train_location: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::invalid("train config", msg));
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !(self.reg_weight >= 0.0) {
            return bad("reg_weight must be non-negative");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if !(self.reg_epsilon > 0.0) {
            return bad("reg_epsilon must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("adam betas must lie in [0, 1)");
        }
        if !(self.init_std >= 0.0) {
            return bad("init_std must be non-negative");
        }
        Ok(())
    }
}

/// One stimulus prepared for training: its final ReLU map, so the readout
/// location can be optimised without re-running the backbone.
#[derive(Debug, Clone)]
pub struct TrainingStimulus {
    pub id: String,
    pub featmap: Tensor,
    pub response: f64,
    pub split: Split,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_mse: f64,
    pub val_mse: f64,
    pub location: Location,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_mse: f64,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-6, 1.0 - 1e-6);
    (p / (1.0 - p)).ln()
}

struct Batch<'a> {
    maps: Vec<&'a Tensor>,
    responses: Vec<f64>,
}

impl<'a> Batch<'a> {
    fn of(data: &'a [TrainingStimulus], split: Split) -> Self {
        let picked: Vec<_> = data.iter().filter(|s| s.split == split).collect();
        Self {
            maps: picked.iter().map(|s| &s.featmap).collect(),
            responses: picked.iter().map(|s| s.response).collect(),
        }
    }

    fn features(&self, loc: Location) -> Result<Vec<Vec<f64>>> {
        self.maps.iter().map(|m| ops::bilinear_sample(m, loc)).collect()
    }
}

/// Gradient of the training objective with respect to `(w, θ_u, θ_v)`, where
/// the location is `(σ(θ_u), σ(θ_v))`.
pub fn objective_gradient(
    weights: &[f64],
    theta: (f64, f64),
    maps: &[&Tensor],
    responses: &[f64],
    lambda: f64,
    eps: f64,
) -> Result<(f64, Vec<f64>, (f64, f64))> {
    let loc = Location {
        u: sigmoid(theta.0),
        v: sigmoid(theta.1),
    };
    let n = maps.len() as f64;
    let mut grad_w = vec![0.0; weights.len()];
    let (mut gu, mut gv) = (0.0, 0.0);
    let mut sq = 0.0;
    for (map, &y) in maps.iter().zip(responses) {
        let a = ops::bilinear_sample(map, loc)?;
        let r = predict(weights, &a)? - y;
        sq += r * r;
        for (g, ai) in grad_w.iter_mut().zip(&a) {
            *g += 2.0 * r * ai / n;
        }
        let (du, dv) = ops::bilinear_location_jacobian(map, loc)?;
        gu += 2.0 * r * predict(weights, &du)? / n;
        gv += 2.0 * r * predict(weights, &dv)? / n;
    }
    for (g, w) in grad_w.iter_mut().zip(weights) {
        *g += lambda * w / (2.0 * (w * w + eps).powf(0.75));
    }
    let value = sq / n + lambda * sparsity_penalty(weights, eps);
    Ok((
        value,
        grad_w,
        (gu * loc.u * (1.0 - loc.u), gv * loc.v * (1.0 - loc.v)),
    ))
}

/// Full-batch Adam on the train split; returns the epoch snapshot with the
/// lowest validation MSE.
pub fn fit_readout_on_maps(
    data: &[TrainingStimulus],
    backbone: Arc<BackboneModel>,
    config: &TrainConfig,
) -> Result<(ReadoutModel, TrainingLog)> {
    config.validate()?;
    let train = Batch::of(data, Split::Train);
    let val = Batch::of(data, Split::Val);
    if train.maps.is_empty() {
        return Err(Error::Empty("train split"));
    }
    if val.maps.is_empty() {
        return Err(Error::Empty("validation split"));
    }
    let c = backbone.feature_dim();
    if let Some(bad) = data.iter().find(|s| s.featmap.shape() != backbone.featmap_shape()) {
        return Err(Error::shape(
            "fit_readout",
            format!("feature map of {} has shape {:?}", bad.id, bad.featmap.shape()),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut weights: Vec<f64> = if config.init_std > 0.0 {
        let normal = Normal::new(0.0, config.init_std).expect("positive std");
        (0..c).map(|_| normal.sample(&mut rng)).collect()
    } else {
        vec![0.0; c]
    };
    let start = backbone.readout_location();
    let mut theta = (logit(start.u), logit(start.v));
    let mut adam = Adam::new(c + 2, config.learning_rate, config.beta1, config.beta2, config.adam_eps);
    let mut params = vec![0.0; c + 2];
    let mut grads = vec![0.0; c + 2];

    let mut log = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64, Vec<f64>, Location)> = None;
    let non_finite = |epoch: usize, weights: &[f64], loc: Location| Error::NonFiniteLoss {
        epoch,
        weight_norm: weights.iter().map(|w| w * w).sum::<f64>().sqrt(),
        u: loc.u,
        v: loc.v,
    };
    for epoch in 1..=config.epochs {
        let (objective, gw, (gu, gv)) = objective_gradient(
            &weights,
            theta,
            &train.maps,
            &train.responses,
            config.reg_weight,
            config.reg_epsilon,
        )?;
        if !objective.is_finite() || !gw.iter().all(|g| g.is_finite()) || !(gu.is_finite() && gv.is_finite()) {
            let loc = Location {
                u: sigmoid(theta.0),
                v: sigmoid(theta.1),
            };
            return Err(non_finite(epoch, &weights, loc));
        }
        params[..c].copy_from_slice(&weights);
        params[c] = theta.0;
        params[c + 1] = theta.1;
        grads[..c].copy_from_slice(&gw);
        if config.train_location {
            grads[c] = gu;
            grads[c + 1] = gv;
        } else {
            grads[c] = 0.0;
            grads[c + 1] = 0.0;
        }
        adam.step(&mut params, &grads);
        weights.copy_from_slice(&params[..c]);
        theta = (params[c], params[c + 1]);

        let loc = Location {
            u: sigmoid(theta.0),
            v: sigmoid(theta.1),
        };
        let train_mse = mse(&weights, &train.features(loc)?, &train.responses)?;
        let train_loss = train_mse + config.reg_weight * sparsity_penalty(&weights, config.reg_epsilon);
        let val_mse = mse(&weights, &val.features(loc)?, &val.responses)?;
        if !train_loss.is_finite() || !val_mse.is_finite() {
            return Err(non_finite(epoch, &weights, loc));
        }
        log.push(EpochRecord {
            epoch,
            train_loss,
            train_mse,
            val_mse,
            location: loc,
        });
        if best.as_ref().is_none_or(|b| val_mse < b.1) {
            best = Some((epoch, val_mse, weights.clone(), loc));
        }
    }
    let (best_epoch, best_val_mse, w, loc) = best.expect("at least one epoch");
    let model = ReadoutModel::new(backbone, w, loc)?;
    Ok((
        model,
        TrainingLog {
            epochs: log,
            best_epoch,
            best_val_mse,
        },
    ))
}

/// Final ReLU maps for every manifest entry that has a response.
pub fn prepare_stimuli(
    manifest: &ResponseManifest,
    backbone: &BackboneModel,
) -> Result<Vec<TrainingStimulus>> {
    manifest
        .entries()
        .par_iter()
        .filter(|e| matches!(e.split, Split::Train | Split::Val | Split::Test))
        .map(|e| {
            let response = e.response.ok_or_else(|| Error::Manifest {
                path: manifest.path().to_path_buf(),
                line: e.line,
                reason: format!("{} has no response", e.stimulus_id),
            })?;
            let image = crate::image::load_image(&e.image, backbone.input_size())?;
            Ok(TrainingStimulus {
                id: e.stimulus_id.clone(),
                featmap: backbone.feature_map(&image.to_tensor())?,
                response,
                split: e.split,
            })
        })
        .collect()
}

pub fn fit_readout(
    manifest: &ResponseManifest,
    backbone: Arc<BackboneModel>,
    config: &TrainConfig,
) -> Result<(ReadoutModel, TrainingLog)> {
    let data = prepare_stimuli(manifest, &backbone)?;
    fit_readout_on_maps(&data, backbone, config)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub n: usize,
    pub pearson_r: f64,
    /// Critical |r| at the requested level under ρ = 0.
    pub threshold: f64,
    pub significant: bool,
}

/// Held-out correlation between predictions and responses, with its
/// two-sided significance at level `alpha`.
pub fn evaluate(
    model: &ReadoutModel,
    data: &[TrainingStimulus],
    split: Split,
    alpha: f64,
) -> Result<Evaluation> {
    let batch = Batch::of(data, split);
    let feats = batch.features(model.location)?;
    let preds: Vec<f64> = feats
        .iter()
        .map(|a| model.predict(a))
        .collect::<Result<_>>()?;
    let r = stats::pearson_r(&preds, &batch.responses)?;
    let threshold = stats::correlation_significance(preds.len(), alpha)?;
    Ok(Evaluation {
        n: preds.len(),
        pearson_r: r,
        threshold,
        significant: r.abs() > threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn predict_basics() {
        assert_eq!(predict(&[0.0; 3], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert_eq!(predict(&[4.0, -2.0, 7.0], &[0.0, 1.0, 0.0]).unwrap(), -2.0);
        assert!(predict(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn loss_cases() {
        let feats = vec![vec![1.0, 2.0], vec![0.5, 0.0]];
        let c = 2.0;
        let eps = 1e-8;
        let l = loss(&[0.0, 0.0], &feats, &[0.0, 0.0], 0.1, eps).unwrap();
        assert!((l - 0.1 * c * eps.powf(0.25)).abs() < 1e-15);
        assert_eq!(loss(&[1.0, 1.0], &feats, &[3.0, 0.5], 0.0, eps).unwrap(), 0.0);
        assert!(matches!(loss(&[1.0, 1.0], &[], &[], 0.1, eps), Err(Error::Empty(_))));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            reg_weight: -1.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn sigmoid_logit_round_trip() {
        for p in [0.1, 0.5, 0.9] {
            assert!((sigmoid(logit(p)) - p).abs() < 1e-12);
        }
    }
}
