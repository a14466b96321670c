//! Shared-feature saliency by parallel backpropagation.
//!
//! For an out-of-category image and its most similar within-category
//! reference, every latent feature gets one pixel map per image (a Jacobian
//! row, or an integrated-gradients row). Maps are collapsed over colour,
//! smoothed and scaled to unit norm, then summed with the per-feature
//! contributions `β_i` to the neuron-specific similarity:
//!
//! ```text
//! β_i = a_in_i w_i a_out_i w_i / (‖a_in ⊙ w‖ ‖a_out ⊙ w‖),   I(x) = Σ_i β_i G_i(x)
//! ```
//!
//! With nonnegative activations every `β_i ≥ 0` and `Σ β_i = s`, so the
//! triangle inequality gives `‖I‖₂ ≤ s` for both maps.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backbone::{jacobian_rows_from_record, BackboneModel};
use crate::error::{Error, Result};
use crate::readout::ReadoutModel;
use crate::record::vjp;
use crate::similarity::{weighted_norm, SimilarityScore};
use crate::tensor::Tensor;

/// Slack allowed on `‖I‖₂ ≤ s`.
pub const BOUND_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributionMethod {
    Vanilla,
    IntegratedGradients,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttributionConfig {
    pub method: AttributionMethod,
    /// Path points for integrated gradients.
    pub ig_steps: usize,
    /// Gaussian smoothing std in pixels; zero disables smoothing.
    pub smoothing_sigma: f64,
    /// Rows whose smoothed norm falls below this are zeroed and flagged.
    pub norm_floor: f64,
}

impl Default for AttributionConfig {
    fn default() -> Self {
        Self {
            method: AttributionMethod::Vanilla,
            ig_steps: 32,
            smoothing_sigma: 2.0,
            norm_floor: 1e-10,
        }
    }
}

impl AttributionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ig_steps == 0 {
            return Err(Error::invalid("attribution config", "ig_steps must be at least 1"));
        }
        if !(self.smoothing_sigma >= 0.0) {
            return Err(Error::invalid("attribution config", "smoothing_sigma must be >= 0"));
        }
        if !(self.norm_floor >= 0.0) {
            return Err(Error::invalid("attribution config", "norm_floor must be >= 0"));
        }
        Ok(())
    }
}

/// Signed `h×w` saliency for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    pub values: Tensor,
    pub l2_norm: f64,
    /// Upper bound on `l2_norm`: the similarity of the image pair.
    pub bound: f64,
    pub image_id: String,
}

impl SaliencyMap {
    pub fn new(values: Tensor, bound: f64, image_id: impl Into<String>) -> Self {
        let l2_norm = values.l2_norm();
        Self {
            values,
            l2_norm,
            bound,
            image_id: image_id.into(),
        }
    }

    pub fn height(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.values.shape()[1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundReport {
    pub l2_norm: f64,
    pub bound: f64,
}

impl BoundReport {
    pub fn margin(&self) -> f64 {
        self.bound - self.l2_norm
    }
}

/// Verify `‖I‖₂ ≤ s + 1e-9`.
pub fn check_bound(map: &SaliencyMap) -> Result<BoundReport> {
    let report = BoundReport {
        l2_norm: map.l2_norm,
        bound: map.bound,
    };
    if map.l2_norm <= map.bound + BOUND_TOLERANCE {
        Ok(report)
    } else {
        Err(Error::BoundViolation {
            image_id: map.image_id.clone(),
            norm: map.l2_norm,
            bound: map.bound,
        })
    }
}

/// Normalised 1-D Gaussian taps over `[-ceil(3σ), ceil(3σ)]`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / total).collect()
}

/// Separable Gaussian blur of an `h×w` map with zero padding.
pub fn gaussian_smooth(map: &Tensor, sigma: f64) -> Result<Tensor> {
    let [h, w] = map.shape()[..] else {
        return Err(Error::shape("gaussian_smooth", format!("expected h×w, got {:?}", map.shape())));
    };
    if sigma <= 0.0 {
        return Ok(map.clone());
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let src = map.data();
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (t, &kt) in k.iter().enumerate() {
                let xx = x as isize + t as isize - r;
                if xx >= 0 && (xx as usize) < w {
                    acc += kt * src[y * w + xx as usize];
                }
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (t, &kt) in k.iter().enumerate() {
                let yy = y as isize + t as isize - r;
                if yy >= 0 && (yy as usize) < h {
                    acc += kt * tmp[yy as usize * w + x];
                }
            }
            out[y * w + x] = acc;
        }
    }
    Tensor::new(vec![h, w], out)
}

/// Sum a `3×h×w` attribution over colour channels.
pub fn collapse_channels(row: &Tensor) -> Result<Tensor> {
    let (c, h, w) = row.dims3("collapse_channels")?;
    let d = row.data();
    let mut out = vec![0.0; h * w];
    for ch in 0..c {
        for (o, v) in out.iter_mut().zip(&d[ch * h * w..(ch + 1) * h * w]) {
            *o += v;
        }
    }
    Tensor::new(vec![h, w], out)
}

/// `∂ŷ/∂x = Σ_i w_i ∂a_i/∂x`, computed as one backward pass with adjoint `w`.
pub fn simple_gradient_map(model: &ReadoutModel, image: &Tensor) -> Result<Tensor> {
    let (_, record) = model.features(image)?;
    let adj = Tensor::new(vec![model.weights.len()], model.weights.clone())?;
    vjp(&record, &adj)
}

/// Path-averaged Jacobian rows `(1/m) Σ_{k=1..m} J(k/m · x)` from a zero
/// baseline, without the final elementwise product with `x`.
pub fn integrated_gradients_rows(
    backbone: &BackboneModel,
    image: &Tensor,
    m: usize,
    feature_indices: &[usize],
) -> Result<Tensor> {
    if m == 0 {
        return Err(Error::invalid("integrated_gradients_rows", "m must be at least 1"));
    }
    let mut acc: Option<Tensor> = None;
    for k in 1..=m {
        let point = image.scale(k as f64 / m as f64);
        let rows = backbone.jacobian_rows(&point, feature_indices)?;
        match acc.as_mut() {
            None => acc = Some(rows),
            Some(a) => a.add_scaled(1.0, &rows)?,
        }
    }
    let acc = acc.expect("m >= 1");
    Ok(if m == 1 { acc } else { acc.scale(1.0 / m as f64) })
}

/// Smoothed, unit-norm per-feature maps.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMaps {
    /// Feature index of each row.
    pub indices: Vec<usize>,
    /// `|indices|×h×w`.
    pub rows: Tensor,
    /// Rows whose smoothed norm fell below the floor; those rows are zero.
    pub degenerate: Vec<bool>,
}

impl FeatureMaps {
    pub fn row(&self, k: usize) -> &[f64] {
        let n = self.rows.shape()[1] * self.rows.shape()[2];
        &self.rows.data()[k * n..(k + 1) * n]
    }
}

fn raw_attribution_rows(
    backbone: &BackboneModel,
    image: &Tensor,
    config: &AttributionConfig,
    indices: &[usize],
) -> Result<Tensor> {
    match config.method {
        AttributionMethod::Vanilla => backbone.jacobian_rows(image, indices),
        AttributionMethod::IntegratedGradients => {
            integrated_gradients_rows(backbone, image, config.ig_steps, indices)
        }
    }
}

/// Collapse, smooth and normalise every row of a `k×3×h×w` attribution stack.
pub fn postprocess_rows(raw: &Tensor, config: &AttributionConfig) -> Result<(Tensor, Vec<bool>)> {
    let k = raw.shape()[0];
    let processed: Vec<(Tensor, bool)> = (0..k)
        .into_par_iter()
        .map(|i| {
            let smoothed = gaussian_smooth(&collapse_channels(&raw.row(i)?)?, config.smoothing_sigma)?;
            let norm = smoothed.l2_norm();
            if norm < config.norm_floor || norm == 0.0 {
                Ok((Tensor::zeros(smoothed.shape()), true))
            } else {
                Ok((smoothed.scale(1.0 / norm), false))
            }
        })
        .collect::<Result<_>>()?;
    let degenerate = processed.iter().map(|p| p.1).collect();
    let rows: Vec<Tensor> = processed.into_iter().map(|p| p.0).collect();
    Ok((Tensor::stack(&rows)?, degenerate))
}

pub fn per_feature_maps_for(
    model: &ReadoutModel,
    image: &Tensor,
    config: &AttributionConfig,
    indices: &[usize],
) -> Result<FeatureMaps> {
    config.validate()?;
    let backbone = model.located_backbone();
    let raw = raw_attribution_rows(&backbone, image, config, indices)?;
    let (rows, degenerate) = postprocess_rows(&raw, config)?;
    Ok(FeatureMaps {
        indices: indices.to_vec(),
        rows,
        degenerate,
    })
}

/// Per-feature maps for every latent feature.
pub fn per_feature_maps(
    model: &ReadoutModel,
    image: &Tensor,
    config: &AttributionConfig,
) -> Result<FeatureMaps> {
    let all: Vec<usize> = (0..model.feature_dim()).collect();
    per_feature_maps_for(model, image, config, &all)
}

/// `β_i = a_in_i w_i a_out_i w_i / (‖a_in⊙w‖ ‖a_out⊙w‖)`.
pub fn beta_weights(a_in: &[f64], a_out: &[f64], w: &[f64]) -> Result<Vec<f64>> {
    if a_in.len() != w.len() || a_out.len() != w.len() {
        return Err(Error::shape(
            "beta_weights",
            format!("activations {} and {}, weights {}", a_in.len(), a_out.len(), w.len()),
        ));
    }
    let n_in = weighted_norm(a_in, w);
    let n_out = weighted_norm(a_out, w);
    if n_in == 0.0 {
        return Err(Error::DegenerateActivations { which: "a_in".into() });
    }
    if n_out == 0.0 {
        return Err(Error::DegenerateActivations { which: "a_out".into() });
    }
    let denom = n_in * n_out;
    Ok(a_in
        .iter()
        .zip(a_out)
        .zip(w)
        .map(|((ai, ao), wi)| (ai * wi) * (ao * wi) / denom)
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParallelSaliency {
    pub out_map: SaliencyMap,
    pub in_map: SaliencyMap,
    pub similarity: SimilarityScore,
    pub beta: Vec<f64>,
    /// Features with nonzero β whose map was degenerate, per image.
    pub degenerate_out: Vec<usize>,
    pub degenerate_in: Vec<usize>,
}

impl ParallelSaliency {
    /// Indices of the `n` largest β, descending, ties by index.
    pub fn top_beta(&self, n: usize) -> Vec<(usize, f64)> {
        let mut idx: Vec<(usize, f64)> = self.beta.iter().copied().enumerate().collect();
        idx.sort_by(|a, b| b.1.total_cmp(&a.1));
        idx.truncate(n);
        idx
    }

    /// Sidecar text: similarity, both norms and the ten largest β.
    pub fn report_text(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("x_out={}\n", self.out_map.image_id));
        s.push_str(&format!("x_in={}\n", self.in_map.image_id));
        s.push_str(&format!("similarity={:?}\n", self.similarity.value));
        s.push_str(&format!("norm_out={:?}\n", self.out_map.l2_norm));
        s.push_str(&format!("norm_in={:?}\n", self.in_map.l2_norm));
        for (rank, (i, b)) in self.top_beta(10).iter().enumerate() {
            s.push_str(&format!("beta.{rank}={i}:{b:?}\n"));
        }
        s
    }
}

fn weighted_sum(maps: &FeatureMaps, beta: &[f64]) -> Result<Tensor> {
    let (h, w) = (maps.rows.shape()[1], maps.rows.shape()[2]);
    let mut acc = Tensor::zeros(&[h, w]);
    // fixed index order keeps the result independent of thread scheduling
    for (k, &i) in maps.indices.iter().enumerate() {
        let b = beta[i];
        for (a, r) in acc.data_mut().iter_mut().zip(maps.row(k)) {
            *a += b * r;
        }
    }
    Ok(acc)
}

/// Paired saliency maps for an out-of-category image and its reference.
///
/// Only features with nonzero β are backpropagated; the others contribute
/// nothing to either map.
pub fn parallel_saliency(
    model: &ReadoutModel,
    x_out: (&str, &Tensor),
    x_in: (&str, &Tensor),
    config: &AttributionConfig,
) -> Result<ParallelSaliency> {
    config.validate()?;
    let (a_out, _) = model.features(x_out.1)?;
    let (a_in, _) = model.features(x_in.1)?;
    let w = &model.weights;
    let similarity = SimilarityScore::between(x_out.0, &a_out, x_in.0, &a_in, w)?;
    let beta = beta_weights(&a_in, &a_out, w)?;
    let active: Vec<usize> = (0..beta.len()).filter(|&i| beta[i] != 0.0).collect();

    let (h, wd) = (x_out.1.shape()[1], x_out.1.shape()[2]);
    let build = |id: &str, image: &Tensor| -> Result<(SaliencyMap, Vec<usize>)> {
        if active.is_empty() {
            return Ok((SaliencyMap::new(Tensor::zeros(&[h, wd]), similarity.value, id), vec![]));
        }
        let maps = per_feature_maps_for(model, image, config, &active)?;
        let degenerate = maps
            .indices
            .iter()
            .zip(&maps.degenerate)
            .filter(|(_, &d)| d)
            .map(|(&i, _)| i)
            .collect();
        let values = weighted_sum(&maps, &beta)?;
        Ok((SaliencyMap::new(values, similarity.value, id), degenerate))
    };
    let (out_map, degenerate_out) = build(x_out.0, x_out.1)?;
    let (in_map, degenerate_in) = build(x_in.0, x_in.1)?;
    Ok(ParallelSaliency {
        out_map,
        in_map,
        similarity,
        beta,
        degenerate_out,
        degenerate_in,
    })
}

/// Jacobian rows of a model's features for an image, at the model location.
pub fn model_jacobian_rows(model: &ReadoutModel, image: &Tensor, indices: &[usize]) -> Result<Tensor> {
    let (_, record) = model.features(image)?;
    jacobian_rows_from_record(&record, indices)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_is_normalised_with_expected_radius() {
        let k = gaussian_kernel(2.0);
        assert_eq!(k.len(), 13);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(gaussian_kernel(0.0), vec![1.0]);
        assert_eq!(gaussian_kernel(0.4).len(), 5);
    }

    #[test]
    fn zero_sigma_is_identity() {
        let m = Tensor::from_fn(&[4, 5], |i| (i as f64).cos());
        assert_eq!(gaussian_smooth(&m, 0.0).unwrap(), m);
    }

    #[test]
    fn smoothing_matches_direct_2d_convolution() {
        let m = Tensor::from_fn(&[6, 7], |i| ((i * 13) % 7) as f64 - 3.0);
        let sigma = 0.8;
        let k = gaussian_kernel(sigma);
        let r = (k.len() / 2) as isize;
        let fast = gaussian_smooth(&m, sigma).unwrap();
        for y in 0..6isize {
            for x in 0..7isize {
                let mut acc = 0.0;
                for dy in -r..=r {
                    for dx in -r..=r {
                        let (yy, xx) = (y + dy, x + dx);
                        if (0..6).contains(&yy) && (0..7).contains(&xx) {
                            acc += k[(dy + r) as usize] * k[(dx + r) as usize]
                                * m.data()[(yy * 7 + xx) as usize];
                        }
                    }
                }
                assert!((acc - fast.data()[(y * 7 + x) as usize]).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn beta_hand_computed() {
        let b = beta_weights(&[1.0, 0.0], &[1.0, 1.0], &[1.0, 1.0]).unwrap();
        assert!((b[0] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert_eq!(b[1], 0.0);
    }

    #[test]
    fn beta_single_feature_is_one() {
        let b = beta_weights(&[0.3, 2.0, 1.0], &[4.0, 0.5, 9.0], &[0.0, 1.0, 0.0]).unwrap();
        assert_eq!(b, vec![0.0, 1.0, 0.0]);
        assert!(beta_weights(&[1.0, 0.0], &[1.0, 1.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn bound_check_reports() {
        let zero = SaliencyMap::new(Tensor::zeros(&[3, 3]), 0.0, "z");
        assert!(check_bound(&zero).is_ok());
        let mut v = Tensor::zeros(&[2, 2]);
        v.data_mut()[0] = 0.5;
        let over = SaliencyMap::new(v, 0.4, "o");
        let err = check_bound(&over).unwrap_err().to_string();
        assert!(err.contains("exceeds bound"), "{err}");
    }

    #[test]
    fn config_validation() {
        let bad = AttributionConfig {
            ig_steps: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = AttributionConfig {
            smoothing_sigma: -1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
