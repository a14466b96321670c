//! Synthetic category-selective neurons.
//!
//! Given activation matrices for within-category images `A_in` and
//! out-of-category images `A_out`, the unit readout maximising
//! `wᵀ(A_inᵀA_in − A_outᵀA_out)w` is the eigenvector of the algebraically
//! largest eigenvalue of the difference of Gram matrices.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::backbone::BackboneModel;
use crate::eigen::symmetric_eigendecomp;
use crate::error::{Error, Result};
use crate::ops::Location;
use crate::readout::predict;
use crate::similarity::Candidate;
use crate::tensor::Tensor;

/// Feature vectors of `N` images stacked as an `N×c` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationMatrix {
    pub ids: Vec<String>,
    pub rows: Tensor,
}

impl ActivationMatrix {
    pub fn new(ids: Vec<String>, rows: Tensor) -> Result<Self> {
        match rows.shape() {
            [n, _] if *n == ids.len() => {}
            s => {
                return Err(Error::shape(
                    "activation_matrix",
                    format!("{} ids for a matrix of shape {s:?}", ids.len()),
                ))
            }
        }
        if !rows.all_finite() {
            return Err(Error::invalid("activation_matrix", "entries must be finite"));
        }
        Ok(Self { ids, rows })
    }

    pub fn from_rows(ids: Vec<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != c) {
            return Err(Error::shape("activation_matrix", "rows have different lengths"));
        }
        let data = rows.concat();
        Self::new(ids, Tensor::new(vec![rows.len(), c], data)?)
    }

    pub fn n_rows(&self) -> usize {
        self.rows.shape()[0]
    }

    pub fn n_features(&self) -> usize {
        self.rows.shape()[1]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.n_features();
        &self.rows.data()[i * c..(i + 1) * c]
    }

    /// `AᵀA`, `c×c`.
    pub fn gram(&self) -> Tensor {
        let c = self.n_features();
        let mut g = Tensor::zeros(&[c, c]);
        let gd = g.data_mut();
        for r in 0..self.n_rows() {
            let row = self.row(r);
            for i in 0..c {
                if row[i] == 0.0 {
                    continue;
                }
                for j in 0..c {
                    gd[i * c + j] += row[i] * row[j];
                }
            }
        }
        g
    }

    /// `A·w`: the response of every row to the readout `w`.
    pub fn responses(&self, w: &[f64]) -> Result<Vec<f64>> {
        (0..self.n_rows()).map(|i| predict(w, self.row(i))).collect()
    }

    pub fn candidates(&self) -> Vec<Candidate> {
        (0..self.n_rows())
            .map(|i| Candidate::new(self.ids[i].clone(), self.row(i).to_vec()))
            .collect()
    }
}

/// Rows are the backbone features of each image at `location`.
pub fn activation_matrix(
    backbone: &BackboneModel,
    images: &[(String, Tensor)],
    location: Location,
) -> Result<ActivationMatrix> {
    if images.is_empty() {
        return Err(Error::Empty("activation_matrix"));
    }
    let rows: Vec<Vec<f64>> = images
        .par_iter()
        .map(|(id, img)| {
            backbone
                .extract_features_at(img, location)
                .map(|(a, _)| a)
                .map_err(|e| Error::invalid("activation_matrix", format!("{id}: {e}")))
        })
        .collect::<Result<_>>()?;
    ActivationMatrix::from_rows(images.iter().map(|(id, _)| id.clone()).collect(), &rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticNeuron {
    /// Unit-norm readout weights.
    pub weights: Vec<f64>,
    /// `wᵀ(A_inᵀA_in − A_outᵀA_out)w`, the largest eigenvalue.
    pub objective: f64,
    /// Set when the Gram difference is identically zero, so every direction
    /// is optimal and `weights` is the first basis vector.
    pub degenerate: bool,
    /// Set when the eigenvector was negated so that the mean within-category
    /// response is not below the mean out-of-category response.
    pub flipped: bool,
}

pub fn gram_difference(a_in: &ActivationMatrix, a_out: &ActivationMatrix) -> Result<Tensor> {
    if a_in.n_features() != a_out.n_features() {
        return Err(Error::shape(
            "build_synthetic_neuron",
            format!("{} vs {} features", a_in.n_features(), a_out.n_features()),
        ));
    }
    let mut d = a_in.gram();
    d.add_scaled(-1.0, &a_out.gram())?;
    Ok(d)
}

pub fn build_synthetic_neuron(
    a_in: &ActivationMatrix,
    a_out: &ActivationMatrix,
) -> Result<SyntheticNeuron> {
    let diff = gram_difference(a_in, a_out)?;
    let degenerate = diff.max_abs() == 0.0;
    let eig = symmetric_eigendecomp(&diff)?;
    let mut weights = eig.vectors[0].clone();
    let mean = |v: Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
    let preference = mean(a_in.responses(&weights)?) - mean(a_out.responses(&weights)?);
    let flipped = !degenerate && preference < 0.0;
    if flipped {
        weights.iter_mut().for_each(|w| *w = -*w);
    }
    Ok(SyntheticNeuron {
        weights,
        objective: eig.values[0],
        degenerate,
        flipped,
    })
}

/// `⟨a, w⟩ + N(0, noise_std²)` per stimulus, from a seeded generator.
pub fn generate_synthetic_responses(
    w: &[f64],
    features_by_id: &[Candidate],
    noise_std: f64,
    seed: u64,
) -> Result<Vec<(String, f64)>> {
    if !(noise_std >= 0.0) {
        return Err(Error::invalid(
            "generate_synthetic_responses",
            format!("noise_std must be non-negative, got {noise_std}"),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_std).expect("non-negative std");
    features_by_id
        .iter()
        .map(|c| {
            let clean = predict(w, &c.features)?;
            let y = if noise_std > 0.0 {
                clean + noise.sample(&mut rng)
            } else {
                clean
            };
            Ok((c.id.clone(), y))
        })
        .collect()
}
