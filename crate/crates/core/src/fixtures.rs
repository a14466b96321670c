//! Seeded synthetic stimuli and the bundled fixture backbone.
//!
//! Two texture classes stand in for a preferred category and its
//! out-of-category controls: oriented colour gratings and soft blobs on a
//! dark background. Every image is a pure function of its seed.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::backbone::{BackboneModel, MicroCnnConfig};
use crate::error::Result;
use crate::image::{decode_ppm, encode_ppm, Image};
use crate::manifest::{ManifestEntry, ResponseManifest, Split};
use crate::ops;
use crate::readout::TrainingStimulus;
use crate::similarity::Candidate;
use crate::synth::{activation_matrix, build_synthetic_neuron, generate_synthetic_responses};
use crate::tensor::Tensor;

pub const FIXTURE_SEED: u64 = 20_240_917;
pub const FIXTURE_INPUT_SIZE: usize = 32;

/// Shipped copy of [`fixture_backbone`] in container form.
pub const FIXTURE_BACKBONE_FILE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/micro_cnn.sfvw");

pub fn fixture_config() -> MicroCnnConfig {
    MicroCnnConfig {
        input_size: FIXTURE_INPUT_SIZE,
        ..MicroCnnConfig::default()
    }
}

/// Default architecture at 32×32 input, 64 features on a 4×4 grid.
pub fn fixture_backbone() -> BackboneModel {
    BackboneModel::micro_cnn(fixture_config(), FIXTURE_SEED).expect("fixture config is valid")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TextureClass {
    Stripes,
    Blobs,
}

impl TextureClass {
    pub fn prefix(self) -> &'static str {
        match self {
            TextureClass::Stripes => "stripes",
            TextureClass::Blobs => "blobs",
        }
    }

    fn salt(self) -> u64 {
        match self {
            TextureClass::Stripes => 0x5354_5249,
            TextureClass::Blobs => 0x424c_4f42,
        }
    }
}

fn stripes(size: usize, rng: &mut ChaCha8Rng) -> Image {
    let theta = rng.random_range(0.0..PI);
    let freq = rng.random_range(2.0..5.0);
    let phase = rng.random_range(0.0..2.0 * PI);
    let tint: [f64; 3] = [
        rng.random_range(0.3..1.0),
        rng.random_range(0.3..1.0),
        rng.random_range(0.3..1.0),
    ];
    let (c, s) = (theta.cos(), theta.sin());
    Image::from_fn(size, size, |ch, y, x| {
        let t = (x as f64 * c + y as f64 * s) / size as f64;
        tint[ch] * (0.5 + 0.5 * (2.0 * PI * freq * t + phase).sin())
    })
    .expect("values are clamped")
}

fn blobs(size: usize, rng: &mut ChaCha8Rng) -> Image {
    let bg = rng.random_range(0.05..0.2);
    let n = rng.random_range(3..=6);
    let spots: Vec<(f64, f64, f64, [f64; 3])> = (0..n)
        .map(|_| {
            let cx = rng.random_range(0.0..size as f64);
            let cy = rng.random_range(0.0..size as f64);
            let r = rng.random_range(0.06..0.2) * size as f64;
            let col = [
                rng.random_range(0.2..0.9),
                rng.random_range(0.2..0.9),
                rng.random_range(0.2..0.9),
            ];
            (cx, cy, r, col)
        })
        .collect();
    Image::from_fn(size, size, |ch, y, x| {
        spots.iter().fold(bg, |acc, (cx, cy, r, col)| {
            let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
            acc + col[ch] * (-d2 / (2.0 * r * r)).exp()
        })
    })
    .expect("values are clamped")
}

/// One texture image, quantised to 8 bits so it survives a pixmap round trip.
pub fn texture_image(class: TextureClass, size: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ class.salt().rotate_left(17));
    let img = match class {
        TextureClass::Stripes => stripes(size, &mut rng),
        TextureClass::Blobs => blobs(size, &mut rng),
    };
    decode_ppm(&encode_ppm(&img)).expect("encoder output decodes")
}

/// `n` images with ids `<class>_000`, `<class>_001`, ….
pub fn texture_set(class: TextureClass, n: usize, size: usize, seed: u64) -> Vec<(String, Image)> {
    (0..n)
        .map(|i| {
            let id = format!("{}_{i:03}", class.prefix());
            (id, texture_image(class, size, seed.wrapping_add(i as u64)))
        })
        .collect()
}

/// Uniform noise image as a `3×size×size` tensor.
pub fn random_image(size: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(&[3, size, size], |_| rng.random::<f64>())
}

/// Unit-free sparse weights: `nonzero` entries drawn from N(0, 1) at random
/// positions, the rest exactly zero.
pub fn sparse_weights(c: usize, nonzero: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..c).collect();
    for i in 0..nonzero.min(c) {
        let j = rng.random_range(i..c);
        idx.swap(i, j);
    }
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut w = vec![0.0; c];
    for &i in &idx[..nonzero.min(c)] {
        w[i] = normal.sample(&mut rng);
    }
    w
}

/// Split sizes and noise level of a [`recovery_problem`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecoverySpec {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    /// Clean-response variance over noise variance; infinite for no noise.
    pub snr: f64,
    pub seed: u64,
}

fn std_dev(v: &[f64]) -> f64 {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
}

/// Training stimuli whose responses come from a known readout `w_star` at the
/// backbone's readout location, plus Gaussian noise at the requested SNR.
/// Images alternate between the two texture classes.
pub fn recovery_problem(backbone: &BackboneModel, w_star: &[f64], spec: &RecoverySpec) -> Result<Vec<TrainingStimulus>> {
    use rayon::prelude::*;
    let total = spec.n_train + spec.n_val + spec.n_test;
    let size = backbone.input_size();
    let maps: Vec<(String, Tensor)> = (0..total)
        .into_par_iter()
        .map(|i| {
            let class = if i % 2 == 0 { TextureClass::Stripes } else { TextureClass::Blobs };
            let img = texture_image(class, size, spec.seed.wrapping_add(i as u64));
            Ok((format!("{}_{i:04}", class.prefix()), backbone.feature_map(&img.to_tensor())?))
        })
        .collect::<Result<_>>()?;
    let loc = backbone.readout_location();
    let cands: Vec<Candidate> = maps
        .iter()
        .map(|(id, m)| Ok(Candidate::new(id.clone(), ops::bilinear_sample(m, loc)?)))
        .collect::<Result<_>>()?;
    let clean = generate_synthetic_responses(w_star, &cands, 0.0, spec.seed)?;
    let clean: Vec<f64> = clean.into_iter().map(|(_, y)| y).collect();
    let noise_std = if spec.snr.is_finite() { std_dev(&clean) / spec.snr.sqrt() } else { 0.0 };
    let noisy = generate_synthetic_responses(w_star, &cands, noise_std, spec.seed)?;
    Ok(maps
        .into_iter()
        .zip(noisy)
        .enumerate()
        .map(|(i, ((id, featmap), (_, response)))| TrainingStimulus {
            id,
            featmap,
            response,
            split: if i < spec.n_train {
                Split::Train
            } else if i < spec.n_train + spec.n_val {
                Split::Val
            } else {
                Split::Test
            },
        })
        .collect())
}

/// Layout of a synthetic study written by [`write_study`].
#[derive(Debug, Clone, PartialEq)]
pub struct StudySpec {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub n_ooc: usize,
    /// Response noise as a fraction of the clean response std.
    pub noise_fraction: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for StudySpec {
    fn default() -> Self {
        Self {
            n_train: 40,
            n_val: 8,
            n_test: 8,
            n_ooc: 24,
            noise_fraction: 0.1,
            epochs: 300,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Study {
    pub dir: PathBuf,
    pub config: PathBuf,
    pub manifest: PathBuf,
    pub backbone: PathBuf,
    /// Weights of the synthetic neuron that generated the responses.
    pub neuron: Vec<f64>,
}

/// Write a complete pipeline input under `dir`: fixture backbone, stripe
/// images with responses of a synthetic stripe-selective neuron, blob images
/// as out-of-category candidates, a manifest and a pipeline config.
pub fn write_study(dir: impl AsRef<Path>, spec: &StudySpec) -> Result<Study> {
    let dir = dir.as_ref().to_path_buf();
    fs::create_dir_all(dir.join("images"))?;
    let backbone = fixture_backbone();
    let size = backbone.input_size();
    let n_in = spec.n_train + spec.n_val + spec.n_test;
    let within = texture_set(TextureClass::Stripes, n_in, size, spec.seed);
    let ooc = texture_set(TextureClass::Blobs, spec.n_ooc, size, spec.seed.wrapping_add(1_000));

    let as_tensors = |set: &[(String, Image)]| -> Vec<(String, Tensor)> {
        set.iter().map(|(id, img)| (id.clone(), img.to_tensor())).collect()
    };
    let loc = backbone.readout_location();
    let a_in = activation_matrix(&backbone, &as_tensors(&within), loc)?;
    let a_out = activation_matrix(&backbone, &as_tensors(&ooc), loc)?;
    let neuron = build_synthetic_neuron(&a_in, &a_out)?.weights;

    let sd = std_dev(&a_in.responses(&neuron)?);
    let responses = generate_synthetic_responses(&neuron, &a_in.candidates(), spec.noise_fraction * sd, spec.seed)?;

    let manifest_path = dir.join("manifest.tsv");
    let mut entries = Vec::new();
    for (i, ((id, img), (_, y))) in within.iter().zip(&responses).enumerate() {
        let split = if i < spec.n_train {
            Split::Train
        } else if i < spec.n_train + spec.n_val {
            Split::Val
        } else {
            Split::Test
        };
        entries.push(entry(&dir, id, img, Some(*y), split)?);
    }
    for (id, img) in &ooc {
        entries.push(entry(&dir, id, img, None, Split::Ooc)?);
    }
    fs::write(&manifest_path, ResponseManifest::from_entries(&manifest_path, entries).to_tsv())?;

    let backbone_path = dir.join("backbone.sfvw");
    crate::backbone::save_weights(&backbone, &backbone_path)?;

    let config_path = dir.join("pipeline.toml");
    fs::write(
        &config_path,
        format!(
            "backbone = \"backbone.sfvw\"\nmanifest = \"manifest.tsv\"\noutput_dir = \"out\"\n\
             input_size = {size}\nseed = {}\n\n[train]\nepochs = {}\nlearning_rate = 0.01\nreg_weight = 0.001\n\n\
             [attribution]\nsmoothing_sigma = 1.0\n",
            spec.seed, spec.epochs
        ),
    )?;
    Ok(Study {
        dir,
        config: config_path,
        manifest: manifest_path,
        backbone: backbone_path,
        neuron,
    })
}

fn entry(dir: &Path, id: &str, img: &Image, response: Option<f64>, split: Split) -> Result<ManifestEntry> {
    let rel = format!("images/{id}.ppm");
    crate::image::save_ppm(img, dir.join(&rel))?;
    Ok(ManifestEntry {
        stimulus_id: id.to_string(),
        image: dir.join(&rel),
        relative_path: rel,
        response,
        split,
        line: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weights::WeightContainer;

    #[test]
    fn shipped_backbone_matches_regeneration() {
        let shipped = WeightContainer::load(FIXTURE_BACKBONE_FILE).unwrap();
        assert_eq!(shipped.to_bytes(), fixture_backbone().to_container().to_bytes());
    }

    #[test]
    fn textures_are_seed_determined() {
        let a = texture_image(TextureClass::Stripes, 16, 3);
        assert_eq!(a, texture_image(TextureClass::Stripes, 16, 3));
        assert_ne!(a, texture_image(TextureClass::Stripes, 16, 4));
        assert_ne!(a, texture_image(TextureClass::Blobs, 16, 3));
    }

    #[test]
    fn sparse_weights_have_requested_support() {
        let w = sparse_weights(64, 10, 1);
        assert_eq!(w.iter().filter(|x| **x != 0.0).count(), 10);
    }
}
