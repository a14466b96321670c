//! The feature extractor: a small sequential CNN ending in a ReLU, read out
//! at a single spatial location by bilinear sampling.

use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use rayon::prelude::*;

use crate::error::{ContainerError, Error, Result};
use crate::ops::{self, Location};
use crate::record::{vjp, ComputationRecord, Recorder};
use crate::tensor::Tensor;
use crate::weights::WeightContainer;

pub const DEFAULT_INPUT_SIZE: usize = 224;
pub const DEFAULT_FEATURE_DIM: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub kernel: Arc<Tensor>,
    pub bias: Arc<Vec<f64>>,
    pub stride: usize,
    pub padding: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv2d(ConvLayer),
    Relu,
    MaxPool2d { window: usize, stride: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackboneModel {
    layers: Vec<Layer>,
    input_size: usize,
    readout_location: Location,
    feature_dim: usize,
    featmap_shape: Vec<usize>,
}

/// Layer sizes for [`BackboneModel::micro_cnn`].
#[derive(Debug, Clone, Copy)]
pub struct MicroCnnConfig {
    pub input_size: usize,
    pub widths: [usize; 2],
    pub feature_dim: usize,
}

impl Default for MicroCnnConfig {
    fn default() -> Self {
        Self {
            input_size: DEFAULT_INPUT_SIZE,
            widths: [16, 32],
            feature_dim: DEFAULT_FEATURE_DIM,
        }
    }
}

impl BackboneModel {
    pub fn new(layers: Vec<Layer>, input_size: usize, readout_location: Location) -> Result<Self> {
        readout_location.validate()?;
        if !matches!(layers.last(), Some(Layer::Relu)) {
            return Err(Error::invalid("backbone", "the final layer must be a ReLU"));
        }
        if input_size == 0 {
            return Err(Error::invalid("backbone", "input size must be positive"));
        }
        // Shape inference doubles as validation of the layer chain.
        let mut shape = vec![3, input_size, input_size];
        for (i, layer) in layers.iter().enumerate() {
            let [c, h, w] = shape[..] else { unreachable!() };
            shape = match layer {
                Layer::Conv2d(conv) => {
                    let ks = conv.kernel.shape();
                    if ks.len() != 4 || ks[1] != c || ks[2] != ks[3] || conv.bias.len() != ks[0] {
                        return Err(Error::shape(
                            "backbone",
                            format!(
                                "layer {i}: kernel {ks:?} / bias {} incompatible with {c} input channels",
                                conv.bias.len()
                            ),
                        ));
                    }
                    let k = ks[2];
                    if conv.stride == 0 || k > h + 2 * conv.padding || k > w + 2 * conv.padding {
                        return Err(Error::shape(
                            "backbone",
                            format!("layer {i}: kernel {k} does not fit a {h}×{w} input"),
                        ));
                    }
                    vec![
                        ks[0],
                        ops::conv_output_len(h, k, conv.stride, conv.padding),
                        ops::conv_output_len(w, k, conv.stride, conv.padding),
                    ]
                }
                Layer::Relu => shape,
                Layer::MaxPool2d { window, stride } => {
                    if *window == 0 || *stride == 0 || *window > h || *window > w {
                        return Err(Error::shape(
                            "backbone",
                            format!("layer {i}: pool window {window} does not fit {h}×{w}"),
                        ));
                    }
                    vec![c, (h - window) / stride + 1, (w - window) / stride + 1]
                }
            };
        }
        Ok(Self {
            layers,
            input_size,
            readout_location,
            feature_dim: shape[0],
            featmap_shape: shape,
        })
    }

    /// Three conv/ReLU stages with max pooling after the first two,
    /// He-initialised from `seed`.
    pub fn micro_cnn(config: MicroCnnConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut conv = |c_in: usize, c_out: usize, k: usize, stride: usize, padding: usize| {
            let std = (2.0 / (c_in * k * k) as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("positive std");
            let kernel = Tensor::from_fn(&[c_out, c_in, k, k], |_| normal.sample(&mut rng));
            let bias_dist = Uniform::new(-0.02, 0.05).expect("valid range");
            let bias = (0..c_out).map(|_| bias_dist.sample(&mut rng)).collect();
            Layer::Conv2d(ConvLayer {
                kernel: Arc::new(kernel),
                bias: Arc::new(bias),
                stride,
                padding,
            })
        };
        let [w1, w2] = config.widths;
        let layers = vec![
            conv(3, w1, 5, 2, 2),
            Layer::Relu,
            Layer::MaxPool2d { window: 2, stride: 2 },
            conv(w1, w2, 3, 1, 1),
            Layer::Relu,
            Layer::MaxPool2d { window: 2, stride: 2 },
            conv(w2, config.feature_dim, 3, 1, 1),
            Layer::Relu,
        ];
        Self::new(layers, config.input_size, Location::CENTER)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_size(&self) -> usize {
        self.input_size
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn readout_location(&self) -> Location {
        self.readout_location
    }

    /// Shape `c×h_a×w_a` of the final ReLU map.
    pub fn featmap_shape(&self) -> &[usize] {
        &self.featmap_shape
    }

    pub fn with_readout_location(&self, location: Location) -> Result<Self> {
        location.validate()?;
        Ok(Self {
            readout_location: location,
            ..self.clone()
        })
    }

    /// Copy with every bias set to zero.
    pub fn without_biases(&self) -> Self {
        let layers = self
            .layers
            .iter()
            .map(|l| match l {
                Layer::Conv2d(c) => Layer::Conv2d(ConvLayer {
                    bias: Arc::new(vec![0.0; c.bias.len()]),
                    ..c.clone()
                }),
                other => other.clone(),
            })
            .collect();
        Self {
            layers,
            ..self.clone()
        }
    }

    pub fn check_image(&self, image: &Tensor) -> Result<()> {
        let expected = [3, self.input_size, self.input_size];
        if image.shape() != expected {
            return Err(Error::shape(
                "extract_features",
                format!("image shape {:?}, model expects {expected:?}", image.shape()),
            ));
        }
        Ok(())
    }

    fn run(&self, image: &Tensor) -> Result<Recorder> {
        self.check_image(image)?;
        let mut rec = Recorder::new(image.clone());
        for layer in &self.layers {
            match layer {
                Layer::Conv2d(c) => {
                    rec.conv2d(&c.kernel, &c.bias, c.stride, c.padding)?;
                }
                Layer::Relu => {
                    rec.relu();
                }
                Layer::MaxPool2d { window, stride } => {
                    rec.maxpool2d(*window, *stride)?;
                }
            }
        }
        Ok(rec)
    }

    /// The final ReLU map, `c×h_a×w_a`.
    pub fn feature_map(&self, image: &Tensor) -> Result<Tensor> {
        Ok(self.run(image)?.finish().0)
    }

    pub fn extract_features(&self, image: &Tensor) -> Result<(Vec<f64>, ComputationRecord)> {
        self.extract_features_at(image, self.readout_location)
    }

    pub fn extract_features_at(
        &self,
        image: &Tensor,
        location: Location,
    ) -> Result<(Vec<f64>, ComputationRecord)> {
        let mut rec = self.run(image)?;
        rec.bilinear_sample(location)?;
        let (out, record) = rec.finish();
        Ok((out.into_data(), record))
    }

    /// Jacobian rows `∂a_i/∂x` for the requested features, stacked as
    /// `|indices|×3×h×w`. Rows are computed in parallel.
    pub fn jacobian_rows(&self, image: &Tensor, feature_indices: &[usize]) -> Result<Tensor> {
        let (_, record) = self.extract_features(image)?;
        jacobian_rows_from_record(&record, feature_indices)
    }

    pub fn to_container(&self) -> WeightContainer {
        let mut c = WeightContainer::new();
        c.insert_meta("kind", "backbone");
        c.insert_meta("input_size", self.input_size.to_string());
        c.insert_meta(
            "readout_location",
            format!("{:?} {:?}", self.readout_location.u, self.readout_location.v),
        );
        c.insert_meta("layers", self.layers.len().to_string());
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                Layer::Conv2d(conv) => {
                    c.insert_meta(
                        format!("layer.{i}"),
                        format!("conv2d stride={} padding={}", conv.stride, conv.padding),
                    );
                    c.insert_tensor(format!("layer.{i}.weight"), (*conv.kernel).clone());
                    let bias = Tensor::new(vec![conv.bias.len()], (*conv.bias).clone())
                        .expect("non-empty bias");
                    c.insert_tensor(format!("layer.{i}.bias"), bias);
                }
                Layer::Relu => c.insert_meta(format!("layer.{i}"), "relu"),
                Layer::MaxPool2d { window, stride } => c.insert_meta(
                    format!("layer.{i}"),
                    format!("maxpool2d window={window} stride={stride}"),
                ),
            }
        }
        c
    }

    pub fn from_container(c: &WeightContainer) -> std::result::Result<Self, ContainerError> {
        let header = |reason: String| ContainerError::Header { line: 0, reason };
        let kind = c.require_meta("kind")?;
        if kind != "backbone" {
            return Err(header(format!("container kind is {kind:?}, expected \"backbone\"")));
        }
        let input_size: usize = c
            .require_meta("input_size")?
            .parse()
            .map_err(|_| header("input_size is not an integer".into()))?;
        let location = parse_location(c.require_meta("readout_location")?)?;
        let n: usize = c
            .require_meta("layers")?
            .parse()
            .map_err(|_| header("layers is not an integer".into()))?;
        let mut layers = Vec::with_capacity(n);
        for i in 0..n {
            let spec = c.require_meta(&format!("layer.{i}"))?;
            let mut parts = spec.split_whitespace();
            let kind = parts.next().unwrap_or("");
            let mut param = |key: &str| -> std::result::Result<usize, ContainerError> {
                parts
                    .next()
                    .and_then(|p| p.strip_prefix(key)?.strip_prefix('='))
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| header(format!("layer.{i}: missing {key}")))
            };
            let layer = match kind {
                "conv2d" => {
                    let stride = param("stride")?;
                    let padding = param("padding")?;
                    let kernel = c.require_tensor(&format!("layer.{i}.weight"))?.clone();
                    let bias_name = format!("layer.{i}.bias");
                    let bias = c.require_tensor(&bias_name)?;
                    if kernel.rank() != 4 || bias.shape() != [kernel.shape()[0]] {
                        return Err(ContainerError::ShapeMismatch {
                            name: bias_name,
                            expected: vec![kernel.shape()[0]],
                            found: bias.shape().to_vec(),
                        });
                    }
                    Layer::Conv2d(ConvLayer {
                        kernel: Arc::new(kernel),
                        bias: Arc::new(bias.data().to_vec()),
                        stride,
                        padding,
                    })
                }
                "relu" => Layer::Relu,
                "maxpool2d" => {
                    let window = param("window")?;
                    let stride = param("stride")?;
                    Layer::MaxPool2d { window, stride }
                }
                other => return Err(header(format!("layer.{i}: unknown layer kind {other:?}"))),
            };
            layers.push(layer);
        }
        Self::new(layers, input_size, location).map_err(|e| header(e.to_string()))
    }
}

pub(crate) fn parse_location(s: &str) -> std::result::Result<Location, ContainerError> {
    let bad = || ContainerError::Header {
        line: 0,
        reason: format!("bad readout location {s:?}"),
    };
    let mut it = s.split_whitespace().map(|p| p.parse::<f64>());
    match (it.next(), it.next(), it.next()) {
        (Some(Ok(u)), Some(Ok(v)), None) => Location::new(u, v).map_err(|_| bad()),
        _ => Err(bad()),
    }
}

/// Jacobian rows for a finished feature-extraction record.
pub fn jacobian_rows_from_record(
    record: &ComputationRecord,
    feature_indices: &[usize],
) -> Result<Tensor> {
    let c = record.output_shape()[0];
    if let Some(&bad) = feature_indices.iter().find(|&&i| i >= c) {
        return Err(Error::IndexOutOfRange {
            what: "feature",
            index: bad,
            len: c,
        });
    }
    if feature_indices.is_empty() {
        return Err(Error::Empty("jacobian_rows"));
    }
    let rows: Vec<Tensor> = feature_indices
        .par_iter()
        .map(|&i| vjp(record, &Tensor::one_hot(&[c], i)?))
        .collect::<Result<_>>()?;
    Tensor::stack(&rows)
}

pub fn extract_features(
    model: &BackboneModel,
    image: &Tensor,
) -> Result<(Vec<f64>, ComputationRecord)> {
    model.extract_features(image)
}

pub fn jacobian_rows(
    model: &BackboneModel,
    image: &Tensor,
    feature_indices: &[usize],
) -> Result<Tensor> {
    model.jacobian_rows(image, feature_indices)
}

pub fn save_weights(model: &BackboneModel, path: impl AsRef<Path>) -> Result<()> {
    model.to_container().save(path)
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<BackboneModel> {
    let path = path.as_ref();
    let c = WeightContainer::load(path)?;
    BackboneModel::from_container(&c).map_err(|source| Error::Container {
        path: path.to_path_buf(),
        source,
    })
}
