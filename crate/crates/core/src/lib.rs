//! Shared-feature saliency for neural readouts.

pub mod backbone;
pub mod config;
pub mod eigen;
pub mod error;
pub mod fixtures;
pub mod gradcheck;
pub mod image;
pub mod manifest;
pub mod ops;
pub mod optim;
pub mod pipeline;
pub mod readout;
pub mod record;
pub mod saliency;
pub mod similarity;
pub mod stats;
pub mod synth;
pub mod tensor;
pub mod weights;

pub use backbone::{BackboneModel, Layer};
pub use config::PipelineConfig;
pub use error::{Error, Result};
pub use ops::Location;
pub use pipeline::run_pipeline;
pub use readout::{ReadoutModel, TrainConfig};
pub use record::{finite_diff, vjp, ComputationRecord, Recorder};
pub use saliency::{AttributionConfig, AttributionMethod, SaliencyMap};
pub use tensor::Tensor;
pub use weights::WeightContainer;
