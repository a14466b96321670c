//! Pipeline configuration in TOML.
//!
//! ```toml
//! backbone = "backbone.sfvw"
//! manifest = "manifest.tsv"
//! output_dir = "out"
//! input_size = 224
//! seed = 0
//!
//! [train]
//! epochs = 2500
//!
//! [attribution]
//! method = "integrated_gradients"
//! ```
//!
//! Relative paths are resolved against the directory holding the config file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::backbone::DEFAULT_INPUT_SIZE;
use crate::error::{Error, Result};
use crate::readout::TrainConfig;
use crate::saliency::AttributionConfig;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub backbone: PathBuf,
    pub manifest: PathBuf,
    /// Pre-fitted readout; when set the fit stage loads it instead of training.
    pub readout: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub input_size: usize,
    /// Seeds readout initialisation.
    pub seed: u64,
    /// Number of strongest out-of-category drivers reported.
    pub top_k_out: usize,
    pub top_k_in: usize,
    /// Restrict the pair search to the top-k lists on both sides.
    pub filter_top_k: bool,
    /// Significance level of the held-out correlation test.
    pub alpha: f64,
    pub train: TrainConfig,
    pub attribution: AttributionConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            backbone: PathBuf::new(),
            manifest: PathBuf::new(),
            readout: None,
            output_dir: PathBuf::from("out"),
            input_size: DEFAULT_INPUT_SIZE,
            seed: 0,
            top_k_out: 5,
            top_k_in: 15,
            filter_top_k: false,
            alpha: 0.05,
            train: TrainConfig::default(),
            attribution: AttributionConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for p in [&mut cfg.backbone, &mut cfg.manifest, &mut cfg.output_dir] {
            *p = base_dir.join(&*p);
        }
        if let Some(r) = cfg.readout.as_mut() {
            *r = base_dir.join(&*r);
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// The training config with the pipeline seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let exists = |what: &str, p: &Path| {
            if p.is_file() {
                Ok(())
            } else {
                Err(Error::Config(format!("{what} {} not found", p.display())))
            }
        };
        exists("backbone", &self.backbone)?;
        exists("manifest", &self.manifest)?;
        if let Some(r) = &self.readout {
            exists("readout", r)?;
        }
        if self.input_size == 0 {
            return Err(Error::Config("input_size must be at least 1".into()));
        }
        if self.top_k_out == 0 || self.top_k_in == 0 {
            return Err(Error::Config("top_k_out and top_k_in must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1], got {}", self.alpha)));
        }
        self.train.validate()?;
        self.attribution.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::saliency::AttributionMethod;

    #[test]
    fn defaults_and_relative_paths() {
        let cfg = PipelineConfig::parse(
            "backbone = \"b.sfvw\"\nmanifest = \"m.tsv\"\n[attribution]\nmethod = \"integrated_gradients\"\n",
            Path::new("/runs/a"),
        )
        .unwrap();
        assert_eq!(cfg.backbone, Path::new("/runs/a/b.sfvw"));
        assert_eq!(cfg.output_dir, Path::new("/runs/a/out"));
        assert_eq!(cfg.input_size, 224);
        assert_eq!(cfg.train.epochs, 2500);
        assert_eq!(cfg.attribution.method, AttributionMethod::IntegratedGradients);
        assert_eq!(cfg.attribution.ig_steps, 32);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(PipelineConfig::parse("backbne = \"x\"\n", Path::new(".")).is_err());
        assert!(PipelineConfig::parse("[train]\nlr = 1.0\n", Path::new(".")).is_err());
    }

    #[test]
    fn missing_files_fail_validation() {
        let cfg = PipelineConfig::parse("backbone = \"nope.sfvw\"\nmanifest = \"m.tsv\"\n", Path::new("/nonexistent"))
            .unwrap();
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("backbone"), "{err}");
    }
}
