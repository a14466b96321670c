//! End-to-end run: load → fit → select → saliency → render → report.
//!
//! Each stage failure is wrapped with the stage name. All files are written
//! by the coordinator in [`run_pipeline`]; on failure every file it wrote is
//! removed again, as is the output directory if the run created it.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;

use crate::backbone::{load_weights, BackboneModel};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::image::{encode_ppm, load_image, magnitude_graymap, overlay, Image};
use crate::manifest::{ResponseManifest, Split};
use crate::readout::{evaluate, fit_readout_on_maps, Evaluation, ReadoutModel, TrainingLog, TrainingStimulus};
use crate::saliency::{check_bound, parallel_saliency, BoundReport, ParallelSaliency};
use crate::similarity::{most_similar_pair, select_reference, top_k_activators, Candidate, Ranking};

pub const REPORT_FILE: &str = "report.txt";
pub const READOUT_FILE: &str = "readout.sfvw";
pub const SIDECAR_FILE: &str = "saliency.txt";
pub const MAP_OUT_FILE: &str = "saliency_out.pgm";
pub const MAP_IN_FILE: &str = "saliency_in.pgm";
pub const OVERLAY_OUT_FILE: &str = "overlay_out.ppm";
pub const OVERLAY_IN_FILE: &str = "overlay_in.ppm";

#[derive(Debug, Clone)]
pub struct Stimulus {
    pub id: String,
    pub image: Image,
    pub response: Option<f64>,
    pub split: Split,
}

#[derive(Debug, Clone)]
pub struct LoadedInputs {
    pub backbone: Arc<BackboneModel>,
    pub manifest: ResponseManifest,
    /// Train, val and test rows in manifest order.
    pub within: Vec<Stimulus>,
    pub ooc: Vec<Stimulus>,
}

pub fn load_inputs(cfg: &PipelineConfig) -> Result<LoadedInputs> {
    cfg.validate()?;
    let backbone = load_weights(&cfg.backbone)?;
    if backbone.input_size() != cfg.input_size {
        return Err(Error::Config(format!(
            "input_size {} does not match backbone input size {}",
            cfg.input_size,
            backbone.input_size()
        )));
    }
    let manifest = ResponseManifest::load(&cfg.manifest)?;
    let required: &[Split] = if cfg.readout.is_some() { &[] } else { &[Split::Train, Split::Val] };
    manifest.validate(required)?;
    let stimuli: Vec<Stimulus> = manifest
        .entries()
        .par_iter()
        .map(|e| {
            Ok(Stimulus {
                id: e.stimulus_id.clone(),
                image: load_image(&e.image, cfg.input_size)?,
                response: e.response,
                split: e.split,
            })
        })
        .collect::<Result<_>>()?;
    let (ooc, within) = stimuli.into_iter().partition(|s| s.split == Split::Ooc);
    Ok(LoadedInputs {
        backbone: Arc::new(backbone),
        manifest,
        within,
        ooc,
    })
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub model: ReadoutModel,
    /// `None` when the readout was loaded rather than trained.
    pub log: Option<TrainingLog>,
    pub val: Option<Evaluation>,
    pub test: Option<Evaluation>,
}

fn training_data(inputs: &LoadedInputs) -> Result<Vec<TrainingStimulus>> {
    inputs
        .within
        .par_iter()
        .filter_map(|s| s.response.map(|r| (s, r)))
        .map(|(s, response)| {
            Ok(TrainingStimulus {
                id: s.id.clone(),
                featmap: inputs.backbone.feature_map(&s.image.to_tensor())?,
                response,
                split: s.split,
            })
        })
        .collect()
}

fn maybe_evaluate(model: &ReadoutModel, data: &[TrainingStimulus], split: Split, alpha: f64) -> Result<Option<Evaluation>> {
    if data.iter().filter(|s| s.split == split).count() < 4 {
        return Ok(None);
    }
    match evaluate(model, data, split, alpha) {
        Ok(e) => Ok(Some(e)),
        Err(Error::ZeroVariance(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Train the readout, or load the configured one, and score it.
pub fn fit_stage(cfg: &PipelineConfig, inputs: &LoadedInputs) -> Result<FitOutcome> {
    let data = training_data(inputs)?;
    let (model, log) = match &cfg.readout {
        Some(path) => (ReadoutModel::load(path, inputs.backbone.clone())?, None),
        None => {
            let (m, log) = fit_readout_on_maps(&data, inputs.backbone.clone(), &cfg.train_config())?;
            (m, Some(log))
        }
    };
    Ok(FitOutcome {
        val: maybe_evaluate(&model, &data, Split::Val, cfg.alpha)?,
        test: maybe_evaluate(&model, &data, Split::Test, cfg.alpha)?,
        model,
        log,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectOutcome {
    pub top_out: Ranking,
    pub top_in: Ranking,
    /// Index into [`LoadedInputs::ooc`].
    pub x_out: usize,
    /// Index into [`LoadedInputs::within`].
    pub x_in: usize,
    pub similarity: f64,
    pub filtered: bool,
}

pub fn candidates(model: &ReadoutModel, set: &[Stimulus]) -> Result<Vec<Candidate>> {
    set.par_iter()
        .map(|s| Ok(Candidate::new(s.id.clone(), model.features(&s.image.to_tensor())?.0)))
        .collect()
}

/// Rank both sets by predicted response and pick the most similar pair for
/// the strongest out-of-category driver (or over both top-k lists when
/// filtering is on).
pub fn select_stage(cfg: &PipelineConfig, inputs: &LoadedInputs, model: &ReadoutModel) -> Result<SelectOutcome> {
    if inputs.ooc.is_empty() {
        return Err(Error::Empty("out-of-category candidate set"));
    }
    if inputs.within.is_empty() {
        return Err(Error::Empty("within-category candidate set"));
    }
    let w = &model.weights;
    let out_c = candidates(model, &inputs.ooc)?;
    let in_c = candidates(model, &inputs.within)?;
    let top_out = top_k_activators(w, &out_c, cfg.top_k_out)?;
    let top_in = top_k_activators(w, &in_c, cfg.top_k_in)?;
    let (x_out, x_in, similarity) = if cfg.filter_top_k {
        let outs: Vec<Candidate> = top_out.entries.iter().map(|e| out_c[e.0].clone()).collect();
        let ins: Vec<Candidate> = top_in.entries.iter().map(|e| in_c[e.0].clone()).collect();
        let p = most_similar_pair(&outs, &ins, w)?;
        (top_out.entries[p.out_index].0, top_in.entries[p.in_index].0, p.similarity)
    } else {
        let driver = top_out.entries[0].0;
        let sel = select_reference(&out_c[driver].features, &in_c, w)?;
        (driver, sel.index, sel.similarity)
    };
    Ok(SelectOutcome {
        top_out,
        top_in,
        x_out,
        x_in,
        similarity,
        filtered: cfg.filter_top_k,
    })
}

#[derive(Debug, Clone)]
pub struct SaliencyOutcome {
    pub maps: ParallelSaliency,
    pub bound_out: BoundReport,
    pub bound_in: BoundReport,
}

pub fn saliency_stage(
    cfg: &PipelineConfig,
    inputs: &LoadedInputs,
    model: &ReadoutModel,
    sel: &SelectOutcome,
) -> Result<SaliencyOutcome> {
    let out = &inputs.ooc[sel.x_out];
    let inn = &inputs.within[sel.x_in];
    let maps = parallel_saliency(
        model,
        (&out.id, &out.image.to_tensor()),
        (&inn.id, &inn.image.to_tensor()),
        &cfg.attribution,
    )?;
    let bound_out = check_bound(&maps.out_map)?;
    let bound_in = check_bound(&maps.in_map)?;
    Ok(SaliencyOutcome {
        maps,
        bound_out,
        bound_in,
    })
}

/// Tracks files written during a run so a failure can remove them.
struct OutputDir {
    dir: PathBuf,
    created: bool,
    written: Vec<PathBuf>,
}

impl OutputDir {
    fn open(dir: &Path) -> Result<Self> {
        let created = !dir.exists();
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            created,
            written: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        self.written.push(path.clone());
        fs::write(&path, bytes)?;
        Ok(())
    }

    fn rollback(self) {
        for p in &self.written {
            let _ = fs::remove_file(p);
        }
        if self.created {
            let _ = fs::remove_dir(&self.dir);
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub output_dir: PathBuf,
    pub report: String,
    /// File names written under `output_dir`, in write order.
    pub artifacts: Vec<String>,
    pub fit: FitOutcome,
    pub selection: SelectOutcome,
    pub saliency: SaliencyOutcome,
}

fn file_name(p: &Path) -> String {
    p.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned())
}

fn push_eval(r: &mut String, split: &str, e: &Option<Evaluation>) {
    match e {
        Some(e) => {
            let _ = writeln!(r, "eval.{split}.n={}", e.n);
            let _ = writeln!(r, "eval.{split}.pearson_r={:?}", e.pearson_r);
            let _ = writeln!(r, "eval.{split}.threshold={:?}", e.threshold);
            let _ = writeln!(r, "eval.{split}.significant={}", e.significant);
        }
        None => {
            let _ = writeln!(r, "eval.{split}=unavailable");
        }
    }
}

fn ranking_ids(r: &Ranking) -> String {
    r.ids().join(",")
}

fn build_report(
    cfg: &PipelineConfig,
    inputs: &LoadedInputs,
    fit: &FitOutcome,
    sel: &SelectOutcome,
    sal: &SaliencyOutcome,
    artifacts: &[String],
) -> String {
    let mut r = String::new();
    let m = &fit.model;
    let _ = writeln!(r, "status=ok");
    let _ = writeln!(r, "seed={}", cfg.seed);
    let _ = writeln!(r, "backbone={}", file_name(&cfg.backbone));
    let _ = writeln!(r, "manifest={}", file_name(&cfg.manifest));
    let _ = writeln!(r, "input_size={}", cfg.input_size);
    let _ = writeln!(r, "feature_dim={}", m.feature_dim());
    let _ = writeln!(r, "n_within={}", inputs.within.len());
    let _ = writeln!(r, "n_ooc={}", inputs.ooc.len());
    let _ = writeln!(r, "readout.source={}", if fit.log.is_some() { "fitted" } else { "loaded" });
    let _ = writeln!(r, "readout.u={:?}", m.location.u);
    let _ = writeln!(r, "readout.v={:?}", m.location.v);
    let _ = writeln!(r, "readout.weight_norm={:?}", m.weights.iter().map(|w| w * w).sum::<f64>().sqrt());
    if let Some(log) = &fit.log {
        let _ = writeln!(r, "fit.epochs={}", log.epochs.len());
        let _ = writeln!(r, "fit.best_epoch={}", log.best_epoch);
        let _ = writeln!(r, "fit.best_val_mse={:?}", log.best_val_mse);
        let best = &log.epochs[log.best_epoch - 1];
        let _ = writeln!(r, "fit.train_mse={:?}", best.train_mse);
        let _ = writeln!(r, "fit.train_loss={:?}", best.train_loss);
    }
    push_eval(&mut r, "val", &fit.val);
    push_eval(&mut r, "test", &fit.test);
    let _ = writeln!(r, "rank.out={}", ranking_ids(&sel.top_out));
    let _ = writeln!(r, "rank.out.truncated={}", sel.top_out.truncated);
    let _ = writeln!(r, "rank.in={}", ranking_ids(&sel.top_in));
    let _ = writeln!(r, "rank.in.truncated={}", sel.top_in.truncated);
    let _ = writeln!(r, "select.filtered={}", sel.filtered);
    let _ = writeln!(r, "pair.x_out={}", inputs.ooc[sel.x_out].id);
    let _ = writeln!(r, "pair.x_in={}", inputs.within[sel.x_in].id);
    let _ = writeln!(r, "pair.similarity={:?}", sal.maps.similarity.value);
    let method = match cfg.attribution.method {
        crate::saliency::AttributionMethod::Vanilla => "vanilla",
        crate::saliency::AttributionMethod::IntegratedGradients => "integrated_gradients",
    };
    let _ = writeln!(r, "saliency.method={method}");
    let _ = writeln!(r, "saliency.ig_steps={}", cfg.attribution.ig_steps);
    let _ = writeln!(r, "saliency.smoothing_sigma={:?}", cfg.attribution.smoothing_sigma);
    let _ = writeln!(r, "saliency.norm_out={:?}", sal.bound_out.l2_norm);
    let _ = writeln!(r, "saliency.norm_in={:?}", sal.bound_in.l2_norm);
    let _ = writeln!(r, "saliency.bound={:?}", sal.bound_out.bound);
    let _ = writeln!(r, "saliency.degenerate_out={}", sal.maps.degenerate_out.len());
    let _ = writeln!(r, "saliency.degenerate_in={}", sal.maps.degenerate_in.len());
    let _ = writeln!(r, "bound_check=pass");
    let _ = writeln!(r, "artifacts={}", artifacts.join(","));
    r
}

fn stage<T>(name: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    f().map_err(|e| e.in_stage(name))
}

/// Run every stage and write the artifacts under the configured output dir.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineRun> {
    let inputs = stage("load", || load_inputs(cfg))?;
    let fit = stage("fit", || fit_stage(cfg, &inputs))?;
    let selection = stage("select", || select_stage(cfg, &inputs, &fit.model))?;
    let saliency = stage("saliency", || saliency_stage(cfg, &inputs, &fit.model, &selection))?;

    let mut out = stage("render", || OutputDir::open(&cfg.output_dir))?;
    let mut artifacts: Vec<String> = Vec::new();
    let written = stage("render", || {
        let mut put = |name: &str, bytes: Vec<u8>| -> Result<()> {
            out.write(name, &bytes)?;
            artifacts.push(name.to_string());
            Ok(())
        };
        if fit.log.is_some() {
            put(READOUT_FILE, fit.model.to_container().to_bytes())?;
        }
        let img_out = &inputs.ooc[selection.x_out].image;
        let img_in = &inputs.within[selection.x_in].image;
        put(MAP_OUT_FILE, magnitude_graymap(&saliency.maps.out_map.values)?)?;
        put(MAP_IN_FILE, magnitude_graymap(&saliency.maps.in_map.values)?)?;
        put(OVERLAY_OUT_FILE, encode_ppm(&overlay(img_out, &saliency.maps.out_map.values)?))?;
        put(OVERLAY_IN_FILE, encode_ppm(&overlay(img_in, &saliency.maps.in_map.values)?))?;
        put(SIDECAR_FILE, saliency.maps.report_text().into_bytes())
    });
    if let Err(e) = written {
        out.rollback();
        return Err(e);
    }
    let report = build_report(cfg, &inputs, &fit, &selection, &saliency, &artifacts);
    if let Err(e) = stage("report", || out.write(REPORT_FILE, report.as_bytes())) {
        out.rollback();
        return Err(e);
    }
    artifacts.push(REPORT_FILE.to_string());
    Ok(PipelineRun {
        output_dir: cfg.output_dir.clone(),
        report,
        artifacts,
        fit,
        selection,
        saliency,
    })
}

/// Parse a `key=value` report into ordered pairs.
pub fn parse_report(text: &str) -> Vec<(String, String)> {
    text.lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}
