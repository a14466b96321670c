use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};

use sfv::backbone::load_weights;
use sfv::config::PipelineConfig;
use sfv::image::load_image;
use sfv::manifest::ResponseManifest;
use sfv::pipeline::{fit_stage, load_inputs, run_pipeline, select_stage, FitOutcome};
use sfv::readout::{Evaluation, ReadoutModel};
use sfv::stats::mann_whitney_u;
use sfv::synth::{activation_matrix, build_synthetic_neuron};
use sfv::{Error, Location, Result};

#[derive(Parser)]
#[command(name = "sfv", version, about = "Shared-feature saliency for linear neural readouts")]
struct Cli {
    /// Pipeline config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a readout and write it with its training log.
    Fit,
    /// Rank candidates and print the most similar out/in pair.
    SelectReference,
    /// Run the full pipeline and write maps, overlays and a report.
    Visualize,
    /// Build a category-selective readout from two image manifests.
    SynthNeuron {
        #[arg(long)]
        backbone: PathBuf,
        /// Manifest of preferred-category images.
        #[arg(long)]
        within: PathBuf,
        /// Manifest of control images.
        #[arg(long)]
        ooc: PathBuf,
        /// Readout location as `u,v`; defaults to the backbone's.
        #[arg(long, value_parser = parse_location)]
        location: Option<Location>,
    },
    /// Score the readout on the validation and test splits.
    Eval,
    /// Finite-difference checks of all gradients.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        seeds: usize,
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
}

fn parse_location(s: &str) -> std::result::Result<Location, String> {
    let (u, v) = s.split_once(',').ok_or("expected u,v")?;
    let u = u.trim().parse::<f64>().map_err(|e| e.to_string())?;
    let v = v.trim().parse::<f64>().map_err(|e| e.to_string())?;
    Location::new(u, v).map_err(|e| e.to_string())
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config is required for this command".into()))?;
    let mut cfg = PipelineConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

fn eval_lines(fit: &FitOutcome) -> String {
    let mut s = String::new();
    for (name, e) in [("val", &fit.val), ("test", &fit.test)] {
        match e {
            Some(Evaluation {
                n,
                pearson_r,
                threshold,
                significant,
            }) => {
                let _ = writeln!(s, "{name}: n={n} r={pearson_r:.4} threshold={threshold:.4} significant={significant}");
            }
            None => {
                let _ = writeln!(s, "{name}: unavailable");
            }
        }
    }
    s
}

fn fit(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    let inputs = load_inputs(&cfg).map_err(|e| e.in_stage("load"))?;
    let fit = fit_stage(&cfg, &inputs).map_err(|e| e.in_stage("fit"))?;
    fs::create_dir_all(&cfg.output_dir)?;
    fit.model.save(cfg.output_dir.join("readout.sfvw"))?;
    if let Some(log) = &fit.log {
        let mut tsv = String::from("epoch\ttrain_loss\ttrain_mse\tval_mse\tu\tv\n");
        for e in &log.epochs {
            let _ = writeln!(
                tsv,
                "{}\t{:?}\t{:?}\t{:?}\t{:?}\t{:?}",
                e.epoch, e.train_loss, e.train_mse, e.val_mse, e.location.u, e.location.v
            );
        }
        fs::write(cfg.output_dir.join("fit_log.tsv"), tsv)?;
        println!("best epoch {} (val mse {:.6})", log.best_epoch, log.best_val_mse);
    }
    print!("{}", eval_lines(&fit));
    Ok(())
}

fn select(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    let inputs = load_inputs(&cfg).map_err(|e| e.in_stage("load"))?;
    let fit = fit_stage(&cfg, &inputs).map_err(|e| e.in_stage("fit"))?;
    let sel = select_stage(&cfg, &inputs, &fit.model).map_err(|e| e.in_stage("select"))?;
    println!("top out-of-category drivers:");
    for (_, id, y) in &sel.top_out.entries {
        println!("  {id}\t{y:.6}");
    }
    println!(
        "pair: {} -> {} (s = {:.6})",
        inputs.ooc[sel.x_out].id, inputs.within[sel.x_in].id, sel.similarity
    );
    Ok(())
}

fn visualize(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    let run = run_pipeline(&cfg)?;
    print!("{}", run.report);
    Ok(())
}

fn eval(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    let inputs = load_inputs(&cfg).map_err(|e| e.in_stage("load"))?;
    let fit = fit_stage(&cfg, &inputs).map_err(|e| e.in_stage("fit"))?;
    print!("{}", eval_lines(&fit));
    Ok(())
}

fn images(manifest: &Path, size: usize) -> Result<Vec<(String, sfv::Tensor)>> {
    let m = ResponseManifest::load(manifest)?;
    m.validate(&[])?;
    m.entries()
        .iter()
        .map(|e| Ok((e.stimulus_id.clone(), load_image(&e.image, size)?.to_tensor())))
        .collect()
}

fn synth_neuron(cli: &Cli, backbone: &Path, within: &Path, ooc: &Path, location: Option<Location>) -> Result<()> {
    let backbone = Arc::new(load_weights(backbone)?);
    let loc = location.unwrap_or(backbone.readout_location());
    let a_in = activation_matrix(&backbone, &images(within, backbone.input_size())?, loc)?;
    let a_out = activation_matrix(&backbone, &images(ooc, backbone.input_size())?, loc)?;
    let neuron = build_synthetic_neuron(&a_in, &a_out)?;
    let r_in = a_in.responses(&neuron.weights)?;
    let r_out = a_out.responses(&neuron.weights)?;
    let mw = mann_whitney_u(&r_in, &r_out)?;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;

    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&out)?;
    ReadoutModel::new(backbone, neuron.weights.clone(), loc)?.save(out.join("neuron.sfvw"))?;
    let mut report = String::new();
    let _ = writeln!(report, "n_within={}", a_in.n_rows());
    let _ = writeln!(report, "n_ooc={}", a_out.n_rows());
    let _ = writeln!(report, "objective={:?}", neuron.objective);
    let _ = writeln!(report, "degenerate={}", neuron.degenerate);
    let _ = writeln!(report, "flipped={}", neuron.flipped);
    let _ = writeln!(report, "mean_within={:?}", mean(&r_in));
    let _ = writeln!(report, "mean_ooc={:?}", mean(&r_out));
    let _ = writeln!(report, "mann_whitney.u={:?}", mw.u);
    let _ = writeln!(report, "mann_whitney.z={:?}", mw.z);
    let _ = writeln!(report, "mann_whitney.p={:?}", mw.p_value);
    let _ = writeln!(report, "mann_whitney.reliable={}", mw.approximation_reliable);
    fs::write(out.join("selectivity.txt"), &report)?;
    print!("{report}");
    Ok(())
}

fn gradcheck(seeds: usize, step: f64, tolerance: f64) -> Result<bool> {
    let mut ok = true;
    for r in sfv::gradcheck::run_suite(seeds, step)? {
        let pass = r.passed(tolerance);
        ok &= pass;
        println!(
            "{} {:<26} seeds={} checked={} max_rel_err={:.3e}",
            if pass { "PASS" } else { "FAIL" },
            r.name,
            r.seeds,
            r.checked,
            r.max_rel_err
        );
    }
    Ok(ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Fit => fit(&cli).map(|_| true),
        Command::SelectReference => select(&cli).map(|_| true),
        Command::Visualize => visualize(&cli).map(|_| true),
        Command::Eval => eval(&cli).map(|_| true),
        Command::SynthNeuron {
            backbone,
            within,
            ooc,
            location,
        } => synth_neuron(&cli, backbone, within, ooc, *location).map(|_| true),
        Command::Gradcheck { seeds, step, tolerance } => gradcheck(*seeds, *step, *tolerance),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
