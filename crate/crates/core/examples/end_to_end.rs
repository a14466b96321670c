//! Write a synthetic study (stripe-selective neuron, blob controls) and run
//! the whole pipeline on it.
//!
//!     cargo run --release --example end_to_end -- /tmp/sfv-study

use sfv::config::PipelineConfig;
use sfv::fixtures::{write_study, StudySpec};
use sfv::pipeline::run_pipeline;

fn main() -> sfv::Result<()> {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "target/sfv-study".into());
    let study = write_study(&dir, &StudySpec::default())?;
    println!("study written to {}", study.dir.display());

    let cfg = PipelineConfig::load(&study.config)?;
    let run = run_pipeline(&cfg)?;
    print!("{}", run.report);
    println!("artifacts in {}", run.output_dir.display());
    Ok(())
}
