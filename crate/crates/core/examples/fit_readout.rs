//! Recover a known sparse readout from noisy synthetic responses.
//!
//! `cargo run --release --example fit_readout [snr] [scale] [learning_rate]`

use std::sync::Arc;

use sfv::fixtures::{fixture_backbone, recovery_problem, sparse_weights, RecoverySpec};
use sfv::manifest::Split;
use sfv::readout::{evaluate, fit_readout_on_maps, TrainConfig};

fn main() -> sfv::Result<()> {
    let mut args = std::env::args().skip(1);
    let snr: f64 = args.next().map_or(10.0, |s| s.parse().expect("snr"));
    let scale: f64 = args.next().map_or(0.1, |s| s.parse().expect("scale"));
    let learning_rate: f64 = args.next().map_or(1e-4, |s| s.parse().expect("learning rate"));

    let backbone = Arc::new(fixture_backbone());
    let w_star: Vec<f64> = sparse_weights(64, 10, 1).iter().map(|w| w * scale).collect();
    let spec = RecoverySpec {
        n_train: 400,
        n_val: 50,
        n_test: 25,
        snr,
        seed: 100,
    };
    let data = recovery_problem(&backbone, &w_star, &spec)?;
    let config = TrainConfig {
        learning_rate,
        ..TrainConfig::default()
    };
    let t = std::time::Instant::now();
    let (model, log) = fit_readout_on_maps(&data, backbone, &config)?;
    println!("trained {} epochs in {:.1?}", config.epochs, t.elapsed());
    println!("best epoch {} val mse {:.3e}", log.best_epoch, log.best_val_mse);
    let test = evaluate(&model, &data, Split::Test, 0.05)?;
    println!(
        "test r = {:.4} (n = {}, critical r = {:.4}, significant = {})",
        test.pearson_r, test.n, test.threshold, test.significant
    );
    println!("location = ({:.3}, {:.3})", model.location.u, model.location.v);
    println!("feature  true      fitted");
    for (i, (a, b)) in w_star.iter().zip(&model.weights).enumerate() {
        if *a != 0.0 || b.abs() > 0.02 {
            println!("{i:>7}  {a:+.4}  {b:+.4}");
        }
    }
    Ok(())
}
