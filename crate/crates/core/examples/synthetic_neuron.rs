//! Build a stripe-selective linear neuron from activation statistics and test
//! its selectivity on fresh images.
//!
//!     cargo run --release --example synthetic_neuron

use sfv::fixtures::{fixture_backbone, texture_set, TextureClass};
use sfv::stats::mann_whitney_u;
use sfv::synth::{activation_matrix, build_synthetic_neuron};
use sfv::Tensor;

fn set(class: TextureClass, seed: u64) -> Vec<(String, Tensor)> {
    texture_set(class, 50, 32, seed)
        .into_iter()
        .map(|(id, img)| (id, img.to_tensor()))
        .collect()
}

fn main() -> sfv::Result<()> {
    let b = fixture_backbone();
    let loc = b.readout_location();
    let a_in = activation_matrix(&b, &set(TextureClass::Stripes, 0), loc)?;
    let a_out = activation_matrix(&b, &set(TextureClass::Blobs, 100), loc)?;
    let neuron = build_synthetic_neuron(&a_in, &a_out)?;
    println!("objective {:.4} (flipped: {})", neuron.objective, neuron.flipped);

    let r_in = activation_matrix(&b, &set(TextureClass::Stripes, 200), loc)?.responses(&neuron.weights)?;
    let r_out = activation_matrix(&b, &set(TextureClass::Blobs, 300), loc)?.responses(&neuron.weights)?;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    println!("mean response: stripes {:.4}, blobs {:.4}", mean(&r_in), mean(&r_out));
    let mw = mann_whitney_u(&r_in, &r_out)?;
    println!("Mann-Whitney U = {}, z = {:.2}, p = {:.2e}", mw.u, mw.z, mw.p_value);
    Ok(())
}
