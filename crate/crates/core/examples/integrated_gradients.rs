//! Integrated-gradient rows against plain Jacobian rows, and their
//! convergence in the number of path points.
//!
//!     cargo run --release --example integrated_gradients

use sfv::fixtures::{fixture_backbone, texture_image, TextureClass};
use sfv::saliency::integrated_gradients_rows;

fn rel(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let n: f64 = b.iter().map(|y| y * y).sum();
    (d / n).sqrt()
}

fn main() -> sfv::Result<()> {
    let b = fixture_backbone();
    let x = texture_image(TextureClass::Stripes, 32, 27).to_tensor();
    let (a, _) = b.extract_features(&x)?;
    let live: Vec<usize> = (0..a.len()).filter(|&i| a[i] > 0.0).collect();
    println!("{} active features", live.len());

    let plain = b.jacobian_rows(&x, &live)?;
    let mut prev = integrated_gradients_rows(&b, &x, 1, &live)?;
    println!("m = 1 equals the Jacobian: {}", prev == plain);
    for m in [2, 4, 8, 16, 32, 64, 128] {
        let rows = integrated_gradients_rows(&b, &x, m, &live)?;
        println!(
            "m = {m:>3}: change from m/2 {:.4}, distance from Jacobian {:.3}",
            rel(rows.data(), prev.data()),
            rel(rows.data(), plain.data())
        );
        prev = rows;
    }
    Ok(())
}
