//! Pixmap encode/decode, bilinear resizing and overlay rendering.
//!
//!     cargo run --example image_io -- /tmp/sfv-images

use std::fs;

use sfv::fixtures::{texture_image, TextureClass};
use sfv::image::{decode_ppm, encode_ppm, load_image, overlay, save_ppm, WARM};
use sfv::Tensor;

fn main() -> sfv::Result<()> {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "target/sfv-images".into());
    fs::create_dir_all(&dir)?;
    let img = texture_image(TextureClass::Blobs, 48, 2);
    let path = format!("{dir}/blobs.ppm");
    save_ppm(&img, &path)?;
    assert_eq!(decode_ppm(&fs::read(&path)?)?, img);

    let small = load_image(&path, 24)?;
    println!("loaded {}x{} as {}x{}", img.width(), img.height(), small.width(), small.height());

    let map = Tensor::from_fn(&[24, 24], |i| {
        let (y, x) = ((i / 24) as f64 - 12.0, (i % 24) as f64 - 12.0);
        (-(x * x + y * y) / 20.0).exp()
    });
    let blended = overlay(&small, &map)?;
    let n = 24 * 24;
    let centre = 12 * 24 + 12;
    let px: Vec<f64> = (0..3).map(|c| blended.data()[c * n + centre]).collect();
    println!("peak pixel {px:.3?} (warm colour {WARM:?})");
    fs::write(format!("{dir}/overlay.ppm"), encode_ppm(&blended))?;
    println!("written to {dir}");
    Ok(())
}
