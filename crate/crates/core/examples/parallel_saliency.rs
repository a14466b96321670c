//! Paired saliency maps for two images and their shared features, written as
//! graymaps and overlays.
//!
//!     cargo run --release --example parallel_saliency -- /tmp/sfv-maps

use std::fs;
use std::sync::Arc;

use sfv::fixtures::{fixture_backbone, sparse_weights, texture_image, TextureClass};
use sfv::image::{magnitude_graymap, render_overlay};
use sfv::saliency::{check_bound, parallel_saliency, AttributionConfig};
use sfv::ReadoutModel;

fn main() -> sfv::Result<()> {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "target/sfv-maps".into());
    fs::create_dir_all(&dir)?;
    let model = ReadoutModel::at_default_location(Arc::new(fixture_backbone()), sparse_weights(64, 24, 11))?;
    let x_out = texture_image(TextureClass::Blobs, 32, 5);
    let x_in = texture_image(TextureClass::Stripes, 32, 27);

    let cfg = AttributionConfig::default();
    let p = parallel_saliency(&model, ("blobs_005", &x_out.to_tensor()), ("stripes_027", &x_in.to_tensor()), &cfg)?;
    print!("{}", p.report_text());
    for (map, image, name) in [(&p.out_map, &x_out, "out"), (&p.in_map, &x_in, "in")] {
        let r = check_bound(map)?;
        println!("{name}: |I| = {:.4} <= s = {:.4} (margin {:.2e})", r.l2_norm, r.bound, r.margin());
        fs::write(format!("{dir}/saliency_{name}.pgm"), magnitude_graymap(&map.values)?)?;
        render_overlay(image, &map.values, format!("{dir}/overlay_{name}.ppm"))?;
    }
    println!("maps written to {dir}");
    Ok(())
}
