//! Build the micro-CNN, save and reload it, and read features at two
//! locations of the final map.
//!
//!     cargo run --example backbone_features

use sfv::backbone::{load_weights, save_weights};
use sfv::fixtures::{fixture_backbone, texture_image, TextureClass};
use sfv::Location;

fn main() -> sfv::Result<()> {
    let backbone = fixture_backbone();
    println!("layers: {}", backbone.layers().len());
    println!("final map: {:?}", backbone.featmap_shape());

    let path = std::env::temp_dir().join("sfv_backbone.sfvw");
    save_weights(&backbone, &path)?;
    let reloaded = load_weights(&path)?;
    assert_eq!(reloaded, backbone);
    println!("round trip through {} ok", path.display());

    let image = texture_image(TextureClass::Stripes, 32, 1).to_tensor();
    for loc in [backbone.readout_location(), Location::new(0.1, 0.9)?] {
        let (a, record) = backbone.extract_features_at(&image, loc)?;
        let live = a.iter().filter(|&&x| x > 0.0).count();
        println!(
            "at ({:.1}, {:.1}): {live}/{} active, max {:.3}, {} recorded ops",
            loc.u,
            loc.v,
            a.len(),
            a.iter().cloned().fold(0.0, f64::max),
            record.len()
        );
    }
    Ok(())
}
