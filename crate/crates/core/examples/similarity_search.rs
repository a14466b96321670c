//! Rank candidates by predicted response and find each driver's most
//! similar reference under the neuron-specific metric.
//!
//!     cargo run --example similarity_search

use sfv::fixtures::{fixture_backbone, sparse_weights, texture_set, TextureClass};
use sfv::similarity::{most_similar_pair, select_reference, top_k_activators, Candidate};

fn main() -> sfv::Result<()> {
    let backbone = fixture_backbone();
    let w = sparse_weights(64, 12, 3);
    let features = |class, seed| -> sfv::Result<Vec<Candidate>> {
        texture_set(class, 20, 32, seed)
            .into_iter()
            .map(|(id, img)| Ok(Candidate::new(id, backbone.extract_features(&img.to_tensor())?.0)))
            .collect()
    };
    let blobs = features(TextureClass::Blobs, 10)?;
    let stripes = features(TextureClass::Stripes, 20)?;

    let top = top_k_activators(&w, &blobs, 3)?;
    for (i, id, y) in &top.entries {
        let best = select_reference(&blobs[*i].features, &stripes, &w)?;
        println!("{id} (response {y:+.3}) -> {} (s = {:.4})", best.id, best.similarity);
    }
    let pair = most_similar_pair(&blobs, &stripes, &w)?;
    println!(
        "most similar pair overall: {} -> {} (s = {:.4})",
        blobs[pair.out_index].id, stripes[pair.in_index].id, pair.similarity
    );
    Ok(())
}
