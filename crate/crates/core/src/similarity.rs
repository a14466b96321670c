//! Neuron-specific image similarity: cosine similarity of activation
//! vectors after weighting each feature by the readout weight.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityScore {
    pub value: f64,
    pub pair: (String, String),
}

fn check_dims(a1: &[f64], a2: &[f64], w: &[f64]) -> Result<()> {
    if a1.len() != w.len() || a2.len() != w.len() {
        return Err(Error::shape(
            "neuron_similarity",
            format!("activations {} and {}, weights {}", a1.len(), a2.len(), w.len()),
        ));
    }
    Ok(())
}

/// `‖a ⊙ w‖₂`.
pub fn weighted_norm(a: &[f64], w: &[f64]) -> f64 {
    a.iter()
        .zip(w)
        .map(|(x, y)| (x * y) * (x * y))
        .sum::<f64>()
        .sqrt()
}

/// `⟨a1⊙w, a2⊙w⟩ / (‖a1⊙w‖ ‖a2⊙w‖)`.
pub fn neuron_similarity(a1: &[f64], a2: &[f64], w: &[f64]) -> Result<f64> {
    check_dims(a1, a2, w)?;
    let n1 = weighted_norm(a1, w);
    if n1 == 0.0 {
        return Err(Error::DegenerateActivations {
            which: "first".into(),
        });
    }
    let n2 = weighted_norm(a2, w);
    if n2 == 0.0 {
        return Err(Error::DegenerateActivations {
            which: "second".into(),
        });
    }
    let dot: f64 = a1
        .iter()
        .zip(a2)
        .zip(w)
        .map(|((x, y), wi)| (x * wi) * (y * wi))
        .sum();
    Ok(dot / (n1 * n2))
}

impl SimilarityScore {
    pub fn between(
        id_a: &str,
        a1: &[f64],
        id_b: &str,
        a2: &[f64],
        w: &[f64],
    ) -> Result<Self> {
        let value = neuron_similarity(a1, a2, w).map_err(|e| match e {
            Error::DegenerateActivations { which } => Error::DegenerateActivations {
                which: if which == "first" { id_a } else { id_b }.to_string(),
            },
            other => other,
        })?;
        Ok(Self {
            value,
            pair: (id_a.to_string(), id_b.to_string()),
        })
    }
}

/// A feature vector tagged with its stimulus id.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub id: String,
    pub features: Vec<f64>,
}

impl Candidate {
    pub fn new(id: impl Into<String>, features: Vec<f64>) -> Self {
        Self {
            id: id.into(),
            features,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub index: usize,
    pub id: String,
    pub similarity: f64,
    /// Candidates skipped for having zero weighted norm.
    pub skipped: usize,
}

/// The candidate most similar to `x_out` under the neuron-specific metric.
/// Ties go to the lowest index; zero-norm candidates are skipped.
pub fn select_reference(x_out: &[f64], candidates: &[Candidate], w: &[f64]) -> Result<Selection> {
    if weighted_norm(x_out, w) == 0.0 {
        return Err(Error::DegenerateActivations {
            which: "x_out".into(),
        });
    }
    let mut best: Option<(usize, f64)> = None;
    let mut skipped = 0;
    for (i, cand) in candidates.iter().enumerate() {
        match neuron_similarity(x_out, &cand.features, w) {
            Ok(s) => {
                if best.is_none_or(|(_, b)| s > b) {
                    best = Some((i, s));
                }
            }
            Err(Error::DegenerateActivations { .. }) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    let (index, similarity) = best.ok_or(Error::NoValidCandidate)?;
    Ok(Selection {
        index,
        id: candidates[index].id.clone(),
        similarity,
        skipped,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairSelection {
    pub out_index: usize,
    pub in_index: usize,
    pub similarity: f64,
}

/// Most similar (out, in) pair over two candidate lists, ties broken by
/// lowest out index, then lowest in index.
pub fn most_similar_pair(
    out_candidates: &[Candidate],
    in_candidates: &[Candidate],
    w: &[f64],
) -> Result<PairSelection> {
    let mut best: Option<PairSelection> = None;
    for (oi, o) in out_candidates.iter().enumerate() {
        if weighted_norm(&o.features, w) == 0.0 {
            continue;
        }
        let sel = match select_reference(&o.features, in_candidates, w) {
            Ok(sel) => sel,
            Err(Error::NoValidCandidate) => continue,
            Err(e) => return Err(e),
        };
        if best.as_ref().is_none_or(|b| sel.similarity > b.similarity) {
            best = Some(PairSelection {
                out_index: oi,
                in_index: sel.index,
                similarity: sel.similarity,
            });
        }
    }
    best.ok_or(Error::NoValidCandidate)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ranking {
    /// `(index, id, predicted response)`, highest first.
    pub entries: Vec<(usize, String, f64)>,
    /// Set when fewer than `k` stimuli were available.
    pub truncated: bool,
}

impl Ranking {
    pub fn ids(&self) -> Vec<&str> {
        self.entries.iter().map(|(_, id, _)| id.as_str()).collect()
    }
}

/// The `k` highest predicted responses `⟨a, w⟩`, descending, ties by index.
pub fn top_k_activators(w: &[f64], features_by_id: &[Candidate], k: usize) -> Result<Ranking> {
    if k == 0 {
        return Err(Error::invalid("top_k_activators", "k must be at least 1"));
    }
    let mut scored = Vec::with_capacity(features_by_id.len());
    for (i, c) in features_by_id.iter().enumerate() {
        scored.push((i, c.id.clone(), crate::readout::predict(w, &c.features)?));
    }
    // stable sort keeps index order among equal predictions
    scored.sort_by(|a, b| b.2.total_cmp(&a.2));
    let truncated = k > scored.len();
    scored.truncate(k);
    Ok(Ranking {
        entries: scored,
        truncated,
    })
}
