use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Mean cosine distance (1 − cos) over same-label and cross-label pairs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PairDistances {
    pub positive: Option<f64>,
    pub negative: Option<f64>,
    pub positive_pairs: u64,
    pub negative_pairs: u64,
}

fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        dot += x as f64 * y as f64;
        na += x as f64 * x as f64;
        nb += y as f64 * y as f64;
    }
    let (na, nb) = (na.sqrt(), nb.sqrt());
    if na < 1e-8 || nb < 1e-8 {
        0.0
    } else {
        dot / (na * nb + 1e-8)
    }
}

/// Every unordered pair's cosine distance, split by whether labels agree.
pub fn pair_distance_samples(embeddings: &[Tensor], labels: &[bool]) -> Result<(Vec<f64>, Vec<f64>)> {
    if embeddings.len() != labels.len() {
        return Err(Error::shape(format!("{} embeddings for {} labels", embeddings.len(), labels.len())));
    }
    let (mut pos, mut neg) = (Vec::new(), Vec::new());
    for i in 0..embeddings.len() {
        for j in i + 1..embeddings.len() {
            let d = 1.0 - cosine(embeddings[i].data(), embeddings[j].data());
            if labels[i] == labels[j] {
                pos.push(d);
            } else {
                neg.push(d);
            }
        }
    }
    Ok((pos, neg))
}

pub fn pair_distances(embeddings: &[Tensor], labels: &[bool]) -> Result<PairDistances> {
    let (pos, neg) = pair_distance_samples(embeddings, labels)?;
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    Ok(PairDistances { positive: mean(&pos), negative: mean(&neg), positive_pairs: pos.len() as u64, negative_pairs: neg.len() as u64 })
}
