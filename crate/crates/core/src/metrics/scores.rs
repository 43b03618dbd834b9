//! Score collections and the cosine similarity they derive from.

use crate::embedding::Embedding;
use crate::error::{Error, Result};

/// Genuine and impostor similarity score collections.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSet {
    pub genuine: Vec<f64>,
    pub impostor: Vec<f64>,
}

impl ScoreSet {
    pub fn new(genuine: Vec<f64>, impostor: Vec<f64>) -> Result<Self> {
        if genuine.iter().chain(impostor.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Metric("scores must be finite".to_string()));
        }
        Ok(ScoreSet { genuine, impostor })
    }

    /// Errors unless both sides are non-empty (metric evaluations need
    /// both distributions).
    pub fn require_nonempty(&self) -> Result<()> {
        if self.genuine.is_empty() {
            return Err(Error::Metric("no genuine scores".to_string()));
        }
        if self.impostor.is_empty() {
            return Err(Error::Metric("no impostor scores".to_string()));
        }
        Ok(())
    }
}

/// Cosine similarity of two unit-norm embeddings: their dot product.
pub fn cosine_score(a: &Embedding, b: &Embedding) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Contract(format!(
            "embedding dims differ: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(a.values().dot(&b.values()))
}
