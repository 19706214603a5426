//! Profile and statistical similarity between forecasts, and top-k lookup.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::experience::{ExperienceId, ExperienceStore};
use crate::scenario::Forecast;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RetrievalError {
    #[error("forecast horizons differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("store is empty")]
    EmptyStore,
}

/// Cosine similarity of non-negative vectors, clamped to [0, 1].
/// Two zero vectors are identical (1); a zero and a non-zero vector share
/// nothing (0).
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    match (na == 0.0, nb == 0.0) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        // sqrt of the product makes identical vectors score exactly 1.
        _ => (dot / (na * nb).sqrt()).clamp(0.0, 1.0),
    }
}

fn check(a: &Forecast, b: &Forecast) -> Result<(), RetrievalError> {
    if a.horizon() != b.horizon() {
        return Err(RetrievalError::DimensionMismatch(a.horizon(), b.horizon()));
    }
    Ok(())
}

/// Product of the PV and load shape cosines.
pub fn profile_similarity(a: &Forecast, b: &Forecast) -> Result<f64, RetrievalError> {
    check(a, b)?;
    Ok(cosine(&a.pv, &b.pv) * cosine(&a.load, &b.load))
}

/// Max, min, mean and population standard deviation of each series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatFeatures {
    pub load_stats: [f64; 4],
    pub pv_stats: [f64; 4],
}

fn stats(v: &[f64]) -> [f64; 4] {
    if v.is_empty() {
        return [0.0; 4];
    }
    let n = v.len() as f64;
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = v.iter().copied().fold(f64::INFINITY, f64::min);
    // Clamp guards against rounding pushing the mean past an extreme.
    let mean = (v.iter().sum::<f64>() / n).clamp(min, max);
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    [max, min, mean, var.sqrt()]
}

pub fn stat_features(f: &Forecast) -> StatFeatures {
    StatFeatures {
        load_stats: stats(&f.load),
        pv_stats: stats(&f.pv),
    }
}

/// Product of the PV and load statistic-vector cosines.
pub fn statistical_similarity(a: &Forecast, b: &Forecast) -> Result<f64, RetrievalError> {
    check(a, b)?;
    Ok(features_similarity(&stat_features(a), &stat_features(b)))
}

pub fn features_similarity(a: &StatFeatures, b: &StatFeatures) -> f64 {
    cosine(&a.pv_stats, &b.pv_stats) * cosine(&a.load_stats, &b.load_stats)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredMatch {
    pub id: ExperienceId,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub profile_matches: Vec<ScoredMatch>,
    pub statistical_matches: Vec<ScoredMatch>,
}

impl RetrievalResult {
    pub fn is_empty(&self) -> bool {
        self.profile_matches.is_empty() && self.statistical_matches.is_empty()
    }

    /// Ids in both lists, profile list first, without repeats.
    pub fn distinct_ids(&self) -> Vec<ExperienceId> {
        let mut out: Vec<ExperienceId> = Vec::new();
        for m in self.profile_matches.iter().chain(&self.statistical_matches) {
            if !out.contains(&m.id) {
                out.push(m.id);
            }
        }
        out
    }
}

/// Higher score first; equal scores go to the older (smaller) id.
fn ranks_before(a: &ScoredMatch, b: &ScoredMatch) -> bool {
    a.score > b.score || (a.score == b.score && a.id < b.id)
}

/// Keeps the best `k` candidates by bounded insertion.
pub fn top_k(candidates: impl IntoIterator<Item = ScoredMatch>, k: usize) -> Vec<ScoredMatch> {
    let mut best: Vec<ScoredMatch> = Vec::with_capacity(k + 1);
    if k == 0 {
        return best;
    }
    for c in candidates {
        if best.len() == k && !ranks_before(&c, &best[k - 1]) {
            continue;
        }
        let at = best.iter().position(|b| ranks_before(&c, b)).unwrap_or(best.len());
        best.insert(at, c);
        best.truncate(k);
    }
    best
}

/// Top `k_p` entries by profile similarity and top `k_s` by statistical
/// similarity. Each list is cut at the store size if `k` exceeds it.
pub fn retrieve(
    store: &ExperienceStore,
    query: &Forecast,
    k_p: usize,
    k_s: usize,
) -> Result<RetrievalResult, RetrievalError> {
    if store.is_empty() {
        return Err(RetrievalError::EmptyStore);
    }
    let qf = stat_features(query);
    let mut profile = Vec::with_capacity(store.len());
    let mut statistical = Vec::with_capacity(store.len());
    for e in store.entries() {
        profile.push(ScoredMatch {
            id: e.id,
            score: profile_similarity(query, &e.context)?,
        });
        check(query, &e.context)?;
        statistical.push(ScoredMatch {
            id: e.id,
            score: features_similarity(&qf, &stat_features(&e.context)),
        });
    }
    Ok(RetrievalResult {
        profile_matches: top_k(profile, k_p),
        statistical_matches: top_k(statistical, k_s),
    })
}
