//! Semantic similarity between an original span and its rewrite.
//!
//! The scorer is pluggable. [`TrigramCosine`] is a deterministic
//! character-trigram stand-in for a neural similarity model; it is not a
//! substitute for one when reporting meaning preservation.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default similarity threshold above which an edit preserves meaning.
pub const DEFAULT_MEANING_THRESHOLD: f64 = 0.6;

pub trait SimilarityScorer {
    /// Similarity of `a` and `b` in `[0, 1]`. Failures are returned as a
    /// message and wrapped by [`score_similarity`].
    fn score(&self, a: &str, b: &str) -> core::result::Result<f64, String>;
}

/// Cosine similarity of character-trigram count vectors.
///
/// Strings shorter than three characters contribute themselves as a single
/// gram. Two empty strings score 1; one empty string scores 0.
#[derive(Debug, Clone, Copy, Default)]
pub struct TrigramCosine;

fn trigrams(s: &str) -> BTreeMap<Vec<char>, u32> {
    let chars: Vec<char> = s.chars().collect();
    let mut counts = BTreeMap::new();
    if chars.is_empty() {
        return counts;
    }
    if chars.len() < 3 {
        counts.insert(chars, 1);
        return counts;
    }
    for w in chars.windows(3) {
        *counts.entry(w.to_vec()).or_insert(0) += 1;
    }
    counts
}

impl SimilarityScorer for TrigramCosine {
    fn score(&self, a: &str, b: &str) -> core::result::Result<f64, String> {
        if a == b {
            return Ok(1.0);
        }
        let (ta, tb) = (trigrams(a), trigrams(b));
        if ta.is_empty() || tb.is_empty() {
            return Ok(0.0);
        }
        let dot: f64 = ta
            .iter()
            .filter_map(|(g, &x)| tb.get(g).map(|&y| f64::from(x) * f64::from(y)))
            .sum();
        let norm = |t: &BTreeMap<Vec<char>, u32>| {
            libm::sqrt(t.values().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>())
        };
        Ok((dot / (norm(&ta) * norm(&tb))).clamp(0.0, 1.0))
    }
}

/// Runs `scorer` and checks that the result lies in `[0, 1]`.
pub fn score_similarity<S: SimilarityScorer + ?Sized>(scorer: &S, a: &str, b: &str) -> Result<f64> {
    let s = scorer.score(a, b).map_err(Error::Scorer)?;
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::SimilarityOutOfRange(s));
    }
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MeaningClass {
    MeaningPreserving,
    MeaningChanging,
}

/// `MeaningPreserving` iff `similarity > threshold` (strict).
pub fn classify_meaning(similarity: f64, threshold: f64) -> Result<MeaningClass> {
    if !(0.0..=1.0).contains(&similarity) {
        return Err(Error::SimilarityOutOfRange(similarity));
    }
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::InvalidParameter(alloc::format!("threshold {threshold}")));
    }
    Ok(if similarity > threshold {
        MeaningClass::MeaningPreserving
    } else {
        MeaningClass::MeaningChanging
    })
}
