//! Writing-quality scores and per-annotator calibration.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Initial and final writing-quality scores, both on a 1–10 scale.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QualityScores {
    pub iwqs: u8,
    pub fwqs: u8,
    pub annotator: String,
}

impl QualityScores {
    pub fn validate(&self) -> Result<()> {
        for s in [self.iwqs, self.fwqs] {
            if !(1..=10).contains(&s) {
                return Err(Error::ScoreOutOfRange(s));
            }
        }
        Ok(())
    }
}

/// Value assigned to every score of an annotator whose scores do not vary.
pub const DEGENERATE_SCORE: f64 = 5.5;

/// Per-annotator z-scores (population standard deviation), min-max rescaled
/// onto `[1, 10]`.
pub fn normalize_scores(by_annotator: &BTreeMap<String, Vec<u8>>) -> Result<BTreeMap<String, Vec<f64>>> {
    by_annotator
        .iter()
        .map(|(who, raw)| Ok((who.clone(), normalize_one(who, raw)?)))
        .collect()
}

fn normalize_one(who: &str, raw: &[u8]) -> Result<Vec<f64>> {
    if raw.is_empty() {
        return Err(Error::EmptyScores(who.into()));
    }
    if let Some(&bad) = raw.iter().find(|s| !(1..=10).contains(*s)) {
        return Err(Error::ScoreOutOfRange(bad));
    }
    let n = raw.len() as f64;
    let mean = raw.iter().map(|&x| f64::from(x)).sum::<f64>() / n;
    let var = raw.iter().map(|&x| (f64::from(x) - mean) * (f64::from(x) - mean)).sum::<f64>() / n;
    let std = libm::sqrt(var);
    if std == 0.0 {
        return Ok(alloc::vec![DEGENERATE_SCORE; raw.len()]);
    }
    let z: Vec<f64> = raw.iter().map(|&x| (f64::from(x) - mean) / std).collect();
    let lo = z.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(z.iter().map(|v| 1.0 + 9.0 * (v - lo) / (hi - lo)).collect())
}
