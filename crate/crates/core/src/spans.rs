//! Character-overlap span precision and multi-annotator agreement.
//!
//! General precision is the share of predicted characters covered by any
//! gold span; categorical precision only credits characters whose gold span
//! has the same category. Spans are half-open `[start, end)` character
//! ranges.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::category::EditCategory;
use crate::edit::find_overlap;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSpan {
    pub start: usize,
    pub end: usize,
    pub category: EditCategory,
}

impl LabeledSpan {
    pub fn new(start: usize, end: usize, category: EditCategory) -> Self {
        LabeledSpan { start, end, category }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecisionResult {
    pub general: f64,
    pub categorical: f64,
    pub predicted_chars: usize,
    pub overlap_chars: usize,
    pub category_matched_chars: usize,
}

fn check_side(spans: &[LabeledSpan], text_length: usize) -> Result<()> {
    for s in spans {
        if s.start >= s.end || s.end > text_length {
            return Err(Error::OffsetOutOfRange { start: s.start, end: s.end, len: text_length });
        }
    }
    let ranges: Vec<(usize, usize)> = spans.iter().map(|s| (s.start, s.end)).collect();
    match find_overlap(&ranges) {
        Some((i, j)) => Err(Error::Overlap { first: ranges[i], second: ranges[j] }),
        None => Ok(()),
    }
}

fn intersection(a: &LabeledSpan, b: &LabeledSpan) -> usize {
    a.end.min(b.end).saturating_sub(a.start.max(b.start))
}

/// Span precision of `predicted` against `gold`.
///
/// An empty prediction set is vacuously precise (both scores 1.0) and is
/// recognisable by `predicted_chars == 0`.
pub fn precision(
    predicted: &[LabeledSpan],
    gold: &[LabeledSpan],
    text_length: usize,
) -> Result<PrecisionResult> {
    check_side(predicted, text_length)?;
    check_side(gold, text_length)?;
    let predicted_chars: usize = predicted.iter().map(LabeledSpan::len).sum();
    let (mut overlap, mut matched) = (0, 0);
    for p in predicted {
        for g in gold {
            let o = intersection(p, g);
            overlap += o;
            if p.category == g.category {
                matched += o;
            }
        }
    }
    let ratio = |x: usize| if predicted_chars == 0 { 1.0 } else { x as f64 / predicted_chars as f64 };
    Ok(PrecisionResult {
        general: ratio(overlap),
        categorical: ratio(matched),
        predicted_chars,
        overlap_chars: overlap,
        category_matched_chars: matched,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agreement {
    pub general: f64,
    pub categorical: f64,
    /// Ordered annotator pairs averaged over.
    pub pairs: usize,
}

/// Mean precision over all ordered annotator pairs, each annotator in turn
/// serving as prediction against every other as gold.
pub fn pairwise_agreement(
    annotations: &BTreeMap<String, Vec<LabeledSpan>>,
    text_length: usize,
) -> Result<Agreement> {
    if annotations.len() < 2 {
        return Err(Error::TooFew { what: "annotators", needed: 2, got: annotations.len() });
    }
    let (mut general, mut categorical, mut pairs) = (0.0, 0.0, 0usize);
    for (a, pred) in annotations {
        for (b, gold) in annotations {
            if a == b {
                continue;
            }
            let r = precision(pred, gold, text_length)?;
            general += r.general;
            categorical += r.categorical;
            pairs += 1;
        }
    }
    Ok(Agreement {
        general: general / pairs as f64,
        categorical: categorical / pairs as f64,
        pairs,
    })
}
