//! Three-way preference judgments over paragraph variants.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::kendalls_w;

/// Which version of a paragraph a variant is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Condition {
    LLMGenerated,
    WriterEdited,
    LLMEditedOracle,
    LLMEditedFull,
}

impl Condition {
    pub const ALL: [Condition; 4] = [
        Condition::LLMGenerated,
        Condition::WriterEdited,
        Condition::LLMEditedOracle,
        Condition::LLMEditedFull,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Condition::LLMGenerated => "LLM-generated",
            Condition::WriterEdited => "Writer-edited",
            Condition::LLMEditedOracle => "LLM-edited-oracle",
            Condition::LLMEditedFull => "LLM-edited-full",
        }
    }
}

/// One judge's ranking of a shuffled triplet.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferenceJudgment {
    pub triplet_id: String,
    pub judge: String,
    /// Rank (1 = most preferred) to the condition holding it.
    pub condition_of_rank: BTreeMap<u8, Condition>,
    /// Conditions in the order the judge saw them.
    pub display_order: Vec<Condition>,
}

impl PreferenceJudgment {
    pub fn validate(&self) -> Result<()> {
        let ranks: Vec<u8> = self.condition_of_rank.keys().copied().collect();
        if ranks != [1, 2, 3] {
            return Err(Error::NotPermutation(ranks.iter().map(|&r| u32::from(r)).collect()));
        }
        let conds: BTreeSet<Condition> = self.condition_of_rank.values().copied().collect();
        if conds.len() != 3 {
            return Err(Error::InvalidParameter(format!(
                "triplet {} judged by {} repeats a condition",
                self.triplet_id, self.judge
            )));
        }
        for must in [Condition::WriterEdited, Condition::LLMGenerated] {
            if !conds.contains(&must) {
                return Err(Error::InvalidParameter(format!(
                    "triplet {} lacks {}",
                    self.triplet_id,
                    must.label()
                )));
            }
        }
        let shown: BTreeSet<Condition> = self.display_order.iter().copied().collect();
        if self.display_order.len() != 3 || shown != conds {
            return Err(Error::InvalidParameter(format!(
                "triplet {} display order does not match its conditions",
                self.triplet_id
            )));
        }
        Ok(())
    }

    pub fn rank_of(&self, cond: Condition) -> Option<u8> {
        self.condition_of_rank.iter().find(|(_, c)| **c == cond).map(|(r, _)| *r)
    }

    pub fn conditions(&self) -> BTreeSet<Condition> {
        self.condition_of_rank.values().copied().collect()
    }
}

/// Mean rank per condition over the judgments that contain it.
pub fn average_ranks(judgments: &[PreferenceJudgment]) -> BTreeMap<Condition, f64> {
    let mut acc: BTreeMap<Condition, (u64, u64)> = BTreeMap::new();
    for j in judgments {
        for (&rank, &cond) in &j.condition_of_rank {
            let e = acc.entry(cond).or_insert((0, 0));
            e.0 += u64::from(rank);
            e.1 += 1;
        }
    }
    acc.into_iter().map(|(c, (sum, n))| (c, sum as f64 / n as f64)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub per_triplet_w: Vec<(String, f64)>,
    /// Mean of the per-triplet coefficients.
    pub mean_w: f64,
    pub n_judgments: usize,
}

/// Kendall's W per triplet (items are the triplet's conditions, judges its
/// raters), averaged over triplets.
pub fn mean_agreement(judgments: &[PreferenceJudgment]) -> Result<AgreementReport> {
    let mut by_triplet: BTreeMap<&str, Vec<&PreferenceJudgment>> = BTreeMap::new();
    for j in judgments {
        j.validate()?;
        by_triplet.entry(j.triplet_id.as_str()).or_default().push(j);
    }
    if by_triplet.is_empty() {
        return Err(Error::TooFew { what: "judgments", needed: 1, got: 0 });
    }
    let mut per_triplet_w = Vec::with_capacity(by_triplet.len());
    for (id, js) in by_triplet {
        if js.len() < 2 {
            return Err(Error::TooFew { what: "judges per triplet", needed: 2, got: js.len() });
        }
        let items: Vec<Condition> = js[0].conditions().into_iter().collect();
        let mut rows = Vec::with_capacity(js.len());
        for j in &js {
            if j.conditions().into_iter().collect::<Vec<_>>() != items {
                return Err(Error::InvalidParameter(format!(
                    "triplet {id} judged over different conditions"
                )));
            }
            rows.push(items.iter().map(|&c| u32::from(j.rank_of(c).unwrap_or(0))).collect());
        }
        per_triplet_w.push((String::from(id), kendalls_w(&rows)?));
    }
    let mean_w = per_triplet_w.iter().map(|(_, w)| w).sum::<f64>() / per_triplet_w.len() as f64;
    Ok(AgreementReport { per_triplet_w, mean_w, n_judgments: judgments.len() })
}
