//! Corpus records and corpus-level edit statistics.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::category::EditCategory;
use crate::edit::{apply_edits, classify_edit_operation, find_overlap, EditOperation, EditSpan};
use crate::error::{Error, Result};
use crate::levenshtein::levenshtein;
use crate::scores::{normalize_scores, QualityScores};
use crate::similarity::{classify_meaning, score_similarity, MeaningClass, SimilarityScorer};
use crate::stats::pearson_r;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Genre {
    Fiction,
    TravelWriting,
    FoodWriting,
    PersonalEssay,
    InternetAdvice,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Split {
    Train,
    Test,
}

/// One instruction/response pair with its provenance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParagraphRecord {
    pub id: String,
    pub genre: Genre,
    pub venue: String,
    pub seed_paragraph: Option<String>,
    pub instruction: String,
    pub generator: String,
    pub response: String,
    pub split: Split,
}

/// A response together with one annotator's chronological edit log and
/// quality scores.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedParagraph {
    #[serde(flatten)]
    pub record: ParagraphRecord,
    pub edits: Vec<EditSpan>,
    pub scores: QualityScores,
}

fn record_err(id: &str, field: impl Into<String>, message: impl ToString) -> Error {
    Error::Record { id: id.to_string(), field: field.into(), message: message.to_string() }
}

impl AnnotatedParagraph {
    pub fn id(&self) -> &str {
        &self.record.id
    }

    /// Edits that were not undone, in log order.
    pub fn live_edits(&self) -> impl Iterator<Item = &EditSpan> {
        self.edits.iter().filter(|e| !e.undone)
    }

    /// Checks every record-level invariant; errors name the record id and
    /// the offending field.
    pub fn validate(&self) -> Result<()> {
        let id = self.record.id.as_str();
        if id.is_empty() {
            return Err(record_err(id, "id", "empty id"));
        }
        if self.record.response.is_empty() {
            return Err(record_err(id, "response", "empty response"));
        }
        self.scores.validate().map_err(|e| record_err(id, "scores", e))?;
        let mut last: Option<u64> = None;
        for (i, e) in self.edits.iter().enumerate() {
            e.validate(&self.record.response)
                .map_err(|err| record_err(id, format!("edits[{i}]"), err))?;
            if last.is_some_and(|l| e.order_index <= l) {
                return Err(record_err(
                    id,
                    format!("edits[{i}].order_index"),
                    "order_index must be strictly increasing",
                ));
            }
            last = Some(e.order_index);
        }
        let live: Vec<&EditSpan> = self.live_edits().collect();
        let ranges: Vec<(usize, usize)> = live.iter().map(|e| e.range()).collect();
        if let Some((a, b)) = find_overlap(&ranges) {
            return Err(record_err(
                id,
                "edits",
                Error::Overlap { first: ranges[a], second: ranges[b] },
            ));
        }
        Ok(())
    }

    /// The response with every live edit applied.
    pub fn final_text(&self) -> Result<String> {
        apply_edits(&self.record.response, &self.edits)
    }
}

/// Validates each record and that ids are unique.
pub fn validate_corpus(records: &[AnnotatedParagraph]) -> Result<()> {
    let mut ids = BTreeSet::new();
    for r in records {
        r.validate()?;
        if !ids.insert(r.id()) {
            return Err(record_err(r.id(), "id", "duplicate id"));
        }
    }
    Ok(())
}

/// Partitions `records` into `(train, test)` by id.
pub fn split_corpus<R, F>(records: Vec<R>, train_ids: &BTreeSet<String>, id_of: F) -> Result<(Vec<R>, Vec<R>)>
where
    F: Fn(&R) -> &str,
{
    let known: BTreeSet<&str> = records.iter().map(&id_of).collect();
    if let Some(missing) = train_ids.iter().find(|id| !known.contains(id.as_str())) {
        return Err(Error::InvalidParameter(format!("unknown train id {missing:?}")));
    }
    Ok(records.into_iter().partition(|r| train_ids.contains(id_of(r))))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryShare {
    pub category: EditCategory,
    pub count: u64,
    pub proportion: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParagraphStat {
    pub id: String,
    pub n_edits: usize,
    pub edit_distance: usize,
    pub iwqs_raw: u8,
    pub iwqs_norm: f64,
}

/// Counts of similarity scores in ten equal-width bins over `[0, 1]`, plus
/// the meaning-preservation split at `threshold`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeaningHistogram {
    pub threshold: f64,
    pub bins: [u64; 10],
    pub preserving: u64,
    pub changing: u64,
    pub scorer: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub n_paragraphs: usize,
    pub n_edits: u64,
    pub op_counts: BTreeMap<EditOperation, u64>,
    pub op_distribution: BTreeMap<EditOperation, f64>,
    pub category_distribution: Vec<CategoryShare>,
    pub mean_edits_per_paragraph: f64,
    pub edit_distance_per_paragraph: Vec<ParagraphStat>,
    /// Absent with fewer than two paragraphs or zero variance.
    pub pearson_r_distance_iwqs: Option<f64>,
    pub meaning_histogram: Option<MeaningHistogram>,
}

fn proportions<K: Ord + Clone>(counts: &BTreeMap<K, u64>) -> BTreeMap<K, f64> {
    let total: u64 = counts.values().sum();
    if total == 0 {
        return BTreeMap::new();
    }
    counts.iter().map(|(k, &c)| (k.clone(), c as f64 / total as f64)).collect()
}

/// Corpus-level statistics over live edits.
///
/// Edit distance is the character Levenshtein distance between each
/// response and its edited form; the correlation uses per-annotator
/// normalized IWQS. When a scorer is given, non-deletion edits are scored
/// and binned.
pub fn corpus_stats(
    records: &[AnnotatedParagraph],
    scorer: Option<(&dyn SimilarityScorer, &str)>,
    threshold: f64,
) -> Result<CorpusStats> {
    if records.is_empty() {
        return Err(Error::TooFew { what: "paragraphs", needed: 1, got: 0 });
    }
    let mut op_counts: BTreeMap<EditOperation, u64> = BTreeMap::new();
    let mut cat_counts: BTreeMap<EditCategory, u64> = BTreeMap::new();
    let mut hist = scorer.map(|(_, name)| MeaningHistogram {
        threshold,
        bins: [0; 10],
        preserving: 0,
        changing: 0,
        scorer: name.to_string(),
    });

    let mut by_annotator: BTreeMap<String, Vec<u8>> = BTreeMap::new();
    let mut slots: Vec<(String, usize)> = Vec::with_capacity(records.len());
    let mut per_para = Vec::with_capacity(records.len());
    let mut n_edits = 0u64;

    for rec in records {
        let live: Vec<&EditSpan> = rec.live_edits().collect();
        for e in &live {
            let op = classify_edit_operation(e)?;
            *op_counts.entry(op).or_insert(0) += 1;
            *cat_counts.entry(e.category.clone()).or_insert(0) += 1;
            if let (Some((s, _)), Some(h)) = (scorer, hist.as_mut()) {
                if op != EditOperation::Deletion {
                    let sim = score_similarity(s, &e.original, &e.replacement)?;
                    let bin = ((sim * 10.0) as usize).min(9);
                    h.bins[bin] += 1;
                    match classify_meaning(sim, threshold)? {
                        MeaningClass::MeaningPreserving => h.preserving += 1,
                        MeaningClass::MeaningChanging => h.changing += 1,
                    }
                }
            }
        }
        n_edits += live.len() as u64;
        let edited = rec.final_text()?;
        let dist = levenshtein(&rec.record.response, &edited);
        let raw = by_annotator.entry(rec.scores.annotator.clone()).or_default();
        slots.push((rec.scores.annotator.clone(), raw.len()));
        raw.push(rec.scores.iwqs);
        per_para.push((rec.id().to_string(), live.len(), dist, rec.scores.iwqs));
    }

    let norm = normalize_scores(&by_annotator)?;
    let edit_distance_per_paragraph: Vec<ParagraphStat> = per_para
        .into_iter()
        .zip(&slots)
        .map(|((id, n, d, raw), (who, i))| ParagraphStat {
            id,
            n_edits: n,
            edit_distance: d,
            iwqs_raw: raw,
            iwqs_norm: norm[who][*i],
        })
        .collect();

    let xs: Vec<f64> = edit_distance_per_paragraph.iter().map(|p| p.edit_distance as f64).collect();
    let ys: Vec<f64> = edit_distance_per_paragraph.iter().map(|p| p.iwqs_norm).collect();
    let pearson = pearson_r(&xs, &ys).ok();

    let cat_total: u64 = cat_counts.values().sum();
    let category_distribution = cat_counts
        .into_iter()
        .map(|(category, count)| CategoryShare {
            category,
            count,
            proportion: count as f64 / cat_total as f64,
        })
        .collect();

    Ok(CorpusStats {
        n_paragraphs: records.len(),
        n_edits,
        op_distribution: proportions(&op_counts),
        op_counts,
        category_distribution,
        mean_edits_per_paragraph: n_edits as f64 / records.len() as f64,
        edit_distance_per_paragraph,
        pearson_r_distance_iwqs: pearson,
        meaning_histogram: hist,
    })
}
