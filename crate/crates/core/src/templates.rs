//! Part-of-speech template mining and lexical over-use contrast.
//!
//! Tagging happens outside this crate; paragraphs arrive as
//! `(surface, tag)` tokens, normally with Penn Treebank tags.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::edit::EditSpan;
use crate::error::{Error, Result};

/// Representative surface sequences kept per template.
pub const MAX_EXAMPLES: usize = 12;

/// Template lengths mined by default.
pub const DEFAULT_LENGTHS: [usize; 4] = [5, 6, 7, 8];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedToken {
    pub surface: String,
    pub tag: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedParagraph {
    pub source_id: String,
    pub tokens: Vec<TaggedToken>,
}

impl TaggedParagraph {
    pub fn tags(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(|t| t.tag.as_str())
    }
}

/// A sequence of tags.
pub type Template = Vec<String>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateStats {
    /// Total occurrences across the corpus.
    pub count: u64,
    /// Paragraphs containing the template at least once.
    pub doc_count: u64,
    pub doc_fraction: f64,
    /// Distinct surface sequences in first-seen order, at most
    /// [`MAX_EXAMPLES`].
    pub examples: Vec<Vec<String>>,
}

pub type TemplateMap = BTreeMap<Template, TemplateStats>;

/// Sliding-window tag n-grams for every length in `lengths`.
pub fn extract_templates(corpus: &[TaggedParagraph], lengths: &BTreeSet<usize>) -> Result<TemplateMap> {
    if lengths.is_empty() || lengths.contains(&0) {
        return Err(Error::InvalidParameter(format!("template lengths {lengths:?}")));
    }
    let mut map: TemplateMap = BTreeMap::new();
    for para in corpus {
        let mut seen_here: BTreeSet<Template> = BTreeSet::new();
        for &n in lengths {
            if para.tokens.len() < n {
                continue;
            }
            for window in para.tokens.windows(n) {
                let template: Template = window.iter().map(|t| t.tag.clone()).collect();
                let surface: Vec<String> = window.iter().map(|t| t.surface.clone()).collect();
                let stats = map.entry(template.clone()).or_insert_with(|| TemplateStats {
                    count: 0,
                    doc_count: 0,
                    doc_fraction: 0.0,
                    examples: Vec::new(),
                });
                stats.count += 1;
                if stats.examples.len() < MAX_EXAMPLES && !stats.examples.contains(&surface) {
                    stats.examples.push(surface);
                }
                if seen_here.insert(template) {
                    stats.doc_count += 1;
                }
            }
        }
    }
    let total = corpus.len() as f64;
    for stats in map.values_mut() {
        stats.doc_fraction = stats.doc_count as f64 / total;
    }
    Ok(map)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateReport {
    pub template: Template,
    pub llm_count: u64,
    pub human_count: u64,
    pub llm_doc_fraction: f64,
    pub human_doc_fraction: f64,
    pub representative_sequences: Vec<String>,
}

/// The `top_k` most frequent LLM templates, ordered by count descending and
/// then by tag sequence.
pub fn top_templates(map: &TemplateMap, top_k: usize) -> Vec<(&Template, &TemplateStats)> {
    let mut ranked: Vec<(&Template, &TemplateStats)> = map.iter().collect();
    ranked.sort_by(|a, b| b.1.count.cmp(&a.1.count).then_with(|| a.0.cmp(b.0)));
    ranked.truncate(top_k);
    ranked
}

/// Flags top-`top_k` LLM templates whose human document fraction is below
/// `rarity_ratio` times their LLM document fraction.
pub fn contrast_templates(
    llm: &TemplateMap,
    human: &TemplateMap,
    top_k: usize,
    rarity_ratio: f64,
) -> Result<Vec<TemplateReport>> {
    if top_k == 0 {
        return Err(Error::InvalidParameter(String::from("top_k must be positive")));
    }
    if !(rarity_ratio >= 0.0) {
        return Err(Error::InvalidParameter(format!("rarity_ratio {rarity_ratio}")));
    }
    let mut out: Vec<TemplateReport> = top_templates(llm, top_k)
        .into_iter()
        .filter_map(|(template, stats)| {
            let (human_count, human_frac) =
                human.get(template).map_or((0, 0.0), |h| (h.count, h.doc_fraction));
            (human_frac < rarity_ratio * stats.doc_fraction).then(|| TemplateReport {
                template: template.clone(),
                llm_count: stats.count,
                human_count,
                llm_doc_fraction: stats.doc_fraction,
                human_doc_fraction: human_frac,
                representative_sequences: stats.examples.iter().map(|s| s.join(" ")).collect(),
            })
        })
        .collect();
    out.sort_by(|a, b| b.llm_count.cmp(&a.llm_count).then_with(|| a.template.cmp(&b.template)));
    Ok(out)
}

/// Lowercased word tokens; apostrophes inside words are kept.
pub fn words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let chars: Vec<char> = text.chars().collect();
    for (i, &c) in chars.iter().enumerate() {
        let inner_apostrophe = (c == '\'' || c == '’')
            && !cur.is_empty()
            && chars.get(i + 1).is_some_and(|n| n.is_alphanumeric());
        if c.is_alphanumeric() || inner_apostrophe {
            cur.extend(c.to_lowercase());
        } else if !cur.is_empty() {
            out.push(core::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

fn contains_phrase(doc: &[String], phrase: &[String]) -> bool {
    !phrase.is_empty() && doc.windows(phrase.len()).any(|w| w == phrase)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexicalReport {
    pub term: String,
    pub llm_doc_fraction: f64,
    pub human_doc_fraction: f64,
}

/// Unigrams and `phrases` over-used in LLM text relative to human text.
///
/// A term is reported when its LLM document fraction is at least
/// `min_llm_fraction` and its human document fraction at most
/// `max_human_fraction`. Matching is case-insensitive on word boundaries.
/// Output is ordered by LLM fraction descending, then term.
pub fn contrast_lexical(
    llm_texts: &[&str],
    human_texts: &[&str],
    phrases: &[&str],
    min_llm_fraction: f64,
    max_human_fraction: f64,
) -> Result<Vec<LexicalReport>> {
    if llm_texts.is_empty() {
        return Err(Error::TooFew { what: "LLM documents", needed: 1, got: 0 });
    }
    for f in [min_llm_fraction, max_human_fraction] {
        if !(0.0..=1.0).contains(&f) {
            return Err(Error::InvalidParameter(format!("fraction {f} outside [0, 1]")));
        }
    }
    let llm_docs: Vec<Vec<String>> = llm_texts.iter().map(|t| words(t)).collect();
    let human_docs: Vec<Vec<String>> = human_texts.iter().map(|t| words(t)).collect();

    let mut terms: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for doc in &llm_docs {
        for w in doc {
            terms.entry(w.clone()).or_insert_with(|| alloc::vec![w.clone()]);
        }
    }
    for p in phrases {
        let toks = words(p);
        if !toks.is_empty() {
            terms.insert(toks.join(" "), toks);
        }
    }

    let fraction = |docs: &[Vec<String>], toks: &[String]| {
        if docs.is_empty() {
            return 0.0;
        }
        docs.iter().filter(|d| contains_phrase(d, toks)).count() as f64 / docs.len() as f64
    };
    let mut out: Vec<LexicalReport> = terms
        .into_iter()
        .filter_map(|(term, toks)| {
            let l = fraction(&llm_docs, &toks);
            let h = fraction(&human_docs, &toks);
            (l >= min_llm_fraction && h <= max_human_fraction).then_some(LexicalReport {
                term,
                llm_doc_fraction: l,
                human_doc_fraction: h,
            })
        })
        .collect();
    out.sort_by(|a, b| {
        b.llm_doc_fraction.total_cmp(&a.llm_doc_fraction).then_with(|| a.term.cmp(&b.term))
    });
    Ok(out)
}

/// Character offsets of each token in `text`, found left to right.
///
/// Returns `None` if some token surface cannot be found after the previous
/// token.
pub fn align_tokens(text: &str, tokens: &[TaggedToken]) -> Option<Vec<(usize, usize)>> {
    let mut out = Vec::with_capacity(tokens.len());
    let mut byte = 0;
    for t in tokens {
        let at = byte + text[byte..].find(t.surface.as_str())?;
        let start = crate::text::byte_to_char(text, at);
        let end = start + t.surface.chars().count();
        out.push((start, end));
        byte = at + t.surface.len();
    }
    Some(out)
}

/// For one paragraph: how many occurrences of `template` there are and how
/// many intersect a non-undone edit.
pub fn template_edit_hits(
    para: &TaggedParagraph,
    text: &str,
    edits: &[EditSpan],
    template: &[String],
) -> Option<(u64, u64)> {
    let n = template.len();
    if n == 0 || para.tokens.len() < n {
        return Some((0, 0));
    }
    let offsets = align_tokens(text, &para.tokens)?;
    let (mut occ, mut hit) = (0, 0);
    for (i, w) in para.tokens.windows(n).enumerate() {
        if w.iter().map(|t| t.tag.as_str()).ne(template.iter().map(String::as_str)) {
            continue;
        }
        occ += 1;
        let (s, e) = (offsets[i].0, offsets[i + n - 1].1);
        if edits.iter().any(|ed| !ed.undone && ed.start < e && s < ed.end.max(ed.start + 1)) {
            hit += 1;
        }
    }
    Some((occ, hit))
}
