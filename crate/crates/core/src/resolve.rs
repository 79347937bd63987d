//! Locating model-emitted spans inside the paragraph they were taken from.
//!
//! Models asked for verbatim spans sometimes return near misses. Resolution
//! tries, in order: an exact substring match, a match after collapsing runs
//! of whitespace, and finally the longest common substring when it covers at
//! least [`MIN_LCS_COVERAGE`] of the span.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

/// Minimum share of the raw span's characters the longest common substring
/// must cover.
pub const MIN_LCS_COVERAGE: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ResolutionMethod {
    Exact,
    WhitespaceNormalized,
    LongestCommonSubstring,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resolved {
    pub start: usize,
    pub end: usize,
    pub method: ResolutionMethod,
}

fn overlaps(a: (usize, usize), taken: &[(usize, usize)]) -> bool {
    taken.iter().any(|&(s, e)| a.0 < e && s < a.1)
}

/// All start positions of `needle` in `hay` (char indices, overlapping
/// matches included).
fn find_all(hay: &[char], needle: &[char]) -> Vec<usize> {
    if needle.is_empty() || needle.len() > hay.len() {
        return Vec::new();
    }
    (0..=hay.len() - needle.len()).filter(|&i| hay[i..i + needle.len()] == *needle).collect()
}

/// Prefers the first candidate that avoids `taken`, else the first one.
fn pick(candidates: Vec<(usize, usize)>, taken: &[(usize, usize)]) -> Option<(usize, usize)> {
    candidates.iter().copied().find(|c| !overlaps(*c, taken)).or_else(|| candidates.first().copied())
}

/// Collapses whitespace runs to one space; returns the collapsed chars and,
/// for each, its index in the input.
fn collapse_ws(chars: &[char]) -> (Vec<char>, Vec<usize>) {
    let mut out = Vec::with_capacity(chars.len());
    let mut map = Vec::with_capacity(chars.len());
    let mut in_ws = false;
    for (i, &c) in chars.iter().enumerate() {
        if c.is_whitespace() {
            if !in_ws {
                out.push(' ');
                map.push(i);
            }
            in_ws = true;
        } else {
            out.push(c);
            map.push(i);
            in_ws = false;
        }
    }
    (out, map)
}

/// Longest common substring of `a` and `b`; returns `(len, start_in_b)` for
/// the earliest occurrence in `b`.
fn longest_common_substring(a: &[char], b: &[char]) -> (usize, usize) {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    let (mut best, mut best_end) = (0, 0);
    for &ca in a {
        for (j, &cb) in b.iter().enumerate() {
            cur[j + 1] = if ca == cb { prev[j] + 1 } else { 0 };
            let end = j + 1;
            if cur[j + 1] > best || (cur[j + 1] == best && best > 0 && end - best < best_end - best) {
                best = cur[j + 1];
                best_end = end;
            }
        }
        core::mem::swap(&mut prev, &mut cur);
    }
    (best, best_end - best)
}

/// Resolves `raw` against `paragraph`. `taken` holds ranges already claimed
/// by earlier spans; an occurrence avoiding them is preferred.
pub fn resolve_span(paragraph: &str, raw: &str, taken: &[(usize, usize)]) -> Option<Resolved> {
    let para: Vec<char> = paragraph.chars().collect();
    let raw_chars: Vec<char> = raw.chars().collect();
    if raw.trim().is_empty() {
        return None;
    }

    let exact: Vec<(usize, usize)> =
        find_all(&para, &raw_chars).into_iter().map(|s| (s, s + raw_chars.len())).collect();
    if let Some((start, end)) = pick(exact, taken) {
        return Some(Resolved { start, end, method: ResolutionMethod::Exact });
    }

    let trimmed: Vec<char> = raw.trim().chars().collect();
    let (norm_para, map) = collapse_ws(&para);
    let (norm_raw, _) = collapse_ws(&trimmed);
    let ws: Vec<(usize, usize)> = find_all(&norm_para, &norm_raw)
        .into_iter()
        .map(|s| (map[s], map[s + norm_raw.len() - 1] + 1))
        .collect();
    if let Some((start, end)) = pick(ws, taken) {
        return Some(Resolved { start, end, method: ResolutionMethod::WhitespaceNormalized });
    }

    let (len, at) = longest_common_substring(&trimmed, &para);
    if len > 0 && len as f64 >= MIN_LCS_COVERAGE * trimmed.len() as f64 {
        return Some(Resolved {
            start: at,
            end: at + len,
            method: ResolutionMethod::LongestCommonSubstring,
        });
    }
    None
}
