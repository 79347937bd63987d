//! Edit spans, edit-operation classification and splicing.

use alloc::borrow::ToOwned;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::category::EditCategory;
use crate::error::{Error, Result};
use crate::text::{char_len, char_to_byte, slice_chars};

/// Net character change at which a length-changing edit stops counting as a
/// replacement.
pub const NET_CHANGE_THRESHOLD: i64 = 40;

/// One annotated or predicted edit over a paragraph.
///
/// Offsets are Unicode scalar values. `start == end` is a pure insertion
/// and then `replacement` must be non-empty.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditSpan {
    pub start: usize,
    pub end: usize,
    pub original: String,
    pub replacement: String,
    pub category: EditCategory,
    pub annotator: String,
    pub order_index: u64,
    #[serde(default)]
    pub undone: bool,
}

impl EditSpan {
    pub fn range(&self) -> (usize, usize) {
        (self.start, self.end)
    }

    /// Checks the span against the paragraph it attaches to.
    pub fn validate(&self, paragraph: &str) -> Result<()> {
        if self.original.is_empty() && self.replacement.is_empty() {
            return Err(Error::InvalidEdit("original and replacement are both empty".to_owned()));
        }
        if let EditCategory::Other(name) = &self.category {
            if name.trim().is_empty() {
                return Err(Error::InvalidEdit("Other category without a name".to_owned()));
            }
        }
        let len = char_len(paragraph);
        if self.start > self.end || self.end > len {
            return Err(Error::OffsetOutOfRange { start: self.start, end: self.end, len });
        }
        let found = slice_chars(paragraph, self.start, self.end).unwrap_or_default();
        if found != self.original {
            return Err(Error::OriginalMismatch {
                start: self.start,
                end: self.end,
                expected: self.original.clone(),
                found: found.to_owned(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EditOperation {
    Insertion,
    Deletion,
    Replacement,
}

impl EditOperation {
    pub const ALL: [EditOperation; 3] =
        [EditOperation::Insertion, EditOperation::Deletion, EditOperation::Replacement];
}

/// Classifies an edit from the character lengths of its two sides.
///
/// Returns `None` when both sides are empty.
pub fn classify_lengths(original_len: usize, replacement_len: usize) -> Option<EditOperation> {
    if original_len == 0 && replacement_len == 0 {
        return None;
    }
    let net = replacement_len as i64 - original_len as i64;
    Some(if original_len == 0 || net >= NET_CHANGE_THRESHOLD {
        EditOperation::Insertion
    } else if replacement_len == 0 || net <= -NET_CHANGE_THRESHOLD {
        EditOperation::Deletion
    } else {
        EditOperation::Replacement
    })
}

pub fn classify_edit_operation(edit: &EditSpan) -> Result<EditOperation> {
    classify_lengths(char_len(&edit.original), char_len(&edit.replacement))
        .ok_or_else(|| Error::InvalidEdit("original and replacement are both empty".to_owned()))
}

fn conflicts(a: (usize, usize), b: (usize, usize)) -> bool {
    match (a.0 == a.1, b.0 == b.1) {
        // two insertions at one point have no defined order
        (true, true) => a.0 == b.0,
        (true, false) => b.0 < a.0 && a.0 < b.1,
        (false, true) => a.0 < b.0 && b.0 < a.1,
        (false, false) => a.0 < b.1 && b.0 < a.1,
    }
}

/// Returns the first colliding pair among `ranges`, in input order.
pub fn find_overlap(ranges: &[(usize, usize)]) -> Option<(usize, usize)> {
    (0..ranges.len()).find_map(|i| {
        (i + 1..ranges.len()).find(|&j| conflicts(ranges[i], ranges[j])).map(|j| (i, j))
    })
}

/// Applies every non-undone edit to `paragraph`.
///
/// Edits must not overlap against the original paragraph. Splicing runs in
/// descending start order so earlier offsets stay valid.
pub fn apply_edits(paragraph: &str, edits: &[EditSpan]) -> Result<String> {
    let live: Vec<&EditSpan> = edits.iter().filter(|e| !e.undone).collect();
    for e in &live {
        e.validate(paragraph)?;
    }
    let ranges: Vec<(usize, usize)> = live.iter().map(|e| e.range()).collect();
    if let Some((i, j)) = find_overlap(&ranges) {
        return Err(Error::Overlap { first: ranges[i], second: ranges[j] });
    }
    let mut order: Vec<&EditSpan> = live;
    order.sort_by(|a, b| b.start.cmp(&a.start).then(b.end.cmp(&a.end)));

    let mut out: String = paragraph.to_owned();
    for e in order {
        // offsets were validated above and earlier splices only touch text
        // to the right of this one
        let b0 = char_to_byte(&out, e.start).expect("validated offset");
        let b1 = b0 + char_to_byte(&out[b0..], e.end - e.start).expect("validated offset");
        out.replace_range(b0..b1, &e.replacement);
    }
    Ok(out)
}
