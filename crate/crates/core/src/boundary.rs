//! Whether a rewrite keeps the boundary shape of the span it replaces:
//! leading-character case class and leading/trailing punctuation.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CaseClass {
    Upper,
    Lower,
    Other,
}

fn case_class(c: Option<char>) -> CaseClass {
    match c {
        Some(c) if c.is_uppercase() => CaseClass::Upper,
        Some(c) if c.is_lowercase() => CaseClass::Lower,
        _ => CaseClass::Other,
    }
}

fn is_punct(c: Option<char>) -> bool {
    c.is_some_and(|c| {
        c.is_ascii_punctuation()
            || matches!(c, '–' | '—' | '…' | '“' | '”' | '‘' | '’' | '«' | '»' | '¡' | '¿')
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundaryCheck {
    pub case_kept: bool,
    pub leading_punct_kept: bool,
    pub trailing_punct_kept: bool,
}

impl BoundaryCheck {
    pub fn compatible(&self) -> bool {
        self.case_kept && self.leading_punct_kept && self.trailing_punct_kept
    }
}

/// Compares `rewrite` against `original`. Deletions (empty rewrite) pass.
pub fn check_boundaries(original: &str, rewrite: &str) -> BoundaryCheck {
    if rewrite.is_empty() {
        return BoundaryCheck { case_kept: true, leading_punct_kept: true, trailing_punct_kept: true };
    }
    let (o0, r0) = (original.chars().next(), rewrite.chars().next());
    let (o1, r1) = (original.chars().next_back(), rewrite.chars().next_back());
    BoundaryCheck {
        case_kept: case_class(o0) == case_class(r0),
        leading_punct_kept: is_punct(o0) == is_punct(r0),
        trailing_punct_kept: is_punct(o1) == is_punct(r1),
    }
}
