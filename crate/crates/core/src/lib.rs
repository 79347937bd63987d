//! Pure analytics for LAMP-style (LLM-authored, manually polished) writing
//! corpora: edit operations, character edit distance, span precision,
//! syntactic template mining and preference-ranking statistics.
//!
//! The crate is `no_std` and only needs an allocator. File formats, the
//! chat-completion client and the annotation service live in the `lamp`
//! crate.

#![no_std]

extern crate alloc;

mod error;

pub mod boundary;
pub mod category;
pub mod corpus;
pub mod edit;
pub mod levenshtein;
pub mod preference;
pub mod resolve;
pub mod scores;
pub mod similarity;
pub mod spans;
pub mod stats;
pub mod templates;
pub mod text;

pub use category::EditCategory;
pub use corpus::{AnnotatedParagraph, CorpusStats, Genre, ParagraphRecord, Split};
pub use edit::{apply_edits, classify_edit_operation, EditOperation, EditSpan};
pub use error::{Error, Result};
pub use levenshtein::levenshtein;
pub use preference::{Condition, PreferenceJudgment};
pub use scores::{normalize_scores, QualityScores};
pub use similarity::{classify_meaning, MeaningClass, SimilarityScorer, TrigramCosine};
pub use spans::{pairwise_agreement, precision, LabeledSpan, PrecisionResult};
pub use stats::{kendalls_w, pearson_r, wilcoxon_signed_rank, WilcoxonResult};
