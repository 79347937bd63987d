use alloc::string::{String, ToString};
use core::fmt;

use serde::{Deserialize, Serialize};

/// Edit taxonomy. The seven named variants are closed; `Other` carries the
/// annotator's free-form label.
///
/// Wire form: the variant name as a string (`"Cliche"`), or
/// `{"other": "<name>"}`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EditCategory {
    Cliche,
    UnnecessaryRedundantExposition,
    PurpleProse,
    PoorSentenceStructure,
    LackOfSpecificityAndDetail,
    AwkwardWordChoiceAndPhrasing,
    TenseInconsistency,
    #[serde(rename = "other")]
    Other(String),
}

impl EditCategory {
    pub const NAMED: [EditCategory; 7] = [
        EditCategory::AwkwardWordChoiceAndPhrasing,
        EditCategory::Cliche,
        EditCategory::PoorSentenceStructure,
        EditCategory::UnnecessaryRedundantExposition,
        EditCategory::LackOfSpecificityAndDetail,
        EditCategory::PurpleProse,
        EditCategory::TenseInconsistency,
    ];

    /// Human-facing name as used in prompts and the annotation UI.
    pub fn display_name(&self) -> &str {
        match self {
            EditCategory::Cliche => "Cliche",
            EditCategory::UnnecessaryRedundantExposition => "Unnecessary/Redundant Exposition",
            EditCategory::PurpleProse => "Purple Prose",
            EditCategory::PoorSentenceStructure => "Poor Sentence Structure",
            EditCategory::LackOfSpecificityAndDetail => "Lack of Specificity and Detail",
            EditCategory::AwkwardWordChoiceAndPhrasing => "Awkward Word Choice and Phrasing",
            EditCategory::TenseInconsistency => "Tense Inconsistency",
            EditCategory::Other(name) => name,
        }
    }

    /// Wire name of a named variant (`None` for `Other`).
    pub fn wire_name(&self) -> Option<&'static str> {
        Some(match self {
            EditCategory::Cliche => "Cliche",
            EditCategory::UnnecessaryRedundantExposition => "UnnecessaryRedundantExposition",
            EditCategory::PurpleProse => "PurpleProse",
            EditCategory::PoorSentenceStructure => "PoorSentenceStructure",
            EditCategory::LackOfSpecificityAndDetail => "LackOfSpecificityAndDetail",
            EditCategory::AwkwardWordChoiceAndPhrasing => "AwkwardWordChoiceAndPhrasing",
            EditCategory::TenseInconsistency => "TenseInconsistency",
            EditCategory::Other(_) => return None,
        })
    }

    /// Lenient lookup of a named category from model or human text.
    ///
    /// Case, accents, punctuation and spacing are ignored, so `"CLICHÉ"`,
    /// `"Unnecessary/Redundant Exposition"` and `"PurpleProse"` all
    /// resolve. Returns `None` for anything outside the seven names.
    pub fn from_label(label: &str) -> Option<EditCategory> {
        let key: String = label
            .chars()
            .filter_map(|c| match c {
                'é' | 'É' => Some('e'),
                c if c.is_alphanumeric() => Some(c.to_ascii_lowercase()),
                _ => None,
            })
            .collect();
        let cat = match key.as_str() {
            "cliche" | "cliches" => EditCategory::Cliche,
            "unnecessaryredundantexposition"
            | "unnecessaryorredundantexposition"
            | "unnecessaryexposition"
            | "redundantexposition" => EditCategory::UnnecessaryRedundantExposition,
            "purpleprose" => EditCategory::PurpleProse,
            "poorsentencestructure" => EditCategory::PoorSentenceStructure,
            "lackofspecificityanddetail" | "lackofspecificity" => {
                EditCategory::LackOfSpecificityAndDetail
            }
            "awkwardwordchoiceandphrasing" | "awkwardwordchoice" => {
                EditCategory::AwkwardWordChoiceAndPhrasing
            }
            "tenseinconsistency" | "tenseconsistency" => EditCategory::TenseInconsistency,
            _ => return None,
        };
        Some(cat)
    }

    pub fn other(name: &str) -> Option<EditCategory> {
        let name = name.trim();
        (!name.is_empty()).then(|| EditCategory::Other(name.to_string()))
    }

    pub fn is_named(&self) -> bool {
        !matches!(self, EditCategory::Other(_))
    }
}

impl fmt::Display for EditCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.display_name())
    }
}
