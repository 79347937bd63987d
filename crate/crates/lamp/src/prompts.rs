//! Prompt templates. The text lives in `assets/prompts` so it can be
//! reviewed and versioned on its own.

use lamp_core::EditCategory;

pub const BACKTRANSLATE_QUESTION: &str = include_str!("../assets/prompts/backtranslate_question.txt");
pub const BACKTRANSLATE_INSTRUCTION: &str = include_str!("../assets/prompts/backtranslate_instruction.txt");
pub const DETECTION: &str = include_str!("../assets/prompts/detection.txt");
pub const DEFAULT_PHRASES: &str = include_str!("../assets/phrases.txt");

pub const VENUE_NEW_YORKER_FICTION: &str = include_str!("../assets/prompts/venue_new_yorker_fiction.txt");
pub const VENUE_NYT_MODERN_LOVE: &str = include_str!("../assets/prompts/venue_nyt_modern_love.txt");
pub const VENUE_NYT_COOKING: &str = include_str!("../assets/prompts/venue_nyt_cooking.txt");
pub const VENUE_NYT_TRAVEL: &str = include_str!("../assets/prompts/venue_nyt_travel.txt");
pub const VENUE_INTERNET_ADVICE: &str = include_str!("../assets/prompts/venue_internet_advice.txt");

/// Header of the rewriting prompt for a named category.
pub fn rewrite_header(category: &EditCategory) -> Option<&'static str> {
    Some(match category {
        EditCategory::Cliche => include_str!("../assets/prompts/rewrite_cliche.txt"),
        EditCategory::UnnecessaryRedundantExposition => {
            include_str!("../assets/prompts/rewrite_unnecessary_exposition.txt")
        }
        EditCategory::PurpleProse => include_str!("../assets/prompts/rewrite_purple_prose.txt"),
        EditCategory::PoorSentenceStructure => include_str!("../assets/prompts/rewrite_poor_sentence_structure.txt"),
        EditCategory::LackOfSpecificityAndDetail => include_str!("../assets/prompts/rewrite_lack_of_specificity.txt"),
        EditCategory::AwkwardWordChoiceAndPhrasing => include_str!("../assets/prompts/rewrite_awkward_word_choice.txt"),
        EditCategory::TenseInconsistency => include_str!("../assets/prompts/rewrite_tense_inconsistency.txt"),
        EditCategory::Other(_) => return None,
    })
}

/// Substitutes `{{key}}` placeholders. Values are inserted verbatim and not
/// rescanned.
pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let template = template.trim_end_matches('\n');
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find("{{") {
        out.push_str(&rest[..open]);
        let after = &rest[open + 2..];
        match after.find("}}") {
            Some(close) => {
                let key = &after[..close];
                match vars.iter().find(|(k, _)| *k == key) {
                    Some((_, v)) => out.push_str(v),
                    None => out.push_str(&rest[open..open + 2 + close + 2]),
                }
                rest = &after[close + 2..];
            }
            None => {
                out.push_str(&rest[open..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_substitutes_once() {
        assert_eq!(render("a {{x}} b {{y}}\n", &[("x", "{{y}}"), ("y", "2")]), "a {{y}} b 2");
        assert_eq!(render("keep {{unknown}} and {{", &[]), "keep {{unknown}} and {{");
    }

    #[test]
    fn every_named_category_has_a_header() {
        for c in EditCategory::NAMED {
            let h = rewrite_header(&c).unwrap();
            assert!(h.contains("{{n}}"), "{c:?}");
            assert!(h.contains("WITHIN QUOTES"), "{c:?}");
        }
        assert!(rewrite_header(&EditCategory::other("x").unwrap()).is_none());
    }

    #[test]
    fn venue_templates_take_instruction() {
        for t in [VENUE_NEW_YORKER_FICTION, VENUE_NYT_MODERN_LOVE, VENUE_NYT_COOKING, VENUE_NYT_TRAVEL, VENUE_INTERNET_ADVICE] {
            assert!(t.ends_with("\n{{instruction}}"));
        }
    }
}
