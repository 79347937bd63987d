//! Generation and automatic editing: instruction backtranslation,
//! venue-conditioned responses, few-shot span detection, category-specific
//! rewriting and splicing.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use lamp_core::boundary::{check_boundaries, BoundaryCheck};
use lamp_core::corpus::{AnnotatedParagraph, Genre, Split};
use lamp_core::edit::{apply_edits, find_overlap, EditSpan};
use lamp_core::resolve::{resolve_span, ResolutionMethod};
use lamp_core::spans::LabeledSpan;
use lamp_core::text::slice_chars;
use lamp_core::EditCategory;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::llm::{complete, ChatProvider, CompletionRequest, EDITING_TEMPERATURE, GENERATION_TEMPERATURE};
use crate::prompts::{self, render};

pub const ALLOWED_SHOTS: [usize; 3] = [2, 5, 25];
pub const REWRITE_EXEMPLARS: usize = 25;
pub const DEFAULT_EXEMPLAR_SEED: u64 = 20_240_901;

const BACKTRANSLATE_MAX_TOKENS: u32 = 256;
const GENERATION_MAX_TOKENS: u32 = 1024;
const DETECTION_MAX_TOKENS: u32 = 2048;
const REWRITE_MAX_TOKENS: u32 = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Venue {
    NewYorkerFiction,
    NYTModernLove,
    NYTCooking,
    NYTTravel,
    InternetAdviceColumnist,
}

impl Venue {
    pub const ALL: [Venue; 5] =
        [Venue::NewYorkerFiction, Venue::NYTModernLove, Venue::NYTCooking, Venue::NYTTravel, Venue::InternetAdviceColumnist];

    pub fn name(self) -> &'static str {
        match self {
            Venue::NewYorkerFiction => "NewYorkerFiction",
            Venue::NYTModernLove => "NYTModernLove",
            Venue::NYTCooking => "NYTCooking",
            Venue::NYTTravel => "NYTTravel",
            Venue::InternetAdviceColumnist => "InternetAdviceColumnist",
        }
    }

    pub fn prompt_template(self) -> &'static str {
        match self {
            Venue::NewYorkerFiction => prompts::VENUE_NEW_YORKER_FICTION,
            Venue::NYTModernLove => prompts::VENUE_NYT_MODERN_LOVE,
            Venue::NYTCooking => prompts::VENUE_NYT_COOKING,
            Venue::NYTTravel => prompts::VENUE_NYT_TRAVEL,
            Venue::InternetAdviceColumnist => prompts::VENUE_INTERNET_ADVICE,
        }
    }

    pub fn for_genre(genre: Genre) -> Venue {
        match genre {
            Genre::Fiction => Venue::NewYorkerFiction,
            Genre::TravelWriting => Venue::NYTTravel,
            Genre::FoodWriting => Venue::NYTCooking,
            Genre::PersonalEssay => Venue::NYTModernLove,
            Genre::InternetAdvice => Venue::InternetAdviceColumnist,
        }
    }

    pub fn genre(self) -> Genre {
        match self {
            Venue::NewYorkerFiction => Genre::Fiction,
            Venue::NYTTravel => Genre::TravelWriting,
            Venue::NYTCooking => Genre::FoodWriting,
            Venue::NYTModernLove => Genre::PersonalEssay,
            Venue::InternetAdviceColumnist => Genre::InternetAdvice,
        }
    }

    pub fn prompt(self, instruction: &str) -> String {
        render(self.prompt_template(), &[("instruction", instruction)])
    }
}

impl fmt::Display for Venue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Venue {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s.chars().filter(char::is_ascii_alphanumeric).collect::<String>().to_ascii_lowercase();
        Ok(match key.as_str() {
            "newyorkerfiction" | "newyorker" => Venue::NewYorkerFiction,
            "nytmodernlove" | "modernlove" => Venue::NYTModernLove,
            "nytcooking" | "cooking" => Venue::NYTCooking,
            "nyttravel" | "travel" => Venue::NYTTravel,
            "internetadvicecolumnist" | "internetadvice" | "dearsugar" => Venue::InternetAdviceColumnist,
            _ => return Err(Error::Invalid(format!("unknown venue {s:?}"))),
        })
    }
}

/// Which backtranslation prompt to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InstructionStyle {
    #[default]
    Question,
    Instruction,
}

pub fn backtranslation_prompt(paragraph: &str, style: InstructionStyle) -> Result<String> {
    if paragraph.trim().is_empty() {
        return Err(Error::Invalid("cannot backtranslate an empty paragraph".into()));
    }
    let template = match style {
        InstructionStyle::Question => prompts::BACKTRANSLATE_QUESTION,
        InstructionStyle::Instruction => prompts::BACKTRANSLATE_INSTRUCTION,
    };
    Ok(render(template, &[("paragraph", paragraph)]))
}

pub fn backtranslate_instruction(
    paragraph: &str,
    style: InstructionStyle,
    provider: &dyn ChatProvider,
    model: &str,
) -> Result<String> {
    let prompt = backtranslation_prompt(paragraph, style)?;
    let req = CompletionRequest::new(model, prompt, GENERATION_TEMPERATURE, BACKTRANSLATE_MAX_TOKENS);
    Ok(complete(provider, &req)?.trim().to_owned())
}

pub fn generate_response(instruction: &str, venue: Venue, provider: &dyn ChatProvider, model: &str) -> Result<String> {
    if instruction.trim().is_empty() {
        return Err(Error::Invalid("cannot generate from an empty instruction".into()));
    }
    let req = CompletionRequest::new(model, venue.prompt(instruction), GENERATION_TEMPERATURE, GENERATION_MAX_TOKENS);
    Ok(complete(provider, &req)?.trim().to_owned())
}

/// A train-split paragraph with its writer spans, shown to the detector.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionExemplar {
    pub text: String,
    pub spans: Vec<(String, EditCategory)>,
}

impl DetectionExemplar {
    pub fn from_annotated(p: &AnnotatedParagraph) -> Self {
        let mut live: Vec<&EditSpan> =
            p.live_edits().filter(|e| e.category.is_named() && e.start < e.end).collect();
        live.sort_by_key(|e| e.start);
        DetectionExemplar {
            text: p.record.response.clone(),
            spans: live.into_iter().map(|e| (e.original.clone(), e.category.clone())).collect(),
        }
    }

    fn output_json(&self) -> String {
        let items: Vec<Value> = self
            .spans
            .iter()
            .map(|(s, c)| json!({"span": s, "category": c.display_name()}))
            .collect();
        Value::Array(items).to_string()
    }
}

pub fn build_detection_prompt(exemplars: &[DetectionExemplar], shots: usize, paragraph: &str) -> Result<String> {
    if !ALLOWED_SHOTS.contains(&shots) {
        return Err(Error::Invalid(format!("shots must be one of {ALLOWED_SHOTS:?}, got {shots}")));
    }
    if exemplars.len() < shots {
        return Err(Error::Invalid(format!("{shots} shots requested but only {} exemplars available", exemplars.len())));
    }
    let mut examples = String::new();
    for (i, ex) in exemplars[..shots].iter().enumerate() {
        examples.push_str(&format!("Example {}:\nInput Text:\n{}\n\nOutput:\n{}\n\n", i + 1, ex.text, ex.output_json()));
    }
    let examples = examples.trim_end();
    Ok(render(
        prompts::DETECTION,
        &[("shots", &shots.to_string()), ("examples", examples), ("paragraph", paragraph)],
    ))
}

/// A detector-emitted span after resolution against the paragraph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanPrediction {
    pub raw_span: String,
    pub category: EditCategory,
    pub resolved: Option<(usize, usize)>,
    pub method: Option<ResolutionMethod>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Detection {
    pub predictions: Vec<SpanPrediction>,
    pub diagnostics: Vec<String>,
}

impl Detection {
    pub fn labeled_spans(&self) -> Vec<LabeledSpan> {
        self.predictions
            .iter()
            .filter_map(|p| p.resolved.map(|(s, e)| LabeledSpan::new(s, e, p.category.clone())))
            .collect()
    }
}

/// First JSON array in `raw` that is empty or holds at least one object.
fn first_json_array(raw: &str) -> Option<Vec<Value>> {
    raw.char_indices().filter(|(_, c)| *c == '[').find_map(|(i, _)| {
        let mut it = serde_json::Deserializer::from_str(&raw[i..]).into_iter::<Value>();
        match it.next() {
            Some(Ok(Value::Array(items))) if items.is_empty() || items.iter().any(Value::is_object) => Some(items),
            _ => None,
        }
    })
}

/// Extracts and resolves the detector's span list.
///
/// Spans that cannot be located, carry an unknown category, or collide with
/// an earlier retained span are dropped with a diagnostic.
pub fn parse_detection_output(raw: &str, paragraph: &str) -> Result<Detection> {
    let items = first_json_array(raw).ok_or_else(|| Error::Malformed { what: "detection", raw: raw.to_owned() })?;
    let mut out = Detection::default();
    let mut taken: Vec<(usize, usize)> = Vec::new();
    for (i, item) in items.iter().enumerate() {
        let span = item.get("span").and_then(Value::as_str);
        let label = item.get("category").and_then(Value::as_str);
        let (Some(span), Some(label)) = (span, label) else {
            out.diagnostics.push(format!("item {i}: expected {{\"span\", \"category\"}}, got {item}"));
            continue;
        };
        let Some(category) = EditCategory::from_label(label).filter(EditCategory::is_named) else {
            out.diagnostics.push(format!("item {i}: unknown category {label:?}"));
            continue;
        };
        let Some(r) = resolve_span(paragraph, span, &taken) else {
            out.diagnostics.push(format!("item {i}: span not found in paragraph: {span:?}"));
            continue;
        };
        if let Some(&(s, e)) = taken.iter().find(|&&(s, e)| r.start < e && s < r.end) {
            out.diagnostics.push(format!("item {i}: [{}, {}) overlaps earlier span [{s}, {e}), dropped", r.start, r.end));
            continue;
        }
        if r.method != ResolutionMethod::Exact {
            out.diagnostics.push(format!("item {i}: resolved by {:?}", r.method));
        }
        taken.push((r.start, r.end));
        out.predictions.push(SpanPrediction {
            raw_span: span.to_owned(),
            category,
            resolved: Some((r.start, r.end)),
            method: Some(r.method),
        });
    }
    Ok(out)
}

/// One writer edit shown as a worked example in a rewriting prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct RewriteExemplar {
    pub paragraph: String,
    pub start: usize,
    pub end: usize,
    pub original: String,
    pub replacement: String,
}

fn tag_span(paragraph: &str, start: usize, end: usize) -> Result<String> {
    let (Some(pre), Some(mid), Some(post)) = (
        slice_chars(paragraph, 0, start),
        slice_chars(paragraph, start, end),
        slice_chars(paragraph, end, paragraph.chars().count()),
    ) else {
        return Err(Error::Invalid(format!("span [{start}, {end}) outside paragraph")));
    };
    Ok(format!("{pre}<span>{mid}</span>{post}"))
}

pub fn rewrite_prompt(
    category: &EditCategory,
    exemplars: &[RewriteExemplar],
    paragraph: &str,
    start: usize,
    end: usize,
) -> Result<String> {
    let header = prompts::rewrite_header(category)
        .ok_or_else(|| Error::Invalid(format!("no rewriting prompt for category {category}")))?;
    let mut out = render(header, &[("n", &exemplars.len().to_string())]);
    out.push_str("\n\n");
    for (i, ex) in exemplars.iter().enumerate() {
        out.push_str(&format!(
            "Example {}\n\nParagraph: {}\nOriginal Span: \"{}\"\nEdited Span: \"{}\"\n\n",
            i + 1,
            tag_span(&ex.paragraph, ex.start, ex.end)?,
            ex.original,
            ex.replacement
        ));
    }
    let original = slice_chars(paragraph, start, end).unwrap_or_default();
    out.push_str(&format!(
        "Paragraph: {}\nOriginal Span: \"{original}\"\nEdited Span:",
        tag_span(paragraph, start, end)?
    ));
    Ok(out)
}

/// The text between the first and last double quote of the model output.
pub fn parse_rewrite_output(raw: &str) -> Result<String> {
    let (Some(first), Some(last)) = (raw.find('"'), raw.rfind('"')) else {
        return Err(Error::Malformed { what: "rewrite", raw: raw.to_owned() });
    };
    if first == last {
        return Err(Error::Malformed { what: "rewrite", raw: raw.to_owned() });
    }
    Ok(raw[first + 1..last].to_owned())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rewrite {
    pub replacement: String,
    pub boundary: BoundaryCheck,
}

pub fn rewrite_span(
    paragraph: &str,
    span: &LabeledSpan,
    exemplars: &[RewriteExemplar],
    provider: &dyn ChatProvider,
    model: &str,
) -> Result<Rewrite> {
    let prompt = rewrite_prompt(&span.category, exemplars, paragraph, span.start, span.end)?;
    let req = CompletionRequest::new(model, prompt, EDITING_TEMPERATURE, REWRITE_MAX_TOKENS);
    let replacement = parse_rewrite_output(&complete(provider, &req)?)?;
    let original = slice_chars(paragraph, span.start, span.end).unwrap_or_default();
    Ok(Rewrite { boundary: check_boundaries(original, &replacement), replacement })
}

/// Exemplars drawn once from the train split with a fixed seed.
#[derive(Debug, Clone, Default)]
pub struct ExemplarBank {
    pub detection: Vec<DetectionExemplar>,
    pub rewrite: BTreeMap<EditCategory, Vec<RewriteExemplar>>,
    pub seed: u64,
}

impl ExemplarBank {
    /// Non-train records are ignored.
    pub fn from_train(records: &[AnnotatedParagraph], seed: u64) -> Self {
        let train: Vec<&AnnotatedParagraph> = records.iter().filter(|r| r.record.split == Split::Train).collect();

        let mut detection: Vec<DetectionExemplar> = train
            .iter()
            .map(|p| DetectionExemplar::from_annotated(p))
            .filter(|d| !d.spans.is_empty())
            .collect();
        detection.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

        let mut rewrite = BTreeMap::new();
        for (k, cat) in EditCategory::NAMED.iter().enumerate() {
            let mut pool: Vec<RewriteExemplar> = train
                .iter()
                .flat_map(|p| {
                    p.live_edits().filter(|e| &e.category == cat && e.start < e.end).map(|e| RewriteExemplar {
                        paragraph: p.record.response.clone(),
                        start: e.start,
                        end: e.end,
                        original: e.original.clone(),
                        replacement: e.replacement.clone(),
                    })
                })
                .collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64 + 1);
            pool.shuffle(&mut rng);
            pool.truncate(REWRITE_EXEMPLARS);
            rewrite.insert(cat.clone(), pool);
        }
        ExemplarBank { detection, rewrite, seed }
    }

    pub fn rewrite_for(&self, category: &EditCategory) -> &[RewriteExemplar] {
        self.rewrite.get(category).map_or(&[], Vec::as_slice)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeName {
    Oracle,
    Full,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EditMode {
    /// Rewrite writer-selected spans.
    Oracle(Vec<LabeledSpan>),
    /// Detect spans with this many shots, then rewrite them.
    Full { shots: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditedParagraph {
    pub id: String,
    pub original: String,
    pub edits: Vec<EditSpan>,
    #[serde(rename = "final")]
    pub final_text: String,
    pub mode: ModeName,
    pub shots: usize,
    pub model: String,
}

impl EditedParagraph {
    /// Checks the output invariants: verbatim originals, no overlap, and
    /// `final` equal to splicing the edits into `original`.
    pub fn verify(&self) -> Result<()> {
        let ranges: Vec<(usize, usize)> = self.edits.iter().map(EditSpan::range).collect();
        if let Some((i, j)) = find_overlap(&ranges) {
            return Err(Error::Invalid(format!("{}: edits {i} and {j} overlap", self.id)));
        }
        if apply_edits(&self.original, &self.edits)? != self.final_text {
            return Err(Error::Invalid(format!("{}: final text differs from spliced edits", self.id)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct EditReport {
    pub diagnostics: Vec<String>,
    pub spans: usize,
    pub boundary_violations: usize,
    pub deletions: usize,
}

pub struct Pipeline<'a> {
    pub provider: &'a dyn ChatProvider,
    pub model: String,
    pub bank: &'a ExemplarBank,
}

impl Pipeline<'_> {
    pub fn detect_spans(&self, paragraph: &str, shots: usize) -> Result<Detection> {
        let prompt = build_detection_prompt(&self.bank.detection, shots, paragraph)?;
        let req = CompletionRequest::new(&self.model, prompt, EDITING_TEMPERATURE, DETECTION_MAX_TOKENS);
        parse_detection_output(&complete(self.provider, &req)?, paragraph)
    }

    /// Runs one editing condition on a paragraph. Span rewrites run in
    /// parallel; the splice is a single step at the end.
    pub fn edit_paragraph(&self, id: &str, paragraph: &str, mode: &EditMode) -> Result<(EditedParagraph, EditReport)> {
        let wrap = |e: Error| Error::Paragraph { id: id.to_owned(), source: Box::new(e) };
        let mut report = EditReport::default();
        let (spans, mode_name, shots) = match mode {
            EditMode::Oracle(spans) => {
                let mut keep = Vec::new();
                for s in spans {
                    if !s.category.is_named() {
                        report.diagnostics.push(format!("span [{}, {}) has category {}; no rewriting prompt, skipped", s.start, s.end, s.category));
                    } else if s.start >= s.end {
                        report.diagnostics.push(format!("empty span at {} skipped", s.start));
                    } else {
                        keep.push(s.clone());
                    }
                }
                (keep, ModeName::Oracle, 0)
            }
            EditMode::Full { shots } => {
                let d = self.detect_spans(paragraph, *shots).map_err(wrap)?;
                report.diagnostics.extend(d.diagnostics.iter().cloned());
                (d.labeled_spans(), ModeName::Full, *shots)
            }
        };
        let ranges: Vec<(usize, usize)> = spans.iter().map(|s| (s.start, s.end)).collect();
        if let Some((i, j)) = find_overlap(&ranges) {
            return Err(wrap(Error::Invalid(format!("spans {:?} and {:?} overlap", ranges[i], ranges[j]))));
        }

        let rewrites: Vec<Result<Rewrite>> = spans
            .par_iter()
            .map(|s| rewrite_span(paragraph, s, self.bank.rewrite_for(&s.category), self.provider, &self.model))
            .collect();

        let mut order: Vec<(LabeledSpan, Rewrite)> = Vec::with_capacity(spans.len());
        for (s, r) in spans.into_iter().zip(rewrites) {
            let r = r.map_err(|e| {
                wrap(Error::Invalid(format!("rewriting [{}, {}) after {} earlier span(s): {e}", s.start, s.end, order.len())))
            })?;
            if !r.boundary.compatible() {
                report.boundary_violations += 1;
                report.diagnostics.push(format!("span [{}, {}): rewrite changes boundary shape {:?}", s.start, s.end, r.boundary));
            }
            if r.replacement.is_empty() {
                report.deletions += 1;
            }
            order.push((s, r));
        }
        order.sort_by_key(|(s, _)| s.start);
        report.spans = order.len();

        let edits: Vec<EditSpan> = order
            .into_iter()
            .enumerate()
            .map(|(i, (s, r))| EditSpan {
                start: s.start,
                end: s.end,
                original: slice_chars(paragraph, s.start, s.end).unwrap_or_default().to_owned(),
                replacement: r.replacement,
                category: s.category,
                annotator: self.model.clone(),
                order_index: i as u64,
                undone: false,
            })
            .collect();
        let final_text = apply_edits(paragraph, &edits).map_err(|e| wrap(e.into()))?;
        Ok((
            EditedParagraph {
                id: id.to_owned(),
                original: paragraph.to_owned(),
                edits,
                final_text,
                mode: mode_name,
                shots,
                model: self.model.clone(),
            },
            report,
        ))
    }
}
