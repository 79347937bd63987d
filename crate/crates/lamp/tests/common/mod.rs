#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use lamp::corpus_io::{load_corpus, read_jsonl, write_jsonl};
use lamp::llm::{ChatProvider, CompletionRequest, ProviderExchange};
use lamp::pipeline::{EditMode, EditedParagraph, ExemplarBank, Pipeline, DEFAULT_EXEMPLAR_SEED};
use lamp::Result;
use lamp_core::{AnnotatedParagraph, LabeledSpan, Split};
use serde_json::json;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub const PIPELINE_CORPUS: &str = "pipeline_corpus.jsonl";
pub const PIPELINE_REPLAY: &str = "pipeline_replay.jsonl";
pub const MODEL: &str = "gpt-4o";
pub const SHOTS: [usize; 2] = [2, 5];

/// Stands in for a chat model when the replay fixture is regenerated.
///
/// Detection echoes the writer spans of the paragraph with a few scripted
/// deviations; rewriting returns the writer replacement for the span.
pub struct ScriptedProvider {
    by_text: BTreeMap<String, AnnotatedParagraph>,
}

impl ScriptedProvider {
    pub fn new(corpus: &[AnnotatedParagraph]) -> Self {
        ScriptedProvider { by_text: corpus.iter().map(|p| (p.record.response.clone(), p.clone())).collect() }
    }

    fn detection(&self, paragraph: &str) -> String {
        let Some(p) = self.by_text.get(paragraph) else { return "[]".into() };
        let mut items: Vec<serde_json::Value> = p
            .live_edits()
            .filter(|e| e.start < e.end)
            .map(|e| {
                let span = match p.id() {
                    // trailing junk after the span: needs fuzzy resolution
                    "te02" => format!("{}..", e.original),
                    // doubled space: needs whitespace normalization
                    "te07" if e.original.starts_with("The air") => e.original.replacen(" with", "  with", 1),
                    _ => e.original.clone(),
                };
                json!({"category": e.category.display_name(), "span": span})
            })
            .collect();
        match p.id() {
            "te10" => items.push(json!({"category": "Cliche", "span": "Trust your instincts and follow your heart."})),
            "te18" => items.clear(),
            _ => {}
        }
        let arr = serde_json::to_string_pretty(&items).unwrap();
        if p.id() == "te05" {
            format!("Here are the spans I found:\n```json\n{arr}\n```")
        } else {
            arr
        }
    }

    fn rewrite(&self, prompt: &str) -> String {
        let tail = prompt.rsplit_once("\nOriginal Span: \"").map_or("", |(_, t)| t);
        let original = tail.strip_suffix("\"\nEdited Span:").unwrap_or(tail);
        let replacement = self
            .by_text
            .values()
            .flat_map(|p| p.live_edits())
            .find(|e| e.original == original)
            .map_or(original, |e| e.replacement.as_str());
        if original.len() % 2 == 0 {
            format!("\"{replacement}\"")
        } else {
            format!("Edited Span: \"{replacement}\"")
        }
    }
}

impl ChatProvider for ScriptedProvider {
    fn name(&self) -> &str {
        "scripted"
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String> {
        if request.user.ends_with("Edited Span:") {
            Ok(self.rewrite(&request.user))
        } else {
            let paragraph = request.user.rsplit_once("Paragraph:\n\n").map_or("", |(_, p)| p);
            Ok(self.detection(paragraph))
        }
    }
}

pub fn pipeline_corpus() -> Vec<AnnotatedParagraph> {
    load_corpus(&fixture(PIPELINE_CORPUS)).unwrap()
}

pub fn oracle_spans(p: &AnnotatedParagraph) -> Vec<LabeledSpan> {
    p.live_edits().filter(|e| e.start < e.end).map(|e| LabeledSpan::new(e.start, e.end, e.category.clone())).collect()
}

/// Every editing run the replay fixture has to cover: the oracle condition
/// and the full condition at each shot count, over the test split.
pub fn run_all(provider: &dyn ChatProvider) -> Result<Vec<EditedParagraph>> {
    let corpus = pipeline_corpus();
    let bank = ExemplarBank::from_train(&corpus, DEFAULT_EXEMPLAR_SEED);
    let pipeline = Pipeline { provider, model: MODEL.into(), bank: &bank };
    let mut out = Vec::new();
    for p in corpus.iter().filter(|p| p.record.split == Split::Test) {
        let (e, _) = pipeline.edit_paragraph(p.id(), &p.record.response, &EditMode::Oracle(oracle_spans(p)))?;
        out.push(e);
        for shots in SHOTS {
            let (e, _) = pipeline.edit_paragraph(p.id(), &p.record.response, &EditMode::Full { shots })?;
            out.push(e);
        }
    }
    Ok(out)
}

/// Deduplicates and sorts a recorded fixture so regeneration is stable.
pub fn normalize_fixture(path: &std::path::Path) {
    let list: Vec<ProviderExchange> = read_jsonl(path).unwrap();
    let mut by_hash: BTreeMap<String, ProviderExchange> = BTreeMap::new();
    for e in list {
        by_hash.insert(e.request_hash.clone(), e);
    }
    let sorted: Vec<ProviderExchange> = by_hash.into_values().collect();
    write_jsonl(path, &sorted).unwrap();
}

pub struct Client {
    base: String,
    agent: ureq::Agent,
}

impl Client {
    pub fn new(base: &str) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(std::time::Duration::from_secs(20)))
            .build()
            .into();
        Client { base: base.trim_end_matches('/').to_owned(), agent }
    }

    pub fn get(&self, path: &str) -> (u16, String) {
        let mut r = self.agent.get(&format!("{}{path}", self.base)).call().unwrap();
        (r.status().as_u16(), r.body_mut().read_to_string().unwrap())
    }

    pub fn get_json(&self, path: &str) -> (u16, serde_json::Value) {
        let (s, body) = self.get(path);
        (s, serde_json::from_str(&body).unwrap_or(serde_json::Value::Null))
    }

    pub fn post(&self, path: &str, body: serde_json::Value) -> (u16, serde_json::Value) {
        let mut r = self.agent.post(&format!("{}{path}", self.base)).send_json(&body).unwrap();
        let text = r.body_mut().read_to_string().unwrap();
        (r.status().as_u16(), serde_json::from_str(&text).unwrap_or(serde_json::Value::Null))
    }
}

/// Starts `lamp serve` on an ephemeral port and returns it with its base URL.
pub fn spawn_server(config: &std::path::Path, log: &std::path::Path) -> (std::process::Child, String) {
    use std::io::BufRead;
    let mut child = std::process::Command::new(env!("CARGO_BIN_EXE_lamp"))
        .args(["serve", "--addr", "127.0.0.1:0", "--log"])
        .arg(log)
        .arg(config)
        .stdout(std::process::Stdio::piped())
        .spawn()
        .unwrap();
    let stdout = child.stdout.take().unwrap();
    let mut line = String::new();
    std::io::BufReader::new(stdout).read_line(&mut line).unwrap();
    let base = line.trim().strip_prefix("listening on ").unwrap_or_else(|| panic!("unexpected banner {line:?}")).to_owned();
    (child, base)
}
