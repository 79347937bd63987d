//! The `lamp` command line.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lamp_core::corpus::{corpus_stats, CorpusStats};
use lamp_core::preference::{average_ranks, mean_agreement};
use lamp_core::similarity::DEFAULT_MEANING_THRESHOLD;
use lamp_core::spans::Agreement;
use lamp_core::templates::{
    contrast_lexical, contrast_templates, extract_templates, template_edit_hits, top_templates, TemplateReport,
    DEFAULT_LENGTHS,
};
use lamp_core::text::char_len;
use lamp_core::{
    pairwise_agreement, precision, wilcoxon_signed_rank, AnnotatedParagraph, Condition, EditCategory, LabeledSpan,
    ParagraphRecord, PreferenceJudgment, Split, TrigramCosine, WilcoxonResult,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::corpus_io::{load_corpus, load_id_list, read_jsonl};
use crate::error::{Error, Result};
use crate::llm::{model_from_env, ChatProvider, ProviderMode, ProviderSettings};
use crate::pipeline::{
    backtranslate_instruction, generate_response, rewrite_span, EditMode, EditReport, EditedParagraph, ExemplarBank,
    InstructionStyle, Pipeline, SpanPrediction, Venue, ALLOWED_SHOTS, DEFAULT_EXEMPLAR_SEED,
};
use crate::service::{http, Service, ServiceConfig};
use crate::tagged::load_tagged;

#[derive(Debug, Parser)]
#[command(name = "lamp", version, about = "Edit-based writing alignment toolkit")]
pub struct Cli {
    /// Directory for output files. Without it the main result goes to stdout.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Seed for exemplar sampling.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker thread cap.
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Edit operation mix, categories, edit distance and score correlation.
    Stats {
        corpus: PathBuf,
        /// Meaning-preservation threshold.
        #[arg(long, default_value_t = DEFAULT_MEANING_THRESHOLD)]
        threshold: f64,
        /// Skip the meaning histogram.
        #[arg(long)]
        no_similarity: bool,
    },
    /// Span precision of predicted spans against gold spans.
    Precision {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        /// Print only categorical precision.
        #[arg(long)]
        categorical: bool,
    },
    /// Pairwise span agreement between annotators of the same paragraph.
    Agreement {
        corpus: PathBuf,
        /// Print only categorical agreement.
        #[arg(long)]
        categorical: bool,
    },
    /// Part-of-speech templates frequent in LLM text and rare in human text.
    MineTemplates {
        #[arg(long)]
        llm: PathBuf,
        #[arg(long)]
        human: PathBuf,
        #[arg(long, default_value_t = 50)]
        top_k: usize,
        #[arg(long, default_value_t = 0.5)]
        rarity_ratio: f64,
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_LENGTHS)]
        lengths: Vec<usize>,
        /// Corpus whose edits are joined against LLM template occurrences.
        #[arg(long)]
        edits: Option<PathBuf>,
    },
    /// Words and phrases frequent in LLM text and rare in human text.
    MineLexical {
        #[arg(long)]
        llm: PathBuf,
        #[arg(long)]
        human: PathBuf,
        /// Phrase list, one per line; defaults to the built-in list.
        #[arg(long)]
        phrases: Option<PathBuf>,
        #[arg(long, default_value_t = 0.05)]
        min_llm: f64,
        #[arg(long, default_value_t = 0.01)]
        max_human: f64,
        #[arg(long)]
        top_k: Option<usize>,
    },
    /// Recover writing instructions from seed paragraphs.
    Backtranslate {
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = Style::Question)]
        style: Style,
        #[command(flatten)]
        provider: ProviderArgs,
    },
    /// Generate venue-conditioned responses to instructions.
    Generate {
        input: PathBuf,
        /// Venue for every item, overriding the per-item venue.
        #[arg(long)]
        venue: Option<Venue>,
        #[command(flatten)]
        provider: ProviderArgs,
    },
    /// Few-shot detection of spans needing edits.
    Detect {
        input: PathBuf,
        #[arg(long, default_value_t = 5)]
        shots: usize,
        #[command(flatten)]
        exemplars: ExemplarArgs,
        #[command(flatten)]
        provider: ProviderArgs,
    },
    /// Rewrite individual spans with category-specific prompts.
    Rewrite {
        input: PathBuf,
        #[command(flatten)]
        exemplars: ExemplarArgs,
        #[command(flatten)]
        provider: ProviderArgs,
    },
    /// Edit test-split paragraphs with writer spans (oracle) or detected spans (full).
    Edit {
        input: PathBuf,
        #[arg(long, value_enum)]
        mode: Mode,
        #[arg(long, default_value_t = 5)]
        shots: usize,
        #[command(flatten)]
        exemplars: ExemplarArgs,
        #[command(flatten)]
        provider: ProviderArgs,
    },
    /// Average ranks, agreement and signed-rank tests over preference judgments.
    Prefs { judgments: PathBuf },
    /// Run the annotation service.
    Serve {
        config: PathBuf,
        /// Event log; created when missing and replayed when present.
        #[arg(long, default_value = "events.jsonl")]
        log: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Directory of static UI files served under `/`.
        #[arg(long)]
        static_dir: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Style {
    Question,
    Instruction,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Oracle,
    Full,
}

#[derive(Debug, Args)]
struct ProviderArgs {
    /// live, record or replay; defaults to LAMP_PROVIDER_MODE, then live.
    #[arg(long)]
    provider: Option<ProviderMode>,
    /// Fixture file for record and replay.
    #[arg(long)]
    fixture: Option<PathBuf>,
    /// Model name; defaults to LAMP_MODEL.
    #[arg(long)]
    model: Option<String>,
}

impl ProviderArgs {
    fn build(&self) -> Result<(Box<dyn ChatProvider>, String)> {
        let settings = ProviderSettings { mode: self.provider, fixture: self.fixture.clone(), ..Default::default() };
        let provider = settings.with_env()?.build()?;
        Ok((provider, self.model.clone().unwrap_or_else(model_from_env)))
    }
}

#[derive(Debug, Args)]
struct ExemplarArgs {
    /// Corpus whose train split supplies prompt exemplars; defaults to the input.
    #[arg(long)]
    exemplars: Option<PathBuf>,
    /// Train ids, one per line; overrides the split stored in records.
    #[arg(long)]
    train_ids: Option<PathBuf>,
}

/// Where results go: files under `--out`, or stdout for the main result.
struct Output {
    dir: Option<PathBuf>,
}

impl Output {
    fn file(&self, name: &str, contents: &str) -> Result<()> {
        let Some(dir) = &self.dir else { return Ok(()) };
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(name);
        fs::write(&path, contents).map_err(|e| Error::io(path, e))
    }

    fn main(&self, name: &str, contents: &str) -> Result<()> {
        if self.dir.is_some() {
            self.file(name, contents)
        } else {
            let mut out = std::io::stdout().lock();
            out.write_all(contents.as_bytes()).map_err(|e| Error::io("<stdout>", e))
        }
    }

    /// The one-line summary; on stderr when stdout carries the main result.
    fn summary(&self, line: &str) {
        if self.dir.is_some() {
            println!("{line}");
        } else {
            eprintln!("{line}");
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

fn to_jsonl<T: Serialize>(items: &[T]) -> String {
    items.iter().map(|i| serde_json::to_string(i).expect("record serializes") + "\n").collect()
}

fn to_csv<R: Serialize>(rows: &[R]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("row serializes");
    }
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("csv is utf-8")
}

/// A paragraph's spans on the wire: `{id, text_length, spans}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanSet {
    pub id: String,
    pub text_length: usize,
    pub spans: Vec<LabeledSpan>,
}

fn live_spans(p: &AnnotatedParagraph) -> Vec<LabeledSpan> {
    p.live_edits()
        .filter(|e| e.start < e.end)
        .map(|e| LabeledSpan::new(e.start, e.end, e.category.clone()))
        .collect()
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| Error::Invalid(format!("--jobs: {e}")))?;
    }
    let out = Output { dir: cli.out };
    let seed = cli.seed.unwrap_or(DEFAULT_EXEMPLAR_SEED);
    match cli.command {
        Command::Stats { corpus, threshold, no_similarity } => stats(&out, &corpus, threshold, no_similarity),
        Command::Precision { pred, gold, categorical } => precision_cmd(&out, &pred, &gold, categorical),
        Command::Agreement { corpus, categorical } => agreement_cmd(&out, &corpus, categorical),
        Command::MineTemplates { llm, human, top_k, rarity_ratio, lengths, edits } => {
            mine_templates(&out, &llm, &human, top_k, rarity_ratio, &lengths, edits.as_deref())
        }
        Command::MineLexical { llm, human, phrases, min_llm, max_human, top_k } => {
            mine_lexical(&out, &llm, &human, phrases.as_deref(), min_llm, max_human, top_k)
        }
        Command::Backtranslate { input, style, provider } => backtranslate(&out, &input, style, &provider),
        Command::Generate { input, venue, provider } => generate(&out, &input, venue, &provider),
        Command::Detect { input, shots, exemplars, provider } => detect(&out, &input, shots, &exemplars, &provider, seed),
        Command::Rewrite { input, exemplars, provider } => rewrite(&out, &input, &exemplars, &provider, seed),
        Command::Edit { input, mode, shots, exemplars, provider } => {
            edit(&out, &input, mode, shots, &exemplars, &provider, seed)
        }
        Command::Prefs { judgments } => prefs(&out, &judgments),
        Command::Serve { config, log, addr, static_dir } => serve(&config, &log, addr, static_dir),
    }
}

#[derive(Serialize)]
struct ShareRow<'a> {
    name: &'a str,
    count: u64,
    proportion: f64,
}

#[derive(Serialize)]
struct BinRow {
    bin_low: f64,
    bin_high: f64,
    count: u64,
}

fn stats(out: &Output, path: &Path, threshold: f64, no_similarity: bool) -> Result<()> {
    let records = load_corpus(path)?;
    if records.is_empty() {
        return Err(Error::Invalid("empty corpus".into()));
    }
    let scorer = TrigramCosine;
    let scorer = (!no_similarity).then_some((&scorer as &dyn lamp_core::SimilarityScorer, "trigram-cosine"));
    let stats: CorpusStats = corpus_stats(&records, scorer, threshold)?;

    out.main("stats.json", &to_json(&stats))?;
    out.file("paragraphs.csv", &to_csv(&stats.edit_distance_per_paragraph))?;
    let cats: Vec<ShareRow> = stats
        .category_distribution
        .iter()
        .map(|c| ShareRow { name: c.category.display_name(), count: c.count, proportion: c.proportion })
        .collect();
    out.file("categories.csv", &to_csv(&cats))?;
    let ops: Vec<(String, u64, f64)> = stats
        .op_counts
        .iter()
        .map(|(op, n)| (format!("{op:?}"), *n, stats.op_distribution.get(op).copied().unwrap_or(0.0)))
        .collect();
    let ops: Vec<ShareRow> = ops.iter().map(|(n, c, p)| ShareRow { name: n, count: *c, proportion: *p }).collect();
    out.file("operations.csv", &to_csv(&ops))?;
    if let Some(h) = &stats.meaning_histogram {
        let bins: Vec<BinRow> = h
            .bins
            .iter()
            .enumerate()
            .map(|(i, &count)| BinRow { bin_low: i as f64 / 10.0, bin_high: (i + 1) as f64 / 10.0, count })
            .collect();
        out.file("meaning_histogram.csv", &to_csv(&bins))?;
    }

    let mix: Vec<String> = stats.op_distribution.iter().map(|(op, p)| format!("{op:?} {:.1}%", 100.0 * p)).collect();
    let r = stats.pearson_r_distance_iwqs.map_or("n/a".to_owned(), |r| format!("{r:.3}"));
    out.summary(&format!(
        "{} paragraphs, {} edits ({}); pearson r(distance, iwqs) {r}",
        stats.n_paragraphs,
        stats.n_edits,
        mix.join(", ")
    ));
    Ok(())
}

#[derive(Serialize)]
struct PrecisionRow {
    id: String,
    predicted_chars: usize,
    overlap_chars: usize,
    category_matched_chars: usize,
    general: f64,
    categorical: f64,
}

fn precision_cmd(out: &Output, pred: &Path, gold: &Path, categorical: bool) -> Result<()> {
    let preds: Vec<SpanSet> = read_jsonl(pred)?;
    let golds: BTreeMap<String, SpanSet> = read_jsonl::<SpanSet>(gold)?.into_iter().map(|s| (s.id.clone(), s)).collect();
    if preds.is_empty() {
        return Err(Error::Invalid(format!("{}: no predictions", pred.display())));
    }
    let mut rows = Vec::new();
    for p in &preds {
        let g = golds.get(&p.id).ok_or_else(|| Error::NotFound(format!("gold spans for {}", p.id)))?;
        if g.text_length != p.text_length {
            return Err(Error::Invalid(format!("{}: text_length {} vs gold {}", p.id, p.text_length, g.text_length)));
        }
        let r = precision(&p.spans, &g.spans, p.text_length)
            .map_err(|e| Error::Paragraph { id: p.id.clone(), source: Box::new(e.into()) })?;
        rows.push(PrecisionRow {
            id: p.id.clone(),
            predicted_chars: r.predicted_chars,
            overlap_chars: r.overlap_chars,
            category_matched_chars: r.category_matched_chars,
            general: r.general,
            categorical: r.categorical,
        });
    }
    let n = rows.len() as f64;
    let mean_general = rows.iter().map(|r| r.general).sum::<f64>() / n;
    let mean_categorical = rows.iter().map(|r| r.categorical).sum::<f64>() / n;

    let mut csv_rows = rows;
    let mut text = String::new();
    for r in &csv_rows {
        text.push_str(&score_line(&r.id, r.general, r.categorical, categorical));
    }
    text.push_str(&score_line("mean", mean_general, mean_categorical, categorical));
    csv_rows.push(PrecisionRow {
        id: "mean".into(),
        predicted_chars: csv_rows.iter().map(|r| r.predicted_chars).sum(),
        overlap_chars: csv_rows.iter().map(|r| r.overlap_chars).sum(),
        category_matched_chars: csv_rows.iter().map(|r| r.category_matched_chars).sum(),
        general: mean_general,
        categorical: mean_categorical,
    });
    out.file("precision.csv", &to_csv(&csv_rows))?;
    print!("{text}");
    Ok(())
}

fn score_line(id: &str, general: f64, categorical: f64, only_categorical: bool) -> String {
    if only_categorical {
        format!("{id}\tcategorical {categorical:.2}\n")
    } else {
        format!("{id}\tgeneral {general:.2}\tcategorical {categorical:.2}\n")
    }
}

#[derive(Serialize)]
struct AgreementRow {
    id: String,
    annotators: usize,
    pairs: usize,
    general: f64,
    categorical: f64,
}

/// Records are grouped by the part of the id before `@`, as exported by the
/// annotation service for paragraphs with several annotators.
fn agreement_cmd(out: &Output, path: &Path, categorical: bool) -> Result<()> {
    let records = load_corpus(path)?;
    let mut groups: BTreeMap<&str, Vec<&AnnotatedParagraph>> = BTreeMap::new();
    for r in &records {
        let key = r.id().split_once('@').map_or(r.id(), |(k, _)| k);
        groups.entry(key).or_default().push(r);
    }
    let mut rows = Vec::new();
    for (id, members) in groups.into_iter().filter(|(_, m)| m.len() >= 2) {
        let text = &members[0].record.response;
        if members.iter().any(|m| &m.record.response != text) {
            return Err(Error::Invalid(format!("{id}: annotated copies have different text")));
        }
        let by_annotator: BTreeMap<String, Vec<LabeledSpan>> =
            members.iter().map(|m| (m.scores.annotator.clone(), live_spans(m))).collect();
        if by_annotator.len() != members.len() {
            return Err(Error::Invalid(format!("{id}: an annotator appears twice")));
        }
        let a: Agreement = pairwise_agreement(&by_annotator, char_len(text))
            .map_err(|e| Error::Paragraph { id: id.to_owned(), source: Box::new(e.into()) })?;
        rows.push(AgreementRow {
            id: id.to_owned(),
            annotators: members.len(),
            pairs: a.pairs,
            general: a.general,
            categorical: a.categorical,
        });
    }
    if rows.is_empty() {
        return Err(Error::Invalid("no paragraph has two or more annotators".into()));
    }
    let n = rows.len() as f64;
    let general = rows.iter().map(|r| r.general).sum::<f64>() / n;
    let cat = rows.iter().map(|r| r.categorical).sum::<f64>() / n;
    let report = json!({
        "pairing": "ordered",
        "paragraphs": rows.len(),
        "mean_general": general,
        "mean_categorical": cat,
    });
    out.file("agreement.csv", &to_csv(&rows))?;
    out.file("agreement.json", &to_json(&report))?;
    let mut text = String::new();
    for r in &rows {
        text.push_str(&score_line(&r.id, r.general, r.categorical, categorical));
    }
    text.push_str(&score_line("mean", general, cat, categorical));
    print!("{text}");
    Ok(())
}

#[derive(Serialize)]
struct TemplateRow {
    template: String,
    llm_count: u64,
    human_count: u64,
    llm_doc_fraction: f64,
    human_doc_fraction: f64,
    occurrences_in_edited_text: Option<u64>,
    edited_fraction: Option<f64>,
    examples: String,
}

fn mine_templates(
    out: &Output,
    llm: &Path,
    human: &Path,
    top_k: usize,
    rarity_ratio: f64,
    lengths: &[usize],
    edits: Option<&Path>,
) -> Result<()> {
    let lengths: BTreeSet<usize> = lengths.iter().copied().collect();
    let llm_tagged = load_tagged(llm)?;
    let human_tagged = load_tagged(human)?;
    let (llm_map, human_map) = rayon::join(
        || extract_templates(&llm_tagged, &lengths),
        || extract_templates(&human_tagged, &lengths),
    );
    let (llm_map, human_map) = (llm_map?, human_map?);
    let flagged: Vec<TemplateReport> = contrast_templates(&llm_map, &human_map, top_k, rarity_ratio)?;

    let corpus: Option<BTreeMap<String, AnnotatedParagraph>> = edits
        .map(|p| load_corpus(p).map(|rs| rs.into_iter().map(|r| (r.id().to_owned(), r)).collect()))
        .transpose()?;
    let mut unaligned = BTreeSet::new();
    let rows: Vec<TemplateRow> = flagged
        .iter()
        .map(|f| {
            let hits = corpus.as_ref().map(|c| {
                let (mut occ, mut hit) = (0, 0);
                for para in &llm_tagged {
                    let Some(rec) = c.get(&para.source_id) else { continue };
                    match template_edit_hits(para, &rec.record.response, &rec.edits, &f.template) {
                        Some((o, h)) => {
                            occ += o;
                            hit += h;
                        }
                        None => {
                            unaligned.insert(para.source_id.clone());
                        }
                    }
                }
                (occ, hit)
            });
            TemplateRow {
                template: f.template.join(" "),
                llm_count: f.llm_count,
                human_count: f.human_count,
                llm_doc_fraction: f.llm_doc_fraction,
                human_doc_fraction: f.human_doc_fraction,
                occurrences_in_edited_text: hits.map(|h| h.0),
                edited_fraction: hits.and_then(|(o, h)| (o > 0).then(|| h as f64 / o as f64)),
                examples: f.representative_sequences.join(" | "),
            }
        })
        .collect();
    for id in &unaligned {
        eprintln!("warning: tokens of {id} do not align with its corpus text; skipped in the edit join");
    }

    let top: Vec<Value> = top_templates(&llm_map, top_k)
        .into_iter()
        .map(|(t, s)| json!({"template": t.join(" "), "count": s.count, "doc_fraction": s.doc_fraction}))
        .collect();
    let report = json!({
        "top_k": top_k,
        "rarity_ratio": rarity_ratio,
        "lengths": lengths,
        "llm_paragraphs": llm_tagged.len(),
        "human_paragraphs": human_tagged.len(),
        "top": top,
        "flagged": flagged,
    });
    out.main("templates.json", &to_json(&report))?;
    out.file("templates.csv", &to_csv(&rows))?;
    out.summary(&format!(
        "{} of the top {} LLM templates flagged at rarity ratio {rarity_ratio}",
        flagged.len(),
        top.len()
    ));
    Ok(())
}

/// Paragraph texts from JSONL (`response` or `text` field) or from plain
/// text with blank lines between paragraphs.
fn load_texts(path: &Path) -> Result<Vec<String>> {
    if path.extension().is_some_and(|e| e == "jsonl") {
        let rows: Vec<Value> = read_jsonl(path)?;
        return rows
            .iter()
            .enumerate()
            .map(|(i, v)| {
                v.get("response")
                    .or_else(|| v.get("text"))
                    .and_then(Value::as_str)
                    .map(str::to_owned)
                    .ok_or_else(|| Error::Invalid(format!("{}: record {} has no text", path.display(), i + 1)))
            })
            .collect();
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    let mut cur: Vec<&str> = Vec::new();
    for line in text.lines().chain(std::iter::once("")) {
        if line.trim().is_empty() {
            if !cur.is_empty() {
                out.push(cur.join("\n"));
                cur.clear();
            }
        } else {
            cur.push(line);
        }
    }
    Ok(out)
}

fn mine_lexical(
    out: &Output,
    llm: &Path,
    human: &Path,
    phrases: Option<&Path>,
    min_llm: f64,
    max_human: f64,
    top_k: Option<usize>,
) -> Result<()> {
    let llm_texts = load_texts(llm)?;
    let human_texts = load_texts(human)?;
    let phrase_text = match phrases {
        Some(p) => fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
        None => crate::prompts::DEFAULT_PHRASES.to_owned(),
    };
    let phrase_list: Vec<&str> =
        phrase_text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')).collect();
    let l: Vec<&str> = llm_texts.iter().map(String::as_str).collect();
    let h: Vec<&str> = human_texts.iter().map(String::as_str).collect();
    let mut found = contrast_lexical(&l, &h, &phrase_list, min_llm, max_human)?;
    if let Some(k) = top_k {
        found.truncate(k);
    }
    let report = json!({
        "min_llm_fraction": min_llm,
        "max_human_fraction": max_human,
        "llm_documents": l.len(),
        "human_documents": h.len(),
        "phrases": phrase_list,
        "terms": found,
    });
    out.main("lexical.json", &to_json(&report))?;
    out.file("lexical.csv", &to_csv(&found))?;
    out.summary(&format!("{} terms over-represented in {} LLM documents", found.len(), l.len()));
    Ok(())
}

#[derive(Debug, Deserialize)]
struct SeedParagraph {
    id: String,
    venue: Venue,
    text: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct InstructionItem {
    id: String,
    venue: Venue,
    #[serde(default)]
    seed_paragraph: Option<String>,
    instruction: String,
}

fn backtranslate(out: &Output, input: &Path, style: Style, provider: &ProviderArgs) -> Result<()> {
    let seeds: Vec<SeedParagraph> = read_jsonl(input)?;
    let (provider, model) = provider.build()?;
    let style = match style {
        Style::Question => InstructionStyle::Question,
        Style::Instruction => InstructionStyle::Instruction,
    };
    let items: Vec<InstructionItem> = seeds
        .par_iter()
        .map(|s| {
            let instruction = backtranslate_instruction(&s.text, style, provider.as_ref(), &model)
                .map_err(|e| Error::Paragraph { id: s.id.clone(), source: Box::new(e) })?;
            Ok(InstructionItem { id: s.id.clone(), venue: s.venue, seed_paragraph: Some(s.text.clone()), instruction })
        })
        .collect::<Result<_>>()?;
    out.main("instructions.jsonl", &to_jsonl(&items))?;
    out.summary(&format!("{} instructions from {model}", items.len()));
    Ok(())
}

fn generate(out: &Output, input: &Path, venue: Option<Venue>, provider: &ProviderArgs) -> Result<()> {
    let items: Vec<InstructionItem> = read_jsonl(input)?;
    let (provider, model) = provider.build()?;
    let records: Vec<ParagraphRecord> = items
        .par_iter()
        .map(|it| {
            let v = venue.unwrap_or(it.venue);
            let response = generate_response(&it.instruction, v, provider.as_ref(), &model)
                .map_err(|e| Error::Paragraph { id: it.id.clone(), source: Box::new(e) })?;
            Ok(ParagraphRecord {
                id: it.id.clone(),
                genre: v.genre(),
                venue: v.name().to_owned(),
                seed_paragraph: it.seed_paragraph.clone(),
                instruction: it.instruction.clone(),
                generator: model.clone(),
                response,
                split: Split::Test,
            })
        })
        .collect::<Result<_>>()?;
    out.main("responses.jsonl", &to_jsonl(&records))?;
    out.summary(&format!("{} responses from {model}", records.len()));
    Ok(())
}

/// An input line: a full annotated paragraph or a bare record.
enum InputParagraph {
    Annotated(AnnotatedParagraph),
    Plain(ParagraphRecord),
}

impl InputParagraph {
    fn record(&self) -> &ParagraphRecord {
        match self {
            InputParagraph::Annotated(a) => &a.record,
            InputParagraph::Plain(r) => r,
        }
    }

    fn record_mut(&mut self) -> &mut ParagraphRecord {
        match self {
            InputParagraph::Annotated(a) => &mut a.record,
            InputParagraph::Plain(r) => r,
        }
    }
}

fn load_inputs(path: &Path, train_ids: Option<&BTreeSet<String>>) -> Result<Vec<InputParagraph>> {
    let rows: Vec<Value> = read_jsonl(path)?;
    let mut out = Vec::with_capacity(rows.len());
    let mut seen = BTreeSet::new();
    for (i, v) in rows.into_iter().enumerate() {
        let bad = |e: serde_json::Error| Error::Invalid(format!("{}: record {}: {e}", path.display(), i + 1));
        let mut item = if v.get("scores").is_some() {
            let a: AnnotatedParagraph = serde_json::from_value(v).map_err(bad)?;
            a.validate()?;
            InputParagraph::Annotated(a)
        } else {
            InputParagraph::Plain(serde_json::from_value(v).map_err(bad)?)
        };
        if !seen.insert(item.record().id.clone()) {
            return Err(Error::Invalid(format!("{}: duplicate id {}", path.display(), item.record().id)));
        }
        if let Some(ids) = train_ids {
            let id = item.record().id.clone();
            item.record_mut().split = if ids.contains(&id) { Split::Train } else { Split::Test };
        }
        out.push(item);
    }
    Ok(out)
}

/// Loads the inputs and the exemplar bank they are processed with.
fn prepare(input: &Path, args: &ExemplarArgs, seed: u64) -> Result<(Vec<InputParagraph>, ExemplarBank)> {
    let train_ids = args.train_ids.as_deref().map(load_id_list).transpose()?;
    let inputs = load_inputs(input, train_ids.as_ref())?;
    let bank = match &args.exemplars {
        Some(p) => {
            let mut train = load_corpus(p)?;
            if let Some(ids) = &train_ids {
                for r in &mut train {
                    r.record.split = if ids.contains(r.id()) { Split::Train } else { Split::Test };
                }
            }
            ExemplarBank::from_train(&train, seed)
        }
        None => {
            let annotated: Vec<AnnotatedParagraph> = inputs
                .iter()
                .filter_map(|i| match i {
                    InputParagraph::Annotated(a) => Some(a.clone()),
                    InputParagraph::Plain(_) => None,
                })
                .collect();
            ExemplarBank::from_train(&annotated, seed)
        }
    };
    Ok((inputs, bank))
}

fn test_split(inputs: &[InputParagraph]) -> Result<Vec<&InputParagraph>> {
    let targets: Vec<&InputParagraph> = inputs.iter().filter(|i| i.record().split == Split::Test).collect();
    if targets.is_empty() {
        return Err(Error::Invalid("no test-split paragraphs to process".into()));
    }
    Ok(targets)
}

#[derive(Serialize)]
struct DetectionRecord<'a> {
    id: &'a str,
    predictions: Vec<SpanPrediction>,
    diagnostics: Vec<String>,
}

fn detect(out: &Output, input: &Path, shots: usize, ex: &ExemplarArgs, provider: &ProviderArgs, seed: u64) -> Result<()> {
    check_shots(shots)?;
    let (inputs, bank) = prepare(input, ex, seed)?;
    let targets = test_split(&inputs)?;
    let (provider, model) = provider.build()?;
    let pipeline = Pipeline { provider: provider.as_ref(), model: model.clone(), bank: &bank };
    let results: Vec<(SpanSet, DetectionRecord)> = targets
        .par_iter()
        .map(|t| {
            let r = t.record();
            let d = pipeline
                .detect_spans(&r.response, shots)
                .map_err(|e| Error::Paragraph { id: r.id.clone(), source: Box::new(e) })?;
            let set = SpanSet { id: r.id.clone(), text_length: char_len(&r.response), spans: d.labeled_spans() };
            Ok((set, DetectionRecord { id: &r.id, predictions: d.predictions, diagnostics: d.diagnostics }))
        })
        .collect::<Result<_>>()?;
    let (sets, records): (Vec<SpanSet>, Vec<DetectionRecord>) = results.into_iter().unzip();
    for r in &records {
        for d in &r.diagnostics {
            eprintln!("{}: {d}", r.id);
        }
    }
    out.main("spans.jsonl", &to_jsonl(&sets))?;
    out.file("detections.jsonl", &to_jsonl(&records))?;
    let n: usize = sets.iter().map(|s| s.spans.len()).sum();
    out.summary(&format!("{n} spans detected in {} paragraphs ({shots}-shot, {model})", sets.len()));
    Ok(())
}

fn check_shots(shots: usize) -> Result<()> {
    if ALLOWED_SHOTS.contains(&shots) {
        Ok(())
    } else {
        Err(Error::Invalid(format!("--shots must be one of {ALLOWED_SHOTS:?}, got {shots}")))
    }
}

#[derive(Debug, Deserialize)]
struct RewriteItem {
    id: String,
    text: String,
    start: usize,
    end: usize,
    category: Value,
}

#[derive(Serialize)]
struct RewriteRecord {
    id: String,
    start: usize,
    end: usize,
    category: EditCategory,
    original: String,
    replacement: String,
    boundary_compatible: bool,
}

fn rewrite(out: &Output, input: &Path, ex: &ExemplarArgs, provider: &ProviderArgs, seed: u64) -> Result<()> {
    let items: Vec<RewriteItem> = read_jsonl(input)?;
    let bank = match &ex.exemplars {
        Some(p) => ExemplarBank::from_train(&load_corpus(p)?, seed),
        None => return Err(Error::Invalid("rewrite needs --exemplars".into())),
    };
    let (provider, model) = provider.build()?;
    let records: Vec<RewriteRecord> = items
        .par_iter()
        .map(|it| {
            let wrap = |e: Error| Error::Paragraph { id: it.id.clone(), source: Box::new(e) };
            let category = serde_json::from_value::<EditCategory>(it.category.clone())
                .ok()
                .or_else(|| it.category.as_str().and_then(EditCategory::from_label))
                .ok_or_else(|| wrap(Error::Invalid(format!("unknown category {}", it.category))))?;
            let original = lamp_core::text::slice_chars(&it.text, it.start, it.end)
                .filter(|_| it.start < it.end)
                .ok_or_else(|| wrap(Error::Invalid(format!("bad span [{}, {})", it.start, it.end))))?
                .to_owned();
            let span = LabeledSpan::new(it.start, it.end, category.clone());
            let r = rewrite_span(&it.text, &span, bank.rewrite_for(&category), provider.as_ref(), &model).map_err(wrap)?;
            Ok(RewriteRecord {
                id: it.id.clone(),
                start: it.start,
                end: it.end,
                category,
                original,
                boundary_compatible: r.boundary.compatible(),
                replacement: r.replacement,
            })
        })
        .collect::<Result<_>>()?;
    out.main("rewrites.jsonl", &to_jsonl(&records))?;
    let bad = records.iter().filter(|r| !r.boundary_compatible).count();
    out.summary(&format!("{} spans rewritten, {bad} boundary violations", records.len()));
    Ok(())
}

#[derive(Serialize)]
struct ParagraphReport<'a> {
    id: &'a str,
    #[serde(flatten)]
    report: EditReport,
}

fn edit(
    out: &Output,
    input: &Path,
    mode: Mode,
    shots: usize,
    ex: &ExemplarArgs,
    provider: &ProviderArgs,
    seed: u64,
) -> Result<()> {
    if matches!(mode, Mode::Full) {
        check_shots(shots)?;
    }
    let (inputs, bank) = prepare(input, ex, seed)?;
    let targets = test_split(&inputs)?;
    let (provider, model) = provider.build()?;
    let pipeline = Pipeline { provider: provider.as_ref(), model: model.clone(), bank: &bank };
    let results: Vec<(EditedParagraph, EditReport)> = targets
        .par_iter()
        .map(|t| {
            let r = t.record();
            let mode = match (mode, t) {
                (Mode::Full, _) => EditMode::Full { shots },
                (Mode::Oracle, InputParagraph::Annotated(a)) => EditMode::Oracle(live_spans(a)),
                (Mode::Oracle, InputParagraph::Plain(_)) => {
                    return Err(Error::Invalid(format!("{}: oracle mode needs writer edits", r.id)))
                }
            };
            let (edited, report) = pipeline.edit_paragraph(&r.id, &r.response, &mode)?;
            edited.verify()?;
            Ok((edited, report))
        })
        .collect::<Result<_>>()?;

    let edited: Vec<&EditedParagraph> = results.iter().map(|(e, _)| e).collect();
    let reports: Vec<ParagraphReport> =
        results.iter().map(|(e, r)| ParagraphReport { id: &e.id, report: r.clone() }).collect();
    for r in &reports {
        for d in &r.report.diagnostics {
            eprintln!("{}: {d}", r.id);
        }
    }
    out.main("edited.jsonl", &to_jsonl(&edited))?;
    out.file("edit_report.jsonl", &to_jsonl(&reports))?;
    let spans: usize = reports.iter().map(|r| r.report.spans).sum();
    let deletions: usize = reports.iter().map(|r| r.report.deletions).sum();
    let violations: usize = reports.iter().map(|r| r.report.boundary_violations).sum();
    out.summary(&format!(
        "edited {} paragraphs: {spans} spans, {deletions} deletions, {violations} boundary violations",
        edited.len()
    ));
    Ok(())
}

/// Condition pairs compared with the signed-rank test.
pub const COMPARISONS: [(Condition, Condition); 5] = [
    (Condition::WriterEdited, Condition::LLMGenerated),
    (Condition::LLMEditedOracle, Condition::LLMGenerated),
    (Condition::LLMEditedFull, Condition::LLMGenerated),
    (Condition::WriterEdited, Condition::LLMEditedOracle),
    (Condition::WriterEdited, Condition::LLMEditedFull),
];

#[derive(Serialize)]
struct Comparison {
    a: Condition,
    b: Condition,
    pairs: usize,
    #[serde(flatten)]
    test: WilcoxonResult,
}

#[derive(Serialize)]
struct RankRow {
    condition: &'static str,
    mean_rank: f64,
    judgments: usize,
}

fn prefs(out: &Output, path: &Path) -> Result<()> {
    let judgments: Vec<PreferenceJudgment> = read_jsonl(path)?;
    if judgments.is_empty() {
        return Err(Error::Invalid("no judgments".into()));
    }
    for j in &judgments {
        j.validate().map_err(|e| Error::Invalid(format!("{}/{}: {e}", j.triplet_id, j.judge)))?;
    }
    let means = average_ranks(&judgments);
    let rows: Vec<RankRow> = means
        .iter()
        .map(|(c, m)| RankRow {
            condition: c.label(),
            mean_rank: *m,
            judgments: judgments.iter().filter(|j| j.rank_of(*c).is_some()).count(),
        })
        .collect();
    let agreement = match mean_agreement(&judgments) {
        Ok(a) => Some(a),
        Err(e) => {
            eprintln!("warning: agreement not computed: {e}");
            None
        }
    };
    let comparisons: Vec<Comparison> = COMPARISONS
        .iter()
        .filter_map(|&(a, b)| {
            let pairs: Vec<(f64, f64)> = judgments
                .iter()
                .filter_map(|j| Some((f64::from(j.rank_of(a)?), f64::from(j.rank_of(b)?))))
                .collect();
            let test = wilcoxon_signed_rank(&pairs).ok()?;
            Some(Comparison { a, b, pairs: pairs.len(), test })
        })
        .collect();
    let report = json!({
        "n_judgments": judgments.len(),
        "average_ranks": means,
        "agreement": agreement,
        "agreement_aggregation": "mean of per-triplet Kendall W",
        "wilcoxon_zero_differences": "discarded",
        "comparisons": comparisons,
    });
    out.main("prefs.json", &to_json(&report))?;
    out.file("ranks.csv", &to_csv(&rows))?;
    let ranks: Vec<String> = rows.iter().map(|r| format!("{} {:.2}", r.condition, r.mean_rank)).collect();
    let w = agreement.as_ref().map_or("n/a".to_owned(), |a| format!("{:.3}", a.mean_w));
    out.summary(&format!("{} judgments; mean ranks {}; mean W {w}", judgments.len(), ranks.join(", ")));
    Ok(())
}

fn serve(config: &Path, log: &Path, addr: SocketAddr, static_dir: Option<PathBuf>) -> Result<()> {
    let config = ServiceConfig::load(config)?;
    let service = Arc::new(Service::open(config, log)?);
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Error::Invalid(format!("runtime: {e}")))?;
    rt.block_on(http::serve(service, addr, static_dir, |bound| {
        println!("listening on http://{bound}");
        let _ = std::io::stdout().flush();
    }))
    .map_err(|e| Error::io(format!("{addr}"), e))
}
