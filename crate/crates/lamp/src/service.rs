//! Annotation service: span editing with undo and quality scores, and
//! three-way preference ranking.
//!
//! Every mutation is an [`Event`] appended to a JSONL log before it is
//! applied, and the in-memory state is a fold over that log. Restarting from
//! the log therefore reconstructs the state exactly.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Utc};
use lamp_core::corpus::{AnnotatedParagraph, ParagraphRecord};
use lamp_core::edit::EditSpan;
use lamp_core::preference::{Condition, PreferenceJudgment};
use lamp_core::scores::QualityScores;
use lamp_core::text::slice_chars;
use lamp_core::EditCategory;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

fn one() -> usize {
    1
}

fn three() -> usize {
    3
}

/// One preference item: a paragraph in three conditions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripletSpec {
    pub triplet_id: String,
    pub paragraph_id: String,
    pub variants: BTreeMap<Condition, String>,
    /// Writers who edited the paragraph outside this service.
    #[serde(default)]
    pub editors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceConfig {
    pub paragraphs: Vec<ParagraphRecord>,
    pub annotators: Vec<String>,
    #[serde(default)]
    pub judges: Vec<String>,
    /// Number of annotators each paragraph in `redundant_ids` goes to.
    #[serde(default = "one")]
    pub redundancy: usize,
    #[serde(default)]
    pub redundant_ids: BTreeSet<String>,
    #[serde(default)]
    pub triplets: Vec<TripletSpec>,
    #[serde(default = "three")]
    pub judges_per_triplet: usize,
    /// Paragraphs claimed per request once an annotator's queue is empty.
    #[serde(default = "one")]
    pub batch_size: usize,
}

impl ServiceConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: ServiceConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Parse { path: path.to_path_buf(), line: e.line(), message: e.to_string() })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = BTreeSet::new();
        for p in &self.paragraphs {
            if !ids.insert(p.id.as_str()) {
                return Err(Error::Invalid(format!("duplicate paragraph id {}", p.id)));
            }
        }
        if let Some(id) = self.redundant_ids.iter().find(|id| !ids.contains(id.as_str())) {
            return Err(Error::Invalid(format!("redundant id {id} is not a configured paragraph")));
        }
        if self.redundancy == 0 || self.judges_per_triplet == 0 || self.batch_size == 0 {
            return Err(Error::Invalid("redundancy, judges_per_triplet and batch_size must be at least 1".into()));
        }
        let mut tids = BTreeSet::new();
        for t in &self.triplets {
            if !tids.insert(t.triplet_id.as_str()) {
                return Err(Error::Invalid(format!("duplicate triplet id {}", t.triplet_id)));
            }
            let ok = t.variants.len() == 3
                && t.variants.contains_key(&Condition::LLMGenerated)
                && t.variants.contains_key(&Condition::WriterEdited);
            if !ok {
                return Err(Error::Invalid(format!(
                    "triplet {} needs LLMGenerated, WriterEdited and one LLM-edited variant",
                    t.triplet_id
                )));
            }
        }
        Ok(())
    }
}

/// Texts of one paragraph in every condition, before triplets are formed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripletSource {
    pub paragraph_id: String,
    pub generated: String,
    pub writer_edited: String,
    pub oracle_edited: String,
    pub full_edited: String,
    #[serde(default)]
    pub editors: Vec<String>,
}

/// Builds triplets that alternate between the oracle and the full
/// condition, starting with oracle.
pub fn alternate_triplets(sources: &[TripletSource]) -> Vec<TripletSpec> {
    sources
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let (cond, text, tag) = if i % 2 == 0 {
                (Condition::LLMEditedOracle, &s.oracle_edited, "oracle")
            } else {
                (Condition::LLMEditedFull, &s.full_edited, "full")
            };
            TripletSpec {
                triplet_id: format!("{}:{tag}", s.paragraph_id),
                paragraph_id: s.paragraph_id.clone(),
                variants: BTreeMap::from([
                    (Condition::LLMGenerated, s.generated.clone()),
                    (Condition::WriterEdited, s.writer_edited.clone()),
                    (cond, text.clone()),
                ]),
                editors: s.editors.clone(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum EventKind {
    TaskAssigned { annotator: String, paragraph_id: String },
    AddEdit { paragraph_id: String, edit: EditSpan },
    Undo { paragraph_id: String, annotator: String, order_index: u64 },
    SubmitScores { paragraph_id: String, scores: QualityScores },
    TripletServed { triplet_id: String, judge: String, display_order: Vec<Condition> },
    RankingSubmitted { triplet_id: String, judge: String, ranks: Vec<u8> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub session: String,
    pub seq: u64,
    pub at: DateTime<Utc>,
    #[serde(flatten)]
    pub kind: EventKind,
}

fn edit_session(annotator: &str, paragraph_id: &str) -> String {
    format!("{annotator}/{paragraph_id}")
}

fn judge_session(judge: &str, triplet_id: &str) -> String {
    format!("judge:{judge}/{triplet_id}")
}

#[derive(Debug, Clone, Default)]
struct Session {
    edits: Vec<EditSpan>,
    scores: Option<QualityScores>,
}

#[derive(Debug, Clone)]
struct Served {
    display_order: Vec<Condition>,
    ranks: Option<Vec<u8>>,
}

/// Reconstructed service state; changed only by [`State::apply`].
#[derive(Debug)]
struct State {
    config: ServiceConfig,
    paragraph_index: HashMap<String, usize>,
    triplet_index: HashMap<String, usize>,
    sessions: BTreeMap<(String, String), Session>,
    assigned: HashMap<String, usize>,
    queues: HashMap<String, Vec<String>>,
    served: BTreeMap<(String, String), Served>,
    serve_counts: HashMap<String, usize>,
    next_seq: HashMap<String, u64>,
}

impl State {
    fn new(config: ServiceConfig) -> Self {
        State {
            paragraph_index: config.paragraphs.iter().enumerate().map(|(i, p)| (p.id.clone(), i)).collect(),
            triplet_index: config.triplets.iter().enumerate().map(|(i, t)| (t.triplet_id.clone(), i)).collect(),
            config,
            sessions: BTreeMap::new(),
            assigned: HashMap::new(),
            queues: HashMap::new(),
            served: BTreeMap::new(),
            serve_counts: HashMap::new(),
            next_seq: HashMap::new(),
        }
    }

    fn paragraph(&self, id: &str) -> Result<&ParagraphRecord> {
        self.paragraph_index
            .get(id)
            .map(|&i| &self.config.paragraphs[i])
            .ok_or_else(|| Error::NotFound(format!("paragraph {id}")))
    }

    fn triplet(&self, id: &str) -> Result<&TripletSpec> {
        self.triplet_index
            .get(id)
            .map(|&i| &self.config.triplets[i])
            .ok_or_else(|| Error::NotFound(format!("triplet {id}")))
    }

    fn check_annotator(&self, who: &str) -> Result<()> {
        if self.config.annotators.iter().any(|a| a == who) {
            Ok(())
        } else {
            Err(Error::NotFound(format!("annotator {who}")))
        }
    }

    fn check_judge(&self, who: &str) -> Result<()> {
        if self.config.judges.iter().any(|a| a == who) {
            Ok(())
        } else {
            Err(Error::NotFound(format!("judge {who}")))
        }
    }

    fn seq_for(&self, session: &str) -> u64 {
        self.next_seq.get(session).copied().unwrap_or(1)
    }

    fn open_session(&self, annotator: &str, paragraph_id: &str) -> Result<&Session> {
        self.check_annotator(annotator)?;
        self.paragraph(paragraph_id)?;
        let s = self
            .sessions
            .get(&(annotator.to_owned(), paragraph_id.to_owned()))
            .ok_or_else(|| Error::Rejected(format!("paragraph {paragraph_id} is not assigned to {annotator}")))?;
        if s.scores.is_some() {
            return Err(Error::Rejected(format!("{annotator} already submitted scores for {paragraph_id}")));
        }
        Ok(s)
    }

    fn target(&self, paragraph_id: &str) -> usize {
        if self.config.redundant_ids.contains(paragraph_id) {
            self.config.redundancy
        } else {
            1
        }
    }

    fn outstanding_task(&self, annotator: &str) -> Option<&str> {
        self.queues.get(annotator)?.iter().map(String::as_str).find(|p| {
            self.sessions.get(&(annotator.to_owned(), (*p).to_owned())).is_some_and(|s| s.scores.is_none())
        })
    }

    fn edited_by(&self, paragraph_id: &str, who: &str) -> bool {
        self.sessions.contains_key(&(who.to_owned(), paragraph_id.to_owned()))
    }

    fn apply(&mut self, ev: &Event) -> Result<()> {
        self.check(ev)?;
        match &ev.kind {
            EventKind::TaskAssigned { annotator, paragraph_id } => {
                self.sessions.insert((annotator.clone(), paragraph_id.clone()), Session::default());
                self.queues.entry(annotator.clone()).or_default().push(paragraph_id.clone());
                *self.assigned.entry(paragraph_id.clone()).or_insert(0) += 1;
            }
            EventKind::AddEdit { paragraph_id, edit } => {
                self.session_mut(&edit.annotator, paragraph_id).edits.push(edit.clone());
            }
            EventKind::Undo { paragraph_id, annotator, .. } => {
                let s = self.session_mut(annotator, paragraph_id);
                if let Some(e) = s.edits.iter_mut().rev().find(|e| !e.undone) {
                    e.undone = true;
                }
            }
            EventKind::SubmitScores { paragraph_id, scores } => {
                self.session_mut(&scores.annotator, paragraph_id).scores = Some(scores.clone());
            }
            EventKind::TripletServed { triplet_id, judge, display_order } => {
                self.served
                    .insert((triplet_id.clone(), judge.clone()), Served { display_order: display_order.clone(), ranks: None });
                *self.serve_counts.entry(triplet_id.clone()).or_insert(0) += 1;
            }
            EventKind::RankingSubmitted { triplet_id, judge, ranks } => {
                if let Some(s) = self.served.get_mut(&(triplet_id.clone(), judge.clone())) {
                    s.ranks = Some(ranks.clone());
                }
            }
        }
        let next = ev.seq + 1;
        self.next_seq.insert(ev.session.clone(), next);
        Ok(())
    }

    fn session_mut(&mut self, annotator: &str, paragraph_id: &str) -> &mut Session {
        self.sessions.get_mut(&(annotator.to_owned(), paragraph_id.to_owned())).expect("checked before apply")
    }
}

fn collides(a: &EditSpan, b: &EditSpan) -> bool {
    lamp_core::edit::find_overlap(&[a.range(), b.range()]).is_some()
}

fn check_permutation(ranks: &[u8]) -> Result<()> {
    let mut sorted = ranks.to_vec();
    sorted.sort_unstable();
    if sorted != [1, 2, 3] {
        return Err(Error::Invalid(format!("ranks {ranks:?} are not a permutation of 1, 2, 3")));
    }
    Ok(())
}

/// Display order for a (triplet, judge) pair, derived from a hash of both.
pub fn shuffle_for(triplet: &TripletSpec, judge: &str) -> Vec<Condition> {
    let digest = Sha256::digest(format!("{}\0{judge}", triplet.triplet_id).as_bytes());
    let seed = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
    let mut order: Vec<Condition> = triplet.variants.keys().copied().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditRequest {
    pub annotator: String,
    pub paragraph_id: String,
    pub start: usize,
    pub end: usize,
    pub replacement: String,
    pub category: Value,
    #[serde(default)]
    pub original: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionRef {
    pub annotator: String,
    pub paragraph_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoresRequest {
    pub annotator: String,
    pub paragraph_id: String,
    pub iwqs: u8,
    pub fwqs: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankingSubmission {
    pub triplet_id: String,
    pub judge: String,
    /// Rank given to each displayed slot, in display order.
    pub ranks: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ack {
    pub session: String,
    pub seq: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub paragraph: ParagraphRecord,
    pub edits: Vec<EditSpan>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variant {
    pub slot: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServedTriplet {
    pub triplet_id: String,
    pub variants: Vec<Variant>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportScope {
    Edits,
    Rankings,
    Corpus,
}

impl std::str::FromStr for ExportScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "edits" => Ok(ExportScope::Edits),
            "rankings" => Ok(ExportScope::Rankings),
            "corpus" => Ok(ExportScope::Corpus),
            _ => Err(Error::Invalid(format!("unknown export scope {s:?} (edits, rankings, corpus)"))),
        }
    }
}

/// An exported edit: the corpus edit schema plus where it belongs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportedEdit {
    pub paragraph_id: String,
    #[serde(flatten)]
    pub edit: EditSpan,
}

fn parse_category(v: &Value) -> Result<EditCategory> {
    if let Ok(c) = serde_json::from_value::<EditCategory>(v.clone()) {
        return Ok(c);
    }
    v.as_str()
        .and_then(EditCategory::from_label)
        .ok_or_else(|| Error::Invalid(format!("unknown category {v}")))
}

struct Inner {
    state: State,
    log: Option<(PathBuf, File)>,
}

impl Inner {
    /// Validates, logs, then applies.
    fn commit(&mut self, kind: EventKind, session: String) -> Result<Event> {
        let ev = Event { seq: self.state.seq_for(&session), session, at: Utc::now(), kind };
        self.state.check(&ev)?;
        if let Some((path, file)) = &mut self.log {
            let line = serde_json::to_string(&ev).expect("event serializes");
            writeln!(file, "{line}").and_then(|_| file.sync_data()).map_err(|e| Error::io(path.as_path(), e))?;
        }
        self.state.apply(&ev).expect("checked");
        Ok(ev)
    }
}

impl State {
    /// The validation half of [`State::apply`], without mutation.
    fn check(&self, ev: &Event) -> Result<()> {
        let expected = self.seq_for(&ev.session);
        if ev.seq != expected {
            return Err(Error::Invalid(format!("session {} expected seq {expected}, got {}", ev.session, ev.seq)));
        }
        match &ev.kind {
            EventKind::TaskAssigned { annotator, paragraph_id } => {
                self.check_annotator(annotator)?;
                self.paragraph(paragraph_id)?;
                if self.sessions.contains_key(&(annotator.clone(), paragraph_id.clone())) {
                    return Err(Error::Invalid(format!("{paragraph_id} assigned to {annotator} twice")));
                }
            }
            EventKind::AddEdit { paragraph_id, edit } => {
                let text = &self.paragraph(paragraph_id)?.response;
                edit.validate(text)?;
                let session = self.open_session(&edit.annotator, paragraph_id)?;
                if let Some(c) = session.edits.iter().find(|e| !e.undone && collides(e, edit)) {
                    return Err(Error::Rejected(format!(
                        "edit [{}, {}) overlaps live edit [{}, {}) {:?}",
                        edit.start, edit.end, c.start, c.end, c.original
                    )));
                }
            }
            EventKind::Undo { paragraph_id, annotator, order_index } => {
                let s = self.open_session(annotator, paragraph_id)?;
                match s.edits.iter().rev().find(|e| !e.undone) {
                    Some(e) if e.order_index == *order_index => {}
                    Some(_) => return Err(Error::Invalid(format!("undo of {order_index} does not match the latest live edit"))),
                    None => return Err(Error::Rejected("nothing to undo".into())),
                }
            }
            EventKind::SubmitScores { paragraph_id, scores } => {
                scores.validate()?;
                self.open_session(&scores.annotator, paragraph_id)?;
            }
            EventKind::TripletServed { triplet_id, judge, display_order } => {
                self.check_judge(judge)?;
                let t = self.triplet(triplet_id)?;
                let shown: BTreeSet<Condition> = display_order.iter().copied().collect();
                if shown.len() != 3 || shown.iter().any(|c| !t.variants.contains_key(c)) {
                    return Err(Error::Invalid(format!("display order {display_order:?} does not match {triplet_id}")));
                }
                if self.served.contains_key(&(triplet_id.clone(), judge.clone())) {
                    return Err(Error::Invalid(format!("{triplet_id} served to {judge} twice")));
                }
            }
            EventKind::RankingSubmitted { triplet_id, judge, ranks } => {
                check_permutation(ranks)?;
                let served = self
                    .served
                    .get(&(triplet_id.clone(), judge.clone()))
                    .ok_or_else(|| Error::Rejected(format!("triplet {triplet_id} was not served to {judge}")))?;
                if served.ranks.is_some() {
                    return Err(Error::Rejected(format!("{judge} already ranked {triplet_id}")));
                }
            }
        }
        Ok(())
    }
}

/// The annotation service. All operations serialize through one lock, so
/// the log has a single writer and readers never see partial updates.
pub struct Service {
    inner: Mutex<Inner>,
}

impl Service {
    pub fn in_memory(config: ServiceConfig) -> Result<Self> {
        config.validate()?;
        Ok(Service { inner: Mutex::new(Inner { state: State::new(config), log: None }) })
    }

    /// Opens (or creates) the event log at `path` and replays it.
    ///
    /// A final line without a trailing newline is a write torn by a crash;
    /// it is dropped and the file truncated to the last complete event.
    pub fn open(config: ServiceConfig, path: &Path) -> Result<Self> {
        config.validate()?;
        let mut state = State::new(config);
        let text = match fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
            Err(e) => return Err(Error::io(path, e)),
        };
        let mut good_bytes = 0;
        for (i, line) in text.split_inclusive('\n').enumerate() {
            if !line.ends_with('\n') {
                eprintln!("warning: {}: dropping incomplete final event", path.display());
                break;
            }
            if !line.trim().is_empty() {
                let ev: Event = serde_json::from_str(line).map_err(|e| Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: e.to_string(),
                })?;
                state.apply(&ev).map_err(|e| Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: format!("event does not replay: {e}"),
                })?;
            }
            good_bytes += line.len();
        }
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(|e| Error::io(path, e))?;
        if good_bytes < text.len() {
            file.set_len(good_bytes as u64).map_err(|e| Error::io(path, e))?;
        }
        Ok(Service { inner: Mutex::new(Inner { state, log: Some((path.to_path_buf(), file)) }) })
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// The annotator's first unscored paragraph. When there is none, the
    /// annotator claims the next `batch_size` paragraphs that still need
    /// annotators, in config order. Asking again before submitting scores
    /// returns the same paragraph.
    pub fn next_task(&self, annotator: &str) -> Result<Option<Task>> {
        let mut g = self.lock();
        g.state.check_annotator(annotator)?;
        if g.state.outstanding_task(annotator).is_none() {
            let st = &g.state;
            let claim: Vec<String> = st
                .config
                .paragraphs
                .iter()
                .filter(|p| {
                    !st.edited_by(&p.id, annotator) && st.assigned.get(&p.id).copied().unwrap_or(0) < st.target(&p.id)
                })
                .take(st.config.batch_size)
                .map(|p| p.id.clone())
                .collect();
            for p in claim {
                let session = edit_session(annotator, &p);
                g.commit(EventKind::TaskAssigned { annotator: annotator.to_owned(), paragraph_id: p }, session)?;
            }
        }
        let st = &g.state;
        let Some(pid) = st.outstanding_task(annotator) else { return Ok(None) };
        Ok(Some(Task {
            paragraph: st.paragraph(pid)?.clone(),
            edits: st.sessions[&(annotator.to_owned(), pid.to_owned())].edits.clone(),
        }))
    }

    pub fn submit_edit(&self, req: &EditRequest) -> Result<Ack> {
        let mut g = self.lock();
        let category = parse_category(&req.category)?;
        let text = &g.state.paragraph(&req.paragraph_id)?.response;
        let len = text.chars().count();
        let original = slice_chars(text, req.start, req.end)
            .filter(|_| req.start <= req.end)
            .ok_or(lamp_core::Error::OffsetOutOfRange { start: req.start, end: req.end, len })?
            .to_owned();
        if let Some(claimed) = &req.original {
            if *claimed != original {
                return Err(lamp_core::Error::OriginalMismatch {
                    start: req.start,
                    end: req.end,
                    expected: claimed.clone(),
                    found: original,
                }
                .into());
            }
        }
        let session = edit_session(&req.annotator, &req.paragraph_id);
        let edit = EditSpan {
            start: req.start,
            end: req.end,
            original,
            replacement: req.replacement.clone(),
            category,
            annotator: req.annotator.clone(),
            order_index: g.state.seq_for(&session),
            undone: false,
        };
        let ev = g.commit(EventKind::AddEdit { paragraph_id: req.paragraph_id.clone(), edit }, session)?;
        Ok(Ack { session: ev.session, seq: ev.seq })
    }

    pub fn undo(&self, r: &SessionRef) -> Result<Ack> {
        let mut g = self.lock();
        let s = g.state.open_session(&r.annotator, &r.paragraph_id)?;
        let last = s
            .edits
            .iter()
            .rev()
            .find(|e| !e.undone)
            .ok_or_else(|| Error::Rejected("nothing to undo".into()))?
            .order_index;
        let ev = g.commit(
            EventKind::Undo { paragraph_id: r.paragraph_id.clone(), annotator: r.annotator.clone(), order_index: last },
            edit_session(&r.annotator, &r.paragraph_id),
        )?;
        Ok(Ack { session: ev.session, seq: ev.seq })
    }

    pub fn submit_scores(&self, r: &ScoresRequest) -> Result<Ack> {
        let mut g = self.lock();
        let scores = QualityScores { iwqs: r.iwqs, fwqs: r.fwqs, annotator: r.annotator.clone() };
        let ev = g.commit(
            EventKind::SubmitScores { paragraph_id: r.paragraph_id.clone(), scores },
            edit_session(&r.annotator, &r.paragraph_id),
        )?;
        Ok(Ack { session: ev.session, seq: ev.seq })
    }

    /// The judge's unranked triplet, or the next eligible one. Judges never
    /// see paragraphs they edited.
    pub fn next_triplet(&self, judge: &str) -> Result<Option<ServedTriplet>> {
        let mut g = self.lock();
        g.state.check_judge(judge)?;
        let outstanding = g
            .state
            .served
            .iter()
            .find(|((_, j), s)| j == judge && s.ranks.is_none())
            .map(|((t, _), _)| t.clone());
        let tid = match outstanding {
            Some(t) => t,
            None => {
                let st = &g.state;
                let next = st.config.triplets.iter().find(|t| {
                    !st.served.contains_key(&(t.triplet_id.clone(), judge.to_owned()))
                        && st.serve_counts.get(&t.triplet_id).copied().unwrap_or(0) < st.config.judges_per_triplet
                        && !t.editors.iter().any(|e| e == judge)
                        && !st.edited_by(&t.paragraph_id, judge)
                });
                let Some(t) = next else { return Ok(None) };
                let (tid, order) = (t.triplet_id.clone(), shuffle_for(t, judge));
                g.commit(
                    EventKind::TripletServed { triplet_id: tid.clone(), judge: judge.to_owned(), display_order: order },
                    judge_session(judge, &tid),
                )?;
                tid
            }
        };
        let st = &g.state;
        let t = st.triplet(&tid)?;
        let served = &st.served[&(tid.clone(), judge.to_owned())];
        Ok(Some(ServedTriplet {
            triplet_id: tid.clone(),
            variants: served
                .display_order
                .iter()
                .zip(["A", "B", "C"])
                .map(|(c, slot)| Variant { slot: slot.to_owned(), text: t.variants[c].clone() })
                .collect(),
        }))
    }

    pub fn submit_ranking(&self, sub: &RankingSubmission) -> Result<Ack> {
        let mut g = self.lock();
        g.state.check_judge(&sub.judge)?;
        let ev = g.commit(
            EventKind::RankingSubmitted { triplet_id: sub.triplet_id.clone(), judge: sub.judge.clone(), ranks: sub.ranks.clone() },
            judge_session(&sub.judge, &sub.triplet_id),
        )?;
        Ok(Ack { session: ev.session, seq: ev.seq })
    }

    /// JSONL export, deterministically ordered.
    pub fn export(&self, scope: ExportScope) -> String {
        let g = self.lock();
        let st = &g.state;
        let mut lines: Vec<String> = Vec::new();
        match scope {
            ExportScope::Edits => {
                let mut all: Vec<ExportedEdit> = st
                    .sessions
                    .iter()
                    .flat_map(|((_, pid), s)| {
                        s.edits.iter().map(move |e| ExportedEdit { paragraph_id: pid.clone(), edit: e.clone() })
                    })
                    .collect();
                all.sort_by(|a, b| {
                    (&a.paragraph_id, a.edit.order_index, &a.edit.annotator).cmp(&(
                        &b.paragraph_id,
                        b.edit.order_index,
                        &b.edit.annotator,
                    ))
                });
                lines.extend(all.iter().map(|e| serde_json::to_string(e).expect("serializes")));
            }
            ExportScope::Rankings => {
                let mut all: Vec<(&str, PreferenceJudgment)> = st
                    .served
                    .iter()
                    .filter_map(|((tid, judge), s)| {
                        let ranks = s.ranks.as_ref()?;
                        let t = st.triplet(tid).ok()?;
                        Some((t.paragraph_id.as_str(), deshuffle(tid, judge, &s.display_order, ranks)))
                    })
                    .collect();
                all.sort_by(|a, b| (a.0, &a.1.triplet_id, &a.1.judge).cmp(&(b.0, &b.1.triplet_id, &b.1.judge)));
                lines.extend(all.iter().map(|(_, j)| serde_json::to_string(j).expect("serializes")));
            }
            ExportScope::Corpus => {
                let mut done: Vec<(&String, &String, &Session, &QualityScores)> = st
                    .sessions
                    .iter()
                    .filter_map(|((a, p), s)| s.scores.as_ref().map(|sc| (p, a, s, sc)))
                    .collect();
                done.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
                for (pid, annotator, s, scores) in done {
                    let Ok(record) = st.paragraph(pid) else { continue };
                    let mut record = record.clone();
                    if st.target(pid) > 1 {
                        record.id = format!("{pid}@{annotator}");
                    }
                    let ap = AnnotatedParagraph { record, edits: s.edits.clone(), scores: scores.clone() };
                    lines.push(serde_json::to_string(&ap).expect("serializes"));
                }
            }
        }
        let mut out = lines.join("\n");
        if !out.is_empty() {
            out.push('\n');
        }
        out
    }
}

/// Maps slot ranks back onto the conditions that were displayed.
pub fn deshuffle(triplet_id: &str, judge: &str, display_order: &[Condition], ranks: &[u8]) -> PreferenceJudgment {
    PreferenceJudgment {
        triplet_id: triplet_id.to_owned(),
        judge: judge.to_owned(),
        condition_of_rank: ranks.iter().copied().zip(display_order.iter().copied()).collect(),
        display_order: display_order.to_vec(),
    }
}

pub mod http {
    //! JSON-over-HTTP front end.

    use std::net::SocketAddr;
    use std::path::PathBuf;

    use axum::extract::{Query, State};
    use axum::http::{header, StatusCode};
    use axum::response::{IntoResponse, Response};
    use axum::routing::{get, post};
    use axum::{Json, Router};
    use serde::Deserialize;
    use serde_json::json;
    use tower_http::services::ServeDir;

    use super::*;

    type Shared = Arc<Service>;

    pub struct ApiError(Error);

    impl IntoResponse for ApiError {
        fn into_response(self) -> Response {
            let status = match &self.0 {
                Error::NotFound(_) => StatusCode::NOT_FOUND,
                Error::Rejected(_) => StatusCode::CONFLICT,
                Error::Io { .. } => StatusCode::INTERNAL_SERVER_ERROR,
                _ => StatusCode::BAD_REQUEST,
            };
            (status, Json(json!({"error": self.0.to_string()}))).into_response()
        }
    }

    impl From<Error> for ApiError {
        fn from(e: Error) -> Self {
            ApiError(e)
        }
    }

    type ApiResult<T> = std::result::Result<Json<T>, ApiError>;

    #[derive(Deserialize)]
    struct AnnotatorQ {
        annotator: String,
    }

    #[derive(Deserialize)]
    struct JudgeQ {
        judge: String,
    }

    #[derive(Deserialize)]
    struct ScopeQ {
        scope: String,
    }

    async fn next_task(State(s): State<Shared>, Query(q): Query<AnnotatorQ>) -> ApiResult<Value> {
        Ok(Json(json!({"task": s.next_task(&q.annotator)?})))
    }

    async fn add_edit(State(s): State<Shared>, Json(r): Json<EditRequest>) -> ApiResult<Ack> {
        Ok(Json(s.submit_edit(&r)?))
    }

    async fn undo(State(s): State<Shared>, Json(r): Json<SessionRef>) -> ApiResult<Ack> {
        Ok(Json(s.undo(&r)?))
    }

    async fn scores(State(s): State<Shared>, Json(r): Json<ScoresRequest>) -> ApiResult<Ack> {
        Ok(Json(s.submit_scores(&r)?))
    }

    async fn next_triplet(State(s): State<Shared>, Query(q): Query<JudgeQ>) -> ApiResult<Value> {
        Ok(Json(json!({"triplet": s.next_triplet(&q.judge)?})))
    }

    async fn rank(State(s): State<Shared>, Json(r): Json<RankingSubmission>) -> ApiResult<Ack> {
        Ok(Json(s.submit_ranking(&r)?))
    }

    async fn export(State(s): State<Shared>, Query(q): Query<ScopeQ>) -> std::result::Result<Response, ApiError> {
        let scope: ExportScope = q.scope.parse()?;
        Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], s.export(scope)).into_response())
    }

    pub fn router(service: Shared, static_dir: Option<PathBuf>) -> Router {
        let api = Router::new()
            .route("/api/tasks/next", get(next_task))
            .route("/api/edits", post(add_edit))
            .route("/api/edits/undo", post(undo))
            .route("/api/scores", post(scores))
            .route("/api/preference/next", get(next_triplet))
            .route("/api/preference/rank", post(rank))
            .route("/api/export", get(export))
            .with_state(service);
        match static_dir {
            Some(dir) => api.fallback_service(ServeDir::new(dir)),
            None => api,
        }
    }

    /// Binds `addr`, reports the bound address through `on_bound`, and serves
    /// until the process ends.
    pub async fn serve(
        service: Shared,
        addr: SocketAddr,
        static_dir: Option<PathBuf>,
        on_bound: impl FnOnce(SocketAddr),
    ) -> std::io::Result<()> {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        on_bound(listener.local_addr()?);
        axum::serve(listener, router(service, static_dir)).await
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use lamp_core::corpus::{Genre, Split};

    pub(crate) fn record(id: &str, response: &str) -> ParagraphRecord {
        ParagraphRecord {
            id: id.into(),
            genre: Genre::Fiction,
            venue: "NewYorkerFiction".into(),
            seed_paragraph: None,
            instruction: "Write.".into(),
            generator: "m".into(),
            response: response.into(),
            split: Split::Test,
        }
    }

    fn config() -> ServiceConfig {
        ServiceConfig {
            paragraphs: vec![record("p1", "I 👍 it a lot. The air was thick."), record("p2", "Second one.")],
            annotators: vec!["w1".into(), "w2".into()],
            judges: vec!["j1".into()],
            redundancy: 1,
            redundant_ids: BTreeSet::new(),
            triplets: alternate_triplets(&[TripletSource {
                paragraph_id: "p9".into(),
                generated: "g".into(),
                writer_edited: "w".into(),
                oracle_edited: "o".into(),
                full_edited: "f".into(),
                editors: vec![],
            }]),
            judges_per_triplet: 3,
            batch_size: 1,
        }
    }

    fn edit(annotator: &str, pid: &str, start: usize, end: usize, rep: &str) -> EditRequest {
        EditRequest {
            annotator: annotator.into(),
            paragraph_id: pid.into(),
            start,
            end,
            replacement: rep.into(),
            category: Value::String("Cliche".into()),
            original: None,
        }
    }

    #[test]
    fn edit_undo_export() {
        let s = Service::in_memory(config()).unwrap();
        assert_eq!(s.export(ExportScope::Edits), "");
        let t = s.next_task("w1").unwrap().unwrap();
        assert_eq!(t.paragraph.id, "p1");
        // idempotent until scores arrive
        assert_eq!(s.next_task("w1").unwrap().unwrap().paragraph.id, "p1");
        assert_eq!(s.next_task("w2").unwrap().unwrap().paragraph.id, "p2");

        s.submit_edit(&EditRequest { original: Some("it".into()), ..edit("w1", "p1", 4, 6, "this") }).unwrap();
        let overlap = s.submit_edit(&edit("w1", "p1", 5, 8, "x")).unwrap_err();
        assert!(matches!(overlap, Error::Rejected(ref m) if m.contains("[4, 6)")), "{overlap}");
        s.submit_edit(&edit("w1", "p1", 14, 32, "It was humid.")).unwrap();
        s.submit_edit(&edit("w1", "p1", 0, 1, "We")).unwrap();
        s.undo(&SessionRef { annotator: "w1".into(), paragraph_id: "p1".into() }).unwrap();
        // the undone range is free again
        s.submit_edit(&edit("w1", "p1", 0, 2, "")).unwrap();
        s.undo(&SessionRef { annotator: "w1".into(), paragraph_id: "p1".into() }).unwrap();
        let lines: Vec<ExportedEdit> =
            s.export(ExportScope::Edits).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines.iter().filter(|e| e.edit.undone).count(), 2);
        assert!(lines.windows(2).all(|w| w[0].edit.order_index < w[1].edit.order_index));
        assert_eq!(lines[0].edit.original, "it");

        s.submit_scores(&ScoresRequest { annotator: "w1".into(), paragraph_id: "p1".into(), iwqs: 4, fwqs: 8 }).unwrap();
        assert!(s.submit_edit(&edit("w1", "p1", 7, 8, "x")).is_err());
        assert!(s.next_task("w1").unwrap().is_none());
        let corpus = s.export(ExportScope::Corpus);
        let ap: AnnotatedParagraph = serde_json::from_str(corpus.trim()).unwrap();
        ap.validate().unwrap();
        assert_eq!(ap.final_text().unwrap(), "I 👍 this a lot. It was humid.");
    }

    #[test]
    fn rejected_requests_leave_no_trace() {
        let s = Service::in_memory(config()).unwrap();
        assert!(matches!(s.next_task("nobody"), Err(Error::NotFound(_))));
        assert!(s.submit_edit(&edit("w1", "p1", 0, 1, "x")).is_err()); // not assigned
        s.next_task("w1").unwrap();
        assert!(matches!(
            s.undo(&SessionRef { annotator: "w1".into(), paragraph_id: "p1".into() }),
            Err(Error::Rejected(_))
        ));
        assert!(s.submit_edit(&edit("w1", "p1", 3, 2, "x")).is_err());
        assert!(s.submit_edit(&edit("w1", "p1", 0, 99, "x")).is_err());
        assert!(s.submit_edit(&EditRequest { category: Value::String("Bogus".into()), ..edit("w1", "p1", 0, 1, "x") }).is_err());
        let ack = s.submit_edit(&EditRequest { category: serde_json::json!({"other": "Dialogue"}), ..edit("w1", "p1", 0, 1, "x") }).unwrap();
        // seq 1 was the assignment; failures consumed nothing
        assert_eq!(ack.seq, 2);
    }

    #[test]
    fn ranking_rules() {
        let s = Service::in_memory(config()).unwrap();
        let t = s.next_triplet("j1").unwrap().unwrap();
        assert_eq!(s.next_triplet("j1").unwrap().unwrap(), t);
        let texts: BTreeSet<_> = t.variants.iter().map(|v| v.text.as_str()).collect();
        assert_eq!(texts, BTreeSet::from(["g", "w", "o"]));
        let sub = |ranks: Vec<u8>| RankingSubmission { triplet_id: t.triplet_id.clone(), judge: "j1".into(), ranks };
        assert!(s.submit_ranking(&sub(vec![1, 1, 3])).is_err());
        s.submit_ranking(&sub(vec![2, 1, 3])).unwrap();
        assert!(matches!(s.submit_ranking(&sub(vec![2, 1, 3])), Err(Error::Rejected(_))));
        let j: PreferenceJudgment = serde_json::from_str(s.export(ExportScope::Rankings).trim()).unwrap();
        j.validate().unwrap();
        let order = shuffle_for(&config().triplets[0], "j1");
        assert_eq!(j.rank_of(order[1]), Some(1));
        assert!(s.next_triplet("j1").unwrap().is_none());
    }
}
