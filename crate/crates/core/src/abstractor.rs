//! On-device abstraction stage.
//!
//! Turns raw field snapshots into [`WordEvent`]s. Typed text only exists
//! transiently in [`StreamAbstractor`]'s per-field state; everything that
//! leaves this module is category ids plus whitelisted words.

use serde::Serialize;
use thiserror::Error;

use crate::dictionary::{Dictionary, Whitelist};
use crate::diff::{align, Edit};
use crate::model::{fold_case, CategorySet, FieldSnapshotEvent, Timestamp, WordEvent, WordKind};
use crate::par::Exec;
use crate::sessionizer::{Boundary, SessionInfo, SessionTracker, DEFAULT_GAP_TIMEOUT_MS};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AbstractError {
    #[error("unsorted input: participant {participant_id:?} goes back from {previous} to {ts}")]
    UnsortedInput { participant_id: String, previous: Timestamp, ts: Timestamp },
    #[error("invalid event at position {index}: {msg}")]
    InvalidEvent { index: usize, msg: String },
}

fn is_token_char(c: char) -> bool {
    c.is_alphanumeric() || c == '\'' || c == '\u{2019}'
}

/// Splits text into maximal runs of letters, digits and apostrophes.
pub fn tokenize(content: &str) -> Vec<&str> {
    content.split(|c: char| !is_token_char(c)).filter(|t| !t.is_empty()).collect()
}

/// True when the text ends inside a token, i.e. the last word may still be
/// in progress.
fn ends_in_token(content: &str) -> bool {
    content.chars().next_back().is_some_and(is_token_char)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Abstraction {
    pub categories: CategorySet,
    pub whitelist_token: Option<String>,
}

/// Category ids of a token and, if whitelisted, its case-folded form.
pub fn abstract_token(token: &str, dict: &Dictionary, wl: &Whitelist) -> Abstraction {
    let folded = fold_case(token);
    let categories = dict.lookup_folded(&folded);
    let whitelist_token = wl.contains_folded(&folded).then_some(folded);
    Abstraction { categories, whitelist_token }
}

#[derive(Debug, Clone, Copy)]
pub struct AbstractorConfig {
    pub gap_timeout_ms: u64,
}

impl Default for AbstractorConfig {
    fn default() -> Self {
        AbstractorConfig { gap_timeout_ms: DEFAULT_GAP_TIMEOUT_MS }
    }
}

/// Receives the abstraction stage's output.
pub trait AbstractSink {
    fn word(&mut self, ev: WordEvent);
    fn session(&mut self, info: SessionInfo);
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct AbstractOutput {
    pub words: Vec<WordEvent>,
    pub sessions: Vec<SessionInfo>,
}

impl AbstractSink for AbstractOutput {
    fn word(&mut self, ev: WordEvent) {
        self.words.push(ev);
    }

    fn session(&mut self, info: SessionInfo) {
        self.sessions.push(info);
    }
}

/// Per-field typing state. `committed` is the token list already reported
/// downstream; the trailing in-progress token of the last snapshot is held
/// back until it is terminated.
#[derive(Debug, Default)]
struct FieldState {
    committed: Vec<String>,
    last_tokens: Vec<String>,
    pending: Option<String>,
    deferred: Option<(WordKind, String)>,
}

/// Either token is a prefix of the other: typing on or backspacing within
/// the same word.
fn continues(a: &str, b: &str) -> bool {
    a.starts_with(b) || b.starts_with(a)
}

struct OpenSession {
    info: SessionInfo,
    state: FieldState,
}

/// Streaming abstraction over snapshot events sorted by participant and
/// time.
pub struct StreamAbstractor<'a> {
    dict: &'a Dictionary,
    wl: &'a Whitelist,
    tracker: SessionTracker,
    open: Option<OpenSession>,
    last: Option<(String, Timestamp)>,
    seen: usize,
}

impl<'a> StreamAbstractor<'a> {
    pub fn new(dict: &'a Dictionary, wl: &'a Whitelist, config: AbstractorConfig) -> Self {
        StreamAbstractor {
            dict,
            wl,
            tracker: SessionTracker::new(config.gap_timeout_ms),
            open: None,
            last: None,
            seen: 0,
        }
    }

    pub fn push<S: AbstractSink>(&mut self, ev: &FieldSnapshotEvent, sink: &mut S) -> Result<(), AbstractError> {
        let index = self.seen;
        self.seen += 1;
        ev.validate().map_err(|e| AbstractError::InvalidEvent { index, msg: e.to_string() })?;
        if let Some((pid, prev)) = &self.last {
            if *pid == ev.participant_id && ev.ts < *prev {
                return Err(AbstractError::UnsortedInput { participant_id: pid.clone(), previous: *prev, ts: ev.ts });
            }
        }
        match &mut self.last {
            Some((pid, ts)) if *pid == ev.participant_id => *ts = ev.ts,
            _ => self.last = Some((ev.participant_id.clone(), ev.ts)),
        }

        if let Boundary::Start { same_field } = self.tracker.observe(ev) {
            let carried = self.close(sink);
            let sid = self.tracker.current().unwrap_or_default().to_string();
            let mut state = FieldState::default();
            if same_field {
                // Split by the gap timeout only: the field still holds the
                // text already reported, so it stays the baseline.
                if let Some(prev) = carried {
                    state.committed = prev.committed;
                    state.last_tokens = prev.last_tokens;
                }
            }
            self.open = Some(OpenSession { info: SessionInfo::new(ev, sid), state });
        }

        let (dict, wl) = (self.dict, self.wl);
        let open = self.open.as_mut().expect("session opened above");
        open.info.end_ts = ev.ts;
        let emit = |kind, token: &str, sink: &mut S| {
            sink.word(make_event(dict, wl, &open.info, ev.ts, kind, token));
        };
        apply_snapshot(&mut open.state, &ev.content, |kind, tok| emit(kind, tok, sink));
        Ok(())
    }

    /// Flushes the open session and returns its final field state.
    fn close<S: AbstractSink>(&mut self, sink: &mut S) -> Option<FieldState> {
        let mut open = self.open.take()?;
        if let Some((kind, token)) = open.state.deferred.take() {
            sink.word(make_event(self.dict, self.wl, &open.info, open.info.end_ts, kind, &token));
        }
        open.state.committed = std::mem::take(&mut open.state.last_tokens);
        open.state.last_tokens = open.state.committed.clone();
        open.state.pending = None;
        sink.session(open.info);
        Some(open.state)
    }

    /// Ends the stream, finalizing the open session.
    pub fn finish<S: AbstractSink>(mut self, sink: &mut S) {
        self.close(sink);
    }
}

fn make_event(
    dict: &Dictionary,
    wl: &Whitelist,
    info: &SessionInfo,
    ts: Timestamp,
    kind: WordKind,
    token: &str,
) -> WordEvent {
    let a = abstract_token(token, dict, wl);
    WordEvent {
        ts,
        participant_id: info.participant_id.clone(),
        app_id: info.app_id.clone(),
        session_id: info.session_id.clone(),
        kind,
        category_ids: a.categories,
        whitelist_token: a.whitelist_token,
    }
}

/// Advances a field's state by one snapshot, reporting finalized deltas.
fn apply_snapshot(state: &mut FieldState, content: &str, mut emit: impl FnMut(WordKind, &str)) {
    let tokens = tokenize(content);
    let in_progress = ends_in_token(content) && !tokens.is_empty();

    // An in-progress word replaced in place by an unrelated word was
    // complete after all: report it before diffing.
    if let Some(p) = &state.pending {
        let replaced = tokens.len() == state.last_tokens.len() && tokens.last().is_some_and(|t| !continues(t, p));
        if replaced {
            if let Some((kind, tok)) = state.deferred.take() {
                emit(kind, &tok);
            }
            state.committed = state.last_tokens.clone();
        }
    }

    let pending_idx = in_progress.then(|| tokens.len() - 1);
    let mut deferred = None;
    let mut kept_old: Option<usize> = None;
    let old_tokens: Vec<&str> = state.committed.iter().map(String::as_str).collect();
    let edits = align(&old_tokens, &tokens);
    drop(old_tokens);
    for edit in edits {
        match edit {
            Edit::Added { new } if Some(new) == pending_idx => {
                deferred = Some((WordKind::Added, tokens[new].to_string()));
            }
            Edit::Changed { old, new } if Some(new) == pending_idx => {
                deferred = Some((WordKind::Changed, tokens[new].to_string()));
                kept_old = Some(old);
            }
            Edit::Added { new } => emit(WordKind::Added, tokens[new]),
            Edit::Changed { new, .. } => emit(WordKind::Changed, tokens[new]),
            Edit::Removed { old } => emit(WordKind::Removed, &state.committed[old]),
        }
    }

    let mut committed: Vec<String> = tokens.iter().map(|t| t.to_string()).collect();
    if deferred.is_some() {
        committed.pop();
        if let Some(old) = kept_old {
            committed.push(std::mem::take(&mut state.committed[old]));
        }
    }
    state.committed = committed;
    state.last_tokens = tokens.iter().map(|t| t.to_string()).collect();
    state.pending = pending_idx.map(|i| tokens[i].to_string());
    state.deferred = deferred;
}

/// Runs the abstraction stage over a sorted event sequence.
pub fn process_stream<'e, I>(
    events: I,
    dict: &Dictionary,
    wl: &Whitelist,
    config: AbstractorConfig,
) -> Result<AbstractOutput, AbstractError>
where
    I: IntoIterator<Item = &'e FieldSnapshotEvent>,
{
    let mut out = AbstractOutput::default();
    let mut abs = StreamAbstractor::new(dict, wl, config);
    for ev in events {
        abs.push(ev, &mut out)?;
    }
    abs.finish(&mut out);
    Ok(out)
}

/// Splits a sorted event slice into contiguous per-participant runs.
pub fn participant_partitions(events: &[FieldSnapshotEvent]) -> Vec<&[FieldSnapshotEvent]> {
    let mut parts = Vec::new();
    let mut start = 0;
    for i in 1..=events.len() {
        if i == events.len() || events[i].participant_id != events[start].participant_id {
            if i > start {
                parts.push(&events[start..i]);
            }
            start = i;
        }
    }
    parts
}

/// Same result as [`process_stream`], with participants processed
/// independently under `exec`.
pub fn process_partitioned(
    events: &[FieldSnapshotEvent],
    dict: &Dictionary,
    wl: &Whitelist,
    config: AbstractorConfig,
    exec: Exec,
) -> Result<AbstractOutput, AbstractError> {
    let parts = participant_partitions(events);
    let mut offsets = Vec::with_capacity(parts.len());
    let mut acc = 0;
    for p in &parts {
        offsets.push(acc);
        acc += p.len();
    }
    let jobs: Vec<(usize, &[FieldSnapshotEvent])> = offsets.into_iter().zip(parts).collect();
    let results = exec.map(&jobs, |(offset, part)| {
        process_stream(part.iter(), dict, wl, config).map_err(|e| match e {
            AbstractError::InvalidEvent { index, msg } => AbstractError::InvalidEvent { index: index + offset, msg },
            other => other,
        })
    });
    let mut out = AbstractOutput::default();
    for r in results {
        let r = r?;
        out.words.extend(r.words);
        out.sessions.extend(r.sessions);
    }
    Ok(out)
}
