//! Grouping of capture events into text-input sessions and aggregation of
//! word events into [`TextInputRecord`]s.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::ParseError;
use crate::model::{
    normalize_prompt, AppCategoryMap, CategorySet, FieldSnapshotEvent, Motive, Prompt, TextInputRecord, Timestamp,
    WordEvent, WordKind,
};

pub const DEFAULT_GAP_TIMEOUT_MS: u64 = 30_000;

/// Deterministic session id from participant, first event time and field.
pub fn session_id(participant_id: &str, first_ts: Timestamp, field_id: &str) -> String {
    let mut h = Sha256::new();
    h.update(participant_id.as_bytes());
    h.update([0]);
    h.update(first_ts.to_be_bytes());
    h.update([0]);
    h.update(field_id.as_bytes());
    let digest = h.finalize();
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Outcome of feeding one event to a [`SessionTracker`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Boundary {
    /// Event continues the open session.
    Continue,
    /// Event opens a new session. `same_field` is set when the previous
    /// session was on the same field and was only split by the gap timeout.
    Start { same_field: bool },
}

#[derive(Debug, Clone)]
struct OpenKey {
    participant_id: String,
    app_id: String,
    field_id: String,
    last_ts: Timestamp,
    session_id: String,
}

/// Streaming session keying: a new session starts whenever the
/// (participant, app, field) key changes or the gap to the previous event
/// exceeds the timeout.
#[derive(Debug, Clone)]
pub struct SessionTracker {
    gap_timeout_ms: u64,
    open: Option<OpenKey>,
}

impl SessionTracker {
    pub fn new(gap_timeout_ms: u64) -> Self {
        SessionTracker { gap_timeout_ms, open: None }
    }

    pub fn observe(&mut self, ev: &FieldSnapshotEvent) -> Boundary {
        if let Some(open) = self.open.as_mut() {
            let same_key =
                open.participant_id == ev.participant_id && open.app_id == ev.app_id && open.field_id == ev.field_id;
            let gap = ev.ts.saturating_sub(open.last_ts);
            if same_key && gap <= self.gap_timeout_ms {
                open.last_ts = ev.ts;
                return Boundary::Continue;
            }
            let same_field = same_key;
            self.start(ev);
            return Boundary::Start { same_field };
        }
        self.start(ev);
        Boundary::Start { same_field: false }
    }

    fn start(&mut self, ev: &FieldSnapshotEvent) {
        self.open = Some(OpenKey {
            participant_id: ev.participant_id.clone(),
            app_id: ev.app_id.clone(),
            field_id: ev.field_id.clone(),
            last_ts: ev.ts,
            session_id: session_id(&ev.participant_id, ev.ts, &ev.field_id),
        });
    }

    /// Id of the currently open session.
    pub fn current(&self) -> Option<&str> {
        self.open.as_ref().map(|o| o.session_id.as_str())
    }
}

/// Attaches a session id to every event.
pub fn assign_sessions<'a, I>(events: I, gap_timeout_ms: u64) -> Vec<(String, &'a FieldSnapshotEvent)>
where
    I: IntoIterator<Item = &'a FieldSnapshotEvent>,
{
    let mut tracker = SessionTracker::new(gap_timeout_ms);
    events
        .into_iter()
        .map(|ev| {
            tracker.observe(ev);
            (tracker.current().unwrap_or_default().to_string(), ev)
        })
        .collect()
}

/// Per-session metadata emitted by the abstraction stage alongside the word
/// events. Contains no typed content.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub session_id: String,
    pub participant_id: String,
    pub app_id: String,
    pub start_ts: Timestamp,
    pub end_ts: Timestamp,
    /// Normalized prompt of the first snapshot; `None` when absent or empty.
    pub prompt: Option<String>,
}

impl SessionInfo {
    pub fn new(ev: &FieldSnapshotEvent, session_id: String) -> Self {
        let prompt = ev.prompt.as_deref().map(normalize_prompt).filter(|p| !p.is_empty());
        SessionInfo {
            session_id,
            participant_id: ev.participant_id.clone(),
            app_id: ev.app_id.clone(),
            start_ts: ev.ts,
            end_ts: ev.ts,
            prompt,
        }
    }

    pub const TSV_HEADER: &'static str = "# sid\tpid\tapp\tstart\tend\tprompt";

    pub fn to_tsv_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}",
            self.session_id,
            self.participant_id,
            self.app_id,
            self.start_ts,
            self.end_ts,
            self.prompt.as_deref().unwrap_or("")
        )
    }

    pub fn parse_tsv_line(line: &str, line_no: usize) -> Result<Self, ParseError> {
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 6 {
            return Err(ParseError::line(line_no, format!("expected 6 columns, found {}", cols.len())));
        }
        let num =
            |s: &str| s.parse::<Timestamp>().map_err(|_| ParseError::line(line_no, format!("bad timestamp {s:?}")));
        Ok(SessionInfo {
            session_id: cols[0].to_string(),
            participant_id: cols[1].to_string(),
            app_id: cols[2].to_string(),
            start_ts: num(cols[3])?,
            end_ts: num(cols[4])?,
            prompt: (!cols[5].is_empty()).then(|| cols[5].to_string()),
        })
    }
}

/// Counts of sessions that produced no analyzable record.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordAudit {
    pub sessions: u64,
    pub records: u64,
    /// Sessions without any word event (focus only, or nothing finalized).
    pub empty_sessions: u64,
    /// Sessions whose events were all removals.
    pub zero_word_sessions: u64,
}

#[derive(Debug, Default)]
struct Tally {
    participant_id: String,
    app_id: String,
    first_ts: Timestamp,
    last_ts: Timestamp,
    added: u64,
    changed: u64,
    removed: u64,
    matched: u64,
    many_hot: CategorySet,
}

impl Tally {
    fn push(&mut self, ev: &WordEvent) {
        self.first_ts = self.first_ts.min(ev.ts);
        self.last_ts = self.last_ts.max(ev.ts);
        match ev.kind {
            WordKind::Added => self.added += 1,
            WordKind::Changed => self.changed += 1,
            WordKind::Removed => {
                self.removed += 1;
                return;
            }
        }
        if !ev.category_ids.is_empty() {
            self.matched += 1;
            self.many_hot.union_with(&ev.category_ids);
        }
    }
}

/// Aggregates word events into one record per session.
///
/// Records follow the order of `sessions`; word events whose session is
/// missing from `sessions` produce records without prompt, ordered by first
/// appearance after the indexed ones. Sessions with no added or changed
/// word are dropped and tallied in the audit.
pub fn build_records(
    words: &[WordEvent],
    sessions: &[SessionInfo],
    app_cats: &AppCategoryMap,
) -> (Vec<TextInputRecord>, RecordAudit) {
    let mut order: Vec<&str> = Vec::new();
    let mut tallies: HashMap<&str, Tally> = HashMap::new();
    for ev in words {
        let t = tallies.entry(ev.session_id.as_str()).or_insert_with(|| {
            order.push(ev.session_id.as_str());
            Tally {
                participant_id: ev.participant_id.clone(),
                app_id: ev.app_id.clone(),
                first_ts: ev.ts,
                last_ts: ev.ts,
                ..Default::default()
            }
        });
        t.push(ev);
    }

    let mut audit = RecordAudit::default();
    let mut records = Vec::with_capacity(sessions.len());
    let mut seen: HashMap<&str, ()> = HashMap::with_capacity(sessions.len());
    let emit = |sid: &str, info: Option<&SessionInfo>, tally: Option<&Tally>, audit: &mut RecordAudit| {
        audit.sessions += 1;
        let Some(t) = tally else {
            audit.empty_sessions += 1;
            return None;
        };
        let total = t.added + t.changed;
        if total == 0 {
            audit.zero_word_sessions += 1;
            return None;
        }
        audit.records += 1;
        let prompt = info.and_then(|i| i.prompt.as_deref()).map(Prompt::from);
        let (pid, app) = match info {
            Some(i) => (i.participant_id.clone(), i.app_id.clone()),
            None => (t.participant_id.clone(), t.app_id.clone()),
        };
        let (start, end) = match info {
            Some(i) => (i.start_ts.min(t.first_ts), i.end_ts.max(t.last_ts)),
            None => (t.first_ts, t.last_ts),
        };
        Some(TextInputRecord {
            session_id: sid.to_string(),
            app_category: app_cats.get(&app).map(str::to_string),
            participant_id: pid,
            app_id: app,
            motive: if prompt.is_some() { Motive::Unlabeled } else { Motive::NoPrompt },
            prompt_text: prompt,
            words_added: t.added,
            words_changed: t.changed,
            words_removed: t.removed,
            total_words: total,
            matched_words: t.matched,
            many_hot: t.many_hot.clone(),
            start_ts: start,
            end_ts: end,
        })
    };

    for info in sessions {
        if seen.insert(info.session_id.as_str(), ()).is_some() {
            continue;
        }
        let tally = tallies.get(info.session_id.as_str());
        if let Some(r) = emit(&info.session_id, Some(info), tally, &mut audit) {
            records.push(r);
        }
    }
    for sid in order {
        if seen.contains_key(sid) {
            continue;
        }
        if let Some(r) = emit(sid, None, tallies.get(sid), &mut audit) {
            records.push(r);
        }
    }
    (records, audit)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(ts: u64, field: &str) -> FieldSnapshotEvent {
        FieldSnapshotEvent {
            ts,
            participant_id: "p1".into(),
            app_id: "app".into(),
            field_id: field.into(),
            prompt: None,
            content: String::new(),
        }
    }

    fn distinct_sessions(events: &[FieldSnapshotEvent], gap: u64) -> usize {
        let mut ids: Vec<String> = assign_sessions(events, gap).into_iter().map(|(s, _)| s).collect();
        ids.dedup();
        ids.len()
    }

    #[test]
    fn gap_beyond_timeout_splits() {
        assert_eq!(distinct_sessions(&[ev(0, "f"), ev(31_000, "f")], 30_000), 2);
    }

    #[test]
    fn field_change_splits() {
        assert_eq!(distinct_sessions(&[ev(0, "f"), ev(1_000, "g")], 30_000), 2);
    }

    #[test]
    fn short_gaps_stay_together() {
        let events: Vec<_> = (0..5).map(|i| ev(i * 29_000, "f")).collect();
        assert_eq!(distinct_sessions(&events, 30_000), 1);
    }

    #[test]
    fn session_id_is_deterministic() {
        assert_eq!(session_id("p", 5, "f"), session_id("p", 5, "f"));
        assert_ne!(session_id("p", 5, "f"), session_id("p", 6, "f"));
        assert_eq!(session_id("p", 5, "f").len(), 16);
    }

    fn word(sid: &str, kind: WordKind, cats: &[u32]) -> WordEvent {
        WordEvent {
            ts: 10,
            participant_id: "p1".into(),
            app_id: "app".into(),
            session_id: sid.into(),
            kind,
            category_ids: CategorySet::from_ids(cats.iter().copied()),
            whitelist_token: None,
        }
    }

    fn info(sid: &str, prompt: Option<&str>) -> SessionInfo {
        SessionInfo {
            session_id: sid.into(),
            participant_id: "p1".into(),
            app_id: "app".into(),
            start_ts: 5,
            end_ts: 20,
            prompt: prompt.map(str::to_string),
        }
    }

    #[test]
    fn aggregates_counts_and_many_hot() {
        let words = vec![
            word("s", WordKind::Added, &[1]),
            word("s", WordKind::Added, &[]),
            word("s", WordKind::Changed, &[2, 3]),
            word("s", WordKind::Removed, &[1]),
        ];
        let (recs, audit) = build_records(&words, &[info("s", Some("type a message"))], &AppCategoryMap::new());
        assert_eq!(recs.len(), 1);
        let r = &recs[0];
        assert_eq!(r.total_words, 3);
        assert_eq!(r.matched_words, 2);
        assert_eq!(r.words_removed, 1);
        assert_eq!(r.many_hot.ids(), &[1, 2, 3]);
        assert_eq!(r.motive, Motive::Unlabeled);
        assert_eq!((r.start_ts, r.end_ts), (5, 20));
        r.check_invariants().unwrap();
        assert_eq!(audit.records, 1);
    }

    #[test]
    fn empty_and_removal_only_sessions_are_dropped() {
        let words = vec![word("b", WordKind::Removed, &[])];
        let (recs, audit) = build_records(&words, &[info("a", None), info("b", None)], &AppCategoryMap::new());
        assert!(recs.is_empty());
        assert_eq!(audit.empty_sessions, 1);
        assert_eq!(audit.zero_word_sessions, 1);
        assert_eq!(audit.sessions, 2);
    }

    #[test]
    fn unindexed_sessions_get_no_prompt() {
        let words = vec![word("x", WordKind::Added, &[])];
        let mut cats = AppCategoryMap::new();
        cats.insert("app", "Communication").unwrap();
        let (recs, _) = build_records(&words, &[], &cats);
        assert_eq!(recs[0].motive, Motive::NoPrompt);
        assert_eq!(recs[0].app_category.as_deref(), Some("Communication"));
    }

    #[test]
    fn index_line_round_trip() {
        let i = info("abc", Some("suche apps"));
        assert_eq!(SessionInfo::parse_tsv_line(&i.to_tsv_line(), 1).unwrap(), i);
        let none = info("abc", None);
        assert_eq!(SessionInfo::parse_tsv_line(&none.to_tsv_line(), 1).unwrap(), none);
    }
}
