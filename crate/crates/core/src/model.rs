//! Shared domain types: capture events, abstracted word events, text-input
//! records and the input-motive taxonomy.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::ParseError;

/// Epoch milliseconds.
pub type Timestamp = u64;

/// Purpose category of a text input, inferred from its prompt text.
///
/// The first seven variants are the coding labels raters may assign. The
/// remaining two describe records the classifier could not label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Motive {
    Messaging,
    Posting,
    Commenting,
    Search,
    DataInput,
    Other,
    Ambiguous,
    /// Prompt present (or redacted) but no mapping entry or keyword rule hit.
    Unlabeled,
    /// No prompt available for the field.
    NoPrompt,
}

impl Motive {
    pub const ALL: [Motive; 9] = [
        Motive::Messaging,
        Motive::Posting,
        Motive::Commenting,
        Motive::Search,
        Motive::DataInput,
        Motive::Other,
        Motive::Ambiguous,
        Motive::Unlabeled,
        Motive::NoPrompt,
    ];

    /// Labels a human coder or a mapping entry may assign.
    pub const CODING: [Motive; 7] = [
        Motive::Messaging,
        Motive::Posting,
        Motive::Commenting,
        Motive::Search,
        Motive::DataInput,
        Motive::Other,
        Motive::Ambiguous,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Motive::Messaging => "Messaging",
            Motive::Posting => "Posting",
            Motive::Commenting => "Commenting",
            Motive::Search => "Search",
            Motive::DataInput => "DataInput",
            Motive::Other => "Other",
            Motive::Ambiguous => "Ambiguous",
            Motive::Unlabeled => "Unlabeled",
            Motive::NoPrompt => "NoPrompt",
        }
    }

    /// True for the seven coding labels.
    pub fn is_label(self) -> bool {
        !matches!(self, Motive::Unlabeled | Motive::NoPrompt)
    }
}

impl fmt::Display for Motive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Motive {
    type Err = ParseError;

    /// Accepts the canonical names case-insensitively, ignoring spaces,
    /// hyphens and underscores ("Data Input" parses as `DataInput`).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s.chars().filter(|c| !matches!(c, ' ' | '-' | '_')).flat_map(char::to_lowercase).collect();
        Motive::ALL
            .iter()
            .copied()
            .find(|m| m.as_str().to_lowercase() == key)
            .ok_or_else(|| ParseError::UnknownMotive(s.to_string()))
    }
}

impl Serialize for Motive {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Motive {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Full Unicode case folding.
pub fn fold_case(s: &str) -> String {
    caseless::default_case_fold_str(s)
}

/// Trims, collapses whitespace runs to one space and case-folds.
pub fn normalize_prompt(raw: &str) -> String {
    let folded = fold_case(raw);
    let mut out = String::with_capacity(folded.len());
    for part in folded.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(part);
    }
    out
}

/// Sentinel text for prompts removed by the single-participant prefilter.
pub const REDACTED: &str = "REDACTED";

/// Prompt attached to a text input after normalization.
///
/// Serialized as a plain string. Normalized prompts are case-folded, so the
/// upper-case sentinel can never collide with a real prompt.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Prompt {
    Text(String),
    Redacted,
}

impl Prompt {
    pub fn text(&self) -> Option<&str> {
        match self {
            Prompt::Text(t) => Some(t),
            Prompt::Redacted => None,
        }
    }

    pub fn as_str(&self) -> &str {
        match self {
            Prompt::Text(t) => t,
            Prompt::Redacted => REDACTED,
        }
    }
}

impl From<&str> for Prompt {
    fn from(s: &str) -> Self {
        if s == REDACTED {
            Prompt::Redacted
        } else {
            Prompt::Text(s.to_string())
        }
    }
}

impl Serialize for Prompt {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Prompt {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Ok(Prompt::from(s.as_str()))
    }
}

/// Sorted, duplicate-free set of dictionary category ids.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CategorySet(Vec<u32>);

impl CategorySet {
    pub fn new() -> Self {
        CategorySet(Vec::new())
    }

    pub fn from_ids(ids: impl IntoIterator<Item = u32>) -> Self {
        let mut v: Vec<u32> = ids.into_iter().collect();
        v.sort_unstable();
        v.dedup();
        CategorySet(v)
    }

    pub fn ids(&self) -> &[u32] {
        &self.0
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn contains(&self, id: u32) -> bool {
        self.0.binary_search(&id).is_ok()
    }

    pub fn union_with(&mut self, other: &CategorySet) {
        if other.0.is_empty() {
            return;
        }
        let mut merged = Vec::with_capacity(self.0.len() + other.0.len());
        let (mut i, mut j) = (0, 0);
        while i < self.0.len() && j < other.0.len() {
            let (a, b) = (self.0[i], other.0[j]);
            if a < b {
                merged.push(a);
                i += 1;
            } else if b < a {
                merged.push(b);
                j += 1;
            } else {
                merged.push(a);
                i += 1;
                j += 1;
            }
        }
        merged.extend_from_slice(&self.0[i..]);
        merged.extend_from_slice(&other.0[j..]);
        self.0 = merged;
    }

    /// Dense many-hot vector of length `len`; ids beyond `len` are ignored.
    pub fn to_dense(&self, len: usize) -> Vec<bool> {
        let mut v = vec![false; len];
        for &id in &self.0 {
            if let Some(slot) = v.get_mut(id as usize) {
                *slot = true;
            }
        }
        v
    }
}

/// One raw capture event: the full field content after a change.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldSnapshotEvent {
    pub ts: Timestamp,
    #[serde(rename = "pid")]
    pub participant_id: String,
    #[serde(rename = "app")]
    pub app_id: String,
    #[serde(rename = "field")]
    pub field_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    pub content: String,
}

impl FieldSnapshotEvent {
    pub fn validate(&self) -> Result<(), ParseError> {
        if self.participant_id.is_empty() {
            return Err(ParseError::EmptyField("pid"));
        }
        if self.app_id.is_empty() {
            return Err(ParseError::EmptyField("app"));
        }
        if self.field_id.is_empty() {
            return Err(ParseError::EmptyField("field"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WordKind {
    Added,
    Changed,
    Removed,
}

/// Privacy-abstracted word-level event. Carries category ids and, only for
/// whitelisted words, the case-folded word itself.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordEvent {
    pub ts: Timestamp,
    #[serde(rename = "pid")]
    pub participant_id: String,
    #[serde(rename = "app")]
    pub app_id: String,
    #[serde(rename = "sid")]
    pub session_id: String,
    pub kind: WordKind,
    #[serde(rename = "cats")]
    pub category_ids: CategorySet,
    #[serde(rename = "wl", default, skip_serializing_if = "Option::is_none")]
    pub whitelist_token: Option<String>,
}

/// One completed text input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextInputRecord {
    #[serde(rename = "sid")]
    pub session_id: String,
    #[serde(rename = "pid")]
    pub participant_id: String,
    #[serde(rename = "app")]
    pub app_id: String,
    #[serde(rename = "app_cat", default, skip_serializing_if = "Option::is_none")]
    pub app_category: Option<String>,
    #[serde(rename = "prompt", default, skip_serializing_if = "Option::is_none")]
    pub prompt_text: Option<Prompt>,
    pub motive: Motive,
    #[serde(rename = "added")]
    pub words_added: u64,
    #[serde(rename = "changed")]
    pub words_changed: u64,
    #[serde(rename = "removed")]
    pub words_removed: u64,
    #[serde(rename = "total")]
    pub total_words: u64,
    #[serde(rename = "matched")]
    pub matched_words: u64,
    pub many_hot: CategorySet,
    #[serde(rename = "start")]
    pub start_ts: Timestamp,
    #[serde(rename = "end")]
    pub end_ts: Timestamp,
}

impl TextInputRecord {
    /// Fraction of added/changed words with at least one category match.
    pub fn matching_rate(&self) -> Option<f64> {
        (self.total_words > 0).then(|| self.matched_words as f64 / self.total_words as f64)
    }

    pub fn check_invariants(&self) -> Result<(), String> {
        if self.total_words != self.words_added + self.words_changed {
            return Err(format!("{}: total != added + changed", self.session_id));
        }
        if self.matched_words > self.total_words {
            return Err(format!("{}: matched > total", self.session_id));
        }
        if self.end_ts < self.start_ts {
            return Err(format!("{}: end before start", self.session_id));
        }
        Ok(())
    }
}

/// Application id to app category name.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AppCategoryMap {
    map: BTreeMap<String, String>,
}

impl AppCategoryMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, app_id: impl Into<String>, category: impl Into<String>) -> Result<(), ParseError> {
        let app_id = app_id.into();
        if self.map.contains_key(&app_id) {
            return Err(ParseError::Duplicate(app_id));
        }
        self.map.insert(app_id, category.into());
        Ok(())
    }

    pub fn get(&self, app_id: &str) -> Option<&str> {
        self.map.get(app_id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.map.iter().map(|(a, c)| (a.as_str(), c.as_str()))
    }

    /// Reads `app_id<TAB>category` lines; `#` starts a comment line.
    pub fn parse_tsv(text: &str) -> Result<Self, ParseError> {
        let mut out = AppCategoryMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (app, cat) =
                line.split_once('\t').ok_or_else(|| ParseError::line(i + 1, "expected app_id<TAB>category"))?;
            let (app, cat) = (app.trim(), cat.trim());
            if app.is_empty() || cat.is_empty() {
                return Err(ParseError::line(i + 1, "empty app id or category"));
            }
            out.insert(app, cat).map_err(|e| ParseError::line(i + 1, e.to_string()))?;
        }
        Ok(out)
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("# app_id\tcategory\n");
        for (a, c) in self.iter() {
            s.push_str(a);
            s.push('\t');
            s.push_str(c);
            s.push('\n');
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_prompt("  Type a Message "), "type a message");
        assert_eq!(normalize_prompt(""), "");
        assert_eq!(normalize_prompt("Suche\t\tApps"), "suche apps");
    }

    #[test]
    fn normalize_uses_full_case_folding() {
        assert_eq!(normalize_prompt("STRASSE"), normalize_prompt("Straße"));
    }

    #[test]
    fn motive_labels_round_trip() {
        for m in Motive::ALL {
            let json = serde_json::to_string(&m).unwrap();
            let back: Motive = serde_json::from_str(&json).unwrap();
            assert_eq!(back, m);
            assert_eq!(m.as_str().parse::<Motive>().unwrap(), m);
        }
        let names: std::collections::HashSet<_> = Motive::ALL.iter().map(|m| m.as_str()).collect();
        assert_eq!(names.len(), 9);
        assert_eq!("Data Input".parse::<Motive>().unwrap(), Motive::DataInput);
        assert!("Chatting".parse::<Motive>().is_err());
    }

    #[test]
    fn prompt_sentinel_round_trip() {
        let p: Prompt = serde_json::from_str("\"REDACTED\"").unwrap();
        assert_eq!(p, Prompt::Redacted);
        let t: Prompt = serde_json::from_str("\"redacted\"").unwrap();
        assert_eq!(t, Prompt::Text("redacted".into()));
    }

    #[test]
    fn category_set_union() {
        let mut a = CategorySet::from_ids([3, 1, 1]);
        a.union_with(&CategorySet::from_ids([2, 3, 9]));
        assert_eq!(a.ids(), &[1, 2, 3, 9]);
        assert_eq!(a.to_dense(4), vec![false, true, true, true]);
    }

    #[test]
    fn appcats_reject_duplicates() {
        let err = AppCategoryMap::parse_tsv("a\tX\na\tY\n").unwrap_err();
        assert!(err.to_string().contains("line 2"));
        let ok = AppCategoryMap::parse_tsv("# c\ncom.whatsapp\tCommunication\n").unwrap();
        assert_eq!(ok.get("com.whatsapp"), Some("Communication"));
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(s in "\\PC*") {
            let once = normalize_prompt(&s);
            prop_assert_eq!(normalize_prompt(&once), once.clone());
        }
    }
}
