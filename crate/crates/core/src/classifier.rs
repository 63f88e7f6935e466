//! Prompt-based input-motive classification: single-participant prefilter,
//! keyword-stem rules, mapping lookup and coverage accounting.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::ParseError;
use crate::model::{fold_case, normalize_prompt, Motive, Prompt, TextInputRecord};
use crate::par::Exec;

/// Default residual cutoff for manual coding, as a fraction of all texts.
pub const DEFAULT_RESIDUAL_CUTOFF: f64 = 0.0001;

/// Ordered stem rules; the first stem contained in a prompt decides.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeywordRuleSet {
    rules: Vec<(String, Motive)>,
}

impl Default for KeywordRuleSet {
    fn default() -> Self {
        KeywordRuleSet {
            rules: vec![
                ("such".into(), Motive::Search),
                ("search".into(), Motive::Search),
                ("komment".into(), Motive::Commenting),
                ("comment".into(), Motive::Commenting),
                ("nachricht".into(), Motive::Messaging),
                ("message".into(), Motive::Messaging),
            ],
        }
    }
}

impl KeywordRuleSet {
    pub fn new(rules: impl IntoIterator<Item = (String, Motive)>) -> Result<Self, ParseError> {
        let mut out = Vec::new();
        for (stem, motive) in rules {
            let stem = fold_case(stem.trim());
            if stem.is_empty() {
                return Err(ParseError::EmptyField("stem"));
            }
            if !motive.is_label() {
                return Err(ParseError::UnknownMotive(motive.to_string()));
            }
            out.push((stem, motive));
        }
        Ok(KeywordRuleSet { rules: out })
    }

    pub fn rules(&self) -> &[(String, Motive)] {
        &self.rules
    }

    /// First matching rule for a normalized prompt.
    pub fn first_match(&self, prompt: &str) -> Option<Motive> {
        self.rules.iter().find(|(stem, _)| prompt.contains(stem.as_str())).map(|(_, m)| *m)
    }

    /// Distinct motives whose stems occur in the prompt, in rule order.
    pub fn all_matches(&self, prompt: &str) -> Vec<Motive> {
        let mut out = Vec::new();
        for (stem, m) in &self.rules {
            if prompt.contains(stem.as_str()) && !out.contains(m) {
                out.push(*m);
            }
        }
        out
    }

    /// `stem<TAB>motive` lines; `#` comments.
    pub fn parse_tsv(text: &str) -> Result<Self, ParseError> {
        let mut rules = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (stem, motive) =
                line.split_once('\t').ok_or_else(|| ParseError::line(i + 1, "expected stem<TAB>motive"))?;
            let motive: Motive =
                motive.trim().parse().map_err(|e: ParseError| ParseError::line(i + 1, e.to_string()))?;
            rules.push((stem.to_string(), motive));
        }
        KeywordRuleSet::new(rules)
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("# stem\tmotive\n");
        for (stem, m) in &self.rules {
            s.push_str(&format!("{stem}\t{m}\n"));
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Provenance {
    AutoKeyword,
    ManualCoded,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::AutoKeyword => "AutoKeyword",
            Provenance::ManualCoded => "ManualCoded",
        })
    }
}

impl FromStr for Provenance {
    type Err = ParseError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "AutoKeyword" => Ok(Provenance::AutoKeyword),
            "ManualCoded" => Ok(Provenance::ManualCoded),
            other => Err(ParseError::line(0, format!("unknown provenance {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MappingEntry {
    pub motive: Motive,
    pub provenance: Provenance,
    pub coder: Option<String>,
    pub round: Option<u32>,
}

/// Normalized prompt text to motive. Also the schema of rater code files.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MotiveMapping {
    entries: BTreeMap<String, MappingEntry>,
}

impl MotiveMapping {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts or replaces an entry; the key is normalized first.
    pub fn insert(&mut self, prompt: &str, entry: MappingEntry) -> Result<Option<MappingEntry>, ParseError> {
        if !entry.motive.is_label() {
            return Err(ParseError::UnknownMotive(entry.motive.to_string()));
        }
        let key = normalize_prompt(prompt);
        if key.is_empty() {
            return Err(ParseError::EmptyField("prompt"));
        }
        Ok(self.entries.insert(key, entry))
    }

    pub fn get(&self, normalized: &str) -> Option<&MappingEntry> {
        self.entries.get(normalized)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &MappingEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Prompt to motive, the shape rater codings are compared in.
    pub fn codes(&self) -> BTreeMap<String, Motive> {
        self.entries.iter().map(|(k, v)| (k.clone(), v.motive)).collect()
    }

    /// Adds entries from `other`; existing keys are kept.
    pub fn merge_missing(&mut self, other: &MotiveMapping) {
        for (k, v) in &other.entries {
            self.entries.entry(k.clone()).or_insert_with(|| v.clone());
        }
    }

    pub const TSV_HEADER: &'static str = "# prompt\tmotive\tprovenance\tcoder\tround";

    /// `prompt<TAB>motive<TAB>provenance<TAB>coder<TAB>round`; the last three
    /// columns may be empty or missing. `#` starts a comment line.
    pub fn parse_tsv(text: &str) -> Result<Self, ParseError> {
        let mut m = MotiveMapping::new();
        for (i, line) in text.lines().enumerate() {
            let n = i + 1;
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() < 2 || cols.len() > 5 {
                return Err(ParseError::line(n, format!("expected 2 to 5 columns, found {}", cols.len())));
            }
            let motive: Motive = cols[1].trim().parse().map_err(|e: ParseError| ParseError::line(n, e.to_string()))?;
            let provenance = match cols.get(2).map(|s| s.trim()) {
                None | Some("") => Provenance::ManualCoded,
                Some(p) => p.parse().map_err(|_| ParseError::line(n, format!("unknown provenance {p:?}")))?,
            };
            let coder = cols.get(3).map(|s| s.trim()).filter(|s| !s.is_empty()).map(str::to_string);
            let round = match cols.get(4).map(|s| s.trim()) {
                None | Some("") => None,
                Some(r) => Some(r.parse().map_err(|_| ParseError::line(n, format!("bad round {r:?}")))?),
            };
            let entry = MappingEntry { motive, provenance, coder, round };
            let key = normalize_prompt(cols[0]);
            if m.entries.contains_key(&key) {
                return Err(ParseError::line(n, format!("duplicate prompt {key:?}")));
            }
            m.insert(cols[0], entry).map_err(|e| ParseError::line(n, e.to_string()))?;
        }
        Ok(m)
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from(Self::TSV_HEADER);
        s.push('\n');
        for (k, v) in &self.entries {
            s.push_str(&format!(
                "{k}\t{}\t{}\t{}\t{}\n",
                v.motive,
                v.provenance,
                v.coder.as_deref().unwrap_or(""),
                v.round.map(|r| r.to_string()).unwrap_or_default()
            ));
        }
        s
    }
}

/// Short stable digest of a prompt, used in reports instead of the text.
pub fn prompt_hash(prompt: &str) -> String {
    let d = Sha256::digest(prompt.as_bytes());
    d[..8].iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RedactedPrompt {
    pub prompt_hash: String,
    pub participants: u64,
    pub records: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RedactionReport {
    /// Sorted by hash.
    pub redacted: Vec<RedactedPrompt>,
    pub redacted_records: u64,
}

/// Replaces every prompt seen by fewer than two distinct participants with
/// the redaction sentinel.
pub fn prefilter_single_participant(records: &mut [TextInputRecord]) -> RedactionReport {
    let mut participants: HashMap<&str, HashSet<&str>> = HashMap::new();
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for r in records.iter() {
        if let Some(Prompt::Text(p)) = &r.prompt_text {
            participants.entry(p).or_default().insert(&r.participant_id);
            *counts.entry(p).or_default() += 1;
        }
    }
    let rare: HashSet<String> =
        participants.iter().filter(|(_, ps)| ps.len() < 2).map(|(p, _)| p.to_string()).collect();
    let mut redacted: Vec<RedactedPrompt> = rare
        .iter()
        .map(|p| RedactedPrompt { prompt_hash: prompt_hash(p), participants: 1, records: counts[p.as_str()] })
        .collect();
    redacted.sort_by(|a, b| a.prompt_hash.cmp(&b.prompt_hash));
    let redacted_records = redacted.iter().map(|r| r.records).sum();
    for r in records.iter_mut() {
        if matches!(&r.prompt_text, Some(Prompt::Text(p)) if rare.contains(p)) {
            r.prompt_text = Some(Prompt::Redacted);
        }
    }
    RedactionReport { redacted, redacted_records }
}

/// Motive for a prompt: mapping lookup first, then keyword rules.
pub fn classify(prompt: Option<&Prompt>, mapping: &MotiveMapping, rules: &KeywordRuleSet) -> Motive {
    match prompt {
        None => Motive::NoPrompt,
        Some(Prompt::Redacted) => Motive::Unlabeled,
        Some(Prompt::Text(p)) => {
            mapping.get(p).map(|e| e.motive).or_else(|| rules.first_match(p)).unwrap_or(Motive::Unlabeled)
        }
    }
}

/// Sets the motive of every record.
pub fn classify_records(records: &mut [TextInputRecord], mapping: &MotiveMapping, rules: &KeywordRuleSet, exec: Exec) {
    exec.for_each_mut(records, |r| {
        r.motive = classify(r.prompt_text.as_ref(), mapping, rules);
    });
}

/// Distinct prompt texts with record counts, most frequent first (ties
/// lexicographic). Redacted prompts are excluded.
pub fn prompt_frequencies(records: &[TextInputRecord]) -> Vec<(String, u64)> {
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for r in records {
        if let Some(Prompt::Text(p)) = &r.prompt_text {
            *counts.entry(p).or_default() += 1;
        }
    }
    let mut v: Vec<(String, u64)> = counts.into_iter().map(|(p, c)| (p.to_string(), c)).collect();
    sort_by_frequency(&mut v);
    v
}

pub(crate) fn sort_by_frequency(v: &mut [(String, u64)]) {
    v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AutoCodeResult {
    pub mapping: MotiveMapping,
    /// Prompts no rule matched, most frequent first.
    pub residual: Vec<(String, u64)>,
    /// Residual prompts above the manual-coding cutoff.
    pub manual_queue: Vec<(String, u64)>,
    /// Prompts whose stems point at more than one motive; the first rule won.
    pub multi_stem: Vec<String>,
}

/// Keyword step over distinct prompts (with their record counts).
///
/// `total_texts` is the number of logged texts the cutoff is relative to; a
/// residual prompt enters the manual queue when its count exceeds
/// `cutoff * total_texts`.
pub fn auto_code_corpus(
    prompts: &[(String, u64)],
    rules: &KeywordRuleSet,
    total_texts: u64,
    cutoff: f64,
) -> AutoCodeResult {
    let mut out = AutoCodeResult::default();
    for (prompt, count) in prompts {
        let key = normalize_prompt(prompt);
        if key.is_empty() {
            continue;
        }
        let hits = rules.all_matches(&key);
        match hits.first() {
            Some(&m) => {
                if hits.len() > 1 {
                    out.multi_stem.push(key.clone());
                }
                out.mapping
                    .insert(
                        &key,
                        MappingEntry { motive: m, provenance: Provenance::AutoKeyword, coder: None, round: None },
                    )
                    .expect("rule motives are coding labels");
            }
            None => out.residual.push((key, *count)),
        }
    }
    sort_by_frequency(&mut out.residual);
    out.multi_stem.sort();
    let threshold = cutoff * total_texts as f64;
    out.manual_queue = out.residual.iter().filter(|(_, c)| *c as f64 > threshold).cloned().collect();
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub records: u64,
    pub prompted: u64,
    pub labeled: u64,
    pub prompt_rate: f64,
    pub label_rate_of_prompted: f64,
    pub label_rate_overall: f64,
    /// Share of each coding label among labeled records.
    pub motive_shares: BTreeMap<Motive, f64>,
    pub motive_counts: BTreeMap<Motive, u64>,
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

pub fn coverage(records: &[TextInputRecord]) -> CoverageReport {
    let mut counts: BTreeMap<Motive, u64> = Motive::ALL.iter().map(|m| (*m, 0)).collect();
    let mut prompted = 0;
    for r in records {
        if r.prompt_text.is_some() {
            prompted += 1;
        }
        *counts.get_mut(&r.motive).expect("all motives present") += 1;
    }
    let labeled: u64 = counts.iter().filter(|(m, _)| m.is_label()).map(|(_, c)| c).sum();
    let n = records.len() as u64;
    CoverageReport {
        records: n,
        prompted,
        labeled,
        prompt_rate: ratio(prompted, n),
        label_rate_of_prompted: ratio(labeled, prompted),
        label_rate_overall: ratio(labeled, n),
        motive_shares: Motive::CODING.iter().map(|m| (*m, ratio(counts[m], labeled))).collect(),
        motive_counts: counts,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CategorySet;
    use proptest::prelude::*;

    fn record(pid: &str, prompt: Option<&str>) -> TextInputRecord {
        TextInputRecord {
            session_id: format!("{pid}-{}", prompt.unwrap_or("")),
            participant_id: pid.into(),
            app_id: "app".into(),
            app_category: None,
            prompt_text: prompt.map(Prompt::from),
            motive: Motive::Unlabeled,
            words_added: 1,
            words_changed: 0,
            words_removed: 0,
            total_words: 1,
            matched_words: 0,
            many_hot: CategorySet::new(),
            start_ts: 0,
            end_ts: 0,
        }
    }

    fn manual(m: Motive) -> MappingEntry {
        MappingEntry { motive: m, provenance: Provenance::ManualCoded, coder: Some("R1".into()), round: Some(2) }
    }

    #[test]
    fn prefilter_examples() {
        let mut recs = vec![
            record("A", Some("reply to john smith")),
            record("A", Some("type a message")),
            record("B", Some("type a message")),
        ];
        let report = prefilter_single_participant(&mut recs);
        assert_eq!(recs[0].prompt_text, Some(Prompt::Redacted));
        assert_eq!(recs[1].prompt_text, Some(Prompt::Text("type a message".into())));
        assert_eq!(report.redacted.len(), 1);
        assert_eq!(report.redacted[0].prompt_hash, prompt_hash("reply to john smith"));
        assert_eq!(report.redacted[0].records, 1);

        let mut empty: Vec<TextInputRecord> = Vec::new();
        assert_eq!(prefilter_single_participant(&mut empty), RedactionReport::default());
    }

    #[test]
    fn classify_examples() {
        let rules = KeywordRuleSet::default();
        let mut mapping = MotiveMapping::new();
        mapping.insert("Tweet your reply", manual(Motive::Commenting)).unwrap();
        let p = |s: &str| Some(Prompt::Text(normalize_prompt(s)));
        assert_eq!(classify(p("Type a message").as_ref(), &mapping, &rules), Motive::Messaging);
        assert_eq!(classify(p("Tweet your reply").as_ref(), &mapping, &rules), Motive::Commenting);
        assert_eq!(classify(p("Search apps, web, and more...").as_ref(), &mapping, &rules), Motive::Search);
        assert_eq!(classify(p("xyz123").as_ref(), &MotiveMapping::new(), &rules), Motive::Unlabeled);
        assert_eq!(classify(None, &mapping, &rules), Motive::NoPrompt);
        assert_eq!(classify(Some(&Prompt::Redacted), &mapping, &rules), Motive::Unlabeled);
    }

    #[test]
    fn mapping_overrides_rules() {
        let mut mapping = MotiveMapping::new();
        mapping.insert("search messages", manual(Motive::Messaging)).unwrap();
        let conflicting = KeywordRuleSet::new([("messages".to_string(), Motive::Search)]).unwrap();
        let p = Prompt::Text("search messages".into());
        assert_eq!(classify(Some(&p), &mapping, &conflicting), Motive::Messaging);
        // without the entry the fixed rule order decides
        assert_eq!(classify(Some(&p), &MotiveMapping::new(), &KeywordRuleSet::default()), Motive::Search);
    }

    #[test]
    fn auto_code_examples() {
        let rules = KeywordRuleSet::default();
        let prompts = vec![("nachricht schreiben".to_string(), 5), ("suche".to_string(), 3), ("foo".to_string(), 1)];
        let res = auto_code_corpus(&prompts, &rules, 9, DEFAULT_RESIDUAL_CUTOFF);
        assert_eq!(res.mapping.len(), 2);
        assert_eq!(res.mapping.get("nachricht schreiben").unwrap().motive, Motive::Messaging);
        assert_eq!(res.mapping.get("suche").unwrap().motive, Motive::Search);
        assert_eq!(res.mapping.get("suche").unwrap().provenance, Provenance::AutoKeyword);
        assert_eq!(res.residual, vec![("foo".to_string(), 1)]);

        let none = auto_code_corpus(&[], &rules, 0, DEFAULT_RESIDUAL_CUTOFF);
        assert!(none.mapping.is_empty() && none.residual.is_empty());

        let c = auto_code_corpus(
            &[("comment\u{2026}".to_string(), 1), ("kommentar".to_string(), 1)],
            &rules,
            2,
            DEFAULT_RESIDUAL_CUTOFF,
        );
        assert!(c.mapping.iter().all(|(_, e)| e.motive == Motive::Commenting));
        assert_eq!(c.mapping.len(), 2);
    }

    #[test]
    fn residual_is_frequency_ordered_and_cut() {
        let prompts = vec![("b".to_string(), 2), ("a".to_string(), 2), ("c".to_string(), 9), ("d".to_string(), 1)];
        let res = auto_code_corpus(&prompts, &KeywordRuleSet::default(), 10_000, 0.0001);
        let order: Vec<&str> = res.residual.iter().map(|(p, _)| p.as_str()).collect();
        assert_eq!(order, vec!["c", "a", "b", "d"]);
        // threshold = 1 record: only counts > 1 enter the manual queue
        assert_eq!(res.manual_queue.len(), 3);
    }

    #[test]
    fn multi_stem_prompts_are_flagged() {
        let res = auto_code_corpus(&[("search messages".to_string(), 1)], &KeywordRuleSet::default(), 1, 0.0);
        assert_eq!(res.multi_stem, vec!["search messages".to_string()]);
        assert_eq!(res.mapping.get("search messages").unwrap().motive, Motive::Search);
    }

    #[test]
    fn coverage_examples() {
        let mut recs = vec![record("A", Some("x")), record("A", Some("y")), record("B", None)];
        recs[0].motive = Motive::Messaging;
        recs[1].motive = Motive::Unlabeled;
        recs[2].motive = Motive::NoPrompt;
        let c = coverage(&recs);
        assert!((c.prompt_rate - 2.0 / 3.0).abs() < 1e-15);
        assert!((c.label_rate_of_prompted - 0.5).abs() < 1e-15);
        assert!((c.label_rate_overall - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(c.motive_shares[&Motive::Messaging], 1.0);

        let mut all = vec![record("A", Some("x")), record("B", Some("x"))];
        all.iter_mut().for_each(|r| r.motive = Motive::Search);
        let c = coverage(&all);
        assert_eq!((c.prompt_rate, c.label_rate_of_prompted, c.label_rate_overall), (1.0, 1.0, 1.0));
    }

    #[test]
    fn mapping_tsv_round_trip_and_errors() {
        let mut m = MotiveMapping::new();
        m.insert("Write a caption", manual(Motive::Posting)).unwrap();
        m.insert(
            "email address",
            MappingEntry { motive: Motive::DataInput, provenance: Provenance::AutoKeyword, coder: None, round: None },
        )
        .unwrap();
        assert_eq!(MotiveMapping::parse_tsv(&m.to_tsv()).unwrap(), m);
        assert!(MotiveMapping::parse_tsv("x\tUnlabeled\n").is_err());
        assert!(MotiveMapping::parse_tsv("x\tSearch\ny\tPosting\nx\tSearch\n")
            .unwrap_err()
            .to_string()
            .contains("line 3"));
        assert!(m.insert("x", manual(Motive::NoPrompt)).is_err());
    }

    #[test]
    fn rules_tsv_round_trip() {
        let r = KeywordRuleSet::default();
        assert_eq!(KeywordRuleSet::parse_tsv(&r.to_tsv()).unwrap(), r);
        assert!(KeywordRuleSet::parse_tsv("\tSearch\n").is_err());
    }

    proptest! {
        #[test]
        fn auto_code_agrees_with_classify(prompts in proptest::collection::vec("[a-z ]{0,12}(such|message|comment|x)?[a-z ]{0,6}", 0..20)) {
            let rules = KeywordRuleSet::default();
            let input: Vec<(String, u64)> = prompts.iter().map(|p| (p.clone(), 1)).collect();
            let res = auto_code_corpus(&input, &rules, 1, 0.0);
            for (p, e) in res.mapping.iter() {
                prop_assert_eq!(classify(Some(&Prompt::Text(p.to_string())), &MotiveMapping::new(), &rules), e.motive);
            }
        }

        #[test]
        fn adding_a_participant_never_redacts(n in 1usize..6, extra in 0usize..3) {
            let mut base: Vec<TextInputRecord> = (0..n).map(|i| record(&format!("p{i}"), Some("p"))).collect();
            let before = prefilter_single_participant(&mut base.clone()).redacted.len();
            base.extend((0..extra).map(|i| record(&format!("q{i}"), Some("p"))));
            let after = prefilter_single_participant(&mut base).redacted.len();
            prop_assert!(after <= before);
        }
    }
}
