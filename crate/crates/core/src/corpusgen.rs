//! Deterministic synthetic corpus generator.
//!
//! Produces snapshot-event streams with ground-truth records plus the
//! fixture files the pipeline needs to process them (dictionary, whitelist,
//! motive mapping, app categories). Typed words come from a closed lexicon
//! split into a half the dictionary matches and a half it does not, so the
//! match flag of every word is known at generation time.
//!
//! Inputs are planned sequentially from one random stream, then rendered to
//! keystroke snapshots per participant, each participant on its own stream.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{KeywordRuleSet, MappingEntry, MotiveMapping, Provenance};
use crate::dictionary::{Dictionary, Whitelist};
use crate::error::ParseError;
use crate::model::{normalize_prompt, AppCategoryMap, FieldSnapshotEvent, Motive, Timestamp};
use crate::par::Exec;
use crate::sessionizer::session_id;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid corpus spec: {field}: {reason}")]
pub struct InvalidSpec {
    pub field: String,
    pub reason: String,
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> InvalidSpec {
    InvalidSpec { field: field.into(), reason: reason.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

const fn ms(mean: f64, sd: f64) -> MeanSd {
    MeanSd { mean, sd }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptVocabulary {
    /// Distinct mapped prompts, spread over the motives by their share.
    pub mapped: u32,
    /// Distinct prompts outside the mapping (the long tail).
    pub residual: u32,
    pub zipf_exponent: f64,
}

impl Default for PromptVocabulary {
    fn default() -> Self {
        PromptVocabulary { mapped: 240, residual: 2000, zipf_exponent: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSpec {
    pub seed: u64,
    pub participants: u32,
    pub days: u32,
    pub inputs_per_participant_per_day: MeanSd,
    /// Share of each coding motive; motives left out get zero.
    pub motive_mix: BTreeMap<Motive, f64>,
    /// Probability that a text field shows a prompt.
    pub prompt_availability: f64,
    /// Probability that a prompted input's prompt is covered by the mapping
    /// or the keyword rules.
    pub label_coverage: f64,
    /// Words per input (added + changed). Motives left out use the defaults.
    pub words_per_input: BTreeMap<Motive, MeanSd>,
    /// Per-word dictionary match probability. Motives left out use the
    /// defaults.
    pub match_probability: BTreeMap<Motive, f64>,
    pub prompt_vocabulary: PromptVocabulary,
    /// Probability, among prompted inputs, of a prompt unique to the
    /// participant; drawn from the uncovered share.
    pub single_participant_prompt_rate: f64,
    /// Per-word probability of replacing the previous word.
    pub change_rate: f64,
    /// Per-word probability of typing a word and deleting it again.
    pub removal_rate: f64,
    /// Words in each half of the lexicon.
    pub lexicon_size: u32,
    pub word_zipf_exponent: f64,
}

fn default_words(m: Motive) -> MeanSd {
    match m {
        Motive::Messaging => ms(12.43, 18.80),
        Motive::Posting => ms(12.84, 19.00),
        Motive::Commenting => ms(12.65, 20.28),
        Motive::Search => ms(2.30, 6.80),
        Motive::DataInput => ms(2.73, 9.29),
        Motive::Other => ms(5.32, 9.42),
        _ => ms(5.0, 9.0),
    }
}

fn default_match(m: Motive) -> f64 {
    match m {
        Motive::Messaging => 0.5064,
        Motive::Posting => 0.3882,
        Motive::Commenting => 0.4178,
        Motive::Search => 0.1302,
        Motive::DataInput => 0.25,
        Motive::Other => 0.35,
        _ => 0.30,
    }
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            seed: 42,
            participants: 150,
            days: 32,
            inputs_per_participant_per_day: ms(23.40, 28.23),
            motive_mix: [
                (Motive::Messaging, 0.440),
                (Motive::Search, 0.338),
                (Motive::DataInput, 0.122),
                (Motive::Ambiguous, 0.049),
                (Motive::Commenting, 0.032),
                (Motive::Posting, 0.010),
                (Motive::Other, 0.009),
            ]
            .into(),
            prompt_availability: 0.595,
            label_coverage: 0.884,
            words_per_input: Motive::CODING.iter().map(|&m| (m, default_words(m))).collect(),
            match_probability: Motive::CODING.iter().map(|&m| (m, default_match(m))).collect(),
            prompt_vocabulary: PromptVocabulary::default(),
            single_participant_prompt_rate: 0.02,
            change_rate: 0.14,
            removal_rate: 0.16,
            lexicon_size: 400,
            word_zipf_exponent: 1.0,
        }
    }
}

fn check_prob(field: &str, p: f64) -> Result<(), InvalidSpec> {
    if !(0.0..=1.0).contains(&p) || p.is_nan() {
        return Err(invalid(field, format!("probability {p} outside [0, 1]")));
    }
    Ok(())
}

impl CorpusSpec {
    pub fn from_toml(text: &str) -> Result<Self, ParseError> {
        toml::from_str(text).map_err(|e| ParseError::line(0, e.to_string()))
    }

    pub fn words_for(&self, m: Motive) -> MeanSd {
        self.words_per_input.get(&m).copied().unwrap_or_else(|| default_words(m))
    }

    pub fn match_for(&self, m: Motive) -> f64 {
        self.match_probability.get(&m).copied().unwrap_or_else(|| default_match(m))
    }

    pub fn mix_for(&self, m: Motive) -> f64 {
        self.motive_mix.get(&m).copied().unwrap_or(0.0)
    }

    pub fn validate(&self) -> Result<(), InvalidSpec> {
        if self.participants < 1 {
            return Err(invalid("participants", "must be at least 1"));
        }
        if self.days < 1 {
            return Err(invalid("days", "must be at least 1"));
        }
        if self.lexicon_size < 1 {
            return Err(invalid("lexicon_size", "must be at least 1"));
        }
        let v = &self.prompt_vocabulary;
        if v.mapped < 1 || v.residual < 1 {
            return Err(invalid("prompt_vocabulary", "sizes must be at least 1"));
        }
        if !(v.zipf_exponent >= 0.0 && v.zipf_exponent.is_finite()) {
            return Err(invalid("prompt_vocabulary.zipf_exponent", "must be finite and non-negative"));
        }
        if !(self.word_zipf_exponent >= 0.0 && self.word_zipf_exponent.is_finite()) {
            return Err(invalid("word_zipf_exponent", "must be finite and non-negative"));
        }
        for maps in [
            self.motive_mix.keys().collect::<Vec<_>>(),
            self.words_per_input.keys().collect(),
            self.match_probability.keys().collect(),
        ] {
            if let Some(m) = maps.into_iter().find(|m| !m.is_label()) {
                return Err(invalid("motive", format!("{m} is not a coding motive")));
            }
        }
        let mut total = 0.0;
        for (m, p) in &self.motive_mix {
            check_prob(&format!("motive_mix.{m}"), *p)?;
            total += p;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(invalid("motive_mix", format!("shares sum to {total}, not 1")));
        }
        for (m, p) in &self.match_probability {
            check_prob(&format!("match_probability.{m}"), *p)?;
        }
        check_prob("prompt_availability", self.prompt_availability)?;
        check_prob("label_coverage", self.label_coverage)?;
        check_prob("single_participant_prompt_rate", self.single_participant_prompt_rate)?;
        check_prob("change_rate", self.change_rate)?;
        check_prob("removal_rate", self.removal_rate)?;
        if self.change_rate + self.removal_rate >= 1.0 {
            return Err(invalid("change_rate", "change_rate + removal_rate must stay below 1"));
        }
        if self.single_participant_prompt_rate > 1.0 - self.label_coverage + 1e-12 {
            return Err(invalid(
                "single_participant_prompt_rate",
                "cannot exceed the uncovered share 1 - label_coverage",
            ));
        }
        let d = self.inputs_per_participant_per_day;
        NegBinTable::new(d.mean, d.sd).map_err(|r| invalid("inputs_per_participant_per_day", r))?;
        for m in Motive::CODING {
            let w = self.words_for(m);
            if w.mean < 1.0 {
                return Err(invalid(format!("words_per_input.{m}"), "mean must be at least 1"));
            }
            NegBinTable::new(w.mean - 1.0, w.sd).map_err(|r| invalid(format!("words_per_input.{m}"), r))?;
        }
        Ok(())
    }
}

/// Inverse-CDF table of a negative binomial with the given mean and SD.
#[derive(Debug, Clone)]
struct NegBinTable {
    cdf: Vec<f64>,
}

impl NegBinTable {
    fn new(mean: f64, sd: f64) -> Result<Self, String> {
        if !(mean.is_finite() && sd.is_finite()) || mean < 0.0 || sd < 0.0 {
            return Err("mean and sd must be finite and non-negative".into());
        }
        let var = sd * sd;
        if mean == 0.0 {
            return if var == 0.0 {
                Ok(NegBinTable { cdf: vec![1.0] })
            } else {
                Err("a zero mean requires a zero sd".into())
            };
        }
        if var <= mean {
            return Err(format!("variance {var} must exceed the count mean {mean}"));
        }
        let p = mean / var;
        let r = mean * mean / (var - mean);
        let mut pk = (r * p.ln()).exp();
        let mut acc = pk;
        let mut cdf = vec![acc];
        let mut k = 0.0;
        while acc < 1.0 - 1e-13 && cdf.len() < 1_000_000 {
            pk *= (k + r) / (k + 1.0) * (1.0 - p);
            k += 1.0;
            acc += pk;
            cdf.push(acc);
        }
        Ok(NegBinTable { cdf })
    }

    fn quantile(&self, u: f64) -> u64 {
        let k = self.cdf.partition_point(|&c| c <= u);
        k.min(self.cdf.len() - 1) as u64
    }
}

const GOLDEN: f64 = 0.618_033_988_749_894_9;

/// Additive-recurrence low-discrepancy sequence on [0, 1).
#[derive(Debug, Clone)]
struct Stratified {
    offset: f64,
    k: u64,
}

impl Stratified {
    fn next(&mut self) -> f64 {
        let u = (self.offset + self.k as f64 * GOLDEN).fract();
        self.k += 1;
        u
    }
}

/// Zipf-distributed ranks over `0..n`.
#[derive(Debug, Clone, Copy)]
pub struct ZipfSampler {
    dist: Zipf<f64>,
    n: usize,
}

impl ZipfSampler {
    pub fn new(n: usize, exponent: f64) -> Self {
        let dist = Zipf::new(n as f64, exponent).expect("validated size and exponent");
        ZipfSampler { dist, n }
    }

    /// 0-based rank.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        (self.dist.sample(rng) as usize).clamp(1, self.n) - 1
    }
}

/// Probability mass of the top `k` ranks of Zipf(n, s).
pub fn zipf_top_share(k: usize, n: usize, s: f64) -> f64 {
    let h = |m: usize| (1..=m).map(|i| (i as f64).powf(-s)).sum::<f64>();
    h(k.min(n)) / h(n)
}

const SYLLABLES: [&str; 10] = ["ka", "lo", "mi", "ne", "ru", "ti", "vo", "ze", "pa", "di"];
const MATCH_ONSETS: [char; 4] = ['b', 'd', 'f', 'g'];
const OTHER_ONSETS: [char; 4] = ['k', 'p', 't', 'v'];
const VOWELS: [char; 5] = ['a', 'e', 'i', 'o', 'u'];
const CATEGORIES: [&str; 8] = ["social", "affect", "posemo", "negemo", "cogproc", "percept", "bio", "function"];

/// Syllable word encoding `i` in base 10, at least `min` syllables. Such
/// words never contain a keyword stem.
fn syllable_word(mut i: usize, min: usize) -> String {
    let mut parts = Vec::new();
    loop {
        parts.push(SYLLABLES[i % 10]);
        i /= 10;
        if i == 0 && parts.len() >= min {
            break;
        }
    }
    parts.concat()
}

fn capitalize(w: &str) -> String {
    let mut c = w.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn lexicon_word(onsets: &[char; 4], i: usize) -> String {
    let mut w = String::new();
    w.push(onsets[i % 4]);
    w.push(VOWELS[(i / 4) % 5]);
    w.push_str(&syllable_word(i / 20, 1));
    w
}

#[derive(Debug, Clone)]
struct Lexicon {
    matching: Vec<String>,
    other: Vec<String>,
}

impl Lexicon {
    fn new(size: usize) -> Self {
        Lexicon {
            matching: (0..size).map(|i| lexicon_word(&MATCH_ONSETS, i)).collect(),
            other: (0..size).map(|i| lexicon_word(&OTHER_ONSETS, i)).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PromptSource {
    Mapped(Motive),
    Residual,
    SingleParticipant,
}

#[derive(Debug, Clone)]
struct PromptEntry {
    display: String,
    normalized: String,
}

fn seeds(m: Motive) -> (&'static [&'static str], &'static [&'static str]) {
    match m {
        Motive::Messaging => (
            &["Type a message", "Enter your message here", "Message", "Nachricht schreiben"],
            &["Message {W}", "Nachricht an {W}", "Send a message to {w}"],
        ),
        Motive::Posting => {
            (&["Write a caption", "What are you doing?", "What's on your mind?"], &["Share your {w}", "Post to {W}"])
        }
        Motive::Commenting => (
            &["Comment ...", "Tweet your reply", "Add a comment..."],
            &["Comment on {w}", "Kommentar zu {W}", "Reply to this {w}"],
        ),
        Motive::Search => {
            (&["Search apps, web, and more...", "Search photos...", "Suchen"], &["Search {w}", "{W} durchsuchen"])
        }
        Motive::DataInput => (
            &["email address", "Stop, address, ...", "Spanish translation", "Password"],
            &["{W} number", "Enter {w} code", "Your {w}"],
        ),
        Motive::Other => (&["write a note...", "How are you feeling right now?"], &["Note {w}", "Question {w}"]),
        _ => (&["0", "???"], &["{w}{d}", "{w} {d}{d}"]),
    }
}

fn fill_template(t: &str, i: usize) -> String {
    let w = syllable_word(i, 2);
    t.replace("{W}", &capitalize(&w)).replace("{w}", &w).replacen("{d}", &(i % 10).to_string(), 1).replacen(
        "{d}",
        &((i / 10) % 10).to_string(),
        1,
    )
}

/// Mapped prompt vocabulary of one motive, Table 1 style exemplars first.
fn motive_prompts(m: Motive, size: usize, used: &mut HashSet<String>) -> Vec<PromptEntry> {
    let (fixed, templates) = seeds(m);
    let mut out = Vec::new();
    let mut push = |display: String, out: &mut Vec<PromptEntry>| {
        let normalized = normalize_prompt(&display);
        if used.insert(normalized.clone()) {
            out.push(PromptEntry { display, normalized });
        }
    };
    for s in fixed {
        push(s.to_string(), &mut out);
    }
    let mut i = 0;
    while out.len() < size.max(fixed.len()) {
        let t = templates[i % templates.len()];
        push(fill_template(t, 100 + i / templates.len()), &mut out);
        i += 1;
    }
    out
}

struct Vocab {
    mapped: BTreeMap<Motive, (Vec<PromptEntry>, ZipfSampler)>,
    residual: Vec<PromptEntry>,
    residual_zipf: ZipfSampler,
}

fn build_vocab(spec: &CorpusSpec) -> Vocab {
    let mut used = HashSet::new();
    let mut mapped = BTreeMap::new();
    for m in Motive::CODING {
        let share = spec.mix_for(m);
        if share <= 0.0 {
            continue;
        }
        let size = ((spec.prompt_vocabulary.mapped as f64 * share).round() as usize).max(4);
        let entries = motive_prompts(m, size, &mut used);
        let zipf = ZipfSampler::new(entries.len(), spec.prompt_vocabulary.zipf_exponent);
        mapped.insert(m, (entries, zipf));
    }
    let mut residual = Vec::new();
    let mut i = 0;
    while residual.len() < spec.prompt_vocabulary.residual as usize {
        let words = 2 + i % 2;
        let display = (0..words).map(|j| syllable_word(i * 3 + j + 1000, 2)).collect::<Vec<_>>().join(" ");
        let normalized = normalize_prompt(&display);
        if used.insert(normalized.clone()) {
            residual.push(PromptEntry { display, normalized });
        }
        i += 1;
    }
    let residual_zipf = ZipfSampler::new(residual.len(), spec.prompt_vocabulary.zipf_exponent);
    Vocab { mapped, residual, residual_zipf }
}

/// App catalog: id, category.
const APPS: [(&str, &str); 16] = [
    ("chat.alpha", "Communication"),
    ("chat.beta", "Communication"),
    ("sms.default", "Communication"),
    ("mail.client", "Communication"),
    ("social.photo", "Social Media"),
    ("social.micro", "Social Media"),
    ("social.book", "Social Media"),
    ("system.launcher", "System"),
    ("system.browser", "System"),
    ("system.settings", "System"),
    ("system.gallery", "System"),
    ("notes.pad", "Productivity"),
    ("forms.survey", "Productivity"),
    ("transit.planner", "Travel"),
    ("lang.tutor", "Education"),
    ("shop.market", "Shopping"),
];

fn app_weights(m: Motive) -> &'static [(&'static str, f64)] {
    match m {
        Motive::Messaging => &[
            ("chat.alpha", 0.45),
            ("chat.beta", 0.25),
            ("sms.default", 0.10),
            ("mail.client", 0.05),
            ("social.photo", 0.08),
            ("social.book", 0.07),
        ],
        Motive::Posting => &[("social.photo", 0.5), ("social.book", 0.3), ("social.micro", 0.2)],
        Motive::Commenting => &[("social.book", 0.4), ("social.micro", 0.35), ("social.photo", 0.25)],
        Motive::Search => &[
            ("system.launcher", 0.4),
            ("system.browser", 0.3),
            ("system.gallery", 0.05),
            ("social.photo", 0.1),
            ("shop.market", 0.1),
            ("chat.alpha", 0.05),
        ],
        Motive::DataInput => &[
            ("system.browser", 0.3),
            ("transit.planner", 0.15),
            ("lang.tutor", 0.15),
            ("shop.market", 0.15),
            ("system.settings", 0.15),
            ("mail.client", 0.1),
        ],
        Motive::Other => &[("notes.pad", 0.5), ("forms.survey", 0.3), ("lang.tutor", 0.2)],
        _ => &[
            ("chat.alpha", 0.3),
            ("system.browser", 0.2),
            ("social.photo", 0.2),
            ("system.settings", 0.15),
            ("notes.pad", 0.15),
        ],
    }
}

fn field_kind(m: Motive) -> &'static str {
    match m {
        Motive::Messaging => "compose",
        Motive::Posting => "caption",
        Motive::Commenting => "comment_box",
        Motive::Search => "search_box",
        Motive::DataInput => "form_field",
        Motive::Other => "note",
        _ => "edit_text",
    }
}

fn pick_weighted<T>(items: &[(T, f64)], u: f64) -> &T {
    let total: f64 = items.iter().map(|(_, w)| w).sum();
    let mut acc = 0.0;
    for (item, w) in items {
        acc += w / total;
        if u < acc {
            return item;
        }
    }
    &items[items.len() - 1].0
}

/// Dictionary, whitelist, mapping and app categories matching a spec.
#[derive(Debug, Clone)]
pub struct Fixtures {
    pub dictionary: Dictionary,
    pub whitelist: Whitelist,
    pub mapping: MotiveMapping,
    pub app_categories: AppCategoryMap,
}

/// Number of lexicon words per half placed on the whitelist.
const WHITELIST_PER_HALF: usize = 5;

pub fn fixtures(spec: &CorpusSpec) -> Fixtures {
    let categories: BTreeMap<u32, String> =
        CATEGORIES.iter().enumerate().map(|(i, c)| (i as u32 + 1, c.to_string())).collect();
    let mut dictionary = Dictionary::new(categories);
    for (o, onset) in MATCH_ONSETS.iter().enumerate() {
        for (v, vowel) in VOWELS.iter().enumerate() {
            let j = o * VOWELS.len() + v;
            let mut ids = vec![1 + (j % 8) as u32];
            if j.is_multiple_of(3) {
                ids.push(1 + ((j * 3 + 1) % 8) as u32);
            }
            dictionary.add_entry(&format!("{onset}{vowel}*"), ids).expect("category ids exist");
        }
    }
    let lex = Lexicon::new(spec.lexicon_size as usize);
    let whitelist = Whitelist::from_words(
        lex.matching.iter().take(WHITELIST_PER_HALF).chain(lex.other.iter().take(WHITELIST_PER_HALF)),
    );
    let rules = KeywordRuleSet::default();
    let mut mapping = MotiveMapping::new();
    for (m, (entries, _)) in build_vocab(spec).mapped {
        for e in entries {
            if rules.first_match(&e.normalized).is_none() {
                mapping
                    .insert(
                        &e.normalized,
                        MappingEntry { motive: m, provenance: Provenance::ManualCoded, coder: None, round: None },
                    )
                    .expect("coding motive");
            }
        }
    }
    let mut app_categories = AppCategoryMap::new();
    for (app, cat) in APPS {
        app_categories.insert(app, cat).expect("catalog has unique ids");
    }
    Fixtures { dictionary, whitelist, mapping, app_categories }
}

/// Ground truth for one generated text input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub session_id: String,
    pub participant_id: String,
    pub app_id: String,
    /// Motive the input was generated for, observable or not.
    pub latent_motive: Motive,
    /// Label the pipeline must assign: the latent motive for mapped prompts
    /// seen by at least two participants, `Unlabeled` for other prompts,
    /// `NoPrompt` without prompt.
    pub motive: Motive,
    pub prompt: Option<String>,
    pub added: u64,
    pub changed: u64,
    pub removed: u64,
    pub total: u64,
    pub matched: u64,
}

impl TruthRecord {
    pub const TSV_HEADER: &'static str =
        "# sid\tpid\tapp\tlatent\tmotive\tadded\tchanged\tremoved\ttotal\tmatched\tprompt";

    pub fn to_tsv_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.session_id,
            self.participant_id,
            self.app_id,
            self.latent_motive,
            self.motive,
            self.added,
            self.changed,
            self.removed,
            self.total,
            self.matched,
            self.prompt.as_deref().unwrap_or("")
        )
    }

    pub fn parse_tsv_line(line: &str, line_no: usize) -> Result<Self, ParseError> {
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 11 {
            return Err(ParseError::line(line_no, format!("expected 11 columns, got {}", cols.len())));
        }
        let num = |i: usize| -> Result<u64, ParseError> {
            cols[i].parse().map_err(|_| ParseError::line(line_no, format!("bad count {:?}", cols[i])))
        };
        Ok(TruthRecord {
            session_id: cols[0].to_string(),
            participant_id: cols[1].to_string(),
            app_id: cols[2].to_string(),
            latent_motive: cols[3].parse()?,
            motive: cols[4].parse()?,
            added: num(5)?,
            changed: num(6)?,
            removed: num(7)?,
            total: num(8)?,
            matched: num(9)?,
            prompt: (!cols[10].is_empty()).then(|| cols[10].to_string()),
        })
    }
}

pub fn truth_to_tsv(truth: &[TruthRecord]) -> String {
    let mut s = String::from(TruthRecord::TSV_HEADER);
    s.push('\n');
    for t in truth {
        s.push_str(&t.to_tsv_line());
        s.push('\n');
    }
    s
}

pub fn parse_truth_tsv(text: &str) -> Result<Vec<TruthRecord>, ParseError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|(i, l)| TruthRecord::parse_tsv_line(l, i + 1))
        .collect()
}

/// A text input decided during planning.
#[derive(Debug, Clone)]
struct InputPlan {
    latent: Motive,
    app: &'static str,
    prompt: Option<(PromptSource, String)>,
    words: u64,
    start_ts: Timestamp,
    field_seq: u32,
}

const DAY_MS: u64 = 86_400_000;
const BASE_TS: u64 = 1_600_000_000_000;
/// Upper bound of one event's inter-keystroke gap.
const MAX_EVENT_GAP_MS: u64 = 700;
/// Upper bound of events one planned word can cause.
const MAX_EVENTS_PER_WORD: u64 = 8;

fn participant_id(p: u32) -> String {
    format!("p{p:04}")
}

fn single_participant_prompt(p: u32, variant: u32) -> String {
    format!("Chat with {}", capitalize(&syllable_word(p as usize * 4 + variant as usize, 4)))
}

/// Plans every input of every participant from the planning stream.
fn plan(spec: &CorpusSpec, vocab: &Vocab) -> Vec<Vec<InputPlan>> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let daily = NegBinTable::new(spec.inputs_per_participant_per_day.mean, spec.inputs_per_participant_per_day.sd)
        .expect("validated");
    let mix: Vec<(Motive, f64)> =
        Motive::CODING.iter().map(|&m| (m, spec.mix_for(m))).filter(|(_, p)| *p > 0.0).collect();
    let tables: HashMap<Motive, NegBinTable> = mix
        .iter()
        .map(|&(m, _)| {
            let w = spec.words_for(m);
            (m, NegBinTable::new(w.mean - 1.0, w.sd).expect("validated"))
        })
        .collect();
    // one low-discrepancy stream per (motive, mapped) cell
    let mut strata: HashMap<(Motive, bool), Stratified> = HashMap::new();
    for &(m, _) in &mix {
        for mapped in [false, true] {
            strata.insert((m, mapped), Stratified { offset: rng.random(), k: 0 });
        }
    }
    let uncovered = 1.0 - spec.label_coverage;
    let single_share = if uncovered > 0.0 { spec.single_participant_prompt_rate / uncovered } else { 0.0 };

    let mut all = Vec::with_capacity(spec.participants as usize);
    for p in 0..spec.participants {
        let mut inputs = Vec::new();
        let mut t = BASE_TS;
        let mut field_seq = 0u32;
        for d in 0..spec.days as u64 {
            let n = daily.quantile(rng.random());
            t = t.max(BASE_TS + d * DAY_MS + 7 * 3_600_000 + rng.random_range(0..3_600_000));
            let spacing = (16 * 3_600_000) / (n + 1);
            for _ in 0..n {
                let latent = *pick_weighted(&mix, rng.random());
                let app = *pick_weighted(app_weights(latent), rng.random());
                let prompt = if rng.random::<f64>() < spec.prompt_availability {
                    if rng.random::<f64>() < spec.label_coverage {
                        let (entries, zipf) = &vocab.mapped[&latent];
                        let e = &entries[zipf.sample(&mut rng)];
                        Some((PromptSource::Mapped(latent), e.display.clone()))
                    } else if rng.random::<f64>() < single_share {
                        let variant = rng.random_range(0..4);
                        Some((PromptSource::SingleParticipant, single_participant_prompt(p, variant)))
                    } else {
                        let e = &vocab.residual[vocab.residual_zipf.sample(&mut rng)];
                        Some((PromptSource::Residual, e.display.clone()))
                    }
                } else {
                    None
                };
                let mapped = matches!(prompt, Some((PromptSource::Mapped(_), _)));
                let u = strata.get_mut(&(latent, mapped)).expect("cell exists").next();
                let words = 1 + tables[&latent].quantile(u);
                inputs.push(InputPlan { latent, app, prompt, words, start_ts: t, field_seq });
                field_seq += 1;
                let longest = (words + 2) * MAX_EVENTS_PER_WORD * MAX_EVENT_GAP_MS;
                t += longest + 31_000 + rng.random_range(0..spacing.max(1));
            }
        }
        all.push(inputs);
    }
    all
}

const TERMINATORS: [(&str, f64); 5] = [(" ", 0.85), (", ", 0.06), (". ", 0.05), ("! ", 0.02), (" 🙂 ", 0.02)];

struct Renderer<'a> {
    spec: &'a CorpusSpec,
    lex: &'a Lexicon,
    word_zipf: ZipfSampler,
}

struct InputState {
    words: Vec<String>,
    seps: Vec<String>,
    events: Vec<(Timestamp, String)>,
    ts: Timestamp,
}

impl InputState {
    fn content(&self) -> String {
        let mut s = String::new();
        for (w, sep) in self.words.iter().zip(&self.seps) {
            s.push_str(w);
            s.push_str(sep);
        }
        s
    }

    fn emit(&mut self, rng: &mut ChaCha8Rng, content: String) {
        self.ts += rng.random_range(80..=MAX_EVENT_GAP_MS);
        self.events.push((self.ts, content));
    }
}

impl Renderer<'_> {
    /// A word for `motive` and whether the dictionary matches it.
    fn draw_word(&self, motive: Motive, rng: &mut ChaCha8Rng) -> (String, bool) {
        let matched = rng.random::<f64>() < self.spec.match_for(motive);
        let half = if matched { &self.lex.matching } else { &self.lex.other };
        let offset = Motive::CODING.iter().position(|m| *m == motive).unwrap_or(0) * 37;
        let idx = (self.word_zipf.sample(rng) + offset) % half.len();
        (half[idx].clone(), matched)
    }

    /// Types `word` onto `base` in one to three snapshots.
    fn type_word(&self, st: &mut InputState, rng: &mut ChaCha8Rng, base: &str, word: &str, sep: &str) {
        let chars: Vec<char> = word.chars().collect();
        let mut at = 0;
        while at < chars.len() {
            let step = if rng.random::<f64>() < 0.3 {
                chars.len() - at
            } else {
                rng.random_range(1..=4usize).min(chars.len() - at)
            };
            at += step;
            let mut s = base.to_string();
            s.extend(&chars[..at]);
            if at == chars.len() {
                s.push_str(sep);
            }
            st.emit(rng, s);
        }
    }

    /// Renders one input starting no earlier than `not_before`.
    fn render(
        &self,
        participant: &str,
        plan: &InputPlan,
        not_before: Timestamp,
        rng: &mut ChaCha8Rng,
    ) -> (Vec<FieldSnapshotEvent>, TruthRecord) {
        let m = plan.latent;
        let mut st =
            InputState { words: Vec::new(), seps: Vec::new(), events: Vec::new(), ts: plan.start_ts.max(not_before) };
        let (mut added, mut changed, mut removed, mut matched) = (0u64, 0u64, 0u64, 0u64);
        let mut budget = plan.words;
        while budget > 0 {
            let r: f64 = rng.random();
            let last = budget == 1;
            if !st.words.is_empty() && r < self.spec.change_rate {
                // replace the previous word in one step, as a suggestion would
                let old = st.words.last().expect("non-empty").to_lowercase();
                let (w, hit) = loop {
                    let (w, hit) = self.draw_word(m, rng);
                    if w != old {
                        break (w, hit);
                    }
                };
                *st.words.last_mut().expect("non-empty") = w;
                let content = st.content();
                st.emit(rng, content);
                changed += 1;
                matched += hit as u64;
            } else if !last && r < self.spec.change_rate + self.spec.removal_rate {
                let base = st.content();
                let (w, hit) = self.draw_word(m, rng);
                self.type_word(&mut st, rng, &base, &w, " ");
                // backspace it again
                let mut chars: Vec<char> = format!("{w} ").chars().collect();
                while !chars.is_empty() {
                    let cut = rng.random_range(1..=4usize).min(chars.len());
                    chars.truncate(chars.len() - cut);
                    let s: String = base.chars().chain(chars.iter().copied()).collect();
                    st.emit(rng, s);
                }
                added += 1;
                removed += 1;
                matched += hit as u64;
            } else {
                let base = st.content();
                let (mut w, hit) = self.draw_word(m, rng);
                if st.words.is_empty() && rng.random::<f64>() < 0.3 {
                    w = capitalize(&w);
                }
                let sep =
                    if last && rng.random::<f64>() < 0.5 { "" } else { pick_weighted(&TERMINATORS, rng.random()) };
                self.type_word(&mut st, rng, &base, &w, sep);
                st.words.push(w);
                st.seps.push(sep.to_string());
                added += 1;
                matched += hit as u64;
            }
            budget -= 1;
        }

        let field = format!("{}#{}", field_kind(m), plan.field_seq);
        let first_ts = st.events.first().map(|e| e.0).unwrap_or(plan.start_ts);
        let events = st
            .events
            .into_iter()
            .map(|(ts, content)| FieldSnapshotEvent {
                ts,
                participant_id: participant.to_string(),
                app_id: plan.app.to_string(),
                field_id: field.clone(),
                prompt: plan.prompt.as_ref().map(|(_, p)| p.clone()),
                content,
            })
            .collect();
        let truth = TruthRecord {
            session_id: session_id(participant, first_ts, &field),
            participant_id: participant.to_string(),
            app_id: plan.app.to_string(),
            latent_motive: m,
            motive: Motive::NoPrompt,
            prompt: plan.prompt.as_ref().map(|(_, p)| normalize_prompt(p)),
            added,
            changed,
            removed,
            total: added + changed,
            matched,
        };
        (events, truth)
    }
}

/// A generated corpus: events sorted by participant then time, one truth
/// record per text input in the same order, and the fixtures.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub events: Vec<FieldSnapshotEvent>,
    pub truth: Vec<TruthRecord>,
    pub fixtures: Fixtures,
}

pub fn generate(spec: &CorpusSpec, exec: Exec) -> Result<Corpus, InvalidSpec> {
    spec.validate()?;
    let vocab = build_vocab(spec);
    let plans = plan(spec, &vocab);

    // prompts seen by a single participant are redacted downstream
    let mut seen_by: HashMap<String, HashSet<u32>> = HashMap::new();
    for (p, inputs) in plans.iter().enumerate() {
        for i in inputs {
            if let Some((_, text)) = &i.prompt {
                seen_by.entry(normalize_prompt(text)).or_default().insert(p as u32);
            }
        }
    }

    let lex = Lexicon::new(spec.lexicon_size as usize);
    let renderer =
        Renderer { spec, lex: &lex, word_zipf: ZipfSampler::new(spec.lexicon_size as usize, spec.word_zipf_exponent) };
    let rendered = exec.map_range(plans.len(), |p| {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(p as u64 + 1);
        let pid = participant_id(p as u32);
        let mut events = Vec::new();
        let mut truth = Vec::new();
        let mut floor = 0;
        for input in &plans[p] {
            let (ev, mut t) = renderer.render(&pid, input, floor, &mut rng);
            floor = ev.last().map_or(floor, |e: &FieldSnapshotEvent| e.ts + 31_000);
            t.motive = match &input.prompt {
                None => Motive::NoPrompt,
                Some((PromptSource::Mapped(m), text)) if seen_by[&normalize_prompt(text)].len() >= 2 => *m,
                Some(_) => Motive::Unlabeled,
            };
            events.extend(ev);
            truth.push(t);
        }
        (events, truth)
    });

    let mut events = Vec::new();
    let mut truth = Vec::new();
    for (e, t) in rendered {
        events.extend(e);
        truth.extend(t);
    }
    Ok(Corpus { events, truth, fixtures: fixtures(spec) })
}

/// Human-readable one-line summary of a corpus.
pub fn summary(corpus: &Corpus) -> String {
    let mut counts: BTreeMap<Motive, u64> = BTreeMap::new();
    for t in &corpus.truth {
        *counts.entry(t.motive).or_default() += 1;
    }
    let mut s = format!("{} events, {} inputs", corpus.events.len(), corpus.truth.len());
    for (m, c) in counts {
        let _ = write!(s, ", {m} {c}");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::abstractor::{process_stream, AbstractorConfig};
    use crate::classifier::{classify_records, prefilter_single_participant};
    use crate::sessionizer::build_records;

    fn small() -> CorpusSpec {
        CorpusSpec { participants: 6, days: 2, ..CorpusSpec::default() }
    }

    #[test]
    fn default_spec_is_valid_and_round_trips_toml() {
        let spec = CorpusSpec::default();
        spec.validate().unwrap();
        let text = toml::to_string(&spec).unwrap();
        assert_eq!(CorpusSpec::from_toml(&text).unwrap(), spec);
        let partial = CorpusSpec::from_toml("seed = 7\n[motive_mix]\nMessaging = 1.0\n").unwrap();
        assert_eq!(partial.seed, 7);
        assert_eq!(partial.mix_for(Motive::Search), 0.0);
        partial.validate().unwrap();
    }

    #[test]
    fn invalid_specs_name_the_field() {
        let mut s = CorpusSpec::default();
        s.motive_mix.insert(Motive::Messaging, 0.5);
        assert_eq!(s.validate().unwrap_err().field, "motive_mix");
        let s = CorpusSpec { prompt_availability: 1.5, ..CorpusSpec::default() };
        assert_eq!(s.validate().unwrap_err().field, "prompt_availability");
        let s = CorpusSpec { participants: 0, ..CorpusSpec::default() };
        assert_eq!(s.validate().unwrap_err().field, "participants");
        let mut s = CorpusSpec::default();
        s.words_per_input.insert(Motive::Search, ms(3.0, 0.5));
        assert_eq!(s.validate().unwrap_err().field, "words_per_input.Search");
        assert!(CorpusSpec::from_toml("bogus = 1").is_err());
    }

    #[test]
    fn negative_binomial_table_moments() {
        let t = NegBinTable::new(11.43, 18.80).unwrap();
        let n = t.cdf.len();
        let pmf: Vec<f64> = (0..n).map(|k| t.cdf[k] - if k == 0 { 0.0 } else { t.cdf[k - 1] }).collect();
        let mean: f64 = pmf.iter().enumerate().map(|(k, p)| k as f64 * p).sum();
        let var: f64 = pmf.iter().enumerate().map(|(k, p)| (k as f64 - mean).powi(2) * p).sum();
        assert!((mean - 11.43).abs() < 1e-6);
        assert!((var.sqrt() - 18.80).abs() < 1e-5);
        assert_eq!(t.quantile(0.0), 0);
        assert!(NegBinTable::new(2.0, 1.0).is_err());
    }

    #[test]
    fn syllable_words_avoid_keyword_stems() {
        let rules = KeywordRuleSet::default();
        for i in 0..20_000 {
            let w = syllable_word(i, 2);
            assert!(rules.first_match(&w).is_none(), "{w}");
        }
    }

    #[test]
    fn lexicon_halves_split_on_the_dictionary() {
        let spec = CorpusSpec::default();
        let fx = fixtures(&spec);
        let lex = Lexicon::new(spec.lexicon_size as usize);
        assert!(lex.matching.iter().all(|w| !fx.dictionary.lookup_folded(w).is_empty()));
        assert!(lex.other.iter().all(|w| fx.dictionary.lookup_folded(w).is_empty()));
        let unique: HashSet<&String> = lex.matching.iter().chain(&lex.other).collect();
        assert_eq!(unique.len(), 2 * lex.matching.len());
    }

    #[test]
    fn mapped_prompts_classify_to_their_motive() {
        let spec = CorpusSpec::default();
        let fx = fixtures(&spec);
        let rules = KeywordRuleSet::default();
        let vocab = build_vocab(&spec);
        for (m, (entries, _)) in &vocab.mapped {
            for e in entries {
                let got = fx.mapping.get(&e.normalized).map(|x| x.motive).or_else(|| rules.first_match(&e.normalized));
                assert_eq!(got, Some(*m), "{}", e.display);
            }
        }
        for e in &vocab.residual {
            assert!(fx.mapping.get(&e.normalized).is_none());
            assert!(rules.first_match(&e.normalized).is_none());
        }
        assert!(rules.first_match(&normalize_prompt(&single_participant_prompt(3, 1))).is_none());
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let a = generate(&small(), Exec::Parallel).unwrap();
        let b = generate(&small(), Exec::Sequential).unwrap();
        assert_eq!(a.events, b.events);
        assert_eq!(a.truth, b.truth);
        let c = generate(&CorpusSpec { seed: 43, ..small() }, Exec::Parallel).unwrap();
        assert_ne!(a.events, c.events);
    }

    #[test]
    fn single_motive_mix() {
        let spec = CorpusSpec { motive_mix: [(Motive::Messaging, 1.0)].into(), ..small() };
        let c = generate(&spec, Exec::Parallel).unwrap();
        assert!(!c.truth.is_empty());
        assert!(c.truth.iter().all(|t| t.latent_motive == Motive::Messaging));
        assert!(c.truth.iter().all(|t| !t.motive.is_label() || t.motive == Motive::Messaging));
    }

    #[test]
    fn pipeline_recovers_ground_truth() {
        let c = generate(&small(), Exec::Parallel).unwrap();
        let fx = &c.fixtures;
        let out = process_stream(&c.events, &fx.dictionary, &fx.whitelist, AbstractorConfig::default()).unwrap();
        let (mut records, audit) = build_records(&out.words, &out.sessions, &fx.app_categories);
        assert_eq!(audit.empty_sessions + audit.zero_word_sessions, 0);
        prefilter_single_participant(&mut records);
        classify_records(&mut records, &fx.mapping, &KeywordRuleSet::default(), Exec::Sequential);
        assert_eq!(records.len(), c.truth.len());
        for (r, t) in records.iter().zip(&c.truth) {
            assert_eq!(r.session_id, t.session_id);
            assert_eq!(r.motive, t.motive, "{t:?}");
            assert_eq!(
                (r.words_added, r.words_changed, r.words_removed, r.total_words, r.matched_words),
                (t.added, t.changed, t.removed, t.total, t.matched),
                "{t:?}"
            );
        }
    }

    #[test]
    fn truth_tsv_round_trip() {
        let c = generate(&small(), Exec::Parallel).unwrap();
        let text = truth_to_tsv(&c.truth);
        assert_eq!(parse_truth_tsv(&text).unwrap(), c.truth);
    }

    #[test]
    fn zipf_sampler_ranks() {
        let z = ZipfSampler::new(10, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut counts = [0u32; 10];
        for _ in 0..20_000 {
            counts[z.sample(&mut rng)] += 1;
        }
        assert!(counts[0] > counts[1] && counts[1] > counts[9]);
        assert!((zipf_top_share(1, 1, 1.0) - 1.0).abs() < 1e-12);
    }
}
