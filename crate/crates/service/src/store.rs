//! Persistent code store: an append-only JSONL log replayed on start, a
//! single writer, and immutable snapshots for readers.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use arc_swap::ArcSwap;
use motivelog::classifier::{MappingEntry, Provenance};
use motivelog::model::normalize_prompt;
use motivelog::{Motive, MotiveMapping};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const LOG_FILE: &str = "codes.log";
pub const SNAPSHOT_FILE: &str = "snapshot.tsv";
pub const PROMPTS_FILE: &str = "prompts.tsv";
pub const SETTINGS_FILE: &str = "store.json";

/// Round of the resolution step.
pub const RESOLUTION_ROUND: u32 = 3;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("invalid rater id {0:?}")]
    InvalidRater(String),
    #[error("{0:?} is not a coding motive")]
    InvalidMotive(String),
    #[error("unknown prompt {0:?}")]
    UnknownPrompt(String),
    #[error("rater {rater:?} already coded {prompt:?}; pass amend=true to replace")]
    Duplicate { rater: String, prompt: String },
    #[error("no prompts: supply a prompt list for a new store")]
    NoPrompts,
    #[error("{file} line {line}: {msg}")]
    Corrupt { file: String, line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreSettings {
    /// Size of the randomly drawn calibration round.
    pub round_size: usize,
    pub seed: u64,
}

impl Default for StoreSettings {
    fn default() -> Self {
        StoreSettings { round_size: 50, seed: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum LogRecord {
    Code { ts: u64, rater: String, prompt: String, motive: Motive, version: u32 },
    Resolve { ts: u64, resolver: String, prompt: String, motive: Motive },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CodeRecord {
    pub rater: String,
    pub prompt: String,
    pub motive: Motive,
    pub version: u32,
    pub round: u32,
    pub ts: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Resolution {
    pub resolver: String,
    pub prompt: String,
    pub motive: Motive,
    pub round: u32,
    pub ts: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct QueueItem {
    pub prompt: String,
    pub frequency: u64,
    pub round: u32,
    /// Prompts still uncoded by this rater, this one included.
    pub remaining: usize,
}

/// Immutable view of everything coded so far.
#[derive(Debug, Clone, Default)]
pub struct State {
    /// Prompts with frequencies, most frequent first.
    prompts: Vec<(String, u64)>,
    index: HashMap<String, usize>,
    calibration: HashSet<usize>,
    /// Queue order: calibration prompts first, then the rest.
    queue: Vec<usize>,
    /// Latest code per rater and prompt.
    codes: BTreeMap<String, BTreeMap<String, CodeRecord>>,
    resolutions: BTreeMap<String, Resolution>,
    log_entries: u64,
}

fn valid_rater(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

impl State {
    fn new(mut prompts: Vec<(String, u64)>, settings: StoreSettings) -> Self {
        prompts.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let index = prompts.iter().enumerate().map(|(i, (p, _))| (p.clone(), i)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
        let n = prompts.len();
        let calibration: HashSet<usize> = sample(&mut rng, n, settings.round_size.min(n)).into_iter().collect();
        let queue =
            (0..n).filter(|i| calibration.contains(i)).chain((0..n).filter(|i| !calibration.contains(i))).collect();
        State { prompts, index, calibration, queue, ..Default::default() }
    }

    pub fn prompts(&self) -> &[(String, u64)] {
        &self.prompts
    }

    pub fn frequency(&self, prompt: &str) -> Option<u64> {
        self.index.get(prompt).map(|&i| self.prompts[i].1)
    }

    pub fn is_calibration(&self, prompt: &str) -> bool {
        self.index.get(prompt).is_some_and(|i| self.calibration.contains(i))
    }

    pub fn round_of(&self, prompt: &str) -> u32 {
        if self.is_calibration(prompt) {
            1
        } else {
            2
        }
    }

    pub fn raters(&self) -> impl Iterator<Item = &str> {
        self.codes.keys().map(String::as_str)
    }

    pub fn log_entries(&self) -> u64 {
        self.log_entries
    }

    /// Next prompt the rater has not coded.
    pub fn next_for(&self, rater: &str) -> Option<QueueItem> {
        let coded = self.codes.get(rater);
        let mut open = self.queue.iter().filter(|&&i| coded.is_none_or(|c| !c.contains_key(&self.prompts[i].0)));
        let first = *open.next()?;
        let (prompt, frequency) = self.prompts[first].clone();
        Some(QueueItem { round: self.round_of(&prompt), prompt, frequency, remaining: 1 + open.count() })
    }

    pub fn code_records(&self, rater: &str) -> impl Iterator<Item = &CodeRecord> {
        self.codes.get(rater).into_iter().flat_map(|m| m.values())
    }

    /// Latest code of every prompt the rater coded.
    pub fn codes_of(&self, rater: &str) -> BTreeMap<String, Motive> {
        self.code_records(rater).map(|c| (c.prompt.clone(), c.motive)).collect()
    }

    pub fn resolution(&self, prompt: &str) -> Option<&Resolution> {
        self.resolutions.get(prompt)
    }

    /// The rater's codes in mapping-file form.
    pub fn rater_mapping(&self, rater: &str) -> MotiveMapping {
        let mut m = MotiveMapping::new();
        for c in self.code_records(rater) {
            m.insert(
                &c.prompt,
                MappingEntry {
                    motive: c.motive,
                    provenance: Provenance::ManualCoded,
                    coder: Some(c.rater.clone()),
                    round: Some(c.round),
                },
            )
            .expect("stored motives are coding labels");
        }
        m
    }

    /// Final mapping: a resolution wins; otherwise a prompt enters when at
    /// least two raters coded it and their latest codes agree.
    pub fn export_mapping(&self) -> MotiveMapping {
        let mut by_prompt: BTreeMap<&str, Vec<&CodeRecord>> = BTreeMap::new();
        for codes in self.codes.values() {
            for c in codes.values() {
                by_prompt.entry(&c.prompt).or_default().push(c);
            }
        }
        let mut m = MotiveMapping::new();
        for (prompt, _) in &self.prompts {
            let entry = if let Some(r) = self.resolutions.get(prompt) {
                Some(MappingEntry {
                    motive: r.motive,
                    provenance: Provenance::ManualCoded,
                    coder: Some(r.resolver.clone()),
                    round: Some(r.round),
                })
            } else {
                by_prompt.get(prompt.as_str()).and_then(|cs| {
                    let agree = cs.len() >= 2 && cs.iter().all(|c| c.motive == cs[0].motive);
                    agree.then(|| MappingEntry {
                        motive: cs[0].motive,
                        provenance: Provenance::ManualCoded,
                        coder: Some(cs.iter().map(|c| c.rater.as_str()).collect::<Vec<_>>().join("+")),
                        round: cs.iter().map(|c| c.round).max(),
                    })
                })
            };
            if let Some(e) = entry {
                m.insert(prompt, e).expect("coding motive");
            }
        }
        m
    }

    /// Latest codes as TSV: rater, prompt, motive, version, round.
    pub fn snapshot_tsv(&self) -> String {
        let mut s = String::from("# rater\tprompt\tmotive\tversion\tround\n");
        for (rater, codes) in &self.codes {
            for c in codes.values() {
                s.push_str(&format!("{rater}\t{}\t{}\t{}\t{}\n", c.prompt, c.motive, c.version, c.round));
            }
        }
        for r in self.resolutions.values() {
            s.push_str(&format!("{}\t{}\t{}\t-\t{}\n", r.resolver, r.prompt, r.motive, r.round));
        }
        s
    }

    fn apply(&mut self, rec: &LogRecord) -> Result<(), String> {
        match rec {
            LogRecord::Code { ts, rater, prompt, motive, version } => {
                if !self.index.contains_key(prompt) {
                    return Err(format!("unknown prompt {prompt:?}"));
                }
                let round = self.round_of(prompt);
                self.codes.entry(rater.clone()).or_default().insert(
                    prompt.clone(),
                    CodeRecord {
                        rater: rater.clone(),
                        prompt: prompt.clone(),
                        motive: *motive,
                        version: *version,
                        round,
                        ts: *ts,
                    },
                );
            }
            LogRecord::Resolve { ts, resolver, prompt, motive } => {
                if !self.index.contains_key(prompt) {
                    return Err(format!("unknown prompt {prompt:?}"));
                }
                self.resolutions.insert(
                    prompt.clone(),
                    Resolution {
                        resolver: resolver.clone(),
                        prompt: prompt.clone(),
                        motive: *motive,
                        round: RESOLUTION_ROUND,
                        ts: *ts,
                    },
                );
            }
        }
        self.log_entries += 1;
        Ok(())
    }
}

fn parse_prompts(text: &str) -> Result<Vec<(String, u64)>, StoreError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let corrupt = |msg: &str| StoreError::Corrupt { file: PROMPTS_FILE.into(), line: i + 1, msg: msg.into() };
        let (p, c) = line.rsplit_once('\t').ok_or_else(|| corrupt("expected prompt<TAB>count"))?;
        out.push((p.to_string(), c.trim().parse().map_err(|_| corrupt("bad count"))?));
    }
    Ok(out)
}

/// Prompt list as `prompt<TAB>count` lines.
pub fn prompts_to_tsv(prompts: &[(String, u64)]) -> String {
    let mut s = String::from("# prompt\tcount\n");
    for (p, c) in prompts {
        s.push_str(&format!("{p}\t{c}\n"));
    }
    s
}

/// Reads a residual prompt list (`prompt<TAB>count`), normalizing prompts
/// and summing duplicates.
pub fn read_prompt_list(text: &str) -> Result<Vec<(String, u64)>, StoreError> {
    let mut merged: BTreeMap<String, u64> = BTreeMap::new();
    for (p, c) in parse_prompts(text)? {
        let key = normalize_prompt(&p);
        if !key.is_empty() {
            *merged.entry(key).or_default() += c;
        }
    }
    Ok(merged.into_iter().collect())
}

fn write_atomic(path: &Path, contents: &str) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp)?;
        f.write_all(contents.as_bytes())?;
        f.sync_all()?;
    }
    fs::rename(tmp, path)
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

struct Writer {
    log: File,
    /// Working copy the next snapshot is built from.
    state: State,
}

pub struct Store {
    dir: PathBuf,
    writer: Mutex<Writer>,
    current: ArcSwap<State>,
}

impl Store {
    /// Opens or creates a store. A supplied prompt list replaces the stored
    /// one; settings are fixed when the store is created.
    pub fn open(dir: &Path, prompts: Option<Vec<(String, u64)>>, settings: StoreSettings) -> Result<Self, StoreError> {
        fs::create_dir_all(dir)?;
        let settings_path = dir.join(SETTINGS_FILE);
        let settings = if settings_path.exists() {
            serde_json::from_str(&fs::read_to_string(&settings_path)?).map_err(|e| StoreError::Corrupt {
                file: SETTINGS_FILE.into(),
                line: e.line(),
                msg: e.to_string(),
            })?
        } else {
            write_atomic(&settings_path, &serde_json::to_string_pretty(&settings).expect("plain struct"))?;
            settings
        };
        let prompts_path = dir.join(PROMPTS_FILE);
        let prompts = match prompts {
            Some(p) => {
                write_atomic(&prompts_path, &prompts_to_tsv(&p))?;
                p
            }
            None if prompts_path.exists() => parse_prompts(&fs::read_to_string(&prompts_path)?)?,
            None => return Err(StoreError::NoPrompts),
        };
        let mut state = State::new(prompts, settings);

        let log_path = dir.join(LOG_FILE);
        if log_path.exists() {
            replay(&log_path, &mut state)?;
        }
        let log = OpenOptions::new().create(true).append(true).open(&log_path)?;
        Ok(Store {
            dir: dir.to_path_buf(),
            current: ArcSwap::from_pointee(state.clone()),
            writer: Mutex::new(Writer { log, state }),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Lock-free read of the latest state.
    pub fn snapshot(&self) -> Arc<State> {
        self.current.load_full()
    }

    fn append(&self, w: &mut Writer, rec: LogRecord) -> Result<(), StoreError> {
        let mut line = serde_json::to_string(&rec).expect("plain record");
        line.push('\n');
        w.log.write_all(line.as_bytes())?;
        w.log.sync_data()?;
        w.state.apply(&rec).expect("validated before logging");
        self.current.store(Arc::new(w.state.clone()));
        Ok(())
    }

    pub fn submit_code(
        &self,
        rater: &str,
        prompt: &str,
        motive: Motive,
        amend: bool,
    ) -> Result<CodeRecord, StoreError> {
        if !valid_rater(rater) {
            return Err(StoreError::InvalidRater(rater.into()));
        }
        if !motive.is_label() {
            return Err(StoreError::InvalidMotive(motive.to_string()));
        }
        let prompt = normalize_prompt(prompt);
        let mut w = self.writer.lock().expect("writer lock poisoned");
        if !w.state.index.contains_key(&prompt) {
            return Err(StoreError::UnknownPrompt(prompt));
        }
        let previous = w.state.codes.get(rater).and_then(|c| c.get(&prompt)).map(|c| c.version);
        if previous.is_some() && !amend {
            return Err(StoreError::Duplicate { rater: rater.into(), prompt });
        }
        let rec = LogRecord::Code {
            ts: now_ms(),
            rater: rater.into(),
            prompt: prompt.clone(),
            motive,
            version: previous.unwrap_or(0) + 1,
        };
        self.append(&mut w, rec)?;
        Ok(w.state.codes[rater][&prompt].clone())
    }

    pub fn resolve(&self, resolver: &str, prompt: &str, motive: Motive) -> Result<Resolution, StoreError> {
        if !valid_rater(resolver) {
            return Err(StoreError::InvalidRater(resolver.into()));
        }
        if !motive.is_label() {
            return Err(StoreError::InvalidMotive(motive.to_string()));
        }
        let prompt = normalize_prompt(prompt);
        let mut w = self.writer.lock().expect("writer lock poisoned");
        if !w.state.index.contains_key(&prompt) {
            return Err(StoreError::UnknownPrompt(prompt));
        }
        let rec = LogRecord::Resolve { ts: now_ms(), resolver: resolver.into(), prompt: prompt.clone(), motive };
        self.append(&mut w, rec)?;
        Ok(w.state.resolutions[&prompt].clone())
    }

    /// Writes the TSV snapshot of the latest codes.
    pub fn write_snapshot(&self) -> std::io::Result<()> {
        write_atomic(&self.dir.join(SNAPSHOT_FILE), &self.snapshot().snapshot_tsv())
    }
}

/// Replays the log into `state`. A torn final line (no newline) left by a
/// crash is cut off; any other bad line is an error.
fn replay(path: &Path, state: &mut State) -> Result<(), StoreError> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut buf = String::new();
    let mut good_len = 0u64;
    let mut line_no = 0;
    loop {
        buf.clear();
        let n = reader.read_line(&mut buf)?;
        if n == 0 {
            break;
        }
        line_no += 1;
        let complete = buf.ends_with('\n');
        let text = buf.trim();
        if text.is_empty() {
            good_len += n as u64;
            continue;
        }
        let parsed =
            serde_json::from_str::<LogRecord>(text).map_err(|e| e.to_string()).and_then(|rec| state.apply(&rec));
        match parsed {
            Ok(()) => good_len += n as u64,
            Err(_) if !complete => {
                OpenOptions::new().write(true).open(path)?.set_len(good_len)?;
                break;
            }
            Err(msg) => return Err(StoreError::Corrupt { file: LOG_FILE.into(), line: line_no, msg }),
        }
    }
    Ok(())
}
