use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use motivelog::abstractor::{AbstractError, AbstractSink};
use motivelog::agreement::{
    cohen_kappa, confusion_matrix, disagreements, kappa_from_agreement, per_category_kappa, AgreementError,
};
use motivelog::analytics::{long_tail_report, motive_vs_appcat_table, Selection};
use motivelog::classifier::{
    auto_code_corpus, classify_records, prefilter_single_participant, prompt_frequencies, DEFAULT_RESIDUAL_CUTOFF,
};
use motivelog::corpusgen::{generate, truth_to_tsv, CorpusSpec, InvalidSpec};
use motivelog::io::{write_jsonl_line, JsonlReader};
use motivelog::sessionizer::{build_records, SessionInfo};
use motivelog::{
    AbstractorConfig, AppCategoryMap, Dictionary, Exec, FieldSnapshotEvent, IoError, KeywordRuleSet, MotiveMapping,
    ParseError, StatsReport, StreamAbstractor, TextInputRecord, Whitelist, WordEvent,
};
use motivelog_service::store::{prompts_to_tsv, read_prompt_list};
use motivelog_service::{Store, StoreError, StoreSettings};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::manifest::Manifest;
use crate::{Cli, Command, Io};

#[derive(Debug)]
pub enum CliError {
    /// Bad input data or configuration.
    Invalid(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Invalid(_) => 1,
            CliError::Io(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Invalid(m) | CliError::Io(m) => f.write_str(m),
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        match e {
            IoError::Io(e) => CliError::Io(e.to_string()),
            other => CliError::Invalid(other.to_string()),
        }
    }
}

macro_rules! invalid_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Invalid(e.to_string())
            }
        }
    )*};
}
invalid_from!(ParseError, InvalidSpec, AbstractError, AgreementError, toml::de::Error);

impl From<StoreError> for CliError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Io(e) => CliError::Io(e.to_string()),
            other => CliError::Invalid(other.to_string()),
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn with_path<T>(path: &Path, r: io::Result<T>) -> Result<T> {
    r.map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Result<Box<dyn Write>> {
    if path == Path::new("-") {
        Ok(Box::new(BufWriter::new(io::stdout().lock())))
    } else {
        Ok(Box::new(BufWriter::new(with_path(path, File::create(path))?)))
    }
}

fn write_output(m: &mut Manifest, path: &Path, contents: &str) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(contents.as_bytes())?;
    w.flush()?;
    drop(w);
    with_path(path, m.output(path))
}

fn read_text(m: &mut Manifest, path: &Path) -> Result<String> {
    with_path(path, m.read_to_string(path))
}

fn read_records(m: &mut Manifest, path: &Path) -> Result<Vec<TextInputRecord>> {
    let reader = with_path(path, m.open(path))?;
    Ok(JsonlReader::new(reader).collect::<std::result::Result<_, _>>()?)
}

fn write_records(m: &mut Manifest, path: &Path, records: &[TextInputRecord]) -> Result<()> {
    let mut w = create(path)?;
    for r in records {
        write_jsonl_line(&mut w, r)?;
    }
    w.flush()?;
    drop(w);
    with_path(path, m.output(path))
}

fn read_rules(m: &mut Manifest, path: Option<&Path>) -> Result<KeywordRuleSet> {
    match path {
        Some(p) => Ok(KeywordRuleSet::parse_tsv(&read_text(m, p)?)?),
        None => Ok(KeywordRuleSet::default()),
    }
}

/// Pipeline options settable from a config file; flags override them.
#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PipelineConfig {
    gap_timeout_ms: Option<u64>,
    residual_cutoff: Option<f64>,
}

fn read_config(m: &mut Manifest, path: Option<&Path>) -> Result<PipelineConfig> {
    match path {
        Some(p) => Ok(toml::from_str(&read_text(m, p)?)?),
        None => Ok(PipelineConfig::default()),
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let exec = if cli.sequential { Exec::Sequential } else { Exec::default() };
    let name = format!("{:?}", cli.command);
    let name = name.split([' ', '{']).next().unwrap_or_default().to_lowercase();
    let mut m = Manifest::new(&name);
    match cli.command {
        Command::Gen { seed, config, out, fixtures } => gen(&mut m, seed, config, &out, fixtures, exec)?,
        Command::Abstract { dict, whitelist, gap_timeout, config, index, io } => {
            abstract_cmd(&mut m, &dict, &whitelist, gap_timeout, config, index, &io)?
        }
        Command::Sessions { index, appcats, io } => sessions(&mut m, index, appcats, &io)?,
        Command::Prefilter { report, io } => prefilter(&mut m, report, &io)?,
        Command::Autocode { rules, config, cutoff, residual, queue, io } => {
            autocode(&mut m, rules, config, cutoff, residual, queue, &io)?
        }
        Command::Classify { mapping, rules, io } => classify(&mut m, &mapping, rules, &io, exec)?,
        Command::Stats { input, out } => stats(&mut m, &input, &out, exec)?,
        Command::Compare { pairs, io } => compare(&mut m, &pairs, &io)?,
        Command::Longtail { k, io } => {
            let records = read_records(&mut m, &io.input)?;
            m.config = json!({ "k": k });
            let report = long_tail_report(&records, k);
            write_output(&mut m, &io.out, &(serde_json::to_string_pretty(&report).expect("report") + "\n"))?;
        }
        Command::Kappa { a, b, po, pe, n, out } => kappa(&mut m, a, b, po, pe, n, &out)?,
        Command::Serve { store, prompts, bind, port, static_dir, round_size, seed } => {
            m.config = json!({ "store": store, "bind": bind, "port": port, "round_size": round_size, "seed": seed });
            let prompts = match &prompts {
                Some(p) => Some(read_prompt_list(&read_text(&mut m, p)?)?),
                None => None,
            };
            let store = Arc::new(Store::open(&store, prompts, StoreSettings { round_size, seed })?);
            let addr: SocketAddr =
                format!("{bind}:{port}").parse().map_err(|e| CliError::Invalid(format!("bad bind address: {e}")))?;
            m.emit(cli.manifest)?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(motivelog_service::serve(addr, store, static_dir))?;
            return Ok(());
        }
    }
    with_path(Path::new("manifest"), m.emit(cli.manifest))
}

fn gen(
    m: &mut Manifest,
    seed: Option<u64>,
    config: Option<PathBuf>,
    out: &Path,
    fixtures: Option<PathBuf>,
    exec: Exec,
) -> Result<()> {
    let mut spec = match &config {
        Some(p) => CorpusSpec::from_toml(&read_text(m, p)?)?,
        None => CorpusSpec::default(),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    m.config = serde_json::to_value(&spec).expect("spec serializes");
    let corpus = generate(&spec, exec)?;
    log::info!("{}", motivelog::corpusgen::summary(&corpus));

    let mut w = create(out)?;
    for ev in &corpus.events {
        write_jsonl_line(&mut w, ev)?;
    }
    w.flush()?;
    drop(w);
    with_path(out, m.output(out))?;

    let dir =
        fixtures.or_else(|| (out != Path::new("-")).then(|| out.parent().map(Path::to_path_buf).unwrap_or_default()));
    if let Some(dir) = dir {
        let dir = if dir.as_os_str().is_empty() { PathBuf::from(".") } else { dir };
        with_path(&dir, fs::create_dir_all(&dir))?;
        let fx = &corpus.fixtures;
        for (name, contents) in [
            ("d.dic", fx.dictionary.to_dic()),
            ("wl.txt", fx.whitelist.to_text()),
            ("mapping.tsv", fx.mapping.to_tsv()),
            ("appcats.tsv", fx.app_categories.to_tsv()),
            ("truth.tsv", truth_to_tsv(&corpus.truth)),
        ] {
            write_output(m, &dir.join(name), &contents)?;
        }
    }
    Ok(())
}

/// Streams word events to one writer and session index lines to another.
struct FileSink<W, X> {
    words: W,
    index: Option<X>,
    error: Option<IoError>,
    sessions: u64,
}

impl<W: Write, X: Write> AbstractSink for FileSink<W, X> {
    fn word(&mut self, ev: WordEvent) {
        if self.error.is_none() {
            self.error = write_jsonl_line(&mut self.words, &ev).err();
        }
    }

    fn session(&mut self, info: SessionInfo) {
        self.sessions += 1;
        if let (None, Some(x)) = (&self.error, &mut self.index) {
            self.error = writeln!(x, "{}", info.to_tsv_line()).err().map(IoError::from);
        }
    }
}

fn abstract_cmd(
    m: &mut Manifest,
    dict: &Path,
    whitelist: &Path,
    gap_timeout: Option<u64>,
    config: Option<PathBuf>,
    index: Option<PathBuf>,
    io: &Io,
) -> Result<()> {
    let cfg = read_config(m, config.as_deref())?;
    let dictionary = Dictionary::parse(&read_text(m, dict)?)?;
    let wl = Whitelist::parse(&read_text(m, whitelist)?);
    let mut config = AbstractorConfig::default();
    if let Some(g) = gap_timeout.or(cfg.gap_timeout_ms) {
        config.gap_timeout_ms = g;
    }
    m.config = json!({ "gap_timeout_ms": config.gap_timeout_ms });

    let index_writer = match &index {
        Some(p) => {
            let mut w = create(p)?;
            writeln!(w, "{}", SessionInfo::TSV_HEADER)?;
            Some(w)
        }
        None => None,
    };
    let mut sink = FileSink { words: create(&io.out)?, index: index_writer, error: None, sessions: 0 };
    let reader = with_path(&io.input, m.open(&io.input))?;
    let mut abs = StreamAbstractor::new(&dictionary, &wl, config);
    for ev in JsonlReader::<_, FieldSnapshotEvent>::new(reader) {
        abs.push(&ev?, &mut sink)?;
        if let Some(e) = sink.error.take() {
            return Err(e.into());
        }
    }
    abs.finish(&mut sink);
    if let Some(e) = sink.error.take() {
        return Err(e.into());
    }
    sink.words.flush()?;
    if let Some(x) = &mut sink.index {
        x.flush()?;
    }
    log::info!("{} sessions", sink.sessions);
    drop(sink);
    with_path(&io.out, m.output(&io.out))?;
    if let Some(p) = &index {
        with_path(p, m.output(p))?;
    }
    Ok(())
}

fn sessions(m: &mut Manifest, index: Option<PathBuf>, appcats: Option<PathBuf>, io: &Io) -> Result<()> {
    let infos = match &index {
        Some(p) => read_text(m, p)?
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
            .map(|(i, l)| SessionInfo::parse_tsv_line(l, i + 1))
            .collect::<std::result::Result<Vec<_>, _>>()?,
        None => Vec::new(),
    };
    let cats = match &appcats {
        Some(p) => AppCategoryMap::parse_tsv(&read_text(m, p)?)?,
        None => AppCategoryMap::new(),
    };
    let reader = with_path(&io.input, m.open(&io.input))?;
    let words: Vec<WordEvent> = JsonlReader::new(reader).collect::<std::result::Result<_, _>>()?;
    let (records, audit) = build_records(&words, &infos, &cats);
    m.config = json!({ "audit": audit });
    write_records(m, &io.out, &records)
}

fn prefilter(m: &mut Manifest, report: Option<PathBuf>, io: &Io) -> Result<()> {
    let mut records = read_records(m, &io.input)?;
    let rep = prefilter_single_participant(&mut records);
    m.config = json!({ "redacted_prompts": rep.redacted.len(), "redacted_records": rep.redacted_records });
    write_records(m, &io.out, &records)?;
    if let Some(p) = report {
        write_output(m, &p, &(serde_json::to_string_pretty(&rep).expect("report") + "\n"))?;
    }
    Ok(())
}

fn autocode(
    m: &mut Manifest,
    rules: Option<PathBuf>,
    config: Option<PathBuf>,
    cutoff: Option<f64>,
    residual: Option<PathBuf>,
    queue: Option<PathBuf>,
    io: &Io,
) -> Result<()> {
    let cfg = read_config(m, config.as_deref())?;
    let cutoff = cutoff.or(cfg.residual_cutoff).unwrap_or(DEFAULT_RESIDUAL_CUTOFF);
    if !(0.0..=1.0).contains(&cutoff) {
        return Err(CliError::Invalid(format!("cutoff must lie in [0, 1], got {cutoff}")));
    }
    let rules = read_rules(m, rules.as_deref())?;
    let records = read_records(m, &io.input)?;
    let result = auto_code_corpus(&prompt_frequencies(&records), &rules, records.len() as u64, cutoff);
    m.config = json!({
        "cutoff": cutoff,
        "rules": rules.rules(),
        "auto_coded": result.mapping.len(),
        "residual": result.residual.len(),
        "manual_queue": result.manual_queue.len(),
        "multi_stem": result.multi_stem,
    });
    write_output(m, &io.out, &result.mapping.to_tsv())?;
    if let Some(p) = residual {
        write_output(m, &p, &prompts_to_tsv(&result.residual))?;
    }
    if let Some(p) = queue {
        write_output(m, &p, &prompts_to_tsv(&result.manual_queue))?;
    }
    Ok(())
}

fn classify(m: &mut Manifest, mappings: &[PathBuf], rules: Option<PathBuf>, io: &Io, exec: Exec) -> Result<()> {
    let mut mapping = MotiveMapping::new();
    for p in mappings {
        mapping.merge_missing(&MotiveMapping::parse_tsv(&read_text(m, p)?)?);
    }
    let rules = read_rules(m, rules.as_deref())?;
    let mut records = read_records(m, &io.input)?;
    classify_records(&mut records, &mapping, &rules, exec);
    m.config = json!({ "mapping_entries": mapping.len(), "rules": rules.rules() });
    write_records(m, &io.out, &records)
}

fn stats(m: &mut Manifest, input: &Path, out: &Path, exec: Exec) -> Result<()> {
    let records = read_records(m, input)?;
    let report = StatsReport::build(&records, exec);
    with_path(out, fs::create_dir_all(out))?;
    write_output(m, &out.join("stats.json"), &(serde_json::to_string_pretty(&report).expect("report") + "\n"))?;
    write_output(m, &out.join("stats.tsv"), &report.to_tsv())
}

/// Pairs compared when none are given.
const DEFAULT_PAIRS: [&str; 4] = [
    "motive:Messaging,app:Communication",
    "motive:Posting,app:Social Media",
    "motive:Commenting,app:Social Media",
    "motive:Search,app:System",
];

fn parse_pair(s: &str) -> Result<(Selection, Selection)> {
    let (l, r) =
        s.split_once(',').ok_or_else(|| CliError::Invalid(format!("pair {s:?} must be <selection>,<selection>")))?;
    Ok((l.parse()?, r.parse()?))
}

fn compare(m: &mut Manifest, pairs: &[String], io: &Io) -> Result<()> {
    let pairs: Vec<String> =
        if pairs.is_empty() { DEFAULT_PAIRS.iter().map(|s| s.to_string()).collect() } else { pairs.to_vec() };
    let parsed = pairs.iter().map(|p| parse_pair(p)).collect::<Result<Vec<_>>>()?;
    let records = read_records(m, &io.input)?;
    m.config = json!({ "pairs": pairs });
    let table = motive_vs_appcat_table(&records, &parsed);
    write_output(m, &io.out, &(serde_json::to_string_pretty(&table).expect("table") + "\n"))
}

fn kappa(
    m: &mut Manifest,
    a: Option<PathBuf>,
    b: Option<PathBuf>,
    po: Option<f64>,
    pe: Option<f64>,
    n: Option<u64>,
    out: &Path,
) -> Result<()> {
    let value = match (a, b, po, pe, n) {
        (Some(a), Some(b), ..) => {
            let codes_a = MotiveMapping::parse_tsv(&read_text(m, &a)?)?.codes();
            let codes_b = MotiveMapping::parse_tsv(&read_text(m, &b)?)?.codes();
            let matrix = confusion_matrix(&codes_a, &codes_b)?;
            let result = cohen_kappa(&matrix)?;
            let per_category = per_category_kappa(&matrix)?;
            let list = disagreements(&codes_a, &codes_b, &HashMap::new());
            let mut v = serde_json::to_value(result).expect("result");
            v["matrix"] = serde_json::to_value(&matrix).expect("matrix");
            v["per_category"] = serde_json::to_value(&per_category).expect("per category");
            v["disagreements"] = serde_json::to_value(&list).expect("list");
            v
        }
        (_, _, Some(po), Some(pe), Some(n)) => {
            if !(0.0..=1.0).contains(&po) || !(0.0..=1.0).contains(&pe) {
                return Err(CliError::Invalid("po and pe must lie in [0, 1]".into()));
            }
            serde_json::to_value(kappa_from_agreement(po, pe, n)?).expect("result")
        }
        _ => return Err(CliError::Invalid("kappa needs --a and --b, or --po, --pe and --n".into())),
    };
    let rounded: BTreeMap<&str, String> =
        ["kappa", "se"].into_iter().filter_map(|k| value[k].as_f64().map(|x| (k, format!("{x:.2}")))).collect();
    log::info!("{rounded:?}");
    write_output(m, out, &(serde_json::to_string_pretty(&value).expect("json") + "\n"))
}
