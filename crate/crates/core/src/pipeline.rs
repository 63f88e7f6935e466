//! In-process pipeline: abstraction, record building, prefilter,
//! classification and the statistics report. The CLI runs the same stages
//! through files.

use serde::{Deserialize, Serialize};

use crate::abstractor::{process_partitioned, AbstractError, AbstractorConfig};
use crate::analytics::{
    kruskal_dunn, long_tail_report, matching_rate_stats, words_by_motive, words_per_input_stats, GroupBy, GroupedStats,
    KwDunnResult, LongTailReport,
};
use crate::classifier::{
    classify_records, coverage, prefilter_single_participant, CoverageReport, KeywordRuleSet, MotiveMapping,
    RedactionReport,
};
use crate::dictionary::{Dictionary, Whitelist};
use crate::model::{AppCategoryMap, FieldSnapshotEvent, Motive, TextInputRecord, WordEvent};
use crate::par::Exec;
use crate::sessionizer::{build_records, RecordAudit, SessionInfo};

/// Motives compared by the rank test in the stats report.
pub const COMPARED_MOTIVES: [Motive; 6] =
    [Motive::Search, Motive::DataInput, Motive::Messaging, Motive::Posting, Motive::Commenting, Motive::Other];

pub const LONG_TAIL_K: usize = 10;

pub struct PipelineContext<'a> {
    pub dictionary: &'a Dictionary,
    pub whitelist: &'a Whitelist,
    pub mapping: &'a MotiveMapping,
    pub rules: &'a KeywordRuleSet,
    pub app_categories: &'a AppCategoryMap,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub words: Vec<WordEvent>,
    pub sessions: Vec<SessionInfo>,
    pub records: Vec<TextInputRecord>,
    pub audit: RecordAudit,
    pub redaction: RedactionReport,
}

pub fn run(
    events: &[FieldSnapshotEvent],
    ctx: &PipelineContext<'_>,
    config: AbstractorConfig,
    exec: Exec,
) -> Result<PipelineOutput, AbstractError> {
    let abstracted = process_partitioned(events, ctx.dictionary, ctx.whitelist, config, exec)?;
    let (mut records, audit) = build_records(&abstracted.words, &abstracted.sessions, ctx.app_categories);
    let redaction = prefilter_single_participant(&mut records);
    classify_records(&mut records, ctx.mapping, ctx.rules, exec);
    Ok(PipelineOutput { words: abstracted.words, sessions: abstracted.sessions, records, audit, redaction })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub coverage: CoverageReport,
    pub words_by_motive: GroupedStats,
    pub matching_rate_by_motive: GroupedStats,
    pub words_by_app_category: GroupedStats,
    pub matching_rate_by_app_category: GroupedStats,
    /// Kruskal-Wallis and Dunn over words per input; absent with fewer than
    /// two non-empty motives.
    pub words_rank_test: Option<KwDunnResult>,
    pub long_tail: LongTailReport,
}

impl StatsReport {
    pub fn build(records: &[TextInputRecord], exec: Exec) -> Self {
        let jobs = [
            (GroupBy::Motive, false),
            (GroupBy::Motive, true),
            (GroupBy::AppCategory, false),
            (GroupBy::AppCategory, true),
        ];
        let mut grouped = exec
            .map(
                &jobs,
                |&(by, rate)| {
                    if rate {
                        matching_rate_stats(records, by)
                    } else {
                        words_per_input_stats(records, by)
                    }
                },
            )
            .into_iter();
        let mut next = || grouped.next().expect("four jobs");
        let (wm, rm, wa, ra) = (next(), next(), next(), next());
        StatsReport {
            coverage: coverage(records),
            words_by_motive: wm,
            matching_rate_by_motive: rm,
            words_by_app_category: wa,
            matching_rate_by_app_category: ra,
            words_rank_test: kruskal_dunn(&words_by_motive(records, &COMPARED_MOTIVES)).ok(),
            long_tail: long_tail_report(records, LONG_TAIL_K),
        }
    }

    pub const TSV_HEADER: &'static str = "grouping\tgroup\tmeasure\tn\tmean\tsd";

    /// One row per group and measure.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from(Self::TSV_HEADER);
        s.push('\n');
        for (grouping, measure, g) in [
            ("motive", "words", &self.words_by_motive),
            ("motive", "matching_rate", &self.matching_rate_by_motive),
            ("app_category", "words", &self.words_by_app_category),
            ("app_category", "matching_rate", &self.matching_rate_by_app_category),
        ] {
            for row in &g.groups {
                s.push_str(&format!("{grouping}\t{}\t{measure}\t{}\t{}\t{}\n", row.label, row.n, row.mean, row.sd));
            }
        }
        s
    }
}
