//! Descriptive statistics per motive and app category, matching rates,
//! long-tail coverage, and the Kruskal-Wallis test with Dunn's post-hoc
//! comparisons.
//!
//! All floating-point reductions sort their inputs and use pairwise
//! summation, so results do not depend on record order or on how the work
//! was partitioned.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::sort_by_frequency;
use crate::error::ParseError;
use crate::model::{Motive, Prompt, TextInputRecord};
use crate::special::{chi2_sf, gamma_q};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RankTestError {
    #[error("at least two groups are required, got {0}")]
    TooFewGroups(usize),
    #[error("group {0} is empty")]
    EmptyGroup(usize),
    #[error("group {0} contains a non-finite value")]
    NonFinite(usize),
}

const PAIRWISE_BLOCK: usize = 16;

/// Pairwise (cascade) summation.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= PAIRWISE_BLOCK {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub label: String,
    pub n: u64,
    pub mean: f64,
    /// Sample standard deviation (n − 1 denominator); 0 for a single value.
    pub sd: f64,
}

impl GroupStats {
    /// Mean and sample SD; `values` is sorted in place.
    pub fn from_values(label: impl Into<String>, values: &mut [f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        values.sort_by(f64::total_cmp);
        let n = values.len();
        let mean = pairwise_sum(values) / n as f64;
        let sd = if n > 1 {
            let sq: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
            (pairwise_sum(&sq) / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(GroupStats { label: label.into(), n: n as u64, mean, sd })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupBy {
    Motive,
    AppCategory,
}

/// A subset of records: one motive or one app category.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    Motive(Motive),
    AppCategory(String),
}

impl Selection {
    pub fn matches(&self, r: &TextInputRecord) -> bool {
        match self {
            Selection::Motive(m) => r.motive == *m,
            Selection::AppCategory(c) => r.app_category.as_deref() == Some(c.as_str()),
        }
    }
}

impl fmt::Display for Selection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Selection::Motive(m) => write!(f, "input motive: {m}"),
            Selection::AppCategory(c) => write!(f, "app category: {c}"),
        }
    }
}

impl FromStr for Selection {
    type Err = ParseError;

    /// `motive:<Motive>` or `app:<category>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, value) = s
            .split_once(':')
            .ok_or_else(|| ParseError::line(0, format!("selection {s:?} must be motive:<name> or app:<category>")))?;
        match kind.trim() {
            "motive" => Ok(Selection::Motive(value.trim().parse()?)),
            "app" | "app_category" => Ok(Selection::AppCategory(value.trim().to_string())),
            other => Err(ParseError::line(0, format!("unknown selection kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroupedStats {
    pub groups: Vec<GroupStats>,
    /// Why some groups or records were left out.
    pub notes: Vec<String>,
}

fn group_key(r: &TextInputRecord, by: GroupBy) -> Option<String> {
    match by {
        GroupBy::Motive => Some(r.motive.to_string()),
        GroupBy::AppCategory => r.app_category.clone(),
    }
}

fn grouped(records: &[TextInputRecord], by: GroupBy, value: impl Fn(&TextInputRecord) -> Option<f64>) -> GroupedStats {
    let mut buckets: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut no_category = 0u64;
    let mut excluded = 0u64;
    for r in records {
        let Some(v) = value(r) else {
            excluded += 1;
            continue;
        };
        match group_key(r, by) {
            Some(k) => buckets.entry(k).or_default().push(v),
            None => no_category += 1,
        }
    }
    let mut out = GroupedStats::default();
    let labels: Vec<String> = match by {
        GroupBy::Motive => Motive::ALL.iter().map(|m| m.to_string()).collect(),
        GroupBy::AppCategory => buckets.keys().cloned().collect(),
    };
    for label in labels {
        match buckets.get_mut(&label).and_then(|v| GroupStats::from_values(label.clone(), v)) {
            Some(g) => out.groups.push(g),
            None => out.notes.push(format!("group {label} is empty; skipped")),
        }
    }
    if no_category > 0 {
        out.notes.push(format!("{no_category} records without app category"));
    }
    if excluded > 0 {
        out.notes.push(format!("{excluded} records with zero words excluded"));
    }
    out
}

/// Mean and SD of words per text input for each group.
pub fn words_per_input_stats(records: &[TextInputRecord], by: GroupBy) -> GroupedStats {
    grouped(records, by, |r| Some(r.total_words as f64))
}

/// Mean and SD of the per-record matching rate for each group; records with
/// zero words are excluded.
pub fn matching_rate_stats(records: &[TextInputRecord], by: GroupBy) -> GroupedStats {
    grouped(records, by, TextInputRecord::matching_rate)
}

struct Ranks {
    n_total: usize,
    sizes: Vec<usize>,
    mean_ranks: Vec<f64>,
    /// Σ (t³ − t) over tie groups.
    tie_sum: f64,
}

fn rank_groups(groups: &[Vec<f64>]) -> Result<Ranks, RankTestError> {
    if groups.len() < 2 {
        return Err(RankTestError::TooFewGroups(groups.len()));
    }
    let mut all: Vec<(f64, usize)> = Vec::new();
    for (g, values) in groups.iter().enumerate() {
        if values.is_empty() {
            return Err(RankTestError::EmptyGroup(g));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(RankTestError::NonFinite(g));
        }
        all.extend(values.iter().map(|&v| (v, g)));
    }
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let n = all.len();
    let mut rank_sums = vec![0.0; groups.len()];
    let mut tie_sum = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && all[j].0 == all[i].0 {
            j += 1;
        }
        // 1-based ranks i+1 ..= j share their midrank
        let midrank = (i + 1 + j) as f64 / 2.0;
        for item in &all[i..j] {
            rank_sums[item.1] += midrank;
        }
        let t = (j - i) as f64;
        tie_sum += t * t * t - t;
        i = j;
    }
    let sizes: Vec<usize> = groups.iter().map(Vec::len).collect();
    let mean_ranks = rank_sums.iter().zip(&sizes).map(|(s, &k)| s / k as f64).collect();
    Ok(Ranks { n_total: n, sizes, mean_ranks, tie_sum })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KruskalWallis {
    pub h: f64,
    pub df: u32,
    pub p: f64,
}

fn kruskal_from_ranks(r: &Ranks) -> KruskalWallis {
    let n = r.n_total as f64;
    let df = (r.sizes.len() - 1) as u32;
    let correction = 1.0 - r.tie_sum / (n * n * n - n);
    if correction <= 0.0 {
        return KruskalWallis { h: 0.0, df, p: 1.0 };
    }
    let center = (n + 1.0) / 2.0;
    let spread: Vec<f64> =
        r.mean_ranks.iter().zip(&r.sizes).map(|(m, &k)| k as f64 * (m - center) * (m - center)).collect();
    let h = (12.0 / (n * (n + 1.0)) * pairwise_sum(&spread) / correction).max(0.0);
    KruskalWallis { h, df, p: chi2_sf(h, df as f64) }
}

/// Kruskal-Wallis H with midranks and tie correction; p from the
/// chi-square tail with k − 1 degrees of freedom.
pub fn kruskal_wallis(groups: &[Vec<f64>]) -> Result<KruskalWallis, RankTestError> {
    Ok(kruskal_from_ranks(&rank_groups(groups)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DunnComparison {
    pub a: usize,
    pub b: usize,
    pub z: f64,
    pub p_raw: f64,
    pub p_adjusted: f64,
}

fn dunn_from_ranks(r: &Ranks) -> Vec<DunnComparison> {
    let n = r.n_total as f64;
    let k = r.sizes.len();
    let comparisons = (k * (k - 1) / 2) as f64;
    let variance = n * (n + 1.0) / 12.0 - r.tie_sum / (12.0 * (n - 1.0));
    let mut out = Vec::new();
    for a in 0..k {
        for b in a + 1..k {
            let diff = r.mean_ranks[a] - r.mean_ranks[b];
            let (z, p_raw) = if variance > 0.0 {
                let se = (variance * (1.0 / r.sizes[a] as f64 + 1.0 / r.sizes[b] as f64)).sqrt();
                let z = diff / se;
                // two-sided normal tail: 2·Φ̄(|z|) = Q(1/2, z²/2)
                (z, gamma_q(0.5, z * z / 2.0).clamp(0.0, 1.0))
            } else {
                (0.0, 1.0)
            };
            out.push(DunnComparison { a, b, z, p_raw, p_adjusted: (p_raw * comparisons).min(1.0) });
        }
    }
    out
}

/// Dunn's pairwise z tests on mean ranks, Bonferroni-adjusted.
pub fn dunn_posthoc(groups: &[Vec<f64>]) -> Result<Vec<DunnComparison>, RankTestError> {
    Ok(dunn_from_ranks(&rank_groups(groups)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseComparison {
    pub group_a: String,
    pub group_b: String,
    pub z: f64,
    pub p_raw: f64,
    pub p_adjusted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KwDunnResult {
    pub groups: Vec<String>,
    pub h: f64,
    pub df: u32,
    pub p: f64,
    pub pairwise: Vec<PairwiseComparison>,
}

/// Kruskal-Wallis followed by Dunn's test over labeled groups.
pub fn kruskal_dunn(groups: &[(String, Vec<f64>)]) -> Result<KwDunnResult, RankTestError> {
    let values: Vec<Vec<f64>> = groups.iter().map(|(_, v)| v.clone()).collect();
    let ranks = rank_groups(&values)?;
    let kw = kruskal_from_ranks(&ranks);
    let pairwise = dunn_from_ranks(&ranks)
        .into_iter()
        .map(|d| PairwiseComparison {
            group_a: groups[d.a].0.clone(),
            group_b: groups[d.b].0.clone(),
            z: d.z,
            p_raw: d.p_raw,
            p_adjusted: d.p_adjusted,
        })
        .collect();
    Ok(KwDunnResult { groups: groups.iter().map(|(l, _)| l.clone()).collect(), h: kw.h, df: kw.df, p: kw.p, pairwise })
}

/// Words-per-input values of each listed motive, skipping absent motives.
pub fn words_by_motive(records: &[TextInputRecord], motives: &[Motive]) -> Vec<(String, Vec<f64>)> {
    let mut buckets: HashMap<Motive, Vec<f64>> = HashMap::new();
    for r in records {
        if motives.contains(&r.motive) {
            buckets.entry(r.motive).or_default().push(r.total_words as f64);
        }
    }
    motives.iter().filter_map(|m| buckets.remove(m).map(|v| (m.to_string(), v))).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongTailReport {
    pub k: usize,
    pub distinct_prompts: u64,
    pub top: Vec<(String, u64)>,
    pub covered: u64,
    pub prompted: u64,
    pub share: f64,
}

/// Top-k prompt texts by record count and the share of prompted records
/// they cover. Redacted prompts do not count as prompt texts.
pub fn long_tail_report(records: &[TextInputRecord], k: usize) -> LongTailReport {
    let mut counts: HashMap<&str, u64> = HashMap::new();
    let mut prompted = 0u64;
    for r in records {
        if let Some(Prompt::Text(p)) = &r.prompt_text {
            *counts.entry(p.as_str()).or_default() += 1;
            prompted += 1;
        }
    }
    let distinct = counts.len() as u64;
    let mut all: Vec<(String, u64)> = counts.into_iter().map(|(p, c)| (p.to_string(), c)).collect();
    sort_by_frequency(&mut all);
    all.truncate(k.max(1));
    let covered = all.iter().map(|(_, c)| c).sum();
    LongTailReport {
        k,
        distinct_prompts: distinct,
        top: all,
        covered,
        prompted,
        share: if prompted == 0 { 0.0 } else { covered as f64 / prompted as f64 },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionStats {
    pub selection: String,
    pub matching_rate: GroupStats,
    pub words: GroupStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub left: SelectionStats,
    pub right: SelectionStats,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
    /// Pairs that produced no row, with the reason.
    pub flagged: Vec<String>,
}

fn selection_stats(records: &[TextInputRecord], sel: &Selection) -> Option<SelectionStats> {
    let chosen: Vec<&TextInputRecord> = records.iter().filter(|r| sel.matches(r) && r.total_words > 0).collect();
    let label = sel.to_string();
    let mut rates: Vec<f64> = chosen.iter().filter_map(|r| r.matching_rate()).collect();
    let mut words: Vec<f64> = chosen.iter().map(|r| r.total_words as f64).collect();
    Some(SelectionStats {
        matching_rate: GroupStats::from_values(label.clone(), &mut rates)?,
        words: GroupStats::from_values(label.clone(), &mut words)?,
        selection: label,
    })
}

/// Side-by-side matching-rate and words-per-input statistics for pairs of
/// selections (typically a motive against an app category).
pub fn motive_vs_appcat_table(records: &[TextInputRecord], pairs: &[(Selection, Selection)]) -> ComparisonTable {
    let mut table = ComparisonTable::default();
    for (l, r) in pairs {
        match (selection_stats(records, l), selection_stats(records, r)) {
            (Some(left), Some(right)) => table.rows.push(ComparisonRow { left, right }),
            (None, _) => table.flagged.push(format!("{l} vs {r}: {l} is empty")),
            (_, None) => table.flagged.push(format!("{l} vs {r}: {r} is empty")),
        }
    }
    table
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CategorySet;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rec(motive: Motive, app_cat: Option<&str>, total: u64, matched: u64) -> TextInputRecord {
        TextInputRecord {
            session_id: "s".into(),
            participant_id: "p".into(),
            app_id: "a".into(),
            app_category: app_cat.map(str::to_string),
            prompt_text: None,
            motive,
            words_added: total,
            words_changed: 0,
            words_removed: 0,
            total_words: total,
            matched_words: matched,
            many_hot: CategorySet::new(),
            start_ts: 0,
            end_ts: 0,
        }
    }

    #[test]
    fn group_stats_examples() {
        let g = GroupStats::from_values("x", &mut [2.0, 4.0]).unwrap();
        assert_eq!(g.mean, 3.0);
        assert!((g.sd - 2f64.sqrt()).abs() < 1e-12);
        let g = GroupStats::from_values("x", &mut [5.0, 5.0, 5.0]).unwrap();
        assert_eq!((g.mean, g.sd), (5.0, 0.0));
        assert!(GroupStats::from_values("x", &mut []).is_none());
    }

    #[test]
    fn words_and_rates_by_motive() {
        let recs = vec![
            rec(Motive::Search, Some("System"), 2, 1),
            rec(Motive::Search, Some("System"), 4, 4),
            rec(Motive::Messaging, None, 10, 5),
        ];
        let w = words_per_input_stats(&recs, GroupBy::Motive);
        let search = w.groups.iter().find(|g| g.label == "Search").unwrap();
        assert_eq!(search.mean, 3.0);
        assert!(w.notes.iter().any(|n| n.contains("Posting")));
        let r = matching_rate_stats(&recs, GroupBy::Motive);
        let search = r.groups.iter().find(|g| g.label == "Search").unwrap();
        assert_eq!(search.mean, 0.75);
        let by_app = matching_rate_stats(&recs, GroupBy::AppCategory);
        assert_eq!(by_app.groups.len(), 1);
        assert!(by_app.notes.iter().any(|n| n.contains("without app category")));
    }

    #[test]
    fn zero_word_records_are_excluded_from_rates() {
        let recs = vec![rec(Motive::Search, None, 0, 0), rec(Motive::Search, None, 4, 2)];
        let r = matching_rate_stats(&recs, GroupBy::Motive);
        let s = r.groups.iter().find(|g| g.label == "Search").unwrap();
        assert_eq!((s.n, s.mean), (1, 0.5));
        assert!(r.notes.iter().any(|n| n.contains("zero words")));
    }

    #[test]
    fn kruskal_examples() {
        let kw = kruskal_wallis(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert!((kw.h - 2.4).abs() < 1e-12);
        assert_eq!(kw.df, 1);
        let tied = kruskal_wallis(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert_eq!((tied.h, tied.p), (0.0, 1.0));
    }

    // Reference values from scipy.stats.kruskal.
    #[test]
    fn kruskal_matches_reference_with_ties() {
        let kw = kruskal_wallis(&[
            vec![1.0, 2.0, 2.0, 3.0, 5.0],
            vec![2.0, 3.0, 3.0, 4.0],
            vec![5.0, 6.0, 6.0, 6.0, 7.0, 1.0],
        ])
        .unwrap();
        assert!((kw.h - 4.823_076_923_076_924).abs() < 1e-10);
        assert!((kw.p - 0.089_677_223_431_785_16).abs() < 1e-10);
        let kw = kruskal_wallis(&[vec![1.5, 2.2, 3.1], vec![0.4, 2.2, 9.0, 4.4], vec![7.7, 8.8, 1.5]]).unwrap();
        assert!((kw.h - 0.789_110_429_447_854_3).abs() < 1e-10);
        assert!((kw.p - 0.673_979_748_859_379_7).abs() < 1e-10);
    }

    #[test]
    fn kruskal_errors() {
        assert_eq!(kruskal_wallis(&[vec![1.0]]), Err(RankTestError::TooFewGroups(1)));
        assert_eq!(kruskal_wallis(&[vec![1.0], vec![]]), Err(RankTestError::EmptyGroup(1)));
        assert_eq!(kruskal_wallis(&[vec![f64::NAN], vec![1.0]]), Err(RankTestError::NonFinite(0)));
    }

    /// Mean ranks by counting, per value, how many values are smaller and
    /// how many are equal.
    fn brute_mean_ranks(groups: &[Vec<f64>]) -> Vec<f64> {
        let all: Vec<f64> = groups.iter().flatten().copied().collect();
        groups
            .iter()
            .map(|g| {
                let s: f64 = g
                    .iter()
                    .map(|v| {
                        let less = all.iter().filter(|w| *w < v).count() as f64;
                        let eq = all.iter().filter(|w| *w == v).count() as f64;
                        less + (eq + 1.0) / 2.0
                    })
                    .sum();
                s / g.len() as f64
            })
            .collect()
    }

    #[test]
    fn dunn_three_separated_groups() {
        let groups = vec![vec![1.0, 2.0, 3.0], vec![101.0, 102.0, 103.0], vec![201.0, 202.0, 203.0]];
        let mr = brute_mean_ranks(&groups);
        assert_eq!(mr, vec![2.0, 5.0, 8.0]);
        // N = 9, no ties: variance N(N+1)/12 = 7.5, se = sqrt(7.5 · 2/3)
        let se = (7.5f64 * (2.0 / 3.0)).sqrt();
        let d = dunn_posthoc(&groups).unwrap();
        let expected = [(mr[0] - mr[1]) / se, (mr[0] - mr[2]) / se, (mr[1] - mr[2]) / se];
        for (c, z) in d.iter().zip(expected) {
            assert!((c.z - z).abs() < 1e-12);
        }
        assert!(!d.iter().all(|c| c.p_adjusted < 0.05));
        assert!(d[1].p_adjusted < 0.05);
    }

    #[test]
    fn dunn_identical_groups() {
        let d = dunn_posthoc(&[vec![3.0, 3.0], vec![3.0, 3.0]]).unwrap();
        assert_eq!((d[0].z, d[0].p_adjusted), (0.0, 1.0));
    }

    #[test]
    fn dunn_two_groups_matches_kruskal() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let a: Vec<f64> = (0..rng.random_range(2..30)).map(|_| rng.random_range(0..10) as f64).collect();
            let b: Vec<f64> = (0..rng.random_range(2..30)).map(|_| rng.random_range(0..12) as f64).collect();
            let groups = vec![a, b];
            let kw = kruskal_wallis(&groups).unwrap();
            let d = dunn_posthoc(&groups).unwrap();
            assert!((d[0].z * d[0].z - kw.h).abs() < 1e-9);
            assert!((d[0].p_raw - kw.p).abs() < 1e-9);
        }
    }

    #[test]
    fn kruskal_dunn_labels_pairs() {
        let r = kruskal_dunn(&[
            ("Search".into(), vec![1.0, 2.0]),
            ("Messaging".into(), vec![5.0, 9.0]),
            ("Other".into(), vec![3.0, 4.0]),
        ])
        .unwrap();
        assert_eq!(r.df, 2);
        assert_eq!(r.pairwise.len(), 3);
        assert_eq!((r.pairwise[2].group_a.as_str(), r.pairwise[2].group_b.as_str()), ("Messaging", "Other"));
    }

    fn prompted(p: &str) -> TextInputRecord {
        let mut r = rec(Motive::Unlabeled, None, 1, 0);
        r.prompt_text = Some(Prompt::Text(p.into()));
        r
    }

    #[test]
    fn long_tail_examples() {
        let recs: Vec<_> = (0..7).map(|_| prompted("same")).collect();
        let lt = long_tail_report(&recs, 1);
        assert_eq!(lt.share, 1.0);

        let recs: Vec<_> = (0..1000).map(|i| prompted(&format!("p{:03}", i % 100))).collect();
        let lt = long_tail_report(&recs, 10);
        assert!((lt.share - 0.10).abs() < 1e-12);
        // ties broken lexicographically
        assert_eq!(lt.top[0].0, "p000");
        assert_eq!(lt.distinct_prompts, 100);
    }

    #[test]
    fn comparison_table_examples() {
        let recs = vec![
            rec(Motive::Messaging, Some("Communication"), 4, 2),
            rec(Motive::Messaging, Some("Communication"), 2, 2),
            rec(Motive::Search, Some("Communication"), 3, 0),
        ];
        let pairs = vec![
            (Selection::Motive(Motive::Messaging), Selection::AppCategory("Communication".into())),
            (Selection::Motive(Motive::Posting), Selection::AppCategory("Communication".into())),
            (Selection::Motive(Motive::Messaging), Selection::Motive(Motive::Messaging)),
        ];
        let t = motive_vs_appcat_table(&recs, &pairs);
        assert_eq!(t.rows.len(), 2);
        assert_eq!(t.flagged.len(), 1);
        assert!(t.rows[0].left.matching_rate.sd < t.rows[0].right.matching_rate.sd);
        let same = &t.rows[1];
        assert_eq!(same.left, same.right);
    }

    #[test]
    fn selection_parsing() {
        assert_eq!("motive:Messaging".parse::<Selection>().unwrap(), Selection::Motive(Motive::Messaging));
        assert_eq!("app:Social Media".parse::<Selection>().unwrap(), Selection::AppCategory("Social Media".into()));
        assert!("foo".parse::<Selection>().is_err());
    }

    proptest! {
        #[test]
        fn kruskal_rank_invariance(
            a in proptest::collection::vec(-50i32..50, 1..15),
            b in proptest::collection::vec(-50i32..50, 1..15),
            c in proptest::collection::vec(-50i32..50, 1..15),
        ) {
            let g: Vec<Vec<f64>> = [a, b, c].iter().map(|v| v.iter().map(|&x| x as f64).collect()).collect();
            let t: Vec<Vec<f64>> = g.iter().map(|v| v.iter().map(|&x| (x / 10.0).exp() * 3.0 + 1.0).collect()).collect();
            let k1 = kruskal_wallis(&g).unwrap();
            let k2 = kruskal_wallis(&t).unwrap();
            prop_assert!((k1.h - k2.h).abs() < 1e-9);
            prop_assert!(k1.h >= 0.0);
            for d in dunn_posthoc(&g).unwrap() {
                prop_assert!(d.p_adjusted >= d.p_raw);
                prop_assert!((0.0..=1.0).contains(&d.p_raw));
            }
        }

        #[test]
        fn stats_are_permutation_invariant(mut v in proptest::collection::vec(0.0f64..1.0, 1..200), seed in 0u64..1000) {
            let g1 = GroupStats::from_values("x", &mut v.clone()).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for i in (1..v.len()).rev() {
                let j = rng.random_range(0..=i);
                v.swap(i, j);
            }
            let g2 = GroupStats::from_values("x", &mut v).unwrap();
            prop_assert_eq!(g1, g2);
        }

        #[test]
        fn matching_rate_mean_in_unit_interval(rows in proptest::collection::vec((1u64..30, 0u64..30), 1..50)) {
            let recs: Vec<_> = rows.iter().map(|&(t, m)| rec(Motive::Search, None, t, m.min(t))).collect();
            let s = matching_rate_stats(&recs, GroupBy::Motive);
            for g in s.groups {
                prop_assert!((0.0..=1.0).contains(&g.mean));
            }
        }
    }
}
