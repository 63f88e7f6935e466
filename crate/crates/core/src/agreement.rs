//! Inter-rater agreement: confusion matrices, Cohen's kappa with an
//! asymptotic 95% interval, one-vs-rest kappa per category, and the list of
//! disagreements.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Motive;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AgreementError {
    #[error("the two codings share no items")]
    NoCommonItems,
    #[error("at least two coded items are required, got {0}")]
    TooFewItems(u64),
    #[error("both raters used one identical category; kappa is undefined")]
    DegenerateMarginals,
    #[error("confusion matrix must be square and non-empty")]
    NotSquare,
}

const Z_95: f64 = 1.96;

/// Square count matrix: rows are rater A's labels, columns rater B's.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(labels: Vec<String>, counts: Vec<Vec<u64>>) -> Result<Self, AgreementError> {
        if labels.is_empty() || counts.len() != labels.len() || counts.iter().any(|r| r.len() != labels.len()) {
            return Err(AgreementError::NotSquare);
        }
        Ok(ConfusionMatrix { labels, counts })
    }

    /// Matrix with generic labels `0..k`.
    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self, AgreementError> {
        let labels = (0..counts.len()).map(|i| i.to_string()).collect();
        Self::new(labels, counts)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.labels.len()).map(|i| self.counts[i][i]).sum()
    }

    pub fn observed_agreement(&self) -> f64 {
        self.trace() as f64 / self.total() as f64
    }

    pub fn transpose(&self) -> Self {
        let k = self.labels.len();
        let counts = (0..k).map(|i| (0..k).map(|j| self.counts[j][i]).collect()).collect();
        ConfusionMatrix { labels: self.labels.clone(), counts }
    }

    fn row_sum(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    fn col_sum(&self, j: usize) -> u64 {
        self.counts.iter().map(|r| r[j]).sum()
    }
}

/// Confusion matrix over the seven coding labels for the prompts both
/// raters coded.
pub fn confusion_matrix(
    codes_a: &BTreeMap<String, Motive>,
    codes_b: &BTreeMap<String, Motive>,
) -> Result<ConfusionMatrix, AgreementError> {
    let index = |m: Motive| Motive::CODING.iter().position(|c| *c == m);
    let k = Motive::CODING.len();
    let mut counts = vec![vec![0u64; k]; k];
    let mut common = 0;
    for (prompt, a) in codes_a {
        let Some(b) = codes_b.get(prompt) else { continue };
        let (Some(i), Some(j)) = (index(*a), index(*b)) else { continue };
        counts[i][j] += 1;
        common += 1;
    }
    if common == 0 {
        return Err(AgreementError::NoCommonItems);
    }
    ConfusionMatrix::new(Motive::CODING.iter().map(|m| m.to_string()).collect(), counts)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KappaResult {
    pub kappa: f64,
    pub po: f64,
    pub pe: f64,
    pub se: f64,
    pub ci95: (f64, f64),
    pub n: u64,
}

/// Kappa, its asymptotic standard error sqrt(po(1−po) / (n(1−pe)²)) and
/// the 95% interval κ ± 1.96·se clamped to [−1, 1].
pub fn kappa_from_agreement(po: f64, pe: f64, n: u64) -> Result<KappaResult, AgreementError> {
    if n < 2 {
        return Err(AgreementError::TooFewItems(n));
    }
    if pe >= 1.0 {
        return Err(AgreementError::DegenerateMarginals);
    }
    let kappa = (po - pe) / (1.0 - pe);
    let se = (po * (1.0 - po) / (n as f64 * (1.0 - pe) * (1.0 - pe))).sqrt();
    let lo = (kappa - Z_95 * se).max(-1.0);
    let hi = (kappa + Z_95 * se).min(1.0);
    Ok(KappaResult { kappa, po, pe, se, ci95: (lo, hi), n })
}

/// Cohen's kappa of a confusion matrix.
pub fn cohen_kappa(m: &ConfusionMatrix) -> Result<KappaResult, AgreementError> {
    let n = m.total();
    if n < 2 {
        return Err(AgreementError::TooFewItems(n));
    }
    let nf = n as f64;
    let k = m.labels.len();
    let pe: f64 = (0..k).map(|i| m.row_sum(i) as f64 * m.col_sum(i) as f64).sum::<f64>() / (nf * nf);
    // pe == 1 exactly when both raters put every item in one shared category
    let single = (0..k).any(|i| m.row_sum(i) == n && m.col_sum(i) == n);
    if single {
        return Err(AgreementError::DegenerateMarginals);
    }
    kappa_from_agreement(m.trace() as f64 / nf, pe, n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryKappa {
    pub label: String,
    pub result: KappaResult,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PerCategoryKappa {
    pub categories: Vec<CategoryKappa>,
    pub skipped: Vec<String>,
}

/// One-vs-rest kappa for every label either rater used.
pub fn per_category_kappa(m: &ConfusionMatrix) -> Result<PerCategoryKappa, AgreementError> {
    let n = m.total();
    if n < 2 {
        return Err(AgreementError::TooFewItems(n));
    }
    let mut out = PerCategoryKappa::default();
    for (c, label) in m.labels.iter().enumerate() {
        let (row, col) = (m.row_sum(c), m.col_sum(c));
        if row == 0 && col == 0 {
            out.skipped.push(format!("{label}: used by neither rater"));
            continue;
        }
        let both = m.counts[c][c];
        let only_a = row - both;
        let only_b = col - both;
        let neither = n - both - only_a - only_b;
        let collapsed = ConfusionMatrix::new(
            vec![label.clone(), format!("not {label}")],
            vec![vec![both, only_a], vec![only_b, neither]],
        )?;
        match cohen_kappa(&collapsed) {
            Ok(result) => out.categories.push(CategoryKappa { label: label.clone(), result }),
            Err(e) => out.skipped.push(format!("{label}: {e}")),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Disagreement {
    pub prompt: String,
    pub motive_a: Motive,
    pub motive_b: Motive,
}

/// Common prompts coded differently, most frequent first (ties
/// lexicographic). Prompts missing from `frequency` count as zero.
pub fn disagreements(
    codes_a: &BTreeMap<String, Motive>,
    codes_b: &BTreeMap<String, Motive>,
    frequency: &HashMap<String, u64>,
) -> Vec<Disagreement> {
    let mut out: Vec<Disagreement> = codes_a
        .iter()
        .filter_map(|(p, a)| {
            let b = codes_b.get(p)?;
            (a != b).then(|| Disagreement { prompt: p.clone(), motive_a: *a, motive_b: *b })
        })
        .collect();
    let freq = |p: &str| frequency.get(p).copied().unwrap_or(0);
    out.sort_by(|x, y| freq(&y.prompt).cmp(&freq(&x.prompt)).then_with(|| x.prompt.cmp(&y.prompt)));
    out
}
