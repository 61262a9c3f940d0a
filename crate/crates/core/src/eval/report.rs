//! Aggregation and rendering of cross-validation results.

use super::cv::{CvConfig, FoldEntry};
use super::metrics::{nan_as_null, Metrics};
use crate::model::Variant;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

/// Mean and spread of one metric across runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    #[serde(with = "nan_as_null")]
    pub mean: f64,
    /// Sample standard deviation of the per-run means.
    #[serde(with = "nan_as_null")]
    pub sd: f64,
    /// Mean over the folds of each run; `None` when no fold defined it.
    pub per_run: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub variant: Variant,
    pub entries: usize,
    pub sensitivity: Summary,
    pub specificity: Summary,
    pub combined: Summary,
    pub auc: Summary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vote_combined: Option<Summary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: CvConfig,
    pub base_seed: u64,
    pub variants: Vec<Variant>,
    pub n_items: usize,
    pub dropped_tasks: Vec<String>,
    pub entries: Vec<FoldEntry>,
    pub aggregates: Vec<Aggregate>,
}

impl EvalReport {
    pub fn aggregate_for(&self, variant: Variant) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.variant == variant)
    }

    pub fn entries_for(&self, variant: Variant) -> impl Iterator<Item = &FoldEntry> {
        self.entries.iter().filter(move |e| e.variant == variant)
    }
}

/// Mean and sample standard deviation of the finite values.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, f64::NAN);
    }
    let ss: f64 = v.iter().map(|x| (x - mean) * (x - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

fn summarize(entries: &[&FoldEntry], runs: &[usize], get: impl Fn(&FoldEntry) -> Option<f64>) -> Summary {
    let per_run: Vec<f64> = runs
        .iter()
        .map(|&r| {
            let vals: Vec<f64> = entries.iter().filter(|e| e.run == r).filter_map(|e| get(e)).collect();
            mean_sd(&vals).0
        })
        .collect();
    let (mean, sd) = mean_sd(&per_run);
    Summary {
        mean,
        sd,
        per_run: per_run.iter().map(|v| v.is_finite().then_some(*v)).collect(),
    }
}

/// Per-run fold means, then mean and sample sd across runs, per variant.
pub fn aggregate(entries: &[FoldEntry], variants: &[Variant]) -> Vec<Aggregate> {
    variants
        .iter()
        .map(|&variant| {
            let mine: Vec<&FoldEntry> = entries.iter().filter(|e| e.variant == variant).collect();
            let mut runs: Vec<usize> = mine.iter().map(|e| e.run).collect();
            runs.sort_unstable();
            runs.dedup();
            let m = |f: fn(&Metrics) -> Option<f64>| summarize(&mine, &runs, move |e| f(&e.metrics));
            let has_votes = mine.iter().any(|e| e.vote_metrics.is_some());
            Aggregate {
                variant,
                entries: mine.len(),
                sensitivity: m(|x| Some(x.sensitivity)),
                specificity: m(|x| Some(x.specificity)),
                combined: m(|x| Some(x.combined)),
                auc: m(|x| x.auc),
                vote_combined: has_votes
                    .then(|| summarize(&mine, &runs, |e| e.vote_metrics.as_ref().map(|v| v.combined))),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Table,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "table" => Ok(ReportFormat::Table),
            other => Err(format!("unknown format `{other}` (expected json or table)")),
        }
    }
}

/// Half-up rounding to two decimals. The small bias absorbs binary
/// representation error, so 0.775 renders as 0.78.
fn two_decimals(v: f64) -> String {
    if v.is_finite() {
        format!("{:.2}", ((v * 100.0) + 0.5 + 1e-9).floor() / 100.0)
    } else {
        "-".to_string()
    }
}

fn render_table(report: &EvalReport) -> String {
    let mut out = format!(
        "{:<8}{:>8}{:>8}{:>10}{:>8}{:>10}{:>10}{:>10}{:>10}\n",
        "Model", "Sens.", "Spec.", "Combined", "AUC", "sd Sens.", "sd Spec.", "sd Comb.", "sd AUC"
    );
    for a in &report.aggregates {
        let _ = writeln!(
            out,
            "{:<8}{:>8}{:>8}{:>10}{:>8}{:>10}{:>10}{:>10}{:>10}",
            a.variant.display_name(),
            two_decimals(a.sensitivity.mean),
            two_decimals(a.specificity.mean),
            two_decimals(a.combined.mean),
            two_decimals(a.auc.mean),
            two_decimals(a.sensitivity.sd),
            two_decimals(a.specificity.sd),
            two_decimals(a.combined.sd),
            two_decimals(a.auc.sd),
        );
    }
    out
}

/// Renders a report as pretty JSON or as a fixed-width table.
pub fn emit_report(report: &EvalReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(report).expect("report serializes");
            s.push('\n');
            s
        }
        ReportFormat::Table => render_table(report),
    }
}
