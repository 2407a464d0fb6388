//! Metric tables, rankings, curve data and request accounting, written as
//! CSV, JSON or Markdown. Output bytes depend only on the inputs.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::model_catalog;
use crate::lottery::DECISIONS;
use crate::metrics::{Curve, Distance, HumanBenchmark, ModelMetrics};
use crate::runner::{totals_from, FollowupRecord, TrialRecord};

pub const METRICS_CSV: &str = "metrics.csv";
pub const RANKINGS_CSV: &str = "rankings.csv";
pub const CURVES_CSV: &str = "curves.csv";
pub const ACCOUNTING_CSV: &str = "accounting.csv";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_MD: &str = "report.md";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("writing {path}: {source}")]
    Write { path: PathBuf, source: io::Error },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
    Markdown,
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            "md" | "markdown" => Ok(Format::Markdown),
            other => Err(format!(
                "unknown format {other:?} (expected csv, json or md)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankEntry {
    pub rank: usize,
    pub model: String,
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rankings {
    /// Most manipulable first.
    pub mora: Vec<RankEntry>,
    /// Most human-like first.
    pub dhra: Vec<RankEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSeries {
    pub model: String,
    pub context_id: String,
    pub n_valid: usize,
    pub values: Curve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccountingRow {
    pub model: String,
    pub company: Option<String>,
    pub reasoning: Option<String>,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub unwanted_answers: u64,
    pub api_requests: u64,
    pub cells: u64,
    pub estimated_token_cells: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub distance: Distance,
    pub benchmark_source: Option<String>,
    pub metrics_table: Vec<ModelMetrics>,
    pub rankings: Rankings,
    pub curves: Vec<CurveSeries>,
    pub accounting: Vec<AccountingRow>,
}

fn rank(
    metrics: &[ModelMetrics],
    value: impl Fn(&ModelMetrics) -> Option<f64>,
    descending: bool,
) -> Vec<RankEntry> {
    let mut rows: Vec<(String, Option<f64>)> = metrics
        .iter()
        .map(|m| (m.model.clone(), value(m)))
        .collect();
    rows.sort_by(|(ma, a), (mb, b)| {
        let by_value = match (a, b) {
            (Some(a), Some(b)) if descending => b.total_cmp(a),
            (Some(a), Some(b)) => a.total_cmp(b),
            (Some(_), None) => std::cmp::Ordering::Less,
            (None, Some(_)) => std::cmp::Ordering::Greater,
            (None, None) => std::cmp::Ordering::Equal,
        };
        by_value.then_with(|| ma.cmp(mb))
    });
    rows.into_iter()
        .enumerate()
        .map(|(i, (model, value))| RankEntry {
            rank: i + 1,
            model,
            value,
        })
        .collect()
}

/// MoRA descending, models without a value last, ties by name.
pub fn rank_by_mora(metrics: &[ModelMetrics]) -> Vec<RankEntry> {
    rank(metrics, |m| m.mora, true)
}

/// DHRA ascending, models without a value last, ties by name.
pub fn rank_by_dhra(metrics: &[ModelMetrics]) -> Vec<RankEntry> {
    rank(metrics, |m| m.dhra, false)
}

impl ReportBundle {
    pub fn build(
        mut metrics: Vec<ModelMetrics>,
        records: &[TrialRecord],
        followups: &[FollowupRecord],
        benchmark: Option<&HumanBenchmark>,
        distance: Distance,
    ) -> Self {
        metrics.sort_by(|a, b| a.model.cmp(&b.model));
        let curves = metrics
            .iter()
            .flat_map(|m| {
                m.contexts.iter().filter_map(|(ctx, s)| {
                    s.curve.map(|values| CurveSeries {
                        model: m.model.clone(),
                        context_id: ctx.clone(),
                        n_valid: s.n_valid,
                        values,
                    })
                })
            })
            .collect();
        let catalog = model_catalog();
        let accounting = totals_from(records, followups)
            .into_iter()
            .map(|(model, t)| {
                let meta = catalog.iter().find(|c| c.model == model);
                AccountingRow {
                    company: meta.map(|c| c.company.to_owned()),
                    reasoning: meta.map(|c| c.reasoning.to_owned()),
                    input_tokens: t.total_input_tokens(),
                    output_tokens: t.output_tokens + t.followup_output_tokens,
                    unwanted_answers: t.unwanted,
                    api_requests: t.total_requests(),
                    cells: t.cells,
                    estimated_token_cells: t.estimated_token_cells,
                    model,
                }
            })
            .collect();
        Self {
            distance,
            benchmark_source: benchmark.map(|b| b.source.clone()),
            rankings: Rankings {
                mora: rank_by_mora(&metrics),
                dhra: rank_by_dhra(&metrics),
            },
            metrics_table: metrics,
            curves,
            accounting,
        }
    }

    pub fn to_json(&self) -> Result<String, ReportError> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(s: &str) -> Result<Self, ReportError> {
        Ok(serde_json::from_str(s)?)
    }

    /// File name and contents for each output of `format`.
    pub fn render(&self, format: Format) -> Result<Vec<(&'static str, String)>, ReportError> {
        Ok(match format {
            Format::Json => vec![(REPORT_JSON, self.to_json()?)],
            Format::Markdown => vec![(REPORT_MD, self.markdown())],
            Format::Csv => vec![
                (METRICS_CSV, self.metrics_csv()?),
                (RANKINGS_CSV, self.rankings_csv()?),
                (CURVES_CSV, self.curves_csv()?),
                (ACCOUNTING_CSV, self.accounting_csv()?),
            ],
        })
    }

    fn metrics_csv(&self) -> Result<String, ReportError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "model",
            "distance",
            "mora",
            "manipulation_signed_sum",
            "manipulation_inverted",
            "dhra",
            "gender_distance",
            "gender_signed_sum",
            "low_confidence_contexts",
        ])?;
        for m in &self.metrics_table {
            w.write_record([
                m.model.clone(),
                m.distance.to_string(),
                opt(m.mora),
                opt(m.signed_manipulation.map(|v| v.iter().sum())),
                m.manipulation_inverted
                    .map(|b| b.to_string())
                    .unwrap_or_default(),
                opt(m.dhra),
                opt(m.gender_distance),
                opt(m.gender_signed.map(|v| v.iter().sum())),
                m.low_confidence_contexts().join(";"),
            ])?;
        }
        finish(w)
    }

    fn rankings_csv(&self) -> Result<String, ReportError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["metric", "rank", "model", "value"])?;
        for (name, rows) in [("mora", &self.rankings.mora), ("dhra", &self.rankings.dhra)] {
            for r in rows {
                w.write_record([
                    name.to_owned(),
                    r.rank.to_string(),
                    r.model.clone(),
                    opt(r.value),
                ])?;
            }
        }
        finish(w)
    }

    fn curves_csv(&self) -> Result<String, ReportError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "model",
            "context_id",
            "decision",
            "safe_fraction",
            "n_valid",
        ])?;
        for c in &self.curves {
            for (d, v) in c.values.iter().enumerate() {
                w.write_record([
                    c.model.clone(),
                    c.context_id.clone(),
                    (d + 1).to_string(),
                    v.to_string(),
                    c.n_valid.to_string(),
                ])?;
            }
        }
        finish(w)
    }

    fn accounting_csv(&self) -> Result<String, ReportError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "company",
            "model",
            "reasoning",
            "input_tokens",
            "unwanted_answers",
            "api_requests",
            "output_tokens",
            "cells",
            "estimated_token_cells",
        ])?;
        for a in &self.accounting {
            w.write_record([
                a.company.clone().unwrap_or_default(),
                a.model.clone(),
                a.reasoning.clone().unwrap_or_default(),
                a.input_tokens.to_string(),
                a.unwanted_answers.to_string(),
                a.api_requests.to_string(),
                a.output_tokens.to_string(),
                a.cells.to_string(),
                a.estimated_token_cells.to_string(),
            ])?;
        }
        finish(w)
    }

    fn markdown(&self) -> String {
        let mut s = String::from("# Risk-attitude run summary\n\n");
        let _ = writeln!(s, "Distance: {}", self.distance);
        let _ = writeln!(
            s,
            "Human benchmark: {}\n",
            self.benchmark_source.as_deref().unwrap_or("none")
        );

        s.push_str("## Metrics\n\n| model | MoRA | inverted | DHRA | gender distance | low-confidence contexts |\n|---|---|---|---|---|---|\n");
        for m in &self.metrics_table {
            let _ = writeln!(
                s,
                "| {} | {} | {} | {} | {} | {} |",
                m.model,
                fixed(m.mora),
                m.manipulation_inverted
                    .map(|b| if b { "yes" } else { "no" })
                    .unwrap_or("-"),
                fixed(m.dhra),
                fixed(m.gender_distance),
                m.low_confidence_contexts().join(", "),
            );
        }

        for (title, rows) in [
            ("MoRA ranking (most manipulable first)", &self.rankings.mora),
            ("DHRA ranking (closest to human first)", &self.rankings.dhra),
        ] {
            let _ = write!(
                s,
                "\n## {title}\n\n| rank | model | value |\n|---|---|---|\n"
            );
            for r in rows {
                let _ = writeln!(s, "| {} | {} | {} |", r.rank, r.model, fixed(r.value));
            }
        }

        s.push_str("\n## Mean switch point by context\n\n| model | context | mean switch | valid | unwanted |\n|---|---|---|---|---|\n");
        for m in &self.metrics_table {
            for (ctx, c) in &m.contexts {
                let _ = writeln!(
                    s,
                    "| {} | {} | {} | {} | {} |",
                    m.model,
                    ctx,
                    fixed(c.mean_switch),
                    c.n_valid,
                    c.n_unwanted
                );
            }
        }

        s.push_str("\n## Accounting\n\n| company | model | reasoning | input tokens | unwanted answers | API requests |\n|---|---|---|---|---|---|\n");
        for a in &self.accounting {
            let _ = writeln!(
                s,
                "| {} | {} | {} | {} | {} | {} |",
                a.company.as_deref().unwrap_or("-"),
                a.model,
                a.reasoning.as_deref().unwrap_or("-"),
                a.input_tokens,
                a.unwanted_answers,
                a.api_requests
            );
        }

        let notes: Vec<String> = self
            .metrics_table
            .iter()
            .flat_map(|m| m.notes.iter().map(move |n| format!("- {}: {n}", m.model)))
            .collect();
        if !notes.is_empty() {
            s.push_str("\n## Notes\n\n");
            for n in notes {
                s.push_str(&n);
                s.push('\n');
            }
        }
        s
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn fixed(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into())
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String, ReportError> {
    let bytes = w
        .into_inner()
        .map_err(|e| csv::Error::from(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is built from strings"))
}

/// Writes the files for `format` into `out_dir`. On failure, files written by
/// this call are removed, and so is `out_dir` if this call created it.
pub fn emit(
    bundle: &ReportBundle,
    format: Format,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, ReportError> {
    let files = bundle.render(format)?;
    let created_dir = !out_dir.exists();
    let mut written = Vec::new();
    let result = (|| {
        fs::create_dir_all(out_dir).map_err(|source| ReportError::Write {
            path: out_dir.to_owned(),
            source,
        })?;
        for (name, body) in &files {
            let path = out_dir.join(name);
            written.push(path.clone());
            fs::write(&path, body).map_err(|source| ReportError::Write {
                path: path.clone(),
                source,
            })?;
        }
        Ok(())
    })();
    match result {
        Ok(()) => Ok(written),
        Err(e) => {
            for p in &written {
                let _ = fs::remove_file(p);
            }
            if created_dir {
                let _ = fs::remove_dir_all(out_dir);
            }
            Err(e)
        }
    }
}

/// Checks a curve is a valid safe-choice series: values in `[0,1]`, nonincreasing.
pub fn curve_is_well_formed(c: &Curve) -> bool {
    c.len() == DECISIONS
        && c.iter().all(|v| (0.0..=1.0).contains(v))
        && c.windows(2).all(|w| w[0] >= w[1])
}
