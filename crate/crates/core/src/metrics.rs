//! Per-context safe-choice curves and the distances computed from them.
//!
//! An aggregate is the mean, over a cell's valid trials, of the 0/1 safe-choice
//! vector implied by each switch point. Unwanted answers are counted and
//! otherwise ignored.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contexts::{BASELINE, FEMALE, HUMAN_PROXY_SET, MALE, RISK_AVOIDING, RISK_LOVING};
use crate::lottery::{switch_to_choice_vector, SwitchPoint, DECISIONS};
use crate::runner::TrialRecord;

pub type Curve = [f64; DECISIONS];

/// Cells with a smaller valid share than 30 of 35 are flagged.
pub const LOW_CONFIDENCE_VALID: (usize, usize) = (30, 35);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("no valid trials for model {model} context {context}")]
    NoData { model: String, context: String },
    #[error("model {model} has no aggregate for context {context}")]
    MissingContext { model: String, context: String },
    #[error("benchmark: {0}")]
    Benchmark(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Distance {
    #[default]
    Euclidean,
    L1,
}

impl Distance {
    pub fn between(self, u: &Curve, v: &Curve) -> f64 {
        match self {
            Distance::Euclidean => euclidean(u, v),
            Distance::L1 => l1(u, v),
        }
    }

    /// Largest possible distance between two points of `[0,1]^10`.
    pub fn max(self) -> f64 {
        match self {
            Distance::Euclidean => (DECISIONS as f64).sqrt(),
            Distance::L1 => DECISIONS as f64,
        }
    }
}

impl fmt::Display for Distance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Distance::Euclidean => "euclidean",
            Distance::L1 => "l1",
        })
    }
}

impl FromStr for Distance {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "euclidean" | "l2" => Ok(Distance::Euclidean),
            "l1" | "manhattan" => Ok(Distance::L1),
            other => Err(format!(
                "unknown distance {other:?} (expected euclidean or l1)"
            )),
        }
    }
}

pub fn euclidean(u: &Curve, v: &Curve) -> f64 {
    u.iter()
        .zip(v)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

pub fn l1(u: &Curve, v: &Curve) -> f64 {
    u.iter().zip(v).map(|(a, b)| (a - b).abs()).sum()
}

fn difference(u: &Curve, v: &Curve) -> Curve {
    std::array::from_fn(|d| u[d] - v[d])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateVector {
    pub model: String,
    pub context_id: String,
    pub values: Curve,
    pub n_valid: usize,
    pub n_unwanted: usize,
}

impl AggregateVector {
    pub fn is_low_confidence(&self) -> bool {
        let (num, den) = LOW_CONFIDENCE_VALID;
        let total = self.n_valid + self.n_unwanted;
        self.n_valid * den < num * total
    }
}

/// Mean safe-choice curve of the records belonging to `(model, context_id)`.
/// Records for other cells are ignored.
pub fn aggregate<'a>(
    model: &str,
    context_id: &str,
    records: impl IntoIterator<Item = &'a TrialRecord>,
) -> Result<AggregateVector, MetricsError> {
    let mut counts = [0usize; DECISIONS];
    let (mut n_valid, mut n_unwanted) = (0, 0);
    for r in records
        .into_iter()
        .filter(|r| r.model == model && r.context_id == context_id)
    {
        match r.parsed.switch() {
            Some(s) => {
                n_valid += 1;
                for (c, x) in counts.iter_mut().zip(switch_to_choice_vector(s)) {
                    *c += usize::from(x);
                }
            }
            None => n_unwanted += 1,
        }
    }
    if n_valid == 0 {
        return Err(MetricsError::NoData {
            model: model.to_owned(),
            context: context_id.to_owned(),
        });
    }
    Ok(AggregateVector {
        model: model.to_owned(),
        context_id: context_id.to_owned(),
        values: std::array::from_fn(|d| counts[d] as f64 / n_valid as f64),
        n_valid,
        n_unwanted,
    })
}

/// Aggregates keyed by context id, for one model.
pub type ModelAggregates = BTreeMap<String, AggregateVector>;

fn need<'a>(aggs: &'a ModelAggregates, ctx: &str) -> Result<&'a AggregateVector, MetricsError> {
    aggs.get(ctx).ok_or_else(|| MetricsError::MissingContext {
        model: aggs
            .values()
            .next()
            .map(|a| a.model.clone())
            .unwrap_or_default(),
        context: ctx.to_owned(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manipulation {
    pub mora: f64,
    /// Risk-avoiding minus risk-loving, per decision.
    pub signed: Curve,
    pub signed_sum: f64,
    /// Some decision has the loving curve strictly safer than the avoiding one.
    pub inverted: bool,
}

/// Distance between the risk-avoiding and risk-loving curves.
pub fn mora(aggs: &ModelAggregates, distance: Distance) -> Result<Manipulation, MetricsError> {
    let avoid = need(aggs, RISK_AVOIDING)?;
    let love = need(aggs, RISK_LOVING)?;
    let signed = difference(&avoid.values, &love.values);
    Ok(Manipulation {
        mora: distance.between(&avoid.values, &love.values),
        signed_sum: signed.iter().sum(),
        inverted: signed.iter().any(|x| *x < 0.0),
        signed,
    })
}

/// Mean of the human-proxy curves.
pub fn human_proxy_mean(aggs: &ModelAggregates) -> Result<Curve, MetricsError> {
    let mut sum = [0.0; DECISIONS];
    for ctx in HUMAN_PROXY_SET {
        for (s, v) in sum.iter_mut().zip(need(aggs, ctx)?.values) {
            *s += v;
        }
    }
    let h = HUMAN_PROXY_SET.len() as f64;
    Ok(sum.map(|s| s / h))
}

/// Distance from the human-proxy mean curve to a human benchmark.
pub fn dhra(
    aggs: &ModelAggregates,
    benchmark: &HumanBenchmark,
    distance: Distance,
) -> Result<f64, MetricsError> {
    Ok(distance.between(&human_proxy_mean(aggs)?, &benchmark.values))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenderGap {
    pub distance: f64,
    /// Female minus male, per decision; positive means the female persona chose safe more often.
    pub signed: Curve,
    pub signed_sum: f64,
}

pub fn gender_distance(
    aggs: &ModelAggregates,
    distance: Distance,
) -> Result<GenderGap, MetricsError> {
    let f = need(aggs, FEMALE)?;
    let m = need(aggs, MALE)?;
    let signed = difference(&f.values, &m.values);
    Ok(GenderGap {
        distance: distance.between(&f.values, &m.values),
        signed_sum: signed.iter().sum(),
        signed,
    })
}

/// Mean switch point over valid records.
pub fn mean_switch<'a>(
    records: impl IntoIterator<Item = &'a TrialRecord>,
) -> Result<f64, MetricsError> {
    let mut n = 0u64;
    let mut sum = 0u64;
    let mut cell = None;
    for r in records {
        cell.get_or_insert_with(|| (r.model.clone(), r.context_id.clone()));
        if let Some(s) = r.parsed.switch() {
            n += 1;
            sum += u64::from(s.value());
        }
    }
    if n == 0 {
        let (model, context) = cell.unwrap_or_default();
        return Err(MetricsError::NoData { model, context });
    }
    Ok(sum as f64 / n as f64)
}

/// Reference curve for the distance-to-human metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanBenchmark {
    pub values: Curve,
    pub source: String,
}

impl HumanBenchmark {
    pub fn new(values: Curve, source: impl Into<String>) -> Result<Self, MetricsError> {
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(MetricsError::Benchmark(format!("value {v} outside [0,1]")));
        }
        Ok(Self {
            values,
            source: source.into(),
        })
    }

    /// Theoretical risk-neutral curve (switch at decision 5). Not human data;
    /// meant for tests and pipeline checks.
    pub fn risk_neutral_reference() -> Self {
        let v = switch_to_choice_vector(SwitchPoint::new(5).expect("5 is a valid switch"));
        Self {
            values: v.map(f64::from),
            source: "theoretical risk-neutral agent (switch at decision 5); NOT human data".into(),
        }
    }

    /// Text format: a `source: <citation>` line, then ten numbers in `[0,1]`
    /// separated by whitespace, commas or newlines. `#` starts a comment line.
    pub fn parse(src: &str) -> Result<Self, MetricsError> {
        let mut source = None;
        let mut values = Vec::new();
        for line in src.lines().map(str::trim) {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(cite) = line.strip_prefix("source:") {
                source = Some(cite.trim().to_owned());
                continue;
            }
            for tok in line.split(|c: char| c == ',' || c.is_whitespace()) {
                if tok.is_empty() {
                    continue;
                }
                values.push(
                    tok.parse::<f64>()
                        .map_err(|e| MetricsError::Benchmark(format!("bad value {tok:?}: {e}")))?,
                );
            }
        }
        let source = source
            .filter(|s| !s.is_empty())
            .ok_or_else(|| MetricsError::Benchmark("missing `source:` citation line".into()))?;
        let values: Curve = values.try_into().map_err(|v: Vec<f64>| {
            MetricsError::Benchmark(format!("expected {DECISIONS} values, found {}", v.len()))
        })?;
        Self::new(values, source)
    }

    pub fn load(path: &Path) -> Result<Self, MetricsError> {
        let src = std::fs::read_to_string(path)
            .map_err(|e| MetricsError::Benchmark(format!("{}: {e}", path.display())))?;
        Self::parse(&src)
    }

    pub fn to_text(&self) -> String {
        let vals: Vec<String> = self.values.iter().map(f64::to_string).collect();
        format!("source: {}\n{}\n", self.source, vals.join("\n"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextStats {
    pub n_valid: usize,
    pub n_unwanted: usize,
    pub mean_switch: Option<f64>,
    pub curve: Option<Curve>,
    pub low_confidence: bool,
}

/// Everything reported for one model. Metrics whose contexts are missing are
/// `None`, with the reason in `notes`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetrics {
    pub model: String,
    pub distance: Distance,
    pub mora: Option<f64>,
    pub signed_manipulation: Option<Curve>,
    pub manipulation_inverted: Option<bool>,
    pub dhra: Option<f64>,
    pub gender_distance: Option<f64>,
    pub gender_signed: Option<Curve>,
    pub mean_switch_by_context: BTreeMap<String, f64>,
    pub contexts: BTreeMap<String, ContextStats>,
    pub notes: Vec<String>,
}

impl ModelMetrics {
    pub fn low_confidence_contexts(&self) -> Vec<&str> {
        self.contexts
            .iter()
            .filter(|(_, s)| s.low_confidence)
            .map(|(c, _)| c.as_str())
            .collect()
    }
}

pub fn model_aggregates(model: &str, records: &[TrialRecord]) -> ModelAggregates {
    let mut ctxs: Vec<&str> = records
        .iter()
        .filter(|r| r.model == model)
        .map(|r| r.context_id.as_str())
        .collect();
    ctxs.sort_unstable();
    ctxs.dedup();
    ctxs.into_iter()
        .filter_map(|c| aggregate(model, c, records).ok().map(|a| (c.to_owned(), a)))
        .collect()
}

pub fn compute_model_metrics(
    model: &str,
    records: &[TrialRecord],
    benchmark: Option<&HumanBenchmark>,
    distance: Distance,
) -> ModelMetrics {
    let mine: Vec<&TrialRecord> = records.iter().filter(|r| r.model == model).collect();
    let aggs = model_aggregates(model, records);
    let mut notes = Vec::new();

    let mut contexts = BTreeMap::new();
    let mut by_ctx: BTreeMap<&str, Vec<&TrialRecord>> = BTreeMap::new();
    for r in &mine {
        by_ctx.entry(r.context_id.as_str()).or_default().push(r);
    }
    let mut mean_switch_by_context = BTreeMap::new();
    for (ctx, recs) in &by_ctx {
        let agg = aggs.get(*ctx);
        let n_valid = recs.iter().filter(|r| r.is_valid()).count();
        let ms = mean_switch(recs.iter().copied()).ok();
        if let Some(m) = ms {
            mean_switch_by_context.insert((*ctx).to_owned(), m);
        } else {
            notes.push(format!("context {ctx}: no valid trials"));
        }
        contexts.insert(
            (*ctx).to_owned(),
            ContextStats {
                n_valid,
                n_unwanted: recs.len() - n_valid,
                mean_switch: ms,
                curve: agg.map(|a| a.values),
                low_confidence: agg.is_none_or(AggregateVector::is_low_confidence),
            },
        );
    }

    let manip = mora(&aggs, distance)
        .map_err(|e| notes.push(format!("mora: {e}")))
        .ok();
    let gender = gender_distance(&aggs, distance)
        .map_err(|e| notes.push(format!("gender distance: {e}")))
        .ok();
    let dhra_value = match benchmark {
        Some(b) => dhra(&aggs, b, distance)
            .map_err(|e| notes.push(format!("dhra: {e}")))
            .ok(),
        None => {
            if aggs.contains_key(BASELINE) {
                notes.push("dhra: no benchmark supplied".into());
            }
            None
        }
    };

    ModelMetrics {
        model: model.to_owned(),
        distance,
        mora: manip.as_ref().map(|m| m.mora),
        signed_manipulation: manip.as_ref().map(|m| m.signed),
        manipulation_inverted: manip.as_ref().map(|m| m.inverted),
        dhra: dhra_value,
        gender_distance: gender.as_ref().map(|g| g.distance),
        gender_signed: gender.as_ref().map(|g| g.signed),
        mean_switch_by_context,
        contexts,
        notes,
    }
}

/// Metrics for every model present in `records`, sorted by model name.
pub fn compute_all(
    records: &[TrialRecord],
    benchmark: Option<&HumanBenchmark>,
    distance: Distance,
) -> Vec<ModelMetrics> {
    let mut models: Vec<&str> = records.iter().map(|r| r.model.as_str()).collect();
    models.sort_unstable();
    models.dedup();
    models
        .into_iter()
        .map(|m| compute_model_metrics(m, records, benchmark, distance))
        .collect()
}
