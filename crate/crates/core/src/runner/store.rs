//! On-disk layout of a run directory and append-only record persistence.
//!
//! ```text
//! <run_dir>/manifest.json            config snapshot, timestamps, totals
//! <run_dir>/records.jsonl            one TrialRecord per line
//! <run_dir>/followups.jsonl          deduction transcripts, never used for metrics
//! <run_dir>/records.quarantine.jsonl lines that failed to parse, with line numbers
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::parse::{ParsedAnswer, UnwantedReason};
use super::RunError;
use crate::backends::{CallKind, CompletionResult, ReplayEntry};
use crate::contexts::ChatMessage;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const RECORDS_FILE: &str = "records.jsonl";
pub const FOLLOWUPS_FILE: &str = "followups.jsonl";
pub const QUARANTINE_FILE: &str = "records.quarantine.jsonl";

/// Records between fsyncs.
pub const SYNC_BATCH: usize = 32;

/// (model, context, trial)
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellKey {
    pub model: String,
    pub context_id: String,
    pub trial: u32,
}

impl CellKey {
    pub fn new(model: &str, context_id: &str, trial: u32) -> Self {
        Self {
            model: model.to_owned(),
            context_id: context_id.to_owned(),
            trial,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub model: String,
    pub context_id: String,
    pub trial: u32,
    /// Text of the last completion received, empty if none arrived.
    pub raw_text: String,
    pub parsed: ParsedAnswer,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub tokens_estimated: bool,
    /// API requests for this cell, retries and re-asks included.
    pub attempts: u32,
    /// Fresh-conversation re-asks after an unusable answer.
    pub reasks: u32,
    pub latency_ms: u64,
    pub timestamp: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Every completion received for this cell, in order.
    #[serde(default)]
    pub exchanges: Vec<CompletionResult>,
}

impl TrialRecord {
    pub fn key(&self) -> CellKey {
        CellKey::new(&self.model, &self.context_id, self.trial)
    }

    pub fn is_valid(&self) -> bool {
        self.parsed.is_valid()
    }

    /// Copy with wall-clock fields zeroed, for run-to-run comparison.
    pub fn without_timing(&self) -> Self {
        let mut r = self.clone();
        r.timestamp = DateTime::<Utc>::UNIX_EPOCH;
        r.latency_ms = 0;
        for e in &mut r.exchanges {
            e.latency_ms = 0;
        }
        r
    }

    pub(crate) fn from_exchanges(
        key: &CellKey,
        exchanges: Vec<CompletionResult>,
        parsed: ParsedAnswer,
        extra_attempts: u32,
        error: Option<String>,
    ) -> Self {
        let sum = |f: fn(&CompletionResult) -> u64| exchanges.iter().map(f).sum::<u64>();
        Self {
            model: key.model.clone(),
            context_id: key.context_id.clone(),
            trial: key.trial,
            raw_text: exchanges.last().map(|e| e.text.clone()).unwrap_or_default(),
            parsed,
            input_tokens: sum(|e| e.input_tokens),
            output_tokens: sum(|e| e.output_tokens),
            tokens_estimated: exchanges.iter().any(|e| e.tokens_estimated),
            attempts: exchanges.iter().map(|e| e.attempt).sum::<u32>() + extra_attempts,
            reasks: (exchanges.len() as u32).saturating_sub(1)
                + u32::from(error.is_some() && !exchanges.is_empty()),
            latency_ms: sum(|e| e.latency_ms),
            timestamp: Utc::now(),
            error,
            exchanges,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FollowupRecord {
    pub model: String,
    pub context_id: String,
    pub trial: u32,
    pub messages: Vec<ChatMessage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<CompletionResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub attempts: u32,
    pub timestamp: DateTime<Utc>,
}

impl FollowupRecord {
    pub fn key(&self) -> CellKey {
        CellKey::new(&self.model, &self.context_id, self.trial)
    }
}

/// Per-model sums; the manifest's copy must equal these recomputed from records.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelTotals {
    pub cells: u64,
    pub valid: u64,
    pub unwanted: u64,
    pub unwanted_by_reason: BTreeMap<UnwantedReason, u64>,
    pub reasks: u64,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub estimated_token_cells: u64,
    /// Elicitation requests, retries and re-asks included.
    pub api_requests: u64,
    pub followup_requests: u64,
    pub followup_input_tokens: u64,
    pub followup_output_tokens: u64,
}

impl ModelTotals {
    pub fn total_requests(&self) -> u64 {
        self.api_requests + self.followup_requests
    }

    pub fn total_input_tokens(&self) -> u64 {
        self.input_tokens + self.followup_input_tokens
    }
}

pub fn totals_from(
    records: &[TrialRecord],
    followups: &[FollowupRecord],
) -> BTreeMap<String, ModelTotals> {
    let mut out: BTreeMap<String, ModelTotals> = BTreeMap::new();
    for r in records {
        let t = out.entry(r.model.clone()).or_default();
        t.cells += 1;
        match r.parsed {
            ParsedAnswer::Switch(_) => t.valid += 1,
            ParsedAnswer::Unwanted(why) => {
                t.unwanted += 1;
                *t.unwanted_by_reason.entry(why).or_default() += 1;
            }
        }
        t.reasks += u64::from(r.reasks);
        t.input_tokens += r.input_tokens;
        t.output_tokens += r.output_tokens;
        t.estimated_token_cells += u64::from(r.tokens_estimated);
        t.api_requests += u64::from(r.attempts);
    }
    for f in followups {
        let t = out.entry(f.model.clone()).or_default();
        t.followup_requests += u64::from(f.attempts);
        if let Some(res) = &f.result {
            t.followup_input_tokens += res.input_tokens;
            t.followup_output_tokens += res.output_tokens;
        }
    }
    out
}

/// A line that could not be decoded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorruptLine {
    pub line: usize,
    pub content: String,
    pub reason: String,
}

/// Decode a JSON-lines file. A missing file reads as empty; undecodable lines,
/// including an unterminated last line, come back separately.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> std::io::Result<(Vec<T>, Vec<CorruptLine>)> {
    let bytes = match std::fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok((vec![], vec![])),
        Err(e) => return Err(e),
    };
    let mut good = Vec::new();
    let mut bad = Vec::new();
    let terminated = bytes.last().is_none_or(|b| *b == b'\n');
    let mut lines: Vec<&[u8]> = bytes.split(|b| *b == b'\n').collect();
    if terminated {
        lines.pop();
    }
    let last = lines.len();
    for (i, raw) in lines.into_iter().enumerate() {
        let n = i + 1;
        let content = String::from_utf8_lossy(raw).into_owned();
        if content.trim().is_empty() {
            continue;
        }
        if n == last && !terminated {
            bad.push(CorruptLine {
                line: n,
                content,
                reason: "unterminated final line".into(),
            });
            continue;
        }
        match serde_json::from_slice::<T>(raw) {
            Ok(v) => good.push(v),
            Err(e) => bad.push(CorruptLine {
                line: n,
                content,
                reason: e.to_string(),
            }),
        }
    }
    Ok((good, bad))
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), RunError> {
    let tmp = path.with_extension("jsonl.tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        for it in items {
            serde_json::to_writer(&mut w, it)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        w.get_ref().sync_all()?;
    }
    std::fs::rename(tmp, path)?;
    Ok(())
}

/// Append-only JSON-lines writer that fsyncs every `SYNC_BATCH` lines and on finish.
pub struct JsonlAppender {
    out: BufWriter<File>,
    pending: usize,
}

impl JsonlAppender {
    pub fn open(path: &Path) -> std::io::Result<Self> {
        let f = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            out: BufWriter::new(f),
            pending: 0,
        })
    }

    pub fn append<T: Serialize>(&mut self, item: &T) -> Result<(), RunError> {
        serde_json::to_writer(&mut self.out, item)?;
        self.out.write_all(b"\n")?;
        self.pending += 1;
        if self.pending >= SYNC_BATCH {
            self.sync()?;
        }
        Ok(())
    }

    pub fn sync(&mut self) -> std::io::Result<()> {
        self.out.flush()?;
        self.out.get_ref().sync_data()?;
        self.pending = 0;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join(MANIFEST_FILE)
    }

    pub fn records(&self) -> PathBuf {
        self.root.join(RECORDS_FILE)
    }

    pub fn followups(&self) -> PathBuf {
        self.root.join(FOLLOWUPS_FILE)
    }

    pub fn quarantine(&self) -> PathBuf {
        self.root.join(QUARANTINE_FILE)
    }

    /// Records with every line required to decode; metrics refuse a damaged file.
    pub fn load_records_strict(&self) -> Result<Vec<TrialRecord>, RunError> {
        let (records, bad) = read_jsonl::<TrialRecord>(&self.records())?;
        if let Some(b) = bad.first() {
            return Err(RunError::CorruptRecords {
                path: self.records(),
                line: b.line,
                count: bad.len(),
            });
        }
        Ok(records)
    }

    pub fn load_followups(&self) -> Result<Vec<FollowupRecord>, RunError> {
        Ok(read_jsonl::<FollowupRecord>(&self.followups())?.0)
    }

    /// Moves undecodable and duplicate-key lines out of `records.jsonl` into the
    /// quarantine file and returns the surviving records.
    pub fn repair_records(&self) -> Result<(Vec<TrialRecord>, Vec<CorruptLine>), RunError> {
        let (records, mut bad) = read_jsonl::<TrialRecord>(&self.records())?;
        let mut seen = BTreeSet::new();
        let mut kept = Vec::with_capacity(records.len());
        for r in records {
            if seen.insert(r.key()) {
                kept.push(r);
            } else {
                bad.push(CorruptLine {
                    line: 0,
                    content: serde_json::to_string(&r)?,
                    reason: "duplicate cell".into(),
                });
            }
        }
        if !bad.is_empty() {
            let mut q = JsonlAppender::open(&self.quarantine())?;
            for b in &bad {
                q.append(b)?;
            }
            q.sync()?;
            write_jsonl(&self.records(), &kept)?;
            log::warn!(
                "quarantined {} record line(s) into {}",
                bad.len(),
                self.quarantine().display()
            );
        }
        Ok((kept, bad))
    }
}

/// Replay entries reproducing every completion a run received, in key order.
pub fn fixture_from_records(
    records: &[TrialRecord],
    followups: &[FollowupRecord],
) -> Vec<ReplayEntry> {
    let mut sorted: Vec<&TrialRecord> = records.iter().collect();
    sorted.sort_by_key(|r| r.key());
    let mut out: Vec<ReplayEntry> = sorted
        .into_iter()
        .flat_map(|r| {
            r.exchanges.iter().map(move |e| ReplayEntry {
                model: r.model.clone(),
                context_id: r.context_id.clone(),
                trial: r.trial,
                kind: CallKind::Elicit,
                result: e.clone(),
            })
        })
        .collect();
    let mut fsorted: Vec<&FollowupRecord> = followups.iter().collect();
    fsorted.sort_by_key(|f| f.key());
    out.extend(fsorted.into_iter().filter_map(|f| {
        f.result.as_ref().map(|res| ReplayEntry {
            model: f.model.clone(),
            context_id: f.context_id.clone(),
            trial: f.trial,
            kind: CallKind::Followup,
            result: res.clone(),
        })
    }));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lottery::SwitchPoint;

    fn rec(model: &str, ctx: &str, trial: u32, text: &str) -> TrialRecord {
        TrialRecord::from_exchanges(
            &CellKey::new(model, ctx, trial),
            vec![CompletionResult {
                text: text.into(),
                input_tokens: 100,
                output_tokens: 1,
                tokens_estimated: false,
                latency_ms: 5,
                attempt: 1,
            }],
            ParsedAnswer::Switch(SwitchPoint::new(5).unwrap()),
            0,
            None,
        )
    }

    #[test]
    fn corrupt_and_unterminated_lines_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        let rd = RunDir::new(dir.path());
        let a = serde_json::to_string(&rec("m", "male", 1, "5")).unwrap();
        let b = serde_json::to_string(&rec("m", "male", 2, "5")).unwrap();
        std::fs::write(rd.records(), format!("{a}\n{{garbage\n{b}\n{}", &a[..20])).unwrap();
        let (good, bad) = read_jsonl::<TrialRecord>(&rd.records()).unwrap();
        assert_eq!(good.len(), 2);
        assert_eq!(bad.iter().map(|b| b.line).collect::<Vec<_>>(), vec![2, 4]);
        assert!(rd.load_records_strict().is_err());

        let (kept, q) = rd.repair_records().unwrap();
        assert_eq!((kept.len(), q.len()), (2, 2));
        assert!(rd.load_records_strict().is_ok());
        let (quarantined, _) = read_jsonl::<CorruptLine>(&rd.quarantine()).unwrap();
        assert_eq!(quarantined.len(), 2);
    }

    #[test]
    fn duplicates_quarantined() {
        let dir = tempfile::tempdir().unwrap();
        let rd = RunDir::new(dir.path());
        let r = rec("m", "male", 1, "5");
        write_jsonl(&rd.records(), &[r.clone(), r.clone()]).unwrap();
        let (kept, q) = rd.repair_records().unwrap();
        assert_eq!((kept.len(), q.len()), (1, 1));
    }

    #[test]
    fn totals_sum_records() {
        let mut bad = rec("m", "male", 2, "no");
        bad.parsed = ParsedAnswer::Unwanted(UnwantedReason::NonNumeric);
        bad.attempts = 3;
        let t = totals_from(&[rec("m", "male", 1, "5"), bad], &[]);
        let m = &t["m"];
        assert_eq!((m.cells, m.valid, m.unwanted, m.api_requests), (2, 1, 1, 4));
        assert_eq!(m.input_tokens, 200);
        assert_eq!(m.unwanted_by_reason[&UnwantedReason::NonNumeric], 1);
    }

    #[test]
    fn missing_file_reads_empty() {
        let dir = tempfile::tempdir().unwrap();
        let (v, b) = read_jsonl::<TrialRecord>(&dir.path().join("nope.jsonl")).unwrap();
        assert!(v.is_empty() && b.is_empty());
    }
}
