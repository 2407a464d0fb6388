//! Experiment orchestration: models × contexts × trials, persisted as JSON lines.
//!
//! Cells are dispatched round-robin over contexts (trial 1 of every context,
//! then trial 2, ...) to a bounded worker pool. A single writer thread appends
//! finished records. Interrupted runs resume from whatever reached disk.

mod parse;
mod store;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{mpsc, Arc};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use parse::{parse_response, ParseMode, ParsedAnswer, UnwantedReason, LENIENT_MAX_CHARS};
pub use store::{
    fixture_from_records, read_jsonl, totals_from, write_jsonl, CellKey, CorruptLine,
    FollowupRecord, JsonlAppender, ModelTotals, RunDir, TrialRecord, FOLLOWUPS_FILE, MANIFEST_FILE,
    QUARANTINE_FILE, RECORDS_FILE,
};

use crate::backends::{
    BackendError, BackendSpec, CallKey, CallKind, CompletionBackend, CompletionParams,
};
use crate::contexts::{
    self, render_followup, render_prompt_with, ContextError, ContextPlacement, ContextSpec,
    DEFAULT_FOLLOWUP_QUESTION,
};

pub const DEFAULT_TRIALS_PER_CONTEXT: u32 = 35;
pub const DEFAULT_WORKERS: usize = 4;
pub const HARNESS_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("unknown context id {0:?}")]
    UnknownContext(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Context(#[from] ContextError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("config parse: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("{0} already holds a run; resume it instead")]
    RunDirExists(PathBuf),
    #[error("no manifest in {0}")]
    MissingManifest(PathBuf),
    #[error(
        "{count} corrupt line(s) in {path} (first at line {line}); run resume to quarantine them"
    )]
    CorruptRecords {
        path: PathBuf,
        line: usize,
        count: usize,
    },
    #[error("accounting mismatch: {0}")]
    Reconciliation(String),
}

fn default_trials() -> u32 {
    DEFAULT_TRIALS_PER_CONTEXT
}

fn default_workers() -> usize {
    DEFAULT_WORKERS
}

fn default_reasks() -> u32 {
    1
}

fn all_context_ids() -> Vec<String> {
    contexts::catalog().into_iter().map(|c| c.id).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub output_dir: PathBuf,
    /// Context ids to run; defaults to the whole built-in battery.
    #[serde(default = "all_context_ids")]
    pub contexts: Vec<String>,
    #[serde(default = "default_trials")]
    pub trials_per_context: u32,
    #[serde(default)]
    pub params: CompletionParams,
    #[serde(default)]
    pub followup_enabled: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub followup_question: Option<String>,
    #[serde(default)]
    pub parse_mode: ParseMode,
    /// Fresh-conversation re-asks after an unusable answer.
    #[serde(default = "default_reasks")]
    pub max_reasks: u32,
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// TOML battery whose contexts are added to the built-in ones.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub custom_contexts: Option<PathBuf>,
    pub backends: Vec<BackendSpec>,
}

impl ExperimentConfig {
    pub fn new(output_dir: impl Into<PathBuf>, backends: Vec<BackendSpec>) -> Self {
        Self {
            output_dir: output_dir.into(),
            contexts: all_context_ids(),
            trials_per_context: DEFAULT_TRIALS_PER_CONTEXT,
            params: CompletionParams::default(),
            followup_enabled: false,
            followup_question: None,
            parse_mode: ParseMode::Strict,
            max_reasks: default_reasks(),
            workers: DEFAULT_WORKERS,
            custom_contexts: None,
            backends,
        }
    }

    pub fn from_toml(src: &str) -> Result<Self, RunError> {
        Ok(toml::from_str(src)?)
    }

    pub fn load(path: &Path) -> Result<Self, RunError> {
        let mut cfg = Self::from_toml(&std::fs::read_to_string(path)?)?;
        // relative paths inside the file are relative to the file
        let base = path.parent().unwrap_or(Path::new("."));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        rebase(&mut cfg.output_dir);
        if let Some(p) = cfg.custom_contexts.as_mut() {
            rebase(p);
        }
        for b in &mut cfg.backends {
            if let BackendSpec::Replay { fixture, .. } = b {
                rebase(fixture);
            }
        }
        Ok(cfg)
    }

    /// Built-in battery plus any custom file, restricted to `contexts`, in `contexts` order.
    pub fn resolve_contexts(&self) -> Result<Vec<ContextSpec>, RunError> {
        let mut available = contexts::catalog();
        if let Some(path) = &self.custom_contexts {
            available.extend(contexts::load_contexts(path)?);
            contexts::validate(&available)?;
        }
        self.contexts
            .iter()
            .map(|id| {
                contexts::find(&available, id)
                    .cloned()
                    .ok_or_else(|| RunError::UnknownContext(id.clone()))
            })
            .collect()
    }

    pub fn validate(&self) -> Result<(), RunError> {
        if self.trials_per_context == 0 {
            return Err(RunError::Config("trials_per_context must be > 0".into()));
        }
        if self.workers == 0 {
            return Err(RunError::Config("workers must be > 0".into()));
        }
        if self.backends.is_empty() {
            return Err(RunError::Config("no backends configured".into()));
        }
        if self.contexts.is_empty() {
            return Err(RunError::Config("no contexts configured".into()));
        }
        let mut models = BTreeSet::new();
        for b in &self.backends {
            if !models.insert(b.model()) {
                return Err(RunError::Config(format!(
                    "model {} listed twice",
                    b.model()
                )));
            }
        }
        let mut ids = BTreeSet::new();
        for c in &self.contexts {
            if !ids.insert(c) {
                return Err(RunError::Config(format!("context {c} listed twice")));
            }
        }
        self.params.validate()?;
        Ok(())
    }

    pub fn expected_cells(&self) -> usize {
        self.backends.len() * self.contexts.len() * self.trials_per_context as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Interrupted,
    Complete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub harness_version: String,
    pub config: ExperimentConfig,
    /// The context texts actually sent, so custom batteries stay reproducible.
    pub contexts: Vec<ContextSpec>,
    /// Every trial is a new conversation; nothing carries over between trials.
    pub conversation: String,
    pub status: RunStatus,
    pub started_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finished_at: Option<DateTime<Utc>>,
    pub rng_seeds: BTreeMap<String, u64>,
    pub totals: BTreeMap<String, ModelTotals>,
}

impl RunManifest {
    pub fn load(dir: &Path) -> Result<Self, RunError> {
        let path = RunDir::new(dir).manifest();
        let src = match std::fs::read(&path) {
            Ok(s) => s,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(RunError::MissingManifest(dir.to_path_buf()))
            }
            Err(e) => return Err(e.into()),
        };
        Ok(serde_json::from_slice(&src)?)
    }

    pub fn total_unwanted(&self) -> u64 {
        self.totals.values().map(|t| t.unwanted).sum()
    }

    pub fn total_requests(&self) -> u64 {
        self.totals.values().map(|t| t.total_requests()).sum()
    }
}

/// Every cell of a config in dispatch order.
pub fn all_cells(models: &[&str], contexts: &[ContextSpec], trials: u32) -> Vec<CellKey> {
    let mut out = Vec::with_capacity(models.len() * contexts.len() * trials as usize);
    for trial in 1..=trials {
        for ctx in contexts {
            for m in models {
                out.push(CellKey::new(m, &ctx.id, trial));
            }
        }
    }
    out
}

/// What remains to do in a run directory.
#[derive(Debug, Clone)]
pub struct ResumeState {
    pub manifest: RunManifest,
    pub completed: BTreeSet<CellKey>,
    pub remaining: Vec<CellKey>,
    pub quarantined: Vec<CorruptLine>,
}

/// Reconstruct a run's progress, quarantining damaged record lines so their
/// cells are queued again.
pub fn resume(run_dir: &Path) -> Result<ResumeState, RunError> {
    let manifest = RunManifest::load(run_dir)?;
    let rd = RunDir::new(run_dir);
    let (records, quarantined) = rd.repair_records()?;
    let completed: BTreeSet<CellKey> = records.iter().map(TrialRecord::key).collect();
    let models: Vec<&str> = manifest.config.backends.iter().map(|b| b.model()).collect();
    let remaining = all_cells(
        &models,
        &manifest.contexts,
        manifest.config.trials_per_context,
    )
    .into_iter()
    .filter(|k| !completed.contains(k))
    .collect();
    Ok(ResumeState {
        manifest,
        completed,
        remaining,
        quarantined,
    })
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    pub run_dir: PathBuf,
    /// Cells executed by this invocation.
    pub executed: usize,
    /// Backend `complete` calls made by this invocation.
    pub backend_calls: usize,
}

impl RunOutcome {
    /// 0 complete, 2 complete with unwanted answers, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self.manifest.status {
            RunStatus::Complete if self.manifest.total_unwanted() == 0 => 0,
            RunStatus::Complete => 2,
            _ => 1,
        }
    }
}

pub struct Runner {
    config: ExperimentConfig,
    contexts: Vec<ContextSpec>,
    backends: Vec<Arc<dyn CompletionBackend>>,
    cancel: Arc<AtomicBool>,
    stop_after: Option<usize>,
    resuming: Option<RunManifest>,
}

impl Runner {
    /// Validates the config and builds its backends. Nothing is sent yet.
    pub fn new(config: ExperimentConfig) -> Result<Self, RunError> {
        let backends = config
            .backends
            .iter()
            .map(BackendSpec::build)
            .collect::<Result<Vec<_>, _>>()?;
        Self::with_backends(config, backends)
    }

    /// Uses the given backends in place of building them from the config;
    /// they are matched to config entries by model name.
    pub fn with_backends(
        config: ExperimentConfig,
        backends: Vec<Arc<dyn CompletionBackend>>,
    ) -> Result<Self, RunError> {
        let contexts = config.resolve_contexts()?;
        Self::assemble(config, backends, contexts, None)
    }

    fn assemble(
        config: ExperimentConfig,
        backends: Vec<Arc<dyn CompletionBackend>>,
        contexts: Vec<ContextSpec>,
        resuming: Option<RunManifest>,
    ) -> Result<Self, RunError> {
        config.validate()?;
        for spec in &config.backends {
            if !backends.iter().any(|b| b.model() == spec.model()) {
                return Err(RunError::Config(format!(
                    "no backend for model {}",
                    spec.model()
                )));
            }
            if let BackendSpec::Synthetic(s) = spec {
                if let Some(c) = contexts.iter().find(|c| s.params_for(&c.id).is_none()) {
                    return Err(RunError::Config(format!(
                        "synthetic model {} has no r for context {}",
                        s.model, c.id
                    )));
                }
            }
        }
        Ok(Self {
            config,
            contexts,
            backends,
            cancel: Arc::new(AtomicBool::new(false)),
            stop_after: None,
            resuming,
        })
    }

    /// Prepare to continue the run stored in `run_dir`, using its manifest's config.
    pub fn resume(run_dir: &Path) -> Result<Self, RunError> {
        let manifest = RunManifest::load(run_dir)?;
        let backends = manifest
            .config
            .backends
            .iter()
            .map(BackendSpec::build)
            .collect::<Result<Vec<_>, _>>()?;
        Self::resume_from(run_dir, manifest, backends)
    }

    fn resume_from(
        run_dir: &Path,
        manifest: RunManifest,
        backends: Vec<Arc<dyn CompletionBackend>>,
    ) -> Result<Self, RunError> {
        let mut config = manifest.config.clone();
        config.output_dir = run_dir.to_path_buf();
        let contexts = manifest.contexts.clone();
        Self::assemble(config, backends, contexts, Some(manifest))
    }

    /// Like [`Runner::resume`] with caller-supplied backends.
    pub fn resume_with_backends(
        run_dir: &Path,
        backends: Vec<Arc<dyn CompletionBackend>>,
    ) -> Result<Self, RunError> {
        let manifest = RunManifest::load(run_dir)?;
        Self::resume_from(run_dir, manifest, backends)
    }

    /// Stop dispatching after this many cells, leaving the run interrupted.
    pub fn stop_after(mut self, cells: usize) -> Self {
        self.stop_after = Some(cells);
        self
    }

    /// Setting the flag stops dispatch and wakes rate-gate waiters.
    pub fn cancel_flag(&self) -> Arc<AtomicBool> {
        self.cancel.clone()
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    fn backend(&self, model: &str) -> &Arc<dyn CompletionBackend> {
        self.backends
            .iter()
            .find(|b| b.model() == model)
            .expect("backend checked at construction")
    }

    fn context(&self, id: &str) -> &ContextSpec {
        contexts::find(&self.contexts, id).expect("context resolved at construction")
    }

    pub fn run(&self) -> Result<RunOutcome, RunError> {
        let rd = RunDir::new(&self.config.output_dir);
        std::fs::create_dir_all(rd.root())?;

        let (mut manifest, mut records, remaining) = match &self.resuming {
            Some(_) => {
                let state = resume(rd.root())?;
                let records = rd.load_records_strict()?;
                (state.manifest, records, state.remaining)
            }
            None => {
                if rd.manifest().exists() {
                    return Err(RunError::RunDirExists(rd.root().to_path_buf()));
                }
                let now = Utc::now();
                let manifest = RunManifest {
                    harness_version: HARNESS_VERSION.to_owned(),
                    config: self.config.clone(),
                    contexts: self.contexts.clone(),
                    conversation: "fresh_per_trial".to_owned(),
                    status: RunStatus::Running,
                    started_at: now,
                    updated_at: now,
                    finished_at: None,
                    rng_seeds: self
                        .config
                        .backends
                        .iter()
                        .filter_map(|b| Some((b.model().to_owned(), b.rng_seed()?)))
                        .collect(),
                    totals: BTreeMap::new(),
                };
                let models: Vec<&str> = self.config.backends.iter().map(|b| b.model()).collect();
                let cells = all_cells(&models, &self.contexts, self.config.trials_per_context);
                (manifest, Vec::new(), cells)
            }
        };
        let mut followups = rd.load_followups()?;
        manifest.status = RunStatus::Running;
        manifest.finished_at = None;
        write_manifest(&rd, &mut manifest, &records, &followups)?;

        let calls = AtomicUsize::new(0);
        let limit = self.stop_after.unwrap_or(usize::MAX).min(remaining.len());
        let (fresh, interrupted) = self.sweep(&rd, &remaining[..limit], &calls)?;
        let executed = fresh.len();
        records.extend(fresh);
        let mut interrupted = interrupted || limit < remaining.len();

        if !interrupted && self.config.followup_enabled {
            let (fresh, cut) = self.followups(&rd, &records, &followups, &calls)?;
            followups.extend(fresh);
            interrupted |= cut;
        }

        manifest.status = if interrupted {
            RunStatus::Interrupted
        } else {
            RunStatus::Complete
        };
        if !interrupted {
            manifest.finished_at = Some(Utc::now());
        }
        write_manifest(&rd, &mut manifest, &records, &followups)?;
        Ok(RunOutcome {
            manifest,
            run_dir: rd.root().to_path_buf(),
            executed,
            backend_calls: calls.load(Ordering::SeqCst),
        })
    }

    fn shutdown_backends(&self) {
        for b in &self.backends {
            b.shutdown();
        }
    }

    /// Runs `cells` on the worker pool; returns the new records and whether the
    /// sweep was cut short by cancellation.
    fn sweep(
        &self,
        rd: &RunDir,
        cells: &[CellKey],
        calls: &AtomicUsize,
    ) -> Result<(Vec<TrialRecord>, bool), RunError> {
        let next = AtomicUsize::new(0);
        let cut = AtomicBool::new(false);
        let (tx, rx) = mpsc::channel::<TrialRecord>();
        let workers = self.config.workers.min(cells.len()).max(1);

        let written = std::thread::scope(|s| {
            let writer = s.spawn(|| -> Result<Vec<TrialRecord>, RunError> {
                let mut out = JsonlAppender::open(&rd.records())?;
                let mut done = Vec::new();
                for rec in rx {
                    out.append(&rec)?;
                    done.push(rec);
                }
                out.sync()?;
                Ok(done)
            });
            for _ in 0..workers {
                let tx = tx.clone();
                let (next, cut) = (&next, &cut);
                s.spawn(move || loop {
                    if self.cancel.load(Ordering::SeqCst) {
                        cut.store(true, Ordering::SeqCst);
                        self.shutdown_backends();
                        return;
                    }
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(cell) = cells.get(i) else { return };
                    match self.execute_cell(cell, calls) {
                        Some(rec) => {
                            if tx.send(rec).is_err() {
                                return;
                            }
                        }
                        None => {
                            cut.store(true, Ordering::SeqCst);
                            return;
                        }
                    }
                });
            }
            drop(tx);
            writer.join().expect("writer thread panicked")
        })?;
        Ok((written, cut.load(Ordering::SeqCst)))
    }

    /// One cell: ask, re-ask once in a fresh conversation if the answer is
    /// unusable, record. `None` when cancelled mid-cell.
    fn execute_cell(&self, cell: &CellKey, calls: &AtomicUsize) -> Option<TrialRecord> {
        let backend = self.backend(&cell.model);
        let ctx = self.context(&cell.context_id);
        let placement = if backend.supports_system_role() {
            ContextPlacement::SystemMessage
        } else {
            ContextPlacement::PrependToUser
        };
        let bundle = render_prompt_with(ctx, placement);
        let mut exchanges = Vec::new();
        let mut parsed = ParsedAnswer::Unwanted(UnwantedReason::Transport);
        let mut extra_attempts = 0;
        let mut error = None;
        for ask in 0..=self.config.max_reasks {
            let key = CallKey {
                context_id: &cell.context_id,
                trial: cell.trial,
                ask,
                kind: CallKind::Elicit,
            };
            calls.fetch_add(1, Ordering::SeqCst);
            match backend.complete(&key, &bundle, &self.config.params) {
                Ok(res) => {
                    parsed = parse_response(&res.text, self.config.parse_mode);
                    exchanges.push(res);
                    if parsed.is_valid() {
                        break;
                    }
                }
                Err(BackendError::Cancelled) => return None,
                Err(e) => {
                    log::warn!(
                        "{} {} trial {}: {e}",
                        cell.model,
                        cell.context_id,
                        cell.trial
                    );
                    extra_attempts += e.attempts();
                    parsed = ParsedAnswer::Unwanted(UnwantedReason::Transport);
                    error = Some(e.to_string());
                    break;
                }
            }
        }
        Some(TrialRecord::from_exchanges(
            cell,
            exchanges,
            parsed,
            extra_attempts,
            error,
        ))
    }

    fn followups(
        &self,
        rd: &RunDir,
        records: &[TrialRecord],
        existing: &[FollowupRecord],
        calls: &AtomicUsize,
    ) -> Result<(Vec<FollowupRecord>, bool), RunError> {
        let done: BTreeSet<CellKey> = existing.iter().map(FollowupRecord::key).collect();
        let mut todo: Vec<&TrialRecord> = records
            .iter()
            .filter(|r| !r.raw_text.trim().is_empty() && !done.contains(&r.key()))
            .collect();
        todo.sort_by_key(|r| r.key());
        let question = self
            .config
            .followup_question
            .as_deref()
            .unwrap_or(DEFAULT_FOLLOWUP_QUESTION);

        let mut out = JsonlAppender::open(&rd.followups())?;
        let mut fresh = Vec::new();
        // transcripts only; sequential keeps the file in key order
        for rec in todo {
            if self.cancel.load(Ordering::SeqCst) {
                out.sync()?;
                return Ok((fresh, true));
            }
            let backend = self.backend(&rec.model);
            let placement = if backend.supports_system_role() {
                ContextPlacement::SystemMessage
            } else {
                ContextPlacement::PrependToUser
            };
            let prior = render_prompt_with(self.context(&rec.context_id), placement);
            let bundle = render_followup(&prior, &rec.raw_text, question)?;
            let key = CallKey {
                context_id: &rec.context_id,
                trial: rec.trial,
                ask: 0,
                kind: CallKind::Followup,
            };
            calls.fetch_add(1, Ordering::SeqCst);
            let (result, error, attempts) =
                match backend.complete(&key, &bundle, &self.config.params) {
                    Ok(r) => {
                        let a = r.attempt;
                        (Some(r), None, a)
                    }
                    Err(BackendError::Cancelled) => {
                        out.sync()?;
                        return Ok((fresh, true));
                    }
                    Err(e) => (None, Some(e.to_string()), e.attempts()),
                };
            let f = FollowupRecord {
                model: rec.model.clone(),
                context_id: rec.context_id.clone(),
                trial: rec.trial,
                messages: bundle.messages,
                result,
                error,
                attempts,
                timestamp: Utc::now(),
            };
            out.append(&f)?;
            fresh.push(f);
        }
        out.sync()?;
        Ok((fresh, false))
    }
}

/// Writes the manifest after checking that its totals match the records on disk.
fn write_manifest(
    rd: &RunDir,
    manifest: &mut RunManifest,
    records: &[TrialRecord],
    followups: &[FollowupRecord],
) -> Result<(), RunError> {
    manifest.totals = totals_from(records, followups);
    let on_disk = totals_from(&rd.load_records_strict()?, &rd.load_followups()?);
    if on_disk != manifest.totals {
        return Err(RunError::Reconciliation(format!(
            "in-memory totals {:?} differ from persisted records {:?}",
            manifest.totals, on_disk
        )));
    }
    manifest.updated_at = Utc::now();
    let tmp = rd.manifest().with_extension("json.tmp");
    std::fs::write(&tmp, serde_json::to_vec_pretty(manifest)?)?;
    std::fs::rename(tmp, rd.manifest())?;
    Ok(())
}

/// Per-model progress of a run directory.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunStatusReport {
    pub status: RunStatus,
    pub expected_cells: usize,
    pub completed_cells: usize,
    pub corrupt_lines: usize,
    pub followups: usize,
    pub totals: BTreeMap<String, ModelTotals>,
}

/// Read-only progress summary; never modifies the directory.
pub fn status(run_dir: &Path) -> Result<RunStatusReport, RunError> {
    let manifest = RunManifest::load(run_dir)?;
    let rd = RunDir::new(run_dir);
    let (records, bad) = read_jsonl::<TrialRecord>(&rd.records())?;
    let followups = rd.load_followups()?;
    let unique: BTreeSet<CellKey> = records.iter().map(TrialRecord::key).collect();
    let expected = manifest.config.backends.len()
        * manifest.contexts.len()
        * manifest.config.trials_per_context as usize;
    Ok(RunStatusReport {
        status: manifest.status,
        expected_cells: expected,
        completed_cells: unique.len(),
        corrupt_lines: bad.len(),
        followups: followups.len(),
        totals: totals_from(&records, &followups),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::SyntheticAgentSpec;
    use crate::contexts::{RISK_AVOIDING, RISK_LOVING};

    fn synth(dir: &Path, contexts: &[&str], trials: u32) -> ExperimentConfig {
        let spec = SyntheticAgentSpec::deterministic(
            "synth",
            &[(RISK_AVOIDING, 1.2), (RISK_LOVING, -0.5)],
        );
        let mut cfg = ExperimentConfig::new(dir, vec![BackendSpec::Synthetic(spec)]);
        cfg.contexts = contexts.iter().map(|s| s.to_string()).collect();
        cfg.trials_per_context = trials;
        cfg
    }

    #[test]
    fn two_contexts_seventy_records() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = synth(dir.path(), &[RISK_AVOIDING, RISK_LOVING], 35);
        let out = Runner::new(cfg).unwrap().run().unwrap();
        assert_eq!(out.executed, 70);
        assert_eq!(out.manifest.status, RunStatus::Complete);
        let t = &out.manifest.totals["synth"];
        assert_eq!(
            (t.cells, t.valid, t.unwanted, t.api_requests),
            (70, 70, 0, 70)
        );
        assert_eq!(out.exit_code(), 0);
        let recs = RunDir::new(dir.path()).load_records_strict().unwrap();
        assert_eq!(recs.len(), 70);
    }

    #[test]
    fn unknown_context_rejected_before_calls() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = synth(dir.path(), &[RISK_AVOIDING, "nope"], 2);
        assert!(matches!(Runner::new(cfg), Err(RunError::UnknownContext(id)) if id == "nope"));
        assert!(!dir.path().join(MANIFEST_FILE).exists());
    }

    #[test]
    fn synthetic_without_r_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = synth(dir.path(), &[RISK_AVOIDING, "male"], 2);
        assert!(matches!(Runner::new(cfg), Err(RunError::Config(_))));
    }

    #[test]
    fn existing_run_dir_refused() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = synth(dir.path(), &[RISK_AVOIDING], 1);
        Runner::new(cfg.clone()).unwrap().run().unwrap();
        assert!(matches!(
            Runner::new(cfg).unwrap().run(),
            Err(RunError::RunDirExists(_))
        ));
    }

    #[test]
    fn round_robin_order() {
        let ctx: Vec<ContextSpec> = contexts::catalog().into_iter().take(3).collect();
        let cells = all_cells(&["a", "b"], &ctx, 2);
        assert_eq!(cells.len(), 12);
        assert_eq!(cells[0], CellKey::new("a", &ctx[0].id, 1));
        assert_eq!(cells[1], CellKey::new("b", &ctx[0].id, 1));
        assert_eq!(cells[2], CellKey::new("a", &ctx[1].id, 1));
        assert_eq!(cells[6], CellKey::new("a", &ctx[0].id, 2));
    }

    #[test]
    fn config_toml_defaults() {
        let src = r#"
            output_dir = "runs/demo"

            [[backends]]
            kind = "synthetic"
            model = "synth"
            rng_seed = 7
            default_r = { r = 0.0 }
        "#;
        let cfg = ExperimentConfig::from_toml(src).unwrap();
        assert_eq!(cfg.trials_per_context, 35);
        assert_eq!(cfg.contexts.len(), 11);
        assert_eq!(cfg.params.temperature, 1.0);
        assert_eq!(cfg.max_reasks, 1);
        cfg.validate().unwrap();
    }
}
