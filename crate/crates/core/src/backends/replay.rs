//! Replays recorded completions from a JSON-lines fixture.

use std::collections::{BTreeMap, VecDeque};
use std::io::Write;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{
    BackendError, CallKey, CallKind, CompletionBackend, CompletionParams, CompletionResult,
};
use crate::contexts::PromptBundle;

/// One recorded completion. Entries sharing a key are served in file order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayEntry {
    pub model: String,
    pub context_id: String,
    pub trial: u32,
    #[serde(default = "elicit")]
    pub kind: CallKind,
    #[serde(flatten)]
    pub result: CompletionResult,
}

fn elicit() -> CallKind {
    CallKind::Elicit
}

type Key = (String, u32, CallKind);

pub struct ReplayBackend {
    model: String,
    queues: Mutex<BTreeMap<Key, VecDeque<CompletionResult>>>,
}

impl ReplayBackend {
    /// Keeps only entries recorded for `model`.
    pub fn new(model: &str, entries: impl IntoIterator<Item = ReplayEntry>) -> Self {
        let mut queues: BTreeMap<Key, VecDeque<CompletionResult>> = BTreeMap::new();
        for e in entries.into_iter().filter(|e| e.model == model) {
            queues
                .entry((e.context_id, e.trial, e.kind))
                .or_default()
                .push_back(e.result);
        }
        Self {
            model: model.to_owned(),
            queues: Mutex::new(queues),
        }
    }

    pub fn from_file(model: &str, path: &Path) -> Result<Self, BackendError> {
        Ok(Self::new(model, load_fixture(path)?))
    }

    pub fn remaining(&self) -> usize {
        self.queues
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .values()
            .map(VecDeque::len)
            .sum()
    }
}

pub fn load_fixture(path: &Path) -> Result<Vec<ReplayEntry>, BackendError> {
    let src = std::fs::read_to_string(path)
        .map_err(|e| BackendError::Fixture(format!("{}: {e}", path.display())))?;
    src.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            serde_json::from_str(l).map_err(|e| {
                BackendError::Fixture(format!("{} line {}: {e}", path.display(), n + 1))
            })
        })
        .collect()
}

pub fn write_fixture(path: &Path, entries: &[ReplayEntry]) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for e in entries {
        serde_json::to_writer(&mut f, e)?;
        f.write_all(b"\n")?;
    }
    f.flush()
}

impl CompletionBackend for ReplayBackend {
    fn model(&self) -> &str {
        &self.model
    }

    fn complete(
        &self,
        key: &CallKey<'_>,
        _bundle: &PromptBundle,
        _params: &CompletionParams,
    ) -> Result<CompletionResult, BackendError> {
        let k = (key.context_id.to_owned(), key.trial, key.kind);
        self.queues
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .get_mut(&k)
            .and_then(VecDeque::pop_front)
            .ok_or_else(|| {
                BackendError::Fixture(format!(
                    "no recorded {:?} completion left for model {} context {} trial {}",
                    key.kind, self.model, key.context_id, key.trial
                ))
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contexts::{catalog, find, render_prompt, MALE};

    #[test]
    fn replays_in_order_then_errors() {
        let rec = |text: &str| ReplayEntry {
            model: "m".into(),
            context_id: MALE.into(),
            trial: 3,
            kind: CallKind::Elicit,
            result: CompletionResult {
                text: text.into(),
                input_tokens: 310,
                output_tokens: 1,
                tokens_estimated: false,
                latency_ms: 412,
                attempt: 2,
            },
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fx.jsonl");
        write_fixture(&path, &[rec("five"), rec("5")]).unwrap();
        let back = ReplayBackend::from_file("m", &path).unwrap();
        assert_eq!(back.remaining(), 2);
        let bundle = render_prompt(find(&catalog(), MALE).unwrap());
        let key = CallKey {
            context_id: MALE,
            trial: 3,
            ask: 0,
            kind: CallKind::Elicit,
        };
        let p = CompletionParams::default();
        assert_eq!(
            back.complete(&key, &bundle, &p).unwrap(),
            rec("five").result
        );
        assert_eq!(back.complete(&key, &bundle, &p).unwrap(), rec("5").result);
        assert!(matches!(
            back.complete(&key, &bundle, &p),
            Err(BackendError::Fixture(_))
        ));
        let other = ReplayBackend::from_file("other", &path).unwrap();
        assert_eq!(other.remaining(), 0);
    }
}
