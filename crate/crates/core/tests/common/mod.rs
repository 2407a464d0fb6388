#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::thread;

use riskprobe::backends::{BackendSpec, CompletionResult, SyntheticAgentSpec};
use riskprobe::lottery::SwitchPoint;
use riskprobe::runner::{ExperimentConfig, ParsedAnswer, TrialRecord, UnwantedReason};

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

#[derive(Debug, Clone)]
pub struct Captured {
    pub request_line: String,
    pub headers: Vec<(String, String)>,
    pub body: String,
}

impl Captured {
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }
}

/// Answers each request with the next scripted `(status, body)`; the last one repeats.
pub struct MockServer {
    pub url: String,
    pub captured: Arc<Mutex<Vec<Captured>>>,
}

impl MockServer {
    pub fn start(script: Vec<(u16, String)>) -> Self {
        assert!(!script.is_empty());
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!(
            "http://{}/v1/chat/completions",
            listener.local_addr().unwrap()
        );
        let captured = Arc::new(Mutex::new(Vec::new()));
        let log = Arc::clone(&captured);
        thread::spawn(move || {
            let mut n = 0usize;
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { continue };
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut request_line = String::new();
                if reader.read_line(&mut request_line).is_err() {
                    continue;
                }
                let mut headers = Vec::new();
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    let line = line.trim_end();
                    if line.is_empty() {
                        break;
                    }
                    if let Some((k, v)) = line.split_once(':') {
                        headers.push((k.trim().to_owned(), v.trim().to_owned()));
                    }
                }
                let len = headers
                    .iter()
                    .find(|(k, _)| k.eq_ignore_ascii_case("content-length"))
                    .map(|(_, v)| v.parse::<usize>().unwrap())
                    .unwrap_or(0);
                let mut body = vec![0u8; len];
                reader.read_exact(&mut body).unwrap();
                log.lock().unwrap().push(Captured {
                    request_line: request_line.trim_end().to_owned(),
                    headers,
                    body: String::from_utf8(body).unwrap(),
                });
                let (status, payload) = &script[n.min(script.len() - 1)];
                n += 1;
                let resp = format!(
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
                    payload.len()
                );
                let _ = stream.write_all(resp.as_bytes());
                let _ = stream.flush();
            }
        });
        Self { url, captured }
    }

    pub fn requests(&self) -> Vec<Captured> {
        self.captured.lock().unwrap().clone()
    }
}

pub fn chat_ok(text: &str, usage: Option<(u64, u64)>) -> String {
    let mut v = serde_json::json!({
        "id": "x",
        "object": "chat.completion",
        "choices": [{"index": 0, "message": {"role": "assistant", "content": text}, "finish_reason": "stop"}],
    });
    if let Some((p, c)) = usage {
        v["usage"] =
            serde_json::json!({"prompt_tokens": p, "completion_tokens": c, "total_tokens": p + c});
    }
    v.to_string()
}

pub fn record(model: &str, ctx: &str, trial: u32, parsed: ParsedAnswer) -> TrialRecord {
    TrialRecord {
        model: model.into(),
        context_id: ctx.into(),
        trial,
        raw_text: match parsed {
            ParsedAnswer::Switch(s) => s.to_string(),
            ParsedAnswer::Unwanted(_) => "no".into(),
        },
        parsed,
        input_tokens: 0,
        output_tokens: 0,
        tokens_estimated: false,
        attempts: 1,
        reasks: 0,
        latency_ms: 0,
        timestamp: chrono::DateTime::<chrono::Utc>::UNIX_EPOCH,
        error: None,
        exchanges: Vec::<CompletionResult>::new(),
    }
}

pub fn valid(model: &str, ctx: &str, trial: u32, s: u8) -> TrialRecord {
    record(
        model,
        ctx,
        trial,
        ParsedAnswer::Switch(SwitchPoint::new(s.into()).unwrap()),
    )
}

pub fn unwanted(model: &str, ctx: &str, trial: u32) -> TrialRecord {
    record(
        model,
        ctx,
        trial,
        ParsedAnswer::Unwanted(UnwantedReason::NonNumeric),
    )
}

pub fn synthetic_config(out: &Path, agents: Vec<SyntheticAgentSpec>) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(
        out,
        agents.into_iter().map(BackendSpec::Synthetic).collect(),
    );
    cfg.workers = 4;
    cfg
}
