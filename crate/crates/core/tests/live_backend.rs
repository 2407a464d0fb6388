//! OpenAI-compatible client against a scripted local HTTP server.

mod common;

use std::time::Duration;

use common::{chat_ok, MockServer};
use riskprobe::backends::{
    BackendError, BackendId, BackendSpec, CallKey, CallKind, CompletionBackend, CompletionParams,
    OpenAiBackend, RatePolicy, RetryPolicy,
};
use riskprobe::contexts::{
    catalog, find, render_prompt, ContextPlacement, BASELINE, RISK_AVOIDING,
};
use riskprobe::runner::{ExperimentConfig, ParsedAnswer, RunDir, Runner, UnwantedReason};

fn backend(
    url: &str,
    attempts: u32,
    auth_env: Option<&str>,
) -> Result<OpenAiBackend, BackendError> {
    OpenAiBackend::new(
        BackendId {
            provider: "test".into(),
            model: "mock-model".into(),
            endpoint: url.into(),
            auth_env: auth_env.map(str::to_owned),
        },
        RetryPolicy {
            max_attempts: attempts,
            initial_backoff_ms: 5,
        },
        Duration::from_secs(5),
    )
}

fn key() -> CallKey<'static> {
    CallKey {
        context_id: RISK_AVOIDING,
        trial: 1,
        ask: 0,
        kind: CallKind::Elicit,
    }
}

#[test]
fn retries_then_succeeds_with_reported_usage() {
    let server = MockServer::start(vec![
        (500, "{\"error\":\"boom\"}".into()),
        (429, "{\"error\":\"slow down\"}".into()),
        (200, chat_ok("7", Some((812, 1)))),
    ]);
    let b = backend(&server.url, 3, None).unwrap();
    let bundle = render_prompt(find(&catalog(), RISK_AVOIDING).unwrap());
    let res = b
        .complete(&key(), &bundle, &CompletionParams::default())
        .unwrap();
    assert_eq!(res.text, "7");
    assert_eq!(res.attempt, 3);
    assert_eq!((res.input_tokens, res.output_tokens), (812, 1));
    assert!(!res.tokens_estimated);
    let reqs = server.requests();
    assert_eq!(reqs.len(), 3);
    assert!(reqs.iter().all(|r| r.body == reqs[0].body));
    assert_eq!(reqs[0].request_line, "POST /v1/chat/completions HTTP/1.1");
}

#[test]
fn exhausted_retries_report_attempts() {
    let server = MockServer::start(vec![(503, "unavailable".into())]);
    let b = backend(&server.url, 2, None).unwrap();
    let bundle = render_prompt(find(&catalog(), BASELINE).unwrap());
    let err = b
        .complete(&key(), &bundle, &CompletionParams::default())
        .unwrap_err();
    assert_eq!(err.attempts(), 2);
    assert!(err.to_string().contains("503"), "{err}");
    assert_eq!(server.requests().len(), 2);
}

#[test]
fn missing_usage_is_estimated() {
    let server = MockServer::start(vec![(200, chat_ok("5", None))]);
    let b = backend(&server.url, 1, None).unwrap();
    let bundle = render_prompt(find(&catalog(), BASELINE).unwrap());
    let res = b
        .complete(&key(), &bundle, &CompletionParams::default())
        .unwrap();
    assert!(res.tokens_estimated);
    assert!(res.input_tokens > 0);
}

#[test]
fn credential_comes_from_environment() {
    let server = MockServer::start(vec![(200, chat_ok("5", Some((1, 1))))]);
    assert!(matches!(
        backend(&server.url, 1, Some("RISKPROBE_TEST_UNSET_KEY")),
        Err(BackendError::Config(_))
    ));
    std::env::set_var("RISKPROBE_TEST_KEY", "sk-test-123");
    let b = backend(&server.url, 1, Some("RISKPROBE_TEST_KEY")).unwrap();
    let bundle = render_prompt(find(&catalog(), BASELINE).unwrap());
    b.complete(&key(), &bundle, &CompletionParams::default())
        .unwrap();
    assert_eq!(
        server.requests()[0].header("authorization"),
        Some("Bearer sk-test-123")
    );
}

#[test]
fn system_role_fallback_prepends_context() {
    let server = MockServer::start(vec![(200, chat_ok("9", Some((10, 1))))]);
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::new(
        dir.path().join("run"),
        vec![BackendSpec::Openai {
            id: BackendId {
                provider: "test".into(),
                model: "mock-model".into(),
                endpoint: server.url.clone(),
                auth_env: None,
            },
            rate_limit: RatePolicy::in_flight(1),
            retry: RetryPolicy::default(),
            timeout_secs: 5,
            system_role: false,
        }],
    );
    cfg.contexts = vec![RISK_AVOIDING.into()];
    cfg.trials_per_context = 1;
    Runner::new(cfg).unwrap().run().unwrap();
    let body: serde_json::Value = serde_json::from_str(&server.requests()[0].body).unwrap();
    let msgs = body["messages"].as_array().unwrap();
    assert_eq!(msgs.len(), 1);
    assert_eq!(msgs[0]["role"], "user");
    let expected = riskprobe::contexts::render_prompt_with(
        find(&catalog(), RISK_AVOIDING).unwrap(),
        ContextPlacement::PrependToUser,
    );
    assert_eq!(msgs[0]["content"], expected.messages[0].content.as_str());
}

#[test]
fn transport_failure_becomes_unwanted_record() {
    let server = MockServer::start(vec![(500, "down".into())]);
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::new(
        dir.path().join("run"),
        vec![BackendSpec::Openai {
            id: BackendId {
                provider: "test".into(),
                model: "mock-model".into(),
                endpoint: server.url.clone(),
                auth_env: None,
            },
            rate_limit: RatePolicy::unlimited(),
            retry: RetryPolicy {
                max_attempts: 2,
                initial_backoff_ms: 1,
            },
            timeout_secs: 5,
            system_role: true,
        }],
    );
    cfg.contexts = vec![BASELINE.into()];
    cfg.trials_per_context = 2;
    cfg.workers = 1;
    let out = Runner::new(cfg).unwrap().run().unwrap();
    assert_eq!(out.exit_code(), 2);
    let recs = RunDir::new(&out.run_dir).load_records_strict().unwrap();
    assert_eq!(recs.len(), 2);
    for r in &recs {
        assert_eq!(r.parsed, ParsedAnswer::Unwanted(UnwantedReason::Transport));
        assert_eq!(r.attempts, 2);
        assert!(r.error.is_some());
    }
    assert_eq!(out.manifest.total_requests(), 4);
    assert_eq!(server.requests().len(), 4);
}
