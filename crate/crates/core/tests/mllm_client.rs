use std::collections::VecDeque;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use quake3m::mllm::{
    record_transcript, BackendMode, BackendProfile, ChatRequest, Client, Clock, ForbiddenTransport, HttpReply,
    MllmError, ReplayStore, ScriptRules, SimulatedClock, Transport, TransportError,
};

/// Answers from a fixed queue of statuses and counts calls.
struct QueuedTransport {
    statuses: Mutex<VecDeque<u16>>,
    calls: Mutex<usize>,
}

impl QueuedTransport {
    fn new(statuses: &[u16]) -> Arc<Self> {
        Arc::new(QueuedTransport {
            statuses: Mutex::new(statuses.iter().copied().collect()),
            calls: Mutex::new(0),
        })
    }

    fn calls(&self) -> usize {
        *self.calls.lock().unwrap()
    }
}

impl Transport for QueuedTransport {
    fn post_json(&self, _url: &str, bearer: &str, body: &str) -> Result<HttpReply, TransportError> {
        assert_eq!(bearer, "test-key");
        assert!(body.contains("\"model\""));
        *self.calls.lock().unwrap() += 1;
        let status = self.statuses.lock().unwrap().pop_front().unwrap_or(200);
        let body = if status == 200 {
            r#"{"choices":[{"message":{"content":"{\"ok\": true}"},"finish_reason":"stop"}]}"#.to_string()
        } else {
            "slow down".to_string()
        };
        Ok(HttpReply { status, body })
    }
}

fn live(max_retries: u32) -> BackendProfile {
    BackendProfile {
        name: "test-live".into(),
        base_url: "https://example.invalid/v1".into(),
        model_id: "gpt-4o".into(),
        requests_per_minute: 60,
        max_retries,
        mode: BackendMode::Live,
    }
}

#[test]
fn retries_transient_statuses_then_succeeds() {
    let transport = QueuedTransport::new(&[429, 503, 200]);
    let clock = Arc::new(SimulatedClock::new());
    let client = Client::new(live(3))
        .with_transport(transport.clone())
        .with_clock(clock.clone())
        .with_jitter_seed(7)
        .with_credential("test-key");
    let resp = client.complete(&ChatRequest::text("hello")).unwrap();
    assert_eq!(resp.text, "{\"ok\": true}");
    assert_eq!(transport.calls(), 3);
    let sleeps = clock.sleeps();
    assert_eq!(sleeps.len(), 2);
    assert!(sleeps[0] <= Duration::from_secs(1));
    assert!(sleeps[1] <= Duration::from_secs(2));
}

#[test]
fn retries_are_bounded() {
    let transport = QueuedTransport::new(&[429, 429, 200]);
    let client = Client::new(live(1))
        .with_transport(transport.clone())
        .with_clock(Arc::new(SimulatedClock::new()))
        .with_jitter_seed(7)
        .with_credential("test-key");
    match client.complete(&ChatRequest::text("hello")) {
        Err(MllmError::RetriesExhausted { attempts, .. }) => assert_eq!(attempts, 2),
        other => panic!("expected exhaustion, got {other:?}"),
    }
    assert_eq!(transport.calls(), 2);
}

#[test]
fn client_errors_are_not_retried() {
    let transport = QueuedTransport::new(&[400]);
    let client = Client::new(live(5))
        .with_transport(transport.clone())
        .with_clock(Arc::new(SimulatedClock::new()))
        .with_credential("test-key");
    assert!(matches!(
        client.complete(&ChatRequest::text("x")),
        Err(MllmError::Http { status: 400, .. })
    ));
    assert_eq!(transport.calls(), 1);
}

#[test]
fn missing_credential_names_the_variable() {
    let mut profile = live(0);
    profile.name = "no-such-backend-xyz".into();
    let client = Client::new(profile).with_transport(Arc::new(ForbiddenTransport));
    match client.complete(&ChatRequest::text("x")) {
        Err(MllmError::MissingCredential { env_var, .. }) => {
            assert_eq!(env_var, "QUAKE3M_API_KEY_NO_SUCH_BACKEND_XYZ")
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn rate_limit_spaces_requests() {
    let transport = QueuedTransport::new(&[]);
    let clock = Arc::new(SimulatedClock::new());
    let mut profile = live(0);
    profile.requests_per_minute = 2;
    let client = Client::new(profile)
        .with_transport(transport.clone())
        .with_clock(clock.clone())
        .with_credential("test-key");
    for i in 0..5 {
        client.complete(&ChatRequest::text(format!("q{i}"))).unwrap();
    }
    // 5 requests at 2/min: the 3rd and 5th each wait a full window
    assert_eq!(clock.now(), Duration::from_secs(120));
    assert_eq!(transport.calls(), 5);
}

#[test]
fn record_then_replay_is_identical_and_offline() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("transcript.jsonl");
    let profile = BackendProfile::scripted("mock", "qwen-2.5-vl-7b");
    let recorder = record_transcript(&profile, &path).unwrap();
    let script = ScriptRules::constant("fallback")
        .rule(&["alpha"], "A")
        .rule(&["beta"], "B");
    let recording = Client::new(profile.clone())
        .with_transport(Arc::new(ForbiddenTransport))
        .with_script(Arc::new(script))
        .with_recorder(recorder);
    let requests = [
        ChatRequest::text("alpha"),
        ChatRequest::text("beta"),
        ChatRequest::text("gamma").with_image("https://example.invalid/a.jpg"),
    ];
    let first: Vec<_> = requests.iter().map(|r| recording.complete(r).unwrap()).collect();
    drop(recording);

    let store = ReplayStore::load(&path).unwrap();
    assert_eq!(store.len(), 3);
    let mut replay_profile = profile.clone();
    replay_profile.mode = BackendMode::Replay;
    let replay = Client::new(replay_profile.clone())
        .with_transport(Arc::new(ForbiddenTransport))
        .with_replay(store);
    for (req, expected) in requests.iter().zip(&first) {
        assert_eq!(&replay.complete(req).unwrap(), expected);
    }
    match replay.complete(&ChatRequest::text("delta")) {
        Err(MllmError::ReplayMiss { .. }) => {}
        other => panic!("{other:?}"),
    }
    assert!(record_transcript(&replay_profile, &dir.path().join("x.jsonl")).is_err());
}

#[test]
fn live_mode_prefers_recorded_answers() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.jsonl");
    let mut profile = live(0);
    profile.mode = BackendMode::Script;
    let recorder = record_transcript(&profile, &path).unwrap();
    let req = ChatRequest::text("cached question");
    Client::new(profile)
        .with_script(Arc::new(ScriptRules::constant("cached")))
        .with_recorder(recorder)
        .complete(&req)
        .unwrap();

    let client = Client::new(live(0))
        .with_transport(Arc::new(ForbiddenTransport))
        .with_replay(ReplayStore::load(&path).unwrap())
        .with_credential("test-key");
    assert_eq!(client.complete(&req).unwrap().text, "cached");
}

#[test]
fn mode_without_source_is_an_error() {
    let client = Client::new(BackendProfile::scripted("mock", "m")).with_transport(Arc::new(ForbiddenTransport));
    assert!(matches!(
        client.complete(&ChatRequest::text("x")),
        Err(MllmError::Mode { .. })
    ));
}
