use std::path::PathBuf;
use std::sync::Arc;

use quake3m::assess::{read_assessments, Outcome, Pipeline, PipelineConfig};
use quake3m::corpus::{filter_damage_related, load_corpus, CorpusFormat, TermLibrary, TweetRecord};
use quake3m::geo::{EventConfig, Gazetteer, LocationTier};
use quake3m::mllm::{
    record_transcript, BackendMode, BackendProfile, Client, ForbiddenTransport, ReplayStore, ScriptRules,
};
use quake3m::prompts::{Modality, PromptVersion};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn corpus(name: &str) -> Vec<TweetRecord> {
    let loaded = load_corpus(&fixture(name), &CorpusFormat::Jsonl).unwrap();
    assert!(loaded.malformed.is_empty());
    loaded.records
}

fn script() -> ScriptRules {
    serde_json::from_str(&std::fs::read_to_string(fixture("mock_script.json")).unwrap()).unwrap()
}

fn pipeline(client: Client, profile: BackendProfile, parallelism: usize) -> Pipeline {
    let mut cfg = PipelineConfig::new(
        EventConfig::ridgecrest_2019(),
        profile,
        Modality::TextOnly,
        PromptVersion::V1,
    );
    cfg.parallelism = parallelism;
    Pipeline::new(cfg, client, Gazetteer::bundled())
}

fn scripted(parallelism: usize) -> Pipeline {
    let profile = BackendProfile::scripted("mock", "qwen-2.5-vl-7b");
    let client = Client::new(profile.clone())
        .with_transport(Arc::new(ForbiddenTransport))
        .with_script(Arc::new(script()));
    pipeline(client, profile, parallelism)
}

fn run(p: &Pipeline, records: &[TweetRecord]) -> Vec<u8> {
    let mut out = Vec::new();
    p.assess_batch(records, Some(&mut out)).unwrap();
    out
}

#[test]
fn filter_fixture_keeps_exactly_the_planted_posts() {
    let records = corpus("filter_200.jsonl");
    assert_eq!(records.len(), 200);
    let kept = filter_damage_related(&records, &TermLibrary::bundled());
    let ids: Vec<_> = kept.iter().map(|r| r.id.as_str()).collect();
    assert_eq!(ids.len(), 120, "{ids:?}");
    assert!(ids.iter().all(|id| id.starts_with("keep-")));
}

#[test]
fn mock_corpus_outcomes() {
    let records = corpus("mock_100.jsonl");
    let (results, summary) = scripted(1).assess_batch(&records, None).unwrap();
    assert_eq!(summary.total, 100);
    assert_eq!(summary.count(Outcome::Assessed), 82);
    assert_eq!(summary.count(Outcome::NotEvent), 10);
    assert_eq!(summary.count(Outcome::UnresolvedLocation), 5);
    assert_eq!(summary.count(Outcome::ParseFailed), 3);

    let by_id = |id: &str| results.iter().find(|r| r.tweet_id == id).unwrap();
    assert_eq!(by_id("m000").resolved.tier, LocationTier::Geotag);
    assert_eq!(by_id("m050").resolved.tier, LocationTier::Content);
    assert_eq!(by_id("m095").resolved.tier, LocationTier::Profile);
    assert!(by_id("m098").diagnostic.is_some());
}

#[test]
fn output_is_identical_across_parallelism() {
    let records = corpus("mock_100.jsonl");
    let serial = run(&scripted(1), &records);
    let parallel = run(&scripted(8), &records);
    assert_eq!(serial, parallel);
    let parsed = read_assessments(std::str::from_utf8(&serial).unwrap()).unwrap();
    assert_eq!(parsed.len(), 100);
}

#[test]
fn recorded_run_replays_without_network() {
    let records = corpus("mock_100.jsonl");
    let dir = tempfile::tempdir().unwrap();
    let transcript = dir.path().join("run.jsonl");
    let profile = BackendProfile::scripted("mock", "qwen-2.5-vl-7b");
    let recorder = record_transcript(&profile, &transcript).unwrap();
    let client = Client::new(profile.clone())
        .with_transport(Arc::new(ForbiddenTransport))
        .with_script(Arc::new(script()))
        .with_recorder(recorder);
    let recorded = run(&pipeline(client, profile.clone(), 4), &records);

    let mut replay_profile = profile;
    replay_profile.mode = BackendMode::Replay;
    let client = Client::new(replay_profile.clone())
        .with_transport(Arc::new(ForbiddenTransport))
        .with_replay(ReplayStore::load(&transcript).unwrap());
    let replayed = run(&pipeline(client, replay_profile, 3), &records);
    assert_eq!(recorded, replayed);
}

#[test]
fn fusion_without_images_makes_no_calls() {
    let records: Vec<_> = corpus("mock_100.jsonl")
        .into_iter()
        .filter(|r| r.images().next().is_none())
        .collect();
    let profile = BackendProfile::scripted("mock", "qwen-2.5-vl-7b");
    let client = Client::new(profile.clone())
        .with_transport(Arc::new(ForbiddenTransport))
        .with_script(Arc::new(script()));
    let mut cfg = PipelineConfig::new(
        EventConfig::ridgecrest_2019(),
        profile,
        Modality::Fusion,
        PromptVersion::V1,
    );
    cfg.parallelism = 2;
    let p = Pipeline::new(cfg, client, Gazetteer::bundled());
    let (results, summary) = p.assess_batch(&records, None).unwrap();
    assert_eq!(summary.count(Outcome::ParseFailed), records.len());
    assert!(results
        .iter()
        .all(|r| r.diagnostic.as_deref().unwrap().contains("image")));
    assert_eq!(p.client().call_count(), 0);
}
