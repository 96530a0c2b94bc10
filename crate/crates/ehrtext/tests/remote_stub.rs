use std::time::Duration;

use ehrtext::cache::{CachedProvider, EmbeddingCache};
use ehrtext::core::embed::{hashing_embed, DecoderScorer, EmbeddingProvider, ProviderError};
use ehrtext::core::serialize::TokenCounter;
use ehrtext::remote::{RemoteClient, RemoteEmbedder, RemoteScorer, RemoteTokenizer, RetryPolicy};
use ehrtext::stub::{StubConfig, StubServer};

fn fast_retry(max_retries: u32) -> RetryPolicy {
    RetryPolicy { max_retries, base_delay: Duration::from_millis(1), max_delay: Duration::from_millis(5) }
}

fn client(server: &StubServer, model: &str, retries: u32) -> RemoteClient {
    RemoteClient::new(&server.url(), model, Duration::from_secs(10), 4, fast_retry(retries))
}

#[test]
fn health_lists_every_model() {
    let server = StubServer::start(StubConfig::default()).unwrap();
    let h = client(&server, "stub-embed", 0).health().unwrap();
    assert_eq!(h.status, "ok");
    assert_eq!(h.models, vec!["stub-embed".to_string(), "stub-decoder".to_string()]);
}

#[test]
fn embeddings_have_the_declared_dimension_and_are_deterministic() {
    let server = StubServer::start(StubConfig::default()).unwrap();
    let e = RemoteEmbedder::new(client(&server, "stub-embed", 0), 64);
    let a = e.embed("Does the patient have anemia?", "Hemoglobin 9.1 g/dL (low)").unwrap();
    let b = e.embed("Does the patient have anemia?", "Hemoglobin 9.1 g/dL (low)").unwrap();
    assert_eq!(a.dim(), 64);
    assert_eq!(a.values, b.values);
    assert_eq!(a.provider_id, "remote");
    assert_eq!(a.model_id, "stub-embed");
    let local = hashing_embed("Does the patient have anemia?", "Hemoglobin 9.1 g/dL (low)", 64, 0);
    assert_eq!(a.values, local);
}

#[test]
fn the_dimension_can_be_learned_from_the_first_answer() {
    let server = StubServer::start(StubConfig::default()).unwrap();
    let e = RemoteEmbedder::new(client(&server, "stub-embed", 0), 0);
    assert_eq!(e.dim(), 0);
    e.embed("", "text").unwrap();
    assert_eq!(e.dim(), 64);
}

#[test]
fn inputs_are_truncated_at_the_model_context() {
    let server = StubServer::start(StubConfig::default()).unwrap();
    let e = RemoteEmbedder::new(client(&server, "stub-embed", 0), 64);
    let head = "word ".repeat(512);
    let head = &head[..512 * 4];
    let long = format!("{head} and a tail that the model never sees");
    assert_eq!(e.embed("", &long).unwrap().values, e.embed("", head).unwrap().values);
    assert_ne!(e.embed("", &long[..100]).unwrap().values, e.embed("", head).unwrap().values);
}

#[test]
fn transient_failures_are_retried() {
    let server = StubServer::start(StubConfig { fail_first: 2, ..Default::default() }).unwrap();
    let e = RemoteEmbedder::new(client(&server, "stub-embed", 3), 64);
    assert_eq!(e.embed("", "x").unwrap().dim(), 64);
    assert_eq!(server.requests(), 3);
}

#[test]
fn retries_are_bounded() {
    let server = StubServer::start(StubConfig { fail_first: 100, ..Default::default() }).unwrap();
    let e = RemoteEmbedder::new(client(&server, "stub-embed", 2), 64);
    match e.embed("", "x") {
        Err(ProviderError::Unavailable(msg)) => assert!(msg.contains("3 attempts"), "{msg}"),
        other => panic!("expected unavailable, got {other:?}"),
    }
    assert_eq!(server.requests(), 3);
}

#[test]
fn unreachable_service_is_unavailable() {
    let url = {
        let server = StubServer::start(StubConfig::default()).unwrap();
        server.url()
    };
    let c = RemoteClient::new(&url, "stub-embed", Duration::from_millis(500), 1, fast_retry(1));
    assert!(matches!(RemoteEmbedder::new(c, 64).embed("", "x"), Err(ProviderError::Unavailable(_))));
}

#[test]
fn client_errors_are_not_retried() {
    let server = StubServer::start(StubConfig::default()).unwrap();
    let e = RemoteEmbedder::new(client(&server, "no-such-model", 3), 64);
    match e.embed("", "x") {
        Err(ProviderError::Rejected { status, .. }) => assert_eq!(status, 404),
        other => panic!("expected rejection, got {other:?}"),
    }
    assert_eq!(server.requests(), 1);
}

#[test]
fn dimension_mismatch_is_an_integrity_error() {
    let server = StubServer::start(StubConfig { wrong_dim: true, ..Default::default() }).unwrap();
    let e = RemoteEmbedder::new(client(&server, "stub-embed", 0), 64);
    assert!(matches!(e.embed("", "x"), Err(ProviderError::Integrity(_))));
}

#[test]
fn scores_aggregate_yes_and_no_mass() {
    let mut cfg = StubConfig::default();
    cfg.score_fixtures.insert("fixture prompt".into(), (0.3, 0.1));
    let server = StubServer::start(cfg).unwrap();
    let s = RemoteScorer(client(&server, "stub-decoder", 0));
    assert!((s.score("fixture prompt").unwrap() - 0.75).abs() < 1e-12);
    for prompt in ["a", "Does the patient have anemia? Answer Yes or No.", ""] {
        let p = s.score(prompt).unwrap();
        assert!((0.0..=1.0).contains(&p), "{prompt}: {p}");
    }
}

#[test]
fn tokenizer_counts_and_empty_text_is_zero() {
    let server = StubServer::start(StubConfig::default()).unwrap();
    let t = RemoteTokenizer(client(&server, "stub-embed", 0));
    assert_eq!(t.count("").unwrap(), 0);
    assert_eq!(client(&server, "stub-embed", 0).tokenize("").unwrap(), 0);
    assert_eq!(t.count("abcdefghi").unwrap(), 3);
}

#[test]
fn cached_embeddings_survive_a_restart_without_calling_the_service() {
    let dir = tempfile::tempdir().unwrap();
    let server = StubServer::start(StubConfig::default()).unwrap();
    let first = {
        let p = CachedProvider::new(RemoteEmbedder::new(client(&server, "stub-embed", 0), 64), EmbeddingCache::open(dir.path()).unwrap());
        let v = p.embed("inst", "text").unwrap();
        assert_eq!(p.embed("inst", "text").unwrap().values, v.values);
        assert_eq!((p.hits(), p.misses()), (1, 1));
        v
    };
    let before = server.requests();
    let p = CachedProvider::new(RemoteEmbedder::new(client(&server, "stub-embed", 0), 64), EmbeddingCache::open(dir.path()).unwrap());
    assert_eq!(p.embed("inst", "text").unwrap().values, first.values);
    assert_eq!(server.requests(), before);
    // a different instruction is a different entry
    p.embed("other", "text").unwrap();
    assert_eq!(server.requests(), before + 1);
}

#[test]
fn concurrent_callers_share_one_client() {
    let server = StubServer::start(StubConfig { delay: Duration::from_millis(5), ..Default::default() }).unwrap();
    let e = RemoteEmbedder::new(client(&server, "stub-embed", 0), 64);
    std::thread::scope(|s| {
        for i in 0..8 {
            let e = &e;
            s.spawn(move || {
                let text = format!("record {i}");
                assert_eq!(e.embed("", &text).unwrap().values, hashing_embed("", &text, 64, 0));
            });
        }
    });
    assert_eq!(server.requests(), 8);
}
