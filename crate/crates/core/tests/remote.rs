use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;

use overshadow::provider::{FnProvider, LogprobRequest, LogprobServer, ProviderError, RemoteProviderConfig};
use overshadow::{NextTokenProvider, RemoteProvider};

/// Answers every request with `status` and `body`, counting the hits.
fn stub(status: u16, body: &'static str) -> (String, Arc<AtomicUsize>) {
    let server = tiny_http::Server::http("127.0.0.1:0").unwrap();
    let url = format!("http://{}", server.server_addr().to_ip().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let counter = Arc::clone(&hits);
    thread::spawn(move || {
        for mut req in server.incoming_requests() {
            let mut text = String::new();
            req.as_reader().read_to_string(&mut text).unwrap();
            let _: LogprobRequest = serde_json::from_str(&text).unwrap();
            counter.fetch_add(1, Ordering::SeqCst);
            let _ = req.respond(tiny_http::Response::from_string(body).with_status_code(status));
        }
    });
    (url, hits)
}

fn remote(url: &str, vocab: usize) -> RemoteProvider {
    let mut cfg = RemoteProviderConfig::new(url, vocab, 16);
    cfg.retries = 2;
    cfg.timeout_ms = 2000;
    RemoteProvider::new(cfg).unwrap()
}

#[test]
fn reconstructs_the_stub_distribution() {
    let (url, hits) = stub(200, r#"{"entries":[{"token":2,"logprob":-0.10536051565782628}],"tail_logprob":-2.3025850929940455}"#);
    let d = remote(&url, 5).next_token(&[1, 2]).unwrap();
    assert!((d.prob(2) - 0.9).abs() < 1e-12);
    for t in [0, 1, 3, 4] {
        assert!((d.prob(t) - 0.025).abs() < 1e-12);
    }
    assert_eq!(hits.load(Ordering::SeqCst), 1);
}

#[test]
fn server_errors_are_retried_then_reported() {
    let (url, hits) = stub(503, "busy");
    let err = remote(&url, 4).next_token(&[0]).unwrap_err();
    assert!(matches!(err, ProviderError::RetryExhausted { attempts: 3, .. }), "{err:?}");
    assert_eq!(hits.load(Ordering::SeqCst), 3);
}

#[test]
fn client_errors_are_not_retried() {
    let (url, hits) = stub(400, "bad");
    let err = remote(&url, 4).next_token(&[0]).unwrap_err();
    assert!(matches!(err, ProviderError::Status(400)), "{err:?}");
    assert_eq!(hits.load(Ordering::SeqCst), 1);
}

#[test]
fn malformed_bodies_are_rejected() {
    let (url, _) = stub(200, r#"{"entries":[{"token":9,"logprob":-0.1}],"tail_logprob":null}"#);
    assert!(matches!(remote(&url, 4).next_token(&[0]), Err(ProviderError::Malformed(_))));
    let (url, _) = stub(200, "not json");
    assert!(matches!(remote(&url, 4).next_token(&[0]), Err(ProviderError::Malformed(_))));
}

#[test]
fn context_overflow_is_caught_before_sending() {
    let (url, hits) = stub(200, r#"{"entries":[],"tail_logprob":0.0}"#);
    let prefix: Vec<u32> = (0..17).map(|i| i % 4).collect();
    assert!(matches!(remote(&url, 4).next_token(&prefix), Err(ProviderError::ContextOverflow { .. })));
    assert_eq!(hits.load(Ordering::SeqCst), 0);
}

#[test]
fn round_trips_through_the_bundled_server() {
    let local = FnProvider::new(6, 16, |prefix: &[u32]| {
        let w: Vec<f64> = (0..6).map(|t| 1.0 + ((t + prefix.len()) % 6) as f64).collect();
        let total: f64 = w.iter().sum();
        w.into_iter().map(|x| x / total).collect()
    });
    let local = Arc::new(local);
    let server = LogprobServer::spawn(local.clone(), "127.0.0.1:0").unwrap();
    let provider = remote(&server.url(), 6);
    let prefixes: Vec<Vec<u32>> = (0..5).map(|n| (0..n).collect()).collect();
    let batch = provider.next_token_batch(&prefixes).unwrap();
    for (prefix, got) in prefixes.iter().zip(&batch) {
        let want = local.next_token(prefix).unwrap();
        for t in 0..6 {
            assert!((got.prob(t) - want.prob(t)).abs() < 1e-12);
        }
    }
}

/// Serves a fixed distribution, honouring the requested `top_k`, and records each `top_k`.
fn ranked_stub(probs: Vec<f64>) -> (String, Arc<std::sync::Mutex<Vec<usize>>>) {
    let server = tiny_http::Server::http("127.0.0.1:0").unwrap();
    let url = format!("http://{}", server.server_addr().to_ip().unwrap());
    let seen = Arc::new(std::sync::Mutex::new(Vec::new()));
    let log = Arc::clone(&seen);
    thread::spawn(move || {
        for mut req in server.incoming_requests() {
            let mut text = String::new();
            req.as_reader().read_to_string(&mut text).unwrap();
            let r: LogprobRequest = serde_json::from_str(&text).unwrap();
            log.lock().unwrap().push(r.top_k);
            let body = serde_json::to_string(&overshadow::provider::top_k_response(&probs, r.top_k)).unwrap();
            let _ = req.respond(tiny_http::Response::from_string(body));
        }
    });
    (url, seen)
}

#[test]
fn top_k_widens_until_plausible_tokens_are_covered() {
    // 40 tokens share 0.8 evenly; the other 60 share the rest.
    let probs: Vec<f64> = (0..100).map(|t| if t < 40 { 0.02 } else { 0.2 / 60.0 }).collect();
    let (url, seen) = ranked_stub(probs.clone());
    let mut cfg = RemoteProviderConfig::new(&url, 100, 16);
    cfg.top_k = 8;
    cfg.coverage_ratio = Some(0.5);
    let d = RemoteProvider::new(cfg).unwrap().next_token(&[1]).unwrap();
    assert_eq!(*seen.lock().unwrap(), vec![8, 16, 32, 64]);
    for t in 0..40 {
        assert!((d.prob(t) - 0.02).abs() < 1e-12);
    }

    let (url, seen) = ranked_stub(probs);
    let mut cfg = RemoteProviderConfig::new(&url, 100, 16);
    cfg.top_k = 8;
    let d = RemoteProvider::new(cfg).unwrap().next_token(&[1]).unwrap();
    assert_eq!(*seen.lock().unwrap(), vec![8]);
    assert!(d.prob(39) < 0.02);
}
