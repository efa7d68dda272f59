mod common;

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use ictdst::bank::build_bank;
use ictdst::embedding::{remote_embed, EmbeddingProvider, RemoteEmbedder};
use ictdst::generation::{
    predict_states, remote_finetune, remote_generate, Generator, PairsSource, PredictConfig, RemoteGenerator,
};
use ictdst::http::{JsonClient, RetryPolicy};
use ictdst::retriever::Retriever;
use ictdst::Error;
use serde_json::{json, Value};

type Handler = dyn Fn(&str, &Value) -> (u16, String) + Send + Sync;

struct Server {
    url: String,
    hits: Arc<AtomicUsize>,
    bodies: Arc<Mutex<Vec<Value>>>,
}

/// One request per connection; the handler maps (path, JSON body) to a
/// status and a raw response body.
fn serve(handler: impl Fn(&str, &Value) -> (u16, String) + Send + Sync + 'static) -> Server {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let bodies = Arc::new(Mutex::new(Vec::new()));
    let handler: Arc<Handler> = Arc::new(handler);
    let (h, b) = (hits.clone(), bodies.clone());
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { return };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request_line = String::new();
            reader.read_line(&mut request_line).unwrap();
            let path = request_line.split_whitespace().nth(1).unwrap_or("").to_string();
            let mut len = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line.trim().is_empty() {
                    break;
                }
                if let Some((k, v)) = line.split_once(':') {
                    if k.eq_ignore_ascii_case("content-length") {
                        len = v.trim().parse().unwrap();
                    }
                }
            }
            let mut body = vec![0; len];
            reader.read_exact(&mut body).unwrap();
            let json: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
            h.fetch_add(1, Ordering::SeqCst);
            b.lock().unwrap().push(json.clone());
            let (status, out) = handler(&path, &json);
            let _ = write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{out}",
                out.len()
            );
        }
    });
    Server { url, hits, bodies }
}

fn policy() -> RetryPolicy {
    RetryPolicy {
        retries: 2,
        backoff: Duration::from_millis(1),
        timeout: Duration::from_secs(10),
    }
}

fn echo_generate(_: &str, body: &Value) -> (u16, String) {
    let n = body["inputs"].as_array().map_or(0, Vec::len);
    let outputs: Vec<String> = (0..n).map(|i| format!("out{i}")).collect();
    (200, json!({ "outputs": outputs }).to_string())
}

fn strings(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("input {i}")).collect()
}

#[test]
fn generate_is_order_preserving() {
    let server = serve(echo_generate);
    let client = JsonClient::new(&server.url, policy());
    let out = remote_generate(&client, &strings(5)).unwrap();
    assert_eq!(out, vec!["out0", "out1", "out2", "out3", "out4"]);
    assert_eq!(server.bodies.lock().unwrap()[0], json!({ "inputs": strings(5) }));
}

#[test]
fn empty_generate_batch_sends_nothing() {
    let server = serve(echo_generate);
    let client = JsonClient::new(&server.url, policy());
    assert!(remote_generate(&client, &[]).unwrap().is_empty());
    assert_eq!(server.hits.load(Ordering::SeqCst), 0);
}

#[test]
fn length_mismatch_is_a_protocol_error() {
    let server = serve(|_, _| (200, json!({ "outputs": ["a", "b"] }).to_string()));
    let client = JsonClient::new(&server.url, policy());
    let err = remote_generate(&client, &strings(3)).unwrap_err();
    assert!(matches!(err, Error::Protocol(_)), "{err}");
    assert!(!err.is_retryable());
}

#[test]
fn server_errors_are_retried_then_reported() {
    let server = serve(|_, _| (500, "{}".into()));
    let client = JsonClient::new(&server.url, policy());
    let err = remote_generate(&client, &strings(1)).unwrap_err();
    assert!(err.is_retryable(), "{err}");
    assert!(err.to_string().contains("500"), "{err}");
    assert_eq!(server.hits.load(Ordering::SeqCst), 3);
}

#[test]
fn client_errors_are_not_retried() {
    let server = serve(|_, _| (400, "{}".into()));
    let client = JsonClient::new(&server.url, policy());
    let err = remote_generate(&client, &strings(1)).unwrap_err();
    assert!(!err.is_retryable());
    assert_eq!(server.hits.load(Ordering::SeqCst), 1);
}

#[test]
fn transient_failure_recovers() {
    let first = AtomicUsize::new(0);
    let server = serve(move |p, b| {
        if first.fetch_add(1, Ordering::SeqCst) == 0 {
            (503, "{}".into())
        } else {
            echo_generate(p, b)
        }
    });
    let client = JsonClient::new(&server.url, policy());
    assert_eq!(remote_generate(&client, &strings(2)).unwrap().len(), 2);
}

#[test]
fn unreachable_endpoint_is_retryable() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    drop(listener);
    let err = remote_generate(&JsonClient::new(&url, policy()), &strings(1)).unwrap_err();
    assert!(matches!(err, Error::Remote { retryable: true, .. }), "{err}");
}

#[test]
fn garbage_body_is_a_protocol_error() {
    let server = serve(|_, _| (200, "not json".into()));
    let err = remote_generate(&JsonClient::new(&server.url, policy()), &strings(1)).unwrap_err();
    assert!(matches!(err, Error::Protocol(_)), "{err}");
}

#[test]
fn generated_values_are_normalized() {
    let dialogues = common::corpus(&["hotel"], 3, 2, 1);
    let ontology = common::ontology(&["hotel"]);
    let bank = build_bank(&dialogues).unwrap();
    let retriever = Retriever::bm25(&bank);
    let server = serve(|_, body| {
        let n = body["inputs"].as_array().unwrap().len();
        let outputs: Vec<&str> = (0..n).map(|i| if i % 2 == 0 { " Centre " } else { "none" }).collect();
        (200, json!({ "outputs": outputs }).to_string())
    });
    let generator = RemoteGenerator::new(&server.url, policy());
    let config = PredictConfig {
        batch_size: 3,
        ..PredictConfig::default()
    };
    let p = predict_states(&dialogues, &ontology, &retriever, &generator, &config).unwrap();
    let values: Vec<&str> = p.states.iter().flat_map(|s| s.state.iter().map(|(_, v)| v)).collect();
    assert!(!values.is_empty());
    assert!(values.iter().all(|v| *v == "centre"));
    let turns: usize = dialogues.iter().map(|d| d.turns().len()).sum();
    assert_eq!(server.hits.load(Ordering::SeqCst), (turns * 4).div_ceil(3));
    assert_eq!(generator.generate(&[]).unwrap().len(), 0);
}

#[test]
fn embed_client_normalizes_and_checks_shape() {
    let server = serve(|_, body| {
        let n = body["texts"].as_array().unwrap().len();
        (200, json!({ "vectors": vec![[3.0, 4.0]; n], "dim": 2 }).to_string())
    });
    let client = JsonClient::new(&server.url, policy());
    let vs = remote_embed(&client, &strings(3)).unwrap();
    assert_eq!(vs.len(), 3);
    assert_eq!(vs[0].values(), &[0.6, 0.8]);
    let provider = RemoteEmbedder::connect(&server.url, policy()).unwrap();
    assert_eq!(provider.dim(), 2);
    assert_eq!(provider.embed_batch(&strings(4)).unwrap().len(), 4);

    let short = serve(|_, _| (200, json!({ "vectors": [[1.0, 0.0]], "dim": 2 }).to_string()));
    let err = remote_embed(&JsonClient::new(&short.url, policy()), &strings(2)).unwrap_err();
    assert!(matches!(err, Error::Protocol(_)));
    let ragged = serve(|_, _| (200, json!({ "vectors": [[1.0, 0.0, 0.0]], "dim": 2 }).to_string()));
    assert!(remote_embed(&JsonClient::new(&ragged.url, policy()), &strings(1)).is_err());
}

#[test]
fn finetune_request_shape() {
    let server = serve(|path, _| {
        assert_eq!(path, "/finetune");
        (200, json!({ "final_loss": 0.25 }).to_string())
    });
    let client = JsonClient::new(&server.url, policy());
    let loss = remote_finetune(&client, PairsSource::Path("/tmp/pairs.jsonl".into()), 10, 7).unwrap();
    assert_eq!(loss, 0.25);
    remote_finetune(&client, PairsSource::Inline(vec![]), 1, 0).unwrap();
    let bodies = server.bodies.lock().unwrap();
    assert_eq!(bodies[0], json!({ "pairs_path_or_inline": "/tmp/pairs.jsonl", "epochs": 10, "seed": 7 }));
    assert_eq!(bodies[1]["pairs_path_or_inline"], json!([]));
}
