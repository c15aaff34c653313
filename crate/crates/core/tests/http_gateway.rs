//! HTTP backend behavior against a scripted in-process server: payload
//! shape, retry on transient failures, fatal classification, and auth.

use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::mpsc;
use std::thread;

use codebias::corpus::{
    build_dataset_filtered, CodePrompt, DimensionName, PromptVariantConfig, Vocabulary,
};
use codebias::gateway::{BackendSpec, Generator, RetryPolicy, SamplingConfig};
use codebias::Error;

struct Reply {
    status: &'static str,
    body: String,
}

fn ok_reply(texts: &[&str]) -> Reply {
    let choices: Vec<serde_json::Value> = texts
        .iter()
        .map(|t| serde_json::json!({ "text": t }))
        .collect();
    Reply {
        status: "200 OK",
        body: serde_json::json!({ "choices": choices }).to_string(),
    }
}

/// Serves the scripted replies one connection at a time and forwards each
/// raw request to the returned channel.
fn serve(replies: Vec<Reply>) -> (String, mpsc::Receiver<String>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/completions", listener.local_addr().unwrap());
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for reply in replies {
            let (mut stream, _) = listener.accept().unwrap();
            let request = read_request(&mut stream);
            tx.send(request).ok();
            let response = format!(
                "HTTP/1.1 {}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
                reply.status,
                reply.body.len(),
                reply.body
            );
            stream.write_all(response.as_bytes()).ok();
        }
    });
    (url, rx)
}

fn read_request(stream: &mut TcpStream) -> String {
    let mut buf = Vec::new();
    let mut chunk = [0u8; 4096];
    loop {
        let n = stream.read(&mut chunk).unwrap_or(0);
        if n == 0 {
            break;
        }
        buf.extend_from_slice(&chunk[..n]);
        if let Some(header_end) = buf
            .windows(4)
            .position(|window| window == b"\r\n\r\n")
        {
            let headers = String::from_utf8_lossy(&buf[..header_end]).to_ascii_lowercase();
            let content_length = headers
                .lines()
                .find_map(|line| line.strip_prefix("content-length:"))
                .and_then(|value| value.trim().parse::<usize>().ok())
                .unwrap_or(0);
            if buf.len() >= header_end + 4 + content_length {
                break;
            }
        }
    }
    String::from_utf8_lossy(&buf).to_string()
}

fn one_prompt() -> CodePrompt {
    let vocab = Vocabulary::builtin().unwrap();
    build_dataset_filtered(
        &vocab,
        &PromptVariantConfig::default(),
        Some(&[DimensionName::Ethnicity]),
    )
    .unwrap()
    .remove(0)
}

fn http_backend(url: &str) -> BackendSpec {
    BackendSpec::Http {
        endpoint_url: url.to_string(),
        model_name: "test-model".to_string(),
        auth_token_env: None,
        name: None,
    }
}

fn fast_retry(max_attempts: u32) -> RetryPolicy {
    RetryPolicy {
        max_attempts,
        base_delay_ms: 1,
        max_delay_ms: 2,
    }
}

fn sampling(num_samples: u32) -> SamplingConfig {
    SamplingConfig {
        num_samples,
        ..SamplingConfig::default()
    }
}

#[test]
fn success_parses_choices_and_sends_the_full_payload() {
    let prompt = one_prompt();
    let (url, rx) = serve(vec![ok_reply(&[
        "    return people\n",
        "    return []\ndef unwanted():\n    pass",
    ])]);
    let generator = Generator::new(http_backend(&url), fast_retry(3)).unwrap();
    let records = generator.generate(&prompt, &sampling(2)).unwrap();

    assert_eq!(records.len(), 2);
    assert_eq!(records[0].completion, "    return people\n");
    assert_eq!(records[1].completion, "    return []");
    assert_eq!(records[0].backend, "test-model");
    assert_eq!(records[0].sample_index, 0);
    assert_eq!(records[1].sample_index, 1);

    let request = rx.recv().unwrap();
    assert!(!request.to_ascii_lowercase().contains("authorization:"));
    let body_start = request.find("\r\n\r\n").unwrap() + 4;
    let payload: serde_json::Value = serde_json::from_str(&request[body_start..]).unwrap();
    assert_eq!(payload["model"], "test-model");
    assert_eq!(payload["prompt"], prompt.text);
    assert_eq!(payload["n"], 2);
    assert_eq!(payload["max_tokens"], 128);
    assert_eq!(payload["temperature"], 0.8);
    assert_eq!(payload["top_p"], 0.95);
    assert_eq!(payload["stop"], serde_json::json!(["\ndef "]));
}

#[test]
fn transient_statuses_are_retried_until_success() {
    let prompt = one_prompt();
    let (url, rx) = serve(vec![
        Reply {
            status: "429 Too Many Requests",
            body: "slow down".into(),
        },
        Reply {
            status: "503 Service Unavailable",
            body: "busy".into(),
        },
        ok_reply(&["    return people\n"]),
    ]);
    let generator = Generator::new(http_backend(&url), fast_retry(5)).unwrap();
    let records = generator.generate(&prompt, &sampling(1)).unwrap();
    assert_eq!(records.len(), 1);
    assert_eq!(rx.iter().count(), 3);
}

#[test]
fn exhausted_retries_report_the_last_transient_error() {
    let prompt = one_prompt();
    let replies = (0..3)
        .map(|_| Reply {
            status: "429 Too Many Requests",
            body: "slow down".into(),
        })
        .collect();
    let (url, rx) = serve(replies);
    let generator = Generator::new(http_backend(&url), fast_retry(3)).unwrap();
    let err = generator.generate(&prompt, &sampling(1)).unwrap_err();
    let Error::Backend { prompt_id, message } = err else {
        panic!("expected a backend error, got {err:?}");
    };
    assert_eq!(prompt_id, prompt.id);
    assert!(message.contains("giving up after 3"), "message: {message}");
    assert!(message.contains("429"), "message: {message}");
    assert_eq!(rx.iter().count(), 3);
}

#[test]
fn client_errors_are_fatal_without_retry() {
    let prompt = one_prompt();
    let (url, rx) = serve(vec![Reply {
        status: "404 Not Found",
        body: "no such model".into(),
    }]);
    let generator = Generator::new(http_backend(&url), fast_retry(5)).unwrap();
    let err = generator.generate(&prompt, &sampling(1)).unwrap_err();
    let message = err.to_string();
    assert!(message.contains("404"), "message: {message}");
    assert!(message.contains("no such model"), "message: {message}");
    assert_eq!(rx.iter().count(), 1);
}

#[test]
fn malformed_response_body_is_fatal() {
    let prompt = one_prompt();
    let (url, rx) = serve(vec![Reply {
        status: "200 OK",
        body: "this is not json".into(),
    }]);
    let generator = Generator::new(http_backend(&url), fast_retry(5)).unwrap();
    let err = generator.generate(&prompt, &sampling(1)).unwrap_err();
    assert!(err.to_string().contains("malformed"), "got: {err}");
    assert_eq!(rx.iter().count(), 1);
}

#[test]
fn wrong_choice_count_is_fatal() {
    let prompt = one_prompt();
    let (url, rx) = serve(vec![ok_reply(&["only one"])]);
    let generator = Generator::new(http_backend(&url), fast_retry(5)).unwrap();
    let err = generator.generate(&prompt, &sampling(3)).unwrap_err();
    let message = err.to_string();
    assert!(message.contains("1 choice(s)"), "message: {message}");
    assert!(message.contains("requested 3"), "message: {message}");
    assert_eq!(rx.iter().count(), 1);
}

#[test]
fn bearer_token_is_read_from_the_environment() {
    let prompt = one_prompt();
    let (url, rx) = serve(vec![ok_reply(&["    return people\n"])]);
    std::env::set_var("CODEBIAS_HTTP_TEST_TOKEN", "secret-value");
    let spec = BackendSpec::Http {
        endpoint_url: url,
        model_name: "test-model".to_string(),
        auth_token_env: Some("CODEBIAS_HTTP_TEST_TOKEN".to_string()),
        name: Some("named-backend".to_string()),
    };
    let generator = Generator::new(spec, fast_retry(3)).unwrap();
    let records = generator.generate(&prompt, &sampling(1)).unwrap();
    assert_eq!(records[0].backend, "named-backend");
    let request = rx.recv().unwrap().to_ascii_lowercase();
    assert!(
        request.contains("authorization: bearer secret-value"),
        "request headers missing bearer token:\n{request}"
    );
}
