use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::thread::JoinHandle;
use std::time::Duration;

use ego_core::eval::{judge_answer, ChatCompletionJudge, Judge};
use ego_core::pipeline::PromptTemplateSet;
use ego_core::Error;

struct Captured {
    request_line: String,
    headers: Vec<String>,
    body: serde_json::Value,
}

/// Serve `replies` to consecutive connections, returning what each request sent.
fn serve(replies: Vec<(u16, String)>) -> (String, JoinHandle<Vec<Captured>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let handle = std::thread::spawn(move || {
        let mut seen = Vec::new();
        for (status, body) in replies {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream);
            let mut request_line = String::new();
            reader.read_line(&mut request_line).unwrap();
            let mut headers = Vec::new();
            let mut length = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end().to_string();
                if line.is_empty() {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    length = v.trim().parse().unwrap();
                }
                headers.push(line);
            }
            let mut raw = vec![0u8; length];
            reader.read_exact(&mut raw).unwrap();
            seen.push(Captured {
                request_line: request_line.trim_end().to_string(),
                headers,
                body: serde_json::from_slice(&raw).unwrap(),
            });
            let mut stream = reader.into_inner();
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
            stream.flush().unwrap();
        }
        seen
    });
    (url, handle)
}

fn completion(content: &str) -> String {
    serde_json::json!({"choices": [{"index": 0, "message": {"role": "assistant", "content": content}}]}).to_string()
}

#[test]
fn judge_posts_the_rendered_prompt() {
    let (url, server) = serve(vec![(200, completion("Yes")), (200, completion("no."))]);
    let judge = ChatCompletionJudge::new(&url, "grader-1", Some("k-123".into()), Duration::from_secs(10));
    let templates = PromptTemplateSet::default();
    assert!(judge_answer(&judge, &templates, "What color?", "red", "It is red").unwrap());
    assert!(!judge_answer(&judge, &templates, "What color?", "red", "blue").unwrap());

    let seen = server.join().unwrap();
    assert_eq!(seen.len(), 2);
    assert_eq!(seen[0].request_line, "POST /v1/chat/completions HTTP/1.1");
    assert!(seen[0].headers.iter().any(|h| h == "authorization: Bearer k-123" || h == "Authorization: Bearer k-123"));
    let body = &seen[0].body;
    assert_eq!(body["model"], "grader-1");
    assert_eq!(body["temperature"], 0);
    assert_eq!(body["messages"][0]["role"], "user");
    let prompt = body["messages"][0]["content"].as_str().unwrap();
    assert!(prompt.contains("Question: What color?\nCorrect Answer: red\nPredicted Answer: It is red\n"));
    assert!(!prompt.contains("{pred}"));
}

#[test]
fn http_errors_and_bad_payloads_are_judge_errors() {
    let (url, server) = serve(vec![
        (500, "{\"error\": \"overloaded\"}".into()),
        (200, "not json".into()),
        (200, "{\"choices\": []}".into()),
    ]);
    let judge = ChatCompletionJudge::new(&url, "m", None, Duration::from_secs(10));
    for expected in ["HTTP 500", "not JSON", "no choices"] {
        match judge.complete("q") {
            Err(Error::Judge(m)) => assert!(m.contains(expected), "{m}"),
            other => panic!("expected a judge error, got {other:?}"),
        }
    }
    let seen = server.join().unwrap();
    assert!(seen[0].headers.iter().all(|h| !h.to_ascii_lowercase().starts_with("authorization")));
}

#[test]
fn unreachable_endpoint_is_a_judge_error() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let judge = ChatCompletionJudge::new(format!("http://127.0.0.1:{port}/x"), "m", None, Duration::from_secs(2));
    assert!(matches!(judge.complete("q"), Err(Error::Judge(_))));
}
