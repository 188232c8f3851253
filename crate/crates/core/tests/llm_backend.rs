use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use chromactl_core::llm::{ChatClient, ChatMessage, HttpChatClient, LlmError};
use chromactl_core::translate::{translate, Backend, PipelineConfig, Provenance, TranslateError};
use serde_json::{json, Value};

/// Minimal HTTP server that answers each request with the next scripted
/// assistant reply and records the request bodies.
fn serve(replies: Vec<String>) -> (String, Arc<Mutex<Vec<Value>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    thread::spawn(move || {
        for (stream, reply) in listener.incoming().zip(replies) {
            let mut stream = stream.unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" || line.is_empty() {
                    break;
                }
                let lower = line.to_ascii_lowercase();
                if let Some(v) = lower.strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
            }
            let mut body = vec![0; len];
            reader.read_exact(&mut body).unwrap();
            log.lock().unwrap().push(serde_json::from_slice(&body).unwrap());
            let payload = json!({"choices": [{"message": {"role": "assistant", "content": reply}}]}).to_string();
            write!(
                stream,
                "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
                payload.len(),
                payload
            )
            .unwrap();
        }
    });
    (format!("http://{addr}/v1/chat/completions"), seen)
}

fn client(endpoint: String) -> HttpChatClient {
    HttpChatClient {
        endpoint,
        model: "mixer".into(),
        key: Some("secret".into()),
        timeout: Duration::from_secs(5),
    }
}

#[test]
fn http_client_round_trip() {
    let (url, seen) = serve(vec!["```\nsetVolume(5);\n```".into()]);
    let reply = client(url)
        .complete(&[ChatMessage::system("s"), ChatMessage::user("u")])
        .unwrap();
    assert_eq!(reply, "```\nsetVolume(5);\n```");
    let body = &seen.lock().unwrap()[0];
    assert_eq!(body["model"], "mixer");
    assert_eq!(body["messages"][1]["content"], "u");
}

#[test]
fn valid_model_output_is_used() {
    let cfg = PipelineConfig::default();
    let program = "Pump1.write(144.7);\nPump2.write(0);\nPump3.write(0);\nsetVolume(5);";
    let (url, _) = serve(vec![format!("```arduino\n{program}\n```")]);
    let backend = Backend::Llm {
        client: Box::new(client(url)),
        fallback: true,
    };
    let t = translate("make 5 ml of cyan", &backend, &cfg, &cfg.fresh_state(0)).unwrap();
    assert_eq!(t.provenance, Provenance::Llm);
    assert_eq!(t.program.to_text(), program);
}

#[test]
fn invalid_output_retries_then_falls_back() {
    let cfg = PipelineConfig::default();
    let (url, seen) = serve(vec!["hello".into(), "Pump9.write(150);\nsetVolume(5);".into()]);
    let backend = Backend::Llm {
        client: Box::new(client(url)),
        fallback: true,
    };
    let t = translate("make 5 ml of cyan", &backend, &cfg, &cfg.fresh_state(0)).unwrap();
    assert_eq!(t.provenance, Provenance::RuleBasedFallback);
    assert_eq!(t.provenance.to_string(), "rule_based-fallback");
    let bodies = seen.lock().unwrap();
    assert_eq!(bodies.len(), 2);
    let retry = bodies[1]["messages"].as_array().unwrap();
    let follow_up = retry.last().unwrap()["content"].as_str().unwrap();
    assert!(follow_up.starts_with("make 5 ml of cyan"));
    assert!(follow_up.contains("previous program was rejected"), "{follow_up}");
}

#[test]
fn unreachable_endpoint_without_fallback_is_unavailable() {
    let cfg = PipelineConfig::default();
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/", listener.local_addr().unwrap());
    drop(listener);
    let backend = Backend::Llm {
        client: Box::new(client(url.clone())),
        fallback: false,
    };
    let err = translate("make 5 ml of cyan", &backend, &cfg, &cfg.fresh_state(0)).unwrap_err();
    assert!(matches!(err, TranslateError::BackendUnavailable(_)), "{err:?}");
    assert!(matches!(
        client(url).complete(&[ChatMessage::user("x")]),
        Err(LlmError::Transport(_))
    ));
}
