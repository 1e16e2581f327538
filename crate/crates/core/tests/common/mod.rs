#![allow(dead_code)]

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::thread;

use serde_json::{json, Value};

pub fn sf_mock(id: &str, name: &str, offset: f64, gain: f64) -> Value {
    json!({"id": id, "name": name, "kind": "sf_mock", "mock": {"offset": offset, "gain": gain}})
}

/// Agent 1 leans hard toward negative; agents 2-3 follow the structure more
/// readily.
pub fn board() -> Vec<Value> {
    vec![
        sf_mock("agent1", "Agent 1", -2.0, 2.0),
        sf_mock("agent2", "Agent 2", -1.0, 3.0),
        sf_mock("agent3", "Agent 3", 0.0, 8.0),
    ]
}

/// Synthetic four-lab config with every prosocial flag asserted.
pub fn config(run_id: &str, n: usize, max_rounds: u32, agents: Vec<Value>) -> Value {
    json!({
        "run_id": run_id,
        "schema": [
            {"name": "egfr", "bin_count": 3, "display_name": "estimated glomerular filtration rate (eGFR)"},
            {"name": "bun", "bin_count": 3, "display_name": "blood urea nitrogen (BUN)"},
            {"name": "hgb", "bin_count": 3, "display_name": "hemoglobin"},
            {"name": "k", "bin_count": 3, "display_name": "potassium"}
        ],
        "data": {
            "kind": "synth",
            "n": n,
            "planted": [
                {"feature": "egfr", "bin": 1, "weight": 2.5},
                {"feature": "bun", "bin": 3, "weight": 1.5},
                {"feature": "hgb", "bin": 1, "weight": 0.8},
                {"feature": "egfr", "bin": 3, "weight": -1.0}
            ],
            "intercept": -2.5,
            "synth_seed": 11
        },
        "split": {"ratios": {"train": 0.7, "valid": 0.15, "test": 0.15}, "split_seed": 7},
        "structure": {"k": 10, "background_size": 64, "background_seed": 3},
        "prosocial": {
            "flags": [
                {"name": "professional_shortage", "asserted": true, "weight": 0.333},
                {"name": "unavailable_reasoning", "asserted": true, "weight": 0.333},
                {"name": "general_support", "asserted": true, "weight": 0.334}
            ],
            "threshold": 0.336
        },
        "agents": agents,
        "agent_seed": 5,
        "rounds": {"q": 0.04, "max_rounds": max_rounds, "peer_weight": 0.5},
        "report": {"reference_agent": "agent1", "csv": true},
        "output_dir": "out"
    })
}

pub fn write_config(dir: &Path, cfg: &Value) -> PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    path
}

/// One captured request: header block and body.
#[derive(Debug, Clone)]
pub struct Seen {
    pub head: String,
    pub body: String,
}

/// Scripted HTTP/1.1 server on a loopback port. Each connection gets the
/// next scripted `(status, body)`; the last one repeats once the script
/// runs out.
pub struct MockServer {
    pub url: String,
    pub seen: Arc<Mutex<Vec<Seen>>>,
}

impl MockServer {
    pub fn start(script: Vec<(u16, String)>) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
        let seen = Arc::new(Mutex::new(Vec::new()));
        let log = Arc::clone(&seen);
        thread::spawn(move || {
            for (i, stream) in listener.incoming().enumerate() {
                let Ok(mut stream) = stream else { continue };
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut head = String::new();
                let mut length = 0usize;
                loop {
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        length = v.trim().parse().unwrap_or(0);
                    }
                    head.push_str(&line);
                }
                let mut body = vec![0; length];
                let _ = reader.read_exact(&mut body);
                log.lock().unwrap().push(Seen {
                    head,
                    body: String::from_utf8_lossy(&body).into_owned(),
                });
                let (status, text) = &script[i.min(script.len() - 1)];
                let reply = format!(
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
                    text.len()
                );
                let _ = stream.write_all(reply.as_bytes());
            }
        });
        Self { url, seen }
    }

    pub fn requests(&self) -> Vec<Seen> {
        self.seen.lock().unwrap().clone()
    }
}

/// A chat-completion body whose message content is `content`.
pub fn completion(content: &str) -> String {
    json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string()
}
