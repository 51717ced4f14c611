#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

/// A request as seen by [`TestServer`].
#[derive(Clone, Debug)]
pub struct Recorded {
    pub method: String,
    pub path: String,
    pub headers: Vec<(String, String)>,
    pub body: String,
}

impl Recorded {
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }

    pub fn json(&self) -> serde_json::Value {
        serde_json::from_str(&self.body).expect("request body is JSON")
    }
}

type Handler = dyn Fn(&Recorded) -> (u16, String) + Send + Sync;

/// Minimal HTTP/1.1 server on 127.0.0.1 answering every request with the
/// handler's `(status, body)` and closing the connection.
pub struct TestServer {
    pub url: String,
    pub requests: Arc<Mutex<Vec<Recorded>>>,
    _thread: JoinHandle<()>,
}

impl TestServer {
    pub fn start(handler: impl Fn(&Recorded) -> (u16, String) + Send + Sync + 'static) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let requests = Arc::new(Mutex::new(Vec::new()));
        let log = requests.clone();
        let handler: Arc<Handler> = Arc::new(handler);
        let thread = std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { continue };
                let (log, handler) = (log.clone(), handler.clone());
                std::thread::spawn(move || serve(stream, &log, handler.as_ref()));
            }
        });
        Self {
            url,
            requests,
            _thread: thread,
        }
    }

    pub fn requests(&self) -> Vec<Recorded> {
        self.requests.lock().unwrap().clone()
    }
}

fn serve(stream: TcpStream, log: &Mutex<Vec<Recorded>>, handler: &Handler) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut line = String::new();
    if reader.read_line(&mut line).unwrap_or(0) == 0 {
        return;
    }
    let mut parts = line.split_whitespace();
    let method = parts.next().unwrap_or_default().to_string();
    let path = parts.next().unwrap_or_default().to_string();
    let mut headers = Vec::new();
    loop {
        let mut h = String::new();
        if reader.read_line(&mut h).unwrap_or(0) == 0 || h.trim().is_empty() {
            break;
        }
        if let Some((k, v)) = h.split_once(':') {
            headers.push((k.trim().to_string(), v.trim().to_string()));
        }
    }
    let len = headers
        .iter()
        .find(|(k, _)| k.eq_ignore_ascii_case("content-length"))
        .and_then(|(_, v)| v.parse::<usize>().ok())
        .unwrap_or(0);
    let mut body = vec![0u8; len];
    reader.read_exact(&mut body).unwrap();
    let req = Recorded {
        method,
        path,
        headers,
        body: String::from_utf8_lossy(&body).into_owned(),
    };
    log.lock().unwrap().push(req.clone());
    let (status, body) = handler(&req);
    let response = format!(
        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    );
    let mut stream = stream;
    let _ = stream.write_all(response.as_bytes());
    let _ = stream.flush();
}

/// Address nobody listens on.
pub fn dead_url() -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    drop(listener);
    url
}

/// Chat-completions response carrying `text`.
pub fn chat_reply(text: &str) -> String {
    serde_json::json!({"choices": [{"message": {"role": "assistant", "content": text}}]}).to_string()
}

/// Canned behavior for one image in [`scripted_backend`].
#[derive(Clone, Debug)]
pub struct Script {
    pub tamper_type: &'static str,
    pub tampered: bool,
    pub confidence: f64,
    /// Normalized box returned to locate requests.
    pub bbox: [f64; 4],
}

impl Script {
    pub fn tampered(tamper_type: &'static str, confidence: f64, bbox: [f64; 4]) -> Self {
        Self {
            tamper_type,
            tampered: true,
            confidence,
            bbox,
        }
    }

    pub fn authentic(tamper_type: &'static str, confidence: f64) -> Self {
        Self {
            tamper_type,
            tampered: false,
            confidence,
            bbox: [0.0, 0.0, 1.0, 1.0],
        }
    }

    pub fn classify_reply(&self) -> String {
        serde_json::json!({"type": self.tamper_type, "reason": "scripted"}).to_string()
    }

    pub fn analyze_reply(&self) -> String {
        let (verdict, description) = if self.tampered {
            ("tampered", "the scripted region")
        } else {
            ("authentic", "")
        };
        serde_json::json!({
            "explanation": format!("scripted {} sample", self.tamper_type),
            "description": description,
            "verdict": verdict,
            "confidence": self.confidence,
        })
        .to_string()
    }

    pub fn locate_reply(&self) -> String {
        serde_json::json!({ "box": self.bbox }).to_string()
    }
}

pub const JUDGE_REPLY: &str = r#"{"accuracy":4,"details":3,"hallucination":4,"readability":5}"#;

/// Offline backend answering each request from the script registered for
/// its first attached image (matched by pixel digest).
pub fn scripted_backend(samples: &[(tamperscope::Image, Script)]) -> tamperscope::mllm::MockBackend {
    use tamperscope::mllm::{image_digest, BackendError, MockBackend, Purpose};
    let table: std::collections::HashMap<String, Script> =
        samples.iter().map(|(img, s)| (image_digest(img), s.clone())).collect();
    MockBackend::from_fn("scripted", move |req| {
        let key = image_digest(&req.images[0]);
        let s = table
            .get(&key)
            .ok_or_else(|| BackendError::Unavailable(format!("no script for image {key}")))?;
        Ok(match req.purpose {
            Purpose::Classify => s.classify_reply(),
            Purpose::Analyze => s.analyze_reply(),
            Purpose::Locate => s.locate_reply(),
            Purpose::Judge => JUDGE_REPLY.to_string(),
        })
    })
}

/// Fraction of (positive, negative) pairs ordered correctly, ties counting ½.
pub fn brute_force_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        if !labels[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] {
                continue;
            }
            den += 1.0;
            if si > sj {
                num += 1.0;
            } else if si == sj {
                num += 0.5;
            }
        }
    }
    num / den
}

/// IoU and F1 from raw pixel counts; two empty masks agree perfectly.
pub fn pixel_count_iou(a: &[bool], b: &[bool]) -> (f64, f64) {
    let inter = a.iter().zip(b).filter(|(x, y)| **x && **y).count() as f64;
    let union = a.iter().zip(b).filter(|(x, y)| **x || **y).count() as f64;
    let (pa, pb) = (
        a.iter().filter(|x| **x).count() as f64,
        b.iter().filter(|x| **x).count() as f64,
    );
    if union == 0.0 {
        (1.0, 1.0)
    } else {
        (inter / union, 2.0 * inter / (pa + pb))
    }
}
