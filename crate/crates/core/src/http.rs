//! Blocking JSON-over-HTTP helpers shared by the remote scorer and the chat
//! backend: bounded retries with exponential backoff and a token-bucket rate
//! limiter.

use std::sync::Mutex;
use std::time::{Duration, Instant};

use reqwest::blocking::Client;
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HttpError {
    #[error("HTTP {status}: {body}")]
    Status {
        status: u16,
        retry_after: Option<Duration>,
        body: String,
    },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("undecodable response: {0}")]
    Decode(String),
}

impl HttpError {
    pub fn is_transient(&self) -> bool {
        match self {
            HttpError::Status { status, .. } => *status == 429 || *status >= 500,
            HttpError::Transport(_) => true,
            HttpError::Decode(_) => false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(30),
        }
    }
}

impl RetryPolicy {
    pub fn delay_for(&self, attempt: u32, retry_after: Option<Duration>) -> Duration {
        let backoff = self.base_delay.saturating_mul(1u32 << attempt.min(16));
        retry_after.unwrap_or(backoff).min(self.max_delay)
    }
}

fn parse_retry_after(headers: &reqwest::header::HeaderMap) -> Option<Duration> {
    headers
        .get(reqwest::header::RETRY_AFTER)?
        .to_str()
        .ok()?
        .trim()
        .parse::<f64>()
        .ok()
        .filter(|s| s.is_finite() && *s >= 0.0)
        .map(Duration::from_secs_f64)
}

fn post_once(client: &Client, url: &str, headers: &[(String, String)], body: &Value) -> Result<Value, HttpError> {
    let mut req = client.post(url).json(body);
    for (k, v) in headers {
        req = req.header(k.as_str(), v.as_str());
    }
    let resp = req.send().map_err(|e| HttpError::Transport(e.to_string()))?;
    let status = resp.status();
    let retry_after = parse_retry_after(resp.headers());
    let text = resp.text().map_err(|e| HttpError::Transport(e.to_string()))?;
    if !status.is_success() {
        return Err(HttpError::Status {
            status: status.as_u16(),
            retry_after,
            body: text.chars().take(500).collect(),
        });
    }
    serde_json::from_str(&text).map_err(|e| HttpError::Decode(format!("{e}: {}", text.chars().take(200).collect::<String>())))
}

/// POSTs `body` and decodes a JSON reply, retrying transient failures.
pub fn post_json(
    client: &Client,
    url: &str,
    headers: &[(String, String)],
    body: &Value,
    retry: &RetryPolicy,
) -> Result<Value, HttpError> {
    let mut attempt = 0;
    loop {
        match post_once(client, url, headers, body) {
            Ok(v) => return Ok(v),
            Err(e) if e.is_transient() && attempt < retry.max_retries => {
                let wait = match &e {
                    HttpError::Status { retry_after, .. } => retry.delay_for(attempt, *retry_after),
                    _ => retry.delay_for(attempt, None),
                };
                log::warn!("request to {url} failed ({e}); retrying in {wait:?}");
                std::thread::sleep(wait);
                attempt += 1;
            }
            Err(e) => return Err(e),
        }
    }
}

/// Token bucket refilled continuously at `per_minute / 60` tokens per second.
#[derive(Debug)]
pub struct RateLimiter {
    capacity: f64,
    per_second: f64,
    state: Mutex<(f64, Instant)>,
}

impl RateLimiter {
    pub fn per_minute(rpm: u32) -> Self {
        let capacity = (rpm as f64).max(1.0);
        Self {
            capacity,
            per_second: rpm as f64 / 60.0,
            state: Mutex::new((capacity, Instant::now())),
        }
    }

    /// Takes one token if available, otherwise reports how long to wait.
    pub fn try_acquire(&self) -> Result<(), Duration> {
        let mut guard = self.state.lock().expect("rate limiter poisoned");
        let (tokens, last) = &mut *guard;
        let now = Instant::now();
        *tokens = (*tokens + now.duration_since(*last).as_secs_f64() * self.per_second).min(self.capacity);
        *last = now;
        if *tokens >= 1.0 {
            *tokens -= 1.0;
            Ok(())
        } else if self.per_second <= 0.0 {
            Err(Duration::from_secs(3600))
        } else {
            Err(Duration::from_secs_f64((1.0 - *tokens) / self.per_second))
        }
    }

    pub fn acquire(&self) {
        while let Err(wait) = self.try_acquire() {
            std::thread::sleep(wait);
        }
    }
}

#[cfg(test)]
pub(crate) mod testserver {
    //! Minimal single-threaded HTTP/1.1 responder for client tests.

    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::{Arc, Mutex};
    use std::thread::JoinHandle;

    pub struct Captured {
        pub headers: Vec<String>,
        pub body: String,
    }

    /// Serves `responses` in order, one per connection; returns the base URL,
    /// the captured requests and the server thread.
    pub fn serve(responses: Vec<(u16, Vec<(String, String)>, String)>) -> (String, Arc<Mutex<Vec<Captured>>>, JoinHandle<()>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let captured = Arc::new(Mutex::new(Vec::new()));
        let cap = captured.clone();
        let handle = std::thread::spawn(move || {
            for (status, headers, body) in responses {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut head = Vec::new();
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    let line = line.trim_end().to_string();
                    if line.is_empty() {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                    head.push(line);
                }
                let mut buf = vec![0u8; len];
                reader.read_exact(&mut buf).unwrap();
                cap.lock().unwrap().push(Captured {
                    headers: head,
                    body: String::from_utf8_lossy(&buf).into_owned(),
                });
                let mut out = format!("HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n", body.len());
                for (k, v) in headers {
                    out.push_str(&format!("{k}: {v}\r\n"));
                }
                out.push_str("\r\n");
                out.push_str(&body);
                let mut s = stream;
                s.write_all(out.as_bytes()).unwrap();
                s.flush().unwrap();
            }
        });
        (url, captured, handle)
    }
}
