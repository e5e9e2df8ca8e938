//! In-process stub chat server for offline tests.
//!
//! Speaks just enough HTTP/1.1 to serve the chat-completions shape, counts
//! requests, and tracks the in-flight high-water mark so concurrency caps
//! are observable.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

/// A canned response: HTTP status plus, for 200s, the completion text.
#[derive(Debug, Clone)]
pub struct StubResponse {
    pub status: u16,
    pub content: String,
}

enum Behavior {
    Constant(StubResponse),
    /// Played in order; the last entry repeats once the script runs out.
    Scripted(Mutex<Vec<StubResponse>>, AtomicUsize),
    Handler(Box<dyn Fn(&str) -> StubResponse + Send + Sync>),
}

struct Shared {
    behavior: Behavior,
    delay: Option<Duration>,
    requests: AtomicUsize,
    in_flight: AtomicUsize,
    high_water: AtomicUsize,
    stopping: AtomicBool,
}

pub struct StubServer {
    addr: String,
    shared: Arc<Shared>,
    accept_thread: Option<JoinHandle<()>>,
}

impl StubServer {
    /// 200-reply with the given completion text for every request.
    pub fn constant(text: &str) -> Self {
        Self::start(Behavior::Constant(Self::reply(text)), None)
    }

    /// Scripted statuses/replies, one per request, last entry repeating.
    pub fn scripted(script: Vec<StubResponse>) -> Self {
        assert!(!script.is_empty(), "script must have at least one entry");
        Self::start(Behavior::Scripted(Mutex::new(script), AtomicUsize::new(0)), None)
    }

    /// Constant reply with an artificial service delay.
    pub fn slow(text: &str, delay: Duration) -> Self {
        Self::start(Behavior::Constant(Self::reply(text)), Some(delay))
    }

    /// Response computed from the request body.
    pub fn with_handler(f: impl Fn(&str) -> StubResponse + Send + Sync + 'static) -> Self {
        Self::start(Behavior::Handler(Box::new(f)), None)
    }

    pub fn reply(text: &str) -> StubResponse {
        StubResponse { status: 200, content: text.to_string() }
    }

    pub fn status(code: u16) -> StubResponse {
        StubResponse { status: code, content: String::new() }
    }

    fn start(behavior: Behavior, delay: Option<Duration>) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind stub server");
        let addr = format!("http://{}", listener.local_addr().unwrap());
        let shared = Arc::new(Shared {
            behavior,
            delay,
            requests: AtomicUsize::new(0),
            in_flight: AtomicUsize::new(0),
            high_water: AtomicUsize::new(0),
            stopping: AtomicBool::new(false),
        });
        let accept_shared = Arc::clone(&shared);
        let accept_thread = std::thread::spawn(move || {
            for stream in listener.incoming() {
                if accept_shared.stopping.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { break };
                let conn_shared = Arc::clone(&accept_shared);
                std::thread::spawn(move || serve_connection(stream, conn_shared));
            }
        });
        StubServer { addr, shared, accept_thread: Some(accept_thread) }
    }

    /// Base URL to point an endpoint at.
    pub fn base_url(&self) -> String {
        self.addr.clone()
    }

    /// Total requests fully received.
    pub fn request_count(&self) -> usize {
        self.shared.requests.load(Ordering::SeqCst)
    }

    /// Maximum number of requests ever simultaneously in flight.
    pub fn high_water_mark(&self) -> usize {
        self.shared.high_water.load(Ordering::SeqCst)
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.shared.stopping.store(true, Ordering::SeqCst);
        // Poke the listener so the accept loop observes the stop flag.
        let plain = self.addr.trim_start_matches("http://");
        let _ = TcpStream::connect(plain);
        if let Some(handle) = self.accept_thread.take() {
            let _ = handle.join();
        }
    }
}

fn serve_connection(stream: TcpStream, shared: Arc<Shared>) {
    let _ = stream.set_read_timeout(Some(Duration::from_secs(10)));
    let mut reader = BufReader::new(stream);
    let Some(body) = read_request(&mut reader) else { return };

    shared.requests.fetch_add(1, Ordering::SeqCst);
    let now = shared.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
    shared.high_water.fetch_max(now, Ordering::SeqCst);

    if let Some(delay) = shared.delay {
        std::thread::sleep(delay);
    }

    let response = match &shared.behavior {
        Behavior::Constant(resp) => resp.clone(),
        Behavior::Scripted(script, cursor) => {
            let script = script.lock().unwrap();
            let idx = cursor.fetch_add(1, Ordering::SeqCst).min(script.len() - 1);
            script[idx].clone()
        }
        Behavior::Handler(f) => f(&body),
    };

    let payload = if response.status == 200 {
        serde_json::json!({
            "choices": [{"message": {"role": "assistant", "content": response.content}}]
        })
        .to_string()
    } else {
        serde_json::json!({"error": {"code": response.status}}).to_string()
    };
    let reason = if response.status == 200 { "OK" } else { "Error" };
    let head = format!(
        "HTTP/1.1 {} {}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
        response.status,
        reason,
        payload.len()
    );

    shared.in_flight.fetch_sub(1, Ordering::SeqCst);

    let mut stream = reader.into_inner();
    let _ = stream.write_all(head.as_bytes());
    let _ = stream.write_all(payload.as_bytes());
    let _ = stream.flush();
}

/// Read one HTTP request; returns its body, or None on a bare probe
/// connection.
fn read_request(reader: &mut BufReader<TcpStream>) -> Option<String> {
    let mut line = String::new();
    if reader.read_line(&mut line).ok()? == 0 || line.trim().is_empty() {
        return None;
    }
    let mut content_length = 0usize;
    loop {
        let mut header = String::new();
        reader.read_line(&mut header).ok()?;
        let header = header.trim();
        if header.is_empty() {
            break;
        }
        if let Some(value) = header.to_ascii_lowercase().strip_prefix("content-length:") {
            content_length = value.trim().parse().ok()?;
        }
    }
    let mut body = vec![0u8; content_length];
    reader.read_exact(&mut body).ok()?;
    Some(String::from_utf8_lossy(&body).into_owned())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn serves_constant_completion() {
        let server = StubServer::constant("A");
        let url = format!("{}/chat/completions", server.base_url());
        let mut res = ureq::post(&url)
            .send_json(serde_json::json!({"model": "m", "messages": []}))
            .unwrap();
        let body: serde_json::Value = res.body_mut().read_json().unwrap();
        assert_eq!(body["choices"][0]["message"]["content"], "A");
        assert_eq!(server.request_count(), 1);
    }

    #[test]
    fn scripted_sequence_then_repeats_last() {
        let server = StubServer::scripted(vec![StubServer::status(500), StubServer::reply("B")]);
        let url = format!("{}/chat/completions", server.base_url());
        let req = serde_json::json!({"model": "m", "messages": []});

        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .build()
            .into();
        let res = agent.post(&url).send_json(&req).unwrap();
        assert_eq!(res.status().as_u16(), 500);
        for _ in 0..2 {
            let mut res = agent.post(&url).send_json(&req).unwrap();
            assert_eq!(res.status().as_u16(), 200);
            let body: serde_json::Value = res.body_mut().read_json().unwrap();
            assert_eq!(body["choices"][0]["message"]["content"], "B");
        }
        assert_eq!(server.request_count(), 3);
    }

    #[test]
    fn handler_sees_request_body() {
        let server = StubServer::with_handler(|body| {
            if body.contains("ping") {
                StubServer::reply("pong")
            } else {
                StubServer::reply("other")
            }
        });
        let url = format!("{}/chat/completions", server.base_url());
        let mut res = ureq::post(&url)
            .send_json(serde_json::json!({"model": "ping", "messages": []}))
            .unwrap();
        let body: serde_json::Value = res.body_mut().read_json().unwrap();
        assert_eq!(body["choices"][0]["message"]["content"], "pong");
    }
}
