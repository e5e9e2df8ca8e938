//! Chat-completions HTTP client with retry, a per-endpoint in-flight
//! limiter, and optional cassette record/replay.

use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::Deserialize;

use super::cassette::{request_hash, Cassette, CassetteMode};
use super::{ClientError, Endpoint, Message};

/// Counting semaphore bounding concurrent requests per endpoint.
#[derive(Debug)]
struct InFlightGate {
    permits: Mutex<usize>,
    freed: Condvar,
}

impl InFlightGate {
    fn new(limit: usize) -> Self {
        InFlightGate { permits: Mutex::new(limit), freed: Condvar::new() }
    }

    fn acquire(&self) {
        let mut permits = self.permits.lock().unwrap();
        while *permits == 0 {
            permits = self.freed.wait(permits).unwrap();
        }
        *permits -= 1;
    }

    fn release(&self) {
        *self.permits.lock().unwrap() += 1;
        self.freed.notify_one();
    }
}

/// A chat-completions client bound to one endpoint. Cloning shares the
/// in-flight limiter, so all clones together respect `max_in_flight`.
#[derive(Clone)]
pub struct ChatClient {
    endpoint: Endpoint,
    agent: ureq::Agent,
    gate: Arc<InFlightGate>,
    cassette: Option<Arc<Cassette>>,
    /// Base delay for exponential backoff between retries.
    backoff: Duration,
}

#[derive(Deserialize)]
struct Completion {
    choices: Vec<CompletionChoice>,
}

#[derive(Deserialize)]
struct CompletionChoice {
    message: CompletionMessage,
}

#[derive(Deserialize)]
struct CompletionMessage {
    content: String,
}

impl ChatClient {
    pub fn new(endpoint: Endpoint) -> Result<Self, ClientError> {
        endpoint.validate()?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(endpoint.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let gate = Arc::new(InFlightGate::new(endpoint.max_in_flight));
        Ok(ChatClient { endpoint, agent, gate, cassette: None, backoff: Duration::from_millis(100) })
    }

    pub fn with_cassette(mut self, cassette: Arc<Cassette>) -> Self {
        self.cassette = Some(cassette);
        self
    }

    #[cfg(test)]
    fn with_backoff(mut self, backoff: Duration) -> Self {
        self.backoff = backoff;
        self
    }

    pub fn endpoint(&self) -> &Endpoint {
        &self.endpoint
    }

    fn request_body(&self, messages: &[Message]) -> serde_json::Value {
        serde_json::json!({
            "model": self.endpoint.model_name,
            "messages": messages,
            "temperature": self.endpoint.temperature,
        })
    }

    /// Send one chat request and return the first choice's text.
    ///
    /// Transient failures (timeouts, transport errors, HTTP 429/5xx) are
    /// retried with exponential backoff up to `max_retries` additional
    /// attempts. The API key is resolved before any network activity, and
    /// at most `max_in_flight` requests are outstanding at a time.
    pub fn chat(&self, messages: &[Message]) -> Result<String, ClientError> {
        if messages.is_empty() {
            return Err(ClientError::Config("messages must be non-empty".into()));
        }
        let body = self.request_body(messages);
        let hash = request_hash(&body);

        if let Some(cassette) = &self.cassette {
            if let Some(hit) = cassette.lookup(&hash) {
                return Ok(hit);
            }
            if cassette.mode() == CassetteMode::Replay {
                return Err(ClientError::CassetteMiss(hash));
            }
        }

        let auth = match &self.endpoint.api_key_env {
            None => None,
            Some(var) => match std::env::var(var) {
                Ok(key) => Some(format!("Bearer {key}")),
                Err(_) => return Err(ClientError::AuthMissing(var.clone())),
            },
        };

        self.gate.acquire();
        let result = self.chat_with_retry(&body, auth.as_deref());
        self.gate.release();
        let text = result?;

        if let Some(cassette) = &self.cassette {
            cassette.store(&hash, &text)?;
        }
        Ok(text)
    }

    fn chat_with_retry(
        &self,
        body: &serde_json::Value,
        auth: Option<&str>,
    ) -> Result<String, ClientError> {
        let url = format!("{}/chat/completions", self.endpoint.base_url.trim_end_matches('/'));
        let mut last: Option<ClientError> = None;
        let attempts = self.endpoint.max_retries + 1;
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(self.backoff * 2u32.pow(attempt - 1));
            }
            match self.send_once(&url, body, auth) {
                Ok(text) => return Ok(text),
                Err(err) if err_is_transient(&err) => last = Some(err),
                Err(err) => return Err(err),
            }
        }
        Err(ClientError::ExhaustedRetries {
            attempts,
            last: last.map(|e| e.to_string()).unwrap_or_default(),
        })
    }

    fn send_once(
        &self,
        url: &str,
        body: &serde_json::Value,
        auth: Option<&str>,
    ) -> Result<String, ClientError> {
        let mut req = self.agent.post(url).header("Content-Type", "application/json");
        if let Some(auth) = auth {
            req = req.header("Authorization", auth);
        }
        let mut res = req.send_json(body).map_err(|e| match e {
            ureq::Error::Timeout(_) => ClientError::Timeout(self.endpoint.timeout),
            other => ClientError::Transport(other.to_string()),
        })?;
        let status = res.status().as_u16();
        if status != 200 {
            return Err(ClientError::HttpStatus(status));
        }
        let text = res
            .body_mut()
            .read_to_string()
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        let completion: Completion = serde_json::from_str(&text)
            .map_err(|e| ClientError::BadResponse(format!("{e}: {text}")))?;
        completion
            .choices
            .first()
            .map(|c| c.message.content.clone())
            .ok_or_else(|| ClientError::BadResponse("empty choices array".into()))
    }
}

fn err_is_transient(err: &ClientError) -> bool {
    match err {
        ClientError::Timeout(_) | ClientError::Transport(_) => true,
        ClientError::HttpStatus(code) => *code == 429 || *code >= 500,
        _ => false,
    }
}
