//! Talking to models: chat-completions HTTP endpoints, a seeded simulator,
//! response parsing, and judge calls.

mod cassette;
mod http;
mod judge;
mod parse;
mod sim;

pub use cassette::{Cassette, CassetteMode};
pub use http::ChatClient;
pub use judge::{judge_free_form, judge_implicitness};
pub use parse::{parse_choice, parse_confidences};
pub use sim::simulate;

use std::time::Duration;

use serde::{Deserialize, Serialize};

/// Chat message role.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

/// Message content: a plain string, or typed parts when an image reference
/// rides along with the text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Content {
    Text(String),
    Parts(Vec<ContentPart>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ContentPart {
    Text { text: String },
    ImageUrl { image_url: ImageUrl },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageUrl {
    pub url: String,
}

/// One chat turn in the de-facto chat-completions shape.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: Content,
}

impl Message {
    pub fn system(text: impl Into<String>) -> Self {
        Message { role: Role::System, content: Content::Text(text.into()) }
    }

    pub fn user(text: impl Into<String>) -> Self {
        Message { role: Role::User, content: Content::Text(text.into()) }
    }

    /// User turn carrying text plus an optional image reference. With no
    /// image the content stays a plain string.
    pub fn user_with_image(text: impl Into<String>, image_url: Option<&str>) -> Self {
        match image_url {
            None => Message::user(text),
            Some(url) => Message {
                role: Role::User,
                content: Content::Parts(vec![
                    ContentPart::Text { text: text.into() },
                    ContentPart::ImageUrl { image_url: ImageUrl { url: url.to_string() } },
                ]),
            },
        }
    }

    /// The textual portion of the content (image parts skipped).
    pub fn text(&self) -> String {
        match &self.content {
            Content::Text(t) => t.clone(),
            Content::Parts(parts) => parts
                .iter()
                .filter_map(|p| match p {
                    ContentPart::Text { text } => Some(text.as_str()),
                    ContentPart::ImageUrl { .. } => None,
                })
                .collect::<Vec<_>>()
                .join("\n"),
        }
    }
}

/// A chat-completions endpoint definition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Endpoint {
    pub base_url: String,
    pub model_name: String,
    /// Name of the environment variable holding the API key. `None` means
    /// the endpoint needs no Authorization header (local or stub servers).
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(with = "duration_ms", default = "default_timeout")]
    pub timeout: Duration,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
}

fn default_timeout() -> Duration {
    Duration::from_secs(60)
}

fn default_max_retries() -> u32 {
    3
}

fn default_max_in_flight() -> usize {
    4
}

impl Endpoint {
    pub fn new(base_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        Endpoint {
            base_url: base_url.into(),
            model_name: model_name.into(),
            api_key_env: None,
            timeout: default_timeout(),
            max_retries: default_max_retries(),
            temperature: 0.0,
            max_in_flight: default_max_in_flight(),
        }
    }

    fn validate(&self) -> Result<(), ClientError> {
        if self.max_in_flight == 0 {
            return Err(ClientError::Config("max_in_flight must be at least 1".into()));
        }
        if self.temperature < 0.0 {
            return Err(ClientError::Config("temperature must be nonnegative".into()));
        }
        Ok(())
    }
}

mod duration_ms {
    use super::Duration;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

/// Parameters of the seeded simulated model used for oracle tests and
/// correlation studies.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SimParams {
    /// Probability of answering correctly when not misled.
    pub base_accuracy: f64,
    /// Probability of adopting an injected target answer.
    pub susceptibility: f64,
    /// Probability of a uniformly random answer, applied before the other
    /// two rolls.
    pub noise: f64,
}

impl SimParams {
    pub fn validate(&self) -> Result<(), ClientError> {
        for (name, v) in [
            ("base_accuracy", self.base_accuracy),
            ("susceptibility", self.susceptibility),
            ("noise", self.noise),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(ClientError::Config(format!("{name} must lie in [0,1], got {v}")));
            }
        }
        Ok(())
    }
}

/// Which parsing rule produced an answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParsePath {
    /// The whole response is a single option token.
    Exact,
    /// The response opens with an option token.
    LeadingToken,
    /// A standalone option token or a full option text found in the body.
    PatternFallback,
}

/// A response resolved to one of the item's options.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedAnswer {
    /// Option letter, or `Yes`/`No` for judgment items.
    pub token: String,
    pub raw: String,
    pub parse_path: ParsePath,
}

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("invalid client configuration: {0}")]
    Config(String),
    #[error("API key environment variable {0} is not set")]
    AuthMissing(String),
    #[error("request timed out after {0:?}")]
    Timeout(Duration),
    #[error("HTTP status {0}")]
    HttpStatus(u16),
    #[error("retries exhausted after {attempts} attempts, last error: {last}")]
    ExhaustedRetries { attempts: u32, last: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("malformed completion response: {0}")]
    BadResponse(String),
    #[error("could not parse response {0:?} against the item's options")]
    Unparseable(String),
    #[error("stated confidence sum {0} outside the accepted [95,105] window")]
    SumOutOfRange(f64),
    #[error("judge verdict ambiguous: {0:?}")]
    JudgeAmbiguous(String),
    #[error("implicitness rating {0} outside [1,10]")]
    RatingOutOfRange(f64),
    #[error("cassette miss for request hash {0}")]
    CassetteMiss(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
