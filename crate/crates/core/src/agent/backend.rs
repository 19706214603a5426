//! Text-completion backends.

use std::collections::{HashMap, VecDeque};
use std::sync::Mutex;
use std::time::Duration;

use thiserror::Error;

use super::transcript::{Direction, TranscriptRecord};
use super::{CallContext, Message, Role};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("missing backend credentials: {0}")]
    MissingCredentials(String),
    #[error("request failed: {0}")]
    Transport(String),
    #[error("endpoint returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("unexpected response: {0}")]
    BadResponse(String),
    #[error("replay: {0}")]
    Replay(String),
    #[error("no more scripted responses")]
    Exhausted,
}

/// Produces one completion for an ordered transcript. Implementations must
/// accept concurrent calls for unrelated episodes.
pub trait AgentBackend: Send + Sync {
    fn complete(&self, ctx: &CallContext, messages: &[Message]) -> Result<String, BackendError>;
}

/// Messages after the last assistant turn, i.e. what a call adds.
pub(crate) fn new_messages(messages: &[Message]) -> &[Message] {
    let start = messages
        .iter()
        .rposition(|m| m.role == Role::Assistant)
        .map_or(0, |i| i + 1);
    &messages[start..]
}

/// Serves canned responses in order, ignoring the prompt.
#[derive(Debug, Default)]
pub struct SequenceBackend {
    responses: Mutex<VecDeque<String>>,
}

impl SequenceBackend {
    pub fn new<S: Into<String>>(responses: impl IntoIterator<Item = S>) -> Self {
        Self {
            responses: Mutex::new(responses.into_iter().map(Into::into).collect()),
        }
    }

    pub fn remaining(&self) -> usize {
        self.responses.lock().expect("sequence lock").len()
    }
}

impl AgentBackend for SequenceBackend {
    fn complete(&self, _: &CallContext, _: &[Message]) -> Result<String, BackendError> {
        self.responses
            .lock()
            .expect("sequence lock")
            .pop_front()
            .ok_or(BackendError::Exhausted)
    }
}

#[derive(Debug)]
struct Exchange {
    round: usize,
    sent: Vec<String>,
    received: String,
}

/// Answers from a recorded transcript, checking that the run asks exactly
/// what was asked when the transcript was recorded.
#[derive(Debug)]
pub struct ReplayBackend {
    episodes: Mutex<HashMap<String, VecDeque<Exchange>>>,
}

impl ReplayBackend {
    pub fn new(records: &[TranscriptRecord]) -> Result<Self, BackendError> {
        let mut pending: HashMap<&str, Vec<String>> = HashMap::new();
        let mut episodes: HashMap<String, VecDeque<Exchange>> = HashMap::new();
        for r in records {
            match r.direction {
                Direction::Sent => pending
                    .entry(&r.episode_id)
                    .or_default()
                    .push(r.text.clone()),
                Direction::Received => {
                    let sent = pending.remove(r.episode_id.as_str()).unwrap_or_default();
                    episodes
                        .entry(r.episode_id.clone())
                        .or_default()
                        .push_back(Exchange {
                            round: r.round,
                            sent,
                            received: r.text.clone(),
                        });
                }
            }
        }
        if let Some(ep) = pending.keys().next() {
            return Err(BackendError::Replay(format!(
                "episode {ep} ends with an unanswered message"
            )));
        }
        Ok(Self {
            episodes: Mutex::new(episodes),
        })
    }

    /// Exchanges recorded but not yet replayed.
    pub fn unused(&self) -> usize {
        self.episodes
            .lock()
            .expect("replay lock")
            .values()
            .map(VecDeque::len)
            .sum()
    }
}

impl AgentBackend for ReplayBackend {
    fn complete(&self, ctx: &CallContext, messages: &[Message]) -> Result<String, BackendError> {
        let mut episodes = self.episodes.lock().expect("replay lock");
        let queue = episodes
            .get_mut(&ctx.episode_id)
            .ok_or_else(|| BackendError::Replay(format!("episode {} not recorded", ctx.episode_id)))?;
        let next = queue.pop_front().ok_or_else(|| {
            BackendError::Replay(format!("episode {} has no more responses", ctx.episode_id))
        })?;
        let sent: Vec<&str> = new_messages(messages)
            .iter()
            .map(|m| m.content.as_str())
            .collect();
        if next.round != ctx.round || sent != next.sent {
            return Err(BackendError::Replay(format!(
                "episode {} round {} diverges from the recording",
                ctx.episode_id, ctx.round
            )));
        }
        Ok(next.received)
    }
}

pub const ENV_BASE_URL: &str = "VO_LLM_BASE_URL";
pub const ENV_API_KEY: &str = "VO_LLM_API_KEY";
pub const ENV_MODEL: &str = "VO_LLM_MODEL";

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteConfig {
    pub base_url: String,
    pub api_key: String,
    pub model: String,
    pub timeout: Duration,
    /// Extra attempts after a 5xx or transport failure.
    pub max_retries: usize,
    pub retry_backoff: Duration,
    pub temperature: f64,
}

impl RemoteConfig {
    pub fn from_env() -> Result<Self, BackendError> {
        let get = |k: &str| std::env::var(k).ok().filter(|v| !v.trim().is_empty());
        let api_key = get(ENV_API_KEY)
            .ok_or_else(|| BackendError::MissingCredentials(format!("{ENV_API_KEY} is not set")))?;
        Ok(Self {
            base_url: get(ENV_BASE_URL).unwrap_or_else(|| "https://api.openai.com/v1".into()),
            api_key,
            model: get(ENV_MODEL).unwrap_or_else(|| "gpt-4o".into()),
            timeout: Duration::from_secs(120),
            max_retries: 3,
            retry_backoff: Duration::from_millis(500),
            temperature: 0.0,
        })
    }
}

/// Chat-completions client for an OpenAI-compatible HTTP endpoint.
pub struct RemoteBackend {
    cfg: RemoteConfig,
    client: reqwest::blocking::Client,
}

impl RemoteBackend {
    pub fn new(cfg: RemoteConfig) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(cfg.timeout)
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok(Self { cfg, client })
    }

    pub fn from_env() -> Result<Self, BackendError> {
        Self::new(RemoteConfig::from_env()?)
    }

    fn attempt(&self, body: &serde_json::Value) -> Result<String, (bool, BackendError)> {
        let url = format!("{}/chat/completions", self.cfg.base_url.trim_end_matches('/'));
        let resp = self
            .client
            .post(url)
            .bearer_auth(&self.cfg.api_key)
            .json(body)
            .send()
            .map_err(|e| (true, BackendError::Transport(e.to_string())))?;
        let status = resp.status();
        let text = resp
            .text()
            .map_err(|e| (true, BackendError::Transport(e.to_string())))?;
        if !status.is_success() {
            return Err((
                status.is_server_error(),
                BackendError::Status {
                    status: status.as_u16(),
                    body: text,
                },
            ));
        }
        let value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| (false, BackendError::BadResponse(e.to_string())))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| (false, BackendError::BadResponse("no choices[0].message.content".into())))
    }
}

impl AgentBackend for RemoteBackend {
    fn complete(&self, ctx: &CallContext, messages: &[Message]) -> Result<String, BackendError> {
        let body = serde_json::json!({
            "model": self.cfg.model,
            "messages": messages,
            "temperature": self.cfg.temperature,
        });
        let mut tries = 0;
        loop {
            match self.attempt(&body) {
                Ok(text) => return Ok(text),
                Err((retryable, err)) if retryable && tries < self.cfg.max_retries => {
                    tries += 1;
                    log::warn!("{} round {}: {err}; retry {tries}", ctx.episode_id, ctx.round);
                    std::thread::sleep(self.cfg.retry_backoff * (1 << (tries - 1)) as u32);
                }
                Err((_, err)) => return Err(err),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx(ep: &str, round: usize) -> CallContext {
        CallContext {
            episode_id: ep.into(),
            round,
        }
    }

    fn rec(ep: &str, round: usize, direction: Direction, text: &str) -> TranscriptRecord {
        TranscriptRecord {
            episode_id: ep.into(),
            round,
            direction,
            timestamp: 0,
            text: text.into(),
        }
    }

    #[test]
    fn sequence_serves_in_order() {
        let b = SequenceBackend::new(["a", "b"]);
        assert_eq!(b.complete(&ctx("x", 0), &[]).unwrap(), "a");
        assert_eq!(b.complete(&ctx("x", 0), &[]).unwrap(), "b");
        assert_eq!(b.complete(&ctx("x", 0), &[]), Err(BackendError::Exhausted));
    }

    #[test]
    fn replay_checks_what_is_sent() {
        let records = vec![
            rec("e1", 0, Direction::Sent, "sys"),
            rec("e1", 0, Direction::Sent, "ask"),
            rec("e1", 0, Direction::Received, "answer"),
            rec("e1", 1, Direction::Sent, "refine"),
            rec("e1", 1, Direction::Received, "better"),
        ];
        let b = ReplayBackend::new(&records).unwrap();
        let mut msgs = vec![Message::system("sys"), Message::user("ask")];
        assert_eq!(b.complete(&ctx("e1", 0), &msgs).unwrap(), "answer");
        msgs.push(Message::assistant("answer"));
        msgs.push(Message::user("something else"));
        assert!(matches!(b.complete(&ctx("e1", 1), &msgs), Err(BackendError::Replay(_))));

        let b = ReplayBackend::new(&records).unwrap();
        let mut msgs = vec![Message::system("sys"), Message::user("ask")];
        b.complete(&ctx("e1", 0), &msgs).unwrap();
        msgs.push(Message::assistant("answer"));
        msgs.push(Message::user("refine"));
        assert_eq!(b.complete(&ctx("e1", 1), &msgs).unwrap(), "better");
        assert_eq!(b.unused(), 0);
        assert!(b.complete(&ctx("e2", 0), &msgs).is_err());
    }

    #[test]
    fn unanswered_transcript_is_rejected() {
        let records = vec![rec("e1", 0, Direction::Sent, "sys")];
        assert!(ReplayBackend::new(&records).is_err());
    }

    #[test]
    fn missing_key_is_reported() {
        // Only meaningful when the variable is absent from the test environment.
        if std::env::var(ENV_API_KEY).is_err() {
            assert!(matches!(
                RemoteConfig::from_env(),
                Err(BackendError::MissingCredentials(_))
            ));
        }
    }

    /// Talks to a throwaway HTTP server on the loopback interface.
    #[test]
    #[ignore = "opens a local socket"]
    fn remote_retries_server_errors() {
        use std::io::{Read, Write};
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let server = std::thread::spawn(move || {
            for status in ["500 Internal Server Error", "200 OK"] {
                let (mut s, _) = listener.accept().unwrap();
                let mut buf = [0u8; 65536];
                let _ = s.read(&mut buf).unwrap();
                let body = r#"{"choices":[{"message":{"content":"hi"}}]}"#;
                write!(
                    s,
                    "HTTP/1.1 {status}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
        });
        let b = RemoteBackend::new(RemoteConfig {
            base_url: format!("http://{addr}"),
            api_key: "k".into(),
            model: "m".into(),
            timeout: Duration::from_secs(5),
            max_retries: 2,
            retry_backoff: Duration::from_millis(1),
            temperature: 0.0,
        })
        .unwrap();
        assert_eq!(b.complete(&ctx("e", 0), &[Message::user("q")]).unwrap(), "hi");
        server.join().unwrap();
    }
}
