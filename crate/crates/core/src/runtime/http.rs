use std::collections::VecDeque;
use std::io::{BufRead, BufReader};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::source::{Pulled, TokenSource};
use super::RuntimeError;
use crate::cml::{StreamTokenizer, Token, TokenKind};

/// Connection settings for a chat-completion style streaming endpoint.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub url: String,
    pub model: String,
    pub auth_header: String,
    /// Sent as the auth header's value. Never echoed in errors or reports.
    #[serde(default, skip_serializing)]
    pub auth_token: Option<String>,
    pub attempts: u32,
    pub backoff_ms: u64,
    pub max_backoff_ms: u64,
    pub timeout_ms: u64,
}

impl std::fmt::Debug for EndpointConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EndpointConfig")
            .field("url", &self.url)
            .field("model", &self.model)
            .field("auth_header", &self.auth_header)
            .field("auth_token", &self.auth_token.as_ref().map(|_| "<redacted>"))
            .field("attempts", &self.attempts)
            .finish_non_exhaustive()
    }
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig {
            url: "http://127.0.0.1:8080/v1/chat/completions".into(),
            model: "default".into(),
            auth_header: "Authorization".into(),
            auth_token: None,
            attempts: 3,
            backoff_ms: 100,
            max_backoff_ms: 2000,
            timeout_ms: 60_000,
        }
    }
}

/// One parsed line of a server-sent event stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SseEvent {
    Delta(String),
    Done,
}

/// Parses a `data: ...` line carrying `choices[0].delta.content`. Other
/// lines, keep-alives and chunks without content yield `None`.
pub fn parse_sse_line(line: &str) -> Result<Option<SseEvent>, RuntimeError> {
    let Some(data) = line.strip_prefix("data:") else {
        return Ok(None);
    };
    let data = data.trim();
    if data == "[DONE]" {
        return Ok(Some(SseEvent::Done));
    }
    if data.is_empty() {
        return Ok(None);
    }
    let v: Value = serde_json::from_str(data).map_err(|e| RuntimeError::Endpoint(format!("bad stream chunk: {e}")))?;
    Ok(v["choices"][0]["delta"]["content"].as_str().filter(|s| !s.is_empty()).map(|s| SseEvent::Delta(s.to_owned())))
}

type Stream = std::io::Lines<BufReader<reqwest::blocking::Response>>;

/// Streams tokens from an HTTP endpoint. The API is stateless, so any
/// change to the context (injection or restart) opens a new request with
/// the whole context; tokens cost no emulated time since latency is real.
pub struct HttpSource {
    client: reqwest::blocking::Client,
    config: EndpointConfig,
    prompt: String,
    context: Vec<Token>,
    tokenizer: StreamTokenizer,
    buffer: VecDeque<Token>,
    stream: Option<Stream>,
    exhausted: bool,
    requests: u32,
}

impl HttpSource {
    pub fn new(config: EndpointConfig, prompt: impl Into<String>) -> Result<Self, RuntimeError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| RuntimeError::Endpoint(sanitize(&e)))?;
        Ok(HttpSource {
            client,
            config,
            prompt: prompt.into(),
            context: Vec::new(),
            tokenizer: StreamTokenizer::new(),
            buffer: VecDeque::new(),
            stream: None,
            exhausted: false,
            requests: 0,
        })
    }

    /// Requests sent so far.
    pub fn requests(&self) -> u32 {
        self.requests
    }

    fn body(&self) -> Value {
        let assistant: String = self.context.iter().map(Token::surface).collect();
        let mut messages = vec![json!({"role": "user", "content": self.prompt})];
        if !assistant.is_empty() {
            messages.push(json!({"role": "assistant", "content": assistant}));
        }
        json!({"model": self.config.model, "stream": true, "messages": messages})
    }

    fn open(&mut self) -> Result<(), RuntimeError> {
        let body = self.body();
        let mut last = String::new();
        for attempt in 0..self.config.attempts.max(1) {
            if attempt > 0 {
                let backoff = self.config.backoff_ms.saturating_mul(1 << (attempt - 1)).min(self.config.max_backoff_ms);
                thread::sleep(Duration::from_millis(backoff));
            }
            self.requests += 1;
            let mut req = self.client.post(&self.config.url).json(&body);
            if let Some(token) = &self.config.auth_token {
                req = req.header(self.config.auth_header.as_str(), token.as_str());
            }
            match req.send() {
                Ok(resp) if resp.status().is_success() => {
                    self.stream = Some(BufReader::new(resp).lines());
                    self.tokenizer = StreamTokenizer::new();
                    return Ok(());
                }
                Ok(resp) if resp.status().is_client_error() => {
                    let status = resp.status();
                    let what = if matches!(status.as_u16(), 401 | 403) { "authentication failed" } else { "request rejected" };
                    return Err(RuntimeError::Endpoint(format!("{what} (HTTP {})", status.as_u16())));
                }
                Ok(resp) => last = format!("server error (HTTP {})", resp.status().as_u16()),
                Err(e) => last = sanitize(&e),
            }
        }
        Err(RuntimeError::Endpoint(format!("giving up after {} attempts: {last}", self.config.attempts.max(1))))
    }

    fn fill(&mut self) -> Result<(), RuntimeError> {
        while self.buffer.is_empty() && !self.exhausted {
            if self.stream.is_none() {
                self.open()?;
            }
            let line = self.stream.as_mut().expect("stream opened").next();
            let event = match line {
                Some(Ok(l)) => parse_sse_line(&l)?,
                Some(Err(e)) => return Err(RuntimeError::Endpoint(format!("stream read failed: {}", e.kind()))),
                None => Some(SseEvent::Done),
            };
            match event {
                Some(SseEvent::Delta(text)) => self.buffer.extend(self.tokenizer.push(&text)),
                Some(SseEvent::Done) => {
                    self.buffer.extend(self.tokenizer.finish().into_iter().filter(|t| t.kind != TokenKind::Eos));
                    self.stream = None;
                    self.exhausted = true;
                }
                None => {}
            }
        }
        Ok(())
    }

    fn invalidate(&mut self) {
        self.stream = None;
        self.buffer.clear();
        self.exhausted = false;
    }
}

impl TokenSource for HttpSource {
    fn next_token(&mut self) -> Result<Pulled, RuntimeError> {
        self.fill()?;
        let token = self.buffer.pop_front().unwrap_or_else(Token::eos);
        if token.kind != TokenKind::Eos {
            self.context.push(token.clone());
        }
        Ok(Pulled { token, cost_ms: 0.0 })
    }

    fn inject(&mut self, tokens: &[Token]) -> Result<(), RuntimeError> {
        self.context.extend_from_slice(tokens);
        self.invalidate();
        Ok(())
    }

    fn restart(&mut self, context: &[Token]) -> Result<(), RuntimeError> {
        self.context = context.to_vec();
        self.invalidate();
        Ok(())
    }
}

/// Error text without the URL, which may carry credentials.
fn sanitize(e: &reqwest::Error) -> String {
    let kind = if e.is_connect() {
        "connection failed"
    } else if e.is_timeout() {
        "timed out"
    } else if e.is_request() {
        "request failed"
    } else {
        "transport error"
    };
    kind.to_owned()
}
