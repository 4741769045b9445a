//! Minimal streaming endpoint for tests and offline demos.
//!
//! Serves `POST` requests in the chat-completion streaming format. Each
//! request is answered by a [`PolicySource`] restarted over the assistant
//! text in the request, so the stub behaves like a stateless model that has
//! learned the task graph. A response stops after a trap block or when the
//! emulated model has nothing left to say.

use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use serde_json::{json, Value};

use super::source::{NextCall, PolicySource, TokenSource};
use crate::cml::{tokenize, TokenKind};
use crate::taskmodel::TaskGraph;
use crate::Ms;

#[derive(Debug, Clone)]
pub struct StubConfig {
    pub graph: TaskGraph,
    /// Delay before the first chunk of every response.
    pub ttft_ms: Ms,
    /// Delay between chunks.
    pub tpot_ms: Ms,
    /// Required `(header, value)`; requests without it get 401.
    pub auth: Option<(String, String)>,
}

pub struct StubServer {
    addr: SocketAddr,
    shutdown: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl StubServer {
    /// Binds `127.0.0.1` on an ephemeral port and serves in the background.
    pub fn start(config: StubConfig) -> io::Result<Self> {
        Self::bind("127.0.0.1:0", config)
    }

    pub fn bind(addr: &str, config: StubConfig) -> io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        let shutdown = Arc::new(AtomicBool::new(false));
        let stop = Arc::clone(&shutdown);
        let config = Arc::new(config);
        let handle = thread::spawn(move || {
            for conn in listener.incoming() {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                if let Ok(stream) = conn {
                    let config = Arc::clone(&config);
                    thread::spawn(move || {
                        let _ = serve(stream, &config);
                    });
                }
            }
        });
        Ok(StubServer { addr, shutdown, handle: Some(handle) })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}/v1/chat/completions", self.addr)
    }

    /// Blocks until the server stops (it only stops when dropped elsewhere).
    pub fn join(mut self) {
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        // wake the accept loop
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn serve(stream: TcpStream, config: &StubConfig) -> io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut request_line = String::new();
    reader.read_line(&mut request_line)?;
    let mut content_length = 0usize;
    let mut authorized = config.auth.is_none();
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line)? == 0 || line.trim().is_empty() {
            break;
        }
        if let Some((name, value)) = line.split_once(':') {
            let (name, value) = (name.trim(), value.trim());
            if name.eq_ignore_ascii_case("content-length") {
                content_length = value.parse().unwrap_or(0);
            }
            if let Some((h, v)) = &config.auth {
                if name.eq_ignore_ascii_case(h) && value == v {
                    authorized = true;
                }
            }
        }
    }
    let mut body = vec![0; content_length];
    reader.read_exact(&mut body)?;
    let mut out = stream;
    if !request_line.starts_with("POST ") {
        return respond(&mut out, "405 Method Not Allowed", r#"{"error":"use POST"}"#);
    }
    if !authorized {
        return respond(&mut out, "401 Unauthorized", r#"{"error":"unauthorized"}"#);
    }
    let Ok(req) = serde_json::from_slice::<Value>(&body) else {
        return respond(&mut out, "400 Bad Request", r#"{"error":"invalid json"}"#);
    };
    let assistant = req["messages"]
        .as_array()
        .and_then(|m| m.iter().rev().find(|m| m["role"] == "assistant"))
        .and_then(|m| m["content"].as_str())
        .unwrap_or("");
    let mut model = PolicySource::new(config.graph.clone(), NextCall::Lpt);
    let context: Vec<_> = tokenize(assistant).into_iter().filter(|t| t.kind != TokenKind::Eos).collect();
    if model.restart(&context).is_err() {
        return respond(&mut out, "400 Bad Request", r#"{"error":"context does not parse"}"#);
    }

    out.write_all(b"HTTP/1.1 200 OK\r\nContent-Type: text/event-stream\r\nCache-Control: no-cache\r\nConnection: close\r\n\r\n")?;
    out.flush()?;
    sleep_ms(config.ttft_ms);
    let mut prev = TokenKind::Eos;
    while let Ok(pulled) = model.next_token() {
        let tok = pulled.token;
        if tok.kind == TokenKind::Eos {
            break;
        }
        let chunk = json!({"choices": [{"index": 0, "delta": {"content": tok.surface()}}]});
        write!(out, "data: {chunk}\n\n")?;
        out.flush()?;
        if prev == TokenKind::Trap && tok.kind == TokenKind::End {
            break;
        }
        prev = tok.kind;
        sleep_ms(config.tpot_ms);
    }
    out.write_all(b"data: [DONE]\n\n")?;
    out.flush()
}

fn respond(out: &mut TcpStream, status: &str, body: &str) -> io::Result<()> {
    write!(
        out,
        "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    )?;
    out.flush()
}

fn sleep_ms(ms: Ms) {
    if ms > 0.0 {
        thread::sleep(Duration::from_secs_f64(ms / 1000.0));
    }
}
