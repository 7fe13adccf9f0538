//! A small in-process HTTP server that answers completions requests from a
//! closure; used to exercise the remote adapter without a real endpoint.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use serde_json::{json, Value};

#[derive(Debug, Clone, PartialEq)]
pub enum MockReply {
    Json { status: u16, body: Value },
    /// Close the connection without answering.
    Hangup,
}

impl MockReply {
    /// A completions response whose first position has the given top list.
    pub fn top(entries: &[(&str, f64)]) -> Self {
        let top: serde_json::Map<String, Value> = entries
            .iter()
            .map(|(t, lp)| (t.to_string(), json!(lp)))
            .collect();
        let text = entries
            .iter()
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .map_or("", |e| e.0);
        MockReply::Json {
            status: 200,
            body: json!({
                "object": "text_completion",
                "choices": [{
                    "index": 0,
                    "text": text,
                    "logprobs": {"tokens": [text], "top_logprobs": [top]},
                }],
            }),
        }
    }

    /// Probability one on `token`.
    pub fn certain(token: &str) -> Self {
        Self::top(&[(token, 0.0), (if token == "0" { "1" } else { "0" }, -50.0)])
    }

    pub fn status(status: u16) -> Self {
        MockReply::Json {
            status,
            body: json!({"error": {"message": "mock error"}}),
        }
    }
}

type Handler = dyn Fn(&Value) -> MockReply + Send + Sync;

pub struct MockServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    hits: Arc<AtomicUsize>,
    thread: Option<JoinHandle<()>>,
}

impl MockServer {
    /// Serves `handler` on an ephemeral local port until dropped. The
    /// handler receives the parsed JSON request body.
    pub fn start(handler: impl Fn(&Value) -> MockReply + Send + Sync + 'static) -> std::io::Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let hits = Arc::new(AtomicUsize::new(0));
        let handler: Arc<Handler> = Arc::new(handler);
        let thread = {
            let stop = stop.clone();
            let hits = hits.clone();
            std::thread::spawn(move || {
                for conn in listener.incoming() {
                    if stop.load(Ordering::SeqCst) {
                        break;
                    }
                    let Ok(conn) = conn else { continue };
                    let handler = handler.clone();
                    let hits = hits.clone();
                    std::thread::spawn(move || {
                        let _ = serve(conn, &*handler, &hits);
                    });
                }
            })
        };
        Ok(Self {
            addr,
            stop,
            hits,
            thread: Some(thread),
        })
    }

    /// Answers each request by looking up its prompt (or last user message)
    /// in `table`; unknown prompts get `fallback`.
    pub fn from_table(table: BTreeMap<String, MockReply>, fallback: MockReply) -> std::io::Result<Self> {
        Self::start(move |req| {
            prompt_of(req)
                .and_then(|p| table.get(p).cloned())
                .unwrap_or_else(|| fallback.clone())
        })
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Requests answered or hung up on so far.
    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// The prompt text of a completions or chat request.
pub fn prompt_of(req: &Value) -> Option<&str> {
    req.get("prompt")
        .and_then(Value::as_str)
        .or_else(|| req.pointer("/messages/0/content").and_then(Value::as_str))
}

fn serve(conn: TcpStream, handler: &Handler, hits: &AtomicUsize) -> std::io::Result<()> {
    let mut reader = BufReader::new(conn.try_clone()?);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    let mut length = 0usize;
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 || line == "\r\n" || line == "\n" {
            break;
        }
        if let Some((k, v)) = line.split_once(':') {
            if k.trim().eq_ignore_ascii_case("content-length") {
                length = v.trim().parse().unwrap_or(0);
            }
        }
    }
    let mut body = vec![0; length];
    reader.read_exact(&mut body)?;
    let req: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
    let reply = handler(&req);
    hits.fetch_add(1, Ordering::SeqCst);
    let mut conn = conn;
    match reply {
        MockReply::Hangup => Ok(()),
        MockReply::Json { status, body } => {
            let text = body.to_string();
            write!(
                conn,
                "HTTP/1.1 {status} Mock\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
                text.len()
            )?;
            conn.flush()
        }
    }
}
