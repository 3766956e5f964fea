//! Line protocol for encoders running in a child process.
//!
//! On startup the child writes `{"dim": d}`. Each request is one line
//! `{"texts": [...], "side": "query"|"passage"}` answered by one line
//! `{"embeddings": [[...], ...]}` with rows in request order. Anything the
//! child writes to stderr is logged and otherwise ignored.

use std::io::{self, BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::Encoder;
use crate::datamodel::{normalize_rows, EmbeddingMatrix, Side};
use crate::error::Result;

#[derive(Debug, Error)]
pub enum ExternalError {
    #[error("failed to launch external encoder `{command}`: {source}")]
    Spawn {
        command: String,
        #[source]
        source: io::Error,
    },
    #[error("external encoder i/o: {0}")]
    Io(#[from] io::Error),
    #[error("external encoder did not answer within {0:?}")]
    Timeout(Duration),
    #[error("external encoder closed its output")]
    Closed,
    #[error("external encoder protocol violation: {0}")]
    Protocol(String),
    #[error("external encoder returned a non-finite value at row {row}, col {col}")]
    NonFinite { row: usize, col: usize },
}

#[derive(Debug, Clone)]
pub struct ExternalConfig {
    /// Shell command line; run through `sh -c`.
    pub command: String,
    pub timeout: Duration,
    /// Texts per request line.
    pub batch_size: usize,
}

impl ExternalConfig {
    pub fn new(command: impl Into<String>) -> Self {
        ExternalConfig {
            command: command.into(),
            timeout: Duration::from_secs(60),
            batch_size: 64,
        }
    }
}

#[derive(Serialize, Deserialize)]
pub struct Handshake {
    pub dim: usize,
}

#[derive(Serialize, Deserialize)]
pub struct Request {
    pub texts: Vec<String>,
    pub side: Side,
}

#[derive(Deserialize)]
struct Response {
    embeddings: Vec<Vec<Option<f64>>>,
}

struct Process {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<io::Result<String>>,
    broken: bool,
}

impl Process {
    fn read_line(&mut self, timeout: Duration) -> Result<String, ExternalError> {
        match self.lines.recv_timeout(timeout) {
            Ok(Ok(line)) => Ok(line),
            Ok(Err(e)) => Err(ExternalError::Io(e)),
            Err(RecvTimeoutError::Timeout) => Err(ExternalError::Timeout(timeout)),
            Err(RecvTimeoutError::Disconnected) => Err(ExternalError::Closed),
        }
    }
}

/// Client for one encoder child process. Requests are serialized.
pub struct ExternalEncoder {
    cfg: ExternalConfig,
    dim: usize,
    proc: Mutex<Process>,
}

impl ExternalEncoder {
    pub fn spawn(cfg: ExternalConfig) -> Result<Self, ExternalError> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(&cfg.command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|source| ExternalError::Spawn {
                command: cfg.command.clone(),
                source,
            })?;
        let stdout = child.stdout.take().expect("piped stdout");
        let stderr = child.stderr.take().expect("piped stderr");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        let command = cfg.command.clone();
        thread::spawn(move || {
            for line in BufReader::new(stderr).lines().map_while(|l| l.ok()) {
                log::warn!("[{command}] {line}");
            }
        });
        let mut proc = Process {
            stdin: child.stdin.take(),
            child,
            lines: rx,
            broken: false,
        };
        let line = proc.read_line(cfg.timeout)?;
        let hs: Handshake = serde_json::from_str(&line)
            .map_err(|e| ExternalError::Protocol(format!("bad handshake `{line}`: {e}")))?;
        if hs.dim == 0 {
            return Err(ExternalError::Protocol("handshake declared dim 0".into()));
        }
        Ok(ExternalEncoder {
            dim: hs.dim,
            cfg,
            proc: Mutex::new(proc),
        })
    }

    fn request(&self, texts: &[String], side: Side) -> Result<Vec<Vec<f32>>, ExternalError> {
        let mut proc = self.proc.lock().unwrap_or_else(|p| p.into_inner());
        if proc.broken {
            return Err(ExternalError::Protocol(
                "encoder unusable after an earlier failure".into(),
            ));
        }
        let result = (|| {
            let req = serde_json::to_string(&Request {
                texts: texts.to_vec(),
                side,
            })
            .map_err(|e| ExternalError::Protocol(e.to_string()))?;
            let stdin = proc.stdin.as_mut().ok_or(ExternalError::Closed)?;
            stdin.write_all(req.as_bytes())?;
            stdin.write_all(b"\n")?;
            stdin.flush()?;
            let line = proc.read_line(self.cfg.timeout)?;
            parse_response(&line, texts.len(), self.dim)
        })();
        if result.is_err() {
            proc.broken = true;
        }
        result
    }

    /// Encodes all texts; either every row comes back valid or an error is returned.
    pub fn encode_external(&self, texts: &[String], side: Side) -> Result<EmbeddingMatrix> {
        let mut data = Vec::with_capacity(texts.len() * self.dim);
        for chunk in texts.chunks(self.cfg.batch_size.max(1)) {
            for row in self.request(chunk, side)? {
                data.extend(row);
            }
        }
        let m = EmbeddingMatrix::new(texts.len(), self.dim, data)?;
        let m = match EmbeddingMatrix::from_unit_rows(m.rows(), m.dim(), m.data().to_vec()) {
            Ok(unit) => unit,
            Err(_) => normalize_rows(&m)?,
        };
        Ok(m)
    }
}

impl Encoder for ExternalEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, texts: &[String], side: Side) -> Result<EmbeddingMatrix> {
        self.encode_external(texts, side)
    }
}

impl Drop for ExternalEncoder {
    fn drop(&mut self) {
        let proc = self.proc.get_mut().unwrap_or_else(|p| p.into_inner());
        drop(proc.stdin.take());
        let deadline = Instant::now() + Duration::from_millis(500);
        while Instant::now() < deadline {
            if let Ok(Some(_)) = proc.child.try_wait() {
                return;
            }
            thread::sleep(Duration::from_millis(10));
        }
        let _ = proc.child.kill();
        let _ = proc.child.wait();
    }
}

/// Rewrites bare `NaN` / `Infinity` / `-Infinity` tokens (as emitted by many
/// JSON writers) to `null` so they surface as non-finite values rather than
/// as parse failures.
fn sanitize_non_finite(line: &str) -> String {
    let mut out = String::with_capacity(line.len());
    let mut in_str = false;
    let mut escaped = false;
    let mut rest = line;
    while let Some(c) = rest.chars().next() {
        if in_str {
            out.push(c);
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_str = false;
            }
            rest = &rest[c.len_utf8()..];
            continue;
        }
        if c == '"' {
            in_str = true;
        }
        let token = ["-Infinity", "Infinity", "NaN"]
            .into_iter()
            .find(|t| rest.starts_with(t));
        if let Some(t) = token {
            out.push_str("null");
            rest = &rest[t.len()..];
        } else {
            out.push(c);
            rest = &rest[c.len_utf8()..];
        }
    }
    out
}

fn parse_response(
    line: &str,
    expected_rows: usize,
    dim: usize,
) -> Result<Vec<Vec<f32>>, ExternalError> {
    let resp: Response = serde_json::from_str(line)
        .or_else(|_| serde_json::from_str(&sanitize_non_finite(line)))
        .map_err(|e| ExternalError::Protocol(format!("unparseable response: {e}")))?;
    if resp.embeddings.len() != expected_rows {
        return Err(ExternalError::Protocol(format!(
            "expected {expected_rows} rows, got {}",
            resp.embeddings.len()
        )));
    }
    let mut rows = Vec::with_capacity(expected_rows);
    for (r, row) in resp.embeddings.into_iter().enumerate() {
        if row.len() != dim {
            return Err(ExternalError::Protocol(format!(
                "row {r} has {} values, handshake declared {dim}",
                row.len()
            )));
        }
        let mut out = Vec::with_capacity(dim);
        for (c, v) in row.into_iter().enumerate() {
            match v.map(|x| x as f32) {
                Some(x) if x.is_finite() => out.push(x),
                _ => return Err(ExternalError::NonFinite { row: r, col: c }),
            }
        }
        rows.push(out);
    }
    Ok(rows)
}

/// Serves `encoder` over the line protocol until `input` reaches EOF.
pub fn serve<R: BufRead, W: Write>(encoder: &dyn Encoder, input: R, mut output: W) -> Result<()> {
    let io_err = |e: io::Error| crate::error::Error::External(ExternalError::Io(e));
    let hs = serde_json::to_string(&Handshake { dim: encoder.dim() }).expect("plain struct");
    writeln!(output, "{hs}").map_err(io_err)?;
    output.flush().map_err(io_err)?;
    for line in input.lines() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let req: Request = serde_json::from_str(&line)
            .map_err(|e| ExternalError::Protocol(format!("bad request: {e}")))?;
        let m = encoder.encode(&req.texts, req.side)?;
        let rows: Vec<&[f32]> = m.iter_rows().collect();
        let body = serde_json::json!({ "embeddings": rows });
        writeln!(output, "{body}").map_err(io_err)?;
        output.flush().map_err(io_err)?;
    }
    Ok(())
}
