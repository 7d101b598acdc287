//! Trace files: the wire byte stream of one session, one message per line,
//! prefixed with its direction and timestamp.
//!
//! ```text
//! > 1200 {"kind":"user_text_chunk","t_ms":1200,"seq":1,"payload":{"text":"你好"}}
//! < 1300 {"kind":"eot_detected","t_ms":1300,"seq":1,"payload":{"forced":false,"wait_ms":100}}
//! ```
//!
//! `>` is client to server, `<` server to client. The timestamp is the
//! session clock when the line crossed the wire. Lines starting with `#`
//! are comments.

use std::fmt;
use std::io::{self, Write};

use thiserror::Error;

use crate::wire::{decode_message, encode_message, WireError, WireMessage};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    In,
    Out,
}

impl Direction {
    pub fn marker(self) -> char {
        match self {
            Direction::In => '>',
            Direction::Out => '<',
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceLine {
    pub dir: Direction,
    pub t_ms: u64,
    /// The wire line, without its newline.
    pub raw: String,
}

impl TraceLine {
    pub fn new(dir: Direction, t_ms: u64, raw: impl Into<String>) -> Self {
        let mut raw = raw.into();
        if raw.ends_with('\n') {
            raw.pop();
        }
        TraceLine { dir, t_ms, raw }
    }

    pub fn message(dir: Direction, msg: &WireMessage) -> Result<Self, WireError> {
        Ok(TraceLine::new(dir, msg.t_ms, encode_message(msg)?))
    }

    pub fn decode(&self) -> Result<WireMessage, WireError> {
        decode_message(&self.raw)
    }
}

impl fmt::Display for TraceLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.dir.marker(), self.t_ms, self.raw)
    }
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub fn parse_trace(text: &str) -> Result<Vec<TraceLine>, TraceError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |m: &str| TraceError::Malformed {
            line: i + 1,
            message: m.to_string(),
        };
        let mut parts = line.splitn(3, ' ');
        let dir = match parts.next() {
            Some(">") => Direction::In,
            Some("<") => Direction::Out,
            _ => return Err(bad("expected '>' or '<'")),
        };
        let t_ms = parts
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| bad("expected a timestamp"))?;
        let raw = parts.next().ok_or_else(|| bad("missing message"))?;
        out.push(TraceLine::new(dir, t_ms, raw));
    }
    Ok(out)
}

pub fn render_trace(lines: &[TraceLine]) -> String {
    lines.iter().map(|l| format!("{l}\n")).collect()
}

/// Appends trace lines to any writer, flushing after each line.
pub struct TraceWriter<W: Write> {
    inner: W,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(inner: W) -> Self {
        TraceWriter { inner }
    }

    pub fn comment(&mut self, text: &str) -> io::Result<()> {
        writeln!(self.inner, "# {text}")?;
        self.inner.flush()
    }

    pub fn write(&mut self, line: &TraceLine) -> io::Result<()> {
        writeln!(self.inner, "{line}")?;
        self.inner.flush()
    }

    pub fn into_inner(self) -> W {
        self.inner
    }
}
