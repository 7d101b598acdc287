//! Line-delimited session protocol.
//!
//! Every message is one JSON object on one line:
//!
//! ```text
//! {"kind":"user_text_chunk","t_ms":1200,"seq":3,"payload":{"text":"你好"}}
//! ```
//!
//! Newlines inside payload strings are escaped by the JSON encoding, so a
//! raw newline only ever terminates a message.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

/// The exact text of the reset command.
pub const RESET_PAYLOAD: &str = "===";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum WireKind {
    UserTextChunk,
    UserAudioChunk,
    ResetCommand,
    BotToken,
    BotText,
    BotAudioRef,
    EotDetected,
    InterruptAck,
    BotInitiate,
    StateUpdate,
    LatencyReport,
    ChunkPlan,
    Error,
    /// Upvote or downvote on a bot turn, appended to the votes log.
    Feedback,
}

impl WireKind {
    pub const ALL: [WireKind; 14] = [
        WireKind::UserTextChunk,
        WireKind::UserAudioChunk,
        WireKind::ResetCommand,
        WireKind::BotToken,
        WireKind::BotText,
        WireKind::BotAudioRef,
        WireKind::EotDetected,
        WireKind::InterruptAck,
        WireKind::BotInitiate,
        WireKind::StateUpdate,
        WireKind::LatencyReport,
        WireKind::ChunkPlan,
        WireKind::Error,
        WireKind::Feedback,
    ];

    pub fn name(self) -> &'static str {
        match self {
            WireKind::UserTextChunk => "user_text_chunk",
            WireKind::UserAudioChunk => "user_audio_chunk",
            WireKind::ResetCommand => "reset_command",
            WireKind::BotToken => "bot_token",
            WireKind::BotText => "bot_text",
            WireKind::BotAudioRef => "bot_audio_ref",
            WireKind::EotDetected => "eot_detected",
            WireKind::InterruptAck => "interrupt_ack",
            WireKind::BotInitiate => "bot_initiate",
            WireKind::StateUpdate => "state_update",
            WireKind::LatencyReport => "latency_report",
            WireKind::ChunkPlan => "chunk_plan",
            WireKind::Error => "error",
            WireKind::Feedback => "feedback",
        }
    }

    /// Kinds a client may send. `state_update` from a client asks for the
    /// current state (and, on a simulated clock, advances it).
    pub fn is_inbound(self) -> bool {
        matches!(
            self,
            WireKind::UserTextChunk
                | WireKind::UserAudioChunk
                | WireKind::ResetCommand
                | WireKind::StateUpdate
                | WireKind::Feedback
        )
    }
}

impl fmt::Display for WireKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for WireKind {
    type Err = WireError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        WireKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| WireError::UnknownKind(s.to_string()))
    }
}

impl Serialize for WireKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for WireKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireMessage {
    pub kind: WireKind,
    pub t_ms: u64,
    pub seq: u64,
    #[serde(default)]
    pub payload: Value,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("malformed message: {0}")]
    Parse(String),
    #[error("unknown message kind {0:?}")]
    UnknownKind(String),
    #[error("{kind} payload: {message}")]
    Payload { kind: WireKind, message: String },
    #[error("sequence went from {prev} to {got}")]
    SeqRegression { prev: u64, got: u64 },
    #[error("{0} is not accepted from clients")]
    Unexpected(WireKind),
}

impl WireError {
    /// Short machine-readable code carried in `error` messages.
    pub fn code(&self) -> &'static str {
        match self {
            WireError::Parse(_) => "parse",
            WireError::UnknownKind(_) => "unknown_kind",
            WireError::Payload { .. } => "payload",
            WireError::SeqRegression { .. } => "seq_regression",
            WireError::Unexpected(_) => "unexpected_kind",
        }
    }

    /// Protocol violations that end the session.
    pub fn is_fatal(&self) -> bool {
        matches!(self, WireError::SeqRegression { .. })
    }
}

impl WireMessage {
    pub fn new(kind: WireKind, t_ms: u64, payload: impl Serialize) -> Self {
        WireMessage {
            kind,
            t_ms,
            seq: 0,
            payload: serde_json::to_value(payload).expect("payload serializes"),
        }
    }

    pub fn with_seq(mut self, seq: u64) -> Self {
        self.seq = seq;
        self
    }
}

/// One line, newline included.
pub fn encode_message(msg: &WireMessage) -> Result<String, WireError> {
    let mut line = serde_json::to_string(msg).map_err(|e| WireError::Parse(e.to_string()))?;
    line.push('\n');
    Ok(line)
}

/// Parses one line (a trailing newline is allowed) and checks the payload shape.
pub fn decode_message(line: &str) -> Result<WireMessage, WireError> {
    let line = line.strip_suffix('\n').unwrap_or(line);
    let line = line.strip_suffix('\r').unwrap_or(line);
    let raw: Value = serde_json::from_str(line).map_err(|e| WireError::Parse(e.to_string()))?;
    // report an unknown kind by name rather than as a generic parse failure
    if let Some(kind) = raw.get("kind").and_then(Value::as_str) {
        kind.parse::<WireKind>()?;
    }
    let msg: WireMessage = serde_json::from_value(raw).map_err(|e| WireError::Parse(e.to_string()))?;
    if msg.kind == WireKind::ResetCommand && msg.payload != Value::String(RESET_PAYLOAD.into()) {
        return Err(WireError::Payload {
            kind: msg.kind,
            message: format!("must be {RESET_PAYLOAD:?}"),
        });
    }
    Ok(msg)
}

/// Enforces strictly increasing sequence numbers in one direction.
#[derive(Debug, Clone, Default)]
pub struct SeqCheck {
    last: Option<u64>,
}

impl SeqCheck {
    pub fn accept(&mut self, seq: u64) -> Result<(), WireError> {
        if let Some(prev) = self.last {
            if seq <= prev {
                return Err(WireError::SeqRegression { prev, got: seq });
            }
        }
        self.last = Some(seq);
        Ok(())
    }
}

/// Numbers outbound messages 1, 2, 3, ...
#[derive(Debug, Clone, Default)]
pub struct SeqCounter {
    next: u64,
}

impl SeqCounter {
    pub fn stamp(&mut self, msg: WireMessage) -> WireMessage {
        self.next += 1;
        msg.with_seq(self.next)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Vote {
    Up,
    Down,
}

/// What a vote is about; one optional tag per vote.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackTag {
    Quality,
    Flow,
    Completion,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Feedback {
    /// Bot turn (generation session id) being rated.
    pub turn: u64,
    pub vote: Vote,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<FeedbackTag>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TextChunk {
    pub text: String,
    /// Marks the end of the user's turn, like pressing enter.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub last: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AudioChunk {
    /// Id of a 100 ms chunk the session's backends know about.
    pub chunk: u64,
}

/// A client message with its payload parsed.
#[derive(Debug, Clone, PartialEq)]
pub enum Inbound {
    Text(TextChunk),
    Audio(AudioChunk),
    Reset,
    Query,
    Feedback(Feedback),
}

impl Inbound {
    pub fn parse(msg: &WireMessage) -> Result<Inbound, WireError> {
        let bad = |e: serde_json::Error| WireError::Payload {
            kind: msg.kind,
            message: e.to_string(),
        };
        Ok(match msg.kind {
            WireKind::UserTextChunk => Inbound::Text(serde_json::from_value(msg.payload.clone()).map_err(bad)?),
            WireKind::UserAudioChunk => Inbound::Audio(serde_json::from_value(msg.payload.clone()).map_err(bad)?),
            WireKind::ResetCommand => Inbound::Reset,
            WireKind::StateUpdate => Inbound::Query,
            WireKind::Feedback => Inbound::Feedback(serde_json::from_value(msg.payload.clone()).map_err(bad)?),
            other => return Err(WireError::Unexpected(other)),
        })
    }

    pub fn to_message(&self, t_ms: u64) -> WireMessage {
        match self {
            Inbound::Text(c) => WireMessage::new(WireKind::UserTextChunk, t_ms, c),
            Inbound::Audio(c) => WireMessage::new(WireKind::UserAudioChunk, t_ms, c),
            Inbound::Reset => WireMessage::new(WireKind::ResetCommand, t_ms, RESET_PAYLOAD),
            Inbound::Query => WireMessage::new(WireKind::StateUpdate, t_ms, Value::Null),
            Inbound::Feedback(f) => WireMessage::new(WireKind::Feedback, t_ms, f),
        }
    }
}
