//! Single-stream encoding of an interrupted turn: the interrupted speaker's
//! turn is split in two and the interrupting content sits between them,
//! each part opened by its speaker's header.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::Token;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InterruptionError {
    #[error("split index {split} outside turn of {len} tokens")]
    SplitOutOfRange { split: usize, len: usize },
    #[error("speaker label must not be empty")]
    EmptySpeaker,
    #[error("turn content must not contain header tokens (found at {0})")]
    HeaderInSegment(usize),
    #[error("expected exactly two headers in an encoded interruption, found {0}")]
    HeaderCount(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodedInterruption {
    pub prefix: Vec<Token>,
    pub interrupter: String,
    pub interrupting: Vec<Token>,
    pub resumed_by: String,
    pub suffix: Vec<Token>,
}

impl DecodedInterruption {
    pub fn segment_lengths(&self) -> (usize, usize, usize) {
        (self.prefix.len(), self.interrupting.len(), self.suffix.len())
    }
}

fn check_segment(tokens: &[Token], offset: usize) -> Result<(), InterruptionError> {
    match tokens.iter().position(Token::is_header) {
        Some(i) => Err(InterruptionError::HeaderInSegment(offset + i)),
        None => Ok(()),
    }
}

fn header(label: &str) -> Result<Token, InterruptionError> {
    Token::header(label).map_err(|_| InterruptionError::EmptySpeaker)
}

pub fn encode_interruption(
    active_turn: &[Token],
    split_index: usize,
    original_speaker: &str,
    interrupter: &str,
    interrupting: &[Token],
) -> Result<Vec<Token>, InterruptionError> {
    if split_index > active_turn.len() {
        return Err(InterruptionError::SplitOutOfRange {
            split: split_index,
            len: active_turn.len(),
        });
    }
    check_segment(active_turn, 0)?;
    check_segment(interrupting, 0)?;
    let (head, tail) = active_turn.split_at(split_index);
    let mut out = Vec::with_capacity(active_turn.len() + interrupting.len() + 2);
    out.extend_from_slice(head);
    out.push(header(interrupter)?);
    out.extend_from_slice(interrupting);
    out.push(header(original_speaker)?);
    out.extend_from_slice(tail);
    Ok(out)
}

/// Inverse of [`encode_interruption`], located by the two header positions.
pub fn decode_interruption(stream: &[Token]) -> Result<DecodedInterruption, InterruptionError> {
    let headers: Vec<usize> = stream
        .iter()
        .enumerate()
        .filter(|(_, t)| t.is_header())
        .map(|(i, _)| i)
        .collect();
    let &[a, b] = headers.as_slice() else {
        return Err(InterruptionError::HeaderCount(headers.len()));
    };
    let label = |i: usize| match &stream[i] {
        Token::Header(s) => s.clone(),
        _ => unreachable!(),
    };
    Ok(DecodedInterruption {
        prefix: stream[..a].to_vec(),
        interrupter: label(a),
        interrupting: stream[a + 1..b].to_vec(),
        resumed_by: label(b),
        suffix: stream[b + 1..].to_vec(),
    })
}
