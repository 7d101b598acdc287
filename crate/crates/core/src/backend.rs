//! Model backend interfaces. Scripted implementations live in [`crate::sim`];
//! real model adapters plug in behind the same traits.

use crate::error::BackendError;
use crate::types::{TimedUnit, TimedWord, Token, UnitId};

/// Opaque audio span; only its identity and timing matter here.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct AudioSegment {
    pub id: u64,
    pub start_ms: u64,
    pub duration_ms: u64,
}

impl AudioSegment {
    pub fn new(id: u64, start_ms: u64, duration_ms: u64) -> Self {
        AudioSegment {
            id,
            start_ms,
            duration_ms,
        }
    }

    pub fn end_ms(&self) -> u64 {
        self.start_ms + self.duration_ms
    }
}

/// Streaming ASR: word-timestamped hypothesis over the whole current buffer.
pub trait HypothesisSource {
    fn transcribe(&mut self, buffer: &[AudioSegment]) -> Result<Vec<TimedWord>, BackendError>;
}

/// Speech encoder: units for every grid point of the window, conditioned on
/// the whole window.
pub trait UnitEncoder {
    fn encode(&mut self, window: &[AudioSegment], unit_rate_hz: u32) -> Result<Vec<TimedUnit>, BackendError>;
}

pub trait LanguageModel {
    /// Probability that the next token after `context` is end-of-turn.
    fn end_of_turn_probability(&mut self, context: &[Token]) -> Result<f64, BackendError>;

    /// Next token of the response to `prompt`, given what this generation
    /// session has produced so far. Returns [`Token::EndOfTurn`] when done.
    fn next_token(&mut self, prompt: &[Token], generated: &[Token]) -> Result<Token, BackendError>;
}

/// Rendered audio for one decoder chunk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthesizedChunk {
    pub chunk_id: u64,
    pub duration_ms: u64,
}

pub trait UnitDecoder {
    fn synthesize(&mut self, chunk_id: u64, units: &[UnitId], unit_ms: u64) -> Result<SynthesizedChunk, BackendError>;
}

impl<T: HypothesisSource + ?Sized> HypothesisSource for Box<T> {
    fn transcribe(&mut self, buffer: &[AudioSegment]) -> Result<Vec<TimedWord>, BackendError> {
        (**self).transcribe(buffer)
    }
}

impl<T: UnitEncoder + ?Sized> UnitEncoder for Box<T> {
    fn encode(&mut self, window: &[AudioSegment], unit_rate_hz: u32) -> Result<Vec<TimedUnit>, BackendError> {
        (**self).encode(window, unit_rate_hz)
    }
}

impl<T: LanguageModel + ?Sized> LanguageModel for Box<T> {
    fn end_of_turn_probability(&mut self, context: &[Token]) -> Result<f64, BackendError> {
        (**self).end_of_turn_probability(context)
    }

    fn next_token(&mut self, prompt: &[Token], generated: &[Token]) -> Result<Token, BackendError> {
        (**self).next_token(prompt, generated)
    }
}

impl<T: UnitDecoder + ?Sized> UnitDecoder for Box<T> {
    fn synthesize(&mut self, chunk_id: u64, units: &[UnitId], unit_ms: u64) -> Result<SynthesizedChunk, BackendError> {
        (**self).synthesize(chunk_id, units, unit_ms)
    }
}
