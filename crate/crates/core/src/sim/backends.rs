//! Scripted backends. None of them read the wall clock; everything they
//! return is a function of the script and the call arguments.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::backend::{AudioSegment, HypothesisSource, LanguageModel, SynthesizedChunk, UnitDecoder, UnitEncoder};
use crate::error::BackendError;
use crate::frontend::units::{grid_range, grid_time};
use crate::types::{TimedUnit, TimedWord, Token, UnitId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsrEntry {
    pub t_ms: u64,
    pub words: Vec<TimedWord>,
    /// The recognizer fails once when this entry is the newest one in effect.
    pub error: bool,
}

/// Returns the newest scripted hypothesis whose time is at or before the
/// end of the buffer, restricted to words overlapping the buffer.
#[derive(Debug, Clone, Default)]
pub struct ScriptedAsr {
    script: Vec<AsrEntry>,
    failed: Vec<usize>,
}

impl ScriptedAsr {
    pub fn new(mut script: Vec<AsrEntry>) -> Self {
        script.sort_by_key(|e| e.t_ms);
        ScriptedAsr {
            script,
            failed: Vec::new(),
        }
    }
}

impl HypothesisSource for ScriptedAsr {
    fn transcribe(&mut self, buffer: &[AudioSegment]) -> Result<Vec<TimedWord>, BackendError> {
        let (Some(first), Some(last)) = (buffer.first(), buffer.last()) else {
            return Ok(Vec::new());
        };
        let (start, end) = (first.start_ms, last.end_ms());
        let idx = self.script.partition_point(|e| e.t_ms <= end);
        let Some(i) = idx.checked_sub(1) else {
            return Ok(Vec::new());
        };
        let entry = &self.script[i];
        if entry.error && !self.failed.contains(&i) {
            self.failed.push(i);
            return Err(BackendError::new("asr", format!("scripted failure at {} ms", entry.t_ms)));
        }
        Ok(entry
            .words
            .iter()
            .filter(|w| w.end_ms > start && w.start_ms < end)
            .cloned()
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum EncoderEntry {
    Units(Vec<u32>),
    Error,
}

/// Maps chunk ids to units laid on the grid points of the chunk in order;
/// unmapped chunks get a deterministic filler.
#[derive(Debug, Clone, Default)]
pub struct ScriptedEncoder {
    map: BTreeMap<u64, EncoderEntry>,
    vocab_size: u32,
}

impl ScriptedEncoder {
    pub fn new(map: BTreeMap<u64, EncoderEntry>, vocab_size: u32) -> Self {
        ScriptedEncoder { map, vocab_size }
    }

    pub fn filler(chunk: u64, slot: u64, vocab_size: u32) -> u32 {
        ((chunk.wrapping_mul(7919) + slot.wrapping_mul(104_729)) % vocab_size.max(1) as u64) as u32
    }
}

impl UnitEncoder for ScriptedEncoder {
    fn encode(&mut self, window: &[AudioSegment], unit_rate_hz: u32) -> Result<Vec<TimedUnit>, BackendError> {
        let mut out = Vec::new();
        for seg in window {
            let grid = grid_range(seg.start_ms, seg.end_ms(), unit_rate_hz);
            match self.map.get(&seg.id) {
                Some(EncoderEntry::Error) => {
                    return Err(BackendError::new("encoder", format!("scripted failure on chunk {}", seg.id)))
                }
                Some(EncoderEntry::Units(units)) => {
                    out.extend(grid.zip(units).map(|(k, &u)| TimedUnit::new(u, grid_time(k, unit_rate_hz))));
                }
                None => out.extend(grid.enumerate().map(|(slot, k)| {
                    TimedUnit::new(Self::filler(seg.id, slot as u64, self.vocab_size), grid_time(k, unit_rate_hz))
                })),
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LmStep {
    Emit { token: Token, eot_probability: f64 },
    Fail(String),
}

/// Cursor over one scripted turn, advancing one step per emission.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedLmState {
    pub cursor: usize,
    pub tokens_per_second: u64,
}

impl Default for ScriptedLmState {
    fn default() -> Self {
        ScriptedLmState {
            cursor: 0,
            tokens_per_second: 100,
        }
    }
}

impl ScriptedLmState {
    /// Past the end of the script the model emits end of turn with certainty.
    pub fn step(&mut self, script: &[LmStep]) -> Result<(Token, f64), BackendError> {
        let out = match script.get(self.cursor) {
            Some(LmStep::Emit { token, eot_probability }) => Ok((token.clone(), *eot_probability)),
            Some(LmStep::Fail(msg)) => Err(BackendError::new("lm", msg.clone())),
            None => Ok((Token::EndOfTurn, 1.0)),
        };
        self.cursor += 1;
        out
    }

    pub fn emission_interval_ms(&self) -> u64 {
        1000 / self.tokens_per_second.max(1)
    }

    /// Simulated emission time of step `k` for generation starting at `start_ms`.
    pub fn emission_time_ms(&self, start_ms: u64, k: usize) -> u64 {
        start_ms + k as u64 * self.emission_interval_ms()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateCheck {
    RealtimeCapable,
    TooSlow,
}

/// Generated units must at least keep up with playback.
pub fn scripted_generation_rate_check(tokens_per_second: f64, unit_rate_hz: f64) -> RateCheck {
    if tokens_per_second >= unit_rate_hz {
        RateCheck::RealtimeCapable
    } else {
        RateCheck::TooSlow
    }
}

/// Scripted language model. The turn is chosen by counting machine headers
/// in the prompt and the step by the number of tokens generated so far, so
/// restarting a generation replays the same tokens.
#[derive(Debug, Clone, Default)]
pub struct ScriptedLm {
    turns: BTreeMap<usize, Vec<LmStep>>,
    eot: Vec<(Token, f64)>,
    eot_default: f64,
    machine: String,
}

impl ScriptedLm {
    pub fn new(turns: BTreeMap<usize, Vec<LmStep>>, machine_label: &str) -> Self {
        ScriptedLm {
            turns,
            eot: Vec::new(),
            eot_default: 0.0,
            machine: machine_label.into(),
        }
    }

    /// P(end of turn) once the context ends with `after`; the last matching rule wins.
    pub fn with_eot_rules(mut self, rules: Vec<(Token, f64)>, default: f64) -> Self {
        self.eot = rules;
        self.eot_default = default;
        self
    }

    pub fn turn_index(&self, prompt: &[Token]) -> usize {
        prompt
            .iter()
            .filter(|t| matches!(t, Token::Header(s) if *s == self.machine))
            .count()
    }

    pub fn script(&self, turn: usize) -> &[LmStep] {
        self.turns.get(&turn).map_or(&[], Vec::as_slice)
    }
}

impl LanguageModel for ScriptedLm {
    fn end_of_turn_probability(&mut self, context: &[Token]) -> Result<f64, BackendError> {
        let last = context.last();
        Ok(self
            .eot
            .iter()
            .rev()
            .find(|(after, _)| Some(after) == last)
            .map_or(self.eot_default, |(_, p)| *p))
    }

    fn next_token(&mut self, prompt: &[Token], generated: &[Token]) -> Result<Token, BackendError> {
        let mut state = ScriptedLmState {
            cursor: generated.len(),
            ..Default::default()
        };
        state.step(self.script(self.turn_index(prompt))).map(|(t, _)| t)
    }
}

/// Output duration is exactly the units' playback time.
#[derive(Debug, Clone, Copy, Default)]
pub struct ScriptedDecoder;

impl UnitDecoder for ScriptedDecoder {
    fn synthesize(&mut self, chunk_id: u64, units: &[UnitId], unit_ms: u64) -> Result<SynthesizedChunk, BackendError> {
        Ok(SynthesizedChunk {
            chunk_id,
            duration_ms: units.len() as u64 * unit_ms,
        })
    }
}
