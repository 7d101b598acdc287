//! Streaming ASR stabilization.
//!
//! Every cadence tick the whole audio buffer is re-transcribed. Words on
//! which two consecutive hypotheses agree (their word-level longest common
//! prefix) become confirmed; the rest stay buffered and are matched again on
//! the next tick. The buffer is trimmed to a fixed number of seconds.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::hallucination::HallucinationPatterns;
use crate::backend::{AudioSegment, HypothesisSource};
use crate::error::BackendError;
use crate::types::TimedWord;

/// Literal text a user types to reset the recognizer.
pub const RESET_COMMAND: &str = "===";

pub fn is_reset_command(text: &str) -> bool {
    text == RESET_COMMAND
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResetCause {
    Hallucination,
    TurnTaking,
    Command,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AsrError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("audio segment starts at {got_ms} ms but buffer ends at {expected_ms} ms")]
    NonContiguous { expected_ms: u64, got_ms: u64 },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IngestOutcome {
    /// Words confirmed by this tick, after hallucination filtering.
    pub confirmed: Vec<TimedWord>,
    /// Words that reached agreement but matched a hallucination pattern.
    pub removed: Vec<TimedWord>,
}

/// Word-level longest common prefix length.
pub fn common_prefix_len(a: &[TimedWord], b: &[TimedWord]) -> usize {
    a.iter()
        .zip(b)
        .take_while(|(x, y)| x.surface == y.surface)
        .count()
}

#[derive(Debug, Clone)]
pub struct AsrState {
    buffer_start_ms: u64,
    buffered: VecDeque<AudioSegment>,
    prev_hypothesis: Vec<TimedWord>,
    confirmed: Vec<TimedWord>,
    /// How many leading words of the buffered hypothesis are already confirmed.
    committed: usize,
    patterns: HallucinationPatterns,
    trim_window_ms: u64,
    resets: Vec<ResetCause>,
}

impl AsrState {
    pub fn new(trim_window_s: u64, patterns: HallucinationPatterns) -> Self {
        AsrState {
            buffer_start_ms: 0,
            buffered: VecDeque::new(),
            prev_hypothesis: Vec::new(),
            confirmed: Vec::new(),
            committed: 0,
            patterns,
            trim_window_ms: trim_window_s * 1000,
            resets: Vec::new(),
        }
    }

    pub fn buffer_start_ms(&self) -> u64 {
        self.buffer_start_ms
    }

    pub fn buffered(&self) -> impl ExactSizeIterator<Item = &AudioSegment> {
        self.buffered.iter()
    }

    pub fn buffered_ms(&self) -> u64 {
        self.buffered.iter().map(|s| s.duration_ms).sum()
    }

    pub fn buffer_end_ms(&self) -> u64 {
        self.buffered.back().map_or(self.buffer_start_ms, AudioSegment::end_ms)
    }

    pub fn prev_hypothesis(&self) -> &[TimedWord] {
        &self.prev_hypothesis
    }

    /// Full confirmed transcript log; survives trims and resets.
    pub fn confirmed(&self) -> &[TimedWord] {
        &self.confirmed
    }

    pub fn patterns(&self) -> &HallucinationPatterns {
        &self.patterns
    }

    pub fn resets(&self) -> &[ResetCause] {
        &self.resets
    }

    /// Buffers one cadence segment, re-transcribes and confirms the agreed prefix.
    /// On error nothing changes.
    pub fn ingest<B: HypothesisSource + ?Sized>(
        &mut self,
        segment: AudioSegment,
        backend: &mut B,
    ) -> Result<IngestOutcome, AsrError> {
        if !self.buffered.is_empty() && segment.start_ms != self.buffer_end_ms() {
            return Err(AsrError::NonContiguous {
                expected_ms: self.buffer_end_ms(),
                got_ms: segment.start_ms,
            });
        }
        let was_empty = self.buffered.is_empty();
        if was_empty {
            self.buffer_start_ms = segment.start_ms;
        }
        self.buffered.push_back(segment);
        let hypothesis = match backend.transcribe(self.buffered.make_contiguous()) {
            Ok(h) => h,
            Err(e) => {
                self.buffered.pop_back();
                return Err(e.into());
            }
        };

        let agreed = common_prefix_len(&self.prev_hypothesis, &hypothesis);
        let mut outcome = IngestOutcome::default();
        if agreed > self.committed {
            let fresh = &hypothesis[self.committed..agreed];
            let kept = self.patterns.dehallucinate(fresh);
            outcome.removed = removed_words(fresh, &kept);
            self.confirmed.extend(kept.iter().cloned());
            outcome.confirmed = kept;
            self.committed = agreed;
        }
        self.prev_hypothesis = hypothesis;
        Ok(outcome)
    }

    /// Drops the oldest audio beyond the trim window.
    pub fn trim(&mut self) {
        let total = self.buffered_ms();
        if total <= self.trim_window_ms {
            return;
        }
        let mut excess = total - self.trim_window_ms;
        while excess > 0 {
            let Some(front) = self.buffered.front_mut() else { break };
            if front.duration_ms <= excess {
                excess -= front.duration_ms;
                self.buffer_start_ms += front.duration_ms;
                self.buffered.pop_front();
            } else {
                front.start_ms += excess;
                front.duration_ms -= excess;
                self.buffer_start_ms += excess;
                excess = 0;
            }
        }
        // Hypothesis words whose audio is gone will not be re-transcribed.
        let gone = self
            .prev_hypothesis
            .iter()
            .take_while(|w| w.end_ms <= self.buffer_start_ms)
            .count();
        self.prev_hypothesis.drain(..gone);
        self.committed = self.committed.saturating_sub(gone);
    }

    pub fn reset(&mut self, cause: ResetCause) {
        self.discard_buffer();
        self.resets.push(cause);
    }

    /// Clears audio and the pending hypothesis without logging a reset,
    /// e.g. when the input stream restarts after a pause.
    pub fn discard_buffer(&mut self) {
        let end = self.buffer_end_ms();
        self.buffered.clear();
        self.buffer_start_ms = end;
        self.prev_hypothesis.clear();
        self.committed = 0;
    }
}

fn removed_words(all: &[TimedWord], kept: &[TimedWord]) -> Vec<TimedWord> {
    let mut removed = Vec::new();
    let mut k = kept.iter().peekable();
    for w in all {
        if k.peek() == Some(&w) {
            k.next();
        } else {
            removed.push(w.clone());
        }
    }
    removed
}
