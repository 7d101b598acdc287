//! Sliding-window speech unit extraction.

use std::collections::VecDeque;

use thiserror::Error;

use crate::backend::{AudioSegment, UnitEncoder};
use crate::error::BackendError;
use crate::types::TimedUnit;

/// Start time of grid unit `k` at `rate_hz`.
pub fn grid_time(k: u64, rate_hz: u32) -> u64 {
    k * 1000 / rate_hz as u64
}

/// Grid indices whose start time falls in `[start_ms, end_ms)`.
pub fn grid_range(start_ms: u64, end_ms: u64, rate_hz: u32) -> std::ops::Range<u64> {
    let r = rate_hz as u64;
    let first = (start_ms * r).div_ceil(1000);
    let last = (end_ms * r).div_ceil(1000);
    first..last.max(first)
}

pub fn on_grid(t_ms: u64, rate_hz: u32) -> bool {
    let k = (t_ms * rate_hz as u64).div_ceil(1000);
    grid_time(k, rate_hz) == t_ms
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum UnitError {
    #[error("chunk starts at {got_ms} ms, expected {expected_ms} ms")]
    Gap { expected_ms: u64, got_ms: u64 },
    #[error("chunk lasts {got_ms} ms, expected {expected_ms} ms")]
    Duration { expected_ms: u64, got_ms: u64 },
    #[error("encoder returned unit at {0} ms, off the unit grid")]
    OffGrid(u64),
    #[error("encoder returned unit {index} outside vocabulary of {vocab_size}")]
    OutOfVocab { index: u32, vocab_size: u32 },
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone)]
pub struct UnitBuffer {
    chunks: VecDeque<AudioSegment>,
    capacity: usize,
    chunk_ms: u64,
    unit_rate_hz: u32,
    vocab_size: u32,
    last_emitted_unit_time_ms: Option<u64>,
}

impl UnitBuffer {
    pub fn new(window_ms: u64, chunk_ms: u64, unit_rate_hz: u32, vocab_size: u32) -> Self {
        UnitBuffer {
            chunks: VecDeque::new(),
            capacity: (window_ms / chunk_ms).max(1) as usize,
            chunk_ms,
            unit_rate_hz,
            vocab_size,
            last_emitted_unit_time_ms: None,
        }
    }

    pub fn from_config(cfg: &crate::SessionConfig) -> Self {
        Self::new(cfg.unit_window_ms, cfg.unit_chunk_ms, cfg.unit_rate_hz, cfg.unit_vocab_size)
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn chunks(&self) -> impl ExactSizeIterator<Item = &AudioSegment> {
        self.chunks.iter()
    }

    pub fn buffered_ms(&self) -> u64 {
        self.chunks.iter().map(|c| c.duration_ms).sum()
    }

    pub fn last_emitted_unit_time_ms(&self) -> Option<u64> {
        self.last_emitted_unit_time_ms
    }

    /// Appends a chunk (evicting the oldest beyond capacity), encodes the
    /// window and returns the units that start inside the new chunk.
    pub fn push<E: UnitEncoder + ?Sized>(
        &mut self,
        chunk: AudioSegment,
        encoder: &mut E,
    ) -> Result<Vec<TimedUnit>, UnitError> {
        if chunk.duration_ms != self.chunk_ms {
            return Err(UnitError::Duration {
                expected_ms: self.chunk_ms,
                got_ms: chunk.duration_ms,
            });
        }
        if let Some(last) = self.chunks.back() {
            if chunk.start_ms != last.end_ms() {
                return Err(UnitError::Gap {
                    expected_ms: last.end_ms(),
                    got_ms: chunk.start_ms,
                });
            }
        }
        let (span_start, span_end) = (chunk.start_ms, chunk.end_ms());
        self.chunks.push_back(chunk);
        let evicted = if self.chunks.len() > self.capacity {
            self.chunks.pop_front()
        } else {
            None
        };
        let undo = |buf: &mut Self| {
            buf.chunks.pop_back();
            if let Some(e) = evicted.clone() {
                buf.chunks.push_front(e);
            }
        };
        let units = match encoder.encode(self.chunks.make_contiguous(), self.unit_rate_hz) {
            Ok(u) => u,
            Err(e) => {
                undo(self);
                return Err(e.into());
            }
        };
        let mut frame = Vec::new();
        for u in units {
            if !on_grid(u.start_ms, self.unit_rate_hz) {
                undo(self);
                return Err(UnitError::OffGrid(u.start_ms));
            }
            if u.unit.0 >= self.vocab_size {
                undo(self);
                return Err(UnitError::OutOfVocab {
                    index: u.unit.0,
                    vocab_size: self.vocab_size,
                });
            }
            if u.start_ms >= span_start && u.start_ms < span_end {
                frame.push(u);
            }
        }
        frame.sort_by_key(|u| u.start_ms);
        frame.dedup_by_key(|u| u.start_ms);
        if let Some(last) = frame.last() {
            self.last_emitted_unit_time_ms = Some(last.start_ms);
        }
        Ok(frame)
    }

    /// End of the newest buffered chunk.
    pub fn end_ms(&self) -> Option<u64> {
        self.chunks.back().map(AudioSegment::end_ms)
    }

    pub fn clear(&mut self) {
        self.chunks.clear();
    }
}
