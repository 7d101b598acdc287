//! Interleaving confirmed words with the speech units under them.
//!
//! Each word contributes `Text(word)` followed by the units starting inside
//! its span `[start, end)`. Units that fell between the previously consumed
//! time and the word's start are recovered first, limited to the most recent
//! `gap_cap_ms` (unbounded offline).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{TimedUnit, TimedWord, Token};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InterleaveError {
    #[error("word {surface:?} starts at {start_ms} ms, before already consumed time {consumed_ms} ms")]
    OutOfOrder {
        surface: String,
        start_ms: u64,
        consumed_ms: u64,
    },
    #[error("unit timeline is not monotone at {0} ms")]
    UnitsOutOfOrder(u64),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterleaveState {
    pub last_consumed_unit_end_ms: u64,
    pub text_emitted: usize,
    pub units_emitted: usize,
    pub units_recovered: usize,
}

/// Units of `log` (sorted by start) starting in `[from, to)`.
fn units_between(log: &[TimedUnit], from: u64, to: u64) -> &[TimedUnit] {
    let lo = log.partition_point(|u| u.start_ms < from);
    let hi = log.partition_point(|u| u.start_ms < to);
    &log[lo..hi.max(lo)]
}

pub fn check_units_monotone(log: &[TimedUnit]) -> Result<(), InterleaveError> {
    match log.windows(2).find(|w| w[1].start_ms <= w[0].start_ms) {
        Some(w) => Err(InterleaveError::UnitsOutOfOrder(w[1].start_ms)),
        None => Ok(()),
    }
}

impl InterleaveState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Interleaves a batch of newly confirmed words.
    pub fn interleave(
        &mut self,
        new_words: &[TimedWord],
        unit_log: &[TimedUnit],
        gap_cap_ms: Option<u64>,
    ) -> Result<Vec<Token>, InterleaveError> {
        let mut cursor = self.last_consumed_unit_end_ms;
        for w in new_words {
            if w.start_ms < cursor {
                return Err(InterleaveError::OutOfOrder {
                    surface: w.surface.clone(),
                    start_ms: w.start_ms,
                    consumed_ms: cursor,
                });
            }
            cursor = w.end_ms;
        }

        let mut out = Vec::new();
        for w in new_words {
            let gap_from = match gap_cap_ms {
                Some(cap) => self.last_consumed_unit_end_ms.max(w.start_ms.saturating_sub(cap)),
                None => self.last_consumed_unit_end_ms,
            };
            let gap = units_between(unit_log, gap_from, w.start_ms);
            self.units_recovered += gap.len();
            self.push_units(&mut out, gap);
            out.push(Token::text(w.surface.clone()));
            self.text_emitted += 1;
            self.push_units(&mut out, units_between(unit_log, w.start_ms, w.end_ms));
            self.last_consumed_unit_end_ms = w.end_ms;
        }
        Ok(out)
    }

    /// Emits the units after the last consumed time that start before
    /// `until_ms` (everything when `None`), e.g. at the end of an utterance.
    pub fn flush(&mut self, unit_log: &[TimedUnit], until_ms: Option<u64>, gap_cap_ms: Option<u64>) -> Vec<Token> {
        let until = until_ms.unwrap_or(u64::MAX);
        let from = match (gap_cap_ms, until_ms) {
            (Some(cap), Some(u)) => self.last_consumed_unit_end_ms.max(u.saturating_sub(cap)),
            _ => self.last_consumed_unit_end_ms,
        };
        let units = units_between(unit_log, from, until);
        let mut out = Vec::new();
        self.push_units(&mut out, units);
        self.last_consumed_unit_end_ms = match (units.last(), until_ms) {
            (_, Some(u)) => u.max(self.last_consumed_unit_end_ms),
            (Some(last), None) => last.start_ms + 1,
            (None, None) => self.last_consumed_unit_end_ms,
        };
        out
    }

    fn push_units(&mut self, out: &mut Vec<Token>, units: &[TimedUnit]) {
        self.units_emitted += units.len();
        out.extend(units.iter().map(|u| Token::Unit(u.unit)));
    }
}
