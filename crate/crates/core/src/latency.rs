//! Per-component latency accounting and the derived end-to-end bound.
//!
//! The bound is the time from the end of user input until the system starts
//! speaking. In synchronous turn-taking the four spans add up. In
//! asynchronous turn-taking generation starts on every new input, so the
//! turn-taking wait overlaps with first-token and first-chunk work and the
//! bound shrinks by `min(turn_wait, llm_first_token + decoder_first_chunk)`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    AsrInterleave,
    LlmFirstToken,
    DecoderFirstChunk,
    TurnWait,
}

impl Component {
    pub const ALL: [Component; 4] = [
        Component::AsrInterleave,
        Component::LlmFirstToken,
        Component::DecoderFirstChunk,
        Component::TurnWait,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Component::AsrInterleave => "asr_interleave",
            Component::LlmFirstToken => "llm_first_token",
            Component::DecoderFirstChunk => "decoder_first_chunk",
            Component::TurnWait => "turn_wait",
        }
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Component {
    type Err = LatencyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Component::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| LatencyError::UnknownComponent(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LatencyError {
    #[error("unknown latency component {0:?}")]
    UnknownComponent(String),
    #[error("latency ledger is missing spans: {}", names(.0))]
    MissingSpans(Vec<Component>),
}

fn names(c: &[Component]) -> String {
    c.iter().map(|c| c.name()).collect::<Vec<_>>().join(", ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TurnMode {
    #[serde(alias = "sync")]
    Synchronous,
    #[serde(alias = "async")]
    Asynchronous,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LatencyLedger {
    spans: BTreeMap<Component, u64>,
}

impl LatencyLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records (or overwrites) the span for a component given by name.
    pub fn record_span(&mut self, component: &str, ms: u64) -> Result<&mut Self, LatencyError> {
        let c = component.parse::<Component>()?;
        self.spans.insert(c, ms);
        Ok(self)
    }

    pub fn record(&mut self, component: Component, ms: u64) -> &mut Self {
        self.spans.insert(component, ms);
        self
    }

    pub fn get(&self, component: Component) -> Option<u64> {
        self.spans.get(&component).copied()
    }

    pub fn spans(&self) -> impl Iterator<Item = (Component, u64)> + '_ {
        self.spans.iter().map(|(c, ms)| (*c, *ms))
    }

    pub fn latency_bound(&self, mode: TurnMode) -> Result<u64, LatencyError> {
        let missing: Vec<_> = Component::ALL
            .into_iter()
            .filter(|c| !self.spans.contains_key(c))
            .collect();
        if !missing.is_empty() {
            return Err(LatencyError::MissingSpans(missing));
        }
        let asr = self.spans[&Component::AsrInterleave];
        let llm = self.spans[&Component::LlmFirstToken];
        let dec = self.spans[&Component::DecoderFirstChunk];
        let wait = self.spans[&Component::TurnWait];
        let sync = asr + llm + dec + wait;
        Ok(match mode {
            TurnMode::Synchronous => sync,
            TurnMode::Asynchronous => sync - wait.min(llm + dec),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ledger(asr: u64, llm: u64, dec: u64, wait: u64) -> LatencyLedger {
        let mut l = LatencyLedger::new();
        l.record(Component::AsrInterleave, asr)
            .record(Component::LlmFirstToken, llm)
            .record(Component::DecoderFirstChunk, dec)
            .record(Component::TurnWait, wait);
        l
    }

    #[test]
    fn record_and_overwrite() {
        let mut l = LatencyLedger::new();
        l.record_span("asr_interleave", 900).unwrap();
        assert_eq!(l.get(Component::AsrInterleave), Some(900));
        l.record_span("decoder_first_chunk", 0).unwrap();
        assert_eq!(l.get(Component::DecoderFirstChunk), Some(0));
        l.record_span("asr_interleave", 850).unwrap();
        assert_eq!(l.get(Component::AsrInterleave), Some(850));
        assert_eq!(
            l.record_span("foo", 1).unwrap_err(),
            LatencyError::UnknownComponent("foo".into())
        );
    }

    #[test]
    fn reported_system_budget() {
        let l = ledger(900, 400, 200, 1000);
        assert_eq!(l.latency_bound(TurnMode::Synchronous).unwrap(), 2500);
        assert_eq!(l.latency_bound(TurnMode::Asynchronous).unwrap(), 1900);
    }

    #[test]
    fn zero_spans() {
        let l = ledger(0, 0, 0, 0);
        assert_eq!(l.latency_bound(TurnMode::Synchronous).unwrap(), 0);
        assert_eq!(l.latency_bound(TurnMode::Asynchronous).unwrap(), 0);
    }

    #[test]
    fn missing_spans_are_listed() {
        let mut l = LatencyLedger::new();
        l.record(Component::TurnWait, 1);
        match l.latency_bound(TurnMode::Synchronous) {
            Err(LatencyError::MissingSpans(m)) => assert_eq!(
                m,
                vec![
                    Component::AsrInterleave,
                    Component::LlmFirstToken,
                    Component::DecoderFirstChunk
                ]
            ),
            other => panic!("{other:?}"),
        }
    }

    proptest! {
        #[test]
        fn async_never_exceeds_sync(a in 0u64..5000, b in 0u64..5000, c in 0u64..5000, d in 0u64..5000) {
            let l = ledger(a, b, c, d);
            let s = l.latency_bound(TurnMode::Synchronous).unwrap();
            let x = l.latency_bound(TurnMode::Asynchronous).unwrap();
            prop_assert!(x <= s);
            prop_assert_eq!(x == s, d == 0 || b + c == 0);
        }

        #[test]
        fn sync_is_monotone(a in 0u64..5000, b in 0u64..5000, c in 0u64..5000, d in 0u64..5000, bump in 0u64..1000, which in 0usize..4) {
            let base = ledger(a, b, c, d).latency_bound(TurnMode::Synchronous).unwrap();
            let mut v = [a, b, c, d];
            v[which] += bump;
            let bumped = ledger(v[0], v[1], v[2], v[3]).latency_bound(TurnMode::Synchronous).unwrap();
            prop_assert!(bumped >= base);
        }
    }
}
