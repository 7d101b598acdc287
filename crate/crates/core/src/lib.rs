//! Core of a full-duplex spoken dialogue pipeline: streaming recognition and
//! unit extraction, real-time interleaving, turn-taking with speculative
//! generation, dynamic decoder chunking, scripted backends, corpus tooling
//! and evaluation.

pub mod backend;
pub mod clock;
pub mod config;
pub mod corpus;
pub mod decoder;
pub mod error;
pub mod eval;
pub mod frontend;
pub mod latency;
pub mod pipeline;
pub mod sim;
pub mod turn;
pub mod types;

pub use backend::{AudioSegment, HypothesisSource, LanguageModel, SynthesizedChunk, UnitDecoder, UnitEncoder};
pub use clock::{Clock, ClockMode};
pub use config::{ConfigError, SessionConfig};
pub use error::{BackendError, TypeError};
pub use latency::{Component, LatencyLedger, TurnMode};
pub use types::{Modality, TimedUnit, TimedWord, Token, UnitId};
