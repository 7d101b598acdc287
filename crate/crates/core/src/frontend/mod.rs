//! Input side of the pipeline: streaming ASR, streaming unit extraction and
//! real-time interleaving, plus [`Frontend`], which wires the three together
//! for one session.

pub mod asr;
pub mod hallucination;
pub mod interleave;
pub mod units;

pub use asr::{common_prefix_len, is_reset_command, AsrError, AsrState, IngestOutcome, ResetCause, RESET_COMMAND};
pub use hallucination::HallucinationPatterns;
pub use interleave::{InterleaveError, InterleaveState};
pub use units::{grid_range, grid_time, UnitBuffer, UnitError};

use thiserror::Error;

use crate::backend::{AudioSegment, HypothesisSource, UnitEncoder};
use crate::config::SessionConfig;
use crate::types::{Modality, TimedUnit, TimedWord, Token};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FrontendError {
    #[error(transparent)]
    Asr(#[from] AsrError),
    #[error(transparent)]
    Units(#[from] UnitError),
    #[error(transparent)]
    Interleave(#[from] InterleaveError),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FrontendOutput {
    /// Tokens ready for the language model, in the session's input modality.
    pub tokens: Vec<Token>,
    pub frame: Vec<TimedUnit>,
    pub confirmed: Vec<TimedWord>,
    pub removed: Vec<TimedWord>,
    pub asr_tick: bool,
}

#[derive(Debug, Clone)]
pub struct Frontend {
    cfg: SessionConfig,
    modality: Modality,
    asr: AsrState,
    units: UnitBuffer,
    interleave: InterleaveState,
    unit_log: Vec<TimedUnit>,
    pending: Option<AudioSegment>,
}

impl Frontend {
    pub fn new(cfg: &SessionConfig, modality: Modality, patterns: HallucinationPatterns) -> Self {
        Frontend {
            cfg: cfg.clone(),
            modality,
            asr: AsrState::new(cfg.asr_trim_window_s, patterns),
            units: UnitBuffer::from_config(cfg),
            interleave: InterleaveState::new(),
            unit_log: Vec::new(),
            pending: None,
        }
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn asr(&self) -> &AsrState {
        &self.asr
    }

    pub fn units(&self) -> &UnitBuffer {
        &self.units
    }

    pub fn interleave_state(&self) -> &InterleaveState {
        &self.interleave
    }

    /// Feeds one encoder chunk; every `asr_cadence_ms` of audio also runs a
    /// recognizer tick (skipped for unit-only input). A chunk that does not
    /// continue the previous one starts a new stream.
    pub fn push_audio<A, E>(
        &mut self,
        chunk: AudioSegment,
        asr: &mut A,
        encoder: &mut E,
    ) -> Result<FrontendOutput, FrontendError>
    where
        A: HypothesisSource + ?Sized,
        E: UnitEncoder + ?Sized,
    {
        let chunk_end = chunk.end_ms();
        if self.units.end_ms().is_some_and(|end| end != chunk.start_ms) {
            self.units.clear();
            self.pending = None;
            self.asr.discard_buffer();
        }
        let frame = self.units.push(chunk.clone(), encoder)?;
        self.unit_log.extend(frame.iter().copied());
        let mut out = FrontendOutput {
            frame,
            ..Default::default()
        };

        let pending = self
            .pending
            .get_or_insert_with(|| AudioSegment::new(chunk.id, chunk.start_ms, 0));
        pending.duration_ms += chunk.duration_ms;
        if pending.duration_ms < self.cfg.asr_cadence_ms {
            return Ok(out);
        }
        let segment = self.pending.take().expect("pending segment");
        out.asr_tick = true;

        if self.modality == Modality::Unit {
            out.tokens = self.interleave.flush(&self.unit_log, Some(chunk_end), None);
            self.prune_log();
            return Ok(out);
        }

        let ingest = self.asr.ingest(segment, asr)?;
        self.asr.trim();
        out.tokens = match self.modality {
            Modality::Text => ingest.confirmed.iter().map(|w| Token::text(w.surface.clone())).collect(),
            _ => self
                .interleave
                .interleave(&ingest.confirmed, &self.unit_log, Some(self.cfg.gap_recovery_max_ms))?,
        };
        out.confirmed = ingest.confirmed;
        out.removed = ingest.removed;
        self.prune_log();
        Ok(out)
    }

    /// Typed text bypasses recognition and enters as text tokens.
    pub fn push_text(&mut self, text: &str) -> Vec<Token> {
        crate::types::text_to_tokens(text)
    }

    pub fn reset(&mut self, cause: ResetCause) {
        self.asr.reset(cause);
        self.pending = None;
    }

    /// Word end of the most recent confirmed word.
    pub fn last_word_end_ms(&self) -> Option<u64> {
        self.asr.confirmed().last().map(|w| w.end_ms)
    }

    fn prune_log(&mut self) {
        let consumed = self.interleave.last_consumed_unit_end_ms;
        let keep_from = self.unit_log.partition_point(|u| u.start_ms < consumed);
        self.unit_log.drain(..keep_from);
    }
}
