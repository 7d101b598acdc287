//! One live session without I/O: frontend, turn engine and backends behind
//! a small set of input calls that each return what happened.

use serde::{Deserialize, Serialize};

use crate::backend::{AudioSegment, HypothesisSource, LanguageModel, UnitDecoder, UnitEncoder};
use crate::config::SessionConfig;
use crate::decoder::{ChunkEntry, DecoderProfile};
use crate::frontend::{is_reset_command, Frontend, FrontendError, HallucinationPatterns, ResetCause};
use crate::latency::{Component, LatencyLedger, TurnMode};
use crate::sim::{Scenario, ScriptedDecoder};
use crate::turn::engine::ActionRecord;
use crate::turn::{format_system_prompt, Action, BotTurn, DuplexEngine, EngineConfig, GenerationProfile, Phase};
use crate::types::{text_to_tokens, Modality, TimedWord, Token, UnitId};

pub type BoxedLm = Box<dyn LanguageModel + Send>;

pub struct Backends {
    pub asr: Box<dyn HypothesisSource + Send>,
    pub encoder: Box<dyn UnitEncoder + Send>,
    pub lm: BoxedLm,
    pub decoder: Box<dyn UnitDecoder + Send>,
}

impl Backends {
    pub fn from_scenario(sc: &Scenario, machine_label: &str) -> Self {
        Backends {
            asr: Box::new(sc.asr()),
            encoder: Box::new(sc.encoder()),
            lm: Box::new(sc.lm(machine_label)),
            decoder: Box::new(ScriptedDecoder),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineSpec {
    pub config: SessionConfig,
    pub mode: TurnMode,
    pub user_modality: Modality,
    pub machine_modality: Modality,
    pub role: String,
    pub generation: GenerationProfile,
    pub decoder: DecoderProfile,
    pub silence_initiate: bool,
    pub patterns: HallucinationPatterns,
}

impl PipelineSpec {
    pub fn from_scenario(sc: &Scenario) -> Self {
        PipelineSpec {
            config: sc.config.clone(),
            mode: sc.mode,
            user_modality: sc.user_modality,
            machine_modality: sc.machine_modality,
            role: sc.role.clone(),
            generation: sc.generation,
            decoder: sc.decoder,
            silence_initiate: sc.silence_initiate,
            patterns: sc.patterns(),
        }
    }

    pub fn engine_config(&self) -> EngineConfig {
        let mut cfg = EngineConfig::from_session(&self.config, self.mode);
        cfg.generation = self.generation;
        cfg.decoder = self.decoder;
        if !self.silence_initiate {
            cfg.silence_initiate_ms = None;
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub t_ms: u64,
    pub session: u64,
    pub initiated: bool,
    pub interrupted: bool,
    pub spans: LatencyLedger,
    pub sync_bound_ms: u64,
    pub async_bound_ms: u64,
    /// Observed from the user's last input to the first bot token.
    pub first_token_ms: Option<u64>,
    /// Observed from the user's last input to the first audio playback.
    pub first_audio_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum PipelineEvent {
    Engine(ActionRecord),
    Transcript {
        t_ms: u64,
        confirmed: Vec<TimedWord>,
        removed: Vec<TimedWord>,
        tokens: usize,
    },
    AsrReset {
        t_ms: u64,
        cause: ResetCause,
    },
    AudioRef {
        t_ms: u64,
        session: u64,
        chunk: usize,
        n_units: u64,
        duration_ms: u64,
        playback_start_ms: u64,
    },
    Latency(LatencyReport),
    Fault {
        t_ms: u64,
        backend: String,
        message: String,
    },
    State {
        t_ms: u64,
        phase: Phase,
        asr_buffered_ms: u64,
        unit_chunks: usize,
        context_len: usize,
    },
}

impl PipelineEvent {
    pub fn t_ms(&self) -> u64 {
        match self {
            PipelineEvent::Engine(r) => r.t_ms,
            PipelineEvent::Latency(r) => r.t_ms,
            PipelineEvent::Transcript { t_ms, .. }
            | PipelineEvent::AsrReset { t_ms, .. }
            | PipelineEvent::AudioRef { t_ms, .. }
            | PipelineEvent::Fault { t_ms, .. }
            | PipelineEvent::State { t_ms, .. } => *t_ms,
        }
    }
}

pub struct Pipeline {
    spec: PipelineSpec,
    frontend: Frontend,
    engine: DuplexEngine<BoxedLm>,
    asr: Box<dyn HypothesisSource + Send>,
    encoder: Box<dyn UnitEncoder + Send>,
    decoder: Box<dyn UnitDecoder + Send>,
    reported: usize,
    next_audio_chunk: u64,
    /// Recognition delay of the input that last reached the engine.
    asr_delay_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Prompt(#[from] crate::turn::PromptError),
}

impl Pipeline {
    pub fn new(spec: PipelineSpec, backends: Backends, now_ms: u64) -> Result<Self, PipelineError> {
        let prompt = format_system_prompt(spec.user_modality, spec.machine_modality, &spec.role)?;
        let engine = DuplexEngine::new(spec.engine_config(), backends.lm, &prompt, now_ms);
        Ok(Pipeline {
            frontend: Frontend::new(&spec.config, spec.user_modality, spec.patterns.clone()),
            engine,
            asr: backends.asr,
            encoder: backends.encoder,
            decoder: backends.decoder,
            reported: 0,
            next_audio_chunk: 0,
            asr_delay_ms: 0,
            spec,
        })
    }

    pub fn from_scenario(sc: &Scenario) -> Result<Self, PipelineError> {
        let spec = PipelineSpec::from_scenario(sc);
        let backends = Backends::from_scenario(sc, &spec.engine_config().machine_label);
        Self::new(spec, backends, 0)
    }

    pub fn spec(&self) -> &PipelineSpec {
        &self.spec
    }

    pub fn engine(&self) -> &DuplexEngine<BoxedLm> {
        &self.engine
    }

    pub fn frontend(&self) -> &Frontend {
        &self.frontend
    }

    pub fn now_ms(&self) -> u64 {
        self.engine.now_ms()
    }

    pub fn next_event_time(&self) -> Option<u64> {
        self.engine.next_event_time()
    }

    /// A user audio chunk that finished arriving at `t_ms`.
    pub fn audio_chunk(&mut self, t_ms: u64, chunk_id: u64) -> Vec<PipelineEvent> {
        let mut out = self.run_before(t_ms);
        let dur = self.spec.config.unit_chunk_ms;
        let seg = AudioSegment::new(chunk_id, t_ms.saturating_sub(dur), dur);
        match self.frontend.push_audio(seg, self.asr.as_mut(), self.encoder.as_mut()) {
            Ok(fo) => {
                if fo.asr_tick && (!fo.confirmed.is_empty() || !fo.removed.is_empty()) {
                    out.push(PipelineEvent::Transcript {
                        t_ms,
                        confirmed: fo.confirmed.clone(),
                        removed: fo.removed,
                        tokens: fo.tokens.len(),
                    });
                }
                if !fo.tokens.is_empty() {
                    self.asr_delay_ms = fo.confirmed.last().map_or(0, |w| t_ms.saturating_sub(w.end_ms));
                    let recs = self.engine.user_input(t_ms, &fo.tokens);
                    out.extend(self.collect(recs));
                }
            }
            Err(e) => out.extend(self.fault(t_ms, e)),
        }
        out
    }

    /// Typed text; the reset command resets recognition instead.
    pub fn text_chunk(&mut self, t_ms: u64, text: &str) -> Vec<PipelineEvent> {
        if is_reset_command(text) {
            return self.reset(t_ms);
        }
        let tokens = text_to_tokens(text);
        self.asr_delay_ms = 0;
        let recs = self.engine.user_input(t_ms, &tokens);
        self.collect(recs)
    }

    /// Starts a bot turn now if the session is idle.
    pub fn initiate(&mut self, t_ms: u64) -> Vec<PipelineEvent> {
        let recs = self.engine.initiate(t_ms);
        self.collect(recs)
    }

    pub fn turn_end(&mut self, t_ms: u64) -> Vec<PipelineEvent> {
        let recs = self.engine.end_user_turn(t_ms);
        self.collect(recs)
    }

    /// Clears the recognizer and unit buffers; the conversation is kept.
    pub fn reset(&mut self, t_ms: u64) -> Vec<PipelineEvent> {
        let mut out = self.run_before(t_ms);
        self.frontend.reset(ResetCause::Command);
        out.push(PipelineEvent::AsrReset {
            t_ms,
            cause: ResetCause::Command,
        });
        out.push(self.state_event(t_ms));
        out
    }

    fn run_before(&mut self, t_ms: u64) -> Vec<PipelineEvent> {
        if t_ms == 0 {
            return Vec::new();
        }
        let recs = self.engine.advance_to(t_ms - 1);
        self.collect(recs)
    }

    pub fn advance_to(&mut self, t_ms: u64) -> Vec<PipelineEvent> {
        let recs = self.engine.advance_to(t_ms);
        self.collect(recs)
    }

    /// Runs until only silence deadlines are pending.
    pub fn settle(&mut self) -> Vec<PipelineEvent> {
        let recs = self.engine.settle();
        self.collect(recs)
    }

    pub fn state_event(&self, t_ms: u64) -> PipelineEvent {
        PipelineEvent::State {
            t_ms,
            phase: self.engine.state().phase(),
            asr_buffered_ms: self.frontend.asr().buffered_ms(),
            unit_chunks: self.frontend.units().len(),
            context_len: self.engine.state().context().len(),
        }
    }

    fn fault(&mut self, t_ms: u64, e: FrontendError) -> Vec<PipelineEvent> {
        let backend = match &e {
            FrontendError::Asr(crate::frontend::AsrError::Backend(b)) => b.backend.to_string(),
            FrontendError::Units(crate::frontend::UnitError::Backend(b)) => b.backend.to_string(),
            _ => "frontend".to_string(),
        };
        self.frontend.reset(ResetCause::Hallucination);
        vec![
            PipelineEvent::Fault {
                t_ms,
                backend,
                message: e.to_string(),
            },
            PipelineEvent::AsrReset {
                t_ms,
                cause: ResetCause::Hallucination,
            },
        ]
    }

    fn collect(&mut self, records: Vec<ActionRecord>) -> Vec<PipelineEvent> {
        let mut out = Vec::with_capacity(records.len());
        for rec in records {
            let t = rec.t_ms;
            let follow = match &rec.action {
                Action::EndOfTurnDetected { .. } => {
                    self.frontend.reset(ResetCause::TurnTaking);
                    vec![PipelineEvent::AsrReset {
                        t_ms: t,
                        cause: ResetCause::TurnTaking,
                    }]
                }
                Action::AudioChunk { session, chunk, entry } => self.synthesize(t, *session, *chunk, entry),
                Action::BackendFault { backend, message } => {
                    self.frontend.reset(ResetCause::Hallucination);
                    vec![
                        PipelineEvent::Fault {
                            t_ms: t,
                            backend: backend.clone(),
                            message: message.clone(),
                        },
                        PipelineEvent::AsrReset {
                            t_ms: t,
                            cause: ResetCause::Hallucination,
                        },
                    ]
                }
                _ => Vec::new(),
            };
            let closing = match rec.action {
                Action::CancelGeneration { session: Some(s), .. }
                | Action::ChunkPlan { session: s, .. }
                | Action::PlaybackDone { session: s } => Some(s),
                Action::BackendFault { .. } => self
                    .engine
                    .turns()
                    .get(self.reported)
                    .filter(|bt| bt.failed)
                    .map(|bt| bt.session),
                _ => None,
            };
            out.push(PipelineEvent::Engine(rec));
            out.extend(follow);
            if let Some(s) = closing {
                out.extend(self.latency_reports(t, s));
            }
        }
        out
    }

    fn synthesize(&mut self, t: u64, session: u64, chunk: usize, entry: &ChunkEntry) -> Vec<PipelineEvent> {
        let Some(turn) = self.engine.turns().iter().find(|bt| bt.session == session) else {
            return Vec::new();
        };
        let units: Vec<UnitId> = turn
            .tokens
            .iter()
            .filter_map(|tok| match tok {
                Token::Unit(u) => Some(*u),
                _ => None,
            })
            .skip(entry.first_unit)
            .take(entry.n_units as usize)
            .collect();
        let id = self.next_audio_chunk;
        self.next_audio_chunk += 1;
        let unit_ms = self.engine.config().unit_ms;
        vec![match self.decoder.synthesize(id, &units, unit_ms) {
            Ok(out) => PipelineEvent::AudioRef {
                t_ms: t,
                session,
                chunk,
                n_units: entry.n_units,
                duration_ms: out.duration_ms,
                playback_start_ms: entry.playback_start_ms,
            },
            Err(err) => PipelineEvent::Fault {
                t_ms: t,
                backend: err.backend.to_string(),
                message: err.message,
            },
        }]
    }

    /// Reports every closed turn up to and including `session`.
    fn latency_reports(&mut self, t: u64, session: u64) -> Vec<PipelineEvent> {
        let mut out = Vec::new();
        while self.reported < self.engine.turns().len() {
            let turn = &self.engine.turns()[self.reported];
            if turn.session > session || !turn.is_closed() {
                break;
            }
            out.push(PipelineEvent::Latency(self.report(t, turn)));
            self.reported += 1;
        }
        out
    }

    fn report(&self, t: u64, turn: &BotTurn) -> LatencyReport {
        let mut spans = LatencyLedger::new();
        let decoder_first = match (turn.first_audio_ms(), first_unit_time(turn)) {
            (Some(audio), Some(unit)) => audio.saturating_sub(unit),
            _ => self.spec.decoder.processing_ms_per_chunk,
        };
        spans
            .record(Component::AsrInterleave, if turn.initiated { 0 } else { self.asr_delay_ms })
            .record(Component::LlmFirstToken, self.spec.generation.first_token_ms)
            .record(Component::DecoderFirstChunk, decoder_first)
            .record(Component::TurnWait, turn.turn_wait_ms().unwrap_or(0));
        LatencyReport {
            t_ms: t,
            session: turn.session,
            initiated: turn.initiated,
            interrupted: turn.interrupted,
            sync_bound_ms: spans.latency_bound(TurnMode::Synchronous).unwrap_or(0),
            async_bound_ms: spans.latency_bound(TurnMode::Asynchronous).unwrap_or(0),
            spans,
            first_token_ms: turn.first_token_latency_ms(),
            first_audio_ms: turn
                .first_audio_ms()
                .zip(turn.user_input_ms)
                .map(|(a, u)| a.saturating_sub(u)),
        }
    }
}

fn first_unit_time(turn: &BotTurn) -> Option<u64> {
    turn.tokens
        .iter()
        .zip(&turn.token_times_ms)
        .find(|(t, _)| t.is_unit())
        .map(|(_, &at)| at)
}

/// Feeds a scenario's input events into a pipeline. A trailing `end` event
/// stops the clock there; otherwise the session runs until only silence
/// deadlines remain.
pub fn run_scenario(sc: &Scenario) -> Result<(Pipeline, Vec<PipelineEvent>), PipelineError> {
    use crate::sim::ScenarioEvent;
    let mut p = Pipeline::from_scenario(sc)?;
    let mut out = Vec::new();
    for ev in &sc.events {
        let t = ev.t_ms;
        out.extend(match &ev.event {
            ScenarioEvent::UserAudio { chunk } => p.audio_chunk(t, *chunk),
            ScenarioEvent::UserText { text } => p.text_chunk(t, text),
            ScenarioEvent::UserTurnEnd => p.turn_end(t),
            ScenarioEvent::Reset => p.reset(t),
            ScenarioEvent::End => p.advance_to(t),
        });
    }
    if !matches!(sc.events.last().map(|e| &e.event), Some(ScenarioEvent::End)) {
        out.extend(p.settle());
    }
    Ok((p, out))
}
