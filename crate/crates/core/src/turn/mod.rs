//! Duplex turn-taking: end-of-turn checking, barge-in, silence-initiated
//! turns and speculative generation.
//!
//! [`TurnState`] holds the pure state transitions; [`engine::DuplexEngine`]
//! drives them from a simulated event queue.

pub mod engine;
pub mod interruption;
pub mod prompt;

pub use engine::{BotTurn, DuplexEngine, EngineConfig, GenerationProfile};
pub use interruption::{decode_interruption, encode_interruption, DecodedInterruption, InterruptionError};
pub use prompt::{format_system_prompt, PromptError};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::LanguageModel;
use crate::decoder::{ChunkEntry, ChunkPlan};
use crate::error::BackendError;
use crate::types::{text_to_tokens, Token};

pub const SYSTEM_SPEAKER: &str = "system";
pub const DEFAULT_USER: &str = "User";
pub const DEFAULT_MACHINE: &str = "Machine";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Idle,
    UserSpeaking,
    Checking,
    BotGenerating,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EotDecision {
    Complete,
    Continue,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EotCheck {
    pub decision: EotDecision,
    pub probability: Option<f64>,
    pub error: Option<BackendError>,
}

/// Complete iff P(end of turn) ≥ threshold. A failing backend keeps listening.
pub fn check_end_of_turn<L: LanguageModel + ?Sized>(lm: &mut L, context: &[Token], threshold: f64) -> EotCheck {
    assert!(!context.is_empty(), "end-of-turn check needs a non-empty context");
    match lm.end_of_turn_probability(context) {
        Ok(p) => EotCheck {
            decision: if p >= threshold {
                EotDecision::Complete
            } else {
                EotDecision::Continue
            },
            probability: Some(p),
            error: None,
        },
        Err(e) => EotCheck {
            decision: EotDecision::Continue,
            probability: None,
            error: Some(e),
        },
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpeculativeSession {
    pub id: u64,
    pub prompt_snapshot_len: usize,
    pub generated: Vec<Token>,
    /// Simulated time each generated token came out of the model.
    pub generated_at_ms: Vec<u64>,
    pub confirmed: bool,
    pub started_at_ms: u64,
    /// The model produced its end-of-turn token.
    pub finished: bool,
    /// Tokens already passed downstream.
    pub emitted: usize,
}

impl SpeculativeSession {
    pub fn new(id: u64, prompt_snapshot_len: usize, started_at_ms: u64) -> Self {
        SpeculativeSession {
            id,
            prompt_snapshot_len,
            generated: Vec::new(),
            generated_at_ms: Vec::new(),
            confirmed: false,
            started_at_ms,
            finished: false,
            emitted: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Action {
    CancelGeneration { session: Option<u64>, emitted: usize },
    StartSpeculative { snapshot_len: usize },
    SpeculativeDiscarded { session: u64, generated: usize },
    EotChecked { probability: Option<f64>, decision: EotDecision },
    EndOfTurnDetected { forced: bool, wait_ms: u64 },
    Confirm { session: u64, flushed: usize },
    BotToken { session: u64, token: Token },
    BotTurnEnd { session: u64, tokens: usize },
    BotInitiate { silence_ms: u64 },
    PhaseChange { from: Phase, to: Phase },
    /// One decoder chunk sent for synthesis.
    AudioChunk { session: u64, chunk: usize, entry: ChunkEntry },
    /// Final chunk plan of a turn, complete or cut by an interruption.
    ChunkPlan { session: u64, plan: ChunkPlan, underruns: usize },
    PlaybackDone { session: u64 },
    BackendFault { backend: String, message: String },
}

impl Action {
    pub fn name(&self) -> &'static str {
        match self {
            Action::CancelGeneration { .. } => "cancel_generation",
            Action::StartSpeculative { .. } => "start_speculative",
            Action::SpeculativeDiscarded { .. } => "speculative_discarded",
            Action::EotChecked { .. } => "eot_checked",
            Action::EndOfTurnDetected { .. } => "end_of_turn_detected",
            Action::Confirm { .. } => "confirm",
            Action::BotToken { .. } => "bot_token",
            Action::BotTurnEnd { .. } => "bot_turn_end",
            Action::BotInitiate { .. } => "bot_initiate",
            Action::PhaseChange { .. } => "phase_change",
            Action::AudioChunk { .. } => "audio_chunk",
            Action::ChunkPlan { .. } => "chunk_plan",
            Action::PlaybackDone { .. } => "playback_done",
            Action::BackendFault { .. } => "backend_fault",
        }
    }

    pub fn is_generation_output(&self) -> bool {
        matches!(self, Action::BotToken { .. } | Action::Confirm { .. } | Action::BotTurnEnd { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TurnError {
    #[error("speculative session {session} was started on a context of {snapshot} tokens, context now has {current}")]
    SnapshotMismatch {
        session: u64,
        snapshot: usize,
        current: usize,
    },
    #[error("speculative session {0} is already confirmed")]
    AlreadyConfirmed(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterruptionPoint {
    pub at_ms: u64,
    pub context_len: usize,
    pub emitted: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnState {
    phase: Phase,
    silence_since_ms: Option<u64>,
    context: Vec<Token>,
    system_len: usize,
    user: String,
    machine: String,
    interruptions: Vec<InterruptionPoint>,
}

impl TurnState {
    pub fn new(system_prompt: &str, now_ms: u64) -> Self {
        Self::with_speakers(system_prompt, DEFAULT_USER, DEFAULT_MACHINE, now_ms)
    }

    pub fn with_speakers(system_prompt: &str, user: &str, machine: &str, now_ms: u64) -> Self {
        let mut context = vec![Token::Header(SYSTEM_SPEAKER.into())];
        context.extend(text_to_tokens(system_prompt));
        TurnState {
            phase: Phase::Idle,
            silence_since_ms: Some(now_ms),
            system_len: context.len(),
            context,
            user: user.into(),
            machine: machine.into(),
            interruptions: Vec::new(),
        }
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn silence_since_ms(&self) -> Option<u64> {
        self.silence_since_ms
    }

    pub fn context(&self) -> &[Token] {
        &self.context
    }

    pub fn system_len(&self) -> usize {
        self.system_len
    }

    pub fn user_label(&self) -> &str {
        &self.user
    }

    pub fn machine_label(&self) -> &str {
        &self.machine
    }

    pub fn interruptions(&self) -> &[InterruptionPoint] {
        &self.interruptions
    }

    pub fn last_speaker(&self) -> Option<&str> {
        self.context.iter().rev().find_map(|t| match t {
            Token::Header(s) => Some(s.as_str()),
            _ => None,
        })
    }

    fn set_phase(&mut self, to: Phase, actions: &mut Vec<Action>) {
        if self.phase != to {
            actions.push(Action::PhaseChange { from: self.phase, to });
            self.phase = to;
        }
        self.silence_since_ms = None;
    }

    fn open_turn(&mut self, speaker: &str) {
        if self.last_speaker() != Some(speaker) {
            self.context.push(Token::Header(speaker.to_string()));
        }
    }

    /// User input always wins: cancels any bot output, invalidates any
    /// unconfirmed speculation and restarts it on the extended context.
    pub fn on_user_input(
        &mut self,
        session: &mut Option<SpeculativeSession>,
        tokens: &[Token],
        now_ms: u64,
    ) -> Vec<Action> {
        let mut actions = Vec::new();
        if tokens.is_empty() {
            if self.phase == Phase::Idle {
                self.silence_since_ms = Some(now_ms);
            }
            return actions;
        }
        if self.phase == Phase::BotGenerating {
            let emitted = session.as_ref().map_or(0, |s| s.emitted);
            actions.push(Action::CancelGeneration {
                session: session.as_ref().map(|s| s.id),
                emitted,
            });
            self.interruptions.push(InterruptionPoint {
                at_ms: now_ms,
                context_len: self.context.len(),
                emitted,
            });
            *session = None;
        }
        if let Some(s) = session.take() {
            actions.push(Action::SpeculativeDiscarded {
                session: s.id,
                generated: s.generated.len(),
            });
        }
        let user = self.user.clone();
        self.open_turn(&user);
        self.context.extend_from_slice(tokens);
        self.set_phase(Phase::UserSpeaking, &mut actions);
        actions.push(Action::StartSpeculative {
            snapshot_len: self.context.len(),
        });
        actions
    }

    pub fn on_silence_tick(&mut self, now_ms: u64, silence_initiate_ms: u64) -> Vec<Action> {
        let mut actions = Vec::new();
        if let (Phase::Idle, Some(since)) = (self.phase, self.silence_since_ms) {
            let silence = now_ms.saturating_sub(since);
            if silence >= silence_initiate_ms {
                actions.push(Action::BotInitiate { silence_ms: silence });
                // an empty user turn keeps speaker headers alternating
                if self.last_speaker() != Some(self.user.as_str()) {
                    self.context.push(Token::Header(self.user.clone()));
                }
                self.set_phase(Phase::BotGenerating, &mut actions);
            }
        }
        actions
    }

    pub fn begin_check(&mut self) -> Vec<Action> {
        let mut actions = Vec::new();
        if self.phase == Phase::UserSpeaking {
            self.set_phase(Phase::Checking, &mut actions);
        }
        actions
    }

    pub fn keep_listening(&mut self) -> Vec<Action> {
        let mut actions = Vec::new();
        if self.phase == Phase::Checking {
            self.set_phase(Phase::UserSpeaking, &mut actions);
        }
        actions
    }

    /// Accepts a speculative session once the turn signal fired. Returns the
    /// tokens it already generated, now part of the context.
    pub fn confirm_speculative(
        &mut self,
        session: &mut SpeculativeSession,
        actions: &mut Vec<Action>,
    ) -> Result<Vec<Token>, TurnError> {
        if session.confirmed {
            return Err(TurnError::AlreadyConfirmed(session.id));
        }
        if session.prompt_snapshot_len != self.context.len() {
            return Err(TurnError::SnapshotMismatch {
                session: session.id,
                snapshot: session.prompt_snapshot_len,
                current: self.context.len(),
            });
        }
        session.confirmed = true;
        // the user's turn is over: close it the way every finished turn is closed
        if self.last_speaker() == Some(self.user.as_str()) {
            self.context.push(Token::EndOfTurn);
        }
        let machine = self.machine.clone();
        self.context.push(Token::Header(machine));
        self.context.extend_from_slice(&session.generated);
        session.emitted = session.generated.len();
        self.set_phase(Phase::BotGenerating, actions);
        actions.push(Action::Confirm {
            session: session.id,
            flushed: session.generated.len(),
        });
        Ok(session.generated.clone())
    }

    pub fn append_bot_token(&mut self, token: Token) {
        debug_assert_eq!(self.phase, Phase::BotGenerating);
        self.context.push(token);
    }

    pub fn end_bot_turn(&mut self) {
        self.context.push(Token::EndOfTurn);
    }

    /// Back to listening after the bot finished (or failed); restarts the silence counter.
    pub fn become_idle(&mut self, now_ms: u64) -> Vec<Action> {
        let mut actions = Vec::new();
        self.set_phase(Phase::Idle, &mut actions);
        self.silence_since_ms = Some(now_ms);
        actions
    }

    /// Drops the conversation back to the system prompt.
    pub fn reset_context(&mut self, now_ms: u64) -> Vec<Action> {
        self.context.truncate(self.system_len);
        self.become_idle(now_ms)
    }

    /// Speaker of every header after the system prompt, in order.
    pub fn speaker_sequence(&self) -> Vec<&str> {
        speaker_sequence(&self.context[self.system_len..])
    }
}

pub fn speaker_sequence(tokens: &[Token]) -> Vec<&str> {
    tokens
        .iter()
        .filter_map(|t| match t {
            Token::Header(s) => Some(s.as_str()),
            _ => None,
        })
        .collect()
}
