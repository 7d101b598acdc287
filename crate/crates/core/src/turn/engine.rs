//! Discrete-event duplex engine.
//!
//! One ordered event queue per session. User input is applied before any
//! internal event scheduled for the same instant, so a barge-in cancels
//! generation before another token can be emitted.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use super::{check_end_of_turn, Action, EotCheck, EotDecision, Phase, SpeculativeSession, TurnState};
use crate::backend::LanguageModel;
use crate::config::SessionConfig;
use crate::decoder::{ChunkPlan, ChunkScheduler, DecoderProfile, StreamParams};
use crate::latency::TurnMode;
use crate::types::Token;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationProfile {
    pub first_token_ms: u64,
    pub tokens_per_second: u64,
    pub eot_check_ms: u64,
    pub max_tokens: usize,
}

impl Default for GenerationProfile {
    fn default() -> Self {
        GenerationProfile {
            first_token_ms: 400,
            tokens_per_second: 100,
            eot_check_ms: 100,
            max_tokens: 4096,
        }
    }
}

impl GenerationProfile {
    pub fn token_interval_ms(&self) -> u64 {
        (1000 / self.tokens_per_second.max(1)).max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub mode: TurnMode,
    pub eot_threshold: f64,
    pub turn_wait_cap_ms: u64,
    /// `None` disables silence-initiated turns.
    pub silence_initiate_ms: Option<u64>,
    pub unit_ms: u64,
    pub epsilon_ms: u64,
    pub decoder: DecoderProfile,
    pub generation: GenerationProfile,
    pub user_label: String,
    pub machine_label: String,
}

impl EngineConfig {
    pub fn from_session(cfg: &SessionConfig, mode: TurnMode) -> Self {
        EngineConfig {
            mode,
            eot_threshold: cfg.eot_threshold,
            turn_wait_cap_ms: cfg.turn_wait_cap_ms,
            silence_initiate_ms: Some(cfg.silence_initiate_ms),
            unit_ms: cfg.unit_ms(),
            epsilon_ms: cfg.epsilon_ms,
            decoder: DecoderProfile::default(),
            generation: GenerationProfile::default(),
            user_label: super::DEFAULT_USER.into(),
            machine_label: super::DEFAULT_MACHINE.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionRecord {
    pub t_ms: u64,
    #[serde(flatten)]
    pub action: Action,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BotTurn {
    pub session: u64,
    pub initiated: bool,
    /// Last user input before the turn signal.
    pub user_input_ms: Option<u64>,
    pub signal_ms: u64,
    pub first_token_ms: Option<u64>,
    pub tokens: Vec<Token>,
    /// Downstream emission time of each token.
    pub token_times_ms: Vec<u64>,
    pub finished: bool,
    pub interrupted: bool,
    pub failed: bool,
    pub plan: Option<ChunkPlan>,
    pub underruns: usize,
    /// No more audio will be planned for this turn.
    pub audio_closed: bool,
}

impl BotTurn {
    /// From the user's last input to the first token passed downstream.
    pub fn first_token_latency_ms(&self) -> Option<u64> {
        Some(self.first_token_ms? - self.user_input_ms?)
    }

    pub fn turn_wait_ms(&self) -> Option<u64> {
        Some(self.signal_ms - self.user_input_ms?)
    }

    pub fn first_audio_ms(&self) -> Option<u64> {
        self.plan.as_ref()?.entries.first().map(|e| e.playback_start_ms)
    }

    pub fn playback_end_ms(&self) -> Option<u64> {
        self.plan.as_ref()?.playback_end_ms()
    }

    /// Nothing about this turn will change any more.
    pub fn is_closed(&self) -> bool {
        self.failed || self.interrupted || (self.finished && self.audio_closed)
    }

    pub fn text(&self) -> String {
        self.tokens.iter().filter_map(Token::surface).collect::<Vec<_>>().join(" ")
    }
}

#[derive(Debug, Clone)]
enum Event {
    EotResult { context_len: usize, check: EotCheck },
    WaitCap { context_len: usize },
    Gen { session: u64 },
    Chunk { session: u64 },
    PlaybackDone { session: u64 },
    Silence { since: u64 },
}

impl Event {
    fn priority(&self) -> u8 {
        match self {
            Event::EotResult { .. } | Event::WaitCap { .. } => 1,
            Event::Gen { .. } => 2,
            Event::Chunk { .. } => 3,
            Event::PlaybackDone { .. } => 4,
            Event::Silence { .. } => 5,
        }
    }
}

#[derive(Debug, Clone)]
struct Scheduled {
    t_ms: u64,
    priority: u8,
    seq: u64,
    event: Event,
}

impl Scheduled {
    fn key(&self) -> (u64, u8, u64) {
        (self.t_ms, self.priority, self.seq)
    }
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}
impl Eq for Scheduled {}
impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key().cmp(&other.key())
    }
}

pub struct DuplexEngine<L> {
    cfg: EngineConfig,
    lm: L,
    state: TurnState,
    session: Option<SpeculativeSession>,
    queue: BinaryHeap<Reverse<Scheduled>>,
    seq: u64,
    now_ms: u64,
    next_session: u64,
    last_input_ms: Option<u64>,
    trace: Vec<ActionRecord>,
    turns: Vec<BotTurn>,
    /// Index into `turns` of the turn owned by the current confirmed session.
    open_turn: Option<usize>,
    chunker: Option<ChunkScheduler>,
}

impl<L: LanguageModel> DuplexEngine<L> {
    pub fn new(cfg: EngineConfig, lm: L, system_prompt: &str, now_ms: u64) -> Self {
        let state = TurnState::with_speakers(system_prompt, &cfg.user_label, &cfg.machine_label, now_ms);
        let mut engine = DuplexEngine {
            cfg,
            lm,
            state,
            session: None,
            queue: BinaryHeap::new(),
            seq: 0,
            now_ms,
            next_session: 1,
            last_input_ms: None,
            trace: Vec::new(),
            turns: Vec::new(),
            open_turn: None,
            chunker: None,
        };
        engine.arm_silence(now_ms);
        engine
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn now_ms(&self) -> u64 {
        self.now_ms
    }

    pub fn state(&self) -> &TurnState {
        &self.state
    }

    pub fn session(&self) -> Option<&SpeculativeSession> {
        self.session.as_ref()
    }

    pub fn trace(&self) -> &[ActionRecord] {
        &self.trace
    }

    pub fn turns(&self) -> &[BotTurn] {
        &self.turns
    }

    pub fn lm(&self) -> &L {
        &self.lm
    }

    pub fn lm_mut(&mut self) -> &mut L {
        &mut self.lm
    }

    /// Token output of every bot turn, in order.
    pub fn confirmed_output(&self) -> Vec<Vec<Token>> {
        self.turns.iter().map(|t| t.tokens.clone()).collect()
    }

    pub fn next_event_time(&self) -> Option<u64> {
        self.queue.peek().map(|Reverse(s)| s.t_ms)
    }

    /// Applies user input at `t_ms`, after every event scheduled strictly earlier.
    pub fn user_input(&mut self, t_ms: u64, tokens: &[Token]) -> Vec<ActionRecord> {
        let mark = self.trace.len();
        self.run_before(t_ms);
        self.now_ms = self.now_ms.max(t_ms);
        let t = self.now_ms;
        let acts = self.state.on_user_input(&mut self.session, tokens, t);
        if tokens.is_empty() {
            if self.state.phase() == Phase::Idle {
                self.arm_silence(t);
            }
            return self.trace[mark..].to_vec();
        }
        self.last_input_ms = Some(t);
        for a in acts {
            match a {
                Action::CancelGeneration { .. } => {
                    self.record(t, a);
                    self.close_turn(t, true);
                }
                Action::StartSpeculative { snapshot_len } => {
                    if self.cfg.mode == TurnMode::Asynchronous {
                        let id = self.alloc_session();
                        self.session = Some(SpeculativeSession::new(id, snapshot_len, t));
                        self.schedule(t + self.cfg.generation.first_token_ms, Event::Gen { session: id });
                        self.record(t, a);
                    }
                }
                Action::SpeculativeDiscarded { .. } if self.cfg.mode == TurnMode::Synchronous => {}
                other => self.record(t, other),
            }
        }
        let check = check_end_of_turn(&mut self.lm, self.state.context(), self.cfg.eot_threshold);
        let context_len = self.state.context().len();
        for a in self.state.begin_check() {
            self.record(t, a);
        }
        self.schedule(t + self.cfg.generation.eot_check_ms, Event::EotResult { context_len, check });
        self.schedule(t + self.cfg.turn_wait_cap_ms, Event::WaitCap { context_len });
        self.trace[mark..].to_vec()
    }

    /// Explicit end of the user's turn (e.g. typed input submitted).
    pub fn end_user_turn(&mut self, t_ms: u64) -> Vec<ActionRecord> {
        let mark = self.trace.len();
        self.run_before(t_ms);
        self.now_ms = self.now_ms.max(t_ms);
        if matches!(self.state.phase(), Phase::UserSpeaking | Phase::Checking) {
            self.take_turn(self.now_ms, false);
        }
        self.trace[mark..].to_vec()
    }

    /// Starts a bot turn now regardless of the silence counter.
    pub fn initiate(&mut self, t_ms: u64) -> Vec<ActionRecord> {
        let mark = self.trace.len();
        self.run_before(t_ms);
        self.now_ms = self.now_ms.max(t_ms);
        if self.state.phase() == Phase::Idle {
            let t = self.now_ms;
            let acts = self.state.on_silence_tick(t, 0);
            self.apply_initiate(t, acts);
        }
        self.trace[mark..].to_vec()
    }

    /// Processes every event at or before `t_ms`.
    pub fn advance_to(&mut self, t_ms: u64) -> Vec<ActionRecord> {
        let mark = self.trace.len();
        while let Some(Reverse(s)) = self.queue.peek() {
            if s.t_ms > t_ms {
                break;
            }
            let Reverse(s) = self.queue.pop().expect("peeked");
            self.now_ms = self.now_ms.max(s.t_ms);
            self.dispatch(s.t_ms, s.event);
        }
        self.now_ms = self.now_ms.max(t_ms);
        self.trace[mark..].to_vec()
    }

    /// Runs until nothing but silence deadlines remain.
    pub fn settle(&mut self) -> Vec<ActionRecord> {
        let mark = self.trace.len();
        while let Some(Reverse(s)) = self.queue.peek() {
            if matches!(s.event, Event::Silence { .. }) && self.queue.iter().all(|Reverse(x)| matches!(x.event, Event::Silence { .. })) {
                break;
            }
            let t = s.t_ms;
            self.advance_to(t);
        }
        self.trace[mark..].to_vec()
    }

    /// Drops the conversation back to the system prompt and cancels any output.
    pub fn reset(&mut self, t_ms: u64) -> Vec<ActionRecord> {
        let mark = self.trace.len();
        self.run_before(t_ms);
        self.now_ms = self.now_ms.max(t_ms);
        let t = self.now_ms;
        if let Some(s) = self.session.take() {
            self.record(
                t,
                Action::CancelGeneration {
                    session: Some(s.id),
                    emitted: s.emitted,
                },
            );
            self.close_turn(t, true);
        }
        self.queue.clear();
        self.last_input_ms = None;
        for a in self.state.reset_context(t) {
            self.record(t, a);
        }
        self.arm_silence(t);
        self.trace[mark..].to_vec()
    }

    fn run_before(&mut self, t_ms: u64) {
        if t_ms > 0 {
            self.advance_to(t_ms - 1);
        }
    }

    fn alloc_session(&mut self) -> u64 {
        let id = self.next_session;
        self.next_session += 1;
        id
    }

    fn schedule(&mut self, t_ms: u64, event: Event) {
        self.seq += 1;
        self.queue.push(Reverse(Scheduled {
            t_ms,
            priority: event.priority(),
            seq: self.seq,
            event,
        }));
    }

    fn record(&mut self, t_ms: u64, action: Action) {
        self.trace.push(ActionRecord { t_ms, action });
    }

    fn arm_silence(&mut self, since: u64) {
        if let Some(d) = self.cfg.silence_initiate_ms {
            self.schedule(since + d, Event::Silence { since });
        }
    }

    fn current(&self, session: u64) -> bool {
        self.session.as_ref().is_some_and(|s| s.id == session)
    }

    fn dispatch(&mut self, t: u64, event: Event) {
        match event {
            Event::EotResult { context_len, check } => {
                if context_len != self.state.context().len()
                    || !matches!(self.state.phase(), Phase::UserSpeaking | Phase::Checking)
                {
                    return;
                }
                self.record(
                    t,
                    Action::EotChecked {
                        probability: check.probability,
                        decision: check.decision,
                    },
                );
                if let Some(e) = check.error {
                    self.record(
                        t,
                        Action::BackendFault {
                            backend: e.backend.to_string(),
                            message: e.message,
                        },
                    );
                }
                match check.decision {
                    EotDecision::Complete => self.take_turn(t, false),
                    EotDecision::Continue => {
                        for a in self.state.keep_listening() {
                            self.record(t, a);
                        }
                    }
                }
            }
            Event::WaitCap { context_len } => {
                if context_len == self.state.context().len()
                    && matches!(self.state.phase(), Phase::UserSpeaking | Phase::Checking)
                {
                    self.take_turn(t, true);
                }
            }
            Event::Gen { session } => {
                if self.current(session) {
                    self.generate(t);
                }
            }
            Event::Chunk { session } => {
                if self.current(session) {
                    self.fire_chunk(t);
                }
            }
            Event::PlaybackDone { session } => {
                if self.current(session) {
                    self.session = None;
                    self.open_turn = None;
                    self.record(t, Action::PlaybackDone { session });
                    for a in self.state.become_idle(t) {
                        self.record(t, a);
                    }
                    self.arm_silence(t);
                }
            }
            Event::Silence { since } => {
                if self.state.silence_since_ms() == Some(since) {
                    if let Some(d) = self.cfg.silence_initiate_ms {
                        let acts = self.state.on_silence_tick(t, d);
                        self.apply_initiate(t, acts);
                    }
                }
            }
        }
    }

    fn apply_initiate(&mut self, t: u64, acts: Vec<Action>) {
        if acts.is_empty() {
            return;
        }
        for a in acts {
            self.record(t, a);
        }
        self.start_confirmed(t, true);
    }

    fn take_turn(&mut self, t: u64, forced: bool) {
        let wait_ms = self.last_input_ms.map_or(0, |i| t - i);
        self.record(t, Action::EndOfTurnDetected { forced, wait_ms });
        let spec = match self.session.take() {
            Some(s) if !s.confirmed && s.prompt_snapshot_len == self.state.context().len() => Some(s),
            Some(s) => {
                self.record(
                    t,
                    Action::SpeculativeDiscarded {
                        session: s.id,
                        generated: s.generated.len(),
                    },
                );
                None
            }
            None => None,
        };
        let Some(mut s) = spec else {
            self.start_confirmed(t, false);
            return;
        };
        let mut acts = Vec::new();
        let flushed = self
            .state
            .confirm_speculative(&mut s, &mut acts)
            .expect("snapshot checked above");
        for a in acts {
            self.record(t, a);
        }
        self.open_bot_turn(s.id, t, false);
        let id = s.id;
        let finished = s.finished;
        self.session = Some(s);
        for tok in flushed {
            self.emit_token(t, id, tok);
        }
        if finished {
            self.finish(t);
        }
    }

    fn start_confirmed(&mut self, t: u64, initiated: bool) {
        let id = self.alloc_session();
        let mut s = SpeculativeSession::new(id, self.state.context().len(), t);
        let mut acts = Vec::new();
        self.state
            .confirm_speculative(&mut s, &mut acts)
            .expect("fresh session matches context");
        for a in acts {
            self.record(t, a);
        }
        self.session = Some(s);
        self.open_bot_turn(id, t, initiated);
        self.schedule(t + self.cfg.generation.first_token_ms, Event::Gen { session: id });
    }

    fn open_bot_turn(&mut self, session: u64, t: u64, initiated: bool) {
        self.turns.push(BotTurn {
            session,
            initiated,
            user_input_ms: if initiated { None } else { self.last_input_ms },
            signal_ms: t,
            ..Default::default()
        });
        self.open_turn = Some(self.turns.len() - 1);
        let params = StreamParams::new(self.cfg.unit_ms, self.cfg.epsilon_ms, self.cfg.decoder.processing_ms_per_chunk);
        self.chunker = ChunkScheduler::new(params).ok();
    }

    fn emit_token(&mut self, t: u64, session: u64, token: Token) {
        if let Some(i) = self.open_turn {
            let turn = &mut self.turns[i];
            turn.first_token_ms.get_or_insert(t);
            turn.tokens.push(token.clone());
            turn.token_times_ms.push(t);
        }
        let unit = token.is_unit();
        self.record(t, Action::BotToken { session, token });
        if unit {
            let fire = self.chunker.as_mut().and_then(|c| c.push_unit(t).ok().flatten());
            if let Some(at) = fire {
                self.schedule(at, Event::Chunk { session });
            }
        }
    }

    fn generate(&mut self, t: u64) {
        let s = self.session.as_ref().expect("current session");
        let prompt_len = s.prompt_snapshot_len;
        let at_limit = s.generated.len() >= self.cfg.generation.max_tokens;
        let result = if at_limit {
            Ok(Token::EndOfTurn)
        } else {
            let generated = s.generated.clone();
            self.lm.next_token(&self.state.context()[..prompt_len], &generated)
        };
        let s = self.session.as_mut().expect("current session");
        match result {
            Err(e) => {
                let confirmed = s.confirmed;
                self.record(
                    t,
                    Action::BackendFault {
                        backend: e.backend.to_string(),
                        message: e.message,
                    },
                );
                if confirmed {
                    if let Some(i) = self.open_turn {
                        self.turns[i].failed = true;
                    }
                    self.close_turn(t, false);
                    self.session = None;
                    for a in self.state.become_idle(t) {
                        self.record(t, a);
                    }
                    self.arm_silence(t);
                } else {
                    self.session = None;
                }
            }
            Ok(Token::EndOfTurn) => {
                s.finished = true;
                if s.confirmed {
                    self.finish(t);
                }
            }
            Ok(tok) => {
                s.generated.push(tok.clone());
                s.generated_at_ms.push(t);
                let id = s.id;
                if s.confirmed {
                    s.emitted += 1;
                    self.state.append_bot_token(tok.clone());
                    self.emit_token(t, id, tok);
                }
                self.schedule(t + self.cfg.generation.token_interval_ms(), Event::Gen { session: id });
            }
        }
    }

    fn finish(&mut self, t: u64) {
        let id = self.session.as_ref().expect("current session").id;
        self.state.end_bot_turn();
        let n = self.open_turn.map_or(0, |i| self.turns[i].tokens.len());
        self.record(t, Action::BotTurnEnd { session: id, tokens: n });
        if let Some(i) = self.open_turn {
            self.turns[i].finished = true;
        }
        let fire = self.chunker.as_mut().and_then(|c| c.close(t));
        if let Some(at) = fire {
            self.schedule(at, Event::Chunk { session: id });
        }
        if self.chunker.as_ref().is_none_or(ChunkScheduler::is_done) {
            self.complete_audio(t);
        }
    }

    fn fire_chunk(&mut self, t: u64) {
        let id = self.session.as_ref().expect("current session").id;
        let Some(chunker) = self.chunker.as_mut() else { return };
        if chunker.next_fire_ms() != Some(t) {
            return;
        }
        let entry = chunker.fire(t);
        let next = chunker.next_fire_ms();
        let done = chunker.is_done();
        let (plan, underruns) = (chunker.outcome().plan.clone(), chunker.outcome().underruns.len());
        if let Some(entry) = entry {
            if let Some(i) = self.open_turn {
                self.turns[i].plan = Some(plan);
                self.turns[i].underruns = underruns;
            }
            let chunk = entry_index(&self.turns, self.open_turn);
            self.record(t, Action::AudioChunk { session: id, chunk, entry });
        }
        if let Some(at) = next {
            self.schedule(at, Event::Chunk { session: id });
        }
        if done {
            self.complete_audio(t);
        }
    }

    /// Closes the turn's audio stream and schedules the end of playback.
    fn complete_audio(&mut self, t: u64) {
        let id = self.session.as_ref().expect("current session").id;
        let end = self.seal_plan(t).unwrap_or(t);
        self.schedule(end.max(t), Event::PlaybackDone { session: id });
    }

    /// Drops the chunker and records the turn's final plan; returns the
    /// playback end if any audio was planned.
    fn seal_plan(&mut self, t: u64) -> Option<u64> {
        let chunker = self.chunker.take();
        let i = self.open_turn?;
        let turn = &mut self.turns[i];
        turn.audio_closed = true;
        let out = chunker?.into_outcome();
        if out.plan.is_empty() {
            return None;
        }
        let end = out.plan.playback_end_ms();
        let underruns = out.underruns.len();
        turn.underruns = underruns;
        turn.plan = Some(out.plan.clone());
        let session = turn.session;
        self.record(
            t,
            Action::ChunkPlan {
                session,
                plan: out.plan,
                underruns,
            },
        );
        end
    }

    fn close_turn(&mut self, t: u64, interrupted: bool) {
        if self.chunker.is_some() {
            self.seal_plan(t);
        }
        let Some(i) = self.open_turn.take() else { return };
        self.turns[i].interrupted = interrupted;
        self.turns[i].audio_closed = true;
    }
}

fn entry_index(turns: &[BotTurn], open: Option<usize>) -> usize {
    open.and_then(|i| turns[i].plan.as_ref()).map_or(0, |p| p.len().saturating_sub(1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::BackendError;

    /// Answers every turn with `n` numbered words; P(eot) fixed.
    struct Counting {
        n: usize,
        p: f64,
    }

    impl LanguageModel for Counting {
        fn end_of_turn_probability(&mut self, _: &[Token]) -> Result<f64, BackendError> {
            Ok(self.p)
        }
        fn next_token(&mut self, prompt: &[Token], generated: &[Token]) -> Result<Token, BackendError> {
            let turn = prompt.iter().filter(|t| **t == Token::Header("Machine".into())).count();
            Ok(if generated.len() < self.n {
                Token::text(format!("t{turn}w{}", generated.len()))
            } else {
                Token::EndOfTurn
            })
        }
    }

    fn cfg(mode: TurnMode) -> EngineConfig {
        let mut c = EngineConfig::from_session(&SessionConfig::default(), mode);
        c.silence_initiate_ms = None;
        c
    }

    fn run(mode: TurnMode) -> DuplexEngine<Counting> {
        let mut e = DuplexEngine::new(cfg(mode), Counting { n: 5, p: 0.9 }, "be brief", 0);
        e.user_input(100, &[Token::text("hello")]);
        e.settle();
        e
    }

    #[test]
    fn modes_agree_on_output() {
        let a = run(TurnMode::Asynchronous);
        let s = run(TurnMode::Synchronous);
        assert_eq!(a.confirmed_output(), s.confirmed_output());
        assert_eq!(a.turns()[0].tokens.len(), 5);
        // eot at 200; async first token at 500, sync at 600
        assert_eq!(a.turns()[0].first_token_latency_ms(), Some(400));
        assert_eq!(s.turns()[0].first_token_latency_ms(), Some(500));
        assert_eq!(a.state().phase(), Phase::Idle);
    }

    #[test]
    fn wait_cap_forces_turn() {
        let mut e = DuplexEngine::new(cfg(TurnMode::Asynchronous), Counting { n: 3, p: 0.1 }, "p", 0);
        e.user_input(0, &[Token::text("um")]);
        e.settle();
        let detected = e
            .trace()
            .iter()
            .find(|r| matches!(r.action, Action::EndOfTurnDetected { .. }))
            .unwrap();
        assert_eq!(detected.t_ms, 1000);
        assert_eq!(detected.action, Action::EndOfTurnDetected { forced: true, wait_ms: 1000 });
        // speculation finished long before the forced signal: flushed at once
        assert_eq!(e.turns()[0].first_token_ms, Some(1000));
    }

    #[test]
    fn barge_in_same_instant() {
        let mut e = DuplexEngine::new(cfg(TurnMode::Synchronous), Counting { n: 50, p: 0.9 }, "p", 0);
        e.user_input(0, &[Token::text("go")]);
        // generation: first token 500, then every 10 ms
        e.advance_to(520);
        let out = e.user_input(530, &[Token::text("stop")]);
        assert!(matches!(out[0].action, Action::CancelGeneration { session: Some(_), emitted: 3 }));
        assert!(out.iter().all(|r| !r.action.is_generation_output()));
        e.settle();
        assert!(e.turns()[0].interrupted);
        assert_eq!(e.turns()[0].tokens.len(), 3);
        // the cut turn stays in context without an end-of-turn token
        assert_eq!(e.state().speaker_sequence(), ["User", "Machine", "User", "Machine"]);
    }

    #[test]
    fn silence_starts_a_turn() {
        let mut c = cfg(TurnMode::Asynchronous);
        c.silence_initiate_ms = Some(4000);
        let mut e = DuplexEngine::new(c, Counting { n: 2, p: 0.9 }, "p", 0);
        e.advance_to(4000);
        assert!(e.trace().iter().any(|r| r.t_ms == 4000 && r.action == Action::BotInitiate { silence_ms: 4000 }));
        e.advance_to(4500);
        assert_eq!(e.turns()[0].tokens.len(), 2);
        assert!(e.turns()[0].initiated);
    }
}
