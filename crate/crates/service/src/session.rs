//! One client session without any I/O: wire lines in, wire messages out.
//!
//! On a simulated clock the inbound `t_ms` drives time. On a live clock the
//! caller passes wall-clock milliseconds since the session opened and wakes
//! the session at [`Session::next_deadline`].

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use duplex_core::pipeline::{Pipeline, PipelineError, PipelineEvent};
use duplex_core::sim::Scenario;
use duplex_core::turn::Action;
use duplex_core::SessionConfig;

use crate::wire::{decode_message, Feedback, Inbound, SeqCheck, SeqCounter, WireError, WireKind, WireMessage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ClockMode {
    /// Time comes from the client's timestamps.
    Sim,
    /// Time is the server's wall clock.
    Live,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionHandle {
    pub id: u64,
    pub config: SessionConfig,
    pub mode: ClockMode,
}

/// A vote as stored in the votes log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteRecord {
    pub session: u64,
    pub t_ms: u64,
    #[serde(flatten)]
    pub feedback: Feedback,
}

#[derive(Debug, Default)]
pub struct Step {
    pub out: Vec<WireMessage>,
    pub votes: Vec<VoteRecord>,
    /// The session must end after `out` is delivered.
    pub close: bool,
}

pub struct Session {
    handle: SessionHandle,
    pipeline: Pipeline,
    inbound: SeqCheck,
    outbound: SeqCounter,
    closed: bool,
}

impl Session {
    /// Wires a session to the scripted backends of `scenario`, using the
    /// handle's configuration.
    pub fn new(handle: SessionHandle, scenario: &Scenario) -> Result<Self, PipelineError> {
        let sc = Scenario {
            config: handle.config.clone(),
            ..scenario.clone()
        };
        Ok(Session {
            pipeline: Pipeline::from_scenario(&sc)?,
            handle,
            inbound: SeqCheck::default(),
            outbound: SeqCounter::default(),
            closed: false,
        })
    }

    pub fn handle(&self) -> &SessionHandle {
        &self.handle
    }

    pub fn pipeline(&self) -> &Pipeline {
        &self.pipeline
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn next_deadline(&self) -> Option<u64> {
        self.pipeline.next_event_time()
    }

    /// Handles one inbound line received at `now_ms` (ignored on a simulated clock).
    pub fn receive(&mut self, line: &str, now_ms: u64) -> Step {
        let mut step = Step::default();
        if self.closed {
            return step;
        }
        let msg = match decode_message(line) {
            Ok(m) => m,
            Err(e) => {
                let t = self.pipeline.now_ms();
                step.out.push(self.error(t, &e, Some(line)));
                return step;
            }
        };
        let t = match self.handle.mode {
            ClockMode::Sim => msg.t_ms.max(self.pipeline.now_ms()),
            ClockMode::Live => now_ms.max(self.pipeline.now_ms()),
        };
        if let Err(e) = self.inbound.accept(msg.seq) {
            step.out.push(self.error(t, &e, None));
            step.close = true;
            self.closed = true;
            return step;
        }
        let inbound = match Inbound::parse(&msg) {
            Ok(i) => i,
            Err(e) => {
                step.out.push(self.error(t, &e, None));
                return step;
            }
        };
        let events = match inbound {
            Inbound::Text(chunk) => {
                let mut ev = if chunk.text.is_empty() {
                    self.pipeline.advance_to(t)
                } else {
                    self.pipeline.text_chunk(t, &chunk.text)
                };
                if chunk.last {
                    ev.extend(self.pipeline.turn_end(t));
                }
                ev
            }
            Inbound::Audio(a) => self.pipeline.audio_chunk(t, a.chunk),
            Inbound::Reset => self.pipeline.reset(t),
            Inbound::Query => {
                let mut ev = self.pipeline.advance_to(t);
                ev.push(self.pipeline.state_event(t));
                ev
            }
            Inbound::Feedback(fb) => {
                let ev = self.pipeline.advance_to(t);
                step.out = self.map(ev);
                if self.pipeline.engine().turns().iter().any(|bt| bt.session == fb.turn) {
                    step.votes.push(VoteRecord {
                        session: self.handle.id,
                        t_ms: t,
                        feedback: fb,
                    });
                } else {
                    let e = WireError::Payload {
                        kind: WireKind::Feedback,
                        message: format!("no bot turn {}", fb.turn),
                    };
                    step.out.push(self.error(t, &e, None));
                }
                return step;
            }
        };
        step.out = self.map(events);
        step
    }

    /// Messages due strictly before `line` takes effect. Sending these before
    /// recording the inbound line keeps a trace in time order; `receive`
    /// would produce them anyway.
    pub fn catch_up(&mut self, line: &str, now_ms: u64) -> Vec<WireMessage> {
        if self.closed {
            return Vec::new();
        }
        let t = match (self.handle.mode, decode_message(line)) {
            (ClockMode::Sim, Ok(m)) => m.t_ms,
            (ClockMode::Live, _) => now_ms,
            (ClockMode::Sim, Err(_)) => return Vec::new(),
        };
        if t <= self.pipeline.now_ms() {
            return Vec::new();
        }
        self.advance_to(t - 1)
    }

    /// Runs the clock forward to `t_ms`.
    pub fn advance_to(&mut self, t_ms: u64) -> Vec<WireMessage> {
        let events = self.pipeline.advance_to(t_ms);
        self.map(events)
    }

    /// Runs until only silence deadlines remain, e.g. when the client hangs up.
    pub fn settle(&mut self) -> Vec<WireMessage> {
        let events = self.pipeline.settle();
        self.map(events)
    }

    fn error(&mut self, t_ms: u64, e: &WireError, raw: Option<&str>) -> WireMessage {
        let mut body = json!({"code": e.code(), "message": e.to_string()});
        if let WireError::UnknownKind(k) = e {
            body["kind"] = Value::String(k.clone());
        }
        if let Some(raw) = raw {
            body["line"] = Value::String(raw.trim_end().chars().take(200).collect());
        }
        self.outbound.stamp(WireMessage::new(WireKind::Error, t_ms, body))
    }

    fn map(&mut self, events: Vec<PipelineEvent>) -> Vec<WireMessage> {
        let mut out = Vec::new();
        for ev in events {
            if let Some(msg) = self.to_wire(ev) {
                out.push(self.outbound.stamp(msg));
            }
        }
        out
    }

    fn to_wire(&self, ev: PipelineEvent) -> Option<WireMessage> {
        use WireKind as K;
        let msg = match ev {
            PipelineEvent::Engine(rec) => {
                let t = rec.t_ms;
                match rec.action {
                    Action::EndOfTurnDetected { forced, wait_ms } => {
                        WireMessage::new(K::EotDetected, t, json!({"forced": forced, "wait_ms": wait_ms}))
                    }
                    Action::CancelGeneration { session, emitted } => {
                        WireMessage::new(K::InterruptAck, t, json!({"session": session, "emitted": emitted}))
                    }
                    Action::BotToken { session, token } => {
                        WireMessage::new(K::BotToken, t, json!({"session": session, "token": token.notation()}))
                    }
                    Action::BotTurnEnd { session, tokens } => {
                        let text = self
                            .pipeline
                            .engine()
                            .turns()
                            .iter()
                            .find(|bt| bt.session == session)
                            .map(|bt| bt.text())
                            .unwrap_or_default();
                        WireMessage::new(K::BotText, t, json!({"session": session, "text": text, "tokens": tokens}))
                    }
                    Action::BotInitiate { silence_ms } => {
                        WireMessage::new(K::BotInitiate, t, json!({"silence_ms": silence_ms}))
                    }
                    Action::PhaseChange { from, to } => {
                        WireMessage::new(K::StateUpdate, t, json!({"phase": to, "from": from}))
                    }
                    Action::ChunkPlan { session, plan, underruns } => WireMessage::new(
                        K::ChunkPlan,
                        t,
                        json!({"session": session, "underruns": underruns, "plan": plan}),
                    ),
                    // faults surface through the pipeline's own fault event
                    _ => return None,
                }
            }
            PipelineEvent::AudioRef {
                t_ms,
                session,
                chunk,
                n_units,
                duration_ms,
                playback_start_ms,
            } => WireMessage::new(
                K::BotAudioRef,
                t_ms,
                json!({
                    "session": session,
                    "chunk": chunk,
                    "n_units": n_units,
                    "duration_ms": duration_ms,
                    "playback_start_ms": playback_start_ms,
                }),
            ),
            PipelineEvent::Latency(r) => WireMessage::new(K::LatencyReport, r.t_ms, &r),
            PipelineEvent::Fault { t_ms, backend, message } => WireMessage::new(
                K::Error,
                t_ms,
                json!({"code": "backend", "backend": backend, "message": message}),
            ),
            PipelineEvent::AsrReset { t_ms, cause } => WireMessage::new(K::StateUpdate, t_ms, json!({"asr_reset": cause})),
            PipelineEvent::State {
                t_ms,
                phase,
                asr_buffered_ms,
                unit_chunks,
                context_len,
            } => WireMessage::new(
                K::StateUpdate,
                t_ms,
                json!({
                    "phase": phase,
                    "asr_buffered_ms": asr_buffered_ms,
                    "unit_chunks": unit_chunks,
                    "context_len": context_len,
                }),
            ),
            PipelineEvent::Transcript { t_ms, removed, .. } if !removed.is_empty() => WireMessage::new(
                K::StateUpdate,
                t_ms,
                json!({"hallucination_removed": duplex_core::corpus::join_surfaces(removed.iter().map(|w| w.surface.as_str()))}),
            ),
            PipelineEvent::Transcript { .. } => return None,
        };
        Some(msg)
    }
}
