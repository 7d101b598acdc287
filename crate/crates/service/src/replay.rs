//! Headless replay of a scenario through a simulated-clock session.
//!
//! The scenario's input events become client messages, the session's
//! answers are collected, and the result is a trace file plus the verdicts
//! of the scenario's `expect` lines.

use std::collections::BTreeSet;

use serde_json::json;

use duplex_core::frontend::RESET_COMMAND;
use duplex_core::pipeline::PipelineError;
use duplex_core::sim::{ExpectCheck, Expectation, Scenario, ScenarioEvent};

use crate::session::{ClockMode, Session, SessionHandle};
use crate::trace::{Direction, TraceLine};
use crate::wire::{encode_message, Inbound, TextChunk, WireKind, WireMessage};

pub struct Replay {
    pub session: Session,
    pub trace: Vec<TraceLine>,
}

impl Replay {
    pub fn outbound(&self) -> Vec<WireMessage> {
        messages(&self.trace, Direction::Out)
    }
}

pub fn messages(trace: &[TraceLine], dir: Direction) -> Vec<WireMessage> {
    trace
        .iter()
        .filter(|l| l.dir == dir)
        .map(|l| l.decode().expect("trace holds encoded messages"))
        .collect()
}

fn inbound_for(event: &ScenarioEvent) -> Option<Inbound> {
    Some(match event {
        ScenarioEvent::UserText { text } if text == RESET_COMMAND => Inbound::Reset,
        ScenarioEvent::UserText { text } => Inbound::Text(TextChunk {
            text: text.clone(),
            last: false,
        }),
        ScenarioEvent::UserAudio { chunk } => Inbound::Audio(crate::wire::AudioChunk { chunk: *chunk }),
        ScenarioEvent::UserTurnEnd => Inbound::Text(TextChunk {
            text: String::new(),
            last: true,
        }),
        ScenarioEvent::Reset => Inbound::Reset,
        ScenarioEvent::End => return None,
    })
}

/// The lines a client sends for the scenario's input events; `end` events
/// have no wire form and are skipped.
pub fn client_lines(sc: &Scenario) -> Vec<String> {
    sc.events
        .iter()
        .filter_map(|ev| inbound_for(&ev.event).map(|i| (ev.t_ms, i)))
        .enumerate()
        .map(|(k, (t, i))| encode_message(&i.to_message(t).with_seq(k as u64 + 1)).expect("inbound encodes"))
        .collect()
}

pub fn replay(sc: &Scenario) -> Result<Replay, PipelineError> {
    let handle = SessionHandle {
        id: 1,
        config: sc.config.clone(),
        mode: ClockMode::Sim,
    };
    let mut session = Session::new(handle, sc)?;
    let mut trace = Vec::new();
    let push_out = |trace: &mut Vec<TraceLine>, msgs: Vec<WireMessage>| {
        for m in msgs {
            trace.push(TraceLine::message(Direction::Out, &m).expect("outbound encodes"));
        }
    };
    let mut seq = 0;
    for ev in &sc.events {
        match inbound_for(&ev.event) {
            Some(inbound) => {
                seq += 1;
                let line = encode_message(&inbound.to_message(ev.t_ms).with_seq(seq)).expect("inbound encodes");
                let out = session.catch_up(&line, ev.t_ms);
                push_out(&mut trace, out);
                trace.push(TraceLine::new(Direction::In, ev.t_ms, line.clone()));
                let step = session.receive(&line, ev.t_ms);
                push_out(&mut trace, step.out);
            }
            None => {
                let out = session.advance_to(ev.t_ms);
                push_out(&mut trace, out);
            }
        }
    }
    if !matches!(sc.events.last().map(|e| &e.event), Some(ScenarioEvent::End)) {
        let out = session.settle();
        push_out(&mut trace, out);
    }
    Ok(Replay { session, trace })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckResult {
    pub line: usize,
    pub description: String,
    pub passed: bool,
    pub detail: String,
}

/// Message-order invariant: once an interruption is acknowledged, nothing
/// generated by the cancelled session follows, and nothing was generated
/// at the same instant before the acknowledgement.
pub fn interrupt_violations(out: &[WireMessage]) -> Vec<String> {
    let mut problems = Vec::new();
    let mut cancelled = BTreeSet::new();
    for (i, m) in out.iter().enumerate() {
        let session = m.payload.get("session").and_then(|s| s.as_u64());
        match m.kind {
            WireKind::InterruptAck => {
                if let Some(s) = session {
                    cancelled.insert(s);
                }
                let earlier = out[..i]
                    .iter()
                    .rev()
                    .take_while(|p| p.t_ms == m.t_ms)
                    .any(|p| p.kind == WireKind::BotToken);
                if earlier {
                    problems.push(format!("bot_token at {} ms before the interrupt_ack of that instant", m.t_ms));
                }
            }
            WireKind::BotToken | WireKind::BotText if session.is_some_and(|s| cancelled.contains(&s)) => {
                problems.push(format!(
                    "{} of cancelled session {} at {} ms (seq {})",
                    m.kind,
                    session.unwrap(),
                    m.t_ms,
                    m.seq
                ));
            }
            _ => {}
        }
    }
    problems
}

fn is_subsequence(kinds: &[&str], wanted: &[String]) -> bool {
    let mut it = kinds.iter();
    wanted.iter().all(|w| it.any(|k| k == w))
}

pub fn check_expectations(replay: &Replay, expectations: &[Expectation]) -> Vec<CheckResult> {
    let out = replay.outbound();
    let kinds: Vec<&str> = out.iter().map(|m| m.kind.name()).collect();
    expectations
        .iter()
        .map(|e| {
            let (description, passed, detail) = match &e.check {
                ExpectCheck::Sequence(seq) => (
                    format!("sequence {}", seq.join(" > ")),
                    is_subsequence(&kinds, seq),
                    String::new(),
                ),
                ExpectCheck::Count { of, n } => {
                    let got = kinds.iter().filter(|k| *k == of).count();
                    (format!("{n} x {of}"), got == *n, format!("found {got}"))
                }
                ExpectCheck::BotText { turn, text } => {
                    let got = replay.session.pipeline().engine().turns().get(*turn).map(|t| t.text());
                    (
                        format!("bot turn {turn} says {text:?}"),
                        got.as_deref() == Some(text.as_str()),
                        format!("got {got:?}"),
                    )
                }
                ExpectCheck::InterruptClean(want) => {
                    let problems = interrupt_violations(&out);
                    (
                        "interruptions are clean".to_string(),
                        problems.is_empty() == *want,
                        problems.join("; "),
                    )
                }
                ExpectCheck::Absent(kind) => (
                    format!("no {kind}"),
                    !kinds.contains(&kind.as_str()),
                    String::new(),
                ),
            };
            CheckResult {
                line: e.line,
                description,
                passed,
                detail,
            }
        })
        .collect()
}

/// Summary line used by `replay --assert`.
pub fn verdict_json(results: &[CheckResult]) -> serde_json::Value {
    json!({
        "checks": results.len(),
        "failed": results.iter().filter(|r| !r.passed).count(),
    })
}
