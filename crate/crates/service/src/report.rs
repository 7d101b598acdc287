//! Summaries of recorded traces: per-turn latency and turn-taking counts.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use duplex_core::latency::Component;
use duplex_core::pipeline::LatencyReport;

use crate::trace::{Direction, TraceLine};
use crate::wire::{Inbound, WireError, WireKind};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TurnRow {
    pub session: u64,
    pub end_ms: u64,
    pub initiated: bool,
    pub interrupted: bool,
    pub tokens: usize,
    pub audio_chunks: usize,
    pub underruns: u64,
    pub first_token_ms: Option<u64>,
    pub first_audio_ms: Option<u64>,
    pub sync_bound_ms: u64,
    pub async_bound_ms: u64,
    pub spans: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stats {
    pub n: usize,
    pub mean: f64,
    pub p50: u64,
    pub p90: u64,
    pub max: u64,
}

impl Stats {
    pub fn of(values: impl IntoIterator<Item = u64>) -> Option<Stats> {
        let mut v: Vec<u64> = values.into_iter().collect();
        if v.is_empty() {
            return None;
        }
        v.sort_unstable();
        let pick = |q: f64| v[((q * v.len() as f64).ceil() as usize).clamp(1, v.len()) - 1];
        Some(Stats {
            n: v.len(),
            mean: v.iter().sum::<u64>() as f64 / v.len() as f64,
            p50: pick(0.5),
            p90: pick(0.9),
            max: *v.last().unwrap(),
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TraceReport {
    pub inbound: usize,
    pub outbound: usize,
    pub duration_ms: u64,
    pub turns: Vec<TurnRow>,
    pub user_turns: usize,
    pub errors: BTreeMap<String, usize>,
    pub votes_up: usize,
    pub votes_down: usize,
}

impl TraceReport {
    pub fn from_trace(lines: &[TraceLine]) -> Result<TraceReport, WireError> {
        let mut r = TraceReport::default();
        let mut tokens: BTreeMap<u64, usize> = BTreeMap::new();
        let mut chunks: BTreeMap<u64, usize> = BTreeMap::new();
        let mut underruns: BTreeMap<u64, u64> = BTreeMap::new();
        for line in lines {
            let msg = line.decode()?;
            r.duration_ms = r.duration_ms.max(line.t_ms);
            if line.dir == Direction::In {
                r.inbound += 1;
                if let Ok(Inbound::Feedback(f)) = Inbound::parse(&msg) {
                    match f.vote {
                        crate::wire::Vote::Up => r.votes_up += 1,
                        crate::wire::Vote::Down => r.votes_down += 1,
                    }
                }
                continue;
            }
            r.outbound += 1;
            let session = msg.payload.get("session").and_then(|s| s.as_u64());
            match msg.kind {
                WireKind::EotDetected => r.user_turns += 1,
                WireKind::BotToken => *tokens.entry(session.unwrap_or(0)).or_default() += 1,
                WireKind::BotAudioRef => *chunks.entry(session.unwrap_or(0)).or_default() += 1,
                WireKind::ChunkPlan => {
                    let n = msg.payload.get("underruns").and_then(|u| u.as_u64()).unwrap_or(0);
                    *underruns.entry(session.unwrap_or(0)).or_default() += n;
                }
                WireKind::Error => {
                    let code = msg.payload.get("code").and_then(|c| c.as_str()).unwrap_or("unknown");
                    *r.errors.entry(code.to_string()).or_default() += 1;
                }
                WireKind::LatencyReport => {
                    let rep: LatencyReport =
                        serde_json::from_value(msg.payload.clone()).map_err(|e| WireError::Payload {
                            kind: msg.kind,
                            message: e.to_string(),
                        })?;
                    r.turns.push(TurnRow {
                        session: rep.session,
                        end_ms: rep.t_ms,
                        initiated: rep.initiated,
                        interrupted: rep.interrupted,
                        tokens: 0,
                        audio_chunks: 0,
                        underruns: 0,
                        first_token_ms: rep.first_token_ms,
                        first_audio_ms: rep.first_audio_ms,
                        sync_bound_ms: rep.sync_bound_ms,
                        async_bound_ms: rep.async_bound_ms,
                        spans: rep.spans.spans().map(|(c, ms)| (c.name().to_string(), ms)).collect(),
                    });
                }
                _ => {}
            }
        }
        for row in &mut r.turns {
            row.tokens = tokens.get(&row.session).copied().unwrap_or(0);
            row.audio_chunks = chunks.get(&row.session).copied().unwrap_or(0);
            row.underruns = underruns.get(&row.session).copied().unwrap_or(0);
        }
        Ok(r)
    }

    pub fn first_token(&self) -> Option<Stats> {
        Stats::of(self.turns.iter().filter_map(|t| t.first_token_ms))
    }

    pub fn first_audio(&self) -> Option<Stats> {
        Stats::of(self.turns.iter().filter_map(|t| t.first_audio_ms))
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "messages: {} in, {} out over {} ms; user turns {}, bot turns {} ({} interrupted, {} initiated)",
            self.inbound,
            self.outbound,
            self.duration_ms,
            self.user_turns,
            self.turns.len(),
            self.turns.iter().filter(|t| t.interrupted).count(),
            self.turns.iter().filter(|t| t.initiated).count(),
        );
        let _ = writeln!(
            s,
            "\n{:>7} {:>8} {:>6} {:>6} {:>8} {:>9} {:>9} {:>9} {:>9}  flags",
            "session", "end_ms", "tokens", "chunks", "underrun", "first_tok", "first_aud", "sync_bnd", "async_bnd"
        );
        let opt = |v: Option<u64>| v.map_or("-".to_string(), |v| v.to_string());
        for t in &self.turns {
            let mut flags = Vec::new();
            if t.interrupted {
                flags.push("interrupted");
            }
            if t.initiated {
                flags.push("initiated");
            }
            let _ = writeln!(
                s,
                "{:>7} {:>8} {:>6} {:>6} {:>8} {:>9} {:>9} {:>9} {:>9}  {}",
                t.session,
                t.end_ms,
                t.tokens,
                t.audio_chunks,
                t.underruns,
                opt(t.first_token_ms),
                opt(t.first_audio_ms),
                t.sync_bound_ms,
                t.async_bound_ms,
                flags.join(",")
            );
        }
        let _ = writeln!(s);
        for (name, stats) in [("first token", self.first_token()), ("first audio", self.first_audio())] {
            match stats {
                Some(st) => {
                    let _ = writeln!(
                        s,
                        "{name:<12} n={} mean={:.1} p50={} p90={} max={} ms",
                        st.n, st.mean, st.p50, st.p90, st.max
                    );
                }
                None => {
                    let _ = writeln!(s, "{name:<12} n=0");
                }
            }
        }
        for c in Component::ALL {
            if let Some(st) = Stats::of(self.turns.iter().filter_map(|t| t.spans.get(c.name()).copied())) {
                let _ = writeln!(s, "{:<22} mean={:.1} ms", c.name(), st.mean);
            }
        }
        if let (Some(sb), Some(ab)) = (
            Stats::of(self.turns.iter().map(|t| t.sync_bound_ms)),
            Stats::of(self.turns.iter().map(|t| t.async_bound_ms)),
        ) {
            let _ = writeln!(s, "bound: sync mean {:.1} ms, async mean {:.1} ms", sb.mean, ab.mean);
        }
        if !self.errors.is_empty() {
            let errs: Vec<String> = self.errors.iter().map(|(k, v)| format!("{k}={v}")).collect();
            let _ = writeln!(s, "errors: {}", errs.join(" "));
        }
        if self.votes_up + self.votes_down > 0 {
            let _ = writeln!(s, "votes: {} up, {} down", self.votes_up, self.votes_down);
        }
        s
    }
}
