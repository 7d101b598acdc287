//! Seeded scenario generator for property tests and fuzzing.
//!
//! User turns are spaced so that both turn-taking modes have finished
//! generating before the next input arrives, or so that the next input
//! lands before either mode has produced a token. Interruptions therefore
//! cut the same tokens in both modes.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use super::backends::{AsrEntry, LmStep};
use super::scenario::{Scenario, ScenarioEvent, TimedEvent};
use crate::latency::TurnMode;
use crate::types::{Modality, TimedWord, Token};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenarioKind {
    /// Typed turns, each answered in full.
    Typed,
    /// Typed turns where some replies are cut by the next input.
    Interruption,
    /// Typed turns followed by a long pause the bot fills.
    Silence,
    /// Spoken turns through scripted recognition and unit extraction.
    Spoken,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 4] = [
        ScenarioKind::Typed,
        ScenarioKind::Interruption,
        ScenarioKind::Silence,
        ScenarioKind::Spoken,
    ];
}

const SYLLABLES: [&str; 12] = ["ma", "ni", "hao", "shi", "de", "le", "wo", "ta", "zai", "you", "bu", "hen"];

struct Builder {
    rng: StdRng,
    sc: Scenario,
    /// Sync-mode time by which the previous bot turn has stopped generating.
    free_at: u64,
    chunk_id: u64,
}

impl Builder {
    fn word(&mut self) -> String {
        let n = self.rng.gen_range(1..=2);
        (0..n).map(|_| SYLLABLES[self.rng.gen_range(0..SYLLABLES.len())]).collect()
    }

    fn push(&mut self, t_ms: u64, event: ScenarioEvent) {
        self.sc.events.push(TimedEvent { t_ms, line: 0, event });
    }

    /// Scripts reply `turn`; returns its token count.
    fn reply(&mut self, turn: usize, with_units: bool, long: bool) -> u64 {
        let n_words = if long { self.rng.gen_range(5..=8) } else { self.rng.gen_range(1..=6) };
        let units = if long { 4..=6 } else { 1..=4 };
        let mut steps = Vec::new();
        for _ in 0..n_words {
            steps.push(LmStep::Emit {
                token: Token::text(self.word()),
                eot_probability: 0.0,
            });
            if with_units {
                for _ in 0..self.rng.gen_range(units.clone()) {
                    steps.push(LmStep::Emit {
                        token: Token::unit(self.rng.gen_range(0..1024)),
                        eot_probability: 0.0,
                    });
                }
            }
        }
        let n = steps.len() as u64;
        self.sc.lm_script.insert(turn, steps);
        n
    }

    /// Sync-mode end of generation for a reply of `n` tokens signalled at `signal`.
    fn sync_end(&self, signal: u64, n: u64) -> u64 {
        let g = &self.sc.generation;
        signal + g.first_token_ms + (n + 1) * g.token_interval_ms()
    }

    /// Typed utterance starting at `t`; returns (time of last chunk, whether an eot rule ends it).
    fn typed_turn(&mut self, t: u64, turn: usize) -> (u64, bool) {
        let chunks = self.rng.gen_range(1..=3);
        let mut at = t;
        for c in 0..chunks {
            let mut words: Vec<String> = (0..self.rng.gen_range(1..=3)).map(|_| self.word()).collect();
            if c + 1 == chunks {
                words.push(format!("end{turn}"));
            }
            self.push(at, ScenarioEvent::UserText { text: words.join(" ") });
            if c + 1 < chunks {
                at += self.rng.gen_range(150..=600);
            }
        }
        let ruled = self.rng.gen_bool(0.7);
        if ruled {
            self.sc.eot_rules.push((Token::text(format!("end{turn}")), 0.95));
        }
        (at, ruled)
    }

    /// Spoken utterance from `t`: words of 300 ms, recognizer snapshots at
    /// every 100 ms, audio chunks until 600 ms after the last word.
    fn spoken_turn(&mut self, t: u64, turn: usize) -> (u64, bool) {
        let t = t.div_ceil(100) * 100;
        let n = self.rng.gen_range(2..=5);
        let mut words = Vec::new();
        for j in 0..n {
            let surface = if j + 1 == n { format!("end{turn}") } else { self.word() };
            words.push(TimedWord::new(surface, t + j * 300, t + (j + 1) * 300).expect("ordered span"));
        }
        let speech_end = t + n * 300;
        let audio_end = speech_end + 600;
        let mut tau = t + 100;
        while tau <= audio_end {
            let heard: Vec<TimedWord> = words.iter().filter(|w| w.start_ms < tau).cloned().collect();
            self.sc.asr_script.push(AsrEntry {
                t_ms: tau,
                words: heard,
                error: false,
            });
            self.push(tau, ScenarioEvent::UserAudio { chunk: self.chunk_id });
            self.chunk_id += 1;
            tau += 100;
        }
        self.sc.eot_rules.push((Token::text(format!("end{turn}")), 0.95));
        // the last word is confirmed once two hypotheses agree on it; that
        // input time bounds the turn signal
        (audio_end, true)
    }
}

/// Builds a scenario whose confirmed output must not depend on the turn-taking mode.
pub fn generate_scenario(seed: u64, kind: ScenarioKind) -> Scenario {
    let mut b = Builder {
        rng: StdRng::seed_from_u64(seed),
        sc: Scenario {
            name: format!("{kind:?}-{seed}").to_lowercase(),
            mode: TurnMode::Asynchronous,
            user_modality: if kind == ScenarioKind::Spoken { Modality::Hybrid } else { Modality::Text },
            machine_modality: if kind == ScenarioKind::Silence { Modality::Text } else { Modality::Hybrid },
            silence_initiate: kind == ScenarioKind::Silence,
            ..Default::default()
        },
        free_at: 0,
        chunk_id: 0,
    };
    let with_units = b.sc.machine_modality != Modality::Text;
    let turns = b.rng.gen_range(1..=4usize);
    let mut t = b.rng.gen_range(100..=800u64);
    for turn in 0..turns {
        let (last, ruled) = match kind {
            ScenarioKind::Spoken => b.spoken_turn(t, turn),
            _ => b.typed_turn(t, turn),
        };
        // spoken turns are signalled no later than the wait cap after the audio ends
        let signal = if ruled && kind != ScenarioKind::Spoken {
            last + b.sc.generation.eot_check_ms
        } else {
            last + b.sc.config.turn_wait_cap_ms
        };
        // long replies keep audio playing in both modes past the sync generation end
        let n = b.reply(turn, with_units, kind == ScenarioKind::Interruption);
        b.free_at = b.sync_end(signal, n);
        let cut_early = kind == ScenarioKind::Interruption && ruled && b.rng.gen_bool(0.5);
        t = if cut_early {
            // after the signal, before the first token in either mode
            signal + b.rng.gen_range(10..=200)
        } else if kind == ScenarioKind::Interruption {
            // right after generation, while audio is still playing
            b.free_at + b.rng.gen_range(20..=120)
        } else {
            b.free_at + b.rng.gen_range(300..=2500)
        };
    }
    if kind == ScenarioKind::Silence {
        let n = b.reply(turns, with_units, false);
        let g = b.sc.generation;
        let initiate_at = b.free_at + b.sc.config.silence_initiate_ms;
        let end = initiate_at + g.first_token_ms + (n + 1) * g.token_interval_ms() + 1000;
        b.push(end, ScenarioEvent::End);
    }
    b.sc
}
