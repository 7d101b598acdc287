//! Scenario files: UTF-8, one JSON object per line, each with a `t` (ms)
//! and a `kind`. Blank lines and lines starting with `//` are skipped.
//! Line times must be non-decreasing. The schema is documented in
//! `scenarios/README.md`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use super::backends::{AsrEntry, EncoderEntry, LmStep, ScriptedAsr, ScriptedEncoder, ScriptedLm};
use crate::config::SessionConfig;
use crate::decoder::DecoderProfile;
use crate::frontend::HallucinationPatterns;
use crate::latency::TurnMode;
use crate::turn::GenerationProfile;
use crate::types::{Modality, TimedWord, Token};

pub const DEFAULT_ROLE: &str = "You are a ChatBot. Have a fun chat with the user.";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: event at {t_ms} ms precedes the previous event at {prev_ms} ms")]
    OutOfOrder { line: usize, t_ms: u64, prev_ms: u64 },
    #[error("line {line}: {field} = {value} is outside [0, 1]")]
    OutOfRange { line: usize, field: &'static str, value: f64 },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScenarioEvent {
    UserAudio { chunk: u64 },
    UserText { text: String },
    /// Explicit end of the user's turn, e.g. a typed message submitted.
    UserTurnEnd,
    Reset,
    End,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimedEvent {
    pub t_ms: u64,
    pub line: usize,
    pub event: ScenarioEvent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpectCheck {
    /// Outbound message kinds appear in this order (not necessarily adjacent).
    Sequence(Vec<String>),
    Count { of: String, n: usize },
    BotText { turn: usize, text: String },
    /// No token of a cancelled generation after its interrupt acknowledgement.
    InterruptClean(bool),
    Absent(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Expectation {
    pub line: usize,
    pub check: ExpectCheck,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub config: SessionConfig,
    pub mode: TurnMode,
    pub user_modality: Modality,
    pub machine_modality: Modality,
    pub role: String,
    pub generation: GenerationProfile,
    pub decoder: DecoderProfile,
    pub silence_initiate: bool,
    pub hallucinations: Vec<String>,
    pub asr_script: Vec<AsrEntry>,
    pub encoder_map: BTreeMap<u64, EncoderEntry>,
    pub lm_script: BTreeMap<usize, Vec<LmStep>>,
    pub eot_rules: Vec<(Token, f64)>,
    pub eot_default: f64,
    pub events: Vec<TimedEvent>,
    pub expectations: Vec<Expectation>,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            name: "unnamed".into(),
            config: SessionConfig::default(),
            mode: TurnMode::Asynchronous,
            user_modality: Modality::Hybrid,
            machine_modality: Modality::Hybrid,
            role: DEFAULT_ROLE.into(),
            generation: GenerationProfile::default(),
            decoder: DecoderProfile::default(),
            silence_initiate: true,
            hallucinations: Vec::new(),
            asr_script: Vec::new(),
            encoder_map: BTreeMap::new(),
            lm_script: BTreeMap::new(),
            eot_rules: Vec::new(),
            eot_default: 0.0,
            events: Vec::new(),
            expectations: Vec::new(),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    #[serde(rename = "t")]
    _t: u64,
    #[serde(rename = "kind")]
    _kind: String,
    name: Option<String>,
    mode: Option<TurnMode>,
    user_modality: Option<Modality>,
    machine_modality: Option<Modality>,
    role: Option<String>,
    #[serde(default)]
    config: serde_json::Map<String, Value>,
    generation: Option<GenerationProfile>,
    decoder: Option<DecoderProfile>,
    silence_initiate: Option<bool>,
    #[serde(default)]
    hallucinations: Vec<String>,
    eot_default: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AsrLine {
    t: u64,
    #[serde(rename = "kind")]
    _kind: String,
    #[serde(default)]
    words: Vec<(String, u64, u64)>,
    #[serde(default)]
    error: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EncoderLine {
    #[serde(rename = "t")]
    _t: u64,
    #[serde(rename = "kind")]
    _kind: String,
    chunk: u64,
    #[serde(default)]
    units: Vec<u32>,
    #[serde(default)]
    error: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LmLine {
    #[serde(rename = "t")]
    _t: u64,
    #[serde(rename = "kind")]
    _kind: String,
    turn: usize,
    steps: Vec<(String, f64)>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EotLine {
    #[serde(rename = "t")]
    _t: u64,
    #[serde(rename = "kind")]
    _kind: String,
    after: String,
    p: f64,
}

#[derive(Deserialize)]
struct ExpectLine {
    #[serde(flatten)]
    check: ExpectCheck,
}

/// Marks a failing step in an `lm` line.
pub const LM_ERROR_STEP: &str = "<error>";

fn malformed(line: usize, e: impl std::fmt::Display) -> ScenarioError {
    ScenarioError::Malformed {
        line,
        message: e.to_string(),
    }
}

fn probability(line: usize, field: &'static str, value: f64) -> Result<f64, ScenarioError> {
    if (0.0..=1.0).contains(&value) {
        Ok(value)
    } else {
        Err(ScenarioError::OutOfRange { line, field, value })
    }
}

fn token(line: usize, s: &str) -> Result<Token, ScenarioError> {
    s.parse::<Token>().map_err(|e| malformed(line, e))
}

pub fn load_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let mut sc = Scenario::default();
    let mut prev_t: Option<u64> = None;
    let mut overrides = None;

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with("//") {
            continue;
        }
        let value: Value = serde_json::from_str(trimmed).map_err(|e| malformed(line, e))?;
        let obj = value.as_object().ok_or_else(|| malformed(line, "expected a JSON object"))?;
        let t = obj
            .get("t")
            .ok_or_else(|| malformed(line, "missing field `t`"))?
            .as_u64()
            .ok_or_else(|| malformed(line, "`t` must be a non-negative integer"))?;
        let kind = obj
            .get("kind")
            .ok_or_else(|| malformed(line, "missing field `kind`"))?
            .as_str()
            .ok_or_else(|| malformed(line, "`kind` must be a string"))?
            .to_string();
        if let Some(p) = prev_t {
            if t < p {
                return Err(ScenarioError::OutOfOrder { line, t_ms: t, prev_ms: p });
            }
        }
        prev_t = Some(t);

        match kind.as_str() {
            "scenario" => {
                let h: Header = serde_json::from_value(value).map_err(|e| malformed(line, e))?;
                if let Some(n) = h.name {
                    sc.name = n;
                }
                if let Some(m) = h.mode {
                    sc.mode = m;
                }
                if let Some(m) = h.user_modality {
                    sc.user_modality = m;
                }
                if let Some(m) = h.machine_modality {
                    sc.machine_modality = m;
                }
                if let Some(r) = h.role {
                    sc.role = r;
                }
                if let Some(g) = h.generation {
                    sc.generation = g;
                }
                if let Some(d) = h.decoder {
                    sc.decoder = d;
                }
                if let Some(s) = h.silence_initiate {
                    sc.silence_initiate = s;
                }
                if let Some(p) = h.eot_default {
                    sc.eot_default = probability(line, "eot_default", p)?;
                }
                sc.hallucinations = h.hallucinations;
                overrides = Some((line, h.config));
            }
            "asr" => {
                let a: AsrLine = serde_json::from_value(value).map_err(|e| malformed(line, e))?;
                let mut words = Vec::with_capacity(a.words.len());
                for (w, s, e) in a.words {
                    let word = TimedWord::new(w, s, e).map_err(|err| malformed(line, err))?;
                    if let Some(prev) = words.last() {
                        let prev: &TimedWord = prev;
                        if word.start_ms < prev.end_ms {
                            return Err(malformed(line, format!("word {:?} overlaps the previous word", word.surface)));
                        }
                    }
                    words.push(word);
                }
                sc.asr_script.push(AsrEntry {
                    t_ms: a.t,
                    words,
                    error: a.error,
                });
            }
            "encoder" => {
                let e: EncoderLine = serde_json::from_value(value).map_err(|e| malformed(line, e))?;
                let entry = if e.error {
                    EncoderEntry::Error
                } else {
                    EncoderEntry::Units(e.units)
                };
                sc.encoder_map.insert(e.chunk, entry);
            }
            "lm" => {
                let l: LmLine = serde_json::from_value(value).map_err(|e| malformed(line, e))?;
                let mut steps = Vec::with_capacity(l.steps.len());
                for (tok, p) in l.steps {
                    let p = probability(line, "eot_probability", p)?;
                    steps.push(if tok == LM_ERROR_STEP {
                        LmStep::Fail(format!("scripted failure in turn {}", l.turn))
                    } else {
                        LmStep::Emit {
                            token: token(line, &tok)?,
                            eot_probability: p,
                        }
                    });
                }
                sc.lm_script.insert(l.turn, steps);
            }
            "eot" => {
                let e: EotLine = serde_json::from_value(value).map_err(|e| malformed(line, e))?;
                let p = probability(line, "p", e.p)?;
                sc.eot_rules.push((token(line, &e.after)?, p));
            }
            "expect" => {
                let mut value = value;
                if let Some(o) = value.as_object_mut() {
                    o.remove("t");
                    o.remove("kind");
                }
                let e: ExpectLine = serde_json::from_value(value).map_err(|e| malformed(line, e))?;
                sc.expectations.push(Expectation { line, check: e.check });
            }
            "user_audio" | "user_text" | "user_turn_end" | "reset" | "end" => {
                let mut value = value;
                if let Some(o) = value.as_object_mut() {
                    o.remove("t");
                }
                let event: ScenarioEvent = serde_json::from_value(value).map_err(|e| malformed(line, e))?;
                sc.events.push(TimedEvent { t_ms: t, line, event });
            }
            other => return Err(malformed(line, format!("unknown kind {other:?}"))),
        }
    }

    if let Some((line, map)) = overrides {
        sc.config = SessionConfig::default().with_overrides(&map).map_err(|e| malformed(line, e))?;
    }
    Ok(sc)
}

pub fn load_scenario_file(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    load_scenario(&text)
}

impl Scenario {
    pub fn asr(&self) -> ScriptedAsr {
        ScriptedAsr::new(self.asr_script.clone())
    }

    pub fn encoder(&self) -> ScriptedEncoder {
        ScriptedEncoder::new(self.encoder_map.clone(), self.config.unit_vocab_size)
    }

    pub fn lm(&self, machine_label: &str) -> ScriptedLm {
        ScriptedLm::new(self.lm_script.clone(), machine_label).with_eot_rules(self.eot_rules.clone(), self.eot_default)
    }

    pub fn patterns(&self) -> HallucinationPatterns {
        HallucinationPatterns::new(self.hallucinations.iter())
    }

    /// Time of the last scripted event.
    pub fn end_ms(&self) -> u64 {
        self.events.last().map_or(0, |e| e.t_ms)
    }

    pub fn with_mode(&self, mode: TurnMode) -> Scenario {
        Scenario { mode, ..self.clone() }
    }
}
