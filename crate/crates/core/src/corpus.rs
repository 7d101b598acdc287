//! Offline corpus preparation: interleaved sequence forming, interruption
//! insertion, rule-based filtering and training-sample rendering.
//!
//! Records are stored one per line as JSON objects tagged with `"kind"`:
//! `dialogue` for [`DialogueRecord`] and `sample` for [`TrainingSample`].
//! Words are `{"w","s","e"}` objects and units are `[index, start_ms]` pairs.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frontend::interleave::check_units_monotone;
use crate::frontend::{HallucinationPatterns, InterleaveError, InterleaveState};
use crate::turn::interruption::{encode_interruption, InterruptionError};
use crate::turn::prompt::{format_system_prompt, PromptError};
use crate::turn::{DEFAULT_MACHINE, DEFAULT_USER, SYSTEM_SPEAKER};
use crate::types::{is_han, text_to_tokens, Modality, TimedUnit, TimedWord, Token, UnitId};

pub const MAX_SAMPLE_TOKENS: usize = 16_384;
pub const DEFAULT_HAN_FRACTION_MIN: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CorpusError {
    #[error("turn {turn}: word {index} starts before the previous word ends")]
    WordsOutOfOrder { turn: usize, index: usize },
    #[error("turn {turn}: unit {index} does not start after the previous unit")]
    UnitsOutOfOrder { turn: usize, index: usize },
    #[error("turn index {turn} outside dialogue of {len} turns")]
    TurnOutOfRange { turn: usize, len: usize },
    #[error("split at word {split} outside turn of {len} words")]
    SplitOutOfRange { split: usize, len: usize },
    #[error("speaker {0:?} cannot interrupt their own turn (guideline rule 2: avoid speaker inconsistency)")]
    SelfInterruption(String),
    #[error("turn {0} already carries an interruption")]
    AlreadyInterrupted(usize),
    #[error("speaker label must not be empty")]
    EmptySpeaker,
    #[error("{family} does not train {input} -> {output}; allowed: {allowed}")]
    DisallowedModality {
        family: TaskFamily,
        input: Modality,
        output: Modality,
        allowed: String,
    },
    #[error("text-only dialogue training excludes dialogues with interruptions")]
    InterruptionInTextDialogue,
    #[error(transparent)]
    Interleave(#[from] InterleaveError),
    #[error(transparent)]
    Interruption(#[from] InterruptionError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
}

mod unit_pairs {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::types::{TimedUnit, UnitId};

    pub fn serialize<S: Serializer>(units: &[TimedUnit], s: S) -> Result<S::Ok, S::Error> {
        units
            .iter()
            .map(|u| (u.unit.0, u.start_ms))
            .collect::<Vec<_>>()
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<TimedUnit>, D::Error> {
        let pairs = Vec::<(u32, u64)>::deserialize(d)?;
        Ok(pairs
            .into_iter()
            .map(|(unit, start_ms)| TimedUnit {
                unit: UnitId(unit),
                start_ms,
            })
            .collect())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueTurn {
    pub speaker: String,
    #[serde(default)]
    pub words: Vec<TimedWord>,
    #[serde(default, with = "unit_pairs")]
    pub units: Vec<TimedUnit>,
}

impl DialogueTurn {
    pub fn new(speaker: impl Into<String>, words: Vec<TimedWord>, units: Vec<TimedUnit>) -> Self {
        DialogueTurn {
            speaker: speaker.into(),
            words,
            units,
        }
    }

    /// Surfaces concatenated, with a space only between two non-Han words.
    pub fn text(&self) -> String {
        join_surfaces(self.words.iter().map(|w| w.surface.as_str()))
    }
}

pub fn join_surfaces<'a>(words: impl Iterator<Item = &'a str>) -> String {
    let mut out = String::new();
    for w in words {
        let spaced = matches!((out.chars().last(), w.chars().next()), (Some(a), Some(b)) if !is_han(a) && !is_han(b));
        if spaced {
            out.push(' ');
        }
        out.push_str(w);
    }
    out
}

/// Interrupting content placed inside turn `turn` before word `split`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterruptionAnnotation {
    pub turn: usize,
    pub split: usize,
    pub interrupter: String,
    #[serde(default)]
    pub words: Vec<TimedWord>,
    #[serde(default, with = "unit_pairs")]
    pub units: Vec<TimedUnit>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueRecord {
    #[serde(default)]
    pub scenario: String,
    pub turns: Vec<DialogueTurn>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub interruptions: Vec<InterruptionAnnotation>,
}

fn check_timelines(turn: usize, words: &[TimedWord], units: &[TimedUnit]) -> Result<(), CorpusError> {
    if let Some(i) = words.windows(2).position(|w| w[1].start_ms < w[0].end_ms) {
        return Err(CorpusError::WordsOutOfOrder { turn, index: i + 1 });
    }
    if let Some(i) = units.windows(2).position(|u| u[1].start_ms <= u[0].start_ms) {
        return Err(CorpusError::UnitsOutOfOrder { turn, index: i + 1 });
    }
    Ok(())
}

impl DialogueRecord {
    pub fn validate(&self) -> Result<(), CorpusError> {
        for (i, t) in self.turns.iter().enumerate() {
            if t.speaker.is_empty() {
                return Err(CorpusError::EmptySpeaker);
            }
            check_timelines(i, &t.words, &t.units)?;
        }
        let mut seen = Vec::new();
        for a in &self.interruptions {
            check_annotation(self, a)?;
            if seen.contains(&a.turn) {
                return Err(CorpusError::AlreadyInterrupted(a.turn));
            }
            seen.push(a.turn);
        }
        Ok(())
    }

    pub fn interruption_at(&self, turn: usize) -> Option<&InterruptionAnnotation> {
        self.interruptions.iter().find(|a| a.turn == turn)
    }

    pub fn speakers(&self) -> Vec<&str> {
        self.turns.iter().map(|t| t.speaker.as_str()).collect()
    }
}

fn check_annotation(d: &DialogueRecord, a: &InterruptionAnnotation) -> Result<(), CorpusError> {
    let turn = d.turns.get(a.turn).ok_or(CorpusError::TurnOutOfRange {
        turn: a.turn,
        len: d.turns.len(),
    })?;
    if a.split > turn.words.len() {
        return Err(CorpusError::SplitOutOfRange {
            split: a.split,
            len: turn.words.len(),
        });
    }
    if a.interrupter.is_empty() {
        return Err(CorpusError::EmptySpeaker);
    }
    if a.interrupter == turn.speaker {
        return Err(CorpusError::SelfInterruption(a.interrupter.clone()));
    }
    check_timelines(a.turn, &a.words, &a.units)
}

/// Words interleaved with the units under them, over a complete utterance:
/// the online interleaver with no gap cap, followed by a flush of the tail.
pub fn form_interleaved(words: &[TimedWord], units: &[TimedUnit]) -> Result<Vec<Token>, CorpusError> {
    check_units_monotone(units)?;
    let mut st = InterleaveState::new();
    let mut out = st.interleave(words, units, None)?;
    out.extend(st.flush(units, None, None));
    Ok(out)
}

/// Attaches an interruption to a dialogue after checking it against the record.
pub fn insert_interruption_record(
    dialogue: &DialogueRecord,
    annotation: InterruptionAnnotation,
) -> Result<DialogueRecord, CorpusError> {
    check_annotation(dialogue, &annotation)?;
    if dialogue.interruption_at(annotation.turn).is_some() {
        return Err(CorpusError::AlreadyInterrupted(annotation.turn));
    }
    let mut out = dialogue.clone();
    out.interruptions.push(annotation);
    out.interruptions.sort_by_key(|a| a.turn);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    Hallucination,
    Language,
    MissingTurn,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RejectReason::Hallucination => "hallucination",
            RejectReason::Language => "language",
            RejectReason::MissingTurn => "missing_turn",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", content = "reason", rename_all = "snake_case")]
pub enum FilterVerdict {
    Keep,
    Reject(RejectReason),
}

/// Filter configuration, loadable from TOML:
///
/// ```toml
/// han_fraction_min = 0.2
/// hallucination_patterns = ["請不吝點贊訂閱轉發打賞支持明鏡與點點欄目"]
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterRules {
    pub han_fraction_min: f64,
    pub hallucination_patterns: Vec<String>,
}

impl Default for FilterRules {
    fn default() -> Self {
        FilterRules {
            han_fraction_min: DEFAULT_HAN_FRACTION_MIN,
            hallucination_patterns: Vec::new(),
        }
    }
}

impl FilterRules {
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn patterns(&self) -> HallucinationPatterns {
        HallucinationPatterns::new(&self.hallucination_patterns)
    }
}

/// Share of Han characters among all alphabetic characters; 0 when there are none.
pub fn han_fraction(text: &str) -> f64 {
    let (mut han, mut letters) = (0usize, 0usize);
    for c in text.chars().filter(|c| c.is_alphabetic()) {
        letters += 1;
        if is_han(c) {
            han += 1;
        }
    }
    if letters == 0 {
        0.0
    } else {
        han as f64 / letters as f64
    }
}

/// Applies the rules in fixed order and reports the first one that fires.
pub fn filter_sample(dialogue: &DialogueRecord, rules: &FilterRules) -> FilterVerdict {
    filter_with(dialogue, &rules.patterns(), rules.han_fraction_min)
}

pub fn filter_with(dialogue: &DialogueRecord, patterns: &HallucinationPatterns, han_fraction_min: f64) -> FilterVerdict {
    let texts: Vec<String> = dialogue
        .turns
        .iter()
        .map(DialogueTurn::text)
        .chain(
            dialogue
                .interruptions
                .iter()
                .map(|a| join_surfaces(a.words.iter().map(|w| w.surface.as_str()))),
        )
        .collect();
    if texts.iter().any(|t| patterns.occurs_in(t)) {
        return FilterVerdict::Reject(RejectReason::Hallucination);
    }
    if han_fraction(&texts.concat()) < han_fraction_min {
        return FilterVerdict::Reject(RejectReason::Language);
    }
    let empty = dialogue.turns.iter().any(|t| t.words.is_empty());
    let repeated = dialogue.turns.windows(2).enumerate().any(|(i, w)| {
        w[0].speaker == w[1].speaker && dialogue.interruption_at(i).is_none() && dialogue.interruption_at(i + 1).is_none()
    });
    if dialogue.turns.is_empty() || empty || repeated {
        return FilterVerdict::Reject(RejectReason::MissingTurn);
    }
    FilterVerdict::Keep
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskFamily {
    Asr,
    Tts,
    TextDialogue,
    SpokenDialogue,
}

impl TaskFamily {
    /// Input/output pairs trained for each family.
    pub fn allowed(self) -> &'static [(Modality, Modality)] {
        use Modality::*;
        match self {
            TaskFamily::Asr => &[(Unit, Text), (Unit, Hybrid)],
            TaskFamily::Tts => &[(Text, Unit), (Text, Hybrid)],
            TaskFamily::TextDialogue => &[(Text, Text)],
            TaskFamily::SpokenDialogue => &[(Unit, Text), (Unit, Hybrid), (Hybrid, Text), (Hybrid, Hybrid), (Text, Hybrid)],
        }
    }

    pub fn default_role(self) -> &'static str {
        match self {
            TaskFamily::Asr => "You are a speech recognition model. Transcribe what the user says.",
            TaskFamily::Tts => "You are a speech synthesis model. Read the user's text aloud.",
            TaskFamily::TextDialogue | TaskFamily::SpokenDialogue => crate::sim::DEFAULT_ROLE,
        }
    }
}

impl fmt::Display for TaskFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskFamily::Asr => "asr",
            TaskFamily::Tts => "tts",
            TaskFamily::TextDialogue => "text_dialogue",
            TaskFamily::SpokenDialogue => "spoken_dialogue",
        })
    }
}

impl std::str::FromStr for TaskFamily {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "asr" => Ok(TaskFamily::Asr),
            "tts" => Ok(TaskFamily::Tts),
            "text" | "text_dialogue" => Ok(TaskFamily::TextDialogue),
            "spoken" | "spoken_dialogue" | "dialogue" => Ok(TaskFamily::SpokenDialogue),
            other => Err(format!("unknown task family {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderRequest {
    pub family: TaskFamily,
    pub input: Modality,
    pub output: Modality,
    /// Falls back to the dialogue's scenario, then to the family default.
    pub role: Option<String>,
    pub machine_label: String,
    pub max_len: usize,
}

impl RenderRequest {
    pub fn new(family: TaskFamily, input: Modality, output: Modality) -> Self {
        RenderRequest {
            family,
            input,
            output,
            role: None,
            machine_label: DEFAULT_MACHINE.into(),
            max_len: MAX_SAMPLE_TOKENS,
        }
    }

    pub fn with_role(mut self, role: impl Into<String>) -> Self {
        self.role = Some(role.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub system_prompt: String,
    pub input_modality: Modality,
    pub output_modality: Modality,
    pub tokens: Vec<Token>,
    pub truncated: bool,
}

impl TrainingSample {
    pub const MAX_LEN: usize = MAX_SAMPLE_TOKENS;
}

fn render_content(words: &[TimedWord], units: &[TimedUnit], modality: Modality) -> Result<Vec<Token>, CorpusError> {
    Ok(match modality {
        Modality::Text => words.iter().map(|w| Token::text(w.surface.clone())).collect(),
        Modality::Unit => units.iter().map(|u| Token::Unit(u.unit)).collect(),
        Modality::Hybrid => form_interleaved(words, units)?,
    })
}

/// Token index in a rendered turn that corresponds to word `split`.
fn split_index(words: &[TimedWord], units: &[TimedUnit], rendered: &[Token], modality: Modality, split: usize) -> usize {
    if split >= words.len() {
        return rendered.len();
    }
    match modality {
        Modality::Text => split,
        Modality::Unit => units.partition_point(|u| u.start_ms < words[split].start_ms),
        Modality::Hybrid => rendered
            .iter()
            .enumerate()
            .filter(|(_, t)| t.is_text())
            .nth(split)
            .map_or(rendered.len(), |(i, _)| i),
    }
}

/// Renders one turn (with its interruption, if any) as header-delimited tokens
/// closed by an end-of-turn token.
pub fn render_turn(
    dialogue: &DialogueRecord,
    index: usize,
    modality_of: impl Fn(&str) -> Modality,
) -> Result<Vec<Token>, CorpusError> {
    let turn = dialogue.turns.get(index).ok_or(CorpusError::TurnOutOfRange {
        turn: index,
        len: dialogue.turns.len(),
    })?;
    let modality = modality_of(&turn.speaker);
    let content = render_content(&turn.words, &turn.units, modality)?;
    let mut out = vec![Token::header(turn.speaker.clone()).map_err(|_| CorpusError::EmptySpeaker)?];
    match dialogue.interruption_at(index) {
        Some(a) => {
            let split = split_index(&turn.words, &turn.units, &content, modality, a.split);
            let interrupting = render_content(&a.words, &a.units, modality_of(&a.interrupter))?;
            out.extend(encode_interruption(&content, split, &turn.speaker, &a.interrupter, &interrupting)?);
        }
        None => out.extend(content),
    }
    out.push(Token::EndOfTurn);
    Ok(out)
}

pub fn render_training_sample(dialogue: &DialogueRecord, req: &RenderRequest) -> Result<TrainingSample, CorpusError> {
    if !req.family.allowed().contains(&(req.input, req.output)) {
        let allowed = req
            .family
            .allowed()
            .iter()
            .map(|(i, o)| format!("{i} -> {o}"))
            .collect::<Vec<_>>()
            .join(", ");
        return Err(CorpusError::DisallowedModality {
            family: req.family,
            input: req.input,
            output: req.output,
            allowed,
        });
    }
    dialogue.validate()?;
    if req.family == TaskFamily::TextDialogue && !dialogue.interruptions.is_empty() {
        return Err(CorpusError::InterruptionInTextDialogue);
    }
    let role = match (&req.role, dialogue.scenario.trim()) {
        (Some(r), _) => r.clone(),
        (None, s) if !s.is_empty() && matches!(req.family, TaskFamily::SpokenDialogue | TaskFamily::TextDialogue) => {
            s.to_string()
        }
        _ => req.family.default_role().to_string(),
    };
    let system_prompt = format_system_prompt(req.input, req.output, &role)?;
    let mut tokens = vec![Token::Header(SYSTEM_SPEAKER.into())];
    tokens.extend(text_to_tokens(&system_prompt));
    tokens.push(Token::EndOfTurn);

    match req.family {
        // every utterance becomes a user/machine pair: the same speech on both sides
        TaskFamily::Asr | TaskFamily::Tts => {
            for turn in &dialogue.turns {
                tokens.push(Token::Header(DEFAULT_USER.into()));
                tokens.extend(render_content(&turn.words, &turn.units, req.input)?);
                tokens.push(Token::EndOfTurn);
                tokens.push(Token::Header(req.machine_label.clone()));
                tokens.extend(render_content(&turn.words, &turn.units, req.output)?);
                tokens.push(Token::EndOfTurn);
            }
        }
        TaskFamily::TextDialogue | TaskFamily::SpokenDialogue => {
            let modality_of = |speaker: &str| if speaker == req.machine_label { req.output } else { req.input };
            for i in 0..dialogue.turns.len() {
                tokens.extend(render_turn(dialogue, i, modality_of)?);
            }
        }
    }
    let truncated = tokens.len() > req.max_len;
    tokens.truncate(req.max_len);
    Ok(TrainingSample {
        system_prompt,
        input_modality: req.input,
        output_modality: req.output,
        tokens,
        truncated,
    })
}

/// Per-turn content recovered from a rendered sample: headers and
/// end-of-turn tokens stripped, text and units separated.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RecoveredTurn {
    pub speaker: String,
    pub words: Vec<String>,
    pub units: Vec<UnitId>,
}

/// Splits a rendered sample back into speaker segments (after the system
/// prompt). An interrupted turn yields three segments.
pub fn deinterleave(tokens: &[Token]) -> Vec<RecoveredTurn> {
    let mut out: Vec<RecoveredTurn> = Vec::new();
    for tok in tokens {
        match tok {
            Token::Header(s) => out.push(RecoveredTurn {
                speaker: s.clone(),
                ..Default::default()
            }),
            Token::Text { surface, .. } => {
                if let Some(t) = out.last_mut() {
                    t.words.push(surface.clone());
                }
            }
            Token::Unit(u) => {
                if let Some(t) = out.last_mut() {
                    t.units.push(*u);
                }
            }
            Token::EndOfTurn => {}
        }
    }
    if out.first().is_some_and(|t| t.speaker == SYSTEM_SPEAKER) {
        out.remove(0);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CorpusLine {
    Dialogue(DialogueRecord),
    Sample(SampleLine),
    Verdict(VerdictLine),
}

/// A [`TrainingSample`] with tokens in the compact notation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleLine {
    pub system_prompt: String,
    pub input: Modality,
    pub output: Modality,
    pub truncated: bool,
    pub tokens: Vec<String>,
}

impl From<&TrainingSample> for SampleLine {
    fn from(s: &TrainingSample) -> Self {
        SampleLine {
            system_prompt: s.system_prompt.clone(),
            input: s.input_modality,
            output: s.output_modality,
            truncated: s.truncated,
            tokens: s.tokens.iter().map(Token::notation).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictLine {
    pub index: usize,
    pub scenario: String,
    #[serde(flatten)]
    pub verdict: FilterVerdict,
}

/// Reads dialogue records; blank lines are skipped.
pub fn read_dialogues(text: &str) -> Result<Vec<DialogueRecord>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let malformed = |message: String| CorpusError::Malformed { line: i + 1, message };
        match serde_json::from_str::<CorpusLine>(line).map_err(|e| malformed(e.to_string()))? {
            CorpusLine::Dialogue(d) => {
                d.validate().map_err(|e| malformed(e.to_string()))?;
                out.push(d);
            }
            other => return Err(malformed(format!("expected a dialogue record, found {other:?}"))),
        }
    }
    Ok(out)
}

pub fn write_line(line: &CorpusLine) -> String {
    serde_json::to_string(line).expect("corpus lines serialize")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w(s: &str, a: u64, b: u64) -> TimedWord {
        TimedWord::new(s, a, b).unwrap()
    }

    fn grid(from: u64, to: u64) -> Vec<TimedUnit> {
        (from / 40..to.div_ceil(40)).map(|k| TimedUnit::new(k as u32, k * 40)).collect()
    }

    fn turn(speaker: &str, text: &str, start: u64) -> DialogueTurn {
        let words: Vec<TimedWord> = text
            .chars()
            .enumerate()
            .map(|(i, c)| w(&c.to_string(), start + i as u64 * 200, start + (i as u64 + 1) * 200))
            .collect();
        let end = start + words.len() as u64 * 200;
        DialogueTurn::new(speaker, words, grid(start, end))
    }

    fn dialogue(turns: Vec<DialogueTurn>) -> DialogueRecord {
        DialogueRecord {
            scenario: String::new(),
            turns,
            interruptions: Vec::new(),
        }
    }

    #[test]
    fn forming_cases() {
        let units = grid(0, 400);
        assert_eq!(form_interleaved(&[], &units).unwrap(), units.iter().map(|u| Token::Unit(u.unit)).collect::<Vec<_>>());
        let one = form_interleaved(&[w("hi", 0, 400)], &units).unwrap();
        assert_eq!(one[0], Token::text("hi"));
        assert_eq!(one.len(), 11);
        // five units in the silence between two words
        let units = grid(0, 600);
        let two = form_interleaved(&[w("a", 0, 80), w("b", 280, 600)], &units).unwrap();
        let b = two.iter().position(|t| *t == Token::text("b")).unwrap();
        assert_eq!(b, 1 + 2 + 5);
        assert_eq!(two.iter().filter(|t| t.is_unit()).count(), units.len());
        assert!(form_interleaved(&[w("b", 100, 200), w("a", 0, 50)], &units).is_err());
    }

    #[test]
    fn interruption_split_pattern() {
        let d = dialogue(vec![turn("User", "你好吗", 0), turn("Machine", "我很好谢谢你的关心啊", 800)]);
        let a = InterruptionAnnotation {
            turn: 1,
            split: 6,
            interrupter: "User".into(),
            words: vec![w("等", 2000, 2100), w("一", 2100, 2200), w("下", 2200, 2300)],
            units: Vec::new(),
        };
        let d2 = insert_interruption_record(&d, a.clone()).unwrap();
        let toks = render_turn(&d2, 1, |_| Modality::Text).unwrap();
        let inner = &toks[1..toks.len() - 1];
        let dec = crate::turn::interruption::decode_interruption(inner).unwrap();
        assert_eq!(dec.segment_lengths(), (6, 3, 4));
        let speakers: Vec<_> = toks.iter().filter_map(|t| match t {
            Token::Header(s) => Some(s.as_str()),
            _ => None,
        }).collect();
        assert_eq!(speakers, ["Machine", "User", "Machine"]);

        let mut selfish = a.clone();
        selfish.interrupter = "Machine".into();
        let err = insert_interruption_record(&d, selfish).unwrap_err();
        assert!(err.to_string().contains("guideline rule 2"));

        let at_zero = InterruptionAnnotation { split: 0, ..a };
        let d3 = insert_interruption_record(&d, at_zero).unwrap();
        let toks = render_turn(&d3, 1, |_| Modality::Hybrid).unwrap();
        assert_eq!(toks[1], Token::Header("User".into()));
    }

    #[test]
    fn filter_order() {
        let rules = FilterRules {
            hallucination_patterns: vec!["字幕由".into()],
            ..Default::default()
        };
        let clean = dialogue(vec![turn("User", "你好", 0), turn("Machine", "你好呀", 500)]);
        assert_eq!(filter_sample(&clean, &rules), FilterVerdict::Keep);

        let mut english = clean.clone();
        english.turns[0].words = vec![w("hello", 0, 100)];
        english.turns[1].words = vec![w("there", 200, 300)];
        assert_eq!(filter_sample(&english, &rules), FilterVerdict::Reject(RejectReason::Language));

        let mut gap = dialogue(vec![turn("User", "你好", 0), turn("Machine", "", 500), turn("User", "好的", 900)]);
        assert_eq!(filter_sample(&gap, &rules), FilterVerdict::Reject(RejectReason::MissingTurn));
        gap.turns.remove(1);
        assert_eq!(filter_sample(&gap, &rules), FilterVerdict::Reject(RejectReason::MissingTurn));

        let mut bad = clean.clone();
        bad.turns[1] = turn("Machine", "字幕由某某提供", 500);
        assert_eq!(filter_sample(&bad, &rules), FilterVerdict::Reject(RejectReason::Hallucination));
        // hallucination wins over the language rule
        bad.turns[0].words = vec![w("hello", 0, 100)];
        assert_eq!(filter_sample(&bad, &rules), FilterVerdict::Reject(RejectReason::Hallucination));
    }

    #[test]
    fn han_fraction_counts_letters_only() {
        assert_eq!(han_fraction("ok, 好!"), 1.0 / 3.0);
        assert_eq!(han_fraction("123"), 0.0);
    }

    #[test]
    fn asr_sample() {
        let d = dialogue(vec![turn("A", "你好", 0)]);
        let s = render_training_sample(&d, &RenderRequest::new(TaskFamily::Asr, Modality::Unit, Modality::Text)).unwrap();
        assert!(s.system_prompt.starts_with("Modality: {User: unit, Machine: text} You are a speech recognition model"));
        let turns = deinterleave(&s.tokens);
        assert_eq!(turns.len(), 2);
        assert!(turns[0].words.is_empty() && turns[0].units.len() == 10);
        assert!(turns[1].units.is_empty() && turns[1].words == ["你", "好"]);
    }

    #[test]
    fn dialogue_sample_modalities() {
        let d = dialogue(vec![turn("User", "讲个故事", 0), turn("Machine", "好的", 1000)]);
        let s = render_training_sample(&d, &RenderRequest::new(TaskFamily::SpokenDialogue, Modality::Text, Modality::Hybrid)).unwrap();
        let turns = deinterleave(&s.tokens);
        assert!(turns[0].units.is_empty());
        assert_eq!(turns[1].units.len(), 10);
        assert_eq!(turns[1].words, ["好", "的"]);
        let err = render_training_sample(&d, &RenderRequest::new(TaskFamily::SpokenDialogue, Modality::Text, Modality::Text)).unwrap_err();
        assert!(matches!(err, CorpusError::DisallowedModality { .. }));
    }

    #[test]
    fn long_samples_truncate() {
        let words: Vec<TimedWord> = (0..20_000u64).map(|i| w("字", i * 10, i * 10 + 10)).collect();
        let d = dialogue(vec![DialogueTurn::new("User", words, Vec::new())]);
        let s = render_training_sample(&d, &RenderRequest::new(TaskFamily::TextDialogue, Modality::Text, Modality::Text)).unwrap();
        assert_eq!(s.tokens.len(), 16_384);
        assert!(s.truncated);
    }

    #[test]
    fn record_lines_round_trip() {
        let d = dialogue(vec![turn("User", "你好", 0)]);
        let line = write_line(&CorpusLine::Dialogue(d.clone()));
        assert!(line.contains("\"kind\":\"dialogue\""));
        assert!(line.contains("\"units\":[[0,0],"));
        assert_eq!(read_dialogues(&line).unwrap(), vec![d]);
        assert!(read_dialogues("{\"kind\":\"dialogue\",\"turns\":[{\"speaker\":\"A\",\"units\":[[1,40],[2,40]]}]}").is_err());
    }
}
