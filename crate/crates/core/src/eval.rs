//! Evaluation: character error rate, LLM-judge prompting and score parsing,
//! agent-versus-agent conversations, and the per-model results table.

use std::collections::{BTreeMap, VecDeque};
use std::fmt::Write as _;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::join_surfaces;
use crate::error::BackendError;
use crate::pipeline::{Pipeline, PipelineError, PipelineEvent};
use crate::sim::Scenario;
use crate::turn::Action;
use crate::types::Token;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("reference is empty; the error rate is undefined")]
    EmptyReference,
    #[error("dialogue transcript is empty")]
    EmptyTranscript,
    #[error("judge reply has {found} of 3 ratings: {raw:?}")]
    JudgeParse { found: usize, raw: String },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
}

/// Levenshtein distance with unit costs, two rows of memory.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CerOptions {
    /// Remove all whitespace before comparing; punctuation is kept.
    pub strip_whitespace: bool,
}

impl Default for CerOptions {
    fn default() -> Self {
        CerOptions { strip_whitespace: true }
    }
}

impl CerOptions {
    pub const RAW: CerOptions = CerOptions { strip_whitespace: false };

    pub fn normalize(&self, s: &str) -> Vec<char> {
        if self.strip_whitespace {
            s.chars().filter(|c| !c.is_whitespace()).collect()
        } else {
            s.chars().collect()
        }
    }
}

/// Character error counts behind a rate, so rates can be pooled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CerCounts {
    pub errors: usize,
    pub reference_chars: usize,
}

impl CerCounts {
    pub fn rate(&self) -> f64 {
        self.errors as f64 / self.reference_chars as f64
    }
}

pub fn cer_counts(reference: &str, hypothesis: &str, opts: CerOptions) -> Result<CerCounts, EvalError> {
    let r = opts.normalize(reference);
    if r.is_empty() {
        return Err(EvalError::EmptyReference);
    }
    let h = opts.normalize(hypothesis);
    Ok(CerCounts {
        errors: edit_distance(&r, &h),
        reference_chars: r.len(),
    })
}

/// Edit distance over reference length, compared character by character
/// without normalization. May exceed 1.
pub fn cer(reference: &str, hypothesis: &str) -> Result<f64, EvalError> {
    cer_with(reference, hypothesis, CerOptions::RAW)
}

pub fn cer_with(reference: &str, hypothesis: &str, opts: CerOptions) -> Result<f64, EvalError> {
    cer_counts(reference, hypothesis, opts).map(|c| c.rate())
}

pub const JUDGE_SYSTEM_PROMPT: &str = "\
Please evaluate the following conversation between a human user and a voice agent. Rate each aspect on a scale of 1 to 5, where 1 is poor and 5 is excellent.

1. Relevance and Accuracy: Does the machine correctly respond to the user's requests?
    - Consider if the responses address the user's questions and provide relevant information.

2. Adherence to System Prompt: Does the machine follow the cues from the system prompt?
    - Assess if the responses align with the role and knowledge specified in the system prompt.

3. Grammatical Correctness: Can the machine produce grammatically correct responses?
    - Evaluate the linguistic quality of the machine's replies, including sentence structure and word usage.

For each aspect, provide a brief justification for your rating.

Finally, calculate an overall score by averaging the three ratings, rounded to the nearest whole number.

Overall Score: (Relevance + Adherence + Grammar) / 3";

pub const DIALOGUE_HISTORY_SLOT: &str = "{Dialogue History}";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgePrompt {
    pub system: String,
    pub user: String,
}

pub fn build_judge_prompt(transcript: &str) -> Result<JudgePrompt, EvalError> {
    if transcript.is_empty() {
        return Err(EvalError::EmptyTranscript);
    }
    Ok(JudgePrompt {
        system: JUDGE_SYSTEM_PROMPT.to_string(),
        user: DIALOGUE_HISTORY_SLOT.replace(DIALOGUE_HISTORY_SLOT, transcript),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeScores {
    pub relevance: u8,
    pub adherence: u8,
    pub grammar: u8,
    pub overall: u8,
    /// Relevance, adherence, grammar; empty when the judge gave none.
    pub justifications: [String; 3],
    /// What the judge itself claimed, kept for auditing.
    pub reported_overall: Option<u8>,
}

/// Mean of three 1-5 ratings rounded half away from zero. The sum is an
/// integer, so `(2·sum + 3) / 6` in integer arithmetic is exact.
pub fn overall_score(relevance: u8, adherence: u8, grammar: u8) -> u8 {
    let sum = relevance as u32 + adherence as u32 + grammar as u32;
    ((2 * sum + 3) / 6) as u8
}

impl JudgeScores {
    pub fn new(relevance: u8, adherence: u8, grammar: u8) -> Self {
        JudgeScores {
            relevance,
            adherence,
            grammar,
            overall: overall_score(relevance, adherence, grammar),
            justifications: Default::default(),
            reported_overall: None,
        }
    }
}

/// Renders scores in the layout the judge template asks for.
pub fn format_judge_reply(s: &JudgeScores) -> String {
    let just = |i: usize| {
        if s.justifications[i].is_empty() {
            String::new()
        } else {
            format!(" - {}", s.justifications[i])
        }
    };
    format!(
        "1. Relevance and Accuracy: {}{}\n2. Adherence to System Prompt: {}{}\n3. Grammatical Correctness: {}{}\nOverall Score: {}\n",
        s.relevance,
        just(0),
        s.adherence,
        just(1),
        s.grammar,
        just(2),
        s.overall
    )
}

fn rating_regex() -> Regex {
    Regex::new(
        r"(?im)^[ \t#>*\-\d.)]*(relevance|adherence|grammatical correctness|grammar|overall(?: score)?)\b[^:\n]*:[ \t*]*(?:rating:[ \t]*)?([1-5])(?:[ \t]*/[ \t]*5)?\b[ \t*]*(?:[-–—:.][ \t]*)?(.*)$",
    )
    .expect("valid rating pattern")
}

/// Extracts the three ratings; the overall score is recomputed from them.
pub fn parse_judge_reply(text: &str) -> Result<JudgeScores, EvalError> {
    let re = rating_regex();
    let mut found: [Option<(u8, String)>; 3] = Default::default();
    let mut reported = None;
    let lines: Vec<&str> = text.lines().collect();
    for caps in re.captures_iter(text) {
        let label = caps[1].to_ascii_lowercase();
        let score: u8 = caps[2].parse().expect("single digit");
        let mut just = caps[3].trim().trim_matches('*').trim().to_string();
        if just.is_empty() {
            // justification on the following line, e.g. "   - Justification: ..."
            let line_no = text[..caps.get(0).expect("match").end()].lines().count();
            if let Some(next) = lines.get(line_no) {
                let t = next.trim().trim_start_matches(['-', '*']).trim();
                if !t.is_empty() && !re.is_match(next) {
                    just = t.trim_start_matches("Justification:").trim().to_string();
                }
            }
        }
        let slot = match label.as_str() {
            "relevance" => 0,
            "adherence" => 1,
            "grammar" | "grammatical correctness" => 2,
            _ => {
                reported.get_or_insert(score);
                continue;
            }
        };
        found[slot].get_or_insert((score, just));
    }
    let n = found.iter().filter(|f| f.is_some()).count();
    let [Some((r, jr)), Some((a, ja)), Some((g, jg))] = found else {
        return Err(EvalError::JudgeParse {
            found: n,
            raw: text.to_string(),
        });
    };
    Ok(JudgeScores {
        justifications: [jr, ja, jg],
        reported_overall: reported,
        ..JudgeScores::new(r, a, g)
    })
}

/// A judge model: prompt in, free-form reply out.
pub trait Judge {
    fn judge(&mut self, prompt: &JudgePrompt) -> Result<String, BackendError>;
}

/// Replies from a fixed list, in order, then fails.
#[derive(Debug, Clone, Default)]
pub struct ScriptedJudge {
    replies: VecDeque<String>,
}

impl ScriptedJudge {
    pub fn new<I: IntoIterator<Item = String>>(replies: I) -> Self {
        ScriptedJudge {
            replies: replies.into_iter().collect(),
        }
    }
}

impl Judge for ScriptedJudge {
    fn judge(&mut self, _: &JudgePrompt) -> Result<String, BackendError> {
        self.replies
            .pop_front()
            .ok_or_else(|| BackendError::new("judge", "no scripted reply left"))
    }
}

pub fn score_dialogue(judge: &mut dyn Judge, transcript: &str) -> Result<JudgeScores, EvalError> {
    let prompt = build_judge_prompt(transcript)?;
    parse_judge_reply(&judge.judge(&prompt)?)
}

/// One participant of an agent-versus-agent conversation.
pub struct ForumAgent {
    pub id: String,
    pub pipeline: Pipeline,
}

impl ForumAgent {
    pub fn new(id: impl Into<String>, pipeline: Pipeline) -> Self {
        ForumAgent {
            id: id.into(),
            pipeline,
        }
    }

    pub fn from_scenario(id: impl Into<String>, sc: &Scenario) -> Result<Self, PipelineError> {
        Ok(Self::new(id, Pipeline::from_scenario(sc)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    MaxTurns,
    Silence,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForumTurn {
    pub agent: String,
    pub text: String,
    pub tokens: Vec<String>,
    pub start_ms: u64,
    pub end_ms: u64,
    pub interrupted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForumTranscript {
    pub scenario: String,
    pub agents: [String; 2],
    pub turns: Vec<ForumTurn>,
    pub termination: Termination,
    pub error: Option<String>,
    pub end_ms: u64,
    /// Reserved for externally predicted speech quality.
    pub mos: Option<f64>,
}

impl ForumTranscript {
    /// A header line followed by one line per turn.
    pub fn to_jsonl(&self) -> String {
        #[derive(Serialize)]
        #[serde(tag = "kind", rename_all = "snake_case")]
        enum Line<'a> {
            Forum {
                scenario: &'a str,
                agents: &'a [String; 2],
                termination: Termination,
                error: &'a Option<String>,
                end_ms: u64,
                mos: Option<f64>,
            },
            Turn(&'a ForumTurn),
        }
        let mut out = serde_json::to_string(&Line::Forum {
            scenario: &self.scenario,
            agents: &self.agents,
            termination: self.termination,
            error: &self.error,
            end_ms: self.end_ms,
            mos: self.mos,
        })
        .expect("serializable");
        out.push('\n');
        for t in &self.turns {
            out.push_str(&serde_json::to_string(&Line::Turn(t)).expect("serializable"));
            out.push('\n');
        }
        out
    }

    /// Dialogue history for the judge, one `speaker: text` line per turn.
    pub fn history(&self) -> String {
        self.turns
            .iter()
            .map(|t| format!("{}: {}", t.agent, t.text))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ForumOptions {
    pub scenario: String,
    pub max_turns: usize,
    /// Both agents quiet this long after the last turn ends the conversation.
    pub silence_window_ms: u64,
    /// Index (0 or 1) of the agent that speaks first.
    pub opener: usize,
}

impl Default for ForumOptions {
    fn default() -> Self {
        ForumOptions {
            scenario: String::new(),
            max_turns: 8,
            silence_window_ms: 4000,
            opener: 0,
        }
    }
}

struct Forum<'a> {
    agents: [&'a mut ForumAgent; 2],
    opts: &'a ForumOptions,
    turns: Vec<ForumTurn>,
    inbox: VecDeque<(usize, u64, String)>,
    last_activity: u64,
    error: Option<String>,
}

impl Forum<'_> {
    fn absorb(&mut self, speaker: usize, events: Vec<PipelineEvent>) {
        for ev in events {
            match ev {
                PipelineEvent::Fault { backend, message, .. } => {
                    self.error.get_or_insert(format!("{}: {backend}: {message}", self.agents[speaker].id));
                }
                PipelineEvent::Engine(rec) => {
                    let Action::BotTurnEnd { session, .. } = rec.action else { continue };
                    let engine = self.agents[speaker].pipeline.engine();
                    let Some(turn) = engine.turns().iter().find(|t| t.session == session) else { continue };
                    let text = join_surfaces(turn.tokens.iter().filter_map(Token::surface));
                    if text.is_empty() || self.turns.len() >= self.opts.max_turns {
                        continue;
                    }
                    self.turns.push(ForumTurn {
                        agent: self.agents[speaker].id.clone(),
                        text: text.clone(),
                        tokens: turn.tokens.iter().map(Token::notation).collect(),
                        start_ms: turn.first_token_ms.unwrap_or(turn.signal_ms),
                        end_ms: rec.t_ms,
                        interrupted: turn.interrupted,
                    });
                    self.last_activity = rec.t_ms;
                    self.inbox.push_back((1 - speaker, rec.t_ms, text));
                }
                _ => {}
            }
        }
    }

    fn done(&self) -> Option<Termination> {
        if self.error.is_some() {
            Some(Termination::Error)
        } else if self.turns.len() >= self.opts.max_turns {
            Some(Termination::MaxTurns)
        } else {
            None
        }
    }
}

/// Lets two agents talk: each finished bot turn is typed into the other
/// agent's session as user input at the time it ended.
pub fn run_forum(a: &mut ForumAgent, b: &mut ForumAgent, opts: &ForumOptions) -> ForumTranscript {
    let ids = [a.id.clone(), b.id.clone()];
    let mut f = Forum {
        agents: [a, b],
        opts,
        turns: Vec::new(),
        inbox: VecDeque::new(),
        last_activity: 0,
        error: None,
    };
    let opener = opts.opener.min(1);
    let evs = f.agents[opener].pipeline.initiate(0);
    f.absorb(opener, evs);
    let (termination, end_ms) = loop {
        if let Some(reason) = f.done() {
            break (reason, f.last_activity);
        }
        if let Some((to, t, text)) = f.inbox.pop_front() {
            let evs = f.agents[to].pipeline.text_chunk(t, &text);
            f.absorb(to, evs);
            continue;
        }
        let next = (0..2)
            .filter_map(|i| f.agents[i].pipeline.next_event_time().map(|t| (t, i)))
            .min();
        let deadline = f.last_activity + opts.silence_window_ms;
        match next {
            Some((t, i)) if t <= deadline => {
                let evs = f.agents[i].pipeline.advance_to(t);
                f.absorb(i, evs);
            }
            _ => break (Termination::Silence, deadline),
        }
    };
    ForumTranscript {
        scenario: opts.scenario.clone(),
        agents: ids,
        turns: f.turns,
        termination,
        error: f.error,
        end_ms,
        mos: None,
    }
}

/// One evaluated utterance or dialogue from an external system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub model: String,
    pub modality: String,
    pub dialogue: String,
    pub reference: String,
    pub hypothesis: String,
    #[serde(default)]
    pub judge_reply: Option<String>,
    #[serde(default)]
    pub mos: Option<f64>,
}

pub fn read_eval_records(text: &str) -> Result<Vec<EvalRecord>, EvalError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with("//"))
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| EvalError::Malformed {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueScore {
    pub model: String,
    pub modality: String,
    pub dialogue: String,
    pub cer: CerCounts,
    pub judge: Option<JudgeScores>,
    pub judge_error: Option<String>,
    pub mos: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub model: String,
    pub modality: String,
    pub dialogues: usize,
    /// Pooled over all dialogues: total errors over total reference characters.
    pub cer_percent: f64,
    pub mos_mean: Option<f64>,
    pub mos_ci95: Option<f64>,
    /// Mean overall judge score.
    pub llm_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dialogues: Vec<DialogueScore>,
    pub summary: Vec<ModelSummary>,
}

fn mean_ci(xs: &[f64]) -> (Option<f64>, Option<f64>) {
    if xs.is_empty() {
        return (None, None);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (Some(mean), None);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (Some(mean), Some(1.96 * var.sqrt() / n.sqrt()))
}

pub fn evaluate_records(records: &[EvalRecord], opts: CerOptions) -> Result<EvalReport, EvalError> {
    let mut dialogues = Vec::with_capacity(records.len());
    for r in records {
        let (judge, judge_error) = match r.judge_reply.as_deref().map(parse_judge_reply) {
            Some(Ok(s)) => (Some(s), None),
            Some(Err(e)) => (None, Some(e.to_string())),
            None => (None, None),
        };
        dialogues.push(DialogueScore {
            model: r.model.clone(),
            modality: r.modality.clone(),
            dialogue: r.dialogue.clone(),
            cer: cer_counts(&r.reference, &r.hypothesis, opts)?,
            judge,
            judge_error,
            mos: r.mos,
        });
    }
    let mut groups: BTreeMap<(String, String), Vec<&DialogueScore>> = BTreeMap::new();
    let mut order = Vec::new();
    for d in &dialogues {
        let key = (d.model.clone(), d.modality.clone());
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(d);
    }
    let summary = order
        .into_iter()
        .map(|key| {
            let ds = &groups[&key];
            let errors: usize = ds.iter().map(|d| d.cer.errors).sum();
            let chars: usize = ds.iter().map(|d| d.cer.reference_chars).sum();
            let mos: Vec<f64> = ds.iter().filter_map(|d| d.mos).collect();
            let (mos_mean, mos_ci95) = mean_ci(&mos);
            let overall: Vec<f64> = ds.iter().filter_map(|d| d.judge.as_ref()).map(|j| j.overall as f64).collect();
            ModelSummary {
                model: key.0,
                modality: key.1,
                dialogues: ds.len(),
                cer_percent: 100.0 * errors as f64 / chars as f64,
                mos_mean,
                mos_ci95,
                llm_score: mean_ci(&overall).0,
            }
        })
        .collect();
    Ok(EvalReport { dialogues, summary })
}

impl EvalReport {
    /// Model-level table followed by the per-dialogue breakdown.
    pub fn render(&self) -> String {
        let mut out = String::from("| Model | Modality | CER (%) | MOS | LLM Score |\n|---|---|---|---|---|\n");
        for s in &self.summary {
            let mos = match (s.mos_mean, s.mos_ci95) {
                (Some(m), Some(ci)) => format!("{m:.2}±{ci:.2}"),
                (Some(m), None) => format!("{m:.2}"),
                _ => "-".into(),
            };
            let llm = s.llm_score.map_or("-".into(), |v| format!("{v:.1}"));
            let _ = writeln!(out, "| {} | {} | {:.2} | {} | {} |", s.model, s.modality, s.cer_percent, mos, llm);
        }
        out.push_str("\n| Dialogue | Model | Modality | CER (%) | Relevance | Adherence | Grammar | Overall |\n|---|---|---|---|---|---|---|---|\n");
        for d in &self.dialogues {
            let cells = match &d.judge {
                Some(j) => format!("{} | {} | {} | {}", j.relevance, j.adherence, j.grammar, j.overall),
                None => "- | - | - | -".into(),
            };
            let _ = writeln!(
                out,
                "| {} | {} | {} | {:.2} | {} |",
                d.dialogue,
                d.model,
                d.modality,
                100.0 * d.cer.rate(),
                cells
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cer_examples() {
        assert_eq!(cer("abc", "abc").unwrap(), 0.0);
        assert!((cer("abc", "axc").unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(cer("ab", "").unwrap(), 1.0);
        assert_eq!(cer("a", "bcd").unwrap(), 3.0);
        assert_eq!(cer("", "x"), Err(EvalError::EmptyReference));
        assert_eq!(cer_with("你 好", "你好", CerOptions::default()).unwrap(), 0.0);
        assert_eq!(cer("你 好", "你好").unwrap(), 1.0 / 3.0);
    }

    #[test]
    fn judge_prompt_is_verbatim() {
        let p = build_judge_prompt("User: hi\nMachine: hello").unwrap();
        assert!(p.system.contains("\nOverall Score: (Relevance + Adherence + Grammar) / 3"));
        assert!(p.system.starts_with("Please evaluate the following conversation"));
        assert_eq!(p.user, "User: hi\nMachine: hello");
        assert_eq!(build_judge_prompt(""), Err(EvalError::EmptyTranscript));
    }

    #[test]
    fn overall_rounding() {
        assert_eq!(overall_score(4, 5, 3), 4);
        assert_eq!(overall_score(5, 5, 5), 5);
        assert_eq!(overall_score(2, 3, 3), 3);
        assert_eq!(overall_score(1, 1, 2), 1);
        assert_eq!(overall_score(1, 2, 2), 2);
    }

    #[test]
    fn parses_typical_replies() {
        let reply = "1. Relevance and Accuracy: 4\n   - Answers the question.\n\
                     2. Adherence to System Prompt: 5/5 - Stays in role.\n\
                     3. **Grammatical Correctness**: 3 - Some slips.\n\nOverall Score: 5";
        let s = parse_judge_reply(reply).unwrap();
        assert_eq!((s.relevance, s.adherence, s.grammar, s.overall), (4, 5, 3, 4));
        assert_eq!(s.reported_overall, Some(5));
        assert_eq!(s.justifications[0], "Answers the question.");
        assert_eq!(s.justifications[1], "Stays in role.");
        let err = parse_judge_reply("Relevance: 4\nno idea").unwrap_err();
        assert!(matches!(err, EvalError::JudgeParse { found: 1, ref raw } if raw.contains("no idea")));
    }

    #[test]
    fn judge_reply_round_trip() {
        let mut s = JudgeScores::new(2, 3, 3);
        s.justifications = ["a".into(), String::new(), "c c".into()];
        let back = parse_judge_reply(&format_judge_reply(&s)).unwrap();
        assert_eq!((back.relevance, back.adherence, back.grammar, back.overall), (2, 3, 3, 3));
        assert_eq!(back.justifications, s.justifications);
    }

    #[test]
    fn scripted_judge_scores() {
        let mut j = ScriptedJudge::new(["Relevance: 5\nAdherence: 4\nGrammar: 4".to_string()]);
        assert_eq!(score_dialogue(&mut j, "A: hi").unwrap().overall, 4);
        assert!(matches!(score_dialogue(&mut j, "A: hi"), Err(EvalError::Backend(_))));
    }

    #[test]
    fn report_pools_counts() {
        let recs = read_eval_records(
            r#"{"model":"m","modality":"s2s","dialogue":"d1","reference":"abcd","hypothesis":"abcd","judge_reply":"Relevance: 4\nAdherence: 4\nGrammar: 4","mos":3.0}
{"model":"m","modality":"s2s","dialogue":"d2","reference":"ab","hypothesis":"","judge_reply":"Relevance: 2\nAdherence: 2\nGrammar: 2","mos":4.0}
{"model":"m","modality":"u2s","dialogue":"d1","reference":"ab","hypothesis":"ab"}"#,
        )
        .unwrap();
        let rep = evaluate_records(&recs, CerOptions::default()).unwrap();
        assert_eq!(rep.summary.len(), 2);
        assert!((rep.summary[0].cer_percent - 100.0 * 2.0 / 6.0).abs() < 1e-9);
        assert_eq!(rep.summary[0].llm_score, Some(3.0));
        assert_eq!(rep.summary[0].mos_mean, Some(3.5));
        assert_eq!(rep.summary[1].llm_score, None);
        let table = rep.render();
        assert!(table.starts_with("| Model | Modality | CER (%) | MOS | LLM Score |"));
        assert!(table.contains("| m | s2s | 33.33 |"));
    }

    fn agent(id: &str, turns: &[&str]) -> ForumAgent {
        let mut doc = String::from(
            r#"{"t":0,"kind":"scenario","name":"forum","mode":"async","user_modality":"text","machine_modality":"text","silence_initiate":false,"eot_default":0.9}"#,
        );
        for (i, t) in turns.iter().enumerate() {
            let steps: Vec<String> = t.split(' ').map(|w| format!("[\"{w}\",0.0]")).collect();
            doc.push_str(&format!("\n{{\"t\":0,\"kind\":\"lm\",\"turn\":{i},\"steps\":[{}]}}", steps.join(",")));
        }
        ForumAgent::from_scenario(id, &crate::sim::load_scenario(&doc).unwrap()).unwrap()
    }

    #[test]
    fn forum_stops_at_max_turns() {
        let mut a = agent("trainer", &["hello there", "lift this", "good job"]);
        let mut b = agent("trainee", &["hi coach", "ok", "thanks"]);
        let opts = ForumOptions {
            max_turns: 4,
            ..Default::default()
        };
        let tr = run_forum(&mut a, &mut b, &opts);
        assert_eq!(tr.termination, Termination::MaxTurns);
        let who: Vec<_> = tr.turns.iter().map(|t| t.agent.as_str()).collect();
        assert_eq!(who, ["trainer", "trainee", "trainer", "trainee"]);
        assert_eq!(tr.turns[1].text, "hi coach");
        assert!(tr.turns.windows(2).all(|w| w[0].end_ms <= w[1].start_ms));
        assert_eq!(tr.to_jsonl().lines().count(), 5);
    }

    #[test]
    fn forum_silence() {
        let mut a = agent("a", &[]);
        let mut b = agent("b", &[]);
        let tr = run_forum(&mut a, &mut b, &ForumOptions::default());
        assert_eq!(tr.termination, Termination::Silence);
        assert!(tr.turns.is_empty());
        assert_eq!(tr.end_ms, 4000);
    }

    #[test]
    fn forum_error_keeps_partial_transcript() {
        let mut a = agent("a", &["fine", "sure"]);
        let mut b = agent("b", &["start", "<error>"]);
        let opts = ForumOptions {
            opener: 1,
            ..Default::default()
        };
        let tr = run_forum(&mut a, &mut b, &opts);
        assert_eq!(tr.termination, Termination::Error);
        assert_eq!(tr.turns.len(), 2);
        assert!(tr.error.as_deref().unwrap().starts_with("b: lm"));
    }
}
