//! Stream atoms shared by every stage of the pipeline.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::TypeError;

/// Index of a discrete speech unit (a cluster id of the speech encoder).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UnitId(pub u32);

impl UnitId {
    pub fn checked(index: u32, vocab_size: u32) -> Result<Self, TypeError> {
        if index < vocab_size {
            Ok(UnitId(index))
        } else {
            Err(TypeError::UnitOutOfRange { index, vocab_size })
        }
    }
}

impl fmt::Display for UnitId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "<unit:{}>", self.0)
    }
}

/// A speech unit anchored on the unit grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TimedUnit {
    pub unit: UnitId,
    pub start_ms: u64,
}

impl TimedUnit {
    pub fn new(unit: u32, start_ms: u64) -> Self {
        TimedUnit { unit: UnitId(unit), start_ms }
    }
}

/// One element of a model-facing sequence.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Token {
    Text { surface: String, id: u32 },
    Unit(UnitId),
    Header(String),
    EndOfTurn,
}

impl Token {
    /// Text token with a stable id derived from the surface (FNV-1a).
    pub fn text(surface: impl Into<String>) -> Self {
        let surface = surface.into();
        let id = surface_id(&surface);
        Token::Text { surface, id }
    }

    pub fn unit(index: u32) -> Self {
        Token::Unit(UnitId(index))
    }

    pub fn header(speaker: impl Into<String>) -> Result<Self, TypeError> {
        let speaker = speaker.into();
        if speaker.trim().is_empty() {
            return Err(TypeError::EmptySpeaker);
        }
        Ok(Token::Header(speaker))
    }

    pub fn is_text(&self) -> bool {
        matches!(self, Token::Text { .. })
    }

    pub fn is_unit(&self) -> bool {
        matches!(self, Token::Unit(_))
    }

    pub fn is_header(&self) -> bool {
        matches!(self, Token::Header(_))
    }

    pub fn surface(&self) -> Option<&str> {
        match self {
            Token::Text { surface, .. } => Some(surface),
            _ => None,
        }
    }

    /// Validates the type invariants against a unit vocabulary.
    /// Inverse of the [`FromStr`] notation.
    pub fn notation(&self) -> String {
        match self {
            Token::Text { surface, .. } => surface.clone(),
            Token::Unit(u) => u.to_string(),
            Token::Header(s) => format!("<header:{s}>"),
            Token::EndOfTurn => "<eot>".into(),
        }
    }

    pub fn validate(&self, unit_vocab_size: u32) -> Result<(), TypeError> {
        match self {
            Token::Unit(u) => UnitId::checked(u.0, unit_vocab_size).map(|_| ()),
            Token::Header(s) if s.trim().is_empty() => Err(TypeError::EmptySpeaker),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Text { surface, .. } => f.write_str(surface),
            Token::Unit(u) => write!(f, "{u}"),
            Token::Header(s) => write!(f, "<|start_header_id|>{s}<|end_header_id|>"),
            Token::EndOfTurn => f.write_str("<|eot_id|>"),
        }
    }
}

/// Compact notation used by scenario scripts: `<unit:N>`, `<eot>`, `<header:S>`, anything
/// else is a text token.
impl FromStr for Token {
    type Err = TypeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "<eot>" || s == "<|eot_id|>" {
            return Ok(Token::EndOfTurn);
        }
        if let Some(rest) = s.strip_prefix("<unit:").and_then(|r| r.strip_suffix('>')) {
            let index = rest
                .parse::<u32>()
                .map_err(|_| TypeError::BadTokenNotation(s.to_string()))?;
            return Ok(Token::unit(index));
        }
        if let Some(rest) = s.strip_prefix("<header:").and_then(|r| r.strip_suffix('>')) {
            return Token::header(rest);
        }
        if s.is_empty() {
            return Err(TypeError::BadTokenNotation(s.to_string()));
        }
        Ok(Token::text(s))
    }
}

fn surface_id(s: &str) -> u32 {
    let mut hash: u32 = 0x811c_9dc5;
    for b in s.bytes() {
        hash ^= b as u32;
        hash = hash.wrapping_mul(0x0100_0193);
    }
    hash
}

/// Sequence modality of one side of a conversation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Text,
    Unit,
    Hybrid,
}

impl Modality {
    /// Name used inside system prompts; interleaved sequences are called "speech" there.
    pub fn prompt_name(self) -> &'static str {
        match self {
            Modality::Text => "text",
            Modality::Unit => "unit",
            Modality::Hybrid => "speech",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::Text => "text",
            Modality::Unit => "unit",
            Modality::Hybrid => "hybrid",
        })
    }
}

impl FromStr for Modality {
    type Err = TypeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "text" => Ok(Modality::Text),
            "unit" => Ok(Modality::Unit),
            "hybrid" | "speech" => Ok(Modality::Hybrid),
            other => Err(TypeError::UnknownModality(other.to_string())),
        }
    }
}

/// A confirmed transcript word with its half-open time span `[start_ms, end_ms)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TimedWord {
    #[serde(rename = "w")]
    pub surface: String,
    #[serde(rename = "s")]
    pub start_ms: u64,
    #[serde(rename = "e")]
    pub end_ms: u64,
}

impl TimedWord {
    pub fn new(surface: impl Into<String>, start_ms: u64, end_ms: u64) -> Result<Self, TypeError> {
        if start_ms > end_ms {
            return Err(TypeError::InvertedSpan { start_ms, end_ms });
        }
        Ok(TimedWord {
            surface: surface.into(),
            start_ms,
            end_ms,
        })
    }

    pub fn contains(&self, t_ms: u64) -> bool {
        self.start_ms <= t_ms && t_ms < self.end_ms
    }
}

/// Splits typed text into word tokens; Han characters become one token each.
pub fn text_to_tokens(text: &str) -> Vec<Token> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let mut pending = String::new();
        for c in word.chars() {
            if is_han(c) {
                if !pending.is_empty() {
                    out.push(Token::text(std::mem::take(&mut pending)));
                }
                out.push(Token::text(c.to_string()));
            } else {
                pending.push(c);
            }
        }
        if !pending.is_empty() {
            out.push(Token::text(pending));
        }
    }
    out
}

/// CJK unified ideographs, extensions A-F and compatibility ideographs.
pub fn is_han(c: char) -> bool {
    matches!(c as u32,
        0x4E00..=0x9FFF
        | 0x3400..=0x4DBF
        | 0x20000..=0x2EBEF
        | 0xF900..=0xFAFF
        | 0x2F800..=0x2FA1F)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_range_is_enforced() {
        assert!(UnitId::checked(1023, 1024).is_ok());
        assert!(matches!(
            UnitId::checked(1024, 1024),
            Err(TypeError::UnitOutOfRange { .. })
        ));
        assert!(Token::unit(5000).validate(1024).is_err());
    }

    #[test]
    fn header_needs_a_speaker() {
        assert!(Token::header("").is_err());
        assert!(Token::header("  ").is_err());
        assert_eq!(Token::header("User").unwrap(), Token::Header("User".into()));
    }

    #[test]
    fn notation_parses() {
        assert_eq!("<eot>".parse::<Token>().unwrap(), Token::EndOfTurn);
        assert_eq!("<unit:12>".parse::<Token>().unwrap(), Token::unit(12));
        assert_eq!("<header:Machine>".parse::<Token>().unwrap(), Token::Header("Machine".into()));
        assert_eq!("好".parse::<Token>().unwrap(), Token::text("好"));
        assert!("<unit:x>".parse::<Token>().is_err());
    }

    #[test]
    fn text_ids_are_stable() {
        assert_eq!(Token::text("hi"), Token::text("hi"));
        assert_ne!(Token::text("hi"), Token::text("ho"));
    }

    #[test]
    fn typed_text_splits_han() {
        let toks = text_to_tokens("你好 hello 世界x");
        let s: Vec<_> = toks.iter().map(|t| t.surface().unwrap()).collect();
        assert_eq!(s, ["你", "好", "hello", "世", "界", "x"]);
    }

    #[test]
    fn word_span_rejects_inversion() {
        assert!(TimedWord::new("a", 10, 5).is_err());
        let w = TimedWord::new("a", 10, 20).unwrap();
        assert!(w.contains(10) && !w.contains(20));
    }

    #[test]
    fn hybrid_is_speech_in_prompts() {
        assert_eq!(Modality::Hybrid.prompt_name(), "speech");
        assert_eq!("speech".parse::<Modality>().unwrap(), Modality::Hybrid);
    }
}
