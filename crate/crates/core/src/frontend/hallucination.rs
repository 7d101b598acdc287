use std::collections::HashSet;
use std::path::Path;

use crate::types::TimedWord;

/// Known ASR hallucination strings, compared with all whitespace removed.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct HallucinationPatterns {
    patterns: HashSet<String>,
    max_chars: usize,
}

fn squash(s: &str) -> String {
    s.chars().filter(|c| !c.is_whitespace()).collect()
}

impl HallucinationPatterns {
    pub fn new<I, S>(patterns: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let patterns: HashSet<String> = patterns
            .into_iter()
            .map(|p| squash(p.as_ref()))
            .filter(|p| !p.is_empty())
            .collect();
        let max_chars = patterns.iter().map(|p| p.chars().count()).max().unwrap_or(0);
        HallucinationPatterns {
            patterns,
            max_chars,
        }
    }

    /// Pattern file: one pattern per line, `#` starts a comment line.
    pub fn parse(text: &str) -> Self {
        Self::new(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#')),
        )
    }

    pub fn load(path: impl AsRef<Path>) -> std::io::Result<Self> {
        Ok(Self::parse(&std::fs::read_to_string(path)?))
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }

    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    /// Whether any pattern occurs anywhere in `text`.
    pub fn occurs_in(&self, text: &str) -> bool {
        let text = squash(text);
        self.patterns.iter().any(|p| text.contains(p.as_str()))
    }

    /// Removes maximal runs of words whose joined surfaces equal a pattern.
    /// Repeats until nothing matches, so the result is a fixed point.
    pub fn dehallucinate(&self, words: &[TimedWord]) -> Vec<TimedWord> {
        let mut current = words.to_vec();
        while !self.is_empty() {
            let (next, changed) = self.pass(&current);
            current = next;
            if !changed {
                break;
            }
        }
        current
    }

    fn pass(&self, words: &[TimedWord]) -> (Vec<TimedWord>, bool) {
        let mut out = Vec::with_capacity(words.len());
        let mut changed = false;
        let mut i = 0;
        while i < words.len() {
            let mut joined = String::new();
            let mut run_end = None;
            for (j, w) in words.iter().enumerate().skip(i) {
                joined.push_str(&squash(&w.surface));
                if joined.chars().count() > self.max_chars {
                    break;
                }
                if self.patterns.contains(&joined) {
                    run_end = Some(j + 1);
                }
            }
            match run_end {
                Some(end) => {
                    changed = true;
                    i = end;
                }
                None => {
                    out.push(words[i].clone());
                    i += 1;
                }
            }
        }
        (out, changed)
    }
}
