//! Prefix confirmation over a stream of partial hypotheses, with a
//! sign-off phrase filtered out.

use std::collections::VecDeque;

use duplex_core::frontend::{AsrState, HallucinationPatterns};
use duplex_core::{AudioSegment, BackendError, HypothesisSource, TimedWord};

struct Hypotheses(VecDeque<&'static str>);

impl HypothesisSource for Hypotheses {
    fn transcribe(&mut self, _: &[AudioSegment]) -> Result<Vec<TimedWord>, BackendError> {
        let line = self.0.pop_front().unwrap_or("");
        Ok(line
            .split_whitespace()
            .enumerate()
            .map(|(i, w)| TimedWord::new(w, i as u64 * 300, i as u64 * 300 + 280).unwrap())
            .collect())
    }
}

fn main() {
    let patterns = HallucinationPatterns::new(["字幕由Amara.org社区提供"]);
    let mut asr = AsrState::new(10, patterns);
    let mut backend = Hypotheses(VecDeque::from([
        "今天",
        "今天 天汽",
        "今天 天气 不错",
        "今天 天气 不错 我们",
        "今天 天气 不错 我们 出去 字幕由Amara.org社区提供",
        "今天 天气 不错 我们 出去 字幕由Amara.org社区提供",
    ]));
    for i in 0..6u64 {
        let out = asr.ingest(AudioSegment::new(i, i * 500, 500), &mut backend).unwrap();
        let hyp: Vec<_> = asr.prev_hypothesis().iter().map(|w| w.surface.as_str()).collect();
        let conf: Vec<_> = out.confirmed.iter().map(|w| w.surface.as_str()).collect();
        let gone: Vec<_> = out.removed.iter().map(|w| w.surface.as_str()).collect();
        println!("tick {i}: heard {hyp:?} confirmed {conf:?} dropped {gone:?}");
    }
    let all: Vec<_> = asr.confirmed().iter().map(|w| w.surface.as_str()).collect();
    println!("transcript: {}", all.join(" "));
}
