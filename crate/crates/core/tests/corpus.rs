use std::collections::BTreeMap;

use duplex_core::corpus::{
    deinterleave, filter_sample, insert_interruption_record, render_training_sample, DialogueRecord, DialogueTurn,
    FilterRules, FilterVerdict, InterruptionAnnotation, RejectReason, RenderRequest, TaskFamily,
};
use duplex_core::{Modality, TimedUnit, TimedWord, Token};

const RULES: &str = r#"
han_fraction_min = 0.2
hallucination_patterns = ["请不吝点赞 订阅 转发 打赏支持明镜与点点栏目", "字幕由Amara.org社区提供"]
"#;

fn turn(speaker: &str, words: &[&str], start: u64) -> DialogueTurn {
    let words: Vec<TimedWord> = words
        .iter()
        .enumerate()
        .map(|(i, s)| TimedWord::new(*s, start + i as u64 * 240, start + (i as u64 + 1) * 240).unwrap())
        .collect();
    let end = start + words.len() as u64 * 240;
    let units = (start / 40..end.div_ceil(40)).map(|k| TimedUnit::new(k as u32 % 1024, k * 40)).collect();
    DialogueTurn::new(speaker, words, units)
}

fn dialogue(turns: &[(&str, &[&str])]) -> DialogueRecord {
    let mut t = 0;
    let turns = turns
        .iter()
        .map(|(s, w)| {
            let d = turn(s, w, t);
            t += w.len() as u64 * 240 + 500;
            d
        })
        .collect();
    DialogueRecord {
        scenario: "你是一位旅行顾问".into(),
        turns,
        interruptions: Vec::new(),
    }
}

fn suite() -> Vec<(DialogueRecord, FilterVerdict)> {
    use FilterVerdict::*;
    use RejectReason::*;
    vec![
        (dialogue(&[("User", &["你好", "我想", "去", "北京"]), ("Machine", &["好的", "几月", "出发"])]), Keep),
        (dialogue(&[("User", &["天气", "怎么样"]), ("Machine", &["今天", "晴天", "OK"])]), Keep),
        (dialogue(&[("User", &["推荐", "一家", "餐厅"]), ("Machine", &["这家", "不错"]), ("User", &["谢谢"])]), Keep),
        (dialogue(&[("User", &["hello", "there"]), ("Machine", &["hi", "how", "are", "you"])]), Reject(Language)),
        (dialogue(&[("User", &["book", "a", "flight"]), ("Machine", &["sure", "when"])]), Reject(Language)),
        (dialogue(&[("User", &["1234"]), ("Machine", &["5678"])]), Reject(Language)),
        (dialogue(&[("User", &["你好"]), ("Machine", &[])]), Reject(MissingTurn)),
        (dialogue(&[("User", &[]), ("Machine", &["请说"])]), Reject(MissingTurn)),
        (dialogue(&[("User", &["你好"]), ("User", &["在吗"]), ("Machine", &["在"])]), Reject(MissingTurn)),
        (dialogue(&[]), Reject(Language)),
        (
            dialogue(&[("User", &["你好"]), ("Machine", &["请不吝点赞", "订阅", "转发", "打赏支持明镜与点点栏目"])]),
            Reject(Hallucination),
        ),
        (dialogue(&[("User", &["字幕由Amara.org社区提供"]), ("Machine", &["好的"])]), Reject(Hallucination)),
        (dialogue(&[("User", &["subtitles", "字幕由Amara.org社区提供"]), ("Machine", &[])]), Reject(Hallucination)),
    ]
}

#[test]
fn filter_rules_are_exact_on_constructed_suite() {
    let rules = FilterRules::from_toml(RULES).unwrap();
    let mut fired: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for (i, (d, label)) in suite().into_iter().enumerate() {
        let verdict = filter_sample(&d, &rules);
        if let FilterVerdict::Reject(r) = verdict {
            let e = fired.entry(r.to_string()).or_default();
            e.0 += 1;
            e.1 += usize::from(verdict == label);
        }
        assert_eq!(verdict, label, "case {i}");
    }
    for (rule, (n, correct)) in fired {
        assert_eq!(n, correct, "{rule} precision");
    }
}

#[test]
fn interrupted_turn_is_not_a_missing_turn() {
    let rules = FilterRules::from_toml(RULES).unwrap();
    let d = dialogue(&[("User", &["讲个", "故事"]), ("Machine", &["从前", "有座", "山", "山里", "有座", "庙"])]);
    let ann = InterruptionAnnotation {
        turn: 1,
        split: 3,
        interrupter: "User".into(),
        words: vec![TimedWord::new("等等", 1700, 1900).unwrap()],
        units: Vec::new(),
    };
    let d = insert_interruption_record(&d, ann).unwrap();
    assert_eq!(filter_sample(&d, &rules), FilterVerdict::Keep);
}

#[test]
fn rendered_spoken_dialogue_deinterleaves() {
    let d = dialogue(&[("User", &["讲个", "故事"]), ("Machine", &["从前", "有座", "山", "山里", "有座", "庙"])]);
    let ann = InterruptionAnnotation {
        turn: 1,
        split: 3,
        interrupter: "User".into(),
        words: vec![TimedWord::new("等等", 1700, 1900).unwrap()],
        units: (1700 / 40..1900 / 40).map(|k| TimedUnit::new(k as u32, k * 40)).collect(),
    };
    let d = insert_interruption_record(&d, ann).unwrap();
    let req = RenderRequest::new(TaskFamily::SpokenDialogue, Modality::Hybrid, Modality::Hybrid);
    let sample = render_training_sample(&d, &req).unwrap();
    assert!(!sample.truncated);
    assert_eq!(sample.tokens.iter().filter(|t| **t == Token::EndOfTurn).count(), 3);
    let segments = deinterleave(&sample.tokens);
    let flat: Vec<(String, Vec<String>)> = segments
        .iter()
        .map(|s| (s.speaker.clone(), s.words.clone()))
        .collect();
    let words = |ws: &[&str]| ws.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    assert_eq!(
        flat,
        vec![
            ("User".into(), words(&["讲个", "故事"])),
            ("Machine".into(), words(&["从前", "有座", "山"])),
            ("User".into(), words(&["等等"])),
            ("Machine".into(), words(&["山里", "有座", "庙"])),
        ]
    );
    // every unit of every turn survives
    let units: usize = segments.iter().map(|s| s.units.len()).sum();
    let expected: usize = d.turns.iter().map(|t| t.units.len()).sum::<usize>() + d.interruptions[0].units.len();
    assert_eq!(units, expected);
}

#[test]
fn disallowed_pairs_are_rejected() {
    let d = dialogue(&[("User", &["你好"]), ("Machine", &["你好"])]);
    let req = RenderRequest::new(TaskFamily::Asr, Modality::Text, Modality::Unit);
    assert!(render_training_sample(&d, &req).is_err());
    let asr = RenderRequest::new(TaskFamily::Asr, Modality::Unit, Modality::Text);
    let s = render_training_sample(&d, &asr).unwrap();
    assert!(s.system_prompt.contains("speech recognition"));
}
