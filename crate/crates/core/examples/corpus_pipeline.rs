//! Filter a dialogue corpus, add an interruption, and render training samples.
//!
//!     cargo run -p duplex-core --example corpus_pipeline

use std::path::PathBuf;

use duplex_core::corpus::{
    deinterleave, filter_sample, insert_interruption_record, read_dialogues, render_training_sample, FilterRules,
    FilterVerdict, InterruptionAnnotation, RenderRequest, TaskFamily,
};
use duplex_core::Modality;

fn main() {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let rules = FilterRules::from_toml(&std::fs::read_to_string(root.join("filter_rules.toml")).unwrap()).unwrap();
    let dialogues = read_dialogues(&std::fs::read_to_string(root.join("corpus/dialogues.jsonl")).unwrap()).unwrap();

    let mut kept = Vec::new();
    for d in dialogues {
        let verdict = filter_sample(&d, &rules);
        println!("{:<28} {verdict:?}", d.scenario);
        if verdict == FilterVerdict::Keep {
            kept.push(d);
        }
    }

    let annotations = std::fs::read_to_string(root.join("corpus/annotations.jsonl")).unwrap();
    let ann: InterruptionAnnotation = serde_json::from_str(annotations.lines().next().unwrap()).unwrap();
    let story = kept.last().unwrap();
    let story = insert_interruption_record(story, ann).unwrap();
    println!("\ninterrupted turn {} of {:?}", story.interruptions[0].turn, story.scenario);

    for (input, output) in [(Modality::Unit, Modality::Hybrid), (Modality::Hybrid, Modality::Hybrid)] {
        let req = RenderRequest::new(TaskFamily::SpokenDialogue, input, output);
        let sample = render_training_sample(&story, &req).unwrap();
        let units = sample.tokens.iter().filter(|t| t.is_unit()).count();
        println!(
            "{input}->{output}: {} tokens, {units} units, truncated {}",
            sample.tokens.len(),
            sample.truncated
        );
        if input == Modality::Hybrid {
            for turn in deinterleave(&sample.tokens) {
                println!("  {:<8} {} ({} units)", turn.speaker, turn.words.join(" "), turn.units.len());
            }
        }
    }
}
