//! Score external model outputs: CER, judge ratings and MOS per model.
//!
//!     cargo run -p duplex-core --example eval_report [outputs.jsonl]

use std::path::PathBuf;

use duplex_core::eval::{build_judge_prompt, cer, evaluate_records, parse_judge_reply, read_eval_records, CerOptions};

fn main() {
    let path = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| {
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/eval/dialogue_outputs.jsonl")
    });
    println!("CER 今天天气很好 / 今天天很好: {:.3}\n", cer("今天天气很好", "今天天很好").unwrap());

    let records = read_eval_records(&std::fs::read_to_string(&path).unwrap()).unwrap();
    let prompt = build_judge_prompt(&records[0].hypothesis).unwrap();
    println!("judge prompt for {}:\n{}\n---\n{}\n", records[0].dialogue, prompt.system, prompt.user);
    if let Some(reply) = &records[0].judge_reply {
        println!("parsed reply: {:?}\n", parse_judge_reply(reply).unwrap());
    }

    let report = evaluate_records(&records, CerOptions::default()).unwrap();
    print!("{}", report.render());
}
