//! Two scripted agents talking to each other until the line goes quiet.
//!
//!     cargo run -p duplex-core --example forum

use std::path::PathBuf;

use duplex_core::eval::{build_judge_prompt, run_forum, ForumAgent, ForumOptions};
use duplex_core::sim::load_scenario_file;

fn main() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/forum");
    let mut a = ForumAgent::from_scenario("agent-a", &load_scenario_file(dir.join("a.jsonl")).unwrap()).unwrap();
    let mut b = ForumAgent::from_scenario("agent-b", &load_scenario_file(dir.join("b.jsonl")).unwrap()).unwrap();
    let opts = ForumOptions {
        scenario: "greeting".into(),
        ..ForumOptions::default()
    };
    let transcript = run_forum(&mut a, &mut b, &opts);
    for t in &transcript.turns {
        println!("[{:>5}-{:<5}] {}: {}", t.start_ms, t.end_ms, t.agent, t.text);
    }
    println!("ended by {:?} at {} ms\n", transcript.termination, transcript.end_ms);
    let prompt = build_judge_prompt(&transcript.history()).unwrap();
    println!("text sent to the judge:\n{}", prompt.user);
}
