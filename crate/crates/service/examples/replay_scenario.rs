//! Replay a scenario through a session and check its expectations.
//!
//!     cargo run -p duplex-service --example replay_scenario -- scenarios/interruption.jsonl

use duplex_core::sim::load_scenario_file;
use duplex_service::{check_expectations, interrupt_violations, replay, TraceReport};

fn main() {
    let path = std::env::args().nth(1).unwrap_or_else(|| {
        format!("{}/../../scenarios/interruption.jsonl", env!("CARGO_MANIFEST_DIR"))
    });
    let sc = load_scenario_file(&path).unwrap();
    let r = replay(&sc).unwrap();
    for line in &r.trace {
        let m = line.decode().unwrap();
        if m.kind.name() != "bot_token" {
            println!("{} {:>5} {:<15} {}", line.dir.marker(), line.t_ms, m.kind.name(), m.payload);
        }
    }
    println!();
    for res in check_expectations(&r, &sc.expectations) {
        println!("{} {}", if res.passed { "ok  " } else { "FAIL" }, res.description);
    }
    println!("order violations: {:?}\n", interrupt_violations(&r.outbound()));
    print!("{}", TraceReport::from_trace(&r.trace).unwrap().render());
}
