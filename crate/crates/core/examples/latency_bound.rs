//! End-to-end latency bound from measured component spans.
//!
//!     cargo run -p duplex-core --example latency_bound -- 900 400 200 1000

use duplex_core::latency::{Component, LatencyLedger, TurnMode};

fn main() {
    let args: Vec<u64> = std::env::args().skip(1).map(|a| a.parse().expect("spans are integers (ms)")).collect();
    let spans = if args.len() == 4 { args } else { vec![900, 400, 200, 1000] };
    let mut ledger = LatencyLedger::new();
    for (c, ms) in Component::ALL.into_iter().zip(&spans) {
        ledger.record(c, *ms);
        println!("{:<20} {ms:>5} ms", c.name());
    }
    for mode in [TurnMode::Synchronous, TurnMode::Asynchronous] {
        let bound = ledger.latency_bound(mode).unwrap();
        println!("{mode:?} bound: {bound} ms");
    }
}
