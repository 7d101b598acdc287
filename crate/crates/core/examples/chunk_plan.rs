//! Dynamic chunk schedule for a bot reply streamed at a given token rate.
//!
//!     cargo run -p duplex-core --example chunk_plan -- 100 50 20
//!
//! Arguments: tokens per second, epsilon (ms), decoder processing per chunk (ms).

use duplex_core::decoder::{fixed_chunk_count, run_stream, StreamParams};
use duplex_core::sim::scripted_generation_rate_check;

fn main() {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<f64>().expect("numeric argument"));
    let rate = args.next().unwrap_or(100.0);
    let eps = args.next().unwrap_or(50.0) as u64;
    let proc_ms = args.next().unwrap_or(0.0) as u64;
    let gap = 1000.0 / rate;
    let arrivals: Vec<u64> = (0..200).map(|i| 400 + (i as f64 * gap) as u64).collect();

    println!("{rate} tok/s against 25 Hz playback: {:?}", scripted_generation_rate_check(rate, 25.0));
    let out = run_stream(&arrivals, StreamParams::new(40, eps, proc_ms)).unwrap();
    println!("{:>6} {:>6} {:>8} {:>8}  on time", "t_ms", "units", "play", "until");
    for e in &out.plan.entries {
        println!(
            "{:>6} {:>6} {:>8} {:>8}  {}",
            e.t_ms, e.n_units, e.playback_start_ms, e.playback_end_ms, e.on_schedule
        );
    }
    println!(
        "{} chunks (fixed 100 ms chunking: {}), {} underruns, {} gaps in playback",
        out.plan.len(),
        fixed_chunk_count(&arrivals, 100),
        out.underruns.len(),
        out.starved.len()
    );
}
