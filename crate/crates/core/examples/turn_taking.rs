//! The same generated conversation under both turn-taking modes.
//!
//!     cargo run -p duplex-core --example turn_taking -- 3 interruption

use duplex_core::latency::TurnMode;
use duplex_core::pipeline::run_scenario;
use duplex_core::sim::{generate_scenario, ScenarioKind};

fn main() {
    let mut args = std::env::args().skip(1);
    let seed = args.next().map_or(1, |s| s.parse().expect("seed"));
    let kind = match args.next().as_deref() {
        Some(k) => ScenarioKind::ALL
            .into_iter()
            .find(|x| format!("{x:?}").eq_ignore_ascii_case(k))
            .expect("unknown scenario kind"),
        None => ScenarioKind::Interruption,
    };
    let sc = generate_scenario(seed, kind);
    println!("scenario {}", sc.name);
    for mode in [TurnMode::Synchronous, TurnMode::Asynchronous] {
        let (p, _) = run_scenario(&sc.with_mode(mode)).unwrap();
        println!("{mode:?}");
        for t in p.engine().turns() {
            println!(
                "  turn {:>2}  first token {:>5}  {}{}{}",
                t.session,
                t.first_token_latency_ms().map_or("-".into(), |v| format!("{v}ms")),
                t.text(),
                if t.interrupted { "  [interrupted]" } else { "" },
                if t.initiated { "  [initiated]" } else { "" },
            );
        }
    }
}
