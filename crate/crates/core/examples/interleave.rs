//! Word and unit interleaving, including a stretch of audio the recognizer
//! produced no words for.

use duplex_core::corpus::form_interleaved;
use duplex_core::frontend::units::grid_time;
use duplex_core::frontend::{grid_range, InterleaveState};
use duplex_core::{TimedUnit, TimedWord, Token};

fn show(tokens: &[Token]) -> String {
    tokens.iter().map(Token::notation).collect::<Vec<_>>().join(" ")
}

fn main() {
    let words = vec![
        TimedWord::new("你好", 0, 400).unwrap(),
        // three seconds nobody transcribed
        TimedWord::new("听得到吗", 3400, 4000).unwrap(),
    ];
    let units: Vec<TimedUnit> = grid_range(0, 4200, 25)
        .map(|k| TimedUnit::new(100 + k as u32, grid_time(k, 25)))
        .collect();

    let mut st = InterleaveState::new();
    let mut online = Vec::new();
    for w in &words {
        let got = st.interleave(std::slice::from_ref(w), &units, Some(2000)).unwrap();
        println!("{} -> {} tokens", w.surface, got.len());
        online.extend(got);
    }
    online.extend(st.flush(&units, None, Some(2000)));
    println!("capped gap, {} units recovered:\n  {}", st.units_recovered, show(&online));
    println!("offline, no cap:\n  {}", show(&form_interleaved(&words, &units).unwrap()));
}
