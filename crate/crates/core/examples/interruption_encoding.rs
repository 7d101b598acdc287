//! Writing an interruption into a bot turn and reading it back.

use duplex_core::turn::{decode_interruption, encode_interruption};
use duplex_core::Token;

fn main() {
    let turn: Vec<Token> = ["从前", "<unit:100>", "有", "<unit:7>", "一座", "山"]
        .iter()
        .map(|s| s.parse::<Token>().unwrap())
        .collect();
    let cut_in = vec![Token::text("等等")];
    let encoded = encode_interruption(&turn, 3, "Machine", "User", &cut_in).unwrap();
    println!("{}", encoded.iter().map(Token::notation).collect::<Vec<_>>().join(" "));
    let d = decode_interruption(&encoded).unwrap();
    println!("prefix     {:?}", d.prefix.iter().map(Token::notation).collect::<Vec<_>>());
    println!("{:<10} {:?}", d.interrupter, d.interrupting.iter().map(Token::notation).collect::<Vec<_>>());
    println!("{:<10} {:?}", d.resumed_by, d.suffix.iter().map(Token::notation).collect::<Vec<_>>());
}
