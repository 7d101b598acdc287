//! A live server and a WebSocket client in one process. The client asks
//! for a story, cuts in once a few tokens have arrived, and prints what the
//! server sends back.
//!
//!     cargo run -p duplex-service --example ws_session

use std::time::Duration;

use futures::{SinkExt, StreamExt};
use tokio::net::TcpListener;
use tokio_tungstenite::tungstenite::Message;

use duplex_core::sim::load_scenario_file;
use duplex_service::wire::TextChunk;
use duplex_service::{decode_message, encode_message, ClockMode, Inbound, Server, ServerOptions, WireKind};

fn typed(seq: u64, text: &str) -> Message {
    let msg = Inbound::Text(TextChunk {
        text: text.into(),
        last: false,
    })
    .to_message(0)
    .with_seq(seq);
    Message::text(encode_message(&msg).unwrap())
}

#[tokio::main]
async fn main() {
    let sc = load_scenario_file(format!("{}/../../scenarios/interruption.jsonl", env!("CARGO_MANIFEST_DIR"))).unwrap();
    let mut opts = ServerOptions::new(ClockMode::Live, sc.config.clone());
    opts.scenario = sc;
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(Server::new(opts).serve_ws(listener));

    let (mut ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}/session")).await.unwrap();
    ws.send(typed(1, "讲 个 故事 吗")).await.unwrap();
    let mut tokens = 0;
    let mut cut = false;
    let mut mid_line = false;
    while let Ok(Some(Ok(frame))) = tokio::time::timeout(Duration::from_secs(3), ws.next()).await {
        let Message::Text(text) = frame else { continue };
        let m = decode_message(text.as_str()).unwrap();
        match m.kind {
            WireKind::BotToken => {
                tokens += 1;
                mid_line = true;
                print!("{} ", m.payload["token"].as_str().unwrap_or(""));
            }
            _ => {
                if std::mem::take(&mut mid_line) {
                    println!();
                }
                println!("[{:>5} ms] {} {}", m.t_ms, m.kind, m.payload);
            }
        }
        if tokens == 8 && !cut {
            cut = true;
            ws.send(typed(2, "停")).await.unwrap();
        }
        if cut && m.kind == WireKind::BotText {
            break;
        }
    }
    ws.close(None).await.ok();
}
