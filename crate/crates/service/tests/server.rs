use std::net::SocketAddr;
use std::path::PathBuf;
use std::time::Duration;

use futures::{SinkExt, StreamExt};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader};
use tokio::net::{TcpListener, TcpStream};
use tokio_tungstenite::tungstenite::Message;

use duplex_core::sim::{load_scenario_file, Scenario};
use duplex_service::replay::client_lines;
use duplex_service::wire::{Feedback, TextChunk, Vote};
use duplex_service::{
    decode_message, encode_message, interrupt_violations, parse_trace, ClockMode, Direction, Inbound, Server, ServerOptions,
    Session, SessionHandle, WireKind, WireMessage,
};

fn scenario(name: &str) -> Scenario {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join(format!("../../scenarios/{name}.jsonl"));
    load_scenario_file(path).unwrap()
}

fn options(sc: &Scenario, mode: ClockMode) -> ServerOptions {
    let mut opts = ServerOptions::new(mode, sc.config.clone());
    opts.scenario = sc.clone();
    opts
}

async fn tcp_server(opts: ServerOptions) -> (Server, SocketAddr) {
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let server = Server::new(opts);
    tokio::spawn(server.clone().serve_tcp(listener));
    (server, addr)
}

async fn ws_server(opts: ServerOptions) -> (Server, SocketAddr) {
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let server = Server::new(opts);
    tokio::spawn(server.clone().serve_ws(listener));
    (server, addr)
}

/// What a simulated-clock session answers to `lines`, computed in process.
fn local(sc: &Scenario, lines: &[String], settle: bool) -> Vec<String> {
    let handle = SessionHandle {
        id: 1,
        config: sc.config.clone(),
        mode: ClockMode::Sim,
    };
    let mut s = Session::new(handle, sc).unwrap();
    let mut out = Vec::new();
    for l in lines {
        let t = decode_message(l).unwrap().t_ms;
        out.extend(s.catch_up(l, t));
        out.extend(s.receive(l, t).out);
    }
    if settle {
        out.extend(s.settle());
    }
    out.iter().map(|m| encode_message(m).unwrap()).collect()
}

/// Sends `lines` over TCP with optional pauses, half-closes, and collects
/// everything the server says until it hangs up.
async fn tcp_client(addr: SocketAddr, lines: Vec<String>, pauses: Vec<u64>) -> Vec<String> {
    let sock = TcpStream::connect(addr).await.unwrap();
    let (r, mut w) = sock.into_split();
    let reader = tokio::spawn(async move {
        let mut got = Vec::new();
        let mut lines = BufReader::new(r).lines();
        while let Some(l) = lines.next_line().await.unwrap() {
            got.push(format!("{l}\n"));
        }
        got
    });
    for (i, l) in lines.iter().enumerate() {
        w.write_all(l.as_bytes()).await.unwrap();
        if let Some(ms) = pauses.get(i) {
            tokio::time::sleep(Duration::from_millis(*ms)).await;
        }
    }
    w.shutdown().await.unwrap();
    tokio::time::timeout(Duration::from_secs(20), reader).await.unwrap().unwrap()
}

fn text(t: u64, seq: u64, s: &str) -> String {
    let msg = Inbound::Text(TextChunk {
        text: s.into(),
        last: false,
    })
    .to_message(t)
    .with_seq(seq);
    encode_message(&msg).unwrap()
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn tcp_sim_session_matches_local_replay() {
    for name in ["basic", "interruption"] {
        let sc = scenario(name);
        let (_, addr) = tcp_server(options(&sc, ClockMode::Sim)).await;
        let lines = client_lines(&sc);
        let got = tcp_client(addr, lines.clone(), vec![]).await;
        assert_eq!(got, local(&sc, &lines, true), "{name}");
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn interleaved_sessions_stay_apart() {
    let sc = scenario("interruption");
    let (server, addr) = tcp_server(options(&sc, ClockMode::Sim)).await;
    let words = ["讲", "个", "故事", "吗", "停", "你", "好", "==="];
    let mut clients = Vec::new();
    let mut expected = Vec::new();
    for k in 0..8u64 {
        let mut rng = StdRng::seed_from_u64(k);
        let mut t = 0;
        let n = rng.gen_range(2..8);
        let lines: Vec<String> = (1..=n)
            .map(|seq| {
                t += rng.gen_range(50..900);
                let w = words[rng.gen_range(0..words.len())];
                text(t, seq, w)
            })
            .collect();
        let pauses = (0..n).map(|_| rng.gen_range(0..15)).collect();
        expected.push(local(&sc, &lines, true));
        clients.push(tokio::spawn(tcp_client(addr, lines, pauses)));
    }
    for (k, c) in clients.into_iter().enumerate() {
        assert_eq!(c.await.unwrap(), expected[k], "client {k}");
    }
    let infos = server.sessions();
    assert_eq!(infos.len(), 8);
    assert!(infos.iter().all(|i| !i.open && i.transport == "tcp"));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn websocket_session_and_endpoints() {
    let sc = scenario("basic");
    let (server, addr) = ws_server(options(&sc, ClockMode::Sim)).await;
    let (mut ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}/session")).await.unwrap();
    let mut lines = client_lines(&sc);
    // a query far in the future drains the session without closing the socket
    let n = lines.len() as u64;
    lines.push(encode_message(&Inbound::Query.to_message(10_000).with_seq(n + 1)).unwrap());
    // two lines in one frame are split by the server
    let (a, b) = lines.split_at(1);
    ws.send(Message::text(a.concat())).await.unwrap();
    ws.send(Message::text(b.concat())).await.unwrap();
    let expected = local(&sc, &lines, false);
    let mut got = Vec::new();
    while got.len() < expected.len() {
        let msg = tokio::time::timeout(Duration::from_secs(10), ws.next()).await.unwrap().unwrap().unwrap();
        if let Message::Text(t) = msg {
            got.push(t.as_str().to_string());
        }
    }
    assert_eq!(got, expected);
    let last = decode_message(got.last().unwrap()).unwrap();
    assert_eq!(last.kind, WireKind::StateUpdate);

    let health = reqwest_lite(addr, "/health").await;
    assert!(health.ends_with("ok"), "{health}");
    let listing = reqwest_lite(addr, "/sessions").await;
    assert!(listing.contains("\"transport\":\"ws\""), "{listing}");
    ws.close(None).await.unwrap();
    drop(ws);
    for _ in 0..100 {
        if server.sessions().iter().all(|i| !i.open) {
            return;
        }
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
    panic!("ws session still open after close");
}

/// Minimal HTTP/1.0 GET, enough for the two plain endpoints.
async fn reqwest_lite(addr: SocketAddr, path: &str) -> String {
    let mut s = TcpStream::connect(addr).await.unwrap();
    s.write_all(format!("GET {path} HTTP/1.0\r\nHost: x\r\n\r\n").as_bytes()).await.unwrap();
    let mut buf = String::new();
    tokio::io::AsyncReadExt::read_to_string(&mut s, &mut buf).await.unwrap();
    buf
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn live_barge_in_stops_tokens() {
    let sc = scenario("interruption");
    let (_, addr) = ws_server(options(&sc, ClockMode::Live)).await;
    let (mut ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}/session")).await.unwrap();
    ws.send(Message::text(text(0, 1, "讲 个 故事 吗"))).await.unwrap();
    let mut got: Vec<WireMessage> = Vec::new();
    let mut interrupted = false;
    loop {
        let msg = match tokio::time::timeout(Duration::from_secs(5), ws.next()).await {
            Ok(Some(Ok(Message::Text(t)))) => decode_message(t.as_str()).unwrap(),
            Ok(Some(Ok(_))) => continue,
            _ => break,
        };
        let kind = msg.kind;
        got.push(msg);
        let tokens = got.iter().filter(|m| m.kind == WireKind::BotToken).count();
        if !interrupted && tokens == 5 {
            ws.send(Message::text(text(0, 2, "停"))).await.unwrap();
            interrupted = true;
        }
        if interrupted && kind == WireKind::BotText {
            break;
        }
    }
    assert!(interrupted, "no tokens arrived: {got:?}");
    let acks: Vec<_> = got.iter().filter(|m| m.kind == WireKind::InterruptAck).collect();
    assert_eq!(acks.len(), 1, "{got:?}");
    assert_eq!(interrupt_violations(&got), Vec::<String>::new());
    let texts: Vec<_> = got.iter().filter(|m| m.kind == WireKind::BotText).collect();
    assert_eq!(texts.last().unwrap().payload["text"], "好 的");
    assert!(got.windows(2).all(|w| w[0].t_ms <= w[1].t_ms));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn votes_and_recording() {
    let sc = scenario("basic");
    let dir = tempfile::tempdir().unwrap();
    let votes = dir.path().join("votes.jsonl");
    let record = dir.path().join("run.trace");
    let mut opts = options(&sc, ClockMode::Sim);
    opts.votes = Some(votes.clone());
    opts.record = Some(record.clone());
    let (_, addr) = tcp_server(opts).await;

    let mut lines = client_lines(&sc);
    let n = lines.len() as u64;
    let fb = |turn, seq| {
        let f = Inbound::Feedback(Feedback {
            turn,
            vote: Vote::Up,
            tag: None,
            note: Some("nice".into()),
        });
        encode_message(&f.to_message(5000).with_seq(seq)).unwrap()
    };
    // the second vote names a turn that never happened and is dropped
    lines.push(fb(2, n + 1));
    lines.push(fb(99, n + 2));
    let got = tcp_client(addr, lines.clone(), vec![]).await;

    let log = std::fs::read_to_string(&votes).unwrap();
    let entries: Vec<serde_json::Value> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(entries.len(), 1, "{log}");
    assert_eq!(entries[0]["turn"], 2);
    assert_eq!(entries[0]["vote"], "up");

    let trace = parse_trace(&std::fs::read_to_string(&record).unwrap()).unwrap();
    let sent: Vec<String> = trace.iter().filter(|l| l.dir == Direction::Out).map(|l| l.raw.clone()).collect();
    let received: Vec<String> = trace.iter().filter(|l| l.dir == Direction::In).map(|l| l.raw.clone()).collect();
    let trim = |v: &[String]| v.iter().map(|l| l.trim_end().to_string()).collect::<Vec<_>>();
    assert_eq!(sent, trim(&got));
    assert_eq!(received, trim(&lines));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn seq_regression_hangs_up() {
    let sc = scenario("basic");
    let (_, addr) = tcp_server(options(&sc, ClockMode::Sim)).await;
    let lines = vec![text(100, 5, "你"), text(200, 5, "好"), text(300, 6, "吗")];
    let got = tcp_client(addr, lines, vec![]).await;
    let last = decode_message(got.last().unwrap()).unwrap();
    assert_eq!(last.kind, WireKind::Error);
    assert_eq!(last.payload["code"], "seq_regression");
}
