use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use serde_json::json;

use duplex_core::corpus::{
    filter_sample, form_interleaved, insert_interruption_record, read_dialogues, render_training_sample, write_line,
    CorpusLine, FilterRules, FilterVerdict, InterruptionAnnotation, RenderRequest, SampleLine, TaskFamily, VerdictLine,
};
use duplex_core::eval::{evaluate_records, read_eval_records, run_forum, CerOptions, ForumAgent, ForumOptions};
use duplex_core::sim::{load_scenario_file, Scenario};
use duplex_core::{Modality, SessionConfig, TurnMode};
use duplex_service::replay::{check_expectations, replay};
use duplex_service::server::{Server, ServerOptions};
use duplex_service::trace::{parse_trace, render_trace};
use duplex_service::{ClockMode, TraceReport};

#[derive(Parser)]
#[command(name = "duplex", version, about = "Full-duplex dialogue engine: server, replay and data tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Accept sessions over WebSocket (`/session`) and optionally raw TCP.
    Serve(ServeArgs),
    /// Run a scenario headlessly and print its wire trace.
    Replay(ReplayArgs),
    /// Latency and turn statistics of a recorded trace.
    Report {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Offline corpus preparation.
    #[command(subcommand)]
    Corpus(CorpusCommand),
    /// Scoring of external transcripts and agent-versus-agent runs.
    #[command(subcommand)]
    Eval(EvalCommand),
}

#[derive(Args)]
struct ServeArgs {
    /// HTTP address for `/session` (WebSocket), `/health` and `/sessions`.
    #[arg(long)]
    listen: String,
    #[arg(long, value_enum, default_value = "live")]
    mode: ClockMode,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Scripted backends for every session.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Trace file for the first session; later ones get `-<id>` appended to the stem.
    #[arg(long)]
    record: Option<PathBuf>,
    /// Append feedback votes to this file.
    #[arg(long, default_value = "votes.jsonl")]
    votes: PathBuf,
    /// Also accept newline-delimited sessions on this TCP address.
    #[arg(long)]
    tcp: Option<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum TurnTaking {
    Sync,
    Async,
}

#[derive(Args)]
struct ReplayArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Check the scenario's expect lines and the interruption invariant; exit non-zero on failure.
    #[arg(long)]
    assert: bool,
    /// Override the scenario's turn-taking mode.
    #[arg(long, value_enum)]
    turn_taking: Option<TurnTaking>,
    /// Compare the trace with this file byte for byte.
    #[arg(long)]
    golden: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum CorpusCommand {
    /// Interleave each turn's words and units into one token stream.
    Form {
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Attach interruption annotations (JSON lines with a dialogue `index`).
    Insert {
        input: PathBuf,
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Keep dialogues passing the rules; verdicts go to `--verdicts`.
    Filter {
        input: PathBuf,
        #[arg(long)]
        rules: Option<PathBuf>,
        #[arg(long)]
        verdicts: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render training samples for one or more modality pairs.
    Render {
        input: PathBuf,
        /// `in:out`, e.g. `unit:hybrid`; repeatable.
        #[arg(long, required = true)]
        modality: Vec<String>,
        #[arg(long, default_value = "spoken_dialogue")]
        family: TaskFamily,
        #[arg(long)]
        role: Option<String>,
        /// Filter with these rules before rendering.
        #[arg(long)]
        rules: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum EvalCommand {
    /// CER and judge table per model and modality.
    Report {
        input: PathBuf,
        /// Keep whitespace when computing CER.
        #[arg(long)]
        raw: bool,
        #[arg(long)]
        json: bool,
    },
    /// Let two scripted agents talk to each other.
    Forum {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, default_value_t = 8)]
        max_turns: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn read_input(path: &Path) -> Result<String> {
    if path == Path::new("-") {
        let mut s = String::new();
        io::stdin().read_to_string(&mut s)?;
        return Ok(s);
    }
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write_output(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => Ok(io::stdout().write_all(text.as_bytes())?),
    }
}

fn load_rules(path: Option<&Path>) -> Result<FilterRules> {
    match path {
        Some(p) => FilterRules::from_toml(&read_input(p)?).with_context(|| format!("rules in {}", p.display())),
        None => Ok(FilterRules::default()),
    }
}

fn parse_pair(s: &str) -> Result<(Modality, Modality)> {
    let Some((a, b)) = s.split_once(':') else {
        bail!("expected in:out, got {s:?}");
    };
    let m = |x: &str| x.parse::<Modality>().map_err(|e| anyhow::anyhow!("{e}"));
    Ok((m(a)?, m(b)?))
}

async fn serve(args: ServeArgs) -> Result<()> {
    let scenario = match &args.scenario {
        Some(p) => load_scenario_file(p)?,
        None => Scenario::default(),
    };
    let config = match &args.config {
        Some(p) => SessionConfig::load(p)?,
        None => scenario.config.clone(),
    };
    let mut opts = ServerOptions::new(args.mode, config);
    opts.scenario = scenario;
    opts.record = args.record;
    opts.votes = Some(args.votes);
    let server = Server::new(opts);
    let http = tokio::net::TcpListener::bind(&args.listen).await?;
    eprintln!("listening on ws://{}/session", http.local_addr()?);
    if let Some(addr) = &args.tcp {
        let tcp = tokio::net::TcpListener::bind(addr).await?;
        eprintln!("line transport on {}", tcp.local_addr()?);
        let s = server.clone();
        tokio::spawn(async move { s.serve_tcp(tcp).await });
    }
    server.serve_ws(http).await?;
    Ok(())
}

fn run_replay(args: ReplayArgs) -> Result<bool> {
    let mut sc: Scenario = load_scenario_file(&args.scenario)?;
    if let Some(tt) = args.turn_taking {
        sc = sc.with_mode(match tt {
            TurnTaking::Sync => TurnMode::Synchronous,
            TurnTaking::Async => TurnMode::Asynchronous,
        });
    }
    let r = replay(&sc)?;
    let text = render_trace(&r.trace);
    let mut ok = true;
    if args.assert {
        let mut results = check_expectations(&r, &sc.expectations);
        let problems = duplex_service::interrupt_violations(&r.outbound());
        results.push(duplex_service::CheckResult {
            line: 0,
            description: "interruption order invariant".into(),
            passed: problems.is_empty(),
            detail: problems.join("; "),
        });
        for res in &results {
            let mark = if res.passed { "ok  " } else { "FAIL" };
            let at = if res.line > 0 { format!(" (line {})", res.line) } else { String::new() };
            if res.detail.is_empty() || res.passed {
                eprintln!("{mark} {}{at}", res.description);
            } else {
                eprintln!("{mark} {}{at}: {}", res.description, res.detail);
            }
            ok &= res.passed;
        }
    }
    if let Some(g) = &args.golden {
        let golden = read_input(g)?;
        if golden != text {
            let at = golden.lines().zip(text.lines()).position(|(a, b)| a != b);
            eprintln!(
                "FAIL trace differs from {} at line {}",
                g.display(),
                at.map_or("(length)".to_string(), |i| (i + 1).to_string())
            );
            ok = false;
        } else {
            eprintln!("ok   trace matches {}", g.display());
        }
    }
    write_output(args.out.as_deref(), &text)?;
    Ok(ok)
}

#[derive(Deserialize)]
struct AnnotationLine {
    index: usize,
    #[serde(flatten)]
    annotation: InterruptionAnnotation,
}

fn corpus(cmd: CorpusCommand) -> Result<()> {
    match cmd {
        CorpusCommand::Form { input, out } => {
            let mut text = String::new();
            for (i, d) in read_dialogues(&read_input(&input)?)?.iter().enumerate() {
                for (j, turn) in d.turns.iter().enumerate() {
                    let tokens = form_interleaved(&turn.words, &turn.units)
                        .with_context(|| format!("dialogue {i} turn {j}"))?;
                    let line = json!({
                        "kind": "formed",
                        "index": i,
                        "scenario": d.scenario,
                        "turn": j,
                        "speaker": turn.speaker,
                        "tokens": tokens.iter().map(|t| t.notation()).collect::<Vec<_>>(),
                    });
                    text.push_str(&format!("{line}\n"));
                }
            }
            write_output(out.as_deref(), &text)
        }
        CorpusCommand::Insert { input, annotations, out } => {
            let mut dialogues = read_dialogues(&read_input(&input)?)?;
            for (n, line) in read_input(&annotations)?.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let a: AnnotationLine =
                    serde_json::from_str(line).with_context(|| format!("annotation line {}", n + 1))?;
                let Some(d) = dialogues.get(a.index) else {
                    bail!("annotation line {}: no dialogue {}", n + 1, a.index);
                };
                dialogues[a.index] =
                    insert_interruption_record(d, a.annotation).with_context(|| format!("annotation line {}", n + 1))?;
            }
            let text: String = dialogues
                .into_iter()
                .map(|d| write_line(&CorpusLine::Dialogue(d)) + "\n")
                .collect();
            write_output(out.as_deref(), &text)
        }
        CorpusCommand::Filter {
            input,
            rules,
            verdicts,
            out,
        } => {
            let rules = load_rules(rules.as_deref())?;
            let mut kept = String::new();
            let mut log = String::new();
            let mut counts: BTreeMap<String, usize> = BTreeMap::new();
            for (index, d) in read_dialogues(&read_input(&input)?)?.into_iter().enumerate() {
                let verdict = filter_sample(&d, &rules);
                let key = match verdict {
                    FilterVerdict::Keep => "keep".to_string(),
                    FilterVerdict::Reject(r) => r.to_string(),
                };
                *counts.entry(key).or_default() += 1;
                log.push_str(&write_line(&CorpusLine::Verdict(VerdictLine {
                    index,
                    scenario: d.scenario.clone(),
                    verdict,
                })));
                log.push('\n');
                if verdict == FilterVerdict::Keep {
                    kept.push_str(&write_line(&CorpusLine::Dialogue(d)));
                    kept.push('\n');
                }
            }
            if let Some(v) = verdicts {
                fs::write(&v, log)?;
            }
            let summary: Vec<String> = counts.iter().map(|(k, v)| format!("{k}={v}")).collect();
            eprintln!("{}", summary.join(" "));
            write_output(out.as_deref(), &kept)
        }
        CorpusCommand::Render {
            input,
            modality,
            family,
            role,
            rules,
            out,
        } => {
            let pairs = modality.iter().map(|m| parse_pair(m)).collect::<Result<Vec<_>>>()?;
            let mut dialogues = read_dialogues(&read_input(&input)?)?;
            if let Some(r) = rules {
                let rules = load_rules(Some(&r))?;
                dialogues.retain(|d| filter_sample(d, &rules) == FilterVerdict::Keep);
            }
            let mut text = String::new();
            let mut manifest: BTreeMap<String, usize> = BTreeMap::new();
            for (i, d) in dialogues.iter().enumerate() {
                for &(a, b) in &pairs {
                    let mut req = RenderRequest::new(family, a, b);
                    if let Some(r) = &role {
                        req = req.with_role(r.clone());
                    }
                    let sample = render_training_sample(d, &req).with_context(|| format!("dialogue {i}"))?;
                    *manifest.entry(format!("{a}:{b}")).or_default() += sample.tokens.len();
                    text.push_str(&write_line(&CorpusLine::Sample(SampleLine::from(&sample))));
                    text.push('\n');
                }
            }
            let total: usize = manifest.values().sum();
            for (pair, n) in &manifest {
                eprintln!("{pair:<14} {n:>9} tokens {:>6.1}%", 100.0 * *n as f64 / total.max(1) as f64);
            }
            write_output(out.as_deref(), &text)
        }
    }
}

fn eval(cmd: EvalCommand) -> Result<()> {
    match cmd {
        EvalCommand::Report { input, raw, json } => {
            let records = read_eval_records(&read_input(&input)?)?;
            let opts = if raw { CerOptions::RAW } else { CerOptions::default() };
            let report = evaluate_records(&records, opts)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                print!("{}", report.render());
            }
            Ok(())
        }
        EvalCommand::Forum { a, b, max_turns, out } => {
            let sa = load_scenario_file(&a)?;
            let sb = load_scenario_file(&b)?;
            let mut agent_a = ForumAgent::from_scenario("a", &sa)?;
            let mut agent_b = ForumAgent::from_scenario("b", &sb)?;
            let opts = ForumOptions {
                scenario: sa.name.clone(),
                max_turns,
                ..Default::default()
            };
            let transcript = run_forum(&mut agent_a, &mut agent_b, &opts);
            write_output(out.as_deref(), &transcript.to_jsonl())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Serve(args) => tokio::runtime::Runtime::new()
            .map_err(anyhow::Error::from)
            .and_then(|rt| rt.block_on(serve(args))),
        Command::Replay(args) => match run_replay(args) {
            Ok(true) => Ok(()),
            Ok(false) => return ExitCode::FAILURE,
            Err(e) => Err(e),
        },
        Command::Report { trace, json } => read_input(&trace)
            .and_then(|t| Ok(parse_trace(&t)?))
            .and_then(|lines| Ok(TraceReport::from_trace(&lines)?))
            .and_then(|r| {
                if json {
                    println!("{}", serde_json::to_string_pretty(&r)?);
                } else {
                    print!("{}", r.render());
                }
                Ok(())
            }),
        Command::Corpus(cmd) => corpus(cmd),
        Command::Eval(cmd) => eval(cmd),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
