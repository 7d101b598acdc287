//! Acceptance run: one PASS or FAIL line per criterion, non-zero exit if any fails.

use std::collections::{BTreeMap, VecDeque};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use duplex_core::corpus::{filter_sample, form_interleaved, read_dialogues, DialogueRecord, DialogueTurn, FilterRules, FilterVerdict, RejectReason};
use duplex_core::decoder::{fixed_chunk_count, run_stream, StreamParams};
use duplex_core::eval::{edit_distance, evaluate_records, overall_score, read_eval_records, CerOptions};
use duplex_core::frontend::units::grid_time;
use duplex_core::frontend::{grid_range, AsrState, HallucinationPatterns, InterleaveState, UnitBuffer};
use duplex_core::latency::{Component, LatencyLedger, TurnMode};
use duplex_core::pipeline::run_scenario;
use duplex_core::sim::{generate_scenario, load_scenario_file, scripted_generation_rate_check, RateCheck, ScenarioKind, ScriptedEncoder};
use duplex_core::turn::engine::ActionRecord;
use duplex_core::turn::{decode_interruption, encode_interruption, Action};
use duplex_core::{AudioSegment, BackendError, HypothesisSource, TimedUnit, TimedWord, Token};
use duplex_service::{interrupt_violations, render_trace, replay};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($fmt)+));
        }
    };
}

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn latency_bound() -> Outcome {
    let start = Instant::now();
    let mut l = LatencyLedger::new();
    l.record(Component::AsrInterleave, 900)
        .record(Component::LlmFirstToken, 400)
        .record(Component::DecoderFirstChunk, 200)
        .record(Component::TurnWait, 1000);
    let sync = l.latency_bound(TurnMode::Synchronous).map_err(|e| e.to_string())?;
    let asyn = l.latency_bound(TurnMode::Asynchronous).map_err(|e| e.to_string())?;
    ensure!(sync == 2500 && asyn == 1900, "sync {sync}, async {asyn}");
    ensure!(start.elapsed() < Duration::from_secs(1), "took {:?}", start.elapsed());
    Ok(format!("sync {sync} ms, async {asyn} ms"))
}

fn turn_taking_equivalence() -> Outcome {
    let start = Instant::now();
    let mut n = 0;
    let mut faster = 0;
    for seed in 0..8u64 {
        for kind in ScenarioKind::ALL {
            let sc = generate_scenario(seed, kind);
            let run = |mode| -> Result<(String, Vec<Option<u64>>), String> {
                let (p, _) = run_scenario(&sc.with_mode(mode)).map_err(|e| e.to_string())?;
                let e = p.engine();
                let confirmed = serde_json::to_string(&e.confirmed_output()).unwrap();
                Ok((confirmed, e.turns().iter().map(|t| t.first_token_latency_ms()).collect()))
            };
            let (ca, fa) = run(TurnMode::Asynchronous)?;
            let (cs, fs) = run(TurnMode::Synchronous)?;
            ensure!(ca == cs, "{}: confirmed outputs differ", sc.name);
            for (a, s) in fa.iter().zip(&fs) {
                if let (Some(a), Some(s)) = (a, s) {
                    ensure!(a <= s, "{}: async first token {a} > sync {s}", sc.name);
                    faster += usize::from(a < s);
                }
            }
            n += 1;
        }
    }
    let kinds = ScenarioKind::ALL.len();
    ensure!(n >= 20, "only {n} scenarios");
    let took = start.elapsed();
    ensure!(took < Duration::from_secs(10), "took {took:?}");
    Ok(format!("{n} scenarios over {kinds} kinds, async strictly faster in {faster} turns, {took:.2?}"))
}

fn dynamic_chunking() -> Outcome {
    let t_unit = 40;
    let arrivals: Vec<u64> = (0..500).map(|i| 400 + i * 10).collect();
    let mut plans = 0;
    for eps in [0, 20, 50, 79] {
        for proc_ms in [0, eps / 2, eps] {
            let out = run_stream(&arrivals, StreamParams::new(t_unit, eps, proc_ms)).map_err(|e| e.to_string())?;
            let plan = &out.plan;
            for w in plan.entries.windows(2) {
                ensure!(
                    w[1].t_ms == w[0].t_ms + w[0].n_units * t_unit - plan.epsilon_ms,
                    "recurrence broken at t={} (eps {eps})",
                    w[1].t_ms
                );
            }
            let sizes = plan.sizes();
            let body = &sizes[1..sizes.len().saturating_sub(1).max(1)];
            ensure!(body.windows(2).all(|w| w[0] <= w[1]), "sizes shrink: {sizes:?}");
            let fixed = fixed_chunk_count(&arrivals, 100);
            ensure!(plan.len() < fixed, "{} chunks vs {fixed} fixed", plan.len());
            ensure!(out.underruns.is_empty(), "eps {eps} proc {proc_ms}: {} underruns", out.underruns.len());
            plans += 1;
        }
    }
    ensure!(
        scripted_generation_rate_check(100.0, 25.0) == RateCheck::RealtimeCapable,
        "100 tok/s not realtime"
    );
    ensure!(scripted_generation_rate_check(20.0, 25.0) == RateCheck::TooSlow, "20 tok/s not too_slow");
    Ok(format!("{plans} plans at 100 tok/s exact, 20 tok/s too_slow"))
}

struct Scripted(VecDeque<Vec<TimedWord>>);

impl HypothesisSource for Scripted {
    fn transcribe(&mut self, _: &[AudioSegment]) -> Result<Vec<TimedWord>, BackendError> {
        Ok(self.0.pop_front().unwrap_or_default())
    }
}

fn prefix_confirmation() -> Outcome {
    let mut rng = StdRng::seed_from_u64(7);
    let word = |s: u8, i: usize| TimedWord::new(format!("w{s}"), i as u64 * 100, i as u64 * 100 + 100).unwrap();
    let cases = 10_000;
    let mut repeats = 0;
    for case in 0..cases {
        let hyps: Vec<Vec<u8>> = (0..rng.gen_range(1..8))
            .map(|_| (0..rng.gen_range(0..7)).map(|_| rng.gen_range(0..3)).collect())
            .collect();
        let timed: VecDeque<Vec<TimedWord>> =
            hyps.iter().map(|h| h.iter().enumerate().map(|(i, &s)| word(s, i)).collect()).collect();
        let mut asr = AsrState::new(10, HallucinationPatterns::default());
        let mut backend = Scripted(timed);
        let mut committed = 0;
        let mut prev: &[u8] = &[];
        let mut log: Vec<String> = Vec::new();
        for (i, h) in hyps.iter().enumerate() {
            let out = asr
                .ingest(AudioSegment::new(i as u64, i as u64 * 300, 300), &mut backend)
                .map_err(|e| e.to_string())?;
            let agreed = prev.iter().zip(h).take_while(|(a, b)| a == b).count();
            let expected: Vec<String> = if agreed > committed {
                let fresh = h[committed..agreed].iter().map(|s| format!("w{s}")).collect();
                committed = agreed;
                fresh
            } else {
                Vec::new()
            };
            let got: Vec<String> = out.confirmed.iter().map(|w| w.surface.clone()).collect();
            ensure!(got == expected, "case {case} step {i}: {got:?} vs oracle {expected:?}");
            if i > 0 && hyps[i - 1] == *h {
                ensure!(committed >= h.len(), "case {case}: repeated hypothesis not fully confirmed");
                repeats += 1;
            }
            log.extend(got);
            let now: Vec<String> = asr.confirmed().iter().map(|w| w.surface.clone()).collect();
            ensure!(now == log, "case {case}: confirmation not monotone");
            prev = h;
        }
    }
    Ok(format!("{cases} sequences agree with the prefix oracle ({repeats} repeated hypotheses)"))
}

fn unit_buffering() -> Outcome {
    let mut rng = StdRng::seed_from_u64(11);
    let mut enc = ScriptedEncoder::new(BTreeMap::new(), 1024);
    let mut buf = UnitBuffer::new(1000, 100, 25, 1024);
    let mut t = 0;
    let mut total = 0u64;
    let mut max_len = 0;
    let chunks = 10_000u64;
    for id in 0..chunks {
        if rng.gen_ratio(1, 97) {
            buf.clear();
            t += 100 * rng.gen_range(1..6);
        }
        let units = buf.push(AudioSegment::new(id, t, 100), &mut enc).map_err(|e| e.to_string())?;
        let expected: Vec<u64> = grid_range(t, t + 100, 25).map(|k| grid_time(k, 25)).collect();
        let got: Vec<u64> = units.iter().map(|u| u.start_ms).collect();
        ensure!(got == expected, "chunk at {t}: {got:?} vs grid {expected:?}");
        ensure!(got.len() == 2 || got.len() == 3, "{} units in chunk at {t}", got.len());
        max_len = max_len.max(buf.len());
        total += got.len() as u64;
        t += 100;
    }
    ensure!(max_len <= 10, "buffer reached {max_len} chunks");
    let mean = total as f64 / chunks as f64;
    ensure!((mean - 2.5).abs() <= 0.01, "mean {mean}");
    Ok(format!("max {max_len} chunks buffered, mean {mean:.4} units per chunk"))
}

fn interleaving() -> Outcome {
    let mut rng = StdRng::seed_from_u64(13);
    let mut max_recovered = 0;
    let cases = 1_000;
    for case in 0..cases {
        let mut t = 0;
        let words: Vec<TimedWord> = (0..rng.gen_range(1..12))
            .map(|i| {
                t += if rng.gen_bool(0.3) { rng.gen_range(0..6000) } else { rng.gen_range(0..200) };
                let len = rng.gen_range(40..800);
                let w = TimedWord::new(format!("t{i}"), t, t + len).unwrap();
                t += len;
                w
            })
            .collect();
        let units: Vec<TimedUnit> = grid_range(0, t + 500, 25).map(|k| TimedUnit::new(k as u32, grid_time(k, 25))).collect();
        let mut capped = InterleaveState::new();
        let mut out = Vec::new();
        for w in &words {
            let before = capped.units_recovered;
            out.extend(capped.interleave(std::slice::from_ref(w), &units, Some(2000)).map_err(|e| e.to_string())?);
            let rec = capped.units_recovered - before;
            ensure!(rec <= 50, "case {case}: {rec} units recovered in one gap");
            max_recovered = max_recovered.max(rec);
        }
        out.extend(capped.flush(&units, None, Some(2000)));
        let ids: Vec<u32> = out
            .iter()
            .filter_map(|t| match t {
                Token::Unit(u) => Some(u.0),
                _ => None,
            })
            .collect();
        ensure!(ids.windows(2).all(|w| w[0] < w[1]), "case {case}: units repeat or reorder");

        let mut online = InterleaveState::new();
        let mut streamed = Vec::new();
        for chunk in words.chunks(rng.gen_range(1..4)) {
            let heard_until = chunk.last().unwrap().end_ms + 300;
            let heard: Vec<TimedUnit> = units.iter().copied().filter(|u| u.start_ms < heard_until).collect();
            streamed.extend(online.interleave(chunk, &heard, None).map_err(|e| e.to_string())?);
        }
        streamed.extend(online.flush(&units, None, None));
        let offline = form_interleaved(&words, &units).map_err(|e| e.to_string())?;
        ensure!(streamed == offline, "case {case}: online and offline differ");
    }
    Ok(format!("{cases} timelines, at most {max_recovered} units recovered per gap, online == offline"))
}

fn cancel_order(trace: &[ActionRecord]) -> Result<usize, String> {
    let mut cancels = 0;
    for (i, rec) in trace.iter().enumerate() {
        let Action::CancelGeneration { session: Some(s), .. } = rec.action else { continue };
        cancels += 1;
        let same_instant = trace[..i]
            .iter()
            .rev()
            .take_while(|r| r.t_ms == rec.t_ms)
            .any(|r| r.action.is_generation_output() && !matches!(r.action, Action::BotTurnEnd { .. }));
        ensure!(!same_instant, "generation output before the cancel at {}", rec.t_ms);
        for later in &trace[i + 1..] {
            if let Action::BotToken { session, .. } | Action::Confirm { session, .. } = &later.action {
                ensure!(*session != s, "cancelled session {s} produced output at {}", later.t_ms);
            }
        }
    }
    Ok(cancels)
}

fn interruption_behaviour() -> Outcome {
    let mut cancels = 0;
    let mut scenarios = 0;
    for seed in 0..20 {
        let sc = generate_scenario(seed, ScenarioKind::Interruption);
        for mode in [TurnMode::Asynchronous, TurnMode::Synchronous] {
            let sc = sc.with_mode(mode);
            let (p, _) = run_scenario(&sc).map_err(|e| e.to_string())?;
            cancels += cancel_order(p.engine().trace()).map_err(|e| format!("{}: {e}", sc.name))?;
            let r = replay(&sc).map_err(|e| e.to_string())?;
            let problems = interrupt_violations(&r.outbound());
            ensure!(problems.is_empty(), "{}: {}", sc.name, problems.join("; "));
            scenarios += 1;
        }
    }
    for name in ["interruption", "basic"] {
        let sc = load_scenario_file(fixtures().join(format!("{name}.jsonl"))).map_err(|e| e.to_string())?;
        let golden = std::fs::read_to_string(fixtures().join(format!("{name}.trace"))).map_err(|e| e.to_string())?;
        let r = replay(&sc).map_err(|e| e.to_string())?;
        ensure!(render_trace(&r.trace) == golden, "{name} trace differs from golden");
        ensure!(interrupt_violations(&r.outbound()).is_empty(), "{name} golden trace violates ordering");
    }
    ensure!(cancels > 0, "no cancellations exercised");
    Ok(format!("{scenarios} scenario runs, {cancels} cancellations in order, golden traces match"))
}

fn interruption_encoding() -> Outcome {
    let mut rng = StdRng::seed_from_u64(4);
    let segment = |max: usize, rng: &mut StdRng| -> Vec<Token> {
        (0..rng.gen_range(0..=max))
            .map(|_| {
                if rng.gen_bool(0.5) {
                    Token::unit(rng.gen_range(0..1024))
                } else {
                    Token::text(format!("w{}", rng.gen_range(0..50)))
                }
            })
            .collect()
    };
    let n = 1_000;
    for i in 0..n {
        let turn = segment(30, &mut rng);
        let split = rng.gen_range(0..=turn.len());
        let cut_in = segment(12, &mut rng);
        let enc = encode_interruption(&turn, split, "Machine", "User", &cut_in).map_err(|e| e.to_string())?;
        let dec = decode_interruption(&enc).map_err(|e| e.to_string())?;
        ensure!(
            dec.prefix == turn[..split] && dec.interrupting == cut_in && dec.suffix == turn[split..],
            "triple {i} does not round-trip"
        );
    }
    Ok(format!("{n} triples round-trip"))
}

fn naive_distance(a: &[char], b: &[char]) -> usize {
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for (j, cell) in d[0].iter_mut().enumerate() {
        *cell = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let sub = d[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    d[a.len()][b.len()]
}

fn strings_up_to(alphabet: &[char], max_len: usize) -> Vec<Vec<Vec<char>>> {
    let mut by_len = vec![vec![Vec::new()]];
    for len in 1..=max_len {
        let next = by_len[len - 1]
            .iter()
            .flat_map(|s: &Vec<char>| {
                alphabet.iter().map(move |&c| {
                    let mut t = s.clone();
                    t.push(c);
                    t
                })
            })
            .collect();
        by_len.push(next);
    }
    by_len
}

/// Every pair of strings up to length 5, one thread per length bucket.
fn sweep(alphabet: &[char]) -> Result<(usize, usize), String> {
    let buckets = strings_up_to(alphabet, 5);
    let all: Vec<&Vec<char>> = buckets.iter().flatten().collect();
    let pairs = std::thread::scope(|s| {
        let handles: Vec<_> = buckets
            .iter()
            .map(|bucket| {
                let all = &all;
                s.spawn(move || -> Result<usize, String> {
                    let mut n = 0;
                    for a in bucket {
                        for b in all.iter() {
                            ensure!(edit_distance(a, b) == naive_distance(a, b), "{a:?} vs {b:?}");
                            n += 1;
                        }
                    }
                    Ok(n)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).sum::<Result<usize, String>>()
    })?;
    Ok((all.len(), pairs))
}

fn cer_oracle() -> Outcome {
    let start = Instant::now();
    let (n3, p3) = sweep(&['a', 'b', 'c'])?;
    let (n5, p5) = sweep(&['a', 'b', 'c', 'd', 'e'])?;
    ensure!(n5 == 3906 && p5 == 3906 * 3906, "{n5} strings, {p5} pairs");
    let mut rng = StdRng::seed_from_u64(0xce2);
    let wide: Vec<char> = "abc你好世界 ".chars().collect();
    for _ in 0..10_000 {
        let mut s = || -> Vec<char> { (0..rng.gen_range(6..40)).map(|_| wide[rng.gen_range(0..wide.len())]).collect() };
        let (a, b) = (s(), s());
        ensure!(edit_distance(&a, &b) == naive_distance(&a, &b), "{a:?} vs {b:?}");
    }
    let took = start.elapsed();
    ensure!(took < Duration::from_secs(60), "took {took:?}");
    Ok(format!(
        "exhaustive {p3} pairs over 3 symbols ({n3} strings) and {p5} over 5 ({n5}), 10000 random longer pairs, {took:.2?}"
    ))
}

fn judge_arithmetic() -> Outcome {
    let mut n = 0;
    for r in 1..=5u8 {
        for a in 1..=5u8 {
            for g in 1..=5u8 {
                let mean = f64::from(r + a + g) / 3.0;
                ensure!(f64::from(overall_score(r, a, g)) == mean.round(), "({r},{a},{g})");
                n += 1;
            }
        }
    }
    ensure!(overall_score(4, 5, 3) == 4 && overall_score(2, 3, 3) == 3, "reference triples");
    Ok(format!("{n} triples"))
}

fn corpus_filtering() -> Outcome {
    let rules_text = std::fs::read_to_string(fixtures().join("filter_rules.toml")).map_err(|e| e.to_string())?;
    let rules = FilterRules::from_toml(&rules_text).map_err(|e| e.to_string())?;
    let text = std::fs::read_to_string(fixtures().join("corpus/dialogues.jsonl")).map_err(|e| e.to_string())?;
    let fixture = read_dialogues(&text).map_err(|e| e.to_string())?;
    use FilterVerdict::*;
    use RejectReason::*;
    let fixture_labels = [Keep, Reject(Language), Reject(MissingTurn), Reject(Hallucination), Keep];
    let mut suite: Vec<(DialogueRecord, FilterVerdict)> = fixture.into_iter().zip(fixture_labels).collect();
    let build = |turns: &[(&str, &[&str])]| {
        let mut t = 0;
        let turns = turns
            .iter()
            .map(|(spk, ws)| {
                let words: Vec<TimedWord> = ws
                    .iter()
                    .enumerate()
                    .map(|(i, w)| TimedWord::new(*w, t + i as u64 * 240, t + (i as u64 + 1) * 240).unwrap())
                    .collect();
                let end = t + ws.len() as u64 * 240;
                let units = (t / 40..end.div_ceil(40)).map(|k| TimedUnit::new(k as u32, k * 40)).collect();
                t = end + 500;
                DialogueTurn::new(*spk, words, units)
            })
            .collect();
        DialogueRecord {
            scenario: "闲聊".into(),
            turns,
            interruptions: Vec::new(),
        }
    };
    suite.push((build(&[("User", &["hello", "there"]), ("Machine", &["hi", "friend"])]), Reject(Language)));
    suite.push((build(&[("User", &["你好"]), ("Machine", &[])]), Reject(MissingTurn)));
    suite.push((build(&[("User", &["你好"]), ("User", &["在吗"]), ("Machine", &["在"])]), Reject(MissingTurn)));
    suite.push((build(&[("User", &["字幕由Amara.org社区提供"]), ("Machine", &["好的"])]), Reject(Hallucination)));
    suite.push((build(&[("User", &["今天", "天气", "怎么样"]), ("Machine", &["晴天", "OK"])]), Keep));
    let mut fired: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for (i, (d, label)) in suite.iter().enumerate() {
        let verdict = filter_sample(d, &rules);
        if let Reject(r) = verdict {
            let e = fired.entry(r.to_string()).or_default();
            e.0 += 1;
            e.1 += usize::from(verdict == *label);
        }
        ensure!(verdict == *label, "case {i}: {verdict:?}, expected {label:?}");
    }
    let precision: Vec<String> = fired.iter().map(|(r, (n, ok))| format!("{r} {ok}/{n}")).collect();
    Ok(format!("{} dialogues, precision {}", suite.len(), precision.join(", ")))
}

fn model_report() -> Outcome {
    let text = std::fs::read_to_string(fixtures().join("eval/dialogue_outputs.jsonl")).map_err(|e| e.to_string())?;
    let records = read_eval_records(&text).map_err(|e| e.to_string())?;
    let report = evaluate_records(&records, CerOptions::default()).map_err(|e| e.to_string())?;
    let table = report.render();
    ensure!(
        table.starts_with("| Model | Modality | CER (%) | MOS | LLM Score |"),
        "unexpected header"
    );
    let rows = report.summary.len();
    ensure!(rows >= 4, "{rows} model rows");
    ensure!(
        report.summary.iter().all(|s| s.mos_mean.is_some() && s.llm_score.is_some() && s.cer_percent.is_finite()),
        "a model row lacks a metric"
    );
    Ok(format!("{} records, {rows} model rows with CER, MOS and LLM score", records.len()))
}

fn main() {
    let criteria: [Criterion; 12] = [
        ("latency bound", latency_bound),
        ("turn-taking equivalence", turn_taking_equivalence),
        ("dynamic chunking", dynamic_chunking),
        ("prefix confirmation", prefix_confirmation),
        ("unit buffering", unit_buffering),
        ("interleaving conservation", interleaving),
        ("interruption behaviour", interruption_behaviour),
        ("interruption encoding", interruption_encoding),
        ("CER oracle", cer_oracle),
        ("judge score arithmetic", judge_arithmetic),
        ("corpus filtering", corpus_filtering),
        ("model report from fixture", model_report),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
        }
    }
    println!("{} of {} criteria pass", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
