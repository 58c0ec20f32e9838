//! Acceptance suite. Runs every criterion in order, prints one PASS/FAIL
//! line each, and exits nonzero if any failed.

use std::collections::{BTreeMap, VecDeque};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use discourse_core::clock::LogicalClock;
use discourse_core::dataset::{
    load_dataset, select_passage_with, validate_dataset, Dataset, DatasetFormat, Passage, QaKind, QaPair,
};
use discourse_core::gateway::{Client, ClockMode, Gateway, GatewayConfig, RunningGateway};
use discourse_core::moderator::{
    build_system_prompt, count_tokens, marker, ConversationHistory, HistoryEntry, Role, Transcript,
};
use discourse_core::provider::{Provider, ScriptedProvider};
use discourse_core::session::{JoinOutcome, ParticipantId, SessionPhase};
use discourse_core::sim::{run_simulation, SimConfig};
use discourse_core::{ClientEvent, EngineConfig, Envelope, Output, RoomEngine, ServerEvent};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

const LIFECYCLE_RUNS: usize = 500;
const LIFECYCLE_BATCH: usize = 25;
const LIFECYCLE_LIMIT: Duration = Duration::from_secs(30);

const GATING_SESSIONS: u64 = 1000;
const GATING_LIMIT: Duration = Duration::from_secs(60);

const TRIM_CASES: u64 = 10_000;
const TRIM_LIMIT: Duration = Duration::from_secs(10);

const TOKEN_CASES: u64 = 10_000;

const SELECTION_DRAWS: usize = 10_000;
const SELECTION_EXPECTED: usize = 2500;
const SELECTION_TOLERANCE: usize = 200;
const SELECTION_LIMIT: Duration = Duration::from_secs(5);

/// Injected moderator-backend delays, seconds.
const DELAYS: [f64; 9] = [1.50, 1.56, 1.63, 1.72, 1.80, 1.85, 1.96, 2.19, 2.35];
/// Oracle over the integer-millisecond form of `DELAYS`:
/// n = 9, sum = 16560, sum of squares = 31121600, so the mean is 1.84 and
/// the population variance (n*sum_sq - sum^2) / n^2 / 1e6 = 407/5625.
const DELAY_MEAN: f64 = 1.84;
const DELAY_STD: f64 = 0.268_989_880_024_426_86;
const STATS_TOLERANCE: f64 = 1e-9;
const LATENCY_SLACK: f64 = 0.050;

const FOUR_PERSONA_LIMIT: Duration = Duration::from_secs(20);

const OBSERVED_MESSAGES: usize = 50;

/// Recounted from the fixture bytes when the fixture was written.
const EXCERPT_QUESTIONS: usize = 24;
const EXCERPT_EXPLICIT: usize = 15;
const EXCERPT_IMPLICIT: usize = 9;
const EXCERPT_PASSAGES: usize = 10;
const EXCERPT_STORIES: usize = 5;
const EXCERPT_HISTOGRAM: [(usize, usize); 4] = [(1, 1), (2, 5), (3, 3), (4, 1)];
const FULL_CORPUS_QUESTIONS: usize = 10_580;
const FULL_CORPUS_STORIES: usize = 278;

const WAIT: Duration = Duration::from_secs(10);

type Outcome = Result<String, String>;
type Criterion = (&'static str, Box<dyn Fn(&tokio::runtime::Runtime) -> Outcome>);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn manifest_dir() -> &'static Path {
    Path::new(env!("CARGO_MANIFEST_DIR"))
}

fn main() {
    let rt = tokio::runtime::Runtime::new().expect("tokio runtime");
    let criteria: Vec<Criterion> = vec![
        ("room lifecycle", Box::new(|rt| rt.block_on(room_lifecycle()))),
        ("reveal gating", Box::new(reveal_gating)),
        ("history trimming", Box::new(|_| trimming())),
        ("token rule", Box::new(|_| token_rule())),
        ("passage selection", Box::new(|_| passage_selection())),
        ("latency pipeline", Box::new(|rt| rt.block_on(latency_pipeline()))),
        ("four-persona session", Box::new(|_| four_persona_session())),
        ("prompt fidelity", Box::new(|_| prompt_fidelity())),
        ("broadcast ordering", Box::new(|rt| rt.block_on(broadcast_ordering()))),
        ("fairytaleqa adapter", Box::new(|_| fairytaleqa_adapter())),
    ];
    let mut failed = 0;
    for (name, run) in &criteria {
        let started = Instant::now();
        let outcome = run(&rt);
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name:<22} {secs:>7.2}s  {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name:<22} {secs:>7.2}s  {why}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------- fixtures

fn passage(id: &str, questions: usize) -> Passage {
    Passage {
        passage_id: id.into(),
        title: format!("Story {id}"),
        body: "A cat asked an old buck to carry her to the fair, and sang to him on the way.".into(),
        qa_pairs: (0..questions)
            .map(|i| QaPair {
                question: format!("Question {i}?"),
                answer: format!("Answer {i}."),
                kind: if i % 2 == 0 { QaKind::Explicit } else { QaKind::Implicit },
            })
            .collect(),
    }
}

fn dataset(passages: Vec<Passage>) -> Dataset {
    Dataset {
        name: "fixture".into(),
        passages,
        source_digest: String::new(),
        load_warnings: Vec::new(),
    }
}

async fn start_gateway(capacity: usize, max_questions: usize) -> RunningGateway {
    let config = GatewayConfig {
        engine: EngineConfig {
            capacity,
            max_questions,
            turn_timeout: Duration::from_secs(60),
            ..EngineConfig::default()
        },
        clock: ClockMode::Logical,
        ..GatewayConfig::default()
    };
    Gateway::new(
        Arc::new(dataset(vec![passage("p1", 3)])),
        Arc::new(ScriptedProvider::demo_moderator()),
        config,
    )
    .expect("gateway")
    .bind("127.0.0.1:0")
    .await
    .expect("bind")
}

async fn create(url: &str, name: &str) -> Result<(Client, String), String> {
    let mut c = Client::connect(url).await.map_err(|e| e.to_string())?;
    c.send(&ClientEvent::CreateRoom {
        display_name: name.into(),
    })
    .map_err(|e| e.to_string())?;
    let env = c
        .recv_until(WAIT, |e| e.kind == "room_created")
        .await
        .map_err(|e| format!("{name}: no room_created: {e}"))?;
    let room = env.payload["room_id"].as_str().unwrap_or_default().to_string();
    c.set_identity(name, &room);
    Ok((c, room))
}

async fn join(url: &str, room: &str, name: &str, backfill_from: Option<u64>) -> Result<Client, String> {
    let mut c = Client::connect(url).await.map_err(|e| e.to_string())?;
    c.set_identity(name, room);
    c.send(&ClientEvent::JoinRoom {
        room_id: room.into(),
        display_name: name.into(),
        backfill_from,
    })
    .map_err(|e| e.to_string())?;
    Ok(c)
}

async fn collect_until<F: Fn(&Envelope) -> bool>(c: &mut Client, stop: F) -> Result<Vec<Envelope>, String> {
    let mut out = Vec::new();
    loop {
        let env = c.recv_timeout(WAIT).await.map_err(|e| format!("stream stalled: {e}"))?;
        let done = stop(&env);
        out.push(env);
        if done {
            return Ok(out);
        }
    }
}

fn is_action(env: &Envelope, kind: &str) -> bool {
    env.kind == "moderator_message" && env.payload["action"]["kind"] == kind
}

// ----------------------------------------------------------- room lifecycle

async fn room_lifecycle() -> Outcome {
    let started = Instant::now();
    let gw = start_gateway(4, 1).await;
    let url = gw.url();
    let mut rng = ChaCha8Rng::seed_from_u64(0x11fe);
    let mut done = 0;
    while done < LIFECYCLE_RUNS {
        let batch = LIFECYCLE_BATCH.min(LIFECYCLE_RUNS - done);
        let mut tasks = Vec::new();
        for _ in 0..batch {
            let jitter: Vec<u64> = (0..4).map(|_| rng.random_range(0..3000)).collect();
            tasks.push(tokio::spawn(one_lifecycle(url.clone(), jitter)));
        }
        for t in tasks {
            t.await.map_err(|e| e.to_string())??;
        }
        done += batch;
    }
    gw.shutdown().await;
    let elapsed = started.elapsed();
    ensure(elapsed < LIFECYCLE_LIMIT, || format!("took {elapsed:?}"))?;
    Ok(format!(
        "{LIFECYCLE_RUNS} randomized 5-client rooms, one start and one refusal each"
    ))
}

/// A creator plus four joiners racing for three seats; `jitter` delays each
/// joiner by that many microseconds.
async fn one_lifecycle(url: String, jitter: Vec<u64>) -> Result<(), String> {
    let (mut creator, room) = create(&url, "Host").await?;
    let mut joiners = Vec::new();
    for (i, delay) in jitter.into_iter().enumerate() {
        let (url, room) = (url.clone(), room.clone());
        joiners.push(tokio::spawn(async move {
            tokio::time::sleep(Duration::from_micros(delay)).await;
            let name = format!("Guest{i}");
            let mut c = join(&url, &room, &name, None).await?;
            let first = c
                .recv_until(WAIT, |e| {
                    e.kind == "room_full"
                        || e.kind == "error"
                        || (e.kind == "joined" && e.payload["display_name"] == name.as_str())
                })
                .await
                .map_err(|e| format!("{name}: {e}"))?;
            Ok::<_, String>((c, first))
        }));
    }
    let mut outcomes = Vec::new();
    for j in joiners {
        outcomes.push(j.await.map_err(|e| e.to_string())??);
    }
    let joined = outcomes.iter().filter(|(_, e)| e.kind == "joined").count();
    let full: Vec<_> = outcomes.iter().filter(|(_, e)| e.kind == "room_full").collect();
    ensure(joined == 3 && full.len() == 1, || {
        format!("room {room}: {joined} joined, {} room_full", full.len())
    })?;
    ensure(full[0].1.seq.is_none(), || "room_full was sequenced".into())?;

    let log = collect_until(&mut creator, |e| is_action(e, "open_discussion")).await?;
    let rosters: Vec<usize> = log
        .iter()
        .filter(|e| e.kind == "joined")
        .map(|e| e.payload["roster"].as_array().map_or(0, Vec::len))
        .collect();
    ensure(rosters.iter().all(|n| *n <= 4), || {
        format!("room {room}: roster sizes {rosters:?}")
    })?;
    let starts: Vec<usize> = log
        .iter()
        .enumerate()
        .filter(|(_, e)| e.kind == "session_started")
        .map(|(i, _)| i)
        .collect();
    ensure(starts.len() == 1, || {
        format!("room {room}: {} session_started", starts.len())
    })?;
    let fourth = log
        .iter()
        .position(|e| e.kind == "joined" && e.payload["roster"].as_array().map_or(0, Vec::len) == 4)
        .ok_or_else(|| format!("room {room}: no fourth join"))?;
    ensure(starts[0] > fourth, || {
        format!("room {room}: started before the fourth join")
    })?;
    Ok(())
}

// ------------------------------------------------------------ reveal gating

struct Driver {
    engine: RoomEngine,
    provider: ScriptedProvider,
    pending: VecDeque<(u64, discourse_core::provider::ProviderRequest)>,
    timer: Option<u64>,
    events: Vec<ServerEvent>,
}

impl Driver {
    fn apply(&mut self, out: Vec<Output>) {
        for o in out {
            match o {
                Output::Broadcast(e) | Output::Notice(e) => self.events.push(e),
                Output::CallProvider { ticket, request } => self.pending.push_back((ticket, request)),
                Output::ArmTimer { token, .. } => self.timer = Some(token),
                Output::Closed => {}
            }
        }
    }

    fn complete_call(&mut self, rt: &tokio::runtime::Runtime) {
        if let Some((ticket, request)) = self.pending.pop_front() {
            let result = rt.block_on(self.provider.generate(&request));
            let out = self.engine.provider_completed(ticket, result);
            self.apply(out);
        }
    }

    fn fire_timer(&mut self) {
        if let Some(token) = self.timer.take() {
            let out = self.engine.timer_fired(token);
            self.apply(out);
        }
    }
}

#[derive(Default)]
struct GatingTally {
    reveals: usize,
    prompts: usize,
    lapsed: usize,
    departures: usize,
    hints: usize,
}

fn reveal_gating(rt: &tokio::runtime::Runtime) -> Outcome {
    let started = Instant::now();
    oracle_rejects_early_reveal()?;
    let mut tally = GatingTally::default();
    for seed in 0..GATING_SESSIONS {
        gating_session(rt, seed, &mut tally).map_err(|e| format!("session {seed}: {e}"))?;
    }
    let elapsed = started.elapsed();
    ensure(elapsed < GATING_LIMIT, || format!("took {elapsed:?}"))?;
    ensure(
        tally.prompts > 0 && tally.lapsed > 0 && tally.departures > 0 && tally.hints > 0,
        || "random sessions never exercised prompts, lapses, departures and hints".into(),
    )?;
    Ok(format!(
        "{GATING_SESSIONS} sessions, {} reveals, {} prompts ({} lapsed), {} departures, {} hints, 0 violations",
        tally.reveals, tally.prompts, tally.lapsed, tally.departures, tally.hints
    ))
}

fn gating_session(rt: &tokio::runtime::Runtime, seed: u64, tally: &mut GatingTally) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let capacity = rng.random_range(1..=4usize);
    let config = EngineConfig {
        capacity,
        max_questions: rng.random_range(1..=3),
        ..EngineConfig::default()
    };
    // Per-student chance of speaking when picked: from near-silent to chatty.
    let talkativeness: Vec<f64> = (0..capacity).map(|_| rng.random_range(0.0..1.0)).collect();
    let (engine, pid, out) = RoomEngine::create(
        "ABCDEFGH".parse().expect("room id"),
        "S0",
        passage("p", 3),
        config,
        Arc::new(LogicalClock::new()),
    )
    .map_err(|e| e.to_string())?;
    let mut d = Driver {
        engine,
        provider: ScriptedProvider::demo_moderator(),
        pending: VecDeque::new(),
        timer: None,
        events: Vec::new(),
    };
    d.apply(out);
    let mut pids: Vec<ParticipantId> = vec![pid];
    for i in 1..capacity {
        let (outcome, out) = d.engine.join(&format!("S{i}")).map_err(|e| e.to_string())?;
        match outcome {
            JoinOutcome::Joined { participant_id, .. } => pids.push(participant_id),
            other => return Err(format!("join refused: {other:?}")),
        }
        d.apply(out);
    }
    let mut present = vec![true; capacity];

    let mut steps = 0;
    while !d.engine.is_closed() {
        steps += 1;
        if steps > 20_000 {
            return Err("session did not close".into());
        }
        let in_discussion = d.engine.room().phase == SessionPhase::Discussion;
        let students_act = in_discussion && steps < 2_000 && rng.random_bool(0.7);
        if !d.pending.is_empty() && (!students_act || rng.random_bool(0.4)) {
            d.complete_call(rt);
            continue;
        }
        if !students_act {
            if d.pending.is_empty() {
                d.fire_timer();
            }
            continue;
        }
        let who = rng.random_range(0..capacity);
        if !present[who] {
            continue;
        }
        let roll: f64 = rng.random();
        let out = if roll < 0.01 && present.iter().filter(|p| **p).count() > 1 {
            present[who] = false;
            tally.departures += 1;
            d.engine.leave(pids[who])
        } else if roll < 0.05 {
            tally.hints += 1;
            d.engine.request_hint(pids[who])
        } else if roll < 0.05 + 0.95 * talkativeness[who] {
            d.engine
                .student_message(pids[who], &format!("S{who} says something at step {steps}"))
        } else if d.pending.is_empty() {
            d.fire_timer();
            continue;
        } else {
            continue;
        };
        d.apply(out.map_err(|e| e.to_string())?);
    }

    let entries = d.engine.archive().entries();
    let reveals = check_gating(entries)?;
    let revealed_events = d
        .events
        .iter()
        .filter(|e| matches!(e, ServerEvent::QuestionRevealed { .. }))
        .count();
    ensure(revealed_events == reveals, || {
        format!("{revealed_events} question_revealed events for {reveals} reveal markers")
    })?;
    tally.reveals += reveals;
    tally.prompts += entries
        .iter()
        .filter(|e| e.role == Role::System && e.text == "prompt_student")
        .count();
    tally.lapsed += entries.iter().filter(|e| e.text == marker::PROMPT_EXPIRED).count();
    Ok(())
}

fn oracle_rejects_early_reveal() -> Result<(), String> {
    let mut t = Transcript::new();
    t.push(Role::System, "A", marker::JOINED, 0);
    t.push(Role::System, "B", marker::JOINED, 0);
    t.push(Role::System, "", "ask_question 0", 1);
    t.push(Role::Student, "A", "an answer", 2);
    t.push(Role::System, "B", "prompt_student", 3);
    t.push(Role::System, "", "reveal_answer 0", 4);
    ensure(check_gating(t.entries()).is_err(), || {
        "oracle accepted an early reveal".into()
    })?;
    t.push(Role::System, "", "ask_question 1", 5);
    t.push(Role::Student, "A", "again", 6);
    t.push(Role::System, "B", "prompt_student", 7);
    t.push(Role::System, "B", marker::PROMPT_EXPIRED, 8);
    t.push(Role::System, "", "reveal_answer 1", 9);
    let second: Vec<HistoryEntry> = t.entries()[..2].iter().chain(&t.entries()[6..]).cloned().collect();
    ensure(check_gating(&second).is_ok(), || {
        "oracle rejected a lapsed prompt round".into()
    })
}

/// Independent reading of the archive: before each `reveal_answer i`, every
/// participant still present must have spoken since `ask_question i`, or
/// have been prompted since then and either spoken or let the prompt lapse.
fn check_gating(entries: &[HistoryEntry]) -> Result<usize, String> {
    let system = |e: &HistoryEntry| e.role == Role::System;
    let mut names: Vec<String> = Vec::new();
    let mut reveals = 0;
    for (r, e) in entries.iter().enumerate() {
        if system(e) && e.text == marker::JOINED && !names.contains(&e.author_name) {
            names.push(e.author_name.clone());
        }
        let Some(index) = e.text.strip_prefix("reveal_answer ").filter(|_| system(e)) else {
            continue;
        };
        reveals += 1;
        let ask = format!("ask_question {index}");
        let a = entries[..r]
            .iter()
            .rposition(|x| system(x) && x.text == ask)
            .ok_or_else(|| format!("reveal {index} without its question"))?;
        for name in &names {
            let left = entries[..r]
                .iter()
                .any(|x| system(x) && x.text == marker::LEFT && &x.author_name == name);
            if left {
                continue;
            }
            let window = &entries[a..r];
            let spoke = |w: &[HistoryEntry]| w.iter().any(|x| x.role == Role::Student && &x.author_name == name);
            let round_done = window
                .iter()
                .enumerate()
                .filter(|(_, x)| system(x) && x.text == "prompt_student" && &x.author_name == name)
                .any(|(i, _)| {
                    let after = &window[i..];
                    spoke(after)
                        || after
                            .iter()
                            .any(|x| system(x) && x.text == marker::PROMPT_EXPIRED && &x.author_name == name)
                });
            if !spoke(window) && !round_done {
                return Err(format!("question {index} revealed before {name} had a chance"));
            }
        }
    }
    Ok(reveals)
}

// ---------------------------------------------------------------- trimming

fn text_of(tokens: usize) -> String {
    "w".repeat(tokens * 4)
}

fn trimming() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x7219);
    let mut appends = 0usize;
    let mut trimmed_cases = 0usize;
    for case in 0..TRIM_CASES {
        let budget = rng.random_range(50..=10_000usize);
        let system_tokens = rng.random_range(1..=500usize);
        let system_prompt = text_of(system_tokens);
        let mut history = ConversationHistory::new(system_prompt.clone(), budget, 0);
        let n = rng.random_range(1..=60u64);
        let mut all: Vec<(u64, usize)> = Vec::new();
        let mut trimmed = false;
        for seq in 1..=n {
            let size = rng.random_range(1..=500usize);
            all.push((seq, size));
            let report = history.append_and_trim(HistoryEntry::new(Role::Student, "s", text_of(size), seq, seq));
            appends += 1;
            trimmed |= report.removed > 0;

            let survivors: Vec<(u64, usize)> = history.entries().map(|e| (e.seq, e.token_len)).collect();
            let fail = |what: &str| format!("case {case} (budget {budget}, append {seq}): {what}");
            ensure(history.system_entry().text == system_prompt, || {
                fail("system prompt changed")
            })?;
            ensure(all.ends_with(&survivors), || fail("survivors are not a suffix"))?;
            ensure(survivors.last() == Some(&(seq, size)), || fail("newest entry dropped"))?;
            let total = system_tokens + survivors.iter().map(|s| s.1).sum::<usize>();
            ensure(history.token_total() == total, || {
                fail("token_total disagrees with recount")
            })?;
            ensure(total <= budget || survivors.len() == 1, || {
                fail("over budget with removable entries")
            })?;
            // Maximality: the entry just before the survivors would not have fit.
            if survivors.len() < all.len() {
                let dropped = all[all.len() - survivors.len() - 1].1;
                ensure(total + dropped > budget, || fail("dropped an entry that fit"))?;
            }
        }
        trimmed_cases += usize::from(trimmed);
    }
    let elapsed = started.elapsed();
    ensure(elapsed < TRIM_LIMIT, || format!("took {elapsed:?}"))?;
    Ok(format!(
        "{TRIM_CASES} histories, {appends} appends checked, {trimmed_cases} cases trimmed"
    ))
}

// -------------------------------------------------------------- token rule

fn token_rule() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x70c3);
    let pools: [&[char]; 4] = [
        &['a', 'Z', '0', ' ', '\t', '\n', '.'],
        &['é', 'ß', 'ж', 'λ', 'ü'],
        &['猫', '鹿', '話', '語'],
        &['🐈', '🦌', '👍', '\u{200d}'],
    ];
    for case in 0..TOKEN_CASES {
        let len = match case % 4 {
            0 => rng.random_range(0..=8),
            1 => rng.random_range(0..=64),
            _ => rng.random_range(0..=2000),
        };
        let s: String = (0..len)
            .map(|_| {
                let pool = pools[rng.random_range(0..pools.len())];
                pool[rng.random_range(0..pool.len())]
            })
            .collect();
        let chars = s.chars().count();
        #[allow(clippy::manual_div_ceil)]
        let oracle = if chars == 0 { 1 } else { (chars + 3) / 4 };
        let got = count_tokens(&s);
        ensure(got == oracle, || {
            format!("case {case}: {chars} chars gave {got}, expected {oracle}")
        })?;
    }
    Ok(format!("{TOKEN_CASES} random strings, exact match"))
}

// ------------------------------------------------------- passage selection

fn passage_selection() -> Outcome {
    let started = Instant::now();
    let mut passages = Vec::new();
    for i in 0..10 {
        // Even slots are eligible at min_qa_pairs = 3.
        let questions = if i % 2 == 0 && i < 8 { 3 + i / 2 } else { i % 3 };
        passages.push(passage(&format!("p{i}"), questions));
    }
    let ds = dataset(passages);
    let eligible: Vec<String> = ds.eligible(3).map(|p| p.passage_id.clone()).collect();
    ensure(eligible.len() == 4 && ds.passages.len() == 10, || {
        format!("fixture has {} eligible", eligible.len())
    })?;

    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for _ in 0..SELECTION_DRAWS {
        let p = select_passage_with(&ds, 3, &mut rng).map_err(|e| e.to_string())?;
        *counts.entry(p.passage_id.clone()).or_default() += 1;
    }
    for id in counts.keys() {
        ensure(eligible.contains(id), || format!("ineligible passage {id} drawn"))?;
    }
    for id in &eligible {
        let n = counts.get(id).copied().unwrap_or(0);
        ensure(n.abs_diff(SELECTION_EXPECTED) <= SELECTION_TOLERANCE, || {
            format!("{id} drawn {n} times, outside {SELECTION_EXPECTED}±{SELECTION_TOLERANCE}")
        })?;
    }
    let elapsed = started.elapsed();
    ensure(elapsed < SELECTION_LIMIT, || format!("took {elapsed:?}"))?;
    Ok(format!(
        "{SELECTION_DRAWS} draws, counts {:?}",
        counts.values().collect::<Vec<_>>()
    ))
}

// -------------------------------------------------------- latency pipeline

/// Mean and population standard deviation, computed two-pass.
fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

const ONE_QUESTION: &str = r#"{"passage_id":"p1","title":"The Cat and the Buck","body":"A cat asked an old buck to carry her to the fair, and sang to him on the way.","qa":[{"question":"Who carried the cat?","answer":"The old buck.","kind":"explicit"}]}
"#;

async fn latency_pipeline() -> Outcome {
    let oracle_ms: [u64; 9] = DELAYS.map(|d| (d * 1000.0).round() as u64);
    let sum: u64 = oracle_ms.iter().sum();
    let sum_sq: u64 = oracle_ms.iter().map(|x| x * x).sum();
    let n = oracle_ms.len() as u64;
    let mean = sum as f64 / n as f64 / 1000.0;
    let std = (((n * sum_sq - sum * sum) as f64) / (n * n) as f64).sqrt() / 1000.0;
    ensure(mean == DELAY_MEAN && (std - DELAY_STD).abs() < 1e-15, || {
        format!("frozen oracle drifted: mean {mean}, std {std}")
    })?;
    ensure(format!("{mean:.2} {std:.2}") == "1.84 0.27", || {
        "injected vector does not round to 1.84/0.27".into()
    })?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    std::fs::write(dir.path().join("passages.jsonl"), ONE_QUESTION).map_err(|e| e.to_string())?;
    let mut toml = String::from(
        "seed = 3\nmax_questions = 1\nturn_timeout_ms = 5000\nwatchdog_secs = 30\n[dataset]\npath = \"passages.jsonl\"\n",
    );
    for name in ["Ava", "Ben", "Cleo", "Dev"] {
        std::fs::write(
            dir.path().join(format!("{name}.txt")),
            format!("{name}: the old buck carried her.\n"),
        )
        .map_err(|e| e.to_string())?;
        toml.push_str(&format!(
            "[[persona]]\nname = \"{name}\"\narchetype = \"constructive\"\nsource = {{ scripted = \"{name}.txt\" }}\n"
        ));
    }
    let mut config = SimConfig::from_toml(&toml, dir.path()).map_err(|e| e.to_string())?;
    config.inject_delays = Some(DELAYS.to_vec());
    let report = run_simulation(&config).await.map_err(|e| e.to_string())?;

    ensure(report.latency.len() == DELAYS.len(), || {
        format!(
            "{} interactions measured, expected {}",
            report.latency.len(),
            DELAYS.len()
        )
    })?;
    let measured: Vec<f64> = report.latency.iter().map(|r| r.seconds).collect();
    for (i, (m, d)) in measured.iter().zip(DELAYS).enumerate() {
        ensure(*m >= d && *m <= d + LATENCY_SLACK, || {
            format!("interaction {i}: measured {m:.4}s for injected {d}s")
        })?;
    }
    let (oracle_mean, oracle_std) = mean_std(&measured);
    ensure(
        (report.mean_latency - oracle_mean).abs() <= STATS_TOLERANCE
            && (report.std_latency - oracle_std).abs() <= STATS_TOLERANCE,
        || {
            format!(
                "report {}/{} vs oracle {oracle_mean}/{oracle_std}",
                report.mean_latency, report.std_latency
            )
        },
    )?;
    let worst = measured.iter().zip(DELAYS).map(|(m, d)| m - d).fold(0.0, f64::max);
    Ok(format!(
        "9 interactions, mean {:.4}s σ {:.4}s (injected 1.84/{DELAY_STD:.4}), worst slack {:.1} ms",
        report.mean_latency,
        report.std_latency,
        worst * 1000.0
    ))
}

// ------------------------------------------------------ four-persona session

struct TsvLine {
    role: String,
    name: String,
    text: String,
}

fn unescape_tsv(s: &str) -> String {
    s.replace("\\t", "\t")
        .replace("\\n", "\n")
        .replace("\\r", "\r")
        .replace("\\\\", "\\")
}

fn read_tsv(path: &Path) -> Result<Vec<TsvLine>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(text
        .lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            TsvLine {
                role: f[2].to_string(),
                name: unescape_tsv(f[3]),
                text: unescape_tsv(f[5]),
            }
        })
        .collect())
}

fn run_personas(out: &Path) -> Result<(), String> {
    let config = manifest_dir().join("configs/four-personas/sim.toml");
    let output = Command::new(env!("CARGO_BIN_EXE_discourse"))
        .arg("simulate")
        .arg(&config)
        .arg("--output")
        .arg(out)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(output.status.success(), || {
        format!(
            "simulate exited {:?}: {}",
            output.status.code(),
            String::from_utf8_lossy(&output.stderr)
        )
    })
}

fn four_persona_session() -> Outcome {
    let started = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let runs: Vec<PathBuf> = (0..2).map(|i| dir.path().join(format!("run{i}"))).collect();
    for r in &runs {
        run_personas(r)?;
    }
    let elapsed = started.elapsed();

    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(runs[0].join("report.json")).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
    let feedback = report["feedback"]["per_student"]
        .as_object()
        .ok_or("report has no feedback")?;
    ensure(feedback.len() == 4, || format!("{} feedback entries", feedback.len()))?;

    let lines = read_tsv(&runs[0].join("transcript.tsv"))?;
    for (name, entry) in feedback {
        let texts: Vec<&str> = lines
            .iter()
            .filter(|l| l.role == "student" && &l.name == name)
            .map(|l| l.text.as_str())
            .collect();
        let tokens: usize = texts.iter().map(|t| t.chars().count().div_ceil(4).max(1)).sum();
        let mean = if texts.is_empty() {
            0.0
        } else {
            tokens as f64 / texts.len() as f64
        };
        let prompted = lines
            .iter()
            .filter(|l| l.role == "system" && l.text == "prompt_student" && &l.name == name)
            .count();
        ensure(
            entry["message_count"] == texts.len()
                && entry["prompted_count"] == prompted
                && (entry["mean_message_tokens"].as_f64().unwrap_or(f64::NAN) - mean).abs() < 1e-12
                && entry.get("error").is_none(),
            || {
                format!(
                    "{name}: report {entry} vs recount {} msgs, {prompted} prompts, {mean} tokens",
                    texts.len()
                )
            },
        )?;
    }
    let a = std::fs::read(runs[0].join("transcript.tsv")).map_err(|e| e.to_string())?;
    let b = std::fs::read(runs[1].join("transcript.tsv")).map_err(|e| e.to_string())?;
    ensure(a == b, || "transcripts differ between seeded runs".into())?;
    ensure(elapsed < FOUR_PERSONA_LIMIT, || format!("two runs took {elapsed:?}"))?;
    let summary: Vec<String> = feedback
        .iter()
        .map(|(n, e)| format!("{n} {}/{}", e["message_count"], e["prompted_count"]))
        .collect();
    Ok(format!(
        "exit 0 twice, {} transcript bytes identical, messages/prompts {}",
        a.len(),
        summary.join(", ")
    ))
}

// --------------------------------------------------------- prompt fidelity

#[derive(Deserialize)]
struct PromptFixture {
    names: Vec<String>,
    passage: Passage,
}

fn prompt_fidelity() -> Outcome {
    let golden_dir = manifest_dir().join("../core/tests/golden");
    let read = |f: &str| std::fs::read_to_string(golden_dir.join(f)).map_err(|e| format!("{f}: {e}"));
    let fixture: PromptFixture = serde_json::from_str(&read("prompt_fixture.json")?).map_err(|e| e.to_string())?;
    let golden = read("system_prompt.txt")?;
    let prompt =
        build_system_prompt(&fixture.names, &fixture.passage, &fixture.passage.qa_pairs).map_err(|e| e.to_string())?;
    for sentence in [
        "You are moderating a group chat for primary and lower secondary school students.",
        "Do not provide answers until all students have had a chance to respond.",
    ] {
        ensure(prompt.contains(sentence), || format!("missing sentence: {sentence}"))?;
    }
    ensure(prompt == golden, || "prompt differs from the golden file".into())?;
    Ok(format!(
        "both verbatim sentences present, {} bytes equal to golden",
        prompt.len()
    ))
}

// ------------------------------------------------------ broadcast ordering

fn seq_log(envs: &[Envelope]) -> Vec<(u64, String, String)> {
    envs.iter()
        .filter_map(|e| e.seq.map(|s| (s, e.kind.clone(), e.payload.to_string())))
        .collect()
}

async fn broadcast_ordering() -> Outcome {
    let gw = start_gateway(4, 1).await;
    let url = gw.url();
    let (first, room) = create(&url, "Ethan").await?;
    let mut clients = vec![first];
    for name in ["Jordan", "Sophia", "Daniel"] {
        clients.push(join(&url, &room, name, Some(0)).await?);
    }
    let mut logs = Vec::new();
    for c in &mut clients {
        logs.push(collect_until(c, |e| is_action(e, "ask_question")).await?);
    }
    // Daniel never answers, so the floor stays open for every message.
    let mut last_seq = 0;
    for i in 0..OBSERVED_MESSAGES {
        let who = i % 3;
        if i == OBSERVED_MESSAGES / 2 {
            let old = clients.remove(1);
            old.close();
            tokio::time::sleep(Duration::from_millis(300)).await;
            clients.insert(1, join(&url, &room, "Jordan", Some(0)).await?);
            logs[1].clear();
        }
        let text = format!("message {i}");
        clients[who]
            .send(&ClientEvent::PostMessage { text: text.clone() })
            .map_err(|e| e.to_string())?;
        let echo = collect_until(&mut clients[who], |e| {
            e.kind == "chat_broadcast" && e.payload["text"] == text.as_str()
        })
        .await?;
        last_seq = echo.last().and_then(|e| e.seq).unwrap_or(0);
        logs[who].extend(echo);
    }
    for (c, log) in clients.iter_mut().zip(logs.iter_mut()) {
        if log.last().and_then(|e| e.seq) != Some(last_seq) {
            log.extend(collect_until(c, |e| e.seq == Some(last_seq)).await?);
        }
    }
    gw.shutdown().await;

    let reference = seq_log(&logs[0]);
    ensure(reference.iter().enumerate().all(|(i, e)| e.0 == i as u64), || {
        "reference log has gaps".into()
    })?;
    ensure(reference.len() as u64 == last_seq + 1, || {
        "reference log is short".into()
    })?;
    let chats = reference.iter().filter(|e| e.1 == "chat_broadcast").count();
    ensure(chats == OBSERVED_MESSAGES, || format!("{chats} chat broadcasts"))?;
    for (i, log) in logs.iter().enumerate().skip(1) {
        ensure(seq_log(log) == reference, || format!("observer {i} diverged"))?;
    }
    Ok(format!(
        "4 observers agree on {} envelopes; reconnect backfilled from seq 0 without gaps",
        reference.len()
    ))
}

// ------------------------------------------------------ fairytaleqa adapter

fn fairytaleqa_adapter() -> Outcome {
    let path = manifest_dir().join("tests/fixtures/fairytaleqa_excerpt.csv");
    let ds = load_dataset(&path, DatasetFormat::FairytaleQa).map_err(|e| e.to_string())?;
    let report = validate_dataset(&ds);
    let explicit = report.kinds.get(&QaKind::Explicit).copied().unwrap_or(0);
    let implicit = report.kinds.get(&QaKind::Implicit).copied().unwrap_or(0);
    let histogram: Vec<(usize, usize)> = report.qa_histogram.iter().map(|(k, v)| (*k, *v)).collect();
    ensure(
        report.questions == EXCERPT_QUESTIONS
            && explicit == EXCERPT_EXPLICIT
            && implicit == EXCERPT_IMPLICIT
            && report.passages == EXCERPT_PASSAGES
            && report.distinct_titles == EXCERPT_STORIES
            && histogram == EXCERPT_HISTOGRAM
            && report.warnings.is_empty(),
        || format!("excerpt report: {report:?}"),
    )?;

    let full = match std::env::var_os("FAIRYTALEQA_PATH") {
        None => "full corpus skipped (FAIRYTALEQA_PATH unset)".to_string(),
        Some(p) => {
            let ds = load_dataset(Path::new(&p), DatasetFormat::FairytaleQa).map_err(|e| e.to_string())?;
            let r = validate_dataset(&ds);
            ensure(
                r.questions == FULL_CORPUS_QUESTIONS && r.distinct_titles == FULL_CORPUS_STORIES,
                || format!("full corpus: {} questions, {} stories", r.questions, r.distinct_titles),
            )?;
            format!(
                "full corpus {} questions from {} stories",
                r.questions, r.distinct_titles
            )
        }
    };
    Ok(format!(
        "excerpt: {EXCERPT_QUESTIONS} questions ({EXCERPT_EXPLICIT} explicit, {EXCERPT_IMPLICIT} implicit), {EXCERPT_PASSAGES} passages, {EXCERPT_STORIES} stories; {full}"
    ))
}
