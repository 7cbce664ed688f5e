//! Acceptance suite. Prints one line per criterion and exits non-zero if a
//! criterion fails for a reason other than a recorded deviation.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use txpredict_core::checker::{
    anti_dependencies, check_causal, check_level, check_rc, check_serializable, is_valid_commit_order,
    oracle_serializable, IsolationLevel, Verdict,
};
use txpredict_core::predictor::{
    build_program, extract_predicted_history, predict, PredictConfig, PredictOutcome, PredictedHistory,
    PredictionStrategy,
};
use txpredict_core::sample::random_history;
use txpredict_core::store::{run_workload, validate, DivergenceReason, ReadPolicy, ValidationOutcome, Workload};
use txpredict_core::trace_io::emit_trace;
use txpredict_core::{Event, ExecutionHistory, KeyId, SessionId, Transaction, TxnId};
use txpredict_solver::{Backend, Budget, Formula, NativeBackend, SatResult};

const C1_LIMIT: Duration = Duration::from_secs(5);
const C2_LIMIT: Duration = Duration::from_secs(5);
const C3_LIMIT: Duration = Duration::from_secs(120);
const C4_LIMIT: Duration = Duration::from_secs(60);
const C5_LIMIT: Duration = Duration::from_secs(300);
const CORPUS_RUNS: u64 = 500;
const ORACLE_HISTORIES: u64 = 200;
const ORACLE_MAX_TXNS: usize = 6;

use IsolationLevel::{Causal, ReadCommitted};
use PredictionStrategy::{ApproxRelaxed, ApproxStrict, ExactStrict};

struct Line {
    id: u8,
    pass: bool,
    detail: String,
    /// Failure explained in the decision log; does not fail the target.
    known: bool,
}

fn cfg() -> PredictConfig {
    PredictConfig::default()
}

fn acc() -> KeyId {
    KeyId::new("acc")
}

fn predict_outcome(h: &ExecutionHistory, level: IsolationLevel, s: PredictionStrategy) -> PredictOutcome {
    predict(h, level, s, &cfg()).expect("prediction runs").outcome
}

fn is_fig3(p: &PredictedHistory) -> bool {
    p.changed_reads.len() == 1
        && p.changed_reads[0].reader == TxnId(2)
        && p.changed_reads[0].observed == TxnId(1)
        && p.changed_reads[0].predicted == TxnId(0)
        && p.history.wr().get(&acc()).is_some_and(|w| w.contains(&(TxnId(0), TxnId(2))))
}

fn criterion_1() -> Line {
    let started = Instant::now();
    let mut notes = Vec::new();
    let mut relaxed_ok = true;
    let mut strict_unsat_only = true;
    let mut all_ok = true;
    for seed in 0..5 {
        let (_, obs) = run_workload(&Workload::DepositDeposit, 2, 1, seed, ReadPolicy::LatestWriter);
        if !check_serializable(&obs).unwrap().is_serializable() {
            relaxed_ok = false;
            notes.push(format!("seed {seed}: observed unserializable"));
        }
        for s in PredictionStrategy::ALL {
            let outcome = predict_outcome(&obs, Causal, s);
            let ok = match outcome.prediction() {
                Some(p) if is_fig3(p) => {
                    let r = validate(p, &Workload::DepositDeposit, 2, 1, seed, Causal).unwrap();
                    let bal = r.final_values.get(&acc()).copied();
                    let ok = r.outcome == ValidationOutcome::ValidatedUnserializable
                        && !r.diverged
                        && matches!(bal, Some(50 | 60));
                    if !ok {
                        notes.push(format!("seed {seed} {s}: validate {} diverged={} final={bal:?}", r.outcome.tag(), r.diverged));
                    }
                    ok
                }
                Some(_) => {
                    notes.push(format!("seed {seed} {s}: sat but not the t2<-t0 prediction"));
                    false
                }
                None => {
                    if seed == 0 {
                        notes.push(format!("{s}: {}", outcome.label()));
                    }
                    false
                }
            };
            if !ok {
                all_ok = false;
                if s == ApproxRelaxed || !matches!(outcome, PredictOutcome::None) {
                    relaxed_ok = false;
                    strict_unsat_only = false;
                }
            }
        }
    }
    let elapsed = started.elapsed();
    let pass = all_ok && elapsed < C1_LIMIT;
    let known = !pass && relaxed_ok && strict_unsat_only && elapsed < C1_LIMIT;
    if relaxed_ok {
        notes.push("approx-relaxed: t2<-t0, validated-unserializable, diverged=false, final in {50,60}".into());
    }
    notes.push(format!("{:.2}s", elapsed.as_secs_f64()));
    Line {
        id: 1,
        pass,
        detail: notes.join("; "),
        known,
    }
}

/// Seed whose deposit-withdraw schedule runs s1, s2, s1 with every read
/// observing the previous transaction.
fn fig9b_seed() -> (u64, ExecutionHistory) {
    (0..1000)
        .find_map(|seed| {
            let (trace, h) = run_workload(&Workload::DepositWithdraw, 2, 2, seed, ReadPolicy::LatestWriter);
            let sids: Vec<u32> = (1..=3).filter_map(|t| h.session_of(TxnId(t))).map(|s| s.0).collect();
            let chain = h.wr()[&acc()].iter().copied().collect::<Vec<_>>()
                == vec![(TxnId(0), TxnId(1)), (TxnId(1), TxnId(2)), (TxnId(2), TxnId(3))];
            (h.len() == 4 && sids == [1, 2, 1] && chain && trace.schedule.is_some()).then_some((seed, h))
        })
        .expect("some seed schedules s1, s2, s1")
}

/// The relaxed program with t2 reading acc from t0, session 1 cut after t1
/// and session 2 cut after t2.
fn pinned_fig9c(obs: &ExecutionHistory) -> Option<PredictedHistory> {
    let (mut program, vars) = build_program(obs, Causal, ApproxRelaxed);
    for (sid, cut_at) in [(SessionId(1), TxnId(1)), (SessionId(2), TxnId(2))] {
        let s = &vars.sessions[&sid];
        let last = obs.txn(cut_at).unwrap().last_pos().unwrap() as i64;
        program.assert(Formula::eq(s.boundary, last)).unwrap();
        for slot in s.reads.iter().filter(|r| r.reader == TxnId(2)) {
            program.assert(Formula::eq(slot.choice, 0i64)).unwrap();
        }
    }
    match NativeBackend::default().check_sat(&program, &Budget::unlimited()).unwrap() {
        SatResult::Sat(m) => Some(extract_predicted_history(&m, obs, &vars, Causal).unwrap()),
        _ => None,
    }
}

fn criterion_2() -> Line {
    let started = Instant::now();
    let (seed, obs) = fig9b_seed();
    let mut notes = vec![format!("seed {seed}")];
    let strict = predict_outcome(&obs, Causal, ApproxStrict);
    let relaxed = predict_outcome(&obs, Causal, ApproxRelaxed);
    notes.push(format!("approx-strict {}", strict.label()));
    notes.push(format!("approx-relaxed {}", relaxed.label()));
    let mut pass = matches!(strict, PredictOutcome::None) && relaxed.prediction().is_some();
    if let Some(p) = relaxed.prediction() {
        let r = validate(p, &Workload::DepositWithdraw, 2, 2, seed, Causal).unwrap();
        let changed: Vec<String> = p
            .changed_reads
            .iter()
            .map(|c| format!("{}<-{}", c.reader, c.predicted))
            .collect();
        notes.push(format!("default model [{}] validates {}", changed.join(","), r.outcome.tag()));
    }
    match pinned_fig9c(&obs) {
        Some(p) => {
            let oracle = oracle_serializable(&p.history).unwrap();
            let r = validate(&p, &Workload::DepositWithdraw, 2, 2, seed, Causal).unwrap();
            let abort = r
                .divergences
                .iter()
                .any(|d| d.tid == TxnId(2) && d.reason == DivergenceReason::AbortRewind);
            notes.push(format!(
                "t2<-t0 model: in-boundary {}, validate diverged={} abort-rewind={abort} {}",
                if oracle.is_serializable() { "serializable" } else { "unserializable" },
                r.diverged,
                r.outcome.tag()
            ));
            pass &= !oracle.is_serializable() && r.diverged && abort && r.outcome == ValidationOutcome::Serializable;
        }
        None => {
            notes.push("t2<-t0 model rejected by the relaxed program".into());
            pass = false;
        }
    }
    let elapsed = started.elapsed();
    notes.push(format!("{:.2}s", elapsed.as_secs_f64()));
    Line {
        id: 2,
        pass: pass && elapsed < C2_LIMIT,
        detail: notes.join("; "),
        known: false,
    }
}

fn criterion_3() -> Line {
    let started = Instant::now();
    let (mut causal_sat, mut rc_sat, mut validated, mut diverged) = (0, 0, 0, 0);
    for seed in 0..10 {
        let (_, obs) = run_workload(&Workload::Voter, 3, 4, seed, ReadPolicy::LatestWriter);
        if predict_outcome(&obs, Causal, ApproxRelaxed).prediction().is_some() {
            causal_sat += 1;
        }
        if let Some(p) = predict_outcome(&obs, ReadCommitted, ApproxRelaxed).prediction() {
            rc_sat += 1;
            let r = validate(p, &Workload::Voter, 3, 4, seed, ReadCommitted).unwrap();
            validated += (r.outcome == ValidationOutcome::ValidatedUnserializable) as u32;
            diverged += r.diverged as u32;
        }
    }
    let elapsed = started.elapsed();
    Line {
        id: 3,
        pass: causal_sat == 0 && rc_sat == 10 && validated >= 9 && elapsed < C3_LIMIT,
        detail: format!(
            "causal sat {causal_sat}/10; rc sat {rc_sat}/10; rc validated-unserializable {validated}/{rc_sat} ({diverged} diverged); {:.2}s",
            elapsed.as_secs_f64()
        ),
        known: false,
    }
}

fn criterion_4() -> Line {
    let started = Instant::now();
    let mut mismatches = 0;
    let mut unser = 0;
    for seed in 0..ORACLE_HISTORIES {
        let h = random_history(seed, ORACLE_MAX_TXNS);
        let a = check_serializable(&h).unwrap().is_serializable();
        let b = oracle_serializable(&h).unwrap().is_serializable();
        mismatches += (a != b) as u32;
        unser += (!b) as u32;
    }
    let elapsed = started.elapsed();
    Line {
        id: 4,
        pass: mismatches == 0 && elapsed < C4_LIMIT,
        detail: format!(
            "{ORACLE_HISTORIES} histories ({unser} unserializable), {mismatches} mismatches; {:.2}s",
            elapsed.as_secs_f64()
        ),
        known: false,
    }
}

/// Parameters of the i-th observed run of the shared corpus.
fn corpus_params(i: u64) -> (Workload, u32, u32, u64) {
    let ws = [Workload::DepositDeposit, Workload::DepositWithdraw, Workload::Voter, Workload::SmallbankLite];
    let w = ws[(i % 4) as usize].clone();
    let sessions = 2 + (i / 4 % 3) as u32;
    let txns = if sessions == 2 { 1 + (i / 12 % 4) as u32 } else { 1 + (i / 12 % 2) as u32 };
    (w, sessions, txns, i)
}

#[derive(Default)]
struct Corpus {
    /// Every history the suite produced, for criteria 7 and 8.
    histories: Vec<ExecutionHistory>,
    predictions: usize,
    soundness_violations: Vec<String>,
    unknown: usize,
    sats: BTreeMap<PredictionStrategy, usize>,
    approx_not_exact: Vec<String>,
    strict_not_relaxed: Vec<String>,
    exact_not_approx: Vec<String>,
    validated: usize,
    elapsed: Duration,
}

fn fig8() -> ExecutionHistory {
    ExecutionHistory::from_transactions(
        vec![
            Transaction::committed(TxnId(1), SessionId(1), vec![Event::write("k", 1, 1)]),
            Transaction::committed(TxnId(2), SessionId(2), vec![Event::write("k", 1, 2)]),
            Transaction::committed(TxnId(3), SessionId(3), vec![Event::read("k", 1, TxnId(2), 2)]),
        ],
        [],
    )
    .unwrap()
}

/// Approximate program for `h` with every read and boundary fixed to the
/// observed history.
fn fixed_history_reported_unserializable(h: &ExecutionHistory, level: IsolationLevel) -> bool {
    let (mut program, vars) = build_program(h, level, ApproxStrict);
    for s in vars.sessions.values() {
        program.assert(Formula::eq(s.boundary, u32::MAX as i64)).unwrap();
        for slot in &s.reads {
            program.assert(Formula::eq(slot.choice, slot.obs.0 as i64)).unwrap();
        }
    }
    NativeBackend::default()
        .check_sat(&program, &Budget::unlimited())
        .unwrap()
        .is_sat()
}

fn build_corpus() -> Corpus {
    let started = Instant::now();
    let mut c = Corpus::default();
    for i in 0..CORPUS_RUNS {
        let (w, sessions, txns, seed) = corpus_params(i);
        let (_, obs) = run_workload(&w, sessions, txns, seed, ReadPolicy::LatestWriter);
        c.histories.push(obs.clone());
        for level in [Causal, ReadCommitted] {
            let tag = format!("{} {sessions}x{txns} seed {seed} {}", w.name(), level.name());
            let mut sat = BTreeMap::new();
            for s in PredictionStrategy::ALL {
                let outcome = predict_outcome(&obs, level, s);
                c.unknown += matches!(outcome, PredictOutcome::Unknown(_)) as usize;
                sat.insert(s, outcome.prediction().is_some());
                if let Some(p) = outcome.prediction() {
                    c.predictions += 1;
                    *c.sats.entry(s).or_default() += 1;
                    if s != ExactStrict && oracle_serializable(&p.history).unwrap().is_serializable() {
                        c.soundness_violations.push(format!("{tag} {s}"));
                    }
                    c.histories.push(p.history.clone());
                    if s == ApproxRelaxed {
                        let r = validate(p, &w, sessions, txns, seed, level).unwrap();
                        c.validated += (r.outcome == ValidationOutcome::ValidatedUnserializable) as usize;
                        c.histories.push(r.validating_history);
                    }
                }
            }
            if sat[&ApproxStrict] && !sat[&ExactStrict] {
                c.approx_not_exact.push(tag.clone());
            }
            if sat[&ApproxStrict] && !sat[&ApproxRelaxed] {
                c.strict_not_relaxed.push(tag.clone());
            }
            if sat[&ExactStrict] && !sat[&ApproxStrict] {
                c.exact_not_approx.push(tag);
            }
        }
    }
    c.elapsed = started.elapsed();
    for i in 0..CORPUS_RUNS / 5 {
        let (w, sessions, txns, seed) = corpus_params(i);
        for level in [Causal, ReadCommitted] {
            let (_, h) = run_workload(&w, sessions, txns, seed, ReadPolicy::RandomWeak { level, seed });
            c.histories.push(h);
        }
    }
    for seed in 0..ORACLE_HISTORIES {
        c.histories.push(random_history(seed, ORACLE_MAX_TXNS));
    }
    c.histories.push(fig8());
    c
}

fn sample(v: &[String]) -> String {
    v.iter().take(3).cloned().collect::<Vec<_>>().join(", ")
}

fn criterion_5(c: &Corpus) -> Line {
    let h = fig8();
    let mut fig8_reported = Vec::new();
    for level in [Causal, ReadCommitted] {
        if fixed_history_reported_unserializable(&h, level) {
            fig8_reported.push(format!("fixed {}", level.name()));
        }
        for s in [ApproxStrict, ApproxRelaxed] {
            if let Some(p) = predict_outcome(&h, level, s).prediction() {
                if oracle_serializable(&p.history).unwrap().is_serializable() {
                    fig8_reported.push(format!("{s} {}", level.name()));
                }
            }
        }
    }
    let pass = c.soundness_violations.is_empty() && fig8_reported.is_empty() && c.unknown == 0 && c.elapsed < C5_LIMIT;
    Line {
        id: 5,
        pass,
        detail: format!(
            "{CORPUS_RUNS} runs x 2 levels, {} predictions, {} unknown, {} violations{}; fig8 reported unserializable: {}; {} relaxed predictions validated; {:.1}s",
            c.predictions,
            c.unknown,
            c.soundness_violations.len(),
            if c.soundness_violations.is_empty() { String::new() } else { format!(" ({})", sample(&c.soundness_violations)) },
            if fig8_reported.is_empty() { "never".to_string() } else { fig8_reported.join(", ") },
            c.validated,
            c.elapsed.as_secs_f64()
        ),
        known: false,
    }
}

fn criterion_6(c: &Corpus) -> Line {
    for tag in &c.exact_not_approx {
        println!("    logged: exact-strict sat, approx-strict unsat: {tag}");
    }
    let pass = c.approx_not_exact.is_empty() && c.strict_not_relaxed.is_empty() && c.exact_not_approx.is_empty();
    Line {
        id: 6,
        pass,
        detail: format!(
            "sat counts exact-strict {} approx-strict {} approx-relaxed {}; approx-not-exact {} strict-not-relaxed {} exact-not-approx {} {}",
            c.sats.get(&ExactStrict).unwrap_or(&0),
            c.sats.get(&ApproxStrict).unwrap_or(&0),
            c.sats.get(&ApproxRelaxed).unwrap_or(&0),
            c.approx_not_exact.len(),
            c.strict_not_relaxed.len(),
            c.exact_not_approx.len(),
            sample(&[c.approx_not_exact.clone(), c.strict_not_relaxed.clone()].concat())
        ),
        known: false,
    }
}

fn criterion_7(c: &Corpus) -> Line {
    let mut violations = 0;
    let mut counts = [0usize; 3];
    for h in &c.histories {
        let ser = check_serializable(h).unwrap().is_serializable();
        let causal = check_causal(h).conforms();
        let rc = check_rc(h).conforms();
        debug_assert_eq!(causal, check_level(h, Causal).conforms());
        counts[0] += ser as usize;
        counts[1] += causal as usize;
        counts[2] += rc as usize;
        if (ser && !causal) || (causal && !rc) {
            violations += 1;
        }
    }
    Line {
        id: 7,
        pass: violations == 0,
        detail: format!(
            "{} histories: serializable {}, causal {}, rc {}; {violations} violations",
            c.histories.len(),
            counts[0],
            counts[1],
            counts[2]
        ),
        known: false,
    }
}

fn criterion_8(c: &Corpus) -> Line {
    let (mut witnesses, mut edges, mut violations) = (0, 0, 0);
    for h in &c.histories {
        if let Verdict::Serializable(co) = check_serializable(h).unwrap() {
            witnesses += 1;
            violations += (!is_valid_commit_order(h, &co)) as usize;
            for e in anti_dependencies(h, &co) {
                edges += 1;
                violations += (!co.before(e.from, e.to)) as usize;
            }
        }
    }
    Line {
        id: 8,
        pass: violations == 0,
        detail: format!("{witnesses} commit orders, {edges} rw edges, {violations} violations"),
        known: false,
    }
}

fn run_cli(dir: &Path, args: &[&str]) -> i32 {
    let status = Command::new(env!("CARGO_BIN_EXE_txpredict"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("cli runs")
        .status;
    status.code().unwrap_or(-1)
}

/// Observe, predict, validate and fuzz through the binary, writing every
/// artifact into `dir`.
fn cli_pipeline(dir: &Path) -> Vec<i32> {
    let mut codes = Vec::new();
    for (name, w, sessions, txns, seed, level) in [
        ("dd", "deposit-deposit", "2", "1", "7", "causal"),
        ("dw", "deposit-withdraw", "2", "2", "1", "causal"),
        ("voter", "voter", "3", "4", "3", "rc"),
        ("bank", "smallbank-lite", "3", "2", "5", "rc"),
    ] {
        let run = ["--workload", w, "--sessions", sessions, "--txns", txns, "--seed", seed];
        let trace = format!("{name}.trace");
        let pred = format!("{name}.pred");
        let report = format!("{name}.report.json");
        let val = format!("{name}.val.trace");
        codes.push(run_cli(dir, &[&["observe"][..], &run, &["--out", &trace]].concat()));
        codes.push(run_cli(dir, &["predict", "--trace", &trace, "--isolation", level, "--out", &pred, "--dot", &format!("{name}.pred.dot")]));
        if dir.join(&pred).exists() {
            codes.push(run_cli(
                dir,
                &[&["validate", "--prediction", &pred][..], &run, &["--isolation", level, "--out", &report, "--trace-out", &val]].concat(),
            ));
        }
        codes.push(run_cli(
            dir,
            &[&["fuzz"][..], &run, &["--isolation", level, "--runs", "20", "--out", &format!("{name}.fuzz.json")]].concat(),
        ));
    }
    codes
}

fn dir_contents(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect()
}

fn criterion_9() -> Line {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let codes_a = cli_pipeline(a.path());
    let codes_b = cli_pipeline(b.path());
    let (fa, fb) = (dir_contents(a.path()), dir_contents(b.path()));
    let differing: Vec<&String> = fa.keys().filter(|k| fa.get(*k) != fb.get(*k)).collect();
    let config_errors = codes_a.iter().filter(|&&c| c >= 2).count();

    let mut lib_same = true;
    for i in 0..20 {
        let (w, sessions, txns, seed) = corpus_params(i);
        let (t1, h1) = run_workload(&w, sessions, txns, seed, ReadPolicy::LatestWriter);
        let (t2, h2) = run_workload(&w, sessions, txns, seed, ReadPolicy::LatestWriter);
        lib_same &= emit_trace(&t1) == emit_trace(&t2) && h1 == h2;
        let p1 = predict_outcome(&h1, ReadCommitted, ApproxRelaxed);
        let p2 = predict_outcome(&h2, ReadCommitted, ApproxRelaxed);
        lib_same &= p1.prediction().map(|p| emit_trace(&p.to_trace())) == p2.prediction().map(|p| emit_trace(&p.to_trace()));
    }
    Line {
        id: 9,
        pass: differing.is_empty() && fa.len() == fb.len() && codes_a == codes_b && config_errors == 0 && lib_same,
        detail: format!(
            "{} cli artifacts compared, {} differ{}; exit codes {:?}; library reruns identical: {lib_same}",
            fa.len(),
            differing.len(),
            if differing.is_empty() { String::new() } else { format!(" ({differing:?})") },
            codes_a
        ),
        known: false,
    }
}

fn main() {
    let started = Instant::now();
    let mut lines = vec![criterion_1(), criterion_2(), criterion_3(), criterion_4()];
    let corpus = build_corpus();
    lines.extend([criterion_5(&corpus), criterion_6(&corpus), criterion_7(&corpus), criterion_8(&corpus)]);
    lines.push(criterion_9());

    let mut unexpected = 0;
    for l in &lines {
        let status = match (l.pass, l.known) {
            (true, _) => "PASS",
            (false, true) => "FAIL (recorded deviation)",
            (false, false) => {
                unexpected += 1;
                "FAIL"
            }
        };
        println!("criterion {}: {status}: {}", l.id, l.detail);
    }
    let passed = lines.iter().filter(|l| l.pass).count();
    println!(
        "acceptance: {passed}/{} passed, {unexpected} unexpected failures, {:.1}s",
        lines.len(),
        started.elapsed().as_secs_f64()
    );
    if unexpected > 0 {
        std::process::exit(1);
    }
}
