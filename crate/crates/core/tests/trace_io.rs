mod common;

use proptest::prelude::*;

use common::{fig2a, fig3a};
use txpredict_core::predictor::{predict, IsolationLevel, PredictConfig, PredictionStrategy};
use txpredict_core::sample::random_history;
use txpredict_core::store::{run_workload, ReadPolicy, Workload};
use txpredict_core::trace_io::{emit_dot, emit_trace, history_to_trace, parse_trace, DotOptions, TraceError};
use txpredict_core::{build_history, Boundary, ExecutionHistory, SessionId, Trace};

fn round_trip(t: &Trace) {
    let text = emit_trace(t);
    let back = parse_trace(&text).unwrap();
    assert_eq!(emit_trace(&back), text);
    assert_eq!(build_history(&back).unwrap(), build_history(t).unwrap());
}

#[test]
fn store_traces_round_trip() {
    let workloads = [Workload::DepositDeposit, Workload::DepositWithdraw, Workload::Voter, Workload::SmallbankLite];
    for seed in 0..1000u64 {
        let w = &workloads[(seed % 4) as usize];
        let level = if seed % 2 == 0 { IsolationLevel::Causal } else { IsolationLevel::ReadCommitted };
        let policy = if seed % 3 == 0 {
            ReadPolicy::LatestWriter
        } else {
            ReadPolicy::RandomWeak { level, seed }
        };
        let (trace, h) = run_workload(w, 1 + (seed % 3) as u32, 1 + (seed / 3 % 3) as u32, seed, policy);
        round_trip(&trace);
        assert_eq!(build_history(&parse_trace(&emit_trace(&trace)).unwrap()).unwrap(), h);
    }
}

#[test]
fn aborts_survive_round_trip() {
    let found = (0..200).any(|seed| {
        let (trace, _) = run_workload(&Workload::DepositWithdraw, 2, 2, seed, ReadPolicy::RandomWeak {
            level: IsolationLevel::Causal,
            seed,
        });
        let text = emit_trace(&trace);
        round_trip(&trace);
        text.contains("abort\n")
    });
    assert!(found, "no withdraw aborted in 200 runs");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn generated_histories_round_trip(seed in any::<u64>(), inf in any::<bool>()) {
        let h = random_history(seed, 7);
        let mut t = history_to_trace(&h);
        for sid in h.sessions().keys() {
            let b = if inf { Boundary::Infinity } else { Boundary::At(sid.0 + 1) };
            t.boundaries.insert(*sid, b);
        }
        let back = parse_trace(&emit_trace(&t)).unwrap();
        prop_assert_eq!(&back.boundaries, &t.boundaries);
        prop_assert_eq!(build_history(&back).unwrap(), h);
    }
}

#[test]
fn malformed_text_is_a_parse_error() {
    for (text, line) in [
        ("session\n", 1),
        ("session 1\ntxn 1\nw k one 0\ncommit\n", 3),
        ("session 1\ntxn 1\nr k 1\ncommit\n", 3),
        ("session 1\ntxn 1\ncommit\nboundary 1 somewhere\n", 4),
        ("txn 1\ncommit\n", 1),
    ] {
        match parse_trace(text) {
            Err(TraceError::Parse { line: l, .. }) => assert_eq!(l, line, "{text:?}"),
            other => panic!("{text:?}: {other:?}"),
        }
    }
}

#[test]
fn dangling_writer_is_rejected_when_building() {
    let t = parse_trace("session 1\ntxn 1\nr k 1 9 0\ncommit\n").unwrap();
    assert!(build_history(&t).is_err());
}

fn edge_lines(dot: &str) -> Vec<&str> {
    dot.lines().filter(|l| l.contains("->")).collect()
}

#[test]
fn fig3a_dot_has_two_wr_edges_from_t0() {
    let dot = emit_dot(&fig3a(), None, DotOptions::default());
    assert!(dot.starts_with("digraph"));
    for t in ["t0 [", "t1 [", "t2 ["] {
        assert!(dot.contains(t), "missing node {t}");
    }
    let wr: Vec<&str> = edge_lines(&dot).into_iter().filter(|l| l.contains("wr_acc")).collect();
    assert_eq!(wr.len(), 2);
    assert!(wr.iter().all(|l| l.trim_start().starts_with("t0 ->")));
    assert!(!dot.contains("color=red"));
}

#[test]
fn t0_only_dot_has_no_edges() {
    let dot = emit_dot(&ExecutionHistory::empty(), None, DotOptions::default());
    assert!(dot.contains("t0 ["));
    assert!(edge_lines(&dot).is_empty());
}

#[test]
fn values_appear_only_on_request() {
    let h = fig2a();
    assert!(!emit_dot(&h, None, DotOptions::default()).contains("=110"));
    assert!(emit_dot(&h, None, DotOptions { show_values: true }).contains("=110"));
}

#[test]
fn highlight_marks_exactly_the_prediction_cycle() {
    let r = predict(
        &fig2a(),
        IsolationLevel::Causal,
        PredictionStrategy::ApproxRelaxed,
        &PredictConfig::default(),
    )
    .unwrap();
    let p = r.outcome.prediction().unwrap();
    let cycle = p.cycle.as_deref().unwrap();
    let dot = emit_dot(&p.history, Some(cycle), DotOptions::default());
    let red: Vec<&str> = edge_lines(&dot).into_iter().filter(|l| l.contains("color=red")).collect();
    assert_eq!(red.len(), cycle.len());
    for e in cycle {
        let head = format!("{} -> {} [label=\"{}\"", e.from, e.to, e.label);
        assert!(red.iter().any(|l| l.trim_start().starts_with(&head)), "{head}");
    }
}

#[test]
fn boundary_lines_follow_sessions() {
    let mut t = history_to_trace(&fig2a());
    t.boundaries.insert(SessionId(2), Boundary::At(1));
    t.boundaries.insert(SessionId(1), Boundary::Infinity);
    let text = emit_trace(&t);
    assert!(text.ends_with("commit\nboundary 1 inf\nboundary 2 1\n"));
}
