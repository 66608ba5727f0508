mod common;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;
use sqlcode_core::answer::MatchConfig;
use sqlcode_core::eval::{report_markdown, routing_analysis, score_oracle, score_traces, Report};
use sqlcode_core::pipelines::MethodId;

fn cfg() -> MatchConfig {
    MatchConfig::default()
}

#[test]
fn python_share_split_by_reference() {
    // 149 questions; the reference is right on 51, of which 41 went to Python;
    // 86 of the 98 others did too
    let (ds, reference, t2sc) = routing_fixture(149, 51, 41, 86);
    let row = routing_analysis(&t2sc, &reference, &ds, &cfg(), 0).unwrap().rows.remove(0);
    let expected_full = 100.0 * 127.0 / 149.0;
    assert!((row.pct_python_full - expected_full).abs() < 1e-9);
    assert!((row.pct_python_full - 85.2).abs() < 0.1);
    assert!((row.delta_correct.unwrap() + 4.8).abs() < 0.1);
    assert!((row.delta_incorrect.unwrap() - 2.5).abs() < 0.1);
}

#[test]
fn disjoint_components_combine_to_seventy() {
    let ds: Vec<_> = (0..10).map(|i| question(&format!("q{i}"), "fixture", &[])).collect();
    let a: Vec<_> = (0..10).map(|i| trace(MethodId::Text2Sql, &ds[i].id, 0, i < 3, false, 1)).collect();
    let b: Vec<_> = (0..10).map(|i| trace(MethodId::T2scMulti, &ds[i].id, 0, (3..7).contains(&i), true, 4)).collect();
    let ra = score_traces(&a, &ds, &cfg()).unwrap().methods.remove(0);
    let rb = score_traces(&b, &ds, &cfg()).unwrap().methods.remove(0);
    let o = score_oracle(&a, &b, &ds, &cfg()).unwrap();
    assert_eq!((ra.overall, rb.overall, o.overall), (30.0, 40.0, 70.0));
}

#[test]
fn oracle_dominates_on_random_trace_sets() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..1000 {
        let n = rng.gen_range(1..40);
        let runs = rng.gen_range(1..4);
        let ds: Vec<_> = (0..n).map(|i| question(&format!("q{i}"), if i % 2 == 0 { "x" } else { "y" }, &[])).collect();
        let make = |rng: &mut ChaCha8Rng, m: MethodId| -> Vec<_> {
            (0..runs)
                .flat_map(|r| ds.iter().map(move |q| (q.id.clone(), r)).collect::<Vec<_>>())
                .map(|(q, r)| trace(m, &q, r, rng.gen_bool(0.5), false, 1))
                .collect()
        };
        let a = make(&mut rng, MethodId::Text2Sql);
        let b = make(&mut rng, MethodId::HybridMulti);
        let ra = score_traces(&a, &ds, &cfg()).unwrap().methods.remove(0);
        let rb = score_traces(&b, &ds, &cfg()).unwrap().methods.remove(0);
        let o = score_oracle(&a, &b, &ds, &cfg()).unwrap();
        assert!(o.overall + 1e-9 >= ra.overall.max(rb.overall));
        for (db, acc) in &o.per_db {
            assert!(acc + 1e-9 >= ra.per_db[db].max(rb.per_db[db]));
        }
    }
}

#[test]
fn overall_is_question_weighted() {
    // 1 of 1 right on a small database, 0 of 3 on a large one: 25, not 50
    let ds = vec![
        question("a", "small", &[]),
        question("b", "large", &[]),
        question("c", "large", &[]),
        question("d", "large", &[]),
    ];
    let t: Vec<_> = ds.iter().map(|q| trace(MethodId::Text2Sql, &q.id, 0, q.id == "a", false, 1)).collect();
    let m = score_traces(&t, &ds, &cfg()).unwrap().methods.remove(0);
    assert_eq!(m.overall, 25.0);
    assert_eq!((m.per_db["small"], m.per_db["large"]), (100.0, 0.0));
}

#[test]
fn markdown_has_calls_column_and_json_round_trips() {
    let ds: Vec<_> = (0..4).map(|i| question(&format!("q{i}"), "fixture", &["Nested Queries"])).collect();
    let t: Vec<_> = (0..3)
        .flat_map(|r| ds.iter().map(move |q| trace(MethodId::Sc(3), &q.id, r, true, false, 3)))
        .collect();
    let report = score_traces(&t, &ds, &cfg()).unwrap();
    assert_eq!(report.methods[0].mean_calls, 3.0);
    let md = report_markdown(&report);
    assert!(md.starts_with("| Method | fixture | Overall | Calls |\n"));
    assert!(md.contains("| sc:3 | 100.0 | 100.0 | 3.0 |"));
    let json = report.to_json();
    assert_eq!(Report::from_json(&json).unwrap().to_json(), json);
}

proptest! {
    #[test]
    fn weighted_mean_identity(
        n in 2usize..200,
        split in 0.0f64..1.0,
        pc in 0.0f64..1.0,
        pi in 0.0f64..1.0,
    ) {
        let ref_correct = ((n as f64) * split) as usize;
        let py_correct = ((ref_correct as f64) * pc) as usize;
        let py_incorrect = (((n - ref_correct) as f64) * pi) as usize;
        let (ds, reference, t2sc) = routing_fixture(n, ref_correct, py_correct, py_incorrect);
        let row = routing_analysis(&t2sc, &reference, &ds, &cfg(), 0).unwrap().rows.remove(0);
        // the full-set share is the subset shares weighted by subset size
        let weighted = row.reference_correct as f64 * row.delta_correct.unwrap_or(0.0)
            + row.reference_incorrect as f64 * row.delta_incorrect.unwrap_or(0.0);
        prop_assert!(weighted.abs() < 1e-6, "weighted deltas sum to {}", weighted);
        prop_assert!((row.pct_python_full - 100.0 * (py_correct + py_incorrect) as f64 / n as f64).abs() < 1e-9);
    }

    #[test]
    fn scores_ignore_trace_order(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ds: Vec<_> = (0..12).map(|i| question(&format!("q{i}"), ["x", "y", "z"][i % 3], &["A", "B"][..1 + i % 2])).collect();
        let mut t: Vec<_> = (0..3)
            .flat_map(|r| ds.iter().map(move |q| (q.id.clone(), r)))
            .map(|(q, r)| trace(MethodId::Text2Sql, &q, r, rng.gen_bool(0.6), false, rng.gen_range(1..5)))
            .collect();
        let before = score_traces(&t, &ds, &cfg()).unwrap();
        t.shuffle(&mut rng);
        prop_assert_eq!(report_markdown(&score_traces(&t, &ds, &cfg()).unwrap()), report_markdown(&before));
    }
}
