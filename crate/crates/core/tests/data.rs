use std::collections::BTreeSet;

use proptest::prelude::*;

use cnsm_core::anomaly::{detect, kmeans_fit, score_window, AnomalyScore, ScoreConfig, ScoreOutcome, Window};
use cnsm_core::eval::{accuracy, rmse, scenario_split, SplitMode, SplitSpec};
use cnsm_core::features::{correlation_matrix, CorrelationMethod, Transform};
use cnsm_core::ingest::{generate_trace, inject_invalid, parse_records, table_to_jsonl, GeneratorConfig, TARGET};
use cnsm_core::preprocess::{
    denormalize, normalize, prune_static_fields, repair_target_spikes, repair_values, DetectorConfig, SpikeConfig,
};
use cnsm_core::table::MISSING;
use cnsm_core::DataTable;

fn trace(seed: u64, samples: u64) -> DataTable {
    generate_trace(&GeneratorConfig::standard(seed, samples)).unwrap().observed
}

#[test]
fn jsonl_round_trip_is_identity() {
    let t = trace(1, 80);
    let back = parse_records(&table_to_jsonl(&t).unwrap()).unwrap();
    assert_eq!(back.to_csv_bytes().unwrap(), t.to_csv_bytes().unwrap());
}

#[test]
fn pruning_is_idempotent() {
    let t = trace(2, 60);
    let (once, removed) = prune_static_fields(&t);
    assert!(!removed.is_empty());
    let (twice, again) = prune_static_fields(&once);
    assert!(again.is_empty());
    assert_eq!(twice, once);
}

/// Every changed cell is reported with its exact old value, and nothing else changes.
fn assert_report_matches(before: &DataTable, after: &DataTable, column: &str, report: &cnsm_core::preprocess::RepairReport) {
    let (a, b) = (before.num(column).unwrap(), after.num(column).unwrap());
    let reported: BTreeSet<usize> = report.repaired_cells.iter().map(|c| c.row).collect();
    assert_eq!(reported.len(), report.repaired_cells.len(), "a cell listed twice");
    for c in &report.repaired_cells {
        assert_eq!(c.column, column);
        match c.old {
            Some(v) => assert_eq!(v.to_bits(), a[c.row].to_bits()),
            None => assert!(a[c.row].is_nan()),
        }
        assert_eq!(c.new.to_bits(), b[c.row].to_bits());
    }
    for i in (0..a.len()).filter(|i| !reported.contains(i)) {
        assert_eq!(a[i].to_bits(), b[i].to_bits(), "unreported change at row {i}");
    }
    for other in before.numeric_names().into_iter().filter(|n| n != column) {
        assert_eq!(before.num(&other).unwrap(), after.num(&other).unwrap());
    }
}

#[test]
fn repairs_change_only_reported_cells() {
    for seed in 1..4 {
        let t = trace(seed, 400);
        let (fixed, report) = repair_target_spikes(&t, TARGET, &SpikeConfig::default()).unwrap();
        assert!(!report.is_empty());
        assert_report_matches(&t, &fixed, TARGET, &report);
        assert!(fixed.num(TARGET).unwrap().iter().all(|v| (1.0..=15.0).contains(v) && v.fract() == 0.0));

        let (bad, rows) = inject_invalid(&t, "rsrp", 0.01, MISSING, seed).unwrap();
        let (bad, more) = inject_invalid(&bad, "rsrp", 0.01, 40.0, seed + 100).unwrap();
        let (fixed, report) = repair_values(&bad, "rsrp", &DetectorConfig::range(-140.0, -44.0)).unwrap();
        assert_report_matches(&bad, &fixed, "rsrp", &report);
        let touched: BTreeSet<usize> = rows.into_iter().chain(more).collect();
        let reported: BTreeSet<usize> = report.repaired_cells.iter().map(|c| c.row).collect();
        assert_eq!(touched, reported);
    }
}

#[test]
fn normalize_then_denormalize_recovers_inputs() {
    let t = trace(5, 100);
    let (scaled, params) = normalize(&t, None).unwrap();
    let back = denormalize(&scaled, &params).unwrap();
    for name in t.numeric_names() {
        if params.get(&name).unwrap().is_degenerate() {
            continue;
        }
        for (a, b) in t.num(&name).unwrap().iter().zip(back.num(&name).unwrap()) {
            if a.is_nan() {
                assert!(b.is_nan());
            } else {
                assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0), "{name}: {a} vs {b}");
            }
        }
        assert!(scaled.num(&name).unwrap().iter().filter(|v| !v.is_nan()).all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn scenario_split_partitions_rows() {
    let t = trace(6, 97);
    for mode in [SplitMode::ScenarioBased, SplitMode::KFold] {
        let s = scenario_split(&t, &SplitSpec { mode, ..SplitSpec::default() }).unwrap();
        let train: BTreeSet<usize> = s.train_rows.iter().copied().collect();
        let val: BTreeSet<usize> = s.validation_rows.iter().copied().collect();
        assert!(train.is_disjoint(&val));
        assert_eq!(train.len() + val.len(), t.row_count());
        assert_eq!(s.train.row_count() + s.validation.row_count(), t.row_count());
    }
}

fn window(rmse: f64) -> Window {
    Window { start_tick: 0, end_tick: 5, summary: vec![8.0, 8.0, rmse, 10.0, 0.0, 1.0] }
}

fn score(history: &[f64], current: f64) -> f64 {
    let h: Vec<Window> = history.iter().map(|&r| window(r)).collect();
    match score_window(&h, &window(current), &ScoreConfig { min_history: 3, ..ScoreConfig::default() }) {
        ScoreOutcome::Score(s) => s.value,
        ScoreOutcome::NotReady { .. } => panic!("history long enough"),
    }
}

proptest! {
    #[test]
    fn correlation_bounded_and_affine_invariant(
        a in prop::collection::vec(-50.0f64..50.0, 8..40),
        scale in 0.1f64..20.0,
        shift in -100.0f64..100.0,
    ) {
        let b: Vec<f64> = a.iter().enumerate().map(|(i, v)| v.sin() + (i as f64 * 0.7).cos()).collect();
        let mut t = DataTable::new();
        t.push_numeric("a", a.clone()).unwrap();
        t.push_numeric("b", b.clone()).unwrap();
        t.push_numeric("a2", a.iter().map(|v| scale * v + shift).collect()).unwrap();
        let c = correlation_matrix(&t, CorrelationMethod::Pearson).unwrap();
        prop_assume!(c.degenerate.is_empty());
        for v in &c.values {
            prop_assert!(v.abs() <= 1.0 + 1e-12);
        }
        prop_assert!((c.get("a", "b").unwrap() - c.get("a2", "b").unwrap()).abs() <= 1e-9);
        prop_assert_eq!(c.get("a", "b"), c.get("b", "a"));
    }

    #[test]
    fn transforms_monotone_on_unit_interval(x in 0.0f64..=1.0, y in 0.0f64..=1.0) {
        let (lo, hi) = if x <= y { (x, y) } else { (y, x) };
        for t in Transform::ALL {
            prop_assert!(t.apply(lo) <= t.apply(hi));
        }
    }

    #[test]
    fn rmse_bounded_by_max_error(pairs in prop::collection::vec((1.0f64..15.0, -5.0f64..20.0), 1..50)) {
        let (y, yh): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let r = rmse(&y, &yh).unwrap();
        let max = y.iter().zip(&yh).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(r <= max * (1.0 + 1e-12));
        prop_assert!(r * (1.0 + 1e-12) >= max / (y.len() as f64).sqrt());
    }

    #[test]
    fn accuracy_stable_away_from_half_integers(
        pairs in prop::collection::vec((1u8..=15, 0.0f64..16.0), 1..50),
        t in 0.0f64..0.999,
    ) {
        let y: Vec<f64> = pairs.iter().map(|p| f64::from(p.0)).collect();
        let yh: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        // Move each prediction toward its nearest half-integer by at most a
        // fraction t of the gap, so the rounded value never changes.
        let moved: Vec<f64> = yh
            .iter()
            .map(|&v| {
                let gap = (v.fract() - 0.5).abs();
                if v.fract() < 0.5 { v + t * gap } else { v - t * gap }
            })
            .collect();
        prop_assert_eq!(accuracy(&y, &yh).unwrap(), accuracy(&y, &moved).unwrap());
    }

    #[test]
    fn score_is_translation_invariant(
        hist in prop::collection::vec(0.0f64..3.0, 3..20),
        cur in 0.0f64..6.0,
        shift in -2.0f64..10.0,
    ) {
        let base = score(&hist, cur);
        let moved: Vec<f64> = hist.iter().map(|h| h + shift).collect();
        let s = score(&moved, cur + shift);
        prop_assert!((base - s).abs() <= 1e-6 * base.abs().max(1.0));
    }

    #[test]
    fn detect_is_monotone(a in -10.0f64..10.0, b in -10.0f64..10.0, threshold in 0.0f64..5.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let mk = |value| AnomalyScore { value, window: window(1.0), threshold };
        prop_assert!(!detect(&mk(lo)) || detect(&mk(hi)));
    }

    #[test]
    fn kmeans_inertia_nonincreasing(seed in 0u64..500, k in 1usize..5) {
        let pts: Vec<Vec<f64>> = (0..60u64)
            .map(|i| {
                let h = cnsm_core::models::splitmix64(seed * 1000 + i);
                vec![(h % 1000) as f64 / 100.0, ((h >> 20) % 1000) as f64 / 100.0]
            })
            .collect();
        let m = kmeans_fit(&pts, k, seed).unwrap();
        for w in m.inertia_trace.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-9);
        }
        if m.iterations < cnsm_core::anomaly::KMEANS_MAX_ITER {
            // fixpoint: each nonempty cluster's mean is its centroid
            for (j, c) in m.centroids.iter().enumerate() {
                let members: Vec<&Vec<f64>> = pts.iter().filter(|p| m.assign(p).0 == j).collect();
                if members.is_empty() {
                    continue;
                }
                for d in 0..2 {
                    let mean = members.iter().map(|p| p[d]).sum::<f64>() / members.len() as f64;
                    prop_assert!((mean - c[d]).abs() <= 1e-9);
                }
            }
        }
    }
}
