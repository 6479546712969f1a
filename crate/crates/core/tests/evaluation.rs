use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use responder_core::dataset::{AssembledDataset, Row};
use responder_core::evaluation::*;
use responder_core::expression::ids;

/// Dataset with `n_rows` random (cell, drug) rows and empty feature tables.
fn random_dataset(n_rows: usize, n_cells: usize, n_drugs: usize, seed: u64) -> AssembledDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = (0..n_rows)
        .map(|_| Row {
            cell: rng.random_range(0..n_cells),
            drug: rng.random_range(0..n_drugs),
            source: rng.random_range(0..3),
            y: rng.random::<f64>(),
        })
        .collect();
    AssembledDataset::from_parts(
        ids("C", n_cells),
        vec![0.0; n_cells],
        ids("D", n_drugs),
        vec![0.0; n_drugs],
        vec!["S1".into(), "S2".into(), "S3".into()],
        rows,
    )
    .unwrap()
}

#[test]
fn nine_cells_make_three_folds_of_three() {
    let data = random_dataset(300, 9, 5, 1);
    let plan = make_folds(&data, SplitMode::ByCell, 3, 4).unwrap();
    let mut cells_per_fold = vec![BTreeSet::new(); 3];
    for (r, &f) in plan.fold.iter().enumerate() {
        cells_per_fold[f].insert(data.rows[r].cell);
    }
    assert!(cells_per_fold.iter().all(|s| s.len() == 3));
    assert_eq!(leakage(&plan, &data), 0);
}

#[test]
fn heavy_drug_stays_in_one_fold() {
    let mut data = random_dataset(200, 20, 6, 2);
    for _ in 0..1000 {
        data.rows.push(Row { cell: 3, drug: 5, source: 0, y: 0.7 });
    }
    let plan = make_folds(&data, SplitMode::ByDrug, 3, 9).unwrap();
    let folds: BTreeSet<usize> = (0..data.len()).filter(|&r| data.rows[r].drug == 5).map(|r| plan.fold[r]).collect();
    assert_eq!(folds.len(), 1);
}

#[test]
fn too_few_entities_is_an_error() {
    let data = random_dataset(50, 2, 10, 3);
    assert!(make_folds(&data, SplitMode::ByCell, 3, 0).is_err());
}

#[test]
fn strict_plans_never_leak_on_large_datasets() {
    for seed in 0..5 {
        let data = random_dataset(10_000, 300, 80, seed);
        for mode in [SplitMode::ByCell, SplitMode::ByDrug] {
            let plan = make_folds(&data, mode, 3, seed).unwrap();
            // exhaustive set check, independent of the library helper
            let mut sets: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); 3];
            for r in 0..data.len() {
                let e = if mode == SplitMode::ByCell { data.rows[r].cell } else { data.rows[r].drug };
                sets[plan.fold[r]].insert(e);
            }
            for a in 0..3 {
                for b in a + 1..3 {
                    assert!(sets[a].is_disjoint(&sets[b]), "{mode} folds {a},{b} share entities");
                }
            }
            let union: BTreeSet<usize> = sets.iter().flatten().copied().collect();
            let all: BTreeSet<usize> = data
                .rows
                .iter()
                .map(|r| if mode == SplitMode::ByCell { r.cell } else { r.drug })
                .collect();
            assert_eq!(union, all);
            let covered: usize = (0..3).map(|f| plan.validation_rows(f).len()).sum();
            assert_eq!(covered, data.len());
        }
    }
}

#[test]
fn lenient_mode_splits_rows() {
    let data = random_dataset(999, 5, 5, 4);
    let plan = make_folds(&data, SplitMode::Lenient, 3, 1).unwrap();
    for f in 0..3 {
        assert_eq!(plan.validation_rows(f).len(), 333);
    }
}

#[test]
fn perfect_and_mean_predictions() {
    let y = [0.1, 0.4, 0.9, 0.7];
    let r = regression_metrics(&y, &y).unwrap();
    assert_eq!((r.rmse, r.r2), (0.0, 1.0));
    let mean = y.iter().sum::<f64>() / 4.0;
    let r = regression_metrics(&[mean; 4], &y).unwrap();
    assert!(r.r2.abs() < 1e-15);
    let c = classification_metrics(&y, &y, 0.5).unwrap();
    assert_eq!((c.balanced_accuracy, c.mcc), (1.0, 1.0));
}

#[derive(serde::Deserialize)]
struct OracleCase {
    pred: Vec<f64>,
    y: Vec<f64>,
    rmse: f64,
    r2: f64,
    confusion: [u64; 4],
    balanced_accuracy: f64,
    mcc: f64,
}

#[test]
fn metrics_match_high_precision_oracle() {
    let raw = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/metrics.json")).unwrap();
    let cases: Vec<OracleCase> = serde_json::from_str(&raw).unwrap();
    for c in &cases {
        let r = regression_metrics(&c.pred, &c.y).unwrap();
        assert!((r.rmse - c.rmse).abs() < 1e-12);
        assert!((r.r2 - c.r2).abs() < 1e-12);
        let m = classification_metrics(&c.pred, &c.y, 0.5).unwrap();
        let k = m.confusion;
        assert_eq!([k.tp, k.fp, k.tn, k.fn_], c.confusion);
        assert!((m.balanced_accuracy - c.balanced_accuracy).abs() < 1e-12);
        assert!((m.mcc - c.mcc).abs() < 1e-12);
    }
}

#[test]
fn confusion_matches_brute_force_recount() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let pred: Vec<f64> = (0..1000).map(|_| rng.random()).collect();
    let y: Vec<f64> = (0..1000).map(|_| rng.random()).collect();
    let m = classification_metrics(&pred, &y, 0.5).unwrap();
    let mut counts = [0u64; 4];
    for i in 0..1000 {
        let idx = match (pred[i] <= 0.5, y[i] <= 0.5) {
            (true, true) => 0,
            (true, false) => 1,
            (false, false) => 2,
            (false, true) => 3,
        };
        counts[idx] += 1;
    }
    let k = m.confusion;
    assert_eq!([k.tp, k.fp, k.tn, k.fn_], counts);
}

#[test]
fn breakdown_of_single_source_equals_overall() {
    let y = [0.2, 0.6, 0.9, 0.4, 0.8];
    let p = [0.3, 0.5, 0.7, 0.45, 0.95];
    let b = per_source_breakdown(&p, &y, &["X"; 5], 0.5).unwrap();
    assert_eq!(b["X"], b[ALL_SOURCES]);
    assert!(b["X"].low_n);
}

#[test]
fn all_row_mse_is_row_weighted_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let n = 300;
    let y: Vec<f64> = (0..n).map(|_| rng.random()).collect();
    let p: Vec<f64> = (0..n).map(|_| rng.random()).collect();
    let sources: Vec<&str> = (0..n).map(|i| if i < 120 { "A" } else { "B" }).collect();
    let b = per_source_breakdown(&p, &y, &sources, 0.5).unwrap();
    let weighted = (b["A"].rmse.powi(2) * 120.0 + b["B"].rmse.powi(2) * 180.0) / 300.0;
    assert!((b[ALL_SOURCES].rmse.powi(2) - weighted).abs() < 1e-14);
}

#[test]
fn breakdown_matches_filtered_subsets() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = 600;
    let y: Vec<f64> = (0..n).map(|_| rng.random()).collect();
    let p: Vec<f64> = y.iter().map(|v| (v + rng.random_range(-0.3..0.3)).clamp(0.0, 1.0)).collect();
    let names = ["S1", "S2", "S3"];
    let sources: Vec<&str> = (0..n).map(|_| names[rng.random_range(0..3)]).collect();
    let b = per_source_breakdown(&p, &y, &sources, 0.5).unwrap();
    let mut subsets: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for i in 0..n {
        let e = subsets.entry(sources[i]).or_default();
        e.0.push(p[i]);
        e.1.push(y[i]);
    }
    for (s, (ps, ys)) in subsets {
        assert_eq!(b[s], metric_set(&ps, &ys, 0.5).unwrap());
    }
    assert_eq!(b.len(), 4);
}

proptest! {
    #[test]
    fn classification_is_invariant_to_side_preserving_transforms(
        pairs in proptest::collection::vec((0.0..1.0f64, 0.0..1.0f64), 2..200)
    ) {
        let pred: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let y: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        // strictly monotone and fixes the cutoff
        let moved: Vec<f64> = pred.iter().map(|&v| 0.5 + (v - 0.5).powi(3) * 3.0).collect();
        let a = classification_metrics(&pred, &y, 0.5).unwrap();
        let b = classification_metrics(&moved, &y, 0.5).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn metric_ranges_hold(pairs in proptest::collection::vec((0.0..1.0f64, 0.0..1.0f64), 2..100)) {
        let pred: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let y: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let m = metric_set(&pred, &y, 0.5).unwrap();
        prop_assert!(m.rmse >= 0.0 && m.r2 <= 1.0);
        prop_assert!((0.0..=1.0).contains(&m.balanced_accuracy));
        prop_assert!((-1.0..=1.0).contains(&m.mcc));
        prop_assert!((0.0..=1.0).contains(&m.tpr) && (0.0..=1.0).contains(&m.fpr));
    }
}
