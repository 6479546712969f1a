use std::sync::OnceLock;

use responder_bench::bundle::Bundle;
use responder_bench::runner::{pending, run_sweep, SweepOptions};
use responder_bench::store::ResultStore;
use responder_core::dataset::{generate_synthetic, SyntheticSpec};
use responder_core::evaluation::SplitMode;
use responder_core::nn::{OptimizerKind, Variant};
use responder_core::sweep::{RunRecord, RunStatus, SweepGrid};
use responder_core::trainer::Strategy;

fn bundle() -> &'static Bundle {
    static B: OnceLock<Bundle> = OnceLock::new();
    B.get_or_init(|| {
        let spec = SyntheticSpec { n_cells: 60, n_drugs: 20, n_genes: 40, n_snps: 12, n_descriptors: 16, latent_dims: 4, ..Default::default() };
        Bundle::from_study(&generate_synthetic(&spec).unwrap())
    })
}

/// 12 quick points: every architecture and strategy, both splits, Adam only.
fn grid() -> SweepGrid {
    let mut g = SweepGrid::desk();
    g.snps = vec![true];
    g.optimizer = vec![OptimizerKind::Adam];
    g.strategy = vec![Strategy::Vanilla, Strategy::BalancedSampling];
    g.settings.max_epochs = 6;
    g
}

fn without_time(mut rs: Vec<RunRecord>) -> Vec<RunRecord> {
    for r in &mut rs {
        r.wall_time_s = 0.0;
    }
    rs.sort_by(|a, b| a.hash.cmp(&b.hash));
    rs
}

#[test]
fn worker_count_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let g = grid();
    let mut one = ResultStore::open(&dir.path().join("one.jsonl")).unwrap();
    let mut four = ResultStore::open(&dir.path().join("four.jsonl")).unwrap();
    let s1 = run_sweep(&g, &bundle().inputs(), SweepOptions::new(1), &mut one).unwrap();
    let s4 = run_sweep(&g, &bundle().inputs(), SweepOptions::new(4), &mut four).unwrap();
    assert_eq!((s1.ran, s4.ran), (12, 12));
    assert_eq!(s1.done, 12);
    let a = without_time(one.into_records());
    let b = without_time(four.into_records());
    assert_eq!(a, b);
    // and the same after a reload from disk
    let reloaded = ResultStore::open(&dir.path().join("four.jsonl")).unwrap();
    assert_eq!(without_time(reloaded.into_records()), a);
}

#[test]
fn resume_runs_only_the_missing_points() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("runs.jsonl");
    let g = grid();
    let mut store = ResultStore::open(&path).unwrap();
    let first = run_sweep(&g, &bundle().inputs(), SweepOptions { workers: 2, limit: Some(5) }, &mut store).unwrap();
    assert_eq!(first.ran, 5);
    drop(store);
    let mut store = ResultStore::open(&path).unwrap();
    assert_eq!(pending(&g, &store).unwrap().len(), 7);
    let second = run_sweep(&g, &bundle().inputs(), SweepOptions::new(3), &mut store).unwrap();
    assert_eq!((second.skipped, second.ran), (5, 7));
    let again = run_sweep(&g, &bundle().inputs(), SweepOptions::new(3), &mut store).unwrap();
    assert_eq!(again.ran, 0);
    let mut hashes: Vec<String> = store.records().iter().map(|r| r.hash.clone()).collect();
    hashes.sort();
    hashes.dedup();
    assert_eq!(hashes.len(), 12);
    assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 12);
}

#[test]
fn empty_grid_is_a_successful_no_op() {
    let dir = tempfile::tempdir().unwrap();
    let mut g = grid();
    g.architecture.clear();
    let mut store = ResultStore::open(&dir.path().join("runs.jsonl")).unwrap();
    let s = run_sweep(&g, &bundle().inputs(), SweepOptions::new(4), &mut store).unwrap();
    assert_eq!((s.grid_points, s.ran), (0, 0));
}

#[test]
fn zero_workers_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut store = ResultStore::open(&dir.path().join("runs.jsonl")).unwrap();
    let err = run_sweep(&grid(), &bundle().inputs(), SweepOptions::new(0), &mut store).unwrap_err();
    assert_eq!(err.exit_code(), 1);
}

#[test]
fn failing_points_are_recorded_not_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let mut b = bundle().clone();
    b.snps = None;
    let mut g = grid();
    g.snps = vec![false, true];
    g.architecture = vec![Variant::UniformMlp];
    g.strategy = vec![Strategy::Vanilla];
    g.split = vec![SplitMode::ByCell];
    let mut store = ResultStore::open(&dir.path().join("runs.jsonl")).unwrap();
    let s = run_sweep(&g, &b.inputs(), SweepOptions::new(2), &mut store).unwrap();
    assert_eq!((s.done, s.failed), (1, 1));
    let failed = store.records().iter().find(|r| r.status == RunStatus::Failed).unwrap();
    assert!(failed.point.snps);
    assert!(failed.error.as_deref().unwrap().contains("SNP"));
}
