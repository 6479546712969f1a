use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use responder_core::analysis::*;
use responder_core::evaluation::{MetricSet, SplitMode};
use responder_core::nn::{OptimizerKind, Variant};
use responder_core::sweep::*;
use responder_core::trainer::Strategy;

fn metrics(rmse: f64, r2: f64, ba: f64, mcc: f64) -> MetricSet {
    MetricSet {
        rmse,
        r2,
        balanced_accuracy: ba,
        mcc,
        tpr: 0.5,
        fpr: 0.1,
        n: 100,
        r2_undefined: false,
        single_class: false,
        low_n: false,
    }
}

fn record(point: &ConfigPoint, m: MetricSet) -> RunRecord {
    RunRecord {
        schema: SCHEMA_VERSION,
        hash: point.hash_hex(),
        seed: point.hash(),
        point: point.clone(),
        status: RunStatus::Done,
        metrics: Some(m),
        per_source: BTreeMap::new(),
        final_train_loss: Some(0.01),
        best_val_loss: Some(0.01),
        best_epoch: 1,
        epochs: 1,
        wall_time_s: 0.0,
        error: None,
    }
}

fn point(split: SplitMode, snps: bool) -> ConfigPoint {
    let mut g = SweepGrid::desk();
    g.split = vec![split];
    g.snps = vec![snps];
    g.architecture = vec![Variant::GatedTwoTower];
    g.strategy = vec![Strategy::Vanilla];
    g.optimizer = vec![OptimizerKind::Adam];
    g.enumerate().unwrap().remove(0)
}

#[derive(serde::Deserialize)]
struct TwoSample {
    a: Vec<f64>,
    b: Vec<f64>,
    welch_t: f64,
    welch_df: f64,
    welch_p: f64,
    pooled_t: f64,
    pooled_p: f64,
}

#[derive(serde::Deserialize)]
struct Anova {
    groups: Vec<Vec<f64>>,
    f: f64,
    df1: f64,
    df2: f64,
    p: f64,
}

#[derive(serde::Deserialize)]
struct Beta {
    a: f64,
    b: f64,
    x: f64,
    value: f64,
}

#[derive(serde::Deserialize)]
struct StatsFixture {
    two_sample: Vec<TwoSample>,
    anova: Vec<Anova>,
    beta: Vec<Beta>,
}

fn stats_fixture() -> StatsFixture {
    let raw = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/stats.json")).unwrap();
    serde_json::from_str(&raw).unwrap()
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

#[test]
fn t_tests_match_high_precision_oracle() {
    let fx = stats_fixture();
    assert_eq!(fx.two_sample.len(), 200);
    for c in &fx.two_sample {
        let w = welch_t_test(&c.a, &c.b).unwrap();
        assert!(close(w.statistic, c.welch_t, 1e-10), "{} vs {}", w.statistic, c.welch_t);
        assert!(close(w.df, c.welch_df, 1e-10));
        assert!((w.p_value - c.welch_p).abs() < 1e-9, "welch p {} vs {}", w.p_value, c.welch_p);
        let p = pooled_t_test(&c.a, &c.b).unwrap();
        assert!(close(p.statistic, c.pooled_t, 1e-10));
        assert!((p.p_value - c.pooled_p).abs() < 1e-9);
    }
}

#[test]
fn anova_matches_high_precision_oracle() {
    for c in &stats_fixture().anova {
        let groups: Vec<&[f64]> = c.groups.iter().map(Vec::as_slice).collect();
        let r = one_way_anova(&groups).unwrap();
        assert!(close(r.statistic, c.f, 1e-10));
        assert_eq!((r.df, r.df2), (c.df1, Some(c.df2)));
        assert!((r.p_value - c.p).abs() < 1e-9, "anova p {} vs {}", r.p_value, c.p);
    }
}

#[test]
fn incomplete_beta_matches_oracle() {
    for c in &stats_fixture().beta {
        let v = incomplete_beta(c.a, c.b, c.x).unwrap();
        assert!((v - c.value).abs() < 1e-12, "I_{}({}, {}) = {v}, expected {}", c.x, c.a, c.b, c.value);
    }
    assert_eq!(incomplete_beta(2.0, 3.0, 0.0).unwrap(), 0.0);
    assert_eq!(incomplete_beta(2.0, 3.0, 1.0).unwrap(), 1.0);
    assert!(incomplete_beta(0.0, 1.0, 0.5).is_err());
}

#[test]
fn identical_samples_give_p_one() {
    let a = [0.1, 0.4, 0.35, 0.8, 0.2];
    let w = welch_t_test(&a, &a).unwrap();
    assert_eq!((w.statistic, w.p_value), (0.0, 1.0));
    let r = one_way_anova(&[&a, &a, &a]).unwrap();
    assert_eq!((r.statistic, r.p_value), (0.0, 1.0));
}

#[test]
fn separated_samples_give_tiny_p() {
    let a = [1.0, 2.0, 3.0, 4.0, 5.0];
    let b: Vec<f64> = a.iter().map(|v| v * 1e-3 + 10.0).collect();
    let a: Vec<f64> = a.iter().map(|v| v * 1e-3).collect();
    assert!(welch_t_test(&a, &b).unwrap().p_value < 1e-6);
    let far: Vec<f64> = a.iter().map(|v| v + 50.0).collect();
    let r = one_way_anova(&[&a, &a, &far]).unwrap();
    assert!(r.p_value < 1e-12);
}

#[test]
fn zero_variance_cases_are_flagged() {
    let r = welch_t_test(&[2.0, 2.0], &[2.0, 2.0, 2.0]).unwrap();
    assert!(r.degenerate);
    assert_eq!(r.p_value, 1.0);
    let r = welch_t_test(&[2.0, 2.0], &[3.0, 3.0]).unwrap();
    assert!(r.degenerate);
    assert_eq!(r.p_value, 0.0);
    let r = one_way_anova(&[&[1.0, 1.0], &[4.0, 4.0]]).unwrap();
    assert!(r.degenerate && r.p_value == 0.0);
    assert!(welch_t_test(&[1.0], &[1.0, 2.0]).is_err());
    assert!(one_way_anova(&[&[1.0, 2.0]]).is_err());
}

#[test]
fn welch_is_antisymmetric_and_two_group_anova_is_pooled_t_squared() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..50 {
        let a: Vec<f64> = (0..rng.random_range(2..30)).map(|_| rng.random::<f64>()).collect();
        let b: Vec<f64> = (0..rng.random_range(2..30)).map(|_| rng.random::<f64>() * 2.0).collect();
        let ab = welch_t_test(&a, &b).unwrap();
        let ba = welch_t_test(&b, &a).unwrap();
        assert_eq!(ab.statistic, -ba.statistic);
        assert_eq!(ab.p_value, ba.p_value);
        let t = pooled_t_test(&a, &b).unwrap();
        let f = one_way_anova(&[&a, &b]).unwrap();
        assert!((f.statistic - t.statistic * t.statistic).abs() < 1e-9 * f.statistic.max(1.0));
        assert!((f.p_value - t.p_value).abs() < 1e-9);
    }
}

#[test]
fn pairwise_tests_apply_bonferroni() {
    let a = [0.1, 0.2, 0.3, 0.25];
    let b = [0.15, 0.22, 0.31, 0.2];
    let c = [0.5, 0.6, 0.55, 0.58];
    let tests = pairwise_welch(&[&a, &b, &c]).unwrap();
    assert_eq!(tests.len(), 3);
    for t in &tests {
        assert_eq!(t.bonferroni_p, (t.result.p_value * 3.0).min(1.0));
    }
}

#[derive(serde::Deserialize)]
struct ReferenceRow {
    split: String,
    snps: bool,
    rmse: f64,
    r2: f64,
    balanced_accuracy: f64,
    mcc: f64,
}

/// 101 records per group whose 1st (RMSE) and 99th (others) percentiles are the given values;
/// each metric is shuffled independently across records.
fn reference_records(seed: u64) -> Vec<RunRecord> {
    let raw = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/reference_table.json")).unwrap();
    let rows: Vec<ReferenceRow> = serde_json::from_str(&raw).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for row in rows {
        let p = point(row.split.parse().unwrap(), row.snps);
        let mut column = |v: f64, at: i32, step: f64| {
            let mut c: Vec<f64> = (0..101).map(|i| v + (i - at) as f64 * step).collect();
            c.shuffle(&mut rng);
            c
        };
        let rmse = column(row.rmse, 1, 5e-4);
        let r2 = column(row.r2, 99, 1e-3);
        let ba = column(row.balanced_accuracy, 99, 1e-3);
        let mcc = column(row.mcc, 99, 1e-3);
        for i in 0..101 {
            out.push(record(&p, metrics(rmse[i], r2[i], ba[i], mcc[i])));
        }
    }
    out
}

#[test]
fn reference_table_values_are_reproduced() {
    let records = reference_records(1);
    let t = percentile_table(&records, &["split", "snps"], &default_columns()).unwrap();
    assert_eq!(t.rows.len(), 4);
    let on_cell = t.row(&["cell", "true"]).unwrap();
    assert_eq!(on_cell.values, vec![0.083, 0.712, 0.896, 0.577]);
    assert_eq!(on_cell.n, 101);
    assert_eq!(t.row(&["drug", "false"]).unwrap().values, vec![0.108, 0.448, 0.792, 0.460]);
    assert!(t.caption.contains("do not represent a single model"));
    let keys: Vec<_> = t.rows.iter().map(|r| r.key.join("/")).collect();
    assert_eq!(keys, ["cell/false", "cell/true", "drug/false", "drug/true"]);
}

#[test]
fn table_is_permutation_invariant() {
    let mut records = reference_records(2);
    let a = percentile_table(&records, &["split"], &default_columns()).unwrap();
    records.shuffle(&mut ChaCha8Rng::seed_from_u64(3));
    assert_eq!(a, percentile_table(&records, &["split"], &default_columns()).unwrap());
}

#[test]
fn single_record_groups_report_their_value() {
    let records =
        vec![record(&point(SplitMode::ByCell, true), metrics(0.1, 0.6, 0.8, 0.4)), record(&point(SplitMode::ByDrug, true), metrics(0.2, 0.3, 0.7, 0.2))];
    let t = percentile_table(&records, &["split"], &default_columns()).unwrap();
    assert_eq!(t.row(&["cell"]).unwrap().values, vec![0.1, 0.6, 0.8, 0.4]);
    assert_eq!(t.row(&["drug"]).unwrap().values, vec![0.2, 0.3, 0.7, 0.2]);
    assert!(percentile_table(&[], &["split"], &default_columns()).is_err());
    assert!(percentile_table(&records, &["colour"], &default_columns()).is_err());
}

fn sort_and_index(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let h = (v.len() - 1) as f64 * q / 100.0;
    let i = h.floor() as usize;
    if i + 1 >= v.len() {
        return v[i];
    }
    v[i] + (h - i as f64) * (v[i + 1] - v[i])
}

#[test]
fn random_records_match_sort_based_percentiles() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let grid = SweepGrid::desk().enumerate().unwrap();
    let records: Vec<RunRecord> = (0..1000)
        .map(|i| {
            let m = metrics(rng.random(), rng.random::<f64>() * 2.0 - 1.0, rng.random(), rng.random::<f64>() * 2.0 - 1.0);
            record(&grid[i % grid.len()], m)
        })
        .collect();
    let columns: Vec<MetricColumn> =
        [("rmse", 1.0), ("r2", 99.0), ("mcc", 37.5), ("balanced_accuracy", 50.0)].iter().map(|&(m, q)| MetricColumn { metric: m.into(), q }).collect();
    let t = percentile_table(&records, &["architecture", "optimizer"], &columns).unwrap();
    assert_eq!(t.rows.len(), 6);
    for row in &t.rows {
        let members: Vec<&RunRecord> = records
            .iter()
            .filter(|r| r.point.factor("architecture").unwrap() == row.key[0] && r.point.factor("optimizer").unwrap() == row.key[1])
            .collect();
        assert_eq!(row.n, members.len());
        for (c, col) in columns.iter().enumerate() {
            let values: Vec<f64> = members.iter().map(|r| r.metric(&col.metric).unwrap()).collect();
            assert!((row.values[c] - sort_and_index(&values, col.q)).abs() < 1e-12);
        }
    }
}

fn levels(n: usize, seed: u64) -> Vec<Vec<String>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| vec![format!("a{}", i % 3), format!("b{}", (i / 3) % 2), format!("c{}", rng.random_range(0..4))])
        .collect()
}

#[test]
fn single_factor_step_has_full_importance() {
    let lv = levels(120, 1);
    let y: Vec<f64> = lv.iter().map(|l| if l[1] == "b1" { 1.0 } else { 0.0 }).collect();
    let r = factor_importance(&["a", "b", "c"], &lv, &y, &TreeConfig::default()).unwrap();
    assert_eq!(r.importances[0], ("b".to_string(), 1.0));
    assert_eq!(r.share("a"), Some(0.0));
    assert!((r.fit_r2 - 1.0).abs() < 1e-12);
}

#[test]
fn constant_target_is_flagged() {
    let lv = levels(80, 2);
    let r = factor_importance(&["a", "b", "c"], &lv, &[0.4; 80], &TreeConfig::default()).unwrap();
    assert!(r.constant_target);
    assert_eq!(r.n_splits, 0);
    assert!(r.importances.iter().all(|p| p.1 == 0.0));
    assert!(factor_importance(&["a", "b", "c"], &lv[..10], &[0.4; 10], &TreeConfig::default()).is_err());
}

/// Sweep records over architecture x strategy x optimizer x snps x split x fold with
/// r² = architecture effect (70% of variance) + optimizer effect (30%).
fn planted_records() -> Vec<RunRecord> {
    let mut g = SweepGrid::desk();
    g.fold = vec![0, 1, 2];
    let arch_effect = |v: Variant| match v {
        Variant::UniformMlp => -1.0,
        Variant::DifferentialDropoutMlp => 0.0,
        Variant::GatedTwoTower => 1.0,
    };
    // population variances: architecture 2/3, optimizer s²
    let s = (2.0f64 / 3.0 * 0.3 / 0.7).sqrt();
    g.enumerate()
        .unwrap()
        .iter()
        .map(|p| {
            let opt = if p.optimizer == OptimizerKind::Adam { s } else { -s };
            let r2 = 0.5 + 0.1 * (arch_effect(p.architecture) + opt);
            record(p, metrics(0.1, r2, 0.8, 0.5))
        })
        .collect()
}

#[test]
fn planted_variance_shares_are_recovered() {
    let records = planted_records();
    assert!(records.len() >= 50);
    let r = tree_importance(&records, "r2", &TreeConfig::default()).unwrap();
    assert_eq!(r.importances[0].0, "architecture");
    assert!((r.share("architecture").unwrap() - 0.7).abs() <= 0.1, "{:?}", r.importances);
    assert!((r.share("optimizer").unwrap() - 0.3).abs() <= 0.1);
    let total: f64 = r.importances.iter().map(|p| p.1).sum();
    assert!((total - 1.0).abs() < 1e-9);
    assert!(r.fit_r2 > 0.99);
}

#[test]
fn importance_ignores_level_names() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let lv = levels(200, 3);
    let y: Vec<f64> = lv
        .iter()
        .map(|l| {
            let a = l[0][1..].parse::<f64>().unwrap();
            let c = l[2][1..].parse::<f64>().unwrap();
            a * a + 0.3 * c + 0.2 * rng.random::<f64>()
        })
        .collect();
    let renamed: Vec<Vec<String>> =
        lv.iter().map(|l| l.iter().map(|v| format!("zz{}", v.chars().rev().collect::<String>())).collect()).collect();
    let a = factor_importance(&["a", "b", "c"], &lv, &y, &TreeConfig::default()).unwrap();
    let b = factor_importance(&["a", "b", "c"], &renamed, &y, &TreeConfig::default()).unwrap();
    for (x, y) in a.importances.iter().zip(&b.importances) {
        assert_eq!(x.0, y.0);
        assert!((x.1 - y.1).abs() < 1e-9);
    }
}
