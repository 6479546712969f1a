use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use responder_core::expression::*;

fn build(values: Vec<f64>, n_samples: usize, n_genes: usize, sources: Vec<String>) -> ExpressionMatrix {
    ExpressionMatrix::new(ids("G", n_genes), ids("S", n_samples), values, sources).unwrap()
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Two batches of `per_batch` samples; batch B is scaled by 1.5 and shifted by +2.
fn batch_fixture(per_batch: usize, n_genes: usize, seed: u64) -> ExpressionMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::new();
    let mut sources = Vec::new();
    for batch in ["A", "B"] {
        for _ in 0..per_batch {
            for _ in 0..n_genes {
                let x = gaussian(&mut rng);
                values.push(if batch == "B" { 1.5 * x + 2.0 } else { x });
            }
            sources.push(batch.to_string());
        }
    }
    build(values, 2 * per_batch, n_genes, sources)
}

fn batch_stats(m: &ExpressionMatrix, gene: usize) -> [(f64, f64); 2] {
    let mut out = [(0.0, 0.0); 2];
    for (k, label) in ["A", "B"].iter().enumerate() {
        let vals: Vec<f64> =
            (0..m.n_samples()).filter(|&s| m.sources()[s] == *label).map(|s| m.get(s, gene)).collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        out[k] = (mean, var);
    }
    out
}

#[test]
fn log_tpm_matches_high_precision_oracle() {
    #[derive(serde::Deserialize)]
    struct Fixture {
        fpkm: Vec<Vec<f64>>,
        log_tpm: Vec<Vec<f64>>,
    }
    let raw = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/log_tpm.json")).unwrap();
    let fx: Fixture = serde_json::from_str(&raw).unwrap();
    let n = fx.fpkm.len();
    let g = fx.fpkm[0].len();
    let m = build(fx.fpkm.concat(), n, g, vec!["x".into(); n]);
    let t = fpkm_to_log_tpm(&m).unwrap();
    let max_diff = t.values().iter().zip(fx.log_tpm.concat()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(max_diff < 1e-9, "max diff {max_diff}");
}

#[test]
fn gene_subset_copies_columns() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (n, g) = (12, 200);
    let values: Vec<f64> = (0..n * g).map(|_| rng.random_range(0.0..10.0)).collect();
    let m = build(values, n, g, vec!["x".into(); n]);
    let mut chosen: Vec<usize> = (0..g).collect();
    for i in 0..g {
        chosen.swap(i, rng.random_range(i..g));
    }
    chosen.truncate(50);
    let set = GeneSet::new(GeneSetName::Lincs1000, chosen.iter().map(|&i| m.gene_ids()[i].clone()));
    let f = filter_gene_set(&m, &set).unwrap();
    assert_eq!(f.n_genes(), 50);
    for (col, gene) in f.gene_ids().iter().enumerate() {
        let src = m.gene_ids().iter().position(|x| x == gene).unwrap();
        for s in 0..n {
            assert_eq!(f.get(s, col).to_bits(), m.get(s, src).to_bits());
        }
    }
    // original order preserved
    let positions: Vec<usize> =
        f.gene_ids().iter().map(|id| m.gene_ids().iter().position(|x| x == id).unwrap()).collect();
    assert!(positions.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn whole_frame_standardizes_every_gene() {
    let m = batch_fixture(40, 15, 9);
    let s = scale(&m, ScalingMethod::WholeFrame).unwrap();
    let n = s.n_samples() as f64;
    for gene in 0..s.n_genes() {
        let col: Vec<f64> = (0..s.n_samples()).map(|i| s.get(i, gene)).collect();
        let mean = col.iter().sum::<f64>() / n;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-9 && (var - 1.0).abs() < 1e-9);
    }
}

#[test]
fn combat_removes_planted_shift_and_scale() {
    let m = batch_fixture(100, 100, 42);
    let before = batch_stats(&m, 0);
    assert!((before[1].0 - before[0].0) > 1.5);
    let adj = scale(&m, ScalingMethod::Combat).unwrap();
    assert_eq!(adj.gene_ids(), m.gene_ids());
    assert_eq!(adj.sample_ids(), m.sample_ids());
    // The planted effect is identical for every gene, so it is measured as the
    // per-gene gap and variance ratio averaged over genes. Individual genes keep
    // part of their sampling noise because location/scale estimates are shrunk
    // toward the cross-gene prior.
    let mut gaps = Vec::new();
    let mut ratios = Vec::new();
    for gene in 0..adj.n_genes() {
        let [(ma, va), (mb, vb)] = batch_stats(&adj, gene);
        gaps.push(mb - ma);
        ratios.push(vb / va);
    }
    let mean_gap = gaps.iter().sum::<f64>() / gaps.len() as f64;
    let mean_ratio = ratios.iter().sum::<f64>() / ratios.len() as f64;
    let worst = gaps.iter().fold(0.0f64, |a, g| a.max(g.abs()));
    assert!(mean_gap.abs() < 0.05, "mean gap {mean_gap}");
    assert!((0.9..=1.1).contains(&mean_ratio), "mean variance ratio {mean_ratio}");
    assert!(worst < 0.5, "worst per-gene gap {worst}");
}

#[test]
fn combat_leaves_homogeneous_batches_nearly_untouched() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (n, g) = (500, 20);
    let values: Vec<f64> = (0..n * g).map(|_| gaussian(&mut rng)).collect();
    let sources = (0..n).map(|i| ["A", "B", "C"][i % 3].to_string()).collect();
    let m = build(values, n, g, sources);
    let adj = scale(&m, ScalingMethod::Combat).unwrap();
    let mad = m.values().iter().zip(adj.values()).map(|(a, b)| (a - b).abs()).sum::<f64>() / (n * g) as f64;
    assert!(mad < 0.1, "mean absolute adjustment {mad}");
}

#[test]
fn scaling_commutes_with_gene_filter_only_where_expected() {
    let m = batch_fixture(30, 40, 5);
    let subset = GeneSet::new(GeneSetName::Oncogenes, m.gene_ids()[..10].iter().cloned());
    // Per-gene z-scoring never looks across genes.
    let a = scale(&filter_gene_set(&m, &subset).unwrap(), ScalingMethod::WholeFrame).unwrap();
    let b = filter_gene_set(&scale(&m, ScalingMethod::WholeFrame).unwrap(), &subset).unwrap();
    assert!(a.values().iter().zip(b.values()).all(|(x, y)| (x - y).abs() < 1e-12));
    // ComBat pools its priors across genes, so restricting first changes the result.
    let a = scale(&filter_gene_set(&m, &subset).unwrap(), ScalingMethod::Combat).unwrap();
    let b = filter_gene_set(&scale(&m, ScalingMethod::Combat).unwrap(), &subset).unwrap();
    assert!(a.values().iter().zip(b.values()).any(|(x, y)| (x - y).abs() > 1e-6));
    // With the full set both orders agree.
    let full = GeneSet::full(&m);
    let a = scale(&filter_gene_set(&m, &full).unwrap(), ScalingMethod::Combat).unwrap();
    let b = filter_gene_set(&scale(&m, ScalingMethod::Combat).unwrap(), &full).unwrap();
    assert_eq!(a, b);
}

#[test]
fn log_tpm_does_not_commute_with_proper_subsets() {
    let m = batch_fixture(5, 12, 1);
    let positive = build(m.values().iter().map(|v| v.abs()).collect(), m.n_samples(), m.n_genes(), m.sources().to_vec());
    let subset = GeneSet::new(GeneSetName::Lincs1000, positive.gene_ids()[..4].iter().cloned());
    let a = fpkm_to_log_tpm(&filter_gene_set(&positive, &subset).unwrap()).unwrap();
    let b = filter_gene_set(&fpkm_to_log_tpm(&positive).unwrap(), &subset).unwrap();
    assert!(a.values().iter().zip(b.values()).any(|(x, y)| (x - y).abs() > 1e-3));
}

/// Largest principal angle between the spans of two orthonormal pairs.
fn max_principal_angle(a: &[Vec<f64>; 2], b: &[Vec<f64>; 2]) -> f64 {
    let m = DMatrix::from_fn(2, 2, |i, j| a[i].iter().zip(&b[j]).map(|(x, y)| x * y).sum::<f64>());
    let sv = m.svd(false, false).singular_values;
    let smallest = sv.iter().copied().fold(f64::INFINITY, f64::min).min(1.0);
    smallest.acos()
}

#[test]
fn pca_matches_dense_eigensolver() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let (n, g) = (30, 10);
    // anisotropic columns so the top two components are well separated
    let values: Vec<f64> = (0..n * g).map(|i| gaussian(&mut rng) * (1.0 + (i % g) as f64 * 0.7)).collect();
    let m = build(values.clone(), n, g, vec!["x".into(); n]);
    let p = pca2(&m).unwrap();

    let mut x = DMatrix::from_row_slice(n, g, &values);
    for j in 0..g {
        let mean = x.column(j).mean();
        x.column_mut(j).add_scalar_mut(-mean);
    }
    let cov = x.transpose() * &x / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov.clone());
    let mut order: Vec<usize> = (0..g).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top = [eig.eigenvectors.column(order[0]).iter().copied().collect(), eig.eigenvectors.column(order[1]).iter().copied().collect()];
    let angle = max_principal_angle(&p.loadings, &top);
    assert!(angle < 1e-6, "principal angle {angle}");
    let total = cov.trace();
    assert!((p.explained_variance[0] - eig.eigenvalues[order[0]] / total).abs() < 1e-9);
    assert!((p.explained_variance[1] - eig.eigenvalues[order[1]] / total).abs() < 1e-9);
    for c in &p.loadings {
        let big = c.iter().copied().fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
        assert!(big > 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scaling_is_idempotent(seed in 0u64..10_000, n in 4usize..20, g in 1usize..8, method in prop_oneof![Just(ScalingMethod::WholeFrame), Just(ScalingMethod::SourceScaled)]) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values: Vec<f64> = (0..n * g).map(|_| rng.random_range(-5.0..5.0)).collect();
        let sources = (0..n).map(|i| if i % 2 == 0 { "A".to_string() } else { "B".to_string() }).collect();
        let m = build(values, n, g, sources);
        let once = scale(&m, method).unwrap();
        let twice = scale(&once, method).unwrap();
        for (a, b) in once.values().iter().zip(twice.values()) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }
}
