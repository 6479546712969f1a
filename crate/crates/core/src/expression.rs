//! Expression preprocessing: FPKM to log TPM, gene-set restriction, batch
//! handling (whole-frame scaling, per-source scaling, parametric ComBat) and a
//! two-component PCA diagnostic.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numeric::sq;

/// Genes x samples expression stored row-major by sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpressionMatrix {
    gene_ids: Vec<String>,
    sample_ids: Vec<String>,
    /// `values[s * n_genes + g]`
    values: Vec<f64>,
    sources: Vec<String>,
}

impl ExpressionMatrix {
    pub fn new(gene_ids: Vec<String>, sample_ids: Vec<String>, values: Vec<f64>, sources: Vec<String>) -> Result<Self> {
        if values.len() != gene_ids.len() * sample_ids.len() {
            return Err(Error::Shape(alloc::format!(
                "{} values for {} samples x {} genes",
                values.len(),
                sample_ids.len(),
                gene_ids.len()
            )));
        }
        if sources.len() != sample_ids.len() {
            return Err(invalid!("every sample needs a source label"));
        }
        check_unique(&gene_ids, "gene")?;
        check_unique(&sample_ids, "sample")?;
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            let n_genes = gene_ids.len();
            return Err(Error::NonFinite(alloc::format!(
                "expression value for sample {} gene {}",
                sample_ids[i / n_genes],
                gene_ids[i % n_genes]
            )));
        }
        Ok(Self { gene_ids, sample_ids, values, sources })
    }

    pub fn gene_ids(&self) -> &[String] {
        &self.gene_ids
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn sources(&self) -> &[String] {
        &self.sources
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn n_genes(&self) -> usize {
        self.gene_ids.len()
    }

    pub fn n_samples(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn row(&self, sample: usize) -> &[f64] {
        let g = self.n_genes();
        &self.values[sample * g..(sample + 1) * g]
    }

    pub fn get(&self, sample: usize, gene: usize) -> f64 {
        self.values[sample * self.n_genes() + gene]
    }

    pub fn source_of(&self, sample_id: &str) -> Option<&str> {
        self.sample_index(sample_id).map(|i| self.sources[i].as_str())
    }

    pub fn sample_index(&self, sample_id: &str) -> Option<usize> {
        self.sample_ids.iter().position(|s| s == sample_id)
    }

    /// Map from sample id to row index.
    pub fn sample_lookup(&self) -> BTreeMap<&str, usize> {
        self.sample_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect()
    }

    fn column(&self, gene: usize) -> Vec<f64> {
        (0..self.n_samples()).map(|s| self.get(s, gene)).collect()
    }

    fn with_values(&self, values: Vec<f64>) -> Self {
        Self { values, ..self.clone() }
    }
}

fn check_unique(ids: &[String], what: &str) -> Result<()> {
    let mut seen = BTreeSet::new();
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(invalid!("duplicate {what} id {id}"));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneSetName {
    Lincs1000,
    Oncogenes,
    OncogenesAndLincs1000,
    Full,
}

impl GeneSetName {
    pub const ALL: [GeneSetName; 4] =
        [Self::Lincs1000, Self::Oncogenes, Self::OncogenesAndLincs1000, Self::Full];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Lincs1000 => "lincs1000",
            Self::Oncogenes => "oncogenes",
            Self::OncogenesAndLincs1000 => "oncogenes_and_lincs1000",
            Self::Full => "full",
        }
    }
}

impl fmt::Display for GeneSetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GeneSetName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| invalid!("unknown gene set {s}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneSet {
    pub name: GeneSetName,
    pub genes: BTreeSet<String>,
}

impl GeneSet {
    pub fn new<I, S>(name: GeneSetName, genes: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self { name, genes: genes.into_iter().map(Into::into).collect() }
    }

    /// The combined onco-gene and LINCS set.
    pub fn combined(lincs: &GeneSet, onco: &GeneSet) -> Self {
        Self {
            name: GeneSetName::OncogenesAndLincs1000,
            genes: lincs.genes.union(&onco.genes).cloned().collect(),
        }
    }

    /// Every gene of `matrix`.
    pub fn full(matrix: &ExpressionMatrix) -> Self {
        Self::new(GeneSetName::Full, matrix.gene_ids().iter().cloned())
    }

    pub fn len(&self) -> usize {
        self.genes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.genes.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalingMethod {
    WholeFrame,
    SourceScaled,
    Combat,
}

impl ScalingMethod {
    pub const ALL: [ScalingMethod; 3] = [Self::WholeFrame, Self::SourceScaled, Self::Combat];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::WholeFrame => "whole",
            Self::SourceScaled => "source",
            Self::Combat => "combat",
        }
    }
}

impl fmt::Display for ScalingMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScalingMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "whole" | "whole_frame" => Ok(Self::WholeFrame),
            "source" | "source_scaled" => Ok(Self::SourceScaled),
            "combat" => Ok(Self::Combat),
            _ => Err(invalid!("unknown scaling method {s}")),
        }
    }
}

/// Per-sample TPM normalisation followed by `log2(TPM + 1)`.
pub fn fpkm_to_log_tpm(matrix: &ExpressionMatrix) -> Result<ExpressionMatrix> {
    if let Some(v) = matrix.values.iter().find(|v| **v < 0.0) {
        return Err(invalid!("negative FPKM value {v}"));
    }
    let g = matrix.n_genes();
    let mut out = vec![0.0; matrix.values.len()];
    for s in 0..matrix.n_samples() {
        let row = matrix.row(s);
        let total: f64 = row.iter().sum();
        if total == 0.0 {
            continue;
        }
        for (o, &v) in out[s * g..(s + 1) * g].iter_mut().zip(row) {
            *o = libm::log2(v * 1e6 / total + 1.0);
        }
    }
    Ok(matrix.with_values(out))
}

/// Restricts columns to the genes in `set`, keeping the matrix's gene order.
pub fn filter_gene_set(matrix: &ExpressionMatrix, set: &GeneSet) -> Result<ExpressionMatrix> {
    if set.is_empty() {
        return Err(invalid!("gene set {} is empty", set.name));
    }
    let keep: Vec<usize> = (0..matrix.n_genes()).filter(|&g| set.genes.contains(&matrix.gene_ids[g])).collect();
    if keep.is_empty() {
        return Err(invalid!("gene set {} shares no genes with the expression matrix", set.name));
    }
    let mut values = Vec::with_capacity(keep.len() * matrix.n_samples());
    for s in 0..matrix.n_samples() {
        let row = matrix.row(s);
        values.extend(keep.iter().map(|&g| row[g]));
    }
    Ok(ExpressionMatrix {
        gene_ids: keep.iter().map(|&g| matrix.gene_ids[g].clone()).collect(),
        sample_ids: matrix.sample_ids.clone(),
        values,
        sources: matrix.sources.clone(),
    })
}

/// Standardises `idx` rows of one gene column in place (population variance).
fn standardize_subset(values: &mut [f64], n_genes: usize, gene: usize, idx: &[usize]) {
    let n = idx.len() as f64;
    let mean = idx.iter().map(|&s| values[s * n_genes + gene]).sum::<f64>() / n;
    let var = idx.iter().map(|&s| sq(values[s * n_genes + gene] - mean)).sum::<f64>() / n;
    let sd = libm::sqrt(var);
    for &s in idx {
        let v = &mut values[s * n_genes + gene];
        *v = if sd > 1e-12 * (1.0 + mean.abs()) { (*v - mean) / sd } else { 0.0 };
    }
}

/// Sample indices grouped by source label, in label order.
pub fn source_groups(matrix: &ExpressionMatrix) -> BTreeMap<String, Vec<usize>> {
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, src) in matrix.sources.iter().enumerate() {
        groups.entry(src.clone()).or_default().push(i);
    }
    groups
}

pub fn scale(matrix: &ExpressionMatrix, method: ScalingMethod) -> Result<ExpressionMatrix> {
    let g = matrix.n_genes();
    match method {
        ScalingMethod::WholeFrame => {
            let mut values = matrix.values.clone();
            let all: Vec<usize> = (0..matrix.n_samples()).collect();
            for gene in 0..g {
                standardize_subset(&mut values, g, gene, &all);
            }
            Ok(matrix.with_values(values))
        }
        ScalingMethod::SourceScaled => {
            let mut values = matrix.values.clone();
            for idx in source_groups(matrix).values() {
                for gene in 0..g {
                    standardize_subset(&mut values, g, gene, idx);
                }
            }
            Ok(matrix.with_values(values))
        }
        ScalingMethod::Combat => combat(matrix),
    }
}

const COMBAT_TOL: f64 = 1e-6;
const COMBAT_MAX_ITER: usize = 10_000;

/// Parametric empirical-Bayes batch adjustment, batches given by source label.
pub fn combat(matrix: &ExpressionMatrix) -> Result<ExpressionMatrix> {
    let groups = source_groups(matrix);
    if groups.len() < 2 {
        return Err(invalid!("ComBat needs at least 2 sources, found {}", groups.len()));
    }
    for (name, idx) in &groups {
        if idx.len() < 2 {
            return Err(invalid!("ComBat batch {name} has a single sample"));
        }
    }
    let batches: Vec<&Vec<usize>> = groups.values().collect();
    let n_genes = matrix.n_genes();
    let n = matrix.n_samples() as f64;

    // Per-gene grand mean and pooled residual variance around batch means.
    let mut grand = vec![0.0; n_genes];
    let mut pooled_sd = vec![0.0; n_genes];
    let mut z = vec![0.0; matrix.values.len()];
    for gene in 0..n_genes {
        let col = matrix.column(gene);
        let batch_means: Vec<f64> =
            batches.iter().map(|idx| idx.iter().map(|&s| col[s]).sum::<f64>() / idx.len() as f64).collect();
        grand[gene] = batches.iter().zip(&batch_means).map(|(idx, m)| idx.len() as f64 * m).sum::<f64>() / n;
        let mut ss = 0.0;
        for (idx, m) in batches.iter().zip(&batch_means) {
            ss += idx.iter().map(|&s| sq(col[s] - m)).sum::<f64>();
        }
        pooled_sd[gene] = libm::sqrt(ss / n);
        for s in 0..matrix.n_samples() {
            z[s * n_genes + gene] = if pooled_sd[gene] > 0.0 { (col[s] - grand[gene]) / pooled_sd[gene] } else { 0.0 };
        }
    }
    let active: Vec<usize> = (0..n_genes).filter(|&g| pooled_sd[g] > 0.0).collect();

    let mut out = vec![0.0; matrix.values.len()];
    for idx in &batches {
        let nb = idx.len() as f64;
        let mut gamma_hat = Vec::with_capacity(active.len());
        let mut delta_hat = Vec::with_capacity(active.len());
        for &gene in &active {
            let vals: Vec<f64> = idx.iter().map(|&s| z[s * n_genes + gene]).collect();
            let m = vals.iter().sum::<f64>() / nb;
            let v = vals.iter().map(|x| sq(x - m)).sum::<f64>() / (nb - 1.0);
            gamma_hat.push(m);
            delta_hat.push(v.max(1e-12));
        }
        let (gamma_bar, tau2) = mean_var(&gamma_hat);
        let (dm, ds2) = mean_var(&delta_hat);

        for (k, &gene) in active.iter().enumerate() {
            let (gamma_star, delta_star) = posterior(
                idx.iter().map(|&s| z[s * n_genes + gene]),
                gamma_hat[k],
                delta_hat[k],
                gamma_bar,
                tau2,
                dm,
                ds2,
                nb,
            );
            for &s in idx.iter() {
                let adj = (z[s * n_genes + gene] - gamma_star) / libm::sqrt(delta_star);
                out[s * n_genes + gene] = adj * pooled_sd[gene] + grand[gene];
            }
        }
    }
    Ok(matrix.with_values(out))
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = if xs.len() > 1 { xs.iter().map(|x| sq(x - m)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (m, v)
}

/// Iterative posterior update for one gene in one batch.
#[allow(clippy::too_many_arguments)]
fn posterior(
    data: impl Iterator<Item = f64> + Clone,
    gamma_hat: f64,
    delta_hat: f64,
    gamma_bar: f64,
    tau2: f64,
    delta_mean: f64,
    delta_var: f64,
    nb: f64,
) -> (f64, f64) {
    // Inverse-gamma prior on delta by method of moments; a vanishing spread
    // collapses the prior onto its mean.
    if delta_var <= 1e-300 {
        let g = if tau2 > 0.0 { (nb * tau2 * gamma_hat + delta_mean * gamma_bar) / (nb * tau2 + delta_mean) } else { gamma_bar };
        return (g, delta_mean);
    }
    let a = (2.0 * delta_var + delta_mean * delta_mean) / delta_var;
    let b = (delta_mean * delta_var + delta_mean * delta_mean * delta_mean) / delta_var;
    let mut g_old = gamma_hat;
    let mut d_old = delta_hat;
    for _ in 0..COMBAT_MAX_ITER {
        let g_new = (nb * tau2 * gamma_hat + d_old * gamma_bar) / (nb * tau2 + d_old);
        let ss: f64 = data.clone().map(|x| sq(x - g_new)).sum();
        let d_new = (0.5 * ss + b) / (nb / 2.0 + a - 1.0);
        let change = rel_change(g_new, g_old).max(rel_change(d_new, d_old));
        g_old = g_new;
        d_old = d_new;
        if change < COMBAT_TOL {
            break;
        }
    }
    (g_old, d_old)
}

fn rel_change(new: f64, old: f64) -> f64 {
    let denom = old.abs();
    if denom > 1e-12 {
        libm::fabs(new - old) / denom
    } else {
        libm::fabs(new - old)
    }
}

/// First two principal components of the mean-centred samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pca2 {
    /// Row-major `n_samples x 2` scores.
    pub coordinates: Vec<[f64; 2]>,
    /// Fraction of total variance explained by each component.
    pub explained_variance: [f64; 2],
    /// Unit loading vectors over genes.
    pub loadings: [Vec<f64>; 2],
}

const PCA_MAX_ITER: usize = 100_000;
const PCA_TOL: f64 = 1e-15;

pub fn pca2(matrix: &ExpressionMatrix) -> Result<Pca2> {
    let n = matrix.n_samples();
    let g = matrix.n_genes();
    if n < 2 || g < 2 {
        return Err(Error::InsufficientData("PCA needs at least 2 samples and 2 genes".into()));
    }
    let mut x = matrix.values.clone();
    for gene in 0..g {
        let m = (0..n).map(|s| x[s * g + gene]).sum::<f64>() / n as f64;
        for s in 0..n {
            x[s * g + gene] -= m;
        }
    }
    let total: f64 = x.iter().map(|v| v * v).sum::<f64>() / (n - 1) as f64;
    if total.is_nan() || total <= 1e-300 {
        return Err(Error::Degenerate("all samples are identical (rank 0)".into()));
    }

    // cov * v computed as X^T (X v) / (n - 1).
    let apply = |v: &[f64]| -> Vec<f64> {
        let xv: Vec<f64> = (0..n).map(|s| dot(&x[s * g..(s + 1) * g], v)).collect();
        let mut out = vec![0.0; g];
        for s in 0..n {
            axpy(xv[s], &x[s * g..(s + 1) * g], &mut out);
        }
        out.iter_mut().for_each(|o| *o /= (n - 1) as f64);
        out
    };

    let mut components: Vec<Vec<f64>> = Vec::with_capacity(2);
    let mut eigenvalues = [0.0; 2];
    for k in 0..2 {
        // deterministic start, not orthogonal to a generic dominant direction
        let mut v: Vec<f64> = (0..g).map(|i| 1.0 + libm::sqrt(i as f64 + 1.0) * 1e-3).collect();
        deflate(&mut v, &components);
        if normalize(&mut v) == 0.0 {
            v = vec![0.0; g];
            v[k] = 1.0;
            deflate(&mut v, &components);
            normalize(&mut v);
        }
        for _ in 0..PCA_MAX_ITER {
            let mut w = apply(&v);
            deflate(&mut w, &components);
            let norm = normalize(&mut w);
            if norm <= 1e-300 {
                break;
            }
            let diff: f64 = v.iter().zip(&w).map(|(a, b)| (a - b) * (a - b)).sum();
            v = w;
            if diff < PCA_TOL * PCA_TOL {
                break;
            }
        }
        // Rayleigh quotient of the converged direction
        eigenvalues[k] = dot(&v, &apply(&v)).max(0.0);
        components.push(v);
    }

    for c in components.iter_mut() {
        let big = c.iter().copied().fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
        if big < 0.0 {
            c.iter_mut().for_each(|v| *v = -*v);
        }
    }
    let coordinates = (0..n)
        .map(|s| {
            let row = &x[s * g..(s + 1) * g];
            [dot(row, &components[0]), dot(row, &components[1])]
        })
        .collect();
    let second = components.pop().expect("two components");
    let first = components.pop().expect("two components");
    Ok(Pca2 {
        coordinates,
        explained_variance: [eigenvalues[0] / total, eigenvalues[1] / total],
        loadings: [first, second],
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn normalize(v: &mut [f64]) -> f64 {
    let norm = libm::sqrt(dot(v, v));
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    norm
}

fn deflate(v: &mut [f64], basis: &[Vec<f64>]) {
    for b in basis {
        let p = dot(v, b);
        axpy(-p, b, v);
    }
}

/// Gene ids as owned strings, for building fixtures.
pub fn ids(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| alloc::format!("{prefix}{i:04}")).collect()
}

impl fmt::Display for ExpressionMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ExpressionMatrix({} samples x {} genes)", self.n_samples(), self.n_genes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    fn matrix(rows: &[&[f64]], sources: &[&str]) -> ExpressionMatrix {
        let g = rows[0].len();
        ExpressionMatrix::new(
            ids("G", g),
            ids("S", rows.len()),
            rows.iter().flat_map(|r| r.iter().copied()).collect(),
            sources.iter().map(|s| s.to_string()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn rejects_duplicates_and_nan() {
        let dup = ExpressionMatrix::new(
            vec!["A".into(), "A".into()],
            vec!["s".into()],
            vec![1.0, 2.0],
            vec!["x".into()],
        );
        assert!(dup.is_err());
        let nan = ExpressionMatrix::new(vec!["A".into()], vec!["s".into()], vec![f64::NAN], vec!["x".into()]);
        assert!(matches!(nan, Err(Error::NonFinite(_))));
    }

    #[test]
    fn log_tpm_examples() {
        let m = matrix(&[&[2.0, 2.0], &[0.0, 0.0]], &["a", "a"]);
        let t = fpkm_to_log_tpm(&m).unwrap();
        assert!((t.get(0, 0) - 18.93157145471137).abs() < 1e-12);
        assert_eq!(t.get(0, 0), t.get(0, 1));
        assert_eq!(t.row(1), &[0.0, 0.0]);
        let neg = matrix(&[&[-1.0, 2.0]], &["a"]);
        assert!(fpkm_to_log_tpm(&neg).is_err());
    }

    #[test]
    fn filter_identity_and_disjoint() {
        let m = matrix(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]], &["a", "b"]);
        assert_eq!(filter_gene_set(&m, &GeneSet::full(&m)).unwrap(), m);
        let other = GeneSet::new(GeneSetName::Oncogenes, ["ZZZ"]);
        assert!(filter_gene_set(&m, &other).is_err());
        let empty = GeneSet::new(GeneSetName::Lincs1000, Vec::<String>::new());
        assert!(filter_gene_set(&m, &empty).is_err());
    }

    #[test]
    fn combined_set_is_superset() {
        let l = GeneSet::new(GeneSetName::Lincs1000, ["a", "b"]);
        let o = GeneSet::new(GeneSetName::Oncogenes, ["b", "c"]);
        let both = GeneSet::combined(&l, &o);
        assert!(both.genes.is_superset(&l.genes) && both.genes.is_superset(&o.genes));
        assert_eq!(both.len(), 3);
    }

    #[test]
    fn single_source_scalings_agree() {
        let m = matrix(&[&[1.0, 5.0], &[2.0, 3.0], &[7.0, 1.0]], &["a", "a", "a"]);
        assert_eq!(scale(&m, ScalingMethod::WholeFrame).unwrap(), scale(&m, ScalingMethod::SourceScaled).unwrap());
    }

    #[test]
    fn zero_variance_gene_becomes_zero() {
        let m = matrix(&[&[1.0, 5.0], &[2.0, 5.0], &[7.0, 5.0]], &["a", "a", "a"]);
        let s = scale(&m, ScalingMethod::WholeFrame).unwrap();
        assert!((0..3).all(|i| s.get(i, 1) == 0.0));
    }

    #[test]
    fn combat_requires_batches() {
        let one = matrix(&[&[1.0, 5.0], &[2.0, 3.0]], &["a", "a"]);
        assert!(scale(&one, ScalingMethod::Combat).is_err());
        let singleton = matrix(&[&[1.0, 5.0], &[2.0, 3.0], &[4.0, 4.0]], &["a", "a", "b"]);
        match scale(&singleton, ScalingMethod::Combat) {
            Err(Error::InvalidInput(msg)) => assert!(msg.contains("batch b")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn pca_line_has_one_component() {
        let rows: Vec<[f64; 2]> = (0..6).map(|i| [i as f64, 2.0 * i as f64 + 1.0]).collect();
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let m = matrix(&refs, &["a"; 6]);
        let p = pca2(&m).unwrap();
        assert!(p.explained_variance[1].abs() < 1e-9);
        assert!((p.explained_variance[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn pca_rejects_identical_samples() {
        let m = matrix(&[&[1.0, 2.0], &[1.0, 2.0], &[1.0, 2.0]], &["a", "a", "a"]);
        assert!(matches!(pca2(&m), Err(Error::Degenerate(_))));
    }
}
