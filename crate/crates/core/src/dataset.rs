//! Training-table assembly and the seeded synthetic study generator.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::expression::{filter_gene_set, ids, scale, ExpressionMatrix, GeneSet, GeneSetName, ScalingMethod};
use crate::numeric::{bisect, median, sq};

pub const DEFAULT_CUTOFF: f64 = 0.5;
pub const DEFAULT_RESPONDER_FRACTION: f64 = 0.0386;
/// Realized responder fraction must land within this distance of the target.
pub const RESPONDER_TOLERANCE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub cell_id: String,
    pub drug_id: String,
    pub source: String,
    pub auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnpCountMatrix {
    sample_ids: Vec<String>,
    locus_ids: Vec<String>,
    counts: Vec<u32>,
}

impl SnpCountMatrix {
    pub fn new(sample_ids: Vec<String>, locus_ids: Vec<String>, counts: Vec<u32>) -> Result<Self> {
        if counts.len() != sample_ids.len() * locus_ids.len() {
            return Err(Error::Shape(format!(
                "{} counts for {} samples x {} loci",
                counts.len(),
                sample_ids.len(),
                locus_ids.len()
            )));
        }
        Ok(Self { sample_ids, locus_ids, counts })
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn locus_ids(&self) -> &[String] {
        &self.locus_ids
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn row(&self, sample: usize) -> &[u32] {
        let w = self.locus_ids.len();
        &self.counts[sample * w..(sample + 1) * w]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DescriptorProvider {
    DescriptorA,
    DescriptorB,
    Both,
}

impl DescriptorProvider {
    pub const ALL: [DescriptorProvider; 3] = [Self::DescriptorA, Self::DescriptorB, Self::Both];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::DescriptorA => "descriptor_a",
            Self::DescriptorB => "descriptor_b",
            Self::Both => "both",
        }
    }
}

impl fmt::Display for DescriptorProvider {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DescriptorProvider {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "descriptor_a" | "a" => Ok(Self::DescriptorA),
            "descriptor_b" | "b" => Ok(Self::DescriptorB),
            "both" => Ok(Self::Both),
            _ => Err(invalid!("unknown descriptor provider {s}")),
        }
    }
}

/// Drug x descriptor values; NaN marks a missing value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrugDescriptorMatrix {
    drug_ids: Vec<String>,
    descriptor_ids: Vec<String>,
    values: Vec<f64>,
    provider: DescriptorProvider,
}

impl DrugDescriptorMatrix {
    pub fn new(
        drug_ids: Vec<String>,
        descriptor_ids: Vec<String>,
        values: Vec<f64>,
        provider: DescriptorProvider,
    ) -> Result<Self> {
        if values.len() != drug_ids.len() * descriptor_ids.len() {
            return Err(Error::Shape(format!(
                "{} values for {} drugs x {} descriptors",
                values.len(),
                drug_ids.len(),
                descriptor_ids.len()
            )));
        }
        if values.iter().any(|v| v.is_infinite()) {
            return Err(Error::NonFinite("descriptor values".into()));
        }
        Ok(Self { drug_ids, descriptor_ids, values, provider })
    }

    /// Column-concatenation of two providers over the drugs present in both.
    pub fn both(a: &Self, b: &Self) -> Result<Self> {
        let b_index: BTreeMap<&str, usize> = b.drug_ids.iter().enumerate().map(|(i, d)| (d.as_str(), i)).collect();
        let mut drug_ids = Vec::new();
        let mut values = Vec::new();
        for (i, d) in a.drug_ids.iter().enumerate() {
            if let Some(&j) = b_index.get(d.as_str()) {
                drug_ids.push(d.clone());
                values.extend_from_slice(a.row(i));
                values.extend_from_slice(b.row(j));
            }
        }
        if drug_ids.is_empty() {
            return Err(invalid!("descriptor providers share no drugs"));
        }
        let descriptor_ids = a.descriptor_ids.iter().chain(&b.descriptor_ids).cloned().collect();
        Self::new(drug_ids, descriptor_ids, values, DescriptorProvider::Both)
    }

    pub fn drug_ids(&self) -> &[String] {
        &self.drug_ids
    }

    pub fn descriptor_ids(&self) -> &[String] {
        &self.descriptor_ids
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn provider(&self) -> DescriptorProvider {
        self.provider
    }

    pub fn row(&self, drug: usize) -> &[f64] {
        let w = self.descriptor_ids.len();
        &self.values[drug * w..(drug + 1) * w]
    }

    /// Median-imputes missing values, drops constant columns and z-scores the
    /// rest over drugs. Returns the cleaned row-major table and kept column ids.
    pub fn cleaned(&self) -> (Vec<f64>, Vec<String>) {
        let n = self.drug_ids.len();
        let w = self.descriptor_ids.len();
        let mut columns: Vec<(String, Vec<f64>)> = Vec::new();
        for j in 0..w {
            let mut col: Vec<f64> = (0..n).map(|i| self.values[i * w + j]).collect();
            let present: Vec<f64> = col.iter().copied().filter(|v| !v.is_nan()).collect();
            let fill = if present.is_empty() { 0.0 } else { median(&present) };
            for v in col.iter_mut().filter(|v| v.is_nan()) {
                *v = fill;
            }
            let mean = col.iter().sum::<f64>() / n as f64;
            let var = col.iter().map(|v| sq(v - mean)).sum::<f64>() / n as f64;
            if var <= 1e-24 * (1.0 + sq(mean)) {
                continue;
            }
            let sd = libm::sqrt(var);
            columns.push((self.descriptor_ids[j].clone(), col.iter().map(|v| (v - mean) / sd).collect()));
        }
        let mut table = vec![0.0; n * columns.len()];
        for (j, (_, col)) in columns.iter().enumerate() {
            for i in 0..n {
                table[i * columns.len() + j] = col[i];
            }
        }
        (table, columns.into_iter().map(|(id, _)| id).collect())
    }
}

/// One training row: indices into the cell and drug feature tables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub cell: usize,
    pub drug: usize,
    pub source: usize,
    pub y: f64,
}

/// Rows of (cell features, drug features, target, source). Feature vectors are
/// stored once per entity and shared by rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssembledDataset {
    pub cell_ids: Vec<String>,
    pub drug_ids: Vec<String>,
    pub sources: Vec<String>,
    cell_table: Vec<f64>,
    drug_table: Vec<f64>,
    pub cell_block_width: usize,
    pub drug_block_width: usize,
    pub rows: Vec<Row>,
    pub cutoff: f64,
    /// Records dropped because a cell or drug had no features.
    pub dropped: usize,
}

impl AssembledDataset {
    /// Builds a dataset from precomputed tables; `rows` index into them.
    pub fn from_parts(
        cell_ids: Vec<String>,
        cell_table: Vec<f64>,
        drug_ids: Vec<String>,
        drug_table: Vec<f64>,
        sources: Vec<String>,
        rows: Vec<Row>,
    ) -> Result<Self> {
        let cw = if cell_ids.is_empty() { 0 } else { cell_table.len() / cell_ids.len() };
        let dw = if drug_ids.is_empty() { 0 } else { drug_table.len() / drug_ids.len() };
        if cw * cell_ids.len() != cell_table.len() || dw * drug_ids.len() != drug_table.len() {
            return Err(Error::Shape("feature tables are not rectangular".into()));
        }
        if cell_table.iter().chain(&drug_table).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature table".into()));
        }
        for r in &rows {
            if r.cell >= cell_ids.len() || r.drug >= drug_ids.len() || r.source >= sources.len() {
                return Err(invalid!("row index out of range"));
            }
            if !(0.0..=1.0).contains(&r.y) {
                return Err(invalid!("target {} outside [0, 1]", r.y));
            }
        }
        Ok(Self {
            cell_ids,
            drug_ids,
            sources,
            cell_table,
            drug_table,
            cell_block_width: cw,
            drug_block_width: dw,
            rows,
            cutoff: DEFAULT_CUTOFF,
            dropped: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn cell_features(&self, row: usize) -> &[f64] {
        let c = self.rows[row].cell;
        &self.cell_table[c * self.cell_block_width..(c + 1) * self.cell_block_width]
    }

    pub fn drug_features(&self, row: usize) -> &[f64] {
        let d = self.rows[row].drug;
        &self.drug_table[d * self.drug_block_width..(d + 1) * self.drug_block_width]
    }

    pub fn targets(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.y).collect()
    }

    pub fn row_sources(&self) -> Vec<&str> {
        self.rows.iter().map(|r| self.sources[r.source].as_str()).collect()
    }

    pub fn responder_fraction(&self) -> f64 {
        responder_stats(self, self.cutoff).map(|s| s.fraction).unwrap_or(f64::NAN)
    }

    /// Keeps rows whose cell belongs to one of the `k` most frequent groups
    /// (by row count, ties broken by label). Cells without a label are dropped.
    pub fn filter_top_groups(&self, cell_groups: &BTreeMap<String, String>, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(invalid!("top-K group filter needs k >= 1"));
        }
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for r in &self.rows {
            if let Some(g) = cell_groups.get(&self.cell_ids[r.cell]) {
                *counts.entry(g.as_str()).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let keep: BTreeSet<&str> = ranked.iter().take(k).map(|(g, _)| *g).collect();
        let mut out = self.clone();
        out.rows.retain(|r| cell_groups.get(&self.cell_ids[r.cell]).is_some_and(|g| keep.contains(g.as_str())));
        Ok(out)
    }
}

/// Joins response records to cell and drug features.
///
/// Duplicate (cell, drug, source) records are averaged. Rows come out sorted by
/// (source, cell, drug) so input order never matters.
pub fn assemble(
    records: &[ResponseRecord],
    expression: &ExpressionMatrix,
    snps: Option<&SnpCountMatrix>,
    descriptors: &DrugDescriptorMatrix,
    gene_set: &GeneSet,
    scaling: ScalingMethod,
) -> Result<AssembledDataset> {
    if records.is_empty() {
        return Err(Error::InsufficientData("no response records".into()));
    }
    for r in records {
        if !(0.0..=1.0).contains(&r.auc) {
            return Err(invalid!("AUC {} for ({}, {}) outside [0, 1]", r.auc, r.cell_id, r.drug_id));
        }
    }
    let expr = scale(&filter_gene_set(expression, gene_set)?, scaling)?;
    let expr_index = expr.sample_lookup();
    let snp_index: Option<BTreeMap<&str, usize>> =
        snps.map(|s| s.sample_ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect());
    let drug_index: BTreeMap<&str, usize> =
        descriptors.drug_ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();

    // (source, cell, drug) -> auc values
    let mut merged: BTreeMap<(&str, &str, &str), Vec<f64>> = BTreeMap::new();
    let mut dropped = 0;
    for r in records {
        let cell_ok = expr_index.contains_key(r.cell_id.as_str())
            && snp_index.as_ref().is_none_or(|m| m.contains_key(r.cell_id.as_str()));
        if !cell_ok || !drug_index.contains_key(r.drug_id.as_str()) {
            dropped += 1;
            continue;
        }
        merged.entry((r.source.as_str(), r.cell_id.as_str(), r.drug_id.as_str())).or_default().push(r.auc);
    }
    if 2 * dropped > records.len() {
        return Err(invalid!(
            "{dropped} of {} records have no matching cell or drug features; check the join keys",
            records.len()
        ));
    }

    let cells: BTreeSet<&str> = merged.keys().map(|k| k.1).collect();
    let drugs: BTreeSet<&str> = merged.keys().map(|k| k.2).collect();
    let sources: BTreeSet<&str> = merged.keys().map(|k| k.0).collect();
    let cell_pos: BTreeMap<&str, usize> = cells.iter().enumerate().map(|(i, c)| (*c, i)).collect();
    let drug_pos: BTreeMap<&str, usize> = drugs.iter().enumerate().map(|(i, d)| (*d, i)).collect();
    let source_pos: BTreeMap<&str, usize> = sources.iter().enumerate().map(|(i, s)| (*s, i)).collect();

    let mut cell_table = Vec::new();
    for c in &cells {
        cell_table.extend_from_slice(expr.row(expr_index[c]));
        if let (Some(s), Some(idx)) = (snps, &snp_index) {
            cell_table.extend(s.row(idx[c]).iter().map(|&v| v as f64));
        }
    }
    let (desc_table, kept) = descriptors.cleaned();
    let mut drug_table = Vec::with_capacity(drugs.len() * kept.len());
    for d in &drugs {
        let i = drug_index[d];
        drug_table.extend_from_slice(&desc_table[i * kept.len()..(i + 1) * kept.len()]);
    }

    let rows = merged
        .iter()
        .map(|(&(s, c, d), aucs)| {
            let mut v = aucs.clone();
            v.sort_by(f64::total_cmp);
            Row { cell: cell_pos[c], drug: drug_pos[d], source: source_pos[s], y: v.iter().sum::<f64>() / v.len() as f64 }
        })
        .collect();
    let mut data = AssembledDataset::from_parts(
        cells.iter().map(|c| c.to_string()).collect(),
        cell_table,
        drugs.iter().map(|d| d.to_string()).collect(),
        drug_table,
        sources.iter().map(|s| s.to_string()).collect(),
        rows,
    )?;
    // Entities with features but no rows still define the block widths.
    data.cell_block_width = expr.n_genes() + snps.map_or(0, |s| s.locus_ids.len());
    data.drug_block_width = kept.len();
    data.dropped = dropped;
    Ok(data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponderStats {
    pub fraction: f64,
    pub responders: usize,
    pub total: usize,
    /// source -> (responders, rows)
    pub per_source: BTreeMap<String, (usize, usize)>,
}

pub fn responder_stats(data: &AssembledDataset, cutoff: f64) -> Result<ResponderStats> {
    if !(cutoff > 0.0 && cutoff < 1.0) {
        return Err(invalid!("cutoff {cutoff} outside (0, 1)"));
    }
    let mut per_source: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    let mut responders = 0;
    for r in &data.rows {
        let e = per_source.entry(data.sources[r.source].clone()).or_default();
        e.1 += 1;
        if r.y <= cutoff {
            e.0 += 1;
            responders += 1;
        }
    }
    let total = data.rows.len();
    let fraction = if total == 0 { 0.0 } else { responders as f64 / total as f64 };
    Ok(ResponderStats { fraction, responders, total, per_source })
}

fn default_sources() -> usize {
    3
}

fn default_steepness() -> f64 {
    1.5
}

/// Parameters of a synthetic study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_cells: usize,
    pub n_drugs: usize,
    pub n_genes: usize,
    pub n_snps: usize,
    pub n_descriptors: usize,
    /// Probability that a (cell, drug) pair is measured.
    pub density: f64,
    pub latent_dims: usize,
    pub noise_sigma: f64,
    pub responder_target_fraction: f64,
    pub seed: u64,
    #[serde(default = "default_sources")]
    pub n_sources: usize,
    /// Number of cell-group labels; 0 disables labels.
    #[serde(default)]
    pub n_groups: usize,
    /// Slope of the response link in units of the latent score's standard deviation.
    #[serde(default = "default_steepness")]
    pub steepness: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_cells: 200,
            n_drugs: 50,
            n_genes: 120,
            n_snps: 40,
            n_descriptors: 60,
            density: 1.0,
            latent_dims: 8,
            noise_sigma: 0.05,
            responder_target_fraction: DEFAULT_RESPONDER_FRACTION,
            seed: 7,
            n_sources: 3,
            n_groups: 0,
            steepness: 1.5,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_cells", self.n_cells),
            ("n_drugs", self.n_drugs),
            ("n_genes", self.n_genes),
            ("n_snps", self.n_snps),
            ("n_descriptors", self.n_descriptors),
            ("latent_dims", self.latent_dims),
            ("n_sources", self.n_sources),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(invalid!("{name} must be > 0"));
            }
        }
        if self.n_descriptors < 2 {
            return Err(invalid!("n_descriptors must be >= 2 to split across two providers"));
        }
        if !(self.density > 0.0 && self.density <= 1.0) {
            return Err(invalid!("density {} outside (0, 1]", self.density));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(invalid!("noise_sigma must be finite and >= 0"));
        }
        if !(self.responder_target_fraction > 0.0 && self.responder_target_fraction < 1.0) {
            return Err(invalid!("responder_target_fraction outside (0, 1)"));
        }
        if !(self.steepness > 0.0 && self.steepness.is_finite()) {
            return Err(invalid!("steepness must be positive"));
        }
        Ok(())
    }
}

/// Noise-free quantities behind a synthetic study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub cell_latents: Vec<Vec<f64>>,
    pub drug_latents: Vec<Vec<f64>>,
    /// Noise-free AUC for each emitted record, in record order.
    pub true_auc: Vec<f64>,
    /// Threshold on the latent score found by bisection.
    pub threshold: f64,
    pub kappa: f64,
    /// r² of the noise-free AUC against the observed AUC: the best any model can do.
    pub oracle_r2: f64,
    pub responder_fraction: f64,
    pub cell_groups: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticStudy {
    pub records: Vec<ResponseRecord>,
    pub expression: ExpressionMatrix,
    pub snps: SnpCountMatrix,
    pub descriptors_a: DrugDescriptorMatrix,
    pub descriptors_b: DrugDescriptorMatrix,
    pub gene_sets: Vec<GeneSet>,
    pub ground_truth: GroundTruth,
}

impl SyntheticStudy {
    pub fn descriptors(&self, provider: DescriptorProvider) -> Result<DrugDescriptorMatrix> {
        match provider {
            DescriptorProvider::DescriptorA => Ok(self.descriptors_a.clone()),
            DescriptorProvider::DescriptorB => Ok(self.descriptors_b.clone()),
            DescriptorProvider::Both => DrugDescriptorMatrix::both(&self.descriptors_a, &self.descriptors_b),
        }
    }

    pub fn gene_set(&self, name: GeneSetName) -> GeneSet {
        self.gene_sets
            .iter()
            .find(|g| g.name == name)
            .cloned()
            .unwrap_or_else(|| GeneSet::full(&self.expression))
    }
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn link(kappa: f64, threshold: f64, score: f64) -> f64 {
    0.5 + 0.5 * libm::tanh(kappa * (threshold - score))
}

/// Generates a seeded synthetic study.
///
/// Every cell and drug gets a latent vector. The latent score of a pair is a
/// drug potency term plus a cell sensitivity term plus a bilinear interaction,
/// and the noise-free AUC is `0.5 + 0.5 tanh(kappa (t - score))`. The threshold
/// `t` is found by bisection so the observed responder fraction hits the target.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticStudy> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let d = spec.latent_dims;
    let cell_latents: Vec<Vec<f64>> = (0..spec.n_cells).map(|_| normal_vec(&mut rng, d)).collect();
    let drug_latents: Vec<Vec<f64>> = (0..spec.n_drugs).map(|_| normal_vec(&mut rng, d)).collect();
    let mixing: Vec<f64> = normal_vec(&mut rng, d * d);

    let cell_ids = ids("CELL", spec.n_cells);
    let drug_ids = ids("DRUG", spec.n_drugs);
    let source_names: Vec<String> = (0..spec.n_sources).map(|i| format!("STUDY{}", i + 1)).collect();
    // Each cell line belongs to one study, dealt round-robin after a shuffle.
    let mut order: Vec<usize> = (0..spec.n_cells).collect();
    shuffle(&mut order, &mut rng);
    let mut cell_source = vec![0; spec.n_cells];
    for (k, &c) in order.iter().enumerate() {
        cell_source[c] = k % spec.n_sources;
    }

    let score = |u: &[f64], v: &[f64]| -> f64 {
        let mut inter = 0.0;
        for i in 1..d {
            for j in 1..d {
                inter += u[i] * mixing[i * d + j] * v[j];
            }
        }
        let scale = if d > 1 { libm::sqrt((d - 1) as f64) } else { 1.0 };
        0.8 * v[0] + 0.4 * u[0] + 0.5 * inter / scale
    };

    let mut pairs = Vec::new();
    for c in 0..spec.n_cells {
        for g in 0..spec.n_drugs {
            if spec.density >= 1.0 || rng.random::<f64>() < spec.density {
                pairs.push((c, g));
            }
        }
    }
    if pairs.is_empty() {
        return Err(invalid!("density {} produced no measured pairs", spec.density));
    }
    let scores: Vec<f64> = pairs.iter().map(|&(c, g)| score(&cell_latents[c], &drug_latents[g])).collect();
    let noise: Vec<f64> = (0..pairs.len()).map(|_| spec.noise_sigma * rng.sample::<f64, _>(StandardNormal)).collect();

    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    let sd = libm::sqrt(scores.iter().map(|s| sq(s - mean)).sum::<f64>() / scores.len() as f64);
    let kappa = spec.steepness / if sd > 0.0 { sd } else { 1.0 };
    let observe = |t: f64, i: usize| (link(kappa, t, scores[i]) + noise[i]).clamp(0.0, 1.0);
    let fraction_at = |t: f64| {
        (0..scores.len()).filter(|&i| observe(t, i) <= DEFAULT_CUTOFF).count() as f64 / scores.len() as f64
    };
    let target = spec.responder_target_fraction;
    let (lo, hi) = scores.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &s| (a.min(s), b.max(s)));
    let span = 20.0 / kappa + 1.0;
    // Fraction is a non-increasing step function of t; bisect on its crossing.
    let threshold = bisect(|t| fraction_at(t) - target - 1e-12, lo - span, hi + span, 1e-10)
        .ok_or_else(|| invalid!("responder fraction {target} unreachable"))?;
    let mut realized = fraction_at(threshold);
    let mut t_final = threshold;
    // The step just above the crossing may be closer to the target.
    let below = fraction_at(threshold + 2e-10);
    if (below - target).abs() < (realized - target).abs() {
        realized = below;
        t_final = threshold + 2e-10;
    }
    if (realized - target).abs() > RESPONDER_TOLERANCE {
        return Err(invalid!(
            "responder fraction {target} infeasible with {} measured pairs (closest {realized})",
            pairs.len()
        ));
    }

    let true_auc: Vec<f64> = scores.iter().map(|&s| link(kappa, t_final, s)).collect();
    let records: Vec<ResponseRecord> = pairs
        .iter()
        .enumerate()
        .map(|(i, &(c, g))| ResponseRecord {
            cell_id: cell_ids[c].clone(),
            drug_id: drug_ids[g].clone(),
            source: source_names[cell_source[c]].clone(),
            auc: observe(t_final, i),
        })
        .collect();
    let observed: Vec<f64> = records.iter().map(|r| r.auc).collect();
    let oracle_r2 = r_squared(&true_auc, &observed);

    // Expression: latent projection, a per-study offset and noise.
    let projection = normal_vec(&mut rng, d * spec.n_genes);
    let offsets: Vec<Vec<f64>> = (0..spec.n_sources).map(|_| normal_vec(&mut rng, spec.n_genes)).collect();
    let gene_noise = Normal::<f64>::new(0.0, 0.3).map_err(|e| invalid!("{e}"))?;
    let mut values = Vec::with_capacity(spec.n_cells * spec.n_genes);
    for c in 0..spec.n_cells {
        for g in 0..spec.n_genes {
            let signal: f64 = (0..d).map(|k| cell_latents[c][k] * projection[k * spec.n_genes + g]).sum();
            values.push(signal / libm::sqrt(d as f64) + 0.5 * offsets[cell_source[c]][g] + gene_noise.sample(&mut rng));
        }
    }
    let gene_ids = ids("GENE", spec.n_genes);
    let expression = ExpressionMatrix::new(
        gene_ids.clone(),
        cell_ids.clone(),
        values,
        cell_ids.iter().enumerate().map(|(c, _)| source_names[cell_source[c]].clone()).collect(),
    )?;

    // SNP counts: gamma-Poisson draws, the first study at 100x the base rate.
    let snp_loading = normal_vec(&mut rng, d * spec.n_snps);
    let shape = 2.0;
    let gamma = Gamma::<f64>::new(shape, 1.0 / shape).map_err(|e| invalid!("{e}"))?;
    let mut counts = Vec::with_capacity(spec.n_cells * spec.n_snps);
    for c in 0..spec.n_cells {
        let boost = if cell_source[c] == 0 { 100.0 } else { 1.0 };
        for l in 0..spec.n_snps {
            let lin: f64 = (0..d).map(|k| cell_latents[c][k] * snp_loading[k * spec.n_snps + l]).sum();
            let rate = 0.02 * boost * libm::exp((0.5 * lin / libm::sqrt(d as f64)).clamp(-3.0, 3.0));
            let lambda = rate * gamma.sample(&mut rng);
            let n = if lambda > 0.0 {
                Poisson::new(lambda).map_err(|e| invalid!("{e}"))?.sample(&mut rng) as u32
            } else {
                0
            };
            counts.push(n);
        }
    }
    let snps = SnpCountMatrix::new(cell_ids.clone(), ids("SNP", spec.n_snps), counts)?;

    // Descriptors: two providers, each with two constant columns and a few gaps.
    let n_a = spec.n_descriptors / 2;
    let n_b = spec.n_descriptors - n_a;
    let make_provider = |rng: &mut ChaCha8Rng, width: usize, prefix: &str, provider| -> Result<DrugDescriptorMatrix> {
        let loading = normal_vec(rng, d * width);
        let mut vals = Vec::with_capacity(spec.n_drugs * width);
        for latent in drug_latents.iter().take(spec.n_drugs) {
            for j in 0..width {
                let v = if j < 2.min(width.saturating_sub(1)) {
                    j as f64 + 1.0
                } else if rng.random::<f64>() < 0.01 {
                    f64::NAN
                } else {
                    let lin: f64 = (0..d).map(|k| latent[k] * loading[k * width + j]).sum();
                    lin / libm::sqrt(d as f64) + 0.3 * rng.sample::<f64, _>(StandardNormal)
                };
                vals.push(v);
            }
        }
        DrugDescriptorMatrix::new(drug_ids.clone(), ids(prefix, width), vals, provider)
    };
    let descriptors_a = make_provider(&mut rng, n_a, "DA", DescriptorProvider::DescriptorA)?;
    let descriptors_b = make_provider(&mut rng, n_b, "DB", DescriptorProvider::DescriptorB)?;

    // Gene sets: a landmark-like block and an overlapping onco-like block.
    let lincs_end = (spec.n_genes * 3 / 5).max(1);
    let onco_start = spec.n_genes / 2;
    let onco_end = (onco_start + spec.n_genes / 5).clamp(onco_start + 1, spec.n_genes);
    let lincs = GeneSet::new(GeneSetName::Lincs1000, gene_ids[..lincs_end].iter().cloned());
    let onco = GeneSet::new(GeneSetName::Oncogenes, gene_ids[onco_start..onco_end].iter().cloned());
    let gene_sets =
        vec![lincs.clone(), onco.clone(), GeneSet::combined(&lincs, &onco), GeneSet::full(&expression)];

    let mut cell_groups = BTreeMap::new();
    if spec.n_groups > 0 {
        // Zipf-like group sizes so the top-K filter is meaningful.
        let weights: Vec<f64> = (0..spec.n_groups).map(|k| 1.0 / (k + 1) as f64).collect();
        let total: f64 = weights.iter().sum();
        for id in &cell_ids {
            let mut u = rng.random::<f64>() * total;
            let mut k = 0;
            while k + 1 < spec.n_groups && u >= weights[k] {
                u -= weights[k];
                k += 1;
            }
            cell_groups.insert(id.clone(), format!("TYPE{:02}", k + 1));
        }
    }

    Ok(SyntheticStudy {
        records,
        expression,
        snps,
        descriptors_a,
        descriptors_b,
        gene_sets,
        ground_truth: GroundTruth {
            cell_latents,
            drug_latents,
            true_auc,
            threshold: t_final,
            kappa,
            oracle_r2,
            responder_fraction: realized,
            cell_groups,
        },
    })
}

/// Fisher-Yates shuffle driven by `rng`.
pub fn shuffle<T, R: Rng>(items: &mut [T], rng: &mut R) {
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}

fn r_squared(pred: &[f64], y: &[f64]) -> f64 {
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let sst: f64 = y.iter().map(|v| sq(v - mean)).sum();
    let sse: f64 = pred.iter().zip(y).map(|(p, v)| sq(p - v)).sum();
    if sst == 0.0 {
        f64::NAN
    } else {
        1.0 - sse / sst
    }
}
