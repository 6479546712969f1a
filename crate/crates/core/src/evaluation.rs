//! Entity-strict fold splits and regression / thresholded-classification metrics.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{shuffle, AssembledDataset};
use crate::error::{invalid, Error, Result};
use crate::numeric::sq;

pub const DEFAULT_FOLDS: usize = 3;
/// Sources with fewer rows than this are flagged in breakdowns.
pub const LOW_N: usize = 10;
pub const ALL_SOURCES: &str = "All";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    ByCell,
    ByDrug,
    Lenient,
}

impl SplitMode {
    pub const ALL: [SplitMode; 3] = [Self::ByCell, Self::ByDrug, Self::Lenient];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::ByCell => "cell",
            Self::ByDrug => "drug",
            Self::Lenient => "lenient",
        }
    }
}

impl fmt::Display for SplitMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SplitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|m| m.as_str() == s).ok_or_else(|| invalid!("unknown split mode {s}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub mode: SplitMode,
    pub k: usize,
    pub seed: u64,
    /// Fold of each dataset row.
    pub fold: Vec<usize>,
}

impl SplitPlan {
    pub fn validation_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.fold.len()).filter(|&r| self.fold[r] == fold).collect()
    }

    pub fn training_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.fold.len()).filter(|&r| self.fold[r] != fold).collect()
    }

    /// Entity each row is split on (cell or drug index; the row itself in
    /// lenient mode).
    pub fn entity_of(&self, data: &AssembledDataset, row: usize) -> usize {
        match self.mode {
            SplitMode::ByCell => data.rows[row].cell,
            SplitMode::ByDrug => data.rows[row].drug,
            SplitMode::Lenient => row,
        }
    }
}

/// Shuffles the split entities by `seed` and deals them round-robin into `k`
/// folds; every row inherits its entity's fold.
pub fn make_folds(data: &AssembledDataset, mode: SplitMode, k: usize, seed: u64) -> Result<SplitPlan> {
    if k < 2 {
        return Err(invalid!("need at least 2 folds, got {k}"));
    }
    let entity = |r: usize| match mode {
        SplitMode::ByCell => data.rows[r].cell,
        SplitMode::ByDrug => data.rows[r].drug,
        SplitMode::Lenient => r,
    };
    let entities: BTreeSet<usize> = (0..data.rows.len()).map(entity).collect();
    if entities.len() < k {
        return Err(Error::InsufficientData(alloc::format!(
            "{} distinct {} entities for {k} folds",
            entities.len(),
            mode.as_str()
        )));
    }
    let mut order: Vec<usize> = entities.into_iter().collect();
    shuffle(&mut order, &mut ChaCha8Rng::seed_from_u64(seed));
    let mut assigned: BTreeMap<usize, usize> = BTreeMap::new();
    for (i, e) in order.into_iter().enumerate() {
        assigned.insert(e, i % k);
    }
    let fold = (0..data.rows.len()).map(|r| assigned[&entity(r)]).collect();
    Ok(SplitPlan { mode, k, seed, fold })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionMetrics {
    pub rmse: f64,
    /// 0 when the target has no variance; see `r2_defined`.
    pub r2: f64,
    pub r2_defined: bool,
}

pub fn regression_metrics(pred: &[f64], y: &[f64]) -> Result<RegressionMetrics> {
    if pred.len() != y.len() {
        return Err(Error::Shape(alloc::format!("{} predictions for {} targets", pred.len(), y.len())));
    }
    if y.is_empty() {
        return Err(Error::InsufficientData("no predictions".into()));
    }
    let n = y.len() as f64;
    let sse: f64 = pred.iter().zip(y).map(|(p, t)| sq(p - t)).sum();
    let mean = y.iter().sum::<f64>() / n;
    let sst: f64 = y.iter().map(|t| sq(t - mean)).sum();
    let rmse = libm::sqrt(sse / n);
    if sst > 0.0 && y.len() >= 2 {
        Ok(RegressionMetrics { rmse, r2: 1.0 - sse / sst, r2_defined: true })
    } else {
        Ok(RegressionMetrics { rmse, r2: 0.0, r2_defined: false })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl Confusion {
    /// Positive class is a responder: value at or below the cutoff.
    pub fn count(pred: &[f64], y: &[f64], cutoff: f64) -> Self {
        let mut c = Self::default();
        for (&p, &t) in pred.iter().zip(y) {
            match (p <= cutoff, t <= cutoff) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub balanced_accuracy: f64,
    pub mcc: f64,
    pub tpr: f64,
    pub fpr: f64,
    pub confusion: Confusion,
    /// Only one class present in the truth, so MCC and one of the rates are 0 by convention.
    pub degenerate: bool,
}

pub fn classification_metrics(pred: &[f64], y: &[f64], cutoff: f64) -> Result<ClassificationMetrics> {
    if pred.len() != y.len() {
        return Err(Error::Shape(alloc::format!("{} predictions for {} targets", pred.len(), y.len())));
    }
    let c = Confusion::count(pred, y, cutoff);
    let (tp, fp, tn, fn_) = (c.tp as f64, c.fp as f64, c.tn as f64, c.fn_ as f64);
    let ratio = |a: f64, b: f64| if a + b > 0.0 { a / (a + b) } else { 0.0 };
    let tpr = ratio(tp, fn_);
    let fpr = ratio(fp, tn);
    let tnr = ratio(tn, fp);
    let denom = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
    let mcc = if denom > 0.0 { (tp * tn - fp * fn_) / libm::sqrt(denom) } else { 0.0 };
    Ok(ClassificationMetrics {
        balanced_accuracy: 0.5 * (tpr + tnr),
        mcc,
        tpr,
        fpr,
        confusion: c,
        degenerate: tp + fn_ == 0.0 || tn + fp == 0.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub rmse: f64,
    pub r2: f64,
    pub balanced_accuracy: f64,
    pub mcc: f64,
    pub tpr: f64,
    pub fpr: f64,
    pub n: usize,
    #[serde(default)]
    pub r2_undefined: bool,
    #[serde(default)]
    pub single_class: bool,
    #[serde(default)]
    pub low_n: bool,
}

impl MetricSet {
    pub fn is_finite(&self) -> bool {
        [self.rmse, self.r2, self.balanced_accuracy, self.mcc, self.tpr, self.fpr].iter().all(|v| v.is_finite())
    }
}

pub fn metric_set(pred: &[f64], y: &[f64], cutoff: f64) -> Result<MetricSet> {
    let r = regression_metrics(pred, y)?;
    let c = classification_metrics(pred, y, cutoff)?;
    Ok(MetricSet {
        rmse: r.rmse,
        r2: r.r2,
        balanced_accuracy: c.balanced_accuracy,
        mcc: c.mcc,
        tpr: c.tpr,
        fpr: c.fpr,
        n: y.len(),
        r2_undefined: !r.r2_defined,
        single_class: c.degenerate,
        low_n: y.len() < LOW_N,
    })
}

/// Metrics per source plus an `All` row over everything.
pub fn per_source_breakdown(
    pred: &[f64],
    y: &[f64],
    sources: &[&str],
    cutoff: f64,
) -> Result<BTreeMap<String, MetricSet>> {
    if pred.len() != y.len() || y.len() != sources.len() {
        return Err(Error::Shape("predictions, targets and sources differ in length".into()));
    }
    let mut groups: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for i in 0..y.len() {
        let g = groups.entry(sources[i]).or_insert_with(|| (Vec::new(), Vec::new()));
        g.0.push(pred[i]);
        g.1.push(y[i]);
    }
    let mut out = BTreeMap::new();
    for (s, (p, t)) in groups {
        out.insert(s.to_string(), metric_set(&p, &t, cutoff)?);
    }
    out.insert(ALL_SOURCES.to_string(), metric_set(pred, y, cutoff)?);
    Ok(out)
}

/// Mean of per-fold metric sets (the alternative to pooling predictions).
pub fn mean_of_folds(folds: &[MetricSet]) -> Option<MetricSet> {
    if folds.is_empty() {
        return None;
    }
    let k = folds.len() as f64;
    let avg = |f: fn(&MetricSet) -> f64| folds.iter().map(f).sum::<f64>() / k;
    Some(MetricSet {
        rmse: avg(|m| m.rmse),
        r2: avg(|m| m.r2),
        balanced_accuracy: avg(|m| m.balanced_accuracy),
        mcc: avg(|m| m.mcc),
        tpr: avg(|m| m.tpr),
        fpr: avg(|m| m.fpr),
        n: folds.iter().map(|m| m.n).sum(),
        r2_undefined: folds.iter().any(|m| m.r2_undefined),
        single_class: folds.iter().any(|m| m.single_class),
        low_n: folds.iter().any(|m| m.low_n),
    })
}

/// Checks that no entity appears in two folds; returns the number of leaking entities.
pub fn leakage(plan: &SplitPlan, data: &AssembledDataset) -> usize {
    let mut folds_of: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for r in 0..plan.fold.len() {
        folds_of.entry(plan.entity_of(data, r)).or_default().insert(plan.fold[r]);
    }
    folds_of.values().filter(|f| f.len() > 1).count()
}
