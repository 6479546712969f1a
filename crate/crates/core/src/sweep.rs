//! Configuration grids, per-point runs and the convergence filter.
//!
//! Scheduling and persistence live with the caller; everything here is a pure
//! function of its inputs so a point gives the same record on any worker.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{assemble, AssembledDataset, DescriptorProvider, DrugDescriptorMatrix, ResponseRecord, SnpCountMatrix, DEFAULT_CUTOFF};
use crate::error::{invalid, Error, Result};
use crate::evaluation::{make_folds, per_source_breakdown, MetricSet, SplitMode, SplitPlan, ALL_SOURCES};
use crate::expression::{ExpressionMatrix, GeneSet, GeneSetName, ScalingMethod};
use crate::nn::{ArchitectureSpec, Model, OptimizerKind, Variant};
use crate::numeric::percentile;
use crate::trainer::{predict_rows, train_rows, Strategy, Termination, TrainConfig, TrainLog};

pub const SCHEMA_VERSION: u32 = 1;
/// Records whose best validation loss exceeds this percentile are removed.
pub const LOSS_PERCENTILE: f64 = 85.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupFilter {
    Top6,
    Top21,
    Off,
}

impl GroupFilter {
    pub const ALL: [GroupFilter; 3] = [Self::Top6, Self::Top21, Self::Off];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Top6 => "top6",
            Self::Top21 => "top21",
            Self::Off => "off",
        }
    }

    pub fn k(self) -> Option<usize> {
        match self {
            Self::Top6 => Some(6),
            Self::Top21 => Some(21),
            Self::Off => None,
        }
    }
}

impl FromStr for GroupFilter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|v| v.as_str() == s).ok_or_else(|| invalid!("unknown group filter {s}"))
    }
}

/// Training settings shared by every point of a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepSettings {
    pub adam_lr: f64,
    pub sgd_lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub lr_patience: usize,
    pub stop_patience: usize,
    pub lr_factor: f64,
    pub max_lr_drops: usize,
    pub cutoff: f64,
    /// Network widths are the defaults divided by this.
    pub width_divisor: usize,
    pub folds: usize,
    pub split_seed: u64,
}

impl Default for SweepSettings {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            adam_lr: t.lr0,
            sgd_lr: 0.5,
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            lr_patience: t.lr_patience,
            stop_patience: t.stop_patience,
            lr_factor: t.lr_factor,
            max_lr_drops: t.max_lr_drops,
            cutoff: DEFAULT_CUTOFF,
            width_divisor: 1,
            folds: 3,
            split_seed: 0,
        }
    }
}

impl SweepSettings {
    /// Reduced widths and schedule that keep a 72-run grid within minutes on one core.
    pub fn desk() -> Self {
        Self {
            adam_lr: 3e-3,
            sgd_lr: 1.5,
            batch_size: 256,
            max_epochs: 60,
            lr_patience: 8,
            stop_patience: 12,
            width_divisor: 16,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub gene_set: Vec<GeneSetName>,
    pub scaling: Vec<ScalingMethod>,
    pub snps: Vec<bool>,
    pub descriptor_provider: Vec<DescriptorProvider>,
    pub architecture: Vec<Variant>,
    pub strategy: Vec<Strategy>,
    pub optimizer: Vec<OptimizerKind>,
    pub dropout_rate: Vec<f64>,
    pub split: Vec<SplitMode>,
    pub fold: Vec<usize>,
    pub group_filter: Vec<GroupFilter>,
    #[serde(default)]
    pub settings: SweepSettings,
}

/// One fully specified run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigPoint {
    pub gene_set: GeneSetName,
    pub scaling: ScalingMethod,
    pub snps: bool,
    pub descriptor_provider: DescriptorProvider,
    pub architecture: Variant,
    pub strategy: Strategy,
    pub optimizer: OptimizerKind,
    pub dropout_rate: f64,
    pub split: SplitMode,
    pub fold: usize,
    pub group_filter: GroupFilter,
    pub settings: SweepSettings,
}

impl SweepGrid {
    /// 3 architectures x 2 optimizers x 3 strategies x SNPs on/off, over cell
    /// and drug splits (fold 0).
    pub fn desk() -> Self {
        Self {
            gene_set: alloc::vec![GeneSetName::Full],
            scaling: alloc::vec![ScalingMethod::WholeFrame],
            snps: alloc::vec![false, true],
            descriptor_provider: alloc::vec![DescriptorProvider::Both],
            architecture: Variant::ALL.to_vec(),
            strategy: Strategy::ALL.to_vec(),
            optimizer: OptimizerKind::ALL.to_vec(),
            dropout_rate: alloc::vec![0.1],
            split: alloc::vec![SplitMode::ByCell, SplitMode::ByDrug],
            fold: alloc::vec![0],
            group_filter: alloc::vec![GroupFilter::Off],
            settings: SweepSettings::desk(),
        }
    }

    fn axis_lengths(&self) -> [(&'static str, usize); 11] {
        [
            ("gene_set", self.gene_set.len()),
            ("scaling", self.scaling.len()),
            ("snps", self.snps.len()),
            ("descriptor_provider", self.descriptor_provider.len()),
            ("architecture", self.architecture.len()),
            ("strategy", self.strategy.len()),
            ("optimizer", self.optimizer.len()),
            ("dropout_rate", self.dropout_rate.len()),
            ("split", self.split.len()),
            ("fold", self.fold.len()),
            ("group_filter", self.group_filter.len()),
        ]
    }

    pub fn len(&self) -> usize {
        self.axis_lengths().iter().map(|a| a.1).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        if let Some((name, _)) = self.axis_lengths().iter().find(|a| a.1 == 0) {
            return Err(invalid!("grid axis {name} is empty"));
        }
        if let Some(f) = self.fold.iter().find(|&&f| f >= self.settings.folds) {
            return Err(invalid!("fold {f} out of range for {} folds", self.settings.folds));
        }
        if let Some(p) = self.dropout_rate.iter().find(|p| !(0.0..1.0).contains(*p)) {
            return Err(invalid!("dropout rate {p} outside [0, 1)"));
        }
        Ok(())
    }

    /// Every point in lexicographic axis order, last axis varying fastest.
    pub fn enumerate(&self) -> Result<Vec<ConfigPoint>> {
        self.validate()?;
        let lens: Vec<usize> = self.axis_lengths().iter().map(|a| a.1).collect();
        let mut idx = alloc::vec![0usize; lens.len()];
        let mut out = Vec::with_capacity(self.len());
        loop {
            out.push(ConfigPoint {
                gene_set: self.gene_set[idx[0]],
                scaling: self.scaling[idx[1]],
                snps: self.snps[idx[2]],
                descriptor_provider: self.descriptor_provider[idx[3]],
                architecture: self.architecture[idx[4]],
                strategy: self.strategy[idx[5]],
                optimizer: self.optimizer[idx[6]],
                dropout_rate: self.dropout_rate[idx[7]],
                split: self.split[idx[8]],
                fold: self.fold[idx[9]],
                group_filter: self.group_filter[idx[10]],
                settings: self.settings.clone(),
            });
            let mut axis = lens.len();
            loop {
                if axis == 0 {
                    return Ok(out);
                }
                axis -= 1;
                idx[axis] += 1;
                if idx[axis] < lens[axis] {
                    break;
                }
                idx[axis] = 0;
            }
        }
    }
}

impl ConfigPoint {
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config points always serialize")
    }

    /// First 8 bytes (big-endian) of the SHA-256 of the canonical JSON.
    pub fn hash(&self) -> u64 {
        let digest = Sha256::digest(self.canonical_json().as_bytes());
        u64::from_be_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
    }

    pub fn hash_hex(&self) -> String {
        format!("{:016x}", self.hash())
    }

    /// Short label of the varying choices, for logs.
    pub fn label(&self) -> String {
        format!(
            "{}/{}/{}/snps={}/{}/{}/{}/{}/p={}/{}#{}/{}",
            self.gene_set.as_str(),
            self.scaling.as_str(),
            self.descriptor_provider.as_str(),
            self.snps,
            self.architecture.as_str(),
            self.strategy.as_str(),
            self.optimizer.as_str(),
            self.group_filter.as_str(),
            self.dropout_rate,
            self.split.as_str(),
            self.fold,
            self.hash_hex()
        )
    }

    pub fn train_config(&self) -> TrainConfig {
        let s = &self.settings;
        TrainConfig {
            optimizer: self.optimizer,
            lr0: match self.optimizer {
                OptimizerKind::Adam => s.adam_lr,
                OptimizerKind::Sgd => s.sgd_lr,
            },
            batch_size: s.batch_size,
            max_epochs: s.max_epochs,
            lr_patience: s.lr_patience,
            lr_factor: s.lr_factor,
            max_lr_drops: s.max_lr_drops,
            stop_patience: s.stop_patience,
            strategy: self.strategy,
            responder_cutoff: s.cutoff,
            seed: self.hash(),
        }
    }

    /// Value of a named factor as a string, used for grouping and tree encoding.
    pub fn factor(&self, name: &str) -> Option<String> {
        Some(match name {
            "gene_set" => self.gene_set.as_str().to_string(),
            "scaling" => self.scaling.as_str().to_string(),
            "snps" => self.snps.to_string(),
            "descriptor_provider" => self.descriptor_provider.as_str().to_string(),
            "architecture" => self.architecture.as_str().to_string(),
            "strategy" => self.strategy.as_str().to_string(),
            "optimizer" => self.optimizer.as_str().to_string(),
            "dropout_rate" => format!("{}", self.dropout_rate),
            "split" => self.split.as_str().to_string(),
            "fold" => self.fold.to_string(),
            "group_filter" => self.group_filter.as_str().to_string(),
            _ => return None,
        })
    }
}

pub const FACTORS: [&str; 11] = [
    "gene_set",
    "scaling",
    "snps",
    "descriptor_provider",
    "architecture",
    "strategy",
    "optimizer",
    "dropout_rate",
    "split",
    "fold",
    "group_filter",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Done,
    Diverged,
    Failed,
}

impl RunStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Done => "done",
            Self::Diverged => "diverged",
            Self::Failed => "failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema: u32,
    pub hash: String,
    pub seed: u64,
    pub point: ConfigPoint,
    pub status: RunStatus,
    /// Validation metrics of the fold; present when the run is done.
    pub metrics: Option<MetricSet>,
    #[serde(default)]
    pub per_source: BTreeMap<String, MetricSet>,
    pub final_train_loss: Option<f64>,
    /// Validation loss of the returned (best-epoch) model.
    pub best_val_loss: Option<f64>,
    pub best_epoch: usize,
    pub epochs: usize,
    pub wall_time_s: f64,
    #[serde(default)]
    pub error: Option<String>,
}

impl RunRecord {
    pub fn failed(point: &ConfigPoint, error: &Error) -> Self {
        Self {
            schema: SCHEMA_VERSION,
            hash: point.hash_hex(),
            seed: point.hash(),
            point: point.clone(),
            status: RunStatus::Failed,
            metrics: None,
            per_source: BTreeMap::new(),
            final_train_loss: None,
            best_val_loss: None,
            best_epoch: 0,
            epochs: 0,
            wall_time_s: 0.0,
            error: Some(error.to_string()),
        }
    }

    /// Checks the record's own invariants: done implies finite metrics.
    pub fn validate(&self) -> Result<()> {
        if self.status == RunStatus::Done {
            match (&self.metrics, self.best_val_loss) {
                (Some(m), Some(l)) if m.is_finite() && l.is_finite() => {}
                _ => return Err(Error::NonFinite(format!("done record {} lacks finite metrics", self.hash))),
            }
        }
        Ok(())
    }

    pub fn metric(&self, name: &str) -> Option<f64> {
        let m = self.metrics.as_ref()?;
        match name {
            "rmse" => Some(m.rmse),
            "r2" => Some(m.r2),
            "balanced_accuracy" => Some(m.balanced_accuracy),
            "mcc" => Some(m.mcc),
            "tpr" => Some(m.tpr),
            "fpr" => Some(m.fpr),
            _ => None,
        }
    }
}

/// Everything a sweep point may draw features from.
#[derive(Debug, Clone, Copy)]
pub struct SweepInputs<'a> {
    pub records: &'a [ResponseRecord],
    pub expression: &'a ExpressionMatrix,
    pub snps: Option<&'a SnpCountMatrix>,
    pub descriptors_a: &'a DrugDescriptorMatrix,
    pub descriptors_b: &'a DrugDescriptorMatrix,
    pub gene_sets: &'a BTreeMap<GeneSetName, GeneSet>,
    pub cell_groups: &'a BTreeMap<String, String>,
}

/// Assembles the point's dataset variant, trains on the other folds and
/// scores the held-out fold. Training failures become `failed` records;
/// wall time is left at zero for the caller to fill in.
pub fn run_point(point: &ConfigPoint, inputs: &SweepInputs<'_>) -> RunRecord {
    match train_point(point, inputs) {
        Ok(r) => r.record,
        Err(e) => RunRecord::failed(point, &e),
    }
}

/// A trained point with the artifacts `run_point` discards.
#[derive(Debug, Clone)]
pub struct PointRun {
    pub record: RunRecord,
    pub model: Model,
    pub log: TrainLog,
    pub data: AssembledDataset,
    pub plan: SplitPlan,
}

/// Like `run_point` but keeps the model, log and split; errors are returned
/// instead of folded into a failed record.
pub fn train_point(point: &ConfigPoint, inputs: &SweepInputs<'_>) -> Result<PointRun> {
    let s = &point.settings;
    let descriptors = match point.descriptor_provider {
        DescriptorProvider::DescriptorA => inputs.descriptors_a.clone(),
        DescriptorProvider::DescriptorB => inputs.descriptors_b.clone(),
        DescriptorProvider::Both => DrugDescriptorMatrix::both(inputs.descriptors_a, inputs.descriptors_b)?,
    };
    let gene_set = inputs
        .gene_sets
        .get(&point.gene_set)
        .cloned()
        .or_else(|| (point.gene_set == GeneSetName::Full).then(|| GeneSet::full(inputs.expression)))
        .ok_or_else(|| invalid!("gene set {} not available", point.gene_set.as_str()))?;
    let snps = if point.snps {
        Some(inputs.snps.ok_or_else(|| invalid!("SNP features requested but none supplied"))?)
    } else {
        None
    };
    let mut data = assemble(inputs.records, inputs.expression, snps, &descriptors, &gene_set, point.scaling)?;
    data.cutoff = s.cutoff;
    if let Some(k) = point.group_filter.k() {
        data = data.filter_top_groups(inputs.cell_groups, k)?;
    }
    let plan = make_folds(&data, point.split, s.folds, s.split_seed)?;
    let arch = ArchitectureSpec {
        dropout_rate: point.dropout_rate,
        ..ArchitectureSpec::with_defaults(point.architecture, data.cell_block_width, data.drug_block_width, s.width_divisor)
    };
    let config = point.train_config();
    let train = plan.training_rows(point.fold);
    let val = plan.validation_rows(point.fold);
    let (model, log) = train_rows(&arch, &data, &train, &val, &config, &mut |_| {})?;

    let mut record = RunRecord {
        schema: SCHEMA_VERSION,
        hash: point.hash_hex(),
        seed: config.seed,
        point: point.clone(),
        status: RunStatus::Done,
        metrics: None,
        per_source: BTreeMap::new(),
        final_train_loss: log.epochs.last().map(|e| e.train_loss).filter(|v| v.is_finite()),
        best_val_loss: log.best_val_loss.is_finite().then_some(log.best_val_loss),
        best_epoch: log.best_epoch,
        epochs: log.epochs.len(),
        wall_time_s: 0.0,
        error: None,
    };
    if log.termination == Termination::Diverged || log.best_epoch == 0 {
        record.status = RunStatus::Diverged;
        record.error = Some(format!("diverged after {} epochs", log.epochs.len()));
        return Ok(PointRun { record, model, log, data, plan });
    }
    let pred = predict_rows(&model, &data, &val)?;
    let y: Vec<f64> = val.iter().map(|&r| data.rows[r].y).collect();
    let sources: Vec<&str> = val.iter().map(|&r| data.sources[data.rows[r].source].as_str()).collect();
    let mut breakdown = per_source_breakdown(&pred, &y, &sources, s.cutoff)?;
    let overall = breakdown.remove(ALL_SOURCES).expect("breakdown always has the overall row");
    if !overall.is_finite() {
        record.status = RunStatus::Diverged;
        record.error = Some("non-finite validation metrics".to_string());
        return Ok(PointRun { record, model, log, data, plan });
    }
    record.metrics = Some(overall);
    record.per_source = breakdown;
    Ok(PointRun { record, model, log, data, plan })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RemovalReason {
    NotDone,
    TprSaturated,
    FprSaturated,
    NonpositiveR2,
    LossOutlier,
}

impl RemovalReason {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::NotDone => "not_done",
            Self::TprSaturated => "tpr_saturated",
            Self::FprSaturated => "fpr_saturated",
            Self::NonpositiveR2 => "nonpositive_r2",
            Self::LossOutlier => "loss_outlier",
        }
    }
}

impl fmt::Display for RemovalReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Removed {
    pub record: RunRecord,
    /// Every rule the record broke, in rule order.
    pub reasons: Vec<RemovalReason>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome {
    pub kept: Vec<RunRecord>,
    pub removed: Vec<Removed>,
    /// Loss threshold used by the quantile rule; `None` without done records.
    pub loss_threshold: Option<f64>,
}

impl FilterOutcome {
    pub fn kept_fraction(&self) -> f64 {
        let n = self.kept.len() + self.removed.len();
        if n == 0 {
            0.0
        } else {
            self.kept.len() as f64 / n as f64
        }
    }
}

/// Drops saturated classifiers, non-positive r² and best validation losses
/// strictly above the 85th percentile of done records.
pub fn convergence_filter(records: &[RunRecord]) -> FilterOutcome {
    let losses: Vec<f64> = records
        .iter()
        .filter(|r| r.status == RunStatus::Done)
        .filter_map(|r| r.best_val_loss)
        .filter(|l| l.is_finite())
        .collect();
    let threshold = percentile(&losses, LOSS_PERCENTILE).ok();
    let mut kept = Vec::new();
    let mut removed = Vec::new();
    for r in records {
        let mut reasons = Vec::new();
        match (&r.metrics, r.status) {
            (Some(m), RunStatus::Done) => {
                if m.tpr == 1.0 {
                    reasons.push(RemovalReason::TprSaturated);
                }
                if m.fpr == 1.0 {
                    reasons.push(RemovalReason::FprSaturated);
                }
                if m.r2 <= 0.0 {
                    reasons.push(RemovalReason::NonpositiveR2);
                }
                match (r.best_val_loss, threshold) {
                    (Some(l), Some(t)) if l <= t => {}
                    _ => reasons.push(RemovalReason::LossOutlier),
                }
            }
            _ => reasons.push(RemovalReason::NotDone),
        }
        if reasons.is_empty() {
            kept.push(r.clone());
        } else {
            removed.push(Removed { record: r.clone(), reasons });
        }
    }
    FilterOutcome { kept, removed, loss_threshold: threshold }
}
