//! Training protocol: shuffled mini-batches, plateau learning-rate schedule,
//! early stopping and the three imbalance strategies.

use alloc::format;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{shuffle, AssembledDataset, DEFAULT_CUTOFF};
use crate::error::{invalid, Error, Result};
use crate::evaluation::SplitPlan;
use crate::nn::{huber_loss, ArchitectureSpec, Mode, Model, Optimizer, OptimizerKind, HUBER_DELTA};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Vanilla,
    BalancedSampling,
    LossWeighting,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Self::Vanilla, Self::BalancedSampling, Self::LossWeighting];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Vanilla => "vanilla",
            Self::BalancedSampling => "balanced",
            Self::LossWeighting => "weighted",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|v| v.as_str() == s).ok_or_else(|| invalid!("unknown strategy {s}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub lr0: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub lr_patience: usize,
    pub lr_factor: f64,
    /// The learning rate is reduced at most this many times.
    pub max_lr_drops: usize,
    pub stop_patience: usize,
    pub strategy: Strategy,
    pub responder_cutoff: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerKind::Adam,
            lr0: 8e-4,
            batch_size: 512,
            max_epochs: 400,
            lr_patience: 20,
            lr_factor: 0.25,
            max_lr_drops: 4,
            stop_patience: 30,
            strategy: Strategy::Vanilla,
            responder_cutoff: DEFAULT_CUTOFF,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stop_patience <= self.lr_patience {
            return Err(invalid!(
                "stop_patience ({}) must exceed lr_patience ({}) or the learning-rate drop is unreachable",
                self.stop_patience,
                self.lr_patience
            ));
        }
        if !(self.lr_factor > 0.0 && self.lr_factor < 1.0) {
            return Err(invalid!("lr_factor {} outside (0, 1)", self.lr_factor));
        }
        if !(self.lr0 >= 0.0 && self.lr0.is_finite()) {
            return Err(invalid!("lr0 must be finite and >= 0"));
        }
        if self.batch_size < 2 || self.max_epochs == 0 {
            return Err(invalid!("batch_size must be >= 2 and max_epochs >= 1"));
        }
        if !(self.responder_cutoff > 0.0 && self.responder_cutoff < 1.0) {
            return Err(invalid!("responder_cutoff outside (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    EarlyStop,
    MaxEpochs,
    Diverged,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::EarlyStop => "early_stop",
            Self::MaxEpochs => "max_epochs",
            Self::Diverged => "diverged",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Learning rate used during the epoch.
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    pub termination: Termination,
    /// Epoch whose parameters were returned; 0 if no epoch finished with a finite loss.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    /// Epochs at whose end the learning rate was reduced.
    pub lr_drops: Vec<usize>,
}

/// Huber loss with each sample weighted by `1 - y`, averaged over the batch.
pub fn weighted_loss(pred: &[f64], y: &[f64], delta: f64) -> (f64, Vec<f64>) {
    let (_, grad) = huber_loss(pred, y, delta);
    let n = pred.len().max(1) as f64;
    let mut loss = 0.0;
    let grad = grad
        .iter()
        .zip(pred.iter().zip(y))
        .map(|(g, (p, t))| {
            let r = (p - t).abs();
            let term = if r <= delta { 0.5 * r * r } else { delta * (r - 0.5 * delta) };
            loss += (1.0 - t) * term;
            (1.0 - t) * g
        })
        .collect();
    (loss / n, grad)
}

/// One epoch of balanced batches over `rows`: each batch holds
/// `batch_size / 2` responders (y <= cutoff) and the rest non-responders. Both
/// classes are drawn by cycling through fresh shuffles, so the minority class
/// repeats and every row of the larger class appears once per epoch.
pub fn balanced_batches<R: Rng>(
    data: &AssembledDataset,
    rows: &[usize],
    cutoff: f64,
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<Vec<usize>>> {
    if batch_size < 2 {
        return Err(invalid!("balanced batches need batch_size >= 2"));
    }
    let (pos, neg): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&r| data.rows[r].y <= cutoff);
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::InsufficientData(format!(
            "balanced sampling needs both classes ({} responders, {} non-responders)",
            pos.len(),
            neg.len()
        )));
    }
    let n_pos = batch_size / 2;
    let n_neg = batch_size - n_pos;
    let n_batches = pos.len().div_ceil(n_pos).max(neg.len().div_ceil(n_neg));
    let mut pos_stream = Cycler::new(pos);
    let mut neg_stream = Cycler::new(neg);
    let mut batches = Vec::with_capacity(n_batches);
    for _ in 0..n_batches {
        let mut b = Vec::with_capacity(batch_size);
        for _ in 0..n_pos {
            b.push(pos_stream.next(rng));
        }
        for _ in 0..n_neg {
            b.push(neg_stream.next(rng));
        }
        batches.push(b);
    }
    Ok(batches)
}

struct Cycler {
    items: Vec<usize>,
    at: usize,
}

impl Cycler {
    fn new(items: Vec<usize>) -> Self {
        let at = items.len();
        Self { items, at }
    }

    fn next<R: Rng>(&mut self, rng: &mut R) -> usize {
        if self.at == self.items.len() {
            shuffle(&mut self.items, rng);
            self.at = 0;
        }
        self.at += 1;
        self.items[self.at - 1]
    }
}

/// Gathers the feature blocks of `rows` into contiguous row-major buffers.
pub fn gather(data: &AssembledDataset, rows: &[usize]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut cell = Vec::with_capacity(rows.len() * data.cell_block_width);
    let mut drug = Vec::with_capacity(rows.len() * data.drug_block_width);
    let mut y = Vec::with_capacity(rows.len());
    for &r in rows {
        cell.extend_from_slice(data.cell_features(r));
        drug.extend_from_slice(data.drug_features(r));
        y.push(data.rows[r].y);
    }
    (cell, drug, y)
}

/// Eval-mode predictions for `rows`, in chunks.
pub fn predict_rows(model: &Model, data: &AssembledDataset, rows: &[usize]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(rows.len());
    for chunk in rows.chunks(1024) {
        let (cell, drug, _) = gather(data, chunk);
        out.extend(model.predict(&cell, &drug, chunk.len())?);
    }
    Ok(out)
}

fn validation_loss(model: &Model, data: &AssembledDataset, rows: &[usize]) -> Result<f64> {
    let pred = predict_rows(model, data, rows)?;
    let y: Vec<f64> = rows.iter().map(|&r| data.rows[r].y).collect();
    Ok(huber_loss(&pred, &y, HUBER_DELTA).0)
}

/// Trains on fold `fold` of `plan`: every other fold is training data.
pub fn train(
    arch: &ArchitectureSpec,
    data: &AssembledDataset,
    plan: &SplitPlan,
    fold: usize,
    config: &TrainConfig,
) -> Result<(Model, TrainLog)> {
    if plan.fold.len() != data.len() {
        return Err(invalid!("split plan covers {} rows, dataset has {}", plan.fold.len(), data.len()));
    }
    train_rows(arch, data, &plan.training_rows(fold), &plan.validation_rows(fold), config, &mut |_| {})
}

/// Trains on explicit row sets. `progress` is called after every epoch.
pub fn train_rows(
    arch: &ArchitectureSpec,
    data: &AssembledDataset,
    train: &[usize],
    validation: &[usize],
    config: &TrainConfig,
    progress: &mut dyn FnMut(&EpochLog),
) -> Result<(Model, TrainLog)> {
    config.validate()?;
    if train.is_empty() || validation.is_empty() {
        return Err(Error::InsufficientData("empty training or validation set".into()));
    }
    if arch.cell_width != data.cell_block_width || arch.drug_width != data.drug_block_width {
        return Err(Error::Shape(format!(
            "architecture expects {}+{} inputs, dataset has {}+{}",
            arch.cell_width, arch.drug_width, data.cell_block_width, data.drug_block_width
        )));
    }
    let mut model = Model::new(arch, config.seed)?;
    // Start the sigmoid output at the mean training target.
    let mean_y = train.iter().map(|&r| data.rows[r].y).sum::<f64>() / train.len() as f64;
    let p = mean_y.clamp(1e-3, 1.0 - 1e-3);
    model.set_output_bias(libm::log(p / (1.0 - p)));
    let mut optimizer = Optimizer::new(config.optimizer, &model);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5DEE_CE66_D1CE_5EED);
    let mut order: Vec<usize> = train.to_vec();

    let mut lr = config.lr0;
    let mut best = model.clone();
    let mut best_loss = f64::INFINITY;
    let mut best_epoch = 0;
    let mut since_best = 0;
    let mut plateau = 0;
    let mut epochs = Vec::new();
    let mut lr_drops = Vec::new();
    let mut termination = Termination::MaxEpochs;

    'epochs: for epoch in 1..=config.max_epochs {
        let batches: Vec<Vec<usize>> = if config.strategy == Strategy::BalancedSampling {
            balanced_batches(data, train, config.responder_cutoff, config.batch_size, &mut rng)?
        } else {
            shuffle(&mut order, &mut rng);
            order.chunks(config.batch_size).map(<[usize]>::to_vec).collect()
        };
        let mut total = 0.0;
        for batch in &batches {
            let (cell, drug, y) = gather(data, batch);
            let (pred, cache) = model.forward(&cell, &drug, batch.len(), Mode::Train(&mut rng))?;
            let (loss, grad) = match config.strategy {
                Strategy::LossWeighting => weighted_loss(&pred, &y, HUBER_DELTA),
                _ => huber_loss(&pred, &y, HUBER_DELTA),
            };
            if !loss.is_finite() {
                termination = Termination::Diverged;
                break 'epochs;
            }
            total += loss;
            let grads = model.backward(&cache, &grad)?;
            match optimizer.step(&mut model, &grads, lr) {
                Ok(()) => {}
                Err(Error::NonFinite(_)) => {
                    termination = Termination::Diverged;
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
        }
        let train_loss = total / batches.len() as f64;
        let val_loss = validation_loss(&model, data, validation)?;
        let entry = EpochLog { epoch, train_loss, val_loss, lr };
        epochs.push(entry);
        progress(&entry);
        if !val_loss.is_finite() || !train_loss.is_finite() {
            termination = Termination::Diverged;
            break;
        }
        if val_loss < best_loss {
            best_loss = val_loss;
            best_epoch = epoch;
            best = model.clone();
            since_best = 0;
            plateau = 0;
        } else {
            since_best += 1;
            plateau += 1;
        }
        if since_best >= config.stop_patience {
            termination = Termination::EarlyStop;
            break;
        }
        if plateau >= config.lr_patience && lr_drops.len() < config.max_lr_drops {
            lr *= config.lr_factor;
            lr_drops.push(epoch);
            plateau = 0;
        }
    }
    Ok((best, TrainLog { epochs, termination, best_epoch, best_val_loss: best_loss, lr_drops }))
}
