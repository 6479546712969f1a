//! Dense network kernel with exact reverse-mode gradients for the three
//! architectures: a uniform-dropout MLP, a differential-dropout MLP and a
//! two-tower model joined by a multiplicative channel gate.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::ops::Range;
use core::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub const HUBER_DELTA: f64 = 1.0;
pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

pub const DEFAULT_TOWER: [usize; 2] = [512, 256];
pub const DEFAULT_HEAD: [usize; 1] = [128];
pub const DEFAULT_MLP_TAIL: [usize; 2] = [512, 256];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
    Sigmoid,
    Tanh,
    Softmax,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

impl Activation {
    /// Applies the activation in place to one sample's pre-activations.
    fn apply(self, z: &mut [f64]) {
        match self {
            Self::Relu => z.iter_mut().for_each(|v| *v = v.max(0.0)),
            Self::Identity => {}
            Self::Sigmoid => z.iter_mut().for_each(|v| *v = sigmoid(*v)),
            Self::Tanh => z.iter_mut().for_each(|v| *v = libm::tanh(*v)),
            Self::Softmax => {
                let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut s = 0.0;
                for v in z.iter_mut() {
                    *v = libm::exp(*v - m);
                    s += *v;
                }
                z.iter_mut().for_each(|v| *v /= s);
            }
        }
    }

    /// Turns the gradient w.r.t. the activation output into the gradient w.r.t.
    /// the pre-activation, given the activation output `a` of one sample.
    fn backprop(self, a: &[f64], g: &mut [f64]) {
        match self {
            Self::Relu => {
                for (gi, &ai) in g.iter_mut().zip(a) {
                    if ai <= 0.0 {
                        *gi = 0.0;
                    }
                }
            }
            Self::Identity => {}
            Self::Sigmoid => g.iter_mut().zip(a).for_each(|(gi, &ai)| *gi *= ai * (1.0 - ai)),
            Self::Tanh => g.iter_mut().zip(a).for_each(|(gi, &ai)| *gi *= 1.0 - ai * ai),
            Self::Softmax => {
                let dot: f64 = g.iter().zip(a).map(|(gi, ai)| gi * ai).sum();
                g.iter_mut().zip(a).for_each(|(gi, &ai)| *gi = ai * (*gi - dot));
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub n_in: usize,
    pub n_out: usize,
    /// `weights[o * n_in + i]`
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn new(n_in: usize, n_out: usize, weights: Vec<f64>, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if weights.len() != n_in * n_out || bias.len() != n_out || n_in == 0 || n_out == 0 {
            return Err(Error::Shape(format!(
                "dense layer {n_in}->{n_out} with {} weights and {} biases",
                weights.len(),
                bias.len()
            )));
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("layer parameters".into()));
        }
        Ok(Self { n_in, n_out, weights, bias, activation })
    }

    fn init<R: Rng>(n_in: usize, n_out: usize, activation: Activation, init: Init, rng: &mut R) -> Self {
        let limit = match init {
            Init::He => libm::sqrt(6.0 / n_in as f64),
            Init::Xavier => libm::sqrt(6.0 / (n_in + n_out) as f64),
        };
        let weights = (0..n_in * n_out).map(|_| rng.random_range(-limit..limit)).collect();
        Self { n_in, n_out, weights, bias: vec![0.0; n_out], activation }
    }

    pub fn n_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    /// `x` is `batch x n_in`; returns activations `batch x n_out`.
    fn forward(&self, x: &[f64], batch: usize) -> Vec<f64> {
        let mut out = vec![0.0; batch * self.n_out];
        for b in 0..batch {
            let xb = &x[b * self.n_in..(b + 1) * self.n_in];
            let ob = &mut out[b * self.n_out..(b + 1) * self.n_out];
            for (o, v) in ob.iter_mut().enumerate() {
                *v = dot(&self.weights[o * self.n_in..(o + 1) * self.n_in], xb) + self.bias[o];
            }
            self.activation.apply(ob);
        }
        out
    }
}

#[derive(Clone, Copy)]
enum Init {
    He,
    Xavier,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four independent accumulators let the compiler vectorize.
    let mut acc = [0.0; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += alpha * xi);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    UniformMlp,
    DifferentialDropoutMlp,
    GatedTwoTower,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Self::UniformMlp, Self::DifferentialDropoutMlp, Self::GatedTwoTower];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::UniformMlp => "mlp",
            Self::DifferentialDropoutMlp => "diffdrop",
            Self::GatedTwoTower => "gated",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|v| v.as_str() == s).ok_or_else(|| invalid!("unknown architecture {s}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateActivation {
    Sigmoid,
    Tanh,
    Softmax,
}

impl GateActivation {
    pub const ALL: [GateActivation; 3] = [Self::Sigmoid, Self::Tanh, Self::Softmax];

    fn activation(self) -> Activation {
        match self {
            Self::Sigmoid => Activation::Sigmoid,
            Self::Tanh => Activation::Tanh,
            Self::Softmax => Activation::Softmax,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Sigmoid => "sigmoid",
            Self::Tanh => "tanh",
            Self::Softmax => "softmax",
        }
    }
}

impl FromStr for GateActivation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|v| v.as_str() == s).ok_or_else(|| invalid!("unknown gate activation {s}"))
    }
}

/// Shape of a network. For the MLP variants `hidden` lists the hidden widths
/// and `head` is unused. For the two-tower model `hidden` lists the widths of
/// each tower (the last is the gated width) and `head` the hidden widths of the
/// head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub variant: Variant,
    pub cell_width: usize,
    pub drug_width: usize,
    pub hidden: Vec<usize>,
    pub head: Vec<usize>,
    pub dropout_rate: f64,
    pub gate_activation: GateActivation,
}

impl ArchitectureSpec {
    /// Default widths divided by `divisor` (1 gives the full-size networks).
    /// The uniform MLPs get their first width solved so the parameter count
    /// matches the gated model.
    pub fn with_defaults(variant: Variant, cell_width: usize, drug_width: usize, divisor: usize) -> Self {
        let div = |w: usize| (w / divisor.max(1)).max(1);
        let tower: Vec<usize> = DEFAULT_TOWER.iter().map(|&w| div(w)).collect();
        let head: Vec<usize> = DEFAULT_HEAD.iter().map(|&w| div(w)).collect();
        let gated = Self {
            variant: Variant::GatedTwoTower,
            cell_width,
            drug_width,
            hidden: tower,
            head,
            dropout_rate: 0.1,
            gate_activation: GateActivation::Sigmoid,
        };
        if variant == Variant::GatedTwoTower {
            return gated;
        }
        let tail: Vec<usize> = DEFAULT_MLP_TAIL.iter().map(|&w| div(w)).collect();
        let input = cell_width + drug_width;
        // params = input*w1 + w1 + w1*t0 + rest
        let mut rest = 0;
        let mut prev = tail[0];
        for &w in &tail[1..] {
            rest += prev * w + w;
            prev = w;
        }
        rest += tail[0] + prev + 1;
        let target = gated.n_params();
        let w1 = (target.saturating_sub(rest) as f64 / (input + 1 + tail[0]) as f64 + 0.5) as usize;
        let mut hidden = vec![w1.max(1)];
        hidden.extend(tail);
        Self { variant, hidden, head: Vec::new(), ..gated }
    }

    pub fn input_width(&self) -> usize {
        self.cell_width + self.drug_width
    }

    fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let chain = |input: usize, widths: &[usize]| {
            let mut prev = input;
            widths
                .iter()
                .map(|&w| {
                    let s = (prev, w);
                    prev = w;
                    s
                })
                .collect::<Vec<_>>()
        };
        match self.variant {
            Variant::GatedTwoTower => {
                let mut v = chain(self.cell_width, &self.hidden);
                v.extend(chain(self.drug_width, &self.hidden));
                let mut head = self.head.clone();
                head.push(1);
                v.extend(chain(*self.hidden.last().unwrap_or(&0), &head));
                v
            }
            _ => {
                let mut widths = self.hidden.clone();
                widths.push(1);
                chain(self.input_width(), &widths)
            }
        }
    }

    pub fn n_params(&self) -> usize {
        self.layer_shapes().iter().map(|(i, o)| i * o + o).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.cell_width == 0 || self.drug_width == 0 {
            return Err(invalid!("input widths must be positive"));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) || self.head.contains(&0) {
            return Err(invalid!("hidden widths must be non-empty and positive"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(invalid!("dropout rate {} outside [0, 1)", self.dropout_rate));
        }
        Ok(())
    }

    /// Dropout applied to the output of each layer, in layer order.
    pub fn dropout_schedule(&self) -> Vec<f64> {
        let p = self.dropout_rate;
        match self.variant {
            Variant::UniformMlp => {
                let mut v = vec![p; self.hidden.len()];
                v.push(0.0);
                v
            }
            Variant::DifferentialDropoutMlp => {
                let n = self.hidden.len() + 1;
                (0..n).map(|i| p * (1.0 - i as f64 / (n - 1) as f64)).collect()
            }
            Variant::GatedTwoTower => {
                let mut tower = vec![p; self.hidden.len()];
                // the tower outputs feed the gate directly
                *tower.last_mut().unwrap() = 0.0;
                let mut v = tower.clone();
                v.extend(tower);
                v.extend(vec![p; self.head.len()]);
                v.push(0.0);
                v
            }
        }
    }
}

/// Dropout masks of one forward pass; one entry per layer, empty when the
/// layer had no dropout. Entries are 0 or `1/(1-p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Masks(Vec<Vec<f64>>);

pub enum Mode<'a> {
    Eval,
    Train(&'a mut dyn RngCore),
    /// Reuse the masks of an earlier training pass.
    Replay(&'a Masks),
}

/// Everything backward needs from a forward pass.
#[derive(Debug, Clone)]
pub struct Cache {
    version: u64,
    batch: usize,
    /// Input of each layer, `batch x n_in`.
    inputs: Vec<Vec<f64>>,
    /// Activation output of each layer before dropout.
    outputs: Vec<Vec<f64>>,
    masks: Masks,
    gate: Option<GateCache>,
}

#[derive(Debug, Clone)]
struct GateCache {
    t_drug: Vec<f64>,
    a: Vec<f64>,
}

impl Cache {
    pub fn masks(&self) -> &Masks {
        &self.masks
    }

    pub fn version(&self) -> u64 {
        self.version
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

impl Gradients {
    pub fn len(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Gradient of flat parameter `index` (same ordering as `Model::param`).
    pub fn get(&self, mut index: usize) -> f64 {
        for l in &self.layers {
            if index < l.weights.len() {
                return l.weights[index];
            }
            index -= l.weights.len();
            if index < l.bias.len() {
                return l.bias[index];
            }
            index -= l.bias.len();
        }
        panic!("gradient index out of range")
    }

    pub fn is_zero(&self) -> bool {
        self.layers.iter().all(|l| l.weights.iter().chain(&l.bias).all(|&v| v == 0.0))
    }
}

/// Parameters of one network plus a version counter that changes whenever the
/// parameters do, so a stale forward cache is detected.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    spec: ArchitectureSpec,
    layers: Vec<DenseLayer>,
    dropout: Vec<f64>,
    version: u64,
}

impl Model {
    /// Randomly initialised network: He-uniform for ReLU layers, Xavier for the
    /// gate towers and the sigmoid output.
    pub fn new(spec: &ArchitectureSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shapes = spec.layer_shapes();
        let n = shapes.len();
        let tower_layers = if spec.variant == Variant::GatedTwoTower { 2 * spec.hidden.len() } else { 0 };
        let tower_len = spec.hidden.len();
        let layers = shapes
            .iter()
            .enumerate()
            .map(|(k, &(i, o))| {
                let (act, init) = if k + 1 == n {
                    (Activation::Sigmoid, Init::Xavier)
                } else if k < tower_layers {
                    let last_of_tower = k % tower_len == tower_len - 1;
                    (if last_of_tower { Activation::Identity } else { Activation::Relu }, Init::Xavier)
                } else {
                    (Activation::Relu, Init::He)
                };
                DenseLayer::init(i, o, act, init, &mut rng)
            })
            .collect();
        Ok(Self { spec: spec.clone(), layers, dropout: spec.dropout_schedule(), version: 0 })
    }

    /// Network with explicit layers, for checkpoints and hand-built fixtures.
    pub fn from_layers(spec: &ArchitectureSpec, layers: Vec<DenseLayer>) -> Result<Self> {
        spec.validate()?;
        let shapes = spec.layer_shapes();
        if shapes.len() != layers.len() || shapes.iter().zip(&layers).any(|(&(i, o), l)| l.n_in != i || l.n_out != o) {
            return Err(Error::Shape("layers do not match the architecture".into()));
        }
        Ok(Self { spec: spec.clone(), layers, dropout: spec.dropout_schedule(), version: 0 })
    }

    pub fn spec(&self) -> &ArchitectureSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn dropout(&self) -> &[f64] {
        &self.dropout
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(DenseLayer::n_params).sum()
    }

    pub fn layer_name(&self, k: usize) -> String {
        match self.spec.variant {
            Variant::GatedTwoTower => {
                let t = self.spec.hidden.len();
                if k < t {
                    format!("cell_tower.{k}")
                } else if k < 2 * t {
                    format!("drug_tower.{}", k - t)
                } else {
                    format!("head.{}", k - 2 * t)
                }
            }
            _ => format!("mlp.{k}"),
        }
    }

    fn locate(&self, mut index: usize) -> (usize, bool, usize) {
        for (k, l) in self.layers.iter().enumerate() {
            if index < l.weights.len() {
                return (k, true, index);
            }
            index -= l.weights.len();
            if index < l.bias.len() {
                return (k, false, index);
            }
            index -= l.bias.len();
        }
        panic!("parameter index out of range")
    }

    /// Flat parameter access: layer by layer, weights then biases.
    pub fn param(&self, index: usize) -> f64 {
        let (k, w, i) = self.locate(index);
        if w {
            self.layers[k].weights[i]
        } else {
            self.layers[k].bias[i]
        }
    }

    pub fn set_param(&mut self, index: usize, value: f64) {
        let (k, w, i) = self.locate(index);
        if w {
            self.layers[k].weights[i] = value;
        } else {
            self.layers[k].bias[i] = value;
        }
        self.version += 1;
    }

    /// Sets the bias of the single output unit.
    pub fn set_output_bias(&mut self, value: f64) {
        if let Some(last) = self.layers.last_mut() {
            last.bias[0] = value;
            self.version += 1;
        }
    }

    fn ranges(&self) -> (Range<usize>, Range<usize>, Range<usize>) {
        let t = self.spec.hidden.len();
        (0..t, t..2 * t, 2 * t..self.layers.len())
    }

    /// Runs a stack of layers, recording inputs, outputs and masks.
    fn run_stack(
        &self,
        range: Range<usize>,
        mut x: Vec<f64>,
        batch: usize,
        mode: &mut Mode<'_>,
        cache: &mut Cache,
    ) -> Result<Vec<f64>> {
        for k in range {
            let layer = &self.layers[k];
            let out = layer.forward(&x, batch);
            let p = self.dropout[k];
            let mask = match mode {
                Mode::Eval => Vec::new(),
                Mode::Train(rng) if p > 0.0 => {
                    let keep = 1.0 / (1.0 - p);
                    (0..out.len()).map(|_| if rng.random::<f64>() < p { 0.0 } else { keep }).collect()
                }
                Mode::Train(_) => Vec::new(),
                Mode::Replay(m) => {
                    let mask = m.0.get(k).cloned().ok_or_else(|| invalid!("replay masks do not match model"))?;
                    if !mask.is_empty() && mask.len() != out.len() {
                        return Err(invalid!("replay mask for layer {k} has the wrong batch size"));
                    }
                    mask
                }
            };
            let mut next = out.clone();
            if !mask.is_empty() {
                next.iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
            }
            cache.inputs[k] = x;
            cache.outputs[k] = out;
            cache.masks.0[k] = mask;
            x = next;
        }
        Ok(x)
    }

    /// Forward pass over a batch. `cell` is `batch x cell_width` and `drug` is
    /// `batch x drug_width`, both row-major. Returns predictions in (0, 1).
    pub fn forward(&self, cell: &[f64], drug: &[f64], batch: usize, mut mode: Mode<'_>) -> Result<(Vec<f64>, Cache)> {
        let (cw, dw) = (self.spec.cell_width, self.spec.drug_width);
        if cell.len() != batch * cw || drug.len() != batch * dw {
            return Err(Error::Shape(format!(
                "expected {batch} x {cw} cell and {batch} x {dw} drug inputs, got {} and {} values",
                cell.len(),
                drug.len()
            )));
        }
        let n = self.layers.len();
        let mut cache = Cache {
            version: self.version,
            batch,
            inputs: vec![Vec::new(); n],
            outputs: vec![Vec::new(); n],
            masks: Masks(vec![Vec::new(); n]),
            gate: None,
        };
        let pred = match self.spec.variant {
            Variant::GatedTwoTower => {
                let (cr, dr, hr) = self.ranges();
                let t_cell = self.run_stack(cr, cell.to_vec(), batch, &mut mode, &mut cache)?;
                let t_drug = self.run_stack(dr, drug.to_vec(), batch, &mut mode, &mut cache)?;
                let h = *self.spec.hidden.last().unwrap();
                let act = self.spec.gate_activation.activation();
                let mut a = t_cell.clone();
                for row in a.chunks_exact_mut(h) {
                    act.apply(row);
                }
                let combined: Vec<f64> = a.iter().zip(&t_drug).map(|(x, y)| x * y).collect();
                cache.gate = Some(GateCache { t_drug, a });
                self.run_stack(hr, combined, batch, &mut mode, &mut cache)?
            }
            _ => {
                let mut x = Vec::with_capacity(batch * (cw + dw));
                for b in 0..batch {
                    x.extend_from_slice(&cell[b * cw..(b + 1) * cw]);
                    x.extend_from_slice(&drug[b * dw..(b + 1) * dw]);
                }
                self.run_stack(0..n, x, batch, &mut mode, &mut cache)?
            }
        };
        Ok((pred, cache))
    }

    /// Eval-mode predictions.
    pub fn predict(&self, cell: &[f64], drug: &[f64], batch: usize) -> Result<Vec<f64>> {
        Ok(self.forward(cell, drug, batch, Mode::Eval)?.0)
    }

    fn backprop_stack(&self, range: Range<usize>, mut g: Vec<f64>, cache: &Cache, grads: &mut [LayerGrad]) -> Vec<f64> {
        let batch = cache.batch;
        for k in range.rev() {
            let layer = &self.layers[k];
            let mask = &cache.masks.0[k];
            if !mask.is_empty() {
                g.iter_mut().zip(mask).for_each(|(v, m)| *v *= m);
            }
            let out = &cache.outputs[k];
            let x = &cache.inputs[k];
            let (ni, no) = (layer.n_in, layer.n_out);
            let mut gx = vec![0.0; batch * ni];
            let lg = &mut grads[k];
            for b in 0..batch {
                let gb = &mut g[b * no..(b + 1) * no];
                layer.activation.backprop(&out[b * no..(b + 1) * no], gb);
                let xb = &x[b * ni..(b + 1) * ni];
                let gxb = &mut gx[b * ni..(b + 1) * ni];
                for (o, &go) in gb.iter().enumerate() {
                    if go == 0.0 {
                        continue;
                    }
                    lg.bias[o] += go;
                    axpy(go, xb, &mut lg.weights[o * ni..(o + 1) * ni]);
                    axpy(go, &layer.weights[o * ni..(o + 1) * ni], gxb);
                }
            }
            g = gx;
        }
        g
    }

    /// Reverse pass. `dloss` is the gradient of the loss w.r.t. each prediction.
    pub fn backward(&self, cache: &Cache, dloss: &[f64]) -> Result<Gradients> {
        if cache.version != self.version {
            return Err(Error::StaleCache { cache: cache.version, model: self.version });
        }
        if dloss.len() != cache.batch {
            return Err(Error::Shape(format!("{} loss gradients for batch {}", dloss.len(), cache.batch)));
        }
        let mut grads: Vec<LayerGrad> = self
            .layers
            .iter()
            .map(|l| LayerGrad { weights: vec![0.0; l.weights.len()], bias: vec![0.0; l.bias.len()] })
            .collect();
        match self.spec.variant {
            Variant::GatedTwoTower => {
                let (cr, dr, hr) = self.ranges();
                let g_comb = self.backprop_stack(hr, dloss.to_vec(), cache, &mut grads);
                let gate = cache.gate.as_ref().ok_or_else(|| invalid!("cache has no gate record"))?;
                let h = *self.spec.hidden.last().unwrap();
                // product rule on a(t_cell) * t_drug
                let g_drug: Vec<f64> = g_comb.iter().zip(&gate.a).map(|(g, a)| g * a).collect();
                let mut g_cell: Vec<f64> = g_comb.iter().zip(&gate.t_drug).map(|(g, t)| g * t).collect();
                let act = self.spec.gate_activation.activation();
                for (gc, a) in g_cell.chunks_exact_mut(h).zip(gate.a.chunks_exact(h)) {
                    act.backprop(a, gc);
                }
                self.backprop_stack(cr, g_cell, cache, &mut grads);
                self.backprop_stack(dr, g_drug, cache, &mut grads);
            }
            _ => {
                let n = self.layers.len();
                self.backprop_stack(0..n, dloss.to_vec(), cache, &mut grads);
            }
        }
        Ok(Gradients { layers: grads })
    }
}

/// Mean Huber loss and its gradient w.r.t. each prediction.
pub fn huber_loss(pred: &[f64], target: &[f64], delta: f64) -> (f64, Vec<f64>) {
    let n = pred.len().max(1) as f64;
    let mut loss = 0.0;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let r = p - t;
            if r.abs() <= delta {
                loss += 0.5 * r * r;
                r / n
            } else {
                loss += delta * (r.abs() - 0.5 * delta);
                delta * r.signum() / n
            }
        })
        .collect();
    (loss / n, grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl OptimizerKind {
    pub const ALL: [OptimizerKind; 2] = [Self::Sgd, Self::Adam];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Sgd => "sgd",
            Self::Adam => "adam",
        }
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|v| v.as_str() == s).ok_or_else(|| invalid!("unknown optimizer {s}"))
    }
}

/// Optimizer state. Adam moment slots mirror the parameter shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    kind: OptimizerKind,
    step: u64,
    m: Vec<LayerGrad>,
    v: Vec<LayerGrad>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, model: &Model) -> Self {
        let zeros: Vec<LayerGrad> = if kind == OptimizerKind::Adam {
            model
                .layers
                .iter()
                .map(|l| LayerGrad { weights: vec![0.0; l.weights.len()], bias: vec![0.0; l.bias.len()] })
                .collect()
        } else {
            Vec::new()
        };
        Self { kind, step: 0, m: zeros.clone(), v: zeros }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, model: &mut Model, grads: &Gradients, lr: f64) -> Result<()> {
        if grads.layers.len() != model.layers.len()
            || grads
                .layers
                .iter()
                .zip(&model.layers)
                .any(|(g, l)| g.weights.len() != l.weights.len() || g.bias.len() != l.bias.len())
        {
            return Err(Error::Shape("gradient shapes do not match the model".into()));
        }
        for (k, g) in grads.layers.iter().enumerate() {
            if g.weights.iter().chain(&g.bias).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of layer {}", model.layer_name(k))));
            }
        }
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (l, g) in model.layers.iter_mut().zip(&grads.layers) {
                    axpy(-lr, &g.weights, &mut l.weights);
                    axpy(-lr, &g.bias, &mut l.bias);
                }
            }
            OptimizerKind::Adam => {
                let t = self.step as f64;
                let c1 = 1.0 - libm::pow(ADAM_BETA1, t);
                let c2 = 1.0 - libm::pow(ADAM_BETA2, t);
                let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
                    for i in 0..p.len() {
                        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
                        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
                        let mh = m[i] / c1;
                        let vh = v[i] / c2;
                        p[i] -= lr * mh / (libm::sqrt(vh) + ADAM_EPSILON);
                    }
                };
                for (k, (l, g)) in model.layers.iter_mut().zip(&grads.layers).enumerate() {
                    update(&mut l.weights, &g.weights, &mut self.m[k].weights, &mut self.v[k].weights);
                    update(&mut l.bias, &g.bias, &mut self.m[k].bias, &mut self.v[k].bias);
                }
            }
        }
        model.version += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn huber_branches() {
        let (l, g) = huber_loss(&[0.3, 0.7], &[0.3, 0.7], 1.0);
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|&v| v == 0.0));
        let (l, g) = huber_loss(&[3.0], &[1.0], 1.0);
        assert_eq!(l, 1.5);
        assert_eq!(g, vec![1.0]);
    }

    #[test]
    fn differential_schedule_decays_to_zero() {
        let mut spec = ArchitectureSpec::with_defaults(Variant::DifferentialDropoutMlp, 20, 10, 16);
        spec.dropout_rate = 0.3;
        let s = spec.dropout_schedule();
        assert_eq!(s.len(), spec.hidden.len() + 1);
        assert_eq!(s[0], 0.3);
        assert_eq!(*s.last().unwrap(), 0.0);
        assert!(s.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn names_layers_by_stage() {
        let spec = ArchitectureSpec::with_defaults(Variant::GatedTwoTower, 4, 3, 64);
        let m = Model::new(&spec, 1).unwrap();
        assert_eq!(m.layer_name(0), "cell_tower.0");
        assert_eq!(m.layer_name(3), "drug_tower.1");
        assert_eq!(m.layer_name(5), "head.1");
    }
}
