//! Score functions `∇_x log p_t(x)`: exact for Gaussian-mixture bases, and
//! learned by an ε-predicting MLP trained with denoising score matching.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

use crate::autodiff::{kernels, AutodiffError, Tape, Tensor, Var};
use crate::datasets::SampleBatch;
use crate::mixture::GaussianMixture;
use crate::rng::{RngStream, StreamTag};
use crate::schedule::{NoiseSchedule, ScheduleError};

pub const CHECKPOINT_VERSION: u32 = 1;
pub const TIME_EMBEDDING_DIM: usize = 32;
pub const DEFAULT_HIDDEN: usize = 128;

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("score at t = 0 is undefined for the ε-parameterized model")]
    StepZero,
    #[error("dimension mismatch: model expects {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error(
        "training diverged at epoch {epoch}, batch {batch}: loss {loss} (learning rate too high?)"
    )]
    Diverged {
        epoch: usize,
        batch: usize,
        loss: f64,
    },
    #[error("invalid hyperparameter {name} = {value}")]
    BadHyper { name: &'static str, value: String },
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    Version { found: u64, expected: u32 },
    #[error("checkpoint field `{field}`: {msg}")]
    Schema { field: String, msg: String },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// `∇_x log p_t(x)` at discrete step `t`.
pub trait ScoreFunction: Send + Sync {
    fn dim(&self) -> usize;

    /// Scores for the rows of `xs` (row-major, `dim` columns).
    fn score_batch(&self, xs: &[f64], t: usize) -> Vec<f64>;

    fn score(&self, x: &[f64], t: usize) -> Vec<f64> {
        self.score_batch(x, t)
    }
}

/// Exact score of a Gaussian mixture pushed through the forward diffusion.
#[derive(Clone, Debug)]
pub struct MixtureScore {
    gm: GaussianMixture,
    schedule: NoiseSchedule,
}

impl MixtureScore {
    pub fn new(gm: GaussianMixture, schedule: NoiseSchedule) -> Self {
        Self { gm, schedule }
    }

    pub fn mixture(&self) -> &GaussianMixture {
        &self.gm
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }
}

impl ScoreFunction for MixtureScore {
    fn dim(&self) -> usize {
        self.gm.dim()
    }

    fn score_batch(&self, xs: &[f64], t: usize) -> Vec<f64> {
        let ab = self.schedule.alpha_bar_at(t).expect("step within schedule");
        let mut out = vec![0.0; xs.len()];
        self.gm.perturbed(ab).score_batch_into(xs, &mut out);
        out
    }
}

pub fn mixture_perturbed_score(
    gm: &GaussianMixture,
    schedule: &NoiseSchedule,
    t: usize,
    x: &[f64],
) -> Result<Vec<f64>, ScoreError> {
    if x.len() != gm.dim() {
        return Err(ScoreError::Dimension {
            expected: gm.dim(),
            got: x.len(),
        });
    }
    let ab = schedule.alpha_bar_at(t)?;
    let mut out = vec![0.0; x.len()];
    gm.perturbed(ab).score_into(x, &mut out);
    Ok(out)
}

/// Sinusoidal features `[sin(ω_i τ)…, cos(ω_i τ)…]`, `τ = t/T`, with
/// `ω_i` geometric from 1 to 1000.
pub fn time_embedding(t: usize, steps: usize) -> Vec<f64> {
    let half = TIME_EMBEDDING_DIM / 2;
    let tau = t as f64 / steps as f64;
    let freqs: Vec<f64> = (0..half)
        .map(|i| 1000f64.powf(i as f64 / (half - 1) as f64))
        .collect();
    let mut out: Vec<f64> = freqs.iter().map(|w| (w * tau).sin()).collect();
    out.extend(freqs.iter().map(|w| (w * tau).cos()));
    out
}

/// Five fully connected layers `[d + d_emb, h, h, h, h, d]`, ReLU on hidden
/// layers, linear output. Weights are stored `[in, out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpScoreParams {
    layer_sizes: Vec<usize>,
    d_emb: usize,
    weights: Vec<Tensor>,
    biases: Vec<Tensor>,
}

impl MlpScoreParams {
    /// Uniform `±1/√fan_in` initialization from the `Init` stream.
    pub fn init(dim: usize, hidden: usize, seed: u64) -> Self {
        let layer_sizes = vec![
            dim + TIME_EMBEDDING_DIM,
            hidden,
            hidden,
            hidden,
            hidden,
            dim,
        ];
        let mut rng = RngStream::derive(seed, StreamTag::Init, 0);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let wd = (0..fan_in * fan_out)
                .map(|_| rng.uniform_range(-bound, bound))
                .collect();
            let bd = (0..fan_out)
                .map(|_| rng.uniform_range(-bound, bound))
                .collect();
            weights.push(Tensor::matrix(fan_in, fan_out, wd).expect("finite"));
            biases.push(Tensor::vector(bd).expect("finite"));
        }
        Self {
            layer_sizes,
            d_emb: TIME_EMBEDDING_DIM,
            weights,
            biases,
        }
    }

    pub fn dim(&self) -> usize {
        *self.layer_sizes.last().expect("non-empty")
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn n_layers(&self) -> usize {
        self.weights.len()
    }

    /// Records every weight and bias on `tape` as a leaf, layer by layer.
    pub fn leaves(&self, tape: &mut Tape) -> Vec<(Var, Var)> {
        self.weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| (tape.leaf(w.clone()), tape.leaf(b.clone())))
            .collect()
    }

    /// Tape forward for training: `input` is `[batch, d + d_emb]`.
    pub fn forward_tape(
        &self,
        tape: &mut Tape,
        params: &[(Var, Var)],
        input: Var,
    ) -> Result<Var, AutodiffError> {
        let mut h = input;
        for (i, &(w, b)) in params.iter().enumerate() {
            let z = tape.matmul(h, w)?;
            let z = tape.bias_add(z, b)?;
            h = if i + 1 < params.len() {
                tape.relu(z)?
            } else {
                z
            };
        }
        Ok(h)
    }

    /// Tape-free forward for `n` input rows; returns `[n, d]` ε predictions.
    pub fn predict(&self, input: &[f64], n: usize) -> Vec<f64> {
        let mut h = input.to_vec();
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let (k, m) = (w.shape()[0], w.shape()[1]);
            let mut z = vec![0.0; n * m];
            kernels::gemm(n, k, m, &h, (k, 1), w.data(), (m, 1), &mut z, false);
            kernels::add_bias(&mut z, b.data());
            if i + 1 < self.weights.len() {
                kernels::relu_inplace(&mut z);
            }
            h = z;
        }
        h
    }
}

/// Tabulated time embeddings for `t = 0..=T`.
fn embedding_table(steps: usize) -> Vec<f64> {
    (0..=steps).flat_map(|t| time_embedding(t, steps)).collect()
}

fn assemble_input(
    xs: &[f64],
    d: usize,
    emb_rows: impl Iterator<Item = usize>,
    table: &[f64],
) -> Vec<f64> {
    let width = d + TIME_EMBEDDING_DIM;
    let mut input = Vec::with_capacity(xs.len() / d * width);
    for (x, t) in xs.chunks_exact(d).zip(emb_rows) {
        input.extend_from_slice(x);
        input.extend_from_slice(&table[t * TIME_EMBEDDING_DIM..(t + 1) * TIME_EMBEDDING_DIM]);
    }
    input
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
    pub hidden: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            batch: 1024,
            lr: 1e-3,
            seed: 0,
            hidden: DEFAULT_HIDDEN,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub source: String,
    pub n: usize,
    pub seed: u64,
    pub constants: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingMeta {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
    pub hidden: usize,
    pub optimizer: String,
    pub final_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsDoc {
    layer_sizes: Vec<usize>,
    d_emb: usize,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScheduleDoc {
    #[serde(rename = "T")]
    steps: usize,
    eps_d: f64,
    beta: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointDoc {
    version: u32,
    params: ParamsDoc,
    schedule: ScheduleDoc,
    dataset_meta: DatasetMeta,
    training_meta: TrainingMeta,
}

/// Trained model plus everything needed to evaluate and reproduce it.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: MlpScoreParams,
    pub schedule: NoiseSchedule,
    pub dataset_meta: DatasetMeta,
    pub training_meta: TrainingMeta,
}

impl Checkpoint {
    pub fn to_json(&self) -> String {
        let doc = CheckpointDoc {
            version: CHECKPOINT_VERSION,
            params: ParamsDoc {
                layer_sizes: self.params.layer_sizes.clone(),
                d_emb: self.params.d_emb,
                weights: self
                    .params
                    .weights
                    .iter()
                    .map(|w| w.data().to_vec())
                    .collect(),
                biases: self
                    .params
                    .biases
                    .iter()
                    .map(|b| b.data().to_vec())
                    .collect(),
            },
            schedule: ScheduleDoc {
                steps: self.schedule.steps(),
                eps_d: self.schedule.eps_d(),
                beta: self.schedule.betas().to_vec(),
            },
            dataset_meta: self.dataset_meta.clone(),
            training_meta: self.training_meta.clone(),
        };
        serde_json::to_string_pretty(&doc).expect("serializable") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self, ScoreError> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let version = value
            .get("version")
            .ok_or_else(|| schema("version", "missing field"))?
            .as_u64()
            .ok_or_else(|| schema("version", "expected an unsigned integer"))?;
        if version != CHECKPOINT_VERSION as u64 {
            return Err(ScoreError::Version {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let doc: CheckpointDoc = serde_json::from_value(value)?;
        let p = doc.params;
        if p.d_emb != TIME_EMBEDDING_DIM {
            return Err(schema(
                "params.d_emb",
                &format!("expected {TIME_EMBEDDING_DIM}"),
            ));
        }
        if p.layer_sizes.len() < 2 || p.weights.len() != p.layer_sizes.len() - 1 {
            return Err(schema(
                "params.weights",
                "layer count does not match layer_sizes",
            ));
        }
        if p.biases.len() != p.weights.len() {
            return Err(schema(
                "params.biases",
                "layer count does not match layer_sizes",
            ));
        }
        if p.layer_sizes[0] != p.layer_sizes[p.layer_sizes.len() - 1] + p.d_emb {
            return Err(schema(
                "params.layer_sizes",
                "input width must be d + d_emb",
            ));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (i, pair) in p.layer_sizes.windows(2).enumerate() {
            let w = Tensor::matrix(pair[0], pair[1], p.weights[i].clone())
                .map_err(|e| schema(&format!("params.weights[{i}]"), &e.to_string()))?;
            let b = Tensor::vector(p.biases[i].clone())
                .map_err(|e| schema(&format!("params.biases[{i}]"), &e.to_string()))?;
            if b.len() != pair[1] {
                return Err(schema(&format!("params.biases[{i}]"), "wrong length"));
            }
            weights.push(w);
            biases.push(b);
        }
        if doc.schedule.beta.len() != doc.schedule.steps {
            return Err(schema("schedule.beta", "length must equal T"));
        }
        let schedule = NoiseSchedule::from_betas(doc.schedule.beta, doc.schedule.eps_d)
            .map_err(|e| schema("schedule", &e.to_string()))?;
        Ok(Self {
            params: MlpScoreParams {
                layer_sizes: p.layer_sizes,
                d_emb: p.d_emb,
                weights,
                biases,
            },
            schedule,
            dataset_meta: doc.dataset_meta,
            training_meta: doc.training_meta,
        })
    }

    pub fn score_fn(&self) -> MlpScore {
        MlpScore::new(self.params.clone(), self.schedule.clone())
    }
}

fn schema(field: &str, msg: &str) -> ScoreError {
    ScoreError::Schema {
        field: field.to_string(),
        msg: msg.to_string(),
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<(), ScoreError> {
    std::fs::write(path, ckpt.to_json())?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, ScoreError> {
    Checkpoint::from_json(&std::fs::read_to_string(path)?)
}

/// Learned score `-ε_θ(x, t) / √(1 − ᾱ_t)`.
#[derive(Clone, Debug)]
pub struct MlpScore {
    params: MlpScoreParams,
    schedule: NoiseSchedule,
    table: Vec<f64>,
}

impl MlpScore {
    pub fn new(params: MlpScoreParams, schedule: NoiseSchedule) -> Self {
        let table = embedding_table(schedule.steps());
        Self {
            params,
            schedule,
            table,
        }
    }

    pub fn params(&self) -> &MlpScoreParams {
        &self.params
    }

    /// Raw ε predictions at a common step `t`.
    pub fn predict_eps(&self, xs: &[f64], t: usize) -> Vec<f64> {
        let d = self.params.dim();
        let n = xs.len() / d;
        let input = assemble_input(xs, d, std::iter::repeat(t), &self.table);
        self.params.predict(&input, n)
    }

    pub fn eval(&self, x: &[f64], t: usize) -> Result<Vec<f64>, ScoreError> {
        if t == 0 {
            return Err(ScoreError::StepZero);
        }
        if !x.len().is_multiple_of(self.params.dim()) {
            return Err(ScoreError::Dimension {
                expected: self.params.dim(),
                got: x.len(),
            });
        }
        self.schedule.alpha_bar_at(t)?;
        Ok(self.score_batch(x, t))
    }
}

impl ScoreFunction for MlpScore {
    fn dim(&self) -> usize {
        self.params.dim()
    }

    fn score_batch(&self, xs: &[f64], t: usize) -> Vec<f64> {
        assert!(
            t >= 1 && t <= self.schedule.steps(),
            "step {t} outside 1..=T"
        );
        let sigma = (1.0 - self.schedule.ab(t)).sqrt();
        let mut eps = self.predict_eps(xs, t);
        for v in &mut eps {
            *v = -*v / sigma;
        }
        eps
    }
}

pub fn mlp_score_eval(ckpt: &Checkpoint, x: &[f64], t: usize) -> Result<Vec<f64>, ScoreError> {
    ckpt.score_fn().eval(x, t)
}

/// Per-epoch average losses alongside the finished checkpoint.
#[derive(Clone, Debug)]
pub struct TrainReport {
    pub checkpoint: Checkpoint,
    pub epoch_losses: Vec<f64>,
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(sizes: impl Iterator<Item = usize>) -> Self {
        let (m, v): (Vec<_>, Vec<_>) = sizes.map(|n| (vec![0.0; n], vec![0.0; n])).unzip();
        Self { m, v, step: 0 }
    }

    fn update(&mut self, slot: usize, param: &mut [f64], grad: &[f64], lr: f64) {
        let c1 = 1.0 - Self::BETA1.powi(self.step);
        let c2 = 1.0 - Self::BETA2.powi(self.step);
        let (m, v) = (&mut self.m[slot], &mut self.v[slot]);
        for i in 0..param.len() {
            let g = grad[i];
            m[i] = Self::BETA1 * m[i] + (1.0 - Self::BETA1) * g;
            v[i] = Self::BETA2 * v[i] + (1.0 - Self::BETA2) * g * g;
            param[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

pub fn train_mlp_score(
    data: &SampleBatch,
    schedule: &NoiseSchedule,
    cfg: &TrainConfig,
    dataset_meta: DatasetMeta,
) -> Result<TrainReport, ScoreError> {
    train_mlp_score_with(data, schedule, cfg, dataset_meta, |_, _| {})
}

/// DDPM ε-matching with Adam: minimizes `‖z − ε_θ(√ᾱ_t x₀ + √(1−ᾱ_t) z, t)‖²`
/// over `t ~ U{1..T}`. `on_epoch(epoch, avg_loss)` runs after every epoch.
pub fn train_mlp_score_with(
    data: &SampleBatch,
    schedule: &NoiseSchedule,
    cfg: &TrainConfig,
    dataset_meta: DatasetMeta,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<TrainReport, ScoreError> {
    for (name, value) in [
        ("epochs", cfg.epochs as f64),
        ("batch", cfg.batch as f64),
        ("hidden", cfg.hidden as f64),
        ("lr", cfg.lr),
    ] {
        if !(value > 0.0 && value.is_finite()) {
            return Err(ScoreError::BadHyper {
                name,
                value: value.to_string(),
            });
        }
    }
    let d = data.dim();
    let n = data.count();
    if n == 0 {
        return Err(ScoreError::BadHyper {
            name: "dataset",
            value: "empty".into(),
        });
    }
    let steps = schedule.steps();
    let table = embedding_table(steps);
    let mut params = MlpScoreParams::init(d, cfg.hidden, cfg.seed);
    let mut adam = Adam::new(
        params
            .weights
            .iter()
            .zip(&params.biases)
            .flat_map(|(w, b)| [w.len(), b.len()]),
    );
    let mut order: Vec<usize> = (0..n).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    let mut xt = Vec::with_capacity(cfg.batch * d);
    let mut noise = Vec::with_capacity(cfg.batch * d);
    let mut ts = Vec::with_capacity(cfg.batch);
    for epoch in 0..cfg.epochs {
        let mut rng = RngStream::derive(cfg.seed, StreamTag::Train, epoch as u64);
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        for (bi, idx) in order.chunks(cfg.batch).enumerate() {
            xt.clear();
            noise.clear();
            ts.clear();
            for &i in idx {
                let t = 1 + rng.below(steps as u64) as usize;
                let ab = schedule.ab(t);
                let (sa, sb) = (ab.sqrt(), (1.0 - ab).sqrt());
                for &x0 in data.row(i) {
                    let z = rng.normal();
                    xt.push(sa * x0 + sb * z);
                    noise.push(z);
                }
                ts.push(t);
            }
            let b = idx.len();
            let input = assemble_input(&xt, d, ts.iter().copied(), &table);

            let mut tape = Tape::new();
            let x_var = tape.leaf(Tensor::matrix(b, d + TIME_EMBEDDING_DIM, input)?);
            let target = tape.leaf(Tensor::matrix(b, d, noise.clone())?);
            let pvars = params.leaves(&mut tape);
            let pred = params.forward_tape(&mut tape, &pvars, x_var)?;
            let diff = tape.sub(pred, target)?;
            let sq = tape.mul(diff, diff)?;
            let total = tape.sum(sq)?;
            let loss_var = tape.scale(total, 1.0 / b as f64)?;
            let loss = tape.value(loss_var).item();
            if !loss.is_finite() {
                return Err(ScoreError::Diverged {
                    epoch,
                    batch: bi,
                    loss,
                });
            }
            loss_sum += loss * b as f64;

            let mut grads = tape.backward(loss_var)?;
            adam.step += 1;
            for (layer, &(wv, bv)) in pvars.iter().enumerate() {
                let gw = grads.take(wv);
                let gb = grads.take(bv);
                adam.update(
                    2 * layer,
                    params.weights[layer].data_mut(),
                    gw.data(),
                    cfg.lr,
                );
                adam.update(
                    2 * layer + 1,
                    params.biases[layer].data_mut(),
                    gb.data(),
                    cfg.lr,
                );
            }
        }
        let avg = loss_sum / n as f64;
        epoch_losses.push(avg);
        on_epoch(epoch, avg);
    }

    let final_loss = *epoch_losses.last().expect("epochs >= 1");
    Ok(TrainReport {
        checkpoint: Checkpoint {
            params,
            schedule: schedule.clone(),
            dataset_meta,
            training_meta: TrainingMeta {
                epochs: cfg.epochs,
                batch: cfg.batch,
                lr: cfg.lr,
                seed: cfg.seed,
                hidden: cfg.hidden,
                optimizer: "adam".into(),
                final_loss,
            },
        },
        epoch_losses,
    })
}
