//! Reverse-diffusion samplers: plain base sampling, importance sampling with
//! the Tweedie-linearized weight correction, and an acceptance-rejection
//! reference sampler.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

use crate::datasets::{BatchMeta, DataError, SampleBatch};
use crate::rng::{derive_seed, RngStream, StreamTag};
use crate::schedule::{NoiseSchedule, ScheduleError};
use crate::score_models::ScoreFunction;
use crate::weights::WeightFunction;

pub const DEFAULT_EPSILON: f64 = 1e-3;

/// Chains advanced together through one batched score call.
const CHUNK: usize = 2048;
/// Proposals drawn per acceptance-rejection round.
const PROPOSAL_ROUND: usize = 1 << 16;
const MIN_ACCEPT_RATE: f64 = 1e-4;
const MIN_PROPOSALS_BEFORE_ABORT: u64 = 1_000_000;

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("epsilon must be positive and finite, got {0}")]
    BadEpsilon(f64),
    #[error("need at least one sample")]
    NoSamples,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("alpha_bar at t = {t} is {value}, must be positive")]
    AlphaBar { t: usize, value: f64 },
    #[error("beta at t = {t} is {value}, must be below 1")]
    Beta { t: usize, value: f64 },
    #[error("non-finite value at t = {t} (|x| = {x_norm:e}, |grad log l| = {delta_norm:e})")]
    NonFinite {
        t: usize,
        x_norm: f64,
        delta_norm: f64,
    },
    #[error("bound M must be positive and finite, got {0}")]
    BadBound(f64),
    #[error("acceptance rate {rate:e} after {proposals} proposals; bound M = {bound} is too loose or the weight is degenerate")]
    LowAcceptance {
        rate: f64,
        proposals: u64,
        bound: f64,
    },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Ancestral,
    EulerMaruyama,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Ancestral => "ancestral",
            Variant::EulerMaruyama => "euler_maruyama",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ancestral" => Ok(Variant::Ancestral),
            "em" | "euler_maruyama" => Ok(Variant::EulerMaruyama),
            other => Err(format!(
                "unknown variant `{other}` (expected ancestral or em)"
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub epsilon: f64,
    pub n_samples: usize,
    pub seed: u64,
    pub variant: Variant,
    /// Record full trajectories for the first `trace_chains` chains.
    pub trace_chains: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
            n_samples: 10_000,
            seed: 0,
            variant: Variant::Ancestral,
            trace_chains: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), SamplerError> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(SamplerError::BadEpsilon(self.epsilon));
        }
        if self.n_samples == 0 {
            return Err(SamplerError::NoSamples);
        }
        Ok(())
    }
}

/// Diagnostics for one reverse step, taken at the state before the update.
#[derive(Clone, Debug, PartialEq)]
pub struct StepDiagnostics {
    pub t: usize,
    pub tweedie_mean: Vec<f64>,
    pub grad_log_l_norm: f64,
    /// `‖q-score − score‖`.
    pub correction_norm: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub chain: usize,
    /// `x_T, …, x_0`; empty tail if the chain failed.
    pub states: Vec<Vec<f64>>,
    /// One entry per step `t = T..1`.
    pub steps: Vec<StepDiagnostics>,
}

impl Trajectory {
    /// CSV rows `t,x…,mean…,grad_norm,corr_norm`; the final row is `x_0` with
    /// empty diagnostics.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        let d = self.states.first().map_or(0, Vec::len);
        let mut header: Vec<String> = vec!["t".into()];
        header.extend((0..d).map(|i| format!("x{i}")));
        header.extend((0..d).map(|i| format!("mean{i}")));
        header.push("grad_norm".into());
        header.push("corr_norm".into());
        writeln!(w, "{}", header.join(","))?;
        for (state, step) in self.states.iter().zip(&self.steps) {
            let mut row = vec![step.t.to_string()];
            row.extend(state.iter().map(|v| format!("{v:.16e}")));
            row.extend(step.tweedie_mean.iter().map(|v| format!("{v:.16e}")));
            row.push(format!("{:.16e}", step.grad_log_l_norm));
            row.push(format!("{:.16e}", step.correction_norm));
            writeln!(w, "{}", row.join(","))?;
        }
        if self.states.len() == self.steps.len() + 1 {
            let mut row = vec!["0".to_string()];
            row.extend(
                self.states[self.steps.len()]
                    .iter()
                    .map(|v| format!("{v:.16e}")),
            );
            row.extend(std::iter::repeat_n(String::new(), d + 2));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainFailure {
    pub chain: usize,
    pub t: usize,
    pub reason: String,
}

#[derive(Clone, Debug)]
pub struct SamplerOutput {
    /// Surviving chains, in chain order.
    pub batch: SampleBatch,
    pub failures: Vec<ChainFailure>,
    pub trajectories: Vec<Trajectory>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn checked_alpha_bar(schedule: &NoiseSchedule, t: usize) -> Result<f64, SamplerError> {
    let ab = schedule.alpha_bar_at(t)?;
    if !(ab > 0.0) {
        return Err(SamplerError::AlphaBar { t, value: ab });
    }
    Ok(ab)
}

fn tweedie_from(x: &[f64], s: &[f64], ab: f64, out: &mut [f64]) {
    let sa = ab.sqrt();
    for ((o, xi), si) in out.iter_mut().zip(x).zip(s) {
        *o = (xi + (1.0 - ab) * si) / sa;
    }
}

/// Denoised mean `E[x_0 | x_t = x] = (x + (1 − ᾱ_t) score) / √ᾱ_t`.
pub fn tweedie_mean(
    score: &dyn ScoreFunction,
    schedule: &NoiseSchedule,
    x: &[f64],
    t: usize,
) -> Result<Vec<f64>, SamplerError> {
    check_dim(score.dim(), x.len())?;
    let ab = checked_alpha_bar(schedule, t)?;
    let s = score.score(x, t);
    let mut out = vec![0.0; x.len()];
    tweedie_from(x, &s, ab, &mut out);
    Ok(out)
}

fn check_dim(expected: usize, got: usize) -> Result<(), SamplerError> {
    if expected != got {
        return Err(SamplerError::Dimension { expected, got });
    }
    Ok(())
}

/// Probe point `x + εΔ` and the offset it actually realizes, divided by ε.
///
/// The realized offset is used in place of Δ in both correction terms so that
/// they cancel exactly in floating point when the score is linear.
fn probe(x: &[f64], delta: &[f64], eps: f64, probe_out: &mut [f64], delta_eff: &mut [f64]) {
    for i in 0..x.len() {
        probe_out[i] = x[i] + eps * delta[i];
        delta_eff[i] = (probe_out[i] - x[i]) / eps;
    }
}

/// `s + Δ/√ᾱ + (s_probe − s)(1 − ᾱ)/(ε√ᾱ)`.
fn combine(s: &[f64], s_probe: &[f64], delta_eff: &[f64], ab: f64, eps: f64, out: &mut [f64]) {
    let sa = ab.sqrt();
    let c = (1.0 - ab) / (eps * sa);
    for i in 0..s.len() {
        out[i] = s[i] + delta_eff[i] / sa + (s_probe[i] - s[i]) * c;
    }
}

/// Score of the importance-weighted marginal, with the weight linearized at
/// the denoised mean and the Hessian-vector product taken by a forward
/// difference of the base score along `∇ log l`.
pub fn issgm_score(
    score: &dyn ScoreFunction,
    weight: &dyn WeightFunction,
    schedule: &NoiseSchedule,
    x: &[f64],
    t: usize,
    epsilon: f64,
) -> Result<Vec<f64>, SamplerError> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(SamplerError::BadEpsilon(epsilon));
    }
    check_dim(score.dim(), x.len())?;
    let ab = checked_alpha_bar(schedule, t)?;
    let d = x.len();
    let s = score.score(x, t);
    let mut mean = vec![0.0; d];
    tweedie_from(x, &s, ab, &mut mean);
    let delta = weight.grad_log_l(&mean);
    let mut p = vec![0.0; d];
    let mut delta_eff = vec![0.0; d];
    probe(x, &delta, epsilon, &mut p, &mut delta_eff);
    let s_probe = score.score(&p, t);
    let non_finite = |v: &[f64]| v.iter().any(|a| !a.is_finite());
    if non_finite(&s) || non_finite(&mean) || non_finite(&delta) || non_finite(&s_probe) {
        return Err(SamplerError::NonFinite {
            t,
            x_norm: norm(x),
            delta_norm: norm(&delta),
        });
    }
    if delta.iter().all(|&v| v == 0.0) {
        return Ok(s);
    }
    let mut out = vec![0.0; d];
    combine(&s, &s_probe, &delta_eff, ab, epsilon, &mut out);
    if non_finite(&out) {
        return Err(SamplerError::NonFinite {
            t,
            x_norm: norm(x),
            delta_norm: norm(&delta),
        });
    }
    Ok(out)
}

fn checked_beta(schedule: &NoiseSchedule, t: usize) -> Result<f64, SamplerError> {
    let b = schedule.beta_at(t)?;
    if !(b < 1.0) {
        return Err(SamplerError::Beta { t, value: b });
    }
    Ok(b)
}

fn ancestral_into(x: &[f64], q: &[f64], z: Option<&[f64]>, beta: f64, out: &mut [f64]) {
    let inv = 1.0 / (1.0 - beta).sqrt();
    let sb = beta.sqrt();
    for i in 0..x.len() {
        let noise = z.map_or(0.0, |z| sb * z[i]);
        out[i] = (x[i] + beta * q[i]) * inv + noise;
    }
}

fn euler_maruyama_into(x: &[f64], q: &[f64], z: Option<&[f64]>, beta: f64, out: &mut [f64]) {
    let sb = beta.sqrt();
    for i in 0..x.len() {
        let noise = z.map_or(0.0, |z| sb * z[i]);
        out[i] = x[i] + 0.5 * beta * x[i] + beta * q[i] + noise;
    }
}

/// `x_{t−1} = (x_t + β_t q)/√(1 − β_t) + √β_t z`, with `z` ignored at `t = 1`.
pub fn ancestral_step(
    q_score: &[f64],
    schedule: &NoiseSchedule,
    x_t: &[f64],
    t: usize,
    z: &[f64],
) -> Result<Vec<f64>, SamplerError> {
    let beta = checked_beta(schedule, t)?;
    check_dim(x_t.len(), q_score.len())?;
    check_dim(x_t.len(), z.len())?;
    let mut out = vec![0.0; x_t.len()];
    ancestral_into(x_t, q_score, (t > 1).then_some(z), beta, &mut out);
    Ok(out)
}

/// `x_{t−1} = x_t + (β_t/2) x_t + β_t q + √β_t z`, with `z` ignored at `t = 1`.
pub fn euler_maruyama_step(
    q_score: &[f64],
    schedule: &NoiseSchedule,
    x_t: &[f64],
    t: usize,
    z: &[f64],
) -> Result<Vec<f64>, SamplerError> {
    let beta = checked_beta(schedule, t)?;
    check_dim(x_t.len(), q_score.len())?;
    check_dim(x_t.len(), z.len())?;
    let mut out = vec![0.0; x_t.len()];
    euler_maruyama_into(x_t, q_score, (t > 1).then_some(z), beta, &mut out);
    Ok(out)
}

struct ChunkResult {
    finals: Vec<Option<Vec<f64>>>,
    failures: Vec<ChainFailure>,
    trajectories: Vec<Trajectory>,
}

/// Runs `config.n_samples` independent reverse chains from `x_T ~ N(0, I)`.
///
/// Each chain draws from its own stream `(seed, Chain, index)`: first `x_T`,
/// then one normal vector per step with `t > 1`. The weight path consumes no
/// randomness, so with and without a weight the streams are used identically.
pub fn run_sampler(
    score: &dyn ScoreFunction,
    weight: Option<&dyn WeightFunction>,
    schedule: &NoiseSchedule,
    config: &SamplerConfig,
) -> Result<SamplerOutput, SamplerError> {
    config.validate()?;
    let steps = schedule.steps();
    for t in 1..=steps {
        checked_alpha_bar(schedule, t)?;
        checked_beta(schedule, t)?;
    }
    let d = score.dim();
    let n = config.n_samples;
    let n_chunks = n.div_ceil(CHUNK);
    let chunks: Vec<ChunkResult> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(n);
            run_chunk(score, weight, schedule, config, lo, hi, d)
        })
        .collect();

    let mut data = Vec::with_capacity(n * d);
    let mut failures = Vec::new();
    let mut trajectories = Vec::new();
    for chunk in chunks {
        for x in chunk.finals.into_iter().flatten() {
            data.extend_from_slice(&x);
        }
        failures.extend(chunk.failures);
        trajectories.extend(chunk.trajectories);
    }
    let sampler = match weight {
        Some(w) => format!("issgm/{}/{}", config.variant, w.name()),
        None => format!("base/{}", config.variant),
    };
    let meta = BatchMeta {
        source: "reverse_diffusion".into(),
        seed: config.seed,
        sampler,
    };
    Ok(SamplerOutput {
        batch: SampleBatch::new(d, data, meta)?,
        failures,
        trajectories,
    })
}

fn run_chunk(
    score: &dyn ScoreFunction,
    weight: Option<&dyn WeightFunction>,
    schedule: &NoiseSchedule,
    config: &SamplerConfig,
    lo: usize,
    hi: usize,
    d: usize,
) -> ChunkResult {
    let m = hi - lo;
    let mut rngs: Vec<RngStream> = (lo..hi)
        .map(|i| RngStream::derive(config.seed, StreamTag::Chain, i as u64))
        .collect();
    let mut x = vec![0.0; m * d];
    for (row, rng) in x.chunks_exact_mut(d).zip(&mut rngs) {
        rng.fill_normal(row);
    }
    let mut alive = vec![true; m];
    let mut failures = Vec::new();
    let traced = config.trace_chains.saturating_sub(lo).min(m);
    let mut trajectories: Vec<Trajectory> = (0..traced)
        .map(|j| Trajectory {
            chain: lo + j,
            states: vec![x[j * d..(j + 1) * d].to_vec()],
            steps: Vec::new(),
        })
        .collect();

    let mut q = vec![0.0; m * d];
    let mut mean = vec![0.0; m * d];
    let mut delta_eff = vec![0.0; m * d];
    let mut delta_norm = vec![0.0; m];
    let mut next = vec![0.0; m * d];
    let mut z = vec![0.0; d];

    for t in (1..=schedule.steps()).rev() {
        let ab = schedule.ab(t);
        let beta = schedule.b(t);
        let s = score.score_batch(&x, t);
        q.copy_from_slice(&s);

        if let Some(w) = weight {
            tweedie_from(&x, &s, ab, &mut mean);
            let mut probe_rows = Vec::new();
            let mut probe_pts = Vec::new();
            let mut pt = vec![0.0; d];
            for j in 0..m {
                if !alive[j] {
                    continue;
                }
                let r = j * d..(j + 1) * d;
                let delta = w.grad_log_l(&mean[r.clone()]);
                delta_norm[j] = norm(&delta);
                if delta.iter().all(|&v| v == 0.0) {
                    continue;
                }
                probe(
                    &x[r.clone()],
                    &delta,
                    config.epsilon,
                    &mut pt,
                    &mut delta_eff[r],
                );
                probe_rows.push(j);
                probe_pts.extend_from_slice(&pt);
            }
            if !probe_rows.is_empty() {
                let s_probe = score.score_batch(&probe_pts, t);
                for (k, &j) in probe_rows.iter().enumerate() {
                    let r = j * d..(j + 1) * d;
                    combine(
                        &s[r.clone()],
                        &s_probe[k * d..(k + 1) * d],
                        &delta_eff[r.clone()],
                        ab,
                        config.epsilon,
                        &mut q[r],
                    );
                }
            }
        }

        for j in 0..m {
            if !alive[j] {
                continue;
            }
            let r = j * d..(j + 1) * d;
            let noise = if t > 1 {
                rngs[j].fill_normal(&mut z);
                Some(z.as_slice())
            } else {
                None
            };
            match config.variant {
                Variant::Ancestral => ancestral_into(
                    &x[r.clone()],
                    &q[r.clone()],
                    noise,
                    beta,
                    &mut next[r.clone()],
                ),
                Variant::EulerMaruyama => euler_maruyama_into(
                    &x[r.clone()],
                    &q[r.clone()],
                    noise,
                    beta,
                    &mut next[r.clone()],
                ),
            }
            if j < traced {
                let (xs, qs) = (&x[r.clone()], &q[r.clone()]);
                let mut tm = vec![0.0; d];
                tweedie_from(xs, &s[r.clone()], ab, &mut tm);
                let corr: Vec<f64> = qs.iter().zip(&s[r.clone()]).map(|(a, b)| a - b).collect();
                let tr = &mut trajectories[j];
                tr.steps.push(StepDiagnostics {
                    t,
                    tweedie_mean: tm,
                    grad_log_l_norm: if weight.is_some() { delta_norm[j] } else { 0.0 },
                    correction_norm: norm(&corr),
                });
                tr.states.push(next[r.clone()].to_vec());
            }
            if next[r.clone()].iter().any(|v| !v.is_finite()) {
                alive[j] = false;
                failures.push(ChainFailure {
                    chain: lo + j,
                    t,
                    reason: format!(
                        "non-finite state (|x| = {:e}, |grad log l| = {:e})",
                        norm(&x[r.clone()]),
                        delta_norm[j]
                    ),
                });
                // Park the dead chain at the origin so batched score calls stay finite.
                next[r].iter_mut().for_each(|v| *v = 0.0);
            }
        }
        std::mem::swap(&mut x, &mut next);
    }

    let finals = (0..m)
        .map(|j| alive[j].then(|| x[j * d..(j + 1) * d].to_vec()))
        .collect();
    ChunkResult {
        finals,
        failures,
        trajectories,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceStats {
    pub proposals: u64,
    pub accepted: u64,
    pub rate: f64,
    /// Proposals where `l(x) > M`; their acceptance probability was clamped to 1.
    pub bound_violations: u64,
}

/// Accepts base proposals with probability `l(x)/M` until `n` are kept.
///
/// `base(count, seed)` must return `count` samples; round `r` uses seed
/// `derive_seed(seed, Accept, r)` for proposals and stream `(seed, Accept, r)`
/// for the uniforms.
pub fn accept_reject_sample(
    base: &dyn Fn(usize, u64) -> SampleBatch,
    weight: &dyn WeightFunction,
    bound: f64,
    n: usize,
    seed: u64,
) -> Result<(SampleBatch, AcceptanceStats), SamplerError> {
    if !(bound > 0.0 && bound.is_finite()) {
        return Err(SamplerError::BadBound(bound));
    }
    if n == 0 {
        return Err(SamplerError::NoSamples);
    }
    let mut data = Vec::new();
    let mut stats = AcceptanceStats {
        proposals: 0,
        accepted: 0,
        rate: 0.0,
        bound_violations: 0,
    };
    let mut dim = 0;
    let mut round = 0u64;
    while (stats.accepted as usize) < n {
        let proposals = base(PROPOSAL_ROUND, derive_seed(seed, StreamTag::Accept, round));
        dim = proposals.dim();
        let mut rng = RngStream::derive(seed, StreamTag::Accept, round);
        for x in proposals.rows() {
            if stats.accepted as usize == n {
                break;
            }
            stats.proposals += 1;
            let l = weight.l(x);
            let a = l / bound;
            if a > 1.0 {
                stats.bound_violations += 1;
            }
            if rng.uniform() < a.min(1.0) {
                stats.accepted += 1;
                data.extend_from_slice(x);
            }
        }
        stats.rate = stats.accepted as f64 / stats.proposals as f64;
        if stats.proposals >= MIN_PROPOSALS_BEFORE_ABORT && stats.rate < MIN_ACCEPT_RATE {
            return Err(SamplerError::LowAcceptance {
                rate: stats.rate,
                proposals: stats.proposals,
                bound,
            });
        }
        round += 1;
    }
    let meta = BatchMeta {
        source: "accept_reject".into(),
        seed,
        sampler: format!("accept_reject/{}", weight.name()),
    };
    Ok((SampleBatch::new(dim, data, meta)?, stats))
}
