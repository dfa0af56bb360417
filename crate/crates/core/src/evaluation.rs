//! Fidelity measures: binned densities, Jensen–Shannon divergence, weight
//! means, and a quadrature reference for the weighted score.

use serde::{Deserialize, Serialize};
use std::io::Write;
use thiserror::Error;

use crate::datasets::SampleBatch;
use crate::mixture::{log_sum_exp, GaussianMixture, PreparedMixture};
use crate::samplers::{issgm_score, SamplerError};
use crate::schedule::{NoiseSchedule, ScheduleError};
use crate::score_models::ScoreFunction;
use crate::weights::WeightFunction;

pub const DEFAULT_BINS: usize = 100;
pub const DEFAULT_BOUND: f64 = 1.2;
pub const QUAD_START_NODES: usize = 400;
pub const QUAD_MAX_NODES: usize = 3200;
pub const QUAD_TOL: f64 = 1e-4;
/// Kernel half-width in units of its standard deviation.
const KERNEL_SPAN: f64 = 10.0;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("histograms differ in bounds or bins")]
    GridMismatch,
    #[error("need at least 2 bins per axis, got {0:?}")]
    TooFewBins((usize, usize)),
    #[error("degenerate bounds {0:?}")]
    BadBounds([f64; 4]),
    #[error("histograms need 2-D samples, got dimension {0}")]
    NotPlanar(usize),
    #[error("empty batch")]
    Empty,
    #[error("quadrature box does not overlap the base support at x = {x:?}, t = {t}")]
    NoOverlap { x: Vec<f64>, t: usize },
    #[error("all quadrature weights underflow at x = {x:?}, t = {t}; point is far off support")]
    Underflow { x: Vec<f64>, t: usize },
    #[error(
        "quadrature did not converge to {tol:e} by {nodes} nodes per axis (last change {change:e})"
    )]
    NotConverged { tol: f64, nodes: usize, change: f64 },
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
}

/// Binning convention for histogram comparisons.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Convention {
    pub bins: (usize, usize),
    /// `[x_min, x_max, y_min, y_max]`.
    pub bounds: [f64; 4],
    pub log_base: String,
}

impl Default for Convention {
    fn default() -> Self {
        Self {
            bins: (DEFAULT_BINS, DEFAULT_BINS),
            bounds: [-DEFAULT_BOUND, DEFAULT_BOUND, -DEFAULT_BOUND, DEFAULT_BOUND],
            log_base: "e".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramGrid {
    bounds: [f64; 4],
    bins: (usize, usize),
    /// Row-major over `(x bin, y bin)`.
    counts: Vec<u64>,
    overflow: u64,
}

fn bin_index(v: f64, lo: f64, hi: f64, n: usize) -> Option<usize> {
    if !(v >= lo && v <= hi) {
        return None;
    }
    if v == hi {
        return Some(n - 1);
    }
    let i = ((v - lo) / (hi - lo) * n as f64) as usize;
    Some(i.min(n - 1))
}

impl HistogramGrid {
    pub fn bounds(&self) -> [f64; 4] {
        self.bounds
    }

    pub fn bins(&self) -> (usize, usize) {
        self.bins
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn count_at(&self, ix: usize, iy: usize) -> u64 {
        self.counts[ix * self.bins.1 + iy]
    }

    pub fn overflow(&self) -> u64 {
        self.overflow
    }

    pub fn in_bounds(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Normalized in-bounds counts; all zeros when nothing landed in bounds.
    pub fn density(&self) -> Vec<f64> {
        let total = self.in_bounds();
        if total == 0 {
            return vec![0.0; self.counts.len()];
        }
        self.counts
            .iter()
            .map(|&c| c as f64 / total as f64)
            .collect()
    }

    fn same_grid(&self, other: &Self) -> bool {
        self.bins == other.bins
            && self
                .bounds
                .iter()
                .zip(&other.bounds)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

pub fn histogram2d(
    batch: &SampleBatch,
    bounds: [f64; 4],
    bins: (usize, usize),
) -> Result<HistogramGrid, EvalError> {
    if batch.dim() != 2 {
        return Err(EvalError::NotPlanar(batch.dim()));
    }
    histogram2d_points(batch.data(), bounds, bins)
}

/// Histogram of row-major `(x, y)` pairs.
pub fn histogram2d_points(
    xy: &[f64],
    bounds: [f64; 4],
    bins: (usize, usize),
) -> Result<HistogramGrid, EvalError> {
    if bins.0 < 2 || bins.1 < 2 {
        return Err(EvalError::TooFewBins(bins));
    }
    let [x0, x1, y0, y1] = bounds;
    if !(x0 < x1 && y0 < y1 && bounds.iter().all(|b| b.is_finite())) {
        return Err(EvalError::BadBounds(bounds));
    }
    let mut counts = vec![0u64; bins.0 * bins.1];
    let mut overflow = 0;
    for p in xy.chunks_exact(2) {
        match (
            bin_index(p[0], x0, x1, bins.0),
            bin_index(p[1], y0, y1, bins.1),
        ) {
            (Some(i), Some(j)) => counts[i * bins.1 + j] += 1,
            _ => overflow += 1,
        }
    }
    Ok(HistogramGrid {
        bounds,
        bins,
        counts,
        overflow,
    })
}

/// `p ln(p/m)` with `0 ln 0 = 0`.
fn kl_term(p: f64, m: f64) -> f64 {
    if p == 0.0 {
        0.0
    } else {
        p * (p / m).ln()
    }
}

/// Jensen–Shannon divergence in nats between the normalized histograms.
pub fn jsd(h1: &HistogramGrid, h2: &HistogramGrid) -> Result<f64, EvalError> {
    if !h1.same_grid(h2) {
        return Err(EvalError::GridMismatch);
    }
    let p = h1.density();
    let q = h2.density();
    let mut total = 0.0;
    for (&a, &b) in p.iter().zip(&q) {
        let m = 0.5 * (a + b);
        // Both addition orders give the same bits, so jsd(a, b) == jsd(b, a).
        total += 0.5 * (kl_term(a, m) + kl_term(b, m));
    }
    Ok(total.max(0.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanWeight {
    pub mean: f64,
    pub std_error: f64,
    pub n: usize,
}

/// Sample mean of `l(x)` over the batch with its standard error.
pub fn mean_weight(
    batch: &SampleBatch,
    weight: &dyn WeightFunction,
) -> Result<MeanWeight, EvalError> {
    let ls: Vec<f64> = batch.rows().map(|x| weight.l(x)).collect();
    mean_and_se(&ls)
}

pub fn mean_and_se(values: &[f64]) -> Result<MeanWeight, EvalError> {
    let n = values.len();
    if n == 0 {
        return Err(EvalError::Empty);
    }
    let first = values[0];
    if values.iter().all(|&v| v == first) {
        return Ok(MeanWeight {
            mean: first,
            std_error: 0.0,
            n,
        });
    }
    let mut mean = values.iter().sum::<f64>() / n as f64;
    mean += values.iter().map(|v| v - mean).sum::<f64>() / n as f64;
    let var = if n > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    Ok(MeanWeight {
        mean,
        std_error: (var / n as f64).sqrt(),
        n,
    })
}

/// Density values on a regular 2-D node grid, bilinearly interpolated and
/// zero outside.
#[derive(Clone, Debug, PartialEq)]
pub struct TabulatedDensity {
    bounds: [f64; 4],
    nodes: (usize, usize),
    /// Row-major over `(x node, y node)`.
    values: Vec<f64>,
}

impl TabulatedDensity {
    pub fn new(
        bounds: [f64; 4],
        nodes: (usize, usize),
        values: Vec<f64>,
    ) -> Result<Self, EvalError> {
        if nodes.0 < 2 || nodes.1 < 2 {
            return Err(EvalError::TooFewBins(nodes));
        }
        if !(bounds[0] < bounds[1] && bounds[2] < bounds[3]) || values.len() != nodes.0 * nodes.1 {
            return Err(EvalError::BadBounds(bounds));
        }
        Ok(Self {
            bounds,
            nodes,
            values,
        })
    }

    /// Histogram density placed at bin centres; bounds shrink by half a bin.
    pub fn from_histogram(h: &HistogramGrid) -> Result<Self, EvalError> {
        let [x0, x1, y0, y1] = h.bounds;
        let (bx, by) = h.bins;
        let (dx, dy) = ((x1 - x0) / bx as f64, (y1 - y0) / by as f64);
        let values = h.density().iter().map(|p| p / (dx * dy)).collect();
        Self::new(
            [x0 + dx / 2.0, x1 - dx / 2.0, y0 + dy / 2.0, y1 - dy / 2.0],
            h.bins,
            values,
        )
    }

    pub fn bounds(&self) -> [f64; 4] {
        self.bounds
    }

    pub fn value(&self, x: f64, y: f64) -> f64 {
        let [x0, x1, y0, y1] = self.bounds;
        if !(x >= x0 && x <= x1 && y >= y0 && y <= y1) {
            return 0.0;
        }
        let (nx, ny) = self.nodes;
        let fx = (x - x0) / (x1 - x0) * (nx - 1) as f64;
        let fy = (y - y0) / (y1 - y0) * (ny - 1) as f64;
        let i = (fx as usize).min(nx - 2);
        let j = (fy as usize).min(ny - 2);
        let (u, v) = (fx - i as f64, fy - j as f64);
        let at = |a: usize, b: usize| self.values[a * ny + b];
        (1.0 - u) * (1.0 - v) * at(i, j)
            + u * (1.0 - v) * at(i + 1, j)
            + (1.0 - u) * v * at(i, j + 1)
            + u * v * at(i + 1, j + 1)
    }
}

/// Base density `p_0` for the quadrature oracle.
#[derive(Clone, Debug)]
pub enum BaseDensity {
    Mixture(GaussianMixture),
    Tabulated(TabulatedDensity),
}

enum PreparedBase<'a> {
    Mixture(PreparedMixture),
    Tabulated(&'a TabulatedDensity),
}

impl PreparedBase<'_> {
    fn log_density(&self, y: &[f64]) -> f64 {
        match self {
            PreparedBase::Mixture(pm) => pm.log_density(y),
            PreparedBase::Tabulated(td) => td.value(y[0], y[1]).ln(),
        }
    }
}

impl BaseDensity {
    pub fn dim(&self) -> usize {
        match self {
            BaseDensity::Mixture(gm) => gm.dim(),
            BaseDensity::Tabulated(_) => 2,
        }
    }

    /// Axis-aligned box holding essentially all of the mass.
    pub fn support_box(&self) -> [f64; 4] {
        match self {
            BaseDensity::Mixture(gm) => {
                let d = gm.dim();
                let mut b = [
                    f64::INFINITY,
                    f64::NEG_INFINITY,
                    f64::INFINITY,
                    f64::NEG_INFINITY,
                ];
                for (mu, cov) in gm.means().iter().zip(gm.covariances()) {
                    for axis in 0..2.min(d) {
                        let half = KERNEL_SPAN * cov[axis * d + axis].sqrt();
                        b[2 * axis] = b[2 * axis].min(mu[axis] - half);
                        b[2 * axis + 1] = b[2 * axis + 1].max(mu[axis] + half);
                    }
                }
                b
            }
            BaseDensity::Tabulated(td) => td.bounds(),
        }
    }

    fn prepare(&self) -> PreparedBase<'_> {
        match self {
            BaseDensity::Mixture(gm) => PreparedBase::Mixture(gm.perturbed(1.0)),
            BaseDensity::Tabulated(td) => PreparedBase::Tabulated(td),
        }
    }
}

fn trapezoid_weight(i: usize, n: usize) -> f64 {
    if i == 0 || i + 1 == n {
        0.5
    } else {
        1.0
    }
}

/// One trapezoid pass with `nodes` points per axis over `bx`.
fn q_score_pass(
    base: &PreparedBase<'_>,
    weight: Option<&dyn WeightFunction>,
    ab: f64,
    x: &[f64],
    bx: [f64; 4],
    nodes: usize,
) -> Option<[f64; 2]> {
    let sa = ab.sqrt();
    let var = 1.0 - ab;
    let hx = (bx[1] - bx[0]) / (nodes - 1) as f64;
    let hy = (bx[3] - bx[2]) / (nodes - 1) as f64;
    let mut logw = Vec::with_capacity(nodes * nodes);
    let mut drift = Vec::with_capacity(nodes * nodes);
    let mut y = [0.0; 2];
    for i in 0..nodes {
        y[0] = bx[0] + i as f64 * hx;
        for j in 0..nodes {
            y[1] = bx[2] + j as f64 * hy;
            let r = [x[0] - sa * y[0], x[1] - sa * y[1]];
            let mut lw = -(r[0] * r[0] + r[1] * r[1]) / (2.0 * var) + base.log_density(&y);
            if let Some(w) = weight {
                lw += w.log_l(&y);
            }
            lw += (trapezoid_weight(i, nodes) * trapezoid_weight(j, nodes)).ln();
            logw.push(lw);
            drift.push([-r[0] / var, -r[1] / var]);
        }
    }
    let lse = log_sum_exp(&logw);
    if !lse.is_finite() {
        return None;
    }
    let mut s = [0.0; 2];
    for (lw, g) in logw.iter().zip(&drift) {
        let p = (lw - lse).exp();
        s[0] += p * g[0];
        s[1] += p * g[1];
    }
    Some(s)
}

/// Reference `∇_x log q_t(x)` for `q_t(x) ∝ ∫ N(x; √ᾱ y, (1 − ᾱ) I) l(y) p_0(y) dy`,
/// by log-space trapezoid quadrature over the overlap of the base support and
/// the kernel window. Resolution doubles until successive results agree to
/// [`QUAD_TOL`].
pub fn quadrature_q_score(
    p0: &BaseDensity,
    weight: Option<&dyn WeightFunction>,
    schedule: &NoiseSchedule,
    t: usize,
    x: &[f64],
) -> Result<Vec<f64>, EvalError> {
    if x.len() != 2 || p0.dim() != 2 {
        return Err(EvalError::NotPlanar(x.len()));
    }
    let ab = schedule.alpha_bar_at(t)?;
    let sa = ab.sqrt();
    let half = KERNEL_SPAN * ((1.0 - ab) / ab).sqrt();
    let sup = p0.support_box();
    let bx = [
        sup[0].max(x[0] / sa - half),
        sup[1].min(x[0] / sa + half),
        sup[2].max(x[1] / sa - half),
        sup[3].min(x[1] / sa + half),
    ];
    if !(bx[0] < bx[1] && bx[2] < bx[3]) {
        return Err(EvalError::NoOverlap { x: x.to_vec(), t });
    }
    let base = p0.prepare();
    let underflow = || EvalError::Underflow { x: x.to_vec(), t };
    let mut nodes = QUAD_START_NODES;
    let mut prev = q_score_pass(&base, weight, ab, x, bx, nodes).ok_or_else(underflow)?;
    let mut change = f64::INFINITY;
    while nodes < QUAD_MAX_NODES {
        nodes *= 2;
        let next = q_score_pass(&base, weight, ab, x, bx, nodes).ok_or_else(underflow)?;
        change = (next[0] - prev[0]).abs().max((next[1] - prev[1]).abs());
        prev = next;
        if change <= QUAD_TOL {
            return Ok(prev.to_vec());
        }
    }
    Err(EvalError::NotConverged {
        tol: QUAD_TOL,
        nodes,
        change,
    })
}

/// `E_p[l]` and `E_p[l^2]` by trapezoid quadrature over the base support box.
pub fn quadrature_weight_moments(
    p0: &BaseDensity,
    weight: &dyn WeightFunction,
    nodes: usize,
) -> (f64, f64) {
    let bx = p0.support_box();
    let base = p0.prepare();
    let hx = (bx[1] - bx[0]) / (nodes - 1) as f64;
    let hy = (bx[3] - bx[2]) / (nodes - 1) as f64;
    let (mut m0, mut m1, mut m2) = (0.0, 0.0, 0.0);
    for i in 0..nodes {
        for j in 0..nodes {
            let y = [bx[0] + i as f64 * hx, bx[2] + j as f64 * hy];
            let c = trapezoid_weight(i, nodes)
                * trapezoid_weight(j, nodes)
                * base.log_density(&y).exp();
            let l = weight.l(&y);
            m0 += c;
            m1 += c * l;
            m2 += c * l * l;
        }
    }
    (m1 / m0, m2 / m0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub t: usize,
    pub mean_gap: f64,
    pub max_gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub rows: Vec<GapRow>,
    pub probes: Vec<Vec<f64>>,
    pub epsilon: f64,
}

impl GapReport {
    pub fn row(&self, t: usize) -> Option<&GapRow> {
        self.rows.iter().find(|r| r.t == t)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,mean_gap,max_gap")?;
        for r in &self.rows {
            writeln!(w, "{},{:.16e},{:.16e}", r.t, r.mean_gap, r.max_gap)?;
        }
        Ok(())
    }
}

/// Distance between the quadrature reference and the importance-sampling
/// score at each probe, summarized per step.
pub fn score_gap_report(
    score: &dyn ScoreFunction,
    p0: &BaseDensity,
    weight: &dyn WeightFunction,
    schedule: &NoiseSchedule,
    probes: &[Vec<f64>],
    t_values: &[usize],
    epsilon: f64,
) -> Result<GapReport, EvalError> {
    let reference = |x: &[f64], t: usize| quadrature_q_score(p0, Some(weight), schedule, t, x);
    score_gap_against(
        &reference, score, weight, schedule, probes, t_values, epsilon,
    )
}

/// Reference `∇ log q_t(x)` at `(x, t)`.
pub type ReferenceScore<'a> = dyn Fn(&[f64], usize) -> Result<Vec<f64>, EvalError> + Sync + 'a;

/// As [`score_gap_report`] with a caller-supplied reference `∇ log q_t(x)`.
pub fn score_gap_against(
    reference: &ReferenceScore<'_>,
    score: &dyn ScoreFunction,
    weight: &dyn WeightFunction,
    schedule: &NoiseSchedule,
    probes: &[Vec<f64>],
    t_values: &[usize],
    epsilon: f64,
) -> Result<GapReport, EvalError> {
    use rayon::prelude::*;
    if probes.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut rows = Vec::with_capacity(t_values.len());
    for &t in t_values {
        let gaps: Vec<f64> = probes
            .par_iter()
            .map(|x| -> Result<f64, EvalError> {
                let exact = reference(x, t)?;
                let approx = issgm_score(score, weight, schedule, x, t, epsilon)?;
                Ok(exact
                    .iter()
                    .zip(&approx)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt())
            })
            .collect::<Result<_, _>>()?;
        rows.push(GapRow {
            t,
            mean_gap: gaps.iter().sum::<f64>() / gaps.len() as f64,
            max_gap: gaps.iter().copied().fold(0.0, f64::max),
        });
    }
    Ok(GapReport {
        rows,
        probes: probes.to_vec(),
        epsilon,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub jsd: f64,
    pub floor_jsd: Option<f64>,
    pub bins: (usize, usize),
    pub bounds: [f64; 4],
    pub log_base: String,
    pub n_samples: [usize; 2],
    pub overflow_counts: [u64; 2],
    /// Mean weight of batch `a` and of batch `b`.
    pub mean_weight: Option<[MeanWeight; 2]>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::BatchMeta;
    use crate::weights::{make_exp_linear, make_norm_squared};

    fn batch(data: Vec<f64>) -> SampleBatch {
        SampleBatch::new(
            2,
            data,
            BatchMeta {
                source: "test".into(),
                seed: 0,
                sampler: "test".into(),
            },
        )
        .unwrap()
    }

    const B: [f64; 4] = [-1.2, 1.2, -1.2, 1.2];

    #[test]
    fn histogram_binning_rules() {
        let h = histogram2d(&batch(vec![0.0, 0.0]), B, (100, 100)).unwrap();
        assert_eq!(h.in_bounds(), 1);
        assert_eq!(h.count_at(50, 50), 1);
        let h = histogram2d(
            &batch(vec![1.2, -1.2, 1.3, 0.0, f64::MAX, 0.0]),
            B,
            (10, 10),
        )
        .unwrap();
        assert_eq!(h.count_at(9, 0), 1);
        assert_eq!(h.overflow(), 2);
        assert_eq!(h.in_bounds() + h.overflow(), 3);
        assert!(histogram2d(&batch(vec![0.0, 0.0]), B, (1, 10)).is_err());
        assert!(histogram2d(&batch(vec![0.0, 0.0]), [1.0, 1.0, 0.0, 1.0], (10, 10)).is_err());
    }

    #[test]
    fn jsd_examples() {
        let a = histogram2d(&batch(vec![-0.5, -0.5, 0.3, 0.1]), B, (10, 10)).unwrap();
        let b = histogram2d(&batch(vec![0.9, 0.9]), B, (10, 10)).unwrap();
        assert_eq!(jsd(&a, &a).unwrap(), 0.0);
        assert!((jsd(&a, &b).unwrap() - 2f64.ln()).abs() < 1e-15);
        let c = histogram2d(&batch(vec![0.0, 0.0]), B, (10, 12)).unwrap();
        assert!(matches!(jsd(&a, &c), Err(EvalError::GridMismatch)));
    }

    #[test]
    fn jsd_shifted_uniforms() {
        // U[0,1] against U[0.5,1.5] on a fine grid of the segment.
        let n = 2000;
        let u: Vec<f64> = (0..n)
            .flat_map(|i| [(i as f64 + 0.5) / n as f64, 0.0])
            .collect();
        let v: Vec<f64> = (0..n)
            .flat_map(|i| [0.5 + (i as f64 + 0.5) / n as f64, 0.0])
            .collect();
        let bounds = [0.0, 1.5, -0.5, 0.5];
        let hu = histogram2d_points(&u, bounds, (1500, 2)).unwrap();
        let hv = histogram2d_points(&v, bounds, (1500, 2)).unwrap();
        assert!((jsd(&hu, &hv).unwrap() - 0.5 * 2f64.ln()).abs() < 1e-3);
    }

    #[test]
    fn constant_weight_mean() {
        let w = make_exp_linear(vec![0.0, 0.0], 0.7f64.ln());
        let m = mean_weight(&batch(vec![0.1, 0.2, -0.3, 0.5, 0.9, 0.0]), &w).unwrap();
        assert_eq!(m.mean, 0.7f64.ln().exp());
        assert_eq!(m.std_error, 0.0);
        assert!(mean_and_se(&[]).is_err());
    }

    #[test]
    fn tabulated_interpolation() {
        let td =
            TabulatedDensity::new([0.0, 1.0, 0.0, 1.0], (2, 2), vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(td.value(0.5, 0.5), 1.5);
        assert_eq!(td.value(1.0, 1.0), 3.0);
        assert_eq!(td.value(1.5, 0.5), 0.0);
    }

    #[test]
    fn quadrature_gaussian_cases() {
        let s = NoiseSchedule::cosine(1000, 0.008).unwrap();
        let p0 = BaseDensity::Mixture(GaussianMixture::standard_normal(2));
        let a = [1.0, 0.0];
        let w = make_exp_linear(a.to_vec(), 0.0);
        for t in [10, 500, 900] {
            let ab = s.alpha_bar_at(t).unwrap();
            for x in [[0.3, -0.4], [-1.0, 0.8]] {
                let q = quadrature_q_score(&p0, None, &s, t, &x).unwrap();
                for i in 0..2 {
                    assert!((q[i] + x[i]).abs() < 1e-6, "t={t} {q:?}");
                }
                let q = quadrature_q_score(&p0, Some(&w), &s, t, &x).unwrap();
                for i in 0..2 {
                    assert!(
                        (q[i] - (-x[i] + ab.sqrt() * a[i])).abs() < 1e-5,
                        "t={t} {q:?}"
                    );
                }
            }
        }
    }

    #[test]
    fn quadrature_errors() {
        let s = NoiseSchedule::cosine(1000, 0.008).unwrap();
        let p0 = BaseDensity::Mixture(GaussianMixture::standard_normal(2));
        assert!(matches!(
            quadrature_q_score(&p0, None, &s, 1, &[50.0, 0.0]),
            Err(EvalError::NoOverlap { .. })
        ));
        assert!(quadrature_q_score(&p0, None, &s, 1, &[0.0]).is_err());
    }

    #[test]
    fn weight_moments_of_standard_normal() {
        let p0 = BaseDensity::Mixture(GaussianMixture::standard_normal(2));
        let (m1, m2) = quadrature_weight_moments(&p0, &make_norm_squared(1e-12), 801);
        // ‖x‖² ~ χ²₂: mean 2, second moment 8.
        assert!((m1 - 2.0).abs() < 1e-6);
        assert!((m2 - 8.0).abs() < 1e-5);
    }

    #[test]
    fn gap_report_csv() {
        let r = GapReport {
            rows: vec![GapRow {
                t: 10,
                mean_gap: 0.5,
                max_gap: 1.0,
            }],
            probes: vec![],
            epsilon: 1e-3,
        };
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "t,mean_gap,max_gap\n10,5.0000000000000000e-1,1.0000000000000000e0\n"
        );
    }
}
