//! Training-free importance sampling with score-based diffusion models.
//!
//! Given the score of a base distribution `p` and a differentiable positive
//! weight `l`, the samplers draw from `q(x) ∝ l(x) p(x)` by running the
//! reverse diffusion with a corrected score, without retraining.

// `!(a > b)` is used deliberately so that NaN takes the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod datasets;
pub mod evaluation;
pub mod mixture;
pub mod rng;
pub mod samplers;
pub mod schedule;
pub mod score_models;
pub mod weights;

pub use autodiff::{grad_check, AutodiffError, Gradients, Tape, Tensor, Var};
pub use datasets::{BatchMeta, DataError, Dataset, SampleBatch};
pub use evaluation::{
    histogram2d, histogram2d_points, jsd, mean_weight, quadrature_q_score, score_gap_against,
    score_gap_report, BaseDensity, Convention, EvalError, EvalReport, GapReport, HistogramGrid,
    MeanWeight,
};
pub use mixture::{GaussianMixture, MixtureError};
pub use rng::{RngStream, StreamTag};
pub use samplers::{
    accept_reject_sample, issgm_score, run_sampler, tweedie_mean, AcceptanceStats, SamplerConfig,
    SamplerError, SamplerOutput, Trajectory, Variant,
};
pub use schedule::{NoiseSchedule, ScheduleError};
pub use score_models::{
    Checkpoint, MixtureScore, MlpScore, MlpScoreParams, ScoreError, ScoreFunction, TrainConfig,
};
pub use weights::{WeightFunction, WeightSpec, WeightSpecError};

/// Any error raised by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Mixture(#[from] MixtureError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Weight(#[from] WeightSpecError),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}
