//! Shared fixtures for the benchmarks.

use tfis::datasets::{mixture_8gaussians, Dataset, SampleBatch};
use tfis::schedule::NoiseSchedule;
use tfis::score_models::MixtureScore;

/// The default 1000-step cosine schedule.
pub fn schedule() -> NoiseSchedule {
    NoiseSchedule::cosine(1000, 0.008).expect("valid schedule")
}

/// Exact score of the 8-Gaussians mixture under [`schedule`].
pub fn eight_gaussians_score() -> MixtureScore {
    MixtureScore::new(mixture_8gaussians(), schedule())
}

/// `n` spiral points with a fixed seed.
pub fn spiral(n: usize) -> SampleBatch {
    Dataset::Spiral.sample(n, 0)
}
