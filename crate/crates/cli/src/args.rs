//! Command-line grammar and the resolved per-command configurations.
//!
//! Every flag is optional on the command line; unset flags fall back to the
//! matching section of the `--config` file, then to the defaults below.

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "tfis",
    version,
    about = "Training-free importance sampling with score-based diffusion models"
)]
pub struct Cli {
    /// JSON file with one object per command name; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic 2-D dataset as CSV.
    GenData(GenDataArgs),
    /// Train an ε-predicting MLP score model on a CSV dataset.
    Train(TrainArgs),
    /// Reverse-diffusion sampling, optionally importance weighted.
    Sample(SampleArgs),
    /// Exact importance samples by acceptance-rejection on a dataset.
    OracleSample(OracleArgs),
    /// Compare two sample files by histogram JSD and mean weight.
    Eval(EvalArgs),
    /// Run invariant suites.
    Verify(VerifyArgs),
    /// Render a sample file as a log-density heatmap (binary PPM).
    Render(RenderArgs),
}

fn parse_pair(s: &str) -> Result<[usize; 2], String> {
    let v: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse().map_err(|_| format!("bad bin count '{p}'")))
        .collect::<Result<_, _>>()?;
    match v.as_slice() {
        [n] => Ok([*n, *n]),
        [a, b] => Ok([*a, *b]),
        _ => Err("expected N or NX,NY".into()),
    }
}

fn parse_bounds(s: &str) -> Result<[f64; 4], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse().map_err(|_| format!("bad bound '{p}'")))
        .collect::<Result<_, _>>()?;
    match v.as_slice() {
        [lo, hi] => Ok([*lo, *hi, *lo, *hi]),
        [a, b, c, d] => Ok([*a, *b, *c, *d]),
        _ => Err("expected LO,HI or XMIN,XMAX,YMIN,YMAX".into()),
    }
}

/// Copies every `Some` flag over the resolved config field of the same name.
macro_rules! overlay {
    ($cfg:expr, $args:expr; $($field:ident),* $(,)?) => {
        $( if let Some(v) = &$args.$field { $cfg.$field = v.clone(); } )*
    };
    ($cfg:expr, $args:expr; opt $($field:ident),* $(,)?) => {
        $( if let Some(v) = &$args.$field { $cfg.$field = Some(v.clone()); } )*
    };
}

pub(crate) fn required<T: Clone>(v: &Option<T>, flag: &str) -> Result<T, CliError> {
    v.clone()
        .ok_or_else(|| CliError::usage(format!("missing required --{flag}")))
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// spiral | circles | pinwheel | 8gaussians
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenDataConfig {
    pub dataset: String,
    pub n: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl Default for GenDataConfig {
    fn default() -> Self {
        Self {
            dataset: "spiral".into(),
            n: 100_000,
            seed: 0,
            out: None,
        }
    }
}

impl GenDataArgs {
    pub fn apply(&self, cfg: &mut GenDataConfig) {
        overlay!(cfg, self; dataset, n, seed);
        overlay!(cfg, self; opt out);
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// CSV dataset (a `.meta.json` sidecar, if present, supplies provenance).
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Number of diffusion steps.
    #[arg(long = "T")]
    pub steps: Option<usize>,
    #[arg(long)]
    pub eps_d: Option<f64>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Checkpoint path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-epoch loss CSV (default: `<out>.loss.csv`).
    #[arg(long)]
    pub loss_log: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainCliConfig {
    pub data: Option<PathBuf>,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    #[serde(rename = "T")]
    pub steps: usize,
    pub eps_d: f64,
    pub hidden: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub loss_log: Option<PathBuf>,
}

impl Default for TrainCliConfig {
    fn default() -> Self {
        Self {
            data: None,
            epochs: 300,
            batch: 1024,
            lr: 1e-3,
            steps: 1000,
            eps_d: 0.008,
            hidden: 128,
            seed: 0,
            out: None,
            loss_log: None,
        }
    }
}

impl TrainArgs {
    pub fn apply(&self, cfg: &mut TrainCliConfig) {
        overlay!(cfg, self; epochs, batch, lr, steps, eps_d, hidden, seed);
        overlay!(cfg, self; opt data, out, loss_log);
    }
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// Checkpoint path, or analytic:8gaussians | analytic:std_normal | analytic:json:PATH
    #[arg(long)]
    pub score: Option<String>,
    /// Importance weight, e.g. norm_sq, elem_sum, exp_linear:1,0,0, logistic:4,0,0
    #[arg(long)]
    pub weight: Option<String>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// ancestral | em
    #[arg(long)]
    pub variant: Option<String>,
    /// Diffusion steps for analytic scores (checkpoints carry their own).
    #[arg(long = "T")]
    pub steps: Option<usize>,
    #[arg(long)]
    pub eps_d: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Dump full trajectories of the first N chains.
    #[arg(long)]
    pub trace: Option<usize>,
    /// Directory for trajectory CSVs (default: next to `--out`).
    #[arg(long)]
    pub trace_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleCliConfig {
    pub score: Option<String>,
    pub weight: Option<String>,
    pub epsilon: f64,
    pub n: usize,
    pub seed: u64,
    pub variant: String,
    #[serde(rename = "T")]
    pub steps: Option<usize>,
    pub eps_d: Option<f64>,
    pub out: Option<PathBuf>,
    pub trace: usize,
    pub trace_dir: Option<PathBuf>,
}

impl Default for SampleCliConfig {
    fn default() -> Self {
        Self {
            score: None,
            weight: None,
            epsilon: 1e-3,
            n: 10_000,
            seed: 0,
            variant: "ancestral".into(),
            steps: None,
            eps_d: None,
            out: None,
            trace: 0,
            trace_dir: None,
        }
    }
}

impl SampleArgs {
    pub fn apply(&self, cfg: &mut SampleCliConfig) {
        overlay!(cfg, self; epsilon, n, seed, variant, trace);
        overlay!(cfg, self; opt score, weight, steps, eps_d, out, trace_dir);
    }
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long)]
    pub weight: Option<String>,
    /// Upper bound M on the weight over the data.
    #[arg(long)]
    pub bound: Option<f64>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleCliConfig {
    pub dataset: String,
    pub weight: Option<String>,
    pub bound: Option<f64>,
    pub n: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl Default for OracleCliConfig {
    fn default() -> Self {
        Self {
            dataset: "spiral".into(),
            weight: None,
            bound: None,
            n: 100_000,
            seed: 0,
            out: None,
        }
    }
}

impl OracleArgs {
    pub fn apply(&self, cfg: &mut OracleCliConfig) {
        overlay!(cfg, self; dataset, n, seed);
        overlay!(cfg, self; opt weight, bound, out);
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Candidate samples.
    #[arg(long)]
    pub a: Option<PathBuf>,
    /// Reference samples.
    #[arg(long)]
    pub b: Option<PathBuf>,
    /// Second, independent reference batch; JSD(b, floor) is the noise floor.
    #[arg(long)]
    pub floor: Option<PathBuf>,
    #[arg(long)]
    pub weight: Option<String>,
    /// N or NX,NY
    #[arg(long, value_parser = parse_pair)]
    pub bins: Option<[usize; 2]>,
    /// LO,HI or XMIN,XMAX,YMIN,YMAX
    #[arg(long, value_parser = parse_bounds, allow_hyphen_values = true)]
    pub bounds: Option<[f64; 4]>,
    /// JSON file with a stored `{bins, bounds}` convention that must match.
    #[arg(long)]
    pub convention: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalCliConfig {
    pub a: Option<PathBuf>,
    pub b: Option<PathBuf>,
    pub floor: Option<PathBuf>,
    pub weight: Option<String>,
    pub bins: [usize; 2],
    pub bounds: [f64; 4],
    pub convention: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Default for EvalCliConfig {
    fn default() -> Self {
        Self {
            a: None,
            b: None,
            floor: None,
            weight: None,
            bins: [100, 100],
            bounds: [-1.2, 1.2, -1.2, 1.2],
            convention: None,
            out: None,
        }
    }
}

impl EvalArgs {
    pub fn apply(&self, cfg: &mut EvalCliConfig) {
        overlay!(cfg, self; bins, bounds);
        overlay!(cfg, self; opt a, b, floor, weight, convention, out);
    }
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// gradcheck | schedule | score-oracle | gap
    pub suite: String,
    #[arg(long = "T")]
    pub steps: Option<usize>,
    #[arg(long)]
    pub eps_d: Option<f64>,
    /// Base mixture: 8gaussians | std_normal | json:PATH
    #[arg(long)]
    pub base: Option<String>,
    #[arg(long)]
    pub weight: Option<String>,
    /// Steps for the gap suite, e.g. 10,100,500
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub t_list: Option<Vec<usize>>,
    #[arg(long)]
    pub probes: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Pass threshold overriding the suite default.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Machine-readable results (JSON; the gap suite also writes `<out>.csv`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyCliConfig {
    pub suite: String,
    #[serde(rename = "T")]
    pub steps: usize,
    pub eps_d: f64,
    pub base: String,
    pub weight: String,
    pub t_list: Vec<usize>,
    pub probes: usize,
    pub seed: u64,
    pub epsilon: f64,
    pub tol: Option<f64>,
    pub out: Option<PathBuf>,
}

impl Default for VerifyCliConfig {
    fn default() -> Self {
        Self {
            suite: String::new(),
            steps: 1000,
            eps_d: 0.008,
            base: "8gaussians".into(),
            weight: "norm_sq".into(),
            t_list: vec![10, 100, 500],
            probes: 20,
            seed: 0,
            epsilon: 1e-3,
            tol: None,
            out: None,
        }
    }
}

impl VerifyArgs {
    pub fn apply(&self, cfg: &mut VerifyCliConfig) {
        cfg.suite = self.suite.clone();
        overlay!(cfg, self; steps, eps_d, base, weight, t_list, probes, seed, epsilon);
        overlay!(cfg, self; opt tol, out);
    }
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long = "in")]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Pixels per side, or NX,NY
    #[arg(long, value_parser = parse_pair)]
    pub bins: Option<[usize; 2]>,
    #[arg(long, value_parser = parse_bounds, allow_hyphen_values = true)]
    pub bounds: Option<[f64; 4]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderCliConfig {
    #[serde(rename = "in")]
    pub input: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub bins: [usize; 2],
    pub bounds: [f64; 4],
}

impl Default for RenderCliConfig {
    fn default() -> Self {
        Self {
            input: None,
            out: None,
            bins: [200, 200],
            bounds: [-1.2, 1.2, -1.2, 1.2],
        }
    }
}

impl RenderArgs {
    pub fn apply(&self, cfg: &mut RenderCliConfig) {
        overlay!(cfg, self; bins, bounds);
        overlay!(cfg, self; opt input, out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_and_bounds_parsing() {
        assert_eq!(parse_pair("100"), Ok([100, 100]));
        assert_eq!(parse_pair("10,20"), Ok([10, 20]));
        assert!(parse_pair("1,2,3").is_err());
        assert_eq!(parse_bounds("-1.2,1.2"), Ok([-1.2, 1.2, -1.2, 1.2]));
        assert_eq!(parse_bounds("0,1,2,3"), Ok([0.0, 1.0, 2.0, 3.0]));
        assert!(parse_bounds("0").is_err());
    }

    #[test]
    fn flags_override_config() {
        let mut cfg: GenDataConfig = serde_json::from_str(r#"{"n": 5, "seed": 9}"#).unwrap();
        assert_eq!(cfg.dataset, "spiral");
        let args = GenDataArgs {
            dataset: None,
            n: Some(7),
            seed: None,
            out: None,
        };
        args.apply(&mut cfg);
        assert_eq!((cfg.n, cfg.seed), (7, 9));
        assert!(serde_json::from_str::<GenDataConfig>(r#"{"bogus": 1}"#).is_err());
    }
}
