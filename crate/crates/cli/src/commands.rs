use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use tfis::datasets::{mixture_8gaussians, Dataset, SampleBatch};
use tfis::evaluation::{
    histogram2d, histogram2d_points, jsd, mean_weight, EvalReport, HistogramGrid, MeanWeight,
};
use tfis::mixture::GaussianMixture;
use tfis::samplers::{
    accept_reject_sample, run_sampler, AcceptanceStats, ChainFailure, SamplerConfig, Variant,
};
use tfis::schedule::{NoiseSchedule, DEFAULT_EPS_D, DEFAULT_STEPS};
use tfis::score_models::{
    load_checkpoint, save_checkpoint, train_mlp_score_with, DatasetMeta, MixtureScore,
    ScoreFunction, TrainConfig,
};
use tfis::weights::WeightSpec;

use crate::args::{
    required, EvalArgs, EvalCliConfig, GenDataArgs, GenDataConfig, OracleArgs, OracleCliConfig,
    RenderArgs, RenderCliConfig, SampleArgs, SampleCliConfig, TrainArgs, TrainCliConfig,
};
use crate::error::CliError;
use crate::render::write_ppm;
use crate::{with_suffix, write_file, ConfigFile, Report};

/// Failure records kept in a sample report; the total count is always exact.
const MAX_REPORTED_FAILURES: usize = 20;

fn parse_dataset(name: &str) -> Result<Dataset, CliError> {
    name.parse()
        .map_err(|e: tfis::DataError| CliError::usage(e.to_string()))
}

pub(crate) fn parse_weight(spec: &str) -> Result<WeightSpec, CliError> {
    Ok(spec.parse::<WeightSpec>()?)
}

/// A base mixture named on the command line: `8gaussians`, `std_normal`, or
/// `json:PATH` holding `{weights, means, covariances}`.
pub(crate) fn parse_mixture(spec: &str) -> Result<GaussianMixture, CliError> {
    match spec {
        "8gaussians" => Ok(mixture_8gaussians()),
        "std_normal" => Ok(GaussianMixture::standard_normal(2)),
        _ => match spec.strip_prefix("json:") {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::data(format!("{path}: {e}")))?;
                let gm: GaussianMixture = serde_json::from_str(&text)
                    .map_err(|e| CliError::data(format!("{path}: {e}")))?;
                gm.validate()?;
                Ok(gm)
            }
            None => Err(CliError::usage(format!(
                "unknown mixture '{spec}' (expected 8gaussians, std_normal or json:PATH)"
            ))),
        },
    }
}

fn check_weight_dim(spec: &WeightSpec, dim: usize) -> Result<(), CliError> {
    match spec.dim() {
        Some(d) if d != dim => Err(CliError::usage(format!(
            "weight '{spec}' has {d} coefficients but the samples are {dim}-dimensional"
        ))),
        _ => Ok(()),
    }
}

#[derive(Serialize)]
struct GenDataBody {
    dataset: DatasetMeta,
    rows: usize,
}

pub fn gen_data(args: &GenDataArgs, file: &ConfigFile) -> Result<(), CliError> {
    let (mut cfg, _) = file.section::<GenDataConfig>("gen-data")?;
    args.apply(&mut cfg);
    let ds = parse_dataset(&cfg.dataset)?;
    if cfg.n == 0 {
        return Err(CliError::usage("--n must be at least 1"));
    }
    let out = required(&cfg.out, "out")?;
    let batch = ds.sample(cfg.n, cfg.seed);
    batch.save_csv(&out)?;
    let meta = DatasetMeta {
        source: ds.name().into(),
        n: cfg.n,
        seed: cfg.seed,
        constants: ds.constants(),
    };
    let body = GenDataBody {
        dataset: meta,
        rows: batch.count(),
    };
    Report::new("gen-data", &cfg, body).write(&with_suffix(&out, ".meta.json"))?;
    eprintln!(
        "wrote {} {} samples to {}",
        batch.count(),
        ds,
        out.display()
    );
    Ok(())
}

/// Provenance for a training set: the generator sidecar when present,
/// otherwise just the file name and row count.
fn dataset_meta(path: &Path, batch: &SampleBatch) -> Result<DatasetMeta, CliError> {
    #[derive(Deserialize)]
    struct Sidecar {
        dataset: DatasetMeta,
    }
    let sidecar = with_suffix(path, ".meta.json");
    if sidecar.exists() {
        let text = std::fs::read_to_string(&sidecar)?;
        let s: Sidecar = serde_json::from_str(&text)
            .map_err(|e| CliError::data(format!("{}: {e}", sidecar.display())))?;
        return Ok(s.dataset);
    }
    Ok(DatasetMeta {
        source: path.display().to_string(),
        n: batch.count(),
        seed: 0,
        constants: BTreeMap::new(),
    })
}

#[derive(Serialize)]
struct TrainBody {
    checkpoint: PathBuf,
    loss_log: PathBuf,
    dataset: DatasetMeta,
    epochs: usize,
    final_loss: f64,
}

pub fn train(args: &TrainArgs, file: &ConfigFile) -> Result<(), CliError> {
    let (mut cfg, _) = file.section::<TrainCliConfig>("train")?;
    args.apply(&mut cfg);
    if cfg.epochs == 0 {
        return Err(CliError::usage("--epochs must be at least 1"));
    }
    let data_path = required(&cfg.data, "data")?;
    let out = required(&cfg.out, "out")?;
    let loss_path = cfg
        .loss_log
        .clone()
        .unwrap_or_else(|| with_suffix(&out, ".loss.csv"));
    let data = SampleBatch::load_csv(&data_path)
        .map_err(|e| CliError::data(format!("{}: {e}", data_path.display())))?;
    let meta = dataset_meta(&data_path, &data)?;
    let schedule = NoiseSchedule::cosine(cfg.steps, cfg.eps_d)?;
    let tc = TrainConfig {
        epochs: cfg.epochs,
        batch: cfg.batch,
        lr: cfg.lr,
        seed: cfg.seed,
        hidden: cfg.hidden,
    };
    let epochs = cfg.epochs;
    let report = train_mlp_score_with(&data, &schedule, &tc, meta.clone(), |epoch, loss| {
        eprintln!("epoch {}/{epochs}: loss {loss:.6}", epoch + 1);
    })?;
    save_checkpoint(&report.checkpoint, &out)?;

    let mut csv = String::from("epoch,loss\n");
    for (i, l) in report.epoch_losses.iter().enumerate() {
        csv.push_str(&format!("{},{l:.17e}\n", i + 1));
    }
    write_file(&loss_path, csv.as_bytes())?;

    let body = TrainBody {
        checkpoint: out.clone(),
        loss_log: loss_path,
        dataset: meta,
        epochs: report.epoch_losses.len(),
        final_loss: report.checkpoint.training_meta.final_loss,
    };
    Report::new("train", &cfg, body).write(&with_suffix(&out, ".report.json"))?;
    eprintln!("wrote checkpoint {}", out.display());
    Ok(())
}

/// A score model and its noise schedule.
pub(crate) struct LoadedScore {
    pub score: Box<dyn ScoreFunction>,
    pub schedule: NoiseSchedule,
}

/// Resolves `--score`: a checkpoint path, or `analytic:<mixture>`.
pub(crate) fn load_score(
    spec: &str,
    steps: Option<usize>,
    eps_d: Option<f64>,
) -> Result<LoadedScore, CliError> {
    if let Some(mix) = spec.strip_prefix("analytic:") {
        let gm = parse_mixture(mix)?;
        let schedule = NoiseSchedule::cosine(
            steps.unwrap_or(DEFAULT_STEPS),
            eps_d.unwrap_or(DEFAULT_EPS_D),
        )?;
        return Ok(LoadedScore {
            score: Box::new(MixtureScore::new(gm, schedule.clone())),
            schedule,
        });
    }
    let path = Path::new(spec);
    if !path.exists() {
        return Err(CliError::data(format!(
            "score '{spec}' is neither an existing checkpoint nor analytic:<mixture>"
        )));
    }
    let ckpt = load_checkpoint(path)?;
    if let Some(t) = steps.filter(|&t| t != ckpt.schedule.steps()) {
        return Err(CliError::usage(format!(
            "--T {t} conflicts with the checkpoint's T = {}",
            ckpt.schedule.steps()
        )));
    }
    if let Some(e) = eps_d.filter(|&e| e != ckpt.schedule.eps_d()) {
        return Err(CliError::usage(format!(
            "--eps-d {e} conflicts with the checkpoint's eps_d = {}",
            ckpt.schedule.eps_d()
        )));
    }
    Ok(LoadedScore {
        score: Box::new(ckpt.score_fn()),
        schedule: ckpt.schedule.clone(),
    })
}

#[derive(Serialize)]
struct SampleBody<'a> {
    sampler: &'a str,
    n_requested: usize,
    n_produced: usize,
    failure_count: usize,
    failures: &'a [ChainFailure],
    mean_weight: Option<MeanWeight>,
    traces: Vec<PathBuf>,
}

pub fn sample(args: &SampleArgs, file: &ConfigFile) -> Result<(), CliError> {
    let (mut cfg, _) = file.section::<SampleCliConfig>("sample")?;
    args.apply(&mut cfg);
    let spec = required(&cfg.score, "score")?;
    let out = required(&cfg.out, "out")?;
    let variant: Variant = cfg.variant.parse().map_err(CliError::usage)?;
    let weight_spec = cfg.weight.as_deref().map(parse_weight).transpose()?;
    let loaded = load_score(&spec, cfg.steps, cfg.eps_d)?;
    if let Some(ws) = &weight_spec {
        check_weight_dim(ws, loaded.score.dim())?;
    }
    let weight = weight_spec.as_ref().map(WeightSpec::build);
    let sc = SamplerConfig {
        epsilon: cfg.epsilon,
        n_samples: cfg.n,
        seed: cfg.seed,
        variant,
        trace_chains: cfg.trace,
    };
    let result = run_sampler(
        loaded.score.as_ref(),
        weight.as_deref(),
        &loaded.schedule,
        &sc,
    )?;
    result.batch.save_csv(&out)?;

    let mut traces = Vec::new();
    if !result.trajectories.is_empty() {
        let dir = cfg
            .trace_dir
            .clone()
            .unwrap_or_else(|| with_suffix(&out, ".traces"));
        std::fs::create_dir_all(&dir)
            .map_err(|e| CliError::data(format!("{}: {e}", dir.display())))?;
        for tr in &result.trajectories {
            let path = dir.join(format!("chain_{}.csv", tr.chain));
            let mut w = BufWriter::new(std::fs::File::create(&path)?);
            tr.write_csv(&mut w)?;
            w.flush()?;
            traces.push(path);
        }
    }

    let mw = match &weight {
        Some(w) if result.batch.count() > 0 => Some(mean_weight(&result.batch, w.as_ref())?),
        _ => None,
    };
    let n_failed = result.failures.len();
    let body = SampleBody {
        sampler: &result.batch.meta().sampler,
        n_requested: cfg.n,
        n_produced: result.batch.count(),
        failure_count: n_failed,
        failures: &result.failures[..n_failed.min(MAX_REPORTED_FAILURES)],
        mean_weight: mw,
        traces,
    };
    Report::new("sample", &cfg, body).write(&with_suffix(&out, ".report.json"))?;
    eprintln!(
        "wrote {} samples to {} ({} failed chains)",
        result.batch.count(),
        out.display(),
        n_failed
    );
    if result.batch.count() == 0 {
        return Err(CliError::numerical("every chain failed"));
    }
    Ok(())
}

#[derive(Serialize)]
struct OracleBody {
    acceptance: AcceptanceStats,
    rows: usize,
}

pub fn oracle_sample(args: &OracleArgs, file: &ConfigFile) -> Result<(), CliError> {
    let (mut cfg, _) = file.section::<OracleCliConfig>("oracle-sample")?;
    args.apply(&mut cfg);
    let ds = parse_dataset(&cfg.dataset)?;
    let ws = parse_weight(&required(&cfg.weight, "weight")?)?;
    check_weight_dim(&ws, 2)?;
    let bound = required(&cfg.bound, "bound")?;
    let out = required(&cfg.out, "out")?;
    let weight = ws.build();
    let base = |count: usize, seed: u64| ds.sample(count, seed);
    let (batch, stats) = accept_reject_sample(&base, weight.as_ref(), bound, cfg.n, cfg.seed)?;
    if stats.bound_violations > 0 {
        eprintln!(
            "warning: l(x) exceeded the bound {bound} on {} of {} proposals; \
             their acceptance probability was clamped to 1",
            stats.bound_violations, stats.proposals
        );
    }
    batch.save_csv(&out)?;
    eprintln!(
        "accepted {} of {} proposals (rate {:.4})",
        stats.accepted, stats.proposals, stats.rate
    );
    let body = OracleBody {
        acceptance: stats,
        rows: batch.count(),
    };
    Report::new("oracle-sample", &cfg, body).write(&with_suffix(&out, ".report.json"))?;
    Ok(())
}

/// The binning part of a stored convention or an earlier eval report.
#[derive(Deserialize)]
struct StoredConvention {
    bins: [usize; 2],
    bounds: [f64; 4],
}

fn load_batch(path: &Path) -> Result<SampleBatch, CliError> {
    SampleBatch::load_csv(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

fn hist(batch: &SampleBatch, cfg: &EvalCliConfig) -> Result<HistogramGrid, CliError> {
    Ok(histogram2d(batch, cfg.bounds, (cfg.bins[0], cfg.bins[1]))?)
}

pub fn eval(args: &EvalArgs, file: &ConfigFile) -> Result<(), CliError> {
    let (mut cfg, keys) = file.section::<EvalCliConfig>("eval")?;
    args.apply(&mut cfg);
    if let Some(path) = &cfg.convention {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        let stored: StoredConvention = serde_json::from_str(&text)
            .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        let bins_set = args.bins.is_some() || keys.contains("bins");
        let bounds_set = args.bounds.is_some() || keys.contains("bounds");
        if bins_set && cfg.bins != stored.bins {
            return Err(CliError::usage(format!(
                "bins {:?} do not match the stored convention {:?} in {}",
                cfg.bins,
                stored.bins,
                path.display()
            )));
        }
        if bounds_set && cfg.bounds != stored.bounds {
            return Err(CliError::usage(format!(
                "bounds {:?} do not match the stored convention {:?} in {}",
                cfg.bounds,
                stored.bounds,
                path.display()
            )));
        }
        cfg.bins = stored.bins;
        cfg.bounds = stored.bounds;
    }
    let a = load_batch(&required(&cfg.a, "a")?)?;
    let b = load_batch(&required(&cfg.b, "b")?)?;
    let weight = match &cfg.weight {
        Some(s) => {
            let ws = parse_weight(s)?;
            check_weight_dim(&ws, a.dim())?;
            Some(ws.build())
        }
        None => None,
    };
    let ha = hist(&a, &cfg)?;
    let hb = hist(&b, &cfg)?;
    let floor_jsd = match &cfg.floor {
        Some(p) => Some(jsd(&hb, &hist(&load_batch(p)?, &cfg)?)?),
        None => None,
    };
    let mean_weight = match &weight {
        Some(w) => Some([mean_weight(&a, w.as_ref())?, mean_weight(&b, w.as_ref())?]),
        None => None,
    };
    let report = EvalReport {
        jsd: jsd(&ha, &hb)?,
        floor_jsd,
        bins: (cfg.bins[0], cfg.bins[1]),
        bounds: cfg.bounds,
        log_base: "e".into(),
        n_samples: [a.count(), b.count()],
        overflow_counts: [ha.overflow(), hb.overflow()],
        mean_weight,
    };
    let json = Report::new("eval", &cfg, &report).to_json()?;
    match &cfg.out {
        Some(path) => {
            write_file(path, json.as_bytes())?;
            println!("jsd {:.6e}", report.jsd);
        }
        None => print!("{json}"),
    }
    Ok(())
}

pub fn render(args: &RenderArgs, file: &ConfigFile) -> Result<(), CliError> {
    let (mut cfg, _) = file.section::<RenderCliConfig>("render")?;
    args.apply(&mut cfg);
    let input = required(&cfg.input, "in")?;
    let out = required(&cfg.out, "out")?;
    let text = std::fs::read_to_string(&input)
        .map_err(|e| CliError::data(format!("{}: {e}", input.display())))?;
    let points = if text.trim().is_empty() {
        Vec::new()
    } else {
        let batch = load_batch(&input)?;
        if batch.dim() != 2 {
            return Err(CliError::usage(format!(
                "render needs 2-D samples, got dimension {}",
                batch.dim()
            )));
        }
        batch.into_data()
    };
    let h = histogram2d_points(&points, cfg.bounds, (cfg.bins[0], cfg.bins[1]))?;
    let mut buf = Vec::new();
    write_ppm(&mut buf, &h)?;
    write_file(&out, &buf)?;
    eprintln!(
        "rendered {} points ({} outside bounds) to {}",
        points.len() / 2,
        h.overflow(),
        out.display()
    );
    Ok(())
}
