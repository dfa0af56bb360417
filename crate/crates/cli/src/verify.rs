//! Invariant suites behind `tfis verify`.

use serde::Serialize;
use std::path::Path;

use tfis::autodiff::{grad_check, Tape, Tensor, Var};
use tfis::evaluation::{quadrature_q_score, score_gap_against, BaseDensity, EvalError, GapReport};
use tfis::mixture::GaussianMixture;
use tfis::rng::{RngStream, StreamTag};
use tfis::schedule::{cosine_decay, NoiseSchedule, BETA_CEIL, BETA_FLOOR};
use tfis::score_models::{time_embedding, MixtureScore, MlpScoreParams, ScoreFunction};
use tfis::weights::{check_weight_gradient, WeightSpec};

use crate::args::{VerifyArgs, VerifyCliConfig};
use crate::commands::{parse_mixture, parse_weight};
use crate::error::CliError;
use crate::{write_file, ConfigFile, Report};

const GRADCHECK_TOL: f64 = 1e-5;
const GRADCHECK_STEP: f64 = 1e-6;
const GRADCHECK_POINTS: usize = 64;
const TELESCOPE_TOL: f64 = 1e-12;
const ORACLE_TOL: f64 = 1e-3;
const GAP_TOL: f64 = 1e-8;

const BUILTIN_WEIGHTS: [&str; 4] = [
    "norm_sq",
    "elem_sum",
    "exp_linear:0.7,-0.3,0.2",
    "logistic:4,0,0",
];

#[derive(Debug, Serialize)]
struct Check {
    name: String,
    value: f64,
    tol: f64,
    pass: bool,
}

impl Check {
    /// Passes when `value <= tol`; NaN never passes.
    fn at_most(name: impl Into<String>, value: f64, tol: f64) -> Self {
        Self {
            name: name.into(),
            value,
            tol,
            pass: value <= tol,
        }
    }
}

#[derive(Serialize)]
struct VerifyBody<'a> {
    suite: &'a str,
    passed: bool,
    checks: Vec<Check>,
    #[serde(skip_serializing_if = "Option::is_none")]
    gap: Option<GapReport>,
}

pub fn verify(args: &VerifyArgs, file: &ConfigFile) -> Result<(), CliError> {
    let (mut cfg, _) = file.section::<VerifyCliConfig>("verify")?;
    args.apply(&mut cfg);
    let mut gap = None;
    let checks = match cfg.suite.as_str() {
        "gradcheck" => gradcheck(&cfg)?,
        "schedule" => schedule(&cfg)?,
        "score-oracle" => score_oracle(&cfg)?,
        "gap" => {
            let (checks, report) = gap_suite(&cfg)?;
            gap = Some(report);
            checks
        }
        other => {
            return Err(CliError::usage(format!(
                "unknown suite '{other}' (expected gradcheck, schedule, score-oracle or gap)"
            )))
        }
    };
    for c in &checks {
        println!(
            "{} {}: {:.3e} (tol {:.1e})",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            c.value,
            c.tol
        );
    }
    let passed = checks.iter().all(|c| c.pass);
    if let Some(out) = &cfg.out {
        if let Some(g) = &gap {
            let csv = gap_csv_path(out)?;
            let mut buf = Vec::new();
            g.write_csv(&mut buf)?;
            write_file(&csv, &buf)?;
        }
        let body = VerifyBody {
            suite: &cfg.suite,
            passed,
            checks,
            gap,
        };
        Report::new("verify", &cfg, body).write(out)?;
    }
    if passed {
        Ok(())
    } else {
        Err(CliError::verification(format!(
            "suite '{}' failed",
            cfg.suite
        )))
    }
}

fn gap_csv_path(out: &Path) -> Result<std::path::PathBuf, CliError> {
    let csv = out.with_extension("csv");
    if csv == out {
        return Err(CliError::usage(
            "--out for the gap suite names the JSON report; its CSV goes alongside with a .csv extension",
        ));
    }
    Ok(csv)
}

fn random_points(seed: u64, n: usize, half_width: f64) -> Vec<Vec<f64>> {
    let mut rng = RngStream::derive(seed, StreamTag::Probe, 0);
    (0..n)
        .map(|_| {
            vec![
                rng.uniform_range(-half_width, half_width),
                rng.uniform_range(-half_width, half_width),
            ]
        })
        .collect()
}

/// A scalar exercising every differentiable tape op.
fn composite(tape: &mut Tape, x: Var) -> tfis::autodiff::Result<Var> {
    let a = tape.leaf(Tensor::matrix(2, 2, vec![0.9, -0.4, 0.3, 1.1])?);
    let y = tape.matvec(a, x)?;
    let r = tape.relu(y)?;
    let s = tape.scale(x, 0.3)?;
    let e = tape.exp(s)?;
    let d = tape.dot(r, e)?;
    let n = tape.norm_sq(x)?;
    let l = tape.log(n)?;
    let m = tape.mean(e)?;
    let p = tape.mul(d, m)?;
    let q = tape.add(p, l)?;
    let sum = tape.sum(y)?;
    tape.sub(q, sum)
}

fn gradcheck(cfg: &VerifyCliConfig) -> Result<Vec<Check>, CliError> {
    let tol = cfg.tol.unwrap_or(GRADCHECK_TOL);
    let points = random_points(cfg.seed, GRADCHECK_POINTS, 1.5);
    let mut checks = Vec::new();
    for spec in BUILTIN_WEIGHTS {
        let w = spec.parse::<WeightSpec>()?.build();
        let err = check_weight_gradient(w.as_ref(), &points, GRADCHECK_STEP);
        checks.push(Check::at_most(format!("weight {spec}"), err, tol));
    }

    let mut worst = 0.0f64;
    for p in points.iter().filter(|p| p[0].hypot(p[1]) > 0.1) {
        let x = Tensor::vector(p.clone())?;
        worst = worst.max(grad_check(composite, &x, GRADCHECK_STEP)?);
    }
    checks.push(Check::at_most("tape ops", worst, tol));

    // Score network: gradient of the summed ε output with respect to the full
    // input row, position and time embedding alike.
    let params = MlpScoreParams::init(2, 16, cfg.seed);
    let emb = time_embedding(cfg.steps / 2, cfg.steps);
    let net = |tape: &mut Tape, input: Var| -> tfis::autodiff::Result<Var> {
        let vars = params.leaves(tape);
        let out = params.forward_tape(tape, &vars, input)?;
        tape.sum(out)
    };
    let mut worst = 0.0f64;
    for p in points.iter().take(16) {
        let row: Vec<f64> = p.iter().chain(&emb).copied().collect();
        let x = Tensor::matrix(1, row.len(), row)?;
        worst = worst.max(grad_check(net, &x, GRADCHECK_STEP)?);
    }
    checks.push(Check::at_most("score network", worst, tol));
    Ok(checks)
}

fn schedule(cfg: &VerifyCliConfig) -> Result<Vec<Check>, CliError> {
    let s = NoiseSchedule::cosine(cfg.steps, cfg.eps_d)?;
    let (ab, beta, steps) = (s.alpha_bars(), s.betas(), s.steps());
    let count = |n: usize| n as f64;

    let recursion = (1..=steps)
        .filter(|&t| ab[t] != (1.0 - beta[t - 1]) * ab[t - 1])
        .count();
    let monotone = (1..=steps)
        .filter(|&t| ab[t] >= ab[t - 1] || ab[t].is_nan())
        .count();
    let clamped = beta
        .iter()
        .filter(|&&b| !(BETA_FLOOR..=BETA_CEIL).contains(&b))
        .count();
    let f = |t: usize| cosine_decay(t as f64 / steps as f64, cfg.eps_d);
    let telescope = (1..=steps.saturating_sub(2))
        .map(|t| (ab[t] / (f(t + 1) / f(1)) - 1.0).abs())
        .fold(0.0, f64::max);
    Ok(vec![
        Check::at_most(
            "alpha_bar equals the running product exactly (mismatches)",
            count(recursion),
            0.0,
        ),
        Check::at_most(
            "alpha_bar strictly decreasing (violations)",
            count(monotone),
            0.0,
        ),
        Check::at_most("beta within clamps (violations)", count(clamped), 0.0),
        Check::at_most("alpha_bar_0 == 1 (|error|)", (ab[0] - 1.0).abs(), 0.0),
        Check::at_most(
            "telescoped closed form before the clamps (max rel error)",
            telescope,
            cfg.tol.unwrap_or(TELESCOPE_TOL),
        ),
    ])
}

fn planar(gm: &GaussianMixture) -> Result<(), CliError> {
    if gm.dim() != 2 {
        return Err(CliError::usage(format!(
            "quadrature checks need a 2-D base, got dimension {}",
            gm.dim()
        )));
    }
    Ok(())
}

fn score_oracle(cfg: &VerifyCliConfig) -> Result<Vec<Check>, CliError> {
    let gm = parse_mixture(&cfg.base)?;
    planar(&gm)?;
    let schedule = NoiseSchedule::cosine(cfg.steps, cfg.eps_d)?;
    let score = MixtureScore::new(gm.clone(), schedule.clone());
    let base = BaseDensity::Mixture(gm);
    let tol = cfg.tol.unwrap_or(ORACLE_TOL);
    let grid: Vec<[f64; 2]> = (0..5)
        .flat_map(|i| (0..5).map(move |j| [-1.0 + 0.5 * i as f64, -1.0 + 0.5 * j as f64]))
        .collect();
    let mut checks = Vec::new();
    for t in [cfg.steps / 10, cfg.steps / 2, 9 * cfg.steps / 10] {
        let mut worst = 0.0f64;
        for x in &grid {
            let exact = score.score(x, t);
            let quad = quadrature_q_score(&base, None, &schedule, t, x)?;
            for (a, b) in exact.iter().zip(&quad) {
                worst = worst.max((a - b).abs() / a.abs().max(1.0));
            }
        }
        checks.push(Check::at_most(
            format!("analytic vs quadrature score, t = {t}"),
            worst,
            tol,
        ));
    }
    Ok(checks)
}

fn gap_suite(cfg: &VerifyCliConfig) -> Result<(Vec<Check>, GapReport), CliError> {
    if cfg.t_list.is_empty() {
        return Err(CliError::usage("--t-list needs at least one step"));
    }
    if cfg.probes == 0 {
        return Err(CliError::usage("--probes must be at least 1"));
    }
    let gm = parse_mixture(&cfg.base)?;
    planar(&gm)?;
    let ws = parse_weight(&cfg.weight)?;
    let schedule = NoiseSchedule::cosine(cfg.steps, cfg.eps_d)?;
    let score = MixtureScore::new(gm.clone(), schedule.clone());
    let weight = ws.build();
    let flat = gm.sample(cfg.probes, cfg.seed);
    let probes: Vec<Vec<f64>> = flat.chunks_exact(2).map(<[f64]>::to_vec).collect();

    // An exponential tilt of a mixture is again a mixture, so the reference is
    // exact there; otherwise integrate numerically.
    let report = match &ws {
        WeightSpec::ExpLinear { a, .. } => {
            let tilted = MixtureScore::new(gm.exp_tilted(a)?, schedule.clone());
            let reference =
                |x: &[f64], t: usize| -> Result<Vec<f64>, EvalError> { Ok(tilted.score(x, t)) };
            score_gap_against(
                &reference,
                &score,
                weight.as_ref(),
                &schedule,
                &probes,
                &cfg.t_list,
                cfg.epsilon,
            )?
        }
        _ => {
            let base = BaseDensity::Mixture(gm);
            let reference = |x: &[f64], t: usize| {
                quadrature_q_score(&base, Some(weight.as_ref()), &schedule, t, x)
            };
            score_gap_against(
                &reference,
                &score,
                weight.as_ref(),
                &schedule,
                &probes,
                &cfg.t_list,
                cfg.epsilon,
            )?
        }
    };

    let finite = report
        .rows
        .iter()
        .filter(|r| !(r.mean_gap.is_finite() && r.max_gap.is_finite()))
        .count();
    let max_gap = report.rows.iter().map(|r| r.max_gap).fold(0.0, f64::max);
    let tol = cfg.tol.unwrap_or(GAP_TOL);
    let by_t = |pick: fn(usize, usize) -> bool| {
        report
            .rows
            .iter()
            .reduce(|a, b| if pick(b.t, a.t) { b } else { a })
            .expect("non-empty")
    };
    let (early, late) = (by_t(|a, b| a < b), by_t(|a, b| a > b));
    let mut checks = vec![Check::at_most("non-finite gaps", finite as f64, 0.0)];
    for r in &report.rows {
        println!(
            "t = {:>5}: mean gap {:.6e}, max gap {:.6e}",
            r.t, r.mean_gap, r.max_gap
        );
    }
    if max_gap <= tol {
        checks.push(Check::at_most("max gap", max_gap, tol));
    } else {
        // Not exact: the gap must grow with the noise level.
        checks.push(Check {
            name: format!("mean gap at t = {} below t = {}", early.t, late.t),
            value: early.mean_gap,
            tol: late.mean_gap,
            pass: early.t < late.t && early.mean_gap < late.mean_gap,
        });
    }
    Ok((checks, report))
}
