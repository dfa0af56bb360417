//! Differentiable importance weights `l(x)`, exposed through `log l` and
//! `∇ log l`, with a hard positivity floor `l(x) >= m`.
//!
//! In the floored region `log l = log m` and the gradient is exactly zero.

use std::fmt;
use std::str::FromStr;
use thiserror::Error;

use crate::autodiff::{self, Tape, Tensor, Var};

pub const DEFAULT_FLOOR: f64 = 1e-4;

pub trait WeightFunction: Send + Sync {
    fn name(&self) -> String;

    /// Lower bound `m` on `l`, or `None` when `l > 0` holds intrinsically.
    fn floor(&self) -> Option<f64>;

    fn log_l(&self, x: &[f64]) -> f64;

    fn grad_log_l(&self, x: &[f64]) -> Vec<f64>;

    fn l(&self, x: &[f64]) -> f64 {
        self.log_l(x).exp()
    }

    /// True where the floor is active (gradient forced to zero).
    fn floored(&self, x: &[f64]) -> bool {
        self.floor().is_some_and(|m| self.log_l(x) <= m.ln())
    }
}

/// `l(x) = max(‖x‖², m)`.
#[derive(Clone, Debug, PartialEq)]
pub struct NormSquared {
    pub floor: f64,
}

/// `l(x) = max(Σ x_i + 2, m)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ElementSum {
    pub floor: f64,
}

/// `l(x) = exp(a·x + b)`. Linear `log l`, so the first-order expansion of
/// `log l` around the denoised mean is exact.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpLinear {
    pub a: Vec<f64>,
    pub b: f64,
}

/// `l(x) = max(sigmoid(w·x + c), m)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LogisticClassifier {
    pub w: Vec<f64>,
    pub c: f64,
    pub floor: f64,
}

pub fn make_norm_squared(floor: f64) -> NormSquared {
    assert!(floor > 0.0, "floor must be positive");
    NormSquared { floor }
}

pub fn make_element_sum(floor: f64) -> ElementSum {
    assert!(floor > 0.0, "floor must be positive");
    ElementSum { floor }
}

pub fn make_exp_linear(a: Vec<f64>, b: f64) -> ExpLinear {
    ExpLinear { a, b }
}

pub fn make_logistic_classifier(w: Vec<f64>, c: f64, floor: f64) -> LogisticClassifier {
    assert!(floor > 0.0, "floor must be positive");
    LogisticClassifier { w, c, floor }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl WeightFunction for NormSquared {
    fn name(&self) -> String {
        "norm_sq".into()
    }

    fn floor(&self) -> Option<f64> {
        Some(self.floor)
    }

    fn log_l(&self, x: &[f64]) -> f64 {
        dot(x, x).max(self.floor).ln()
    }

    fn grad_log_l(&self, x: &[f64]) -> Vec<f64> {
        let raw = dot(x, x);
        if raw < self.floor {
            return vec![0.0; x.len()];
        }
        x.iter().map(|v| 2.0 * v / raw).collect()
    }
}

impl WeightFunction for ElementSum {
    fn name(&self) -> String {
        "elem_sum".into()
    }

    fn floor(&self) -> Option<f64> {
        Some(self.floor)
    }

    fn log_l(&self, x: &[f64]) -> f64 {
        (x.iter().sum::<f64>() + 2.0).max(self.floor).ln()
    }

    fn grad_log_l(&self, x: &[f64]) -> Vec<f64> {
        let raw = x.iter().sum::<f64>() + 2.0;
        if raw < self.floor {
            return vec![0.0; x.len()];
        }
        vec![1.0 / raw; x.len()]
    }
}

impl WeightFunction for ExpLinear {
    fn name(&self) -> String {
        "exp_linear".into()
    }

    fn floor(&self) -> Option<f64> {
        None
    }

    fn log_l(&self, x: &[f64]) -> f64 {
        dot(&self.a, x) + self.b
    }

    fn grad_log_l(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.a.len());
        self.a.clone()
    }
}

/// `log sigmoid(z)` without overflow.
fn log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl WeightFunction for LogisticClassifier {
    fn name(&self) -> String {
        "logistic".into()
    }

    fn floor(&self) -> Option<f64> {
        Some(self.floor)
    }

    fn log_l(&self, x: &[f64]) -> f64 {
        log_sigmoid(dot(&self.w, x) + self.c).max(self.floor.ln())
    }

    fn grad_log_l(&self, x: &[f64]) -> Vec<f64> {
        let z = dot(&self.w, x) + self.c;
        if log_sigmoid(z) < self.floor.ln() {
            return vec![0.0; x.len()];
        }
        let one_minus = sigmoid(-z);
        self.w.iter().map(|w| one_minus * w).collect()
    }
}

type LogLBuilder = dyn Fn(&mut Tape, Var) -> autodiff::Result<Var> + Send + Sync;

/// Weight defined by a tape expression for `log l`; the gradient comes from a
/// single reverse sweep.
pub struct TapeWeight {
    name: String,
    floor: Option<f64>,
    build: Box<LogLBuilder>,
}

impl TapeWeight {
    pub fn new<F>(name: impl Into<String>, floor: Option<f64>, build: F) -> Self
    where
        F: Fn(&mut Tape, Var) -> autodiff::Result<Var> + Send + Sync + 'static,
    {
        Self {
            name: name.into(),
            floor,
            build: Box::new(build),
        }
    }

    fn eval(&self, x: &[f64], with_grad: bool) -> (f64, Option<Vec<f64>>) {
        let Ok(point) = Tensor::vector(x.to_vec()) else {
            return (f64::NAN, with_grad.then(|| vec![f64::NAN; x.len()]));
        };
        let mut tape = Tape::new();
        let v = tape.leaf(point);
        let out = match (self.build)(&mut tape, v) {
            Ok(out) => out,
            // Domain errors (log of a non-positive) mean the raw weight is <= 0,
            // which is exactly the floored region.
            Err(_) => return (f64::NEG_INFINITY, with_grad.then(|| vec![0.0; x.len()])),
        };
        let value = tape.value(out).item();
        let grad = with_grad.then(|| match tape.backward(out) {
            Ok(mut g) => g.take(v).into_data(),
            Err(_) => vec![f64::NAN; x.len()],
        });
        (value, grad)
    }
}

impl WeightFunction for TapeWeight {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn floor(&self) -> Option<f64> {
        self.floor
    }

    fn log_l(&self, x: &[f64]) -> f64 {
        let (raw, _) = self.eval(x, false);
        match self.floor {
            Some(m) => raw.max(m.ln()),
            None => raw,
        }
    }

    fn grad_log_l(&self, x: &[f64]) -> Vec<f64> {
        let (raw, grad) = self.eval(x, true);
        match self.floor {
            Some(m) if !(raw >= m.ln()) => vec![0.0; x.len()],
            _ => grad.expect("requested"),
        }
    }
}

/// Max relative mismatch between `grad_log_l` and central differences of
/// `log_l`, over points where the floor is inactive at `x` and `x ± h e_i`.
pub fn check_weight_gradient(wf: &dyn WeightFunction, points: &[Vec<f64>], h: f64) -> f64 {
    let mut worst = 0.0f64;
    for x in points {
        if wf.floored(x) {
            continue;
        }
        let g = wf.grad_log_l(x);
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            if wf.floored(&xp) || wf.floored(&xm) {
                continue;
            }
            let fd = (wf.log_l(&xp) - wf.log_l(&xm)) / (2.0 * h);
            let err = (g[i] - fd).abs() / g[i].abs().max(1.0);
            if !err.is_finite() {
                return f64::INFINITY;
            }
            worst = worst.max(err);
        }
    }
    worst
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WeightSpecError {
    #[error(
        "unknown weight spec '{0}'; valid specs: norm_sq[:m], elem_sum[:m], \
         exp_linear:a0,...,b, logistic:w0,...,c[;m]"
    )]
    Unknown(String),
    #[error("weight spec '{spec}': {msg}")]
    Bad { spec: String, msg: String },
}

/// Parsed CLI weight spec.
#[derive(Clone, Debug, PartialEq)]
pub enum WeightSpec {
    NormSq { floor: f64 },
    ElemSum { floor: f64 },
    ExpLinear { a: Vec<f64>, b: f64 },
    Logistic { w: Vec<f64>, c: f64, floor: f64 },
}

impl WeightSpec {
    pub fn build(&self) -> Box<dyn WeightFunction> {
        match self {
            WeightSpec::NormSq { floor } => Box::new(make_norm_squared(*floor)),
            WeightSpec::ElemSum { floor } => Box::new(make_element_sum(*floor)),
            WeightSpec::ExpLinear { a, b } => Box::new(make_exp_linear(a.clone(), *b)),
            WeightSpec::Logistic { w, c, floor } => {
                Box::new(make_logistic_classifier(w.clone(), *c, *floor))
            }
        }
    }

    /// Dimension constraint implied by the spec, if any.
    pub fn dim(&self) -> Option<usize> {
        match self {
            WeightSpec::ExpLinear { a, .. } => Some(a.len()),
            WeightSpec::Logistic { w, .. } => Some(w.len()),
            _ => None,
        }
    }
}

impl fmt::Display for WeightSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |v: &[f64]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        match self {
            WeightSpec::NormSq { floor } => write!(f, "norm_sq:{floor}"),
            WeightSpec::ElemSum { floor } => write!(f, "elem_sum:{floor}"),
            WeightSpec::ExpLinear { a, b } => write!(f, "exp_linear:{},{b}", join(a)),
            WeightSpec::Logistic { w, c, floor } => write!(f, "logistic:{},{c};{floor}", join(w)),
        }
    }
}

impl FromStr for WeightSpec {
    type Err = WeightSpecError;

    fn from_str(spec: &str) -> Result<Self, Self::Err> {
        let bad = |msg: &str| WeightSpecError::Bad {
            spec: spec.to_string(),
            msg: msg.to_string(),
        };
        let (kind, args) = spec.split_once(':').unwrap_or((spec, ""));
        let (args, floor_arg) = args.split_once(';').unwrap_or((args, ""));
        let nums: Vec<f64> = if args.is_empty() {
            Vec::new()
        } else {
            args.split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|_| bad("arguments must be numbers"))?
        };
        if nums.iter().any(|v| !v.is_finite()) {
            return Err(bad("arguments must be finite"));
        }
        let parse_floor = |s: &str| -> Result<f64, WeightSpecError> {
            if s.is_empty() {
                return Ok(DEFAULT_FLOOR);
            }
            match s.trim().parse::<f64>() {
                Ok(m) if m > 0.0 && m.is_finite() => Ok(m),
                _ => Err(bad("floor must be a positive number")),
            }
        };
        match kind {
            "norm_sq" | "elem_sum" => {
                if !floor_arg.is_empty() || nums.len() > 1 {
                    return Err(bad("takes at most one argument (the floor)"));
                }
                let floor = match nums.first() {
                    Some(&m) if m > 0.0 => m,
                    Some(_) => return Err(bad("floor must be positive")),
                    None => DEFAULT_FLOOR,
                };
                Ok(if kind == "norm_sq" {
                    WeightSpec::NormSq { floor }
                } else {
                    WeightSpec::ElemSum { floor }
                })
            }
            "exp_linear" => {
                if nums.len() < 2 || !floor_arg.is_empty() {
                    return Err(bad("expects a0,...,a_{d-1},b"));
                }
                let (a, b) = nums.split_at(nums.len() - 1);
                Ok(WeightSpec::ExpLinear {
                    a: a.to_vec(),
                    b: b[0],
                })
            }
            "logistic" => {
                if nums.len() < 2 {
                    return Err(bad("expects w0,...,w_{d-1},c[;m]"));
                }
                let (w, c) = nums.split_at(nums.len() - 1);
                Ok(WeightSpec::Logistic {
                    w: w.to_vec(),
                    c: c[0],
                    floor: parse_floor(floor_arg)?,
                })
            }
            _ => Err(WeightSpecError::Unknown(spec.to_string())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn norm_squared_examples() {
        let w = make_norm_squared(1e-4);
        assert_eq!(w.l(&[1.0, 0.0]), 1.0);
        assert_eq!(w.grad_log_l(&[1.0, 0.0]), vec![2.0, 0.0]);
        assert!((w.l(&[0.0, 0.0]) - 1e-4).abs() < 1e-18);
        assert_eq!(w.grad_log_l(&[0.0, 0.0]), vec![0.0, 0.0]);
        assert!((w.l(&[0.6, 0.8]) - 1.0).abs() < 1e-15);
        assert!(close(&w.grad_log_l(&[0.6, 0.8]), &[1.2, 1.6], 1e-15));
    }

    #[test]
    fn element_sum_examples() {
        let w = make_element_sum(1e-4);
        assert_eq!(w.l(&[0.0, 0.0]), 2.0);
        assert_eq!(w.grad_log_l(&[0.0, 0.0]), vec![0.5, 0.5]);
        assert!((w.l(&[1.0, 1.0]) - 4.0).abs() < 1e-14);
        assert_eq!(w.grad_log_l(&[1.0, 1.0]), vec![0.25, 0.25]);
        assert!((w.l(&[-1.0, -1.0]) - 1e-4).abs() < 1e-18);
        assert_eq!(w.grad_log_l(&[-1.0, -1.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn exp_linear_examples() {
        let w = make_exp_linear(vec![0.0, 0.0], 0.0);
        assert_eq!(w.l(&[3.0, -7.0]), 1.0);
        assert_eq!(w.grad_log_l(&[3.0, -7.0]), vec![0.0, 0.0]);
        let b = 0.25;
        let w = make_exp_linear(vec![1.0, 0.0], b);
        assert_eq!(w.log_l(&[2.0, 5.0]), 2.0 + b);
        assert_eq!(w.grad_log_l(&[2.0, 5.0]), vec![1.0, 0.0]);
        assert_eq!(w.floor(), None);
    }

    #[test]
    fn logistic_examples() {
        let w = make_logistic_classifier(vec![2.0, -1.0], 0.0, 1e-6);
        assert!((w.l(&[0.0, 0.0]) - 0.5).abs() < 1e-15);
        assert!(close(&w.grad_log_l(&[0.0, 0.0]), &[1.0, -0.5], 1e-15));
        let sat = w.grad_log_l(&[100.0, 0.0]);
        assert!(sat.iter().all(|g| g.abs() < 1e-80));
        assert!((w.l(&[100.0, 0.0]) - 1.0).abs() < 1e-15);
        // w·x + c = -20: sigmoid ≈ 2.06e-9 < 1e-6.
        let low = [-10.0, 0.0];
        assert!((w.l(&low) - 1e-6).abs() < 1e-18);
        assert_eq!(w.grad_log_l(&low), vec![0.0, 0.0]);
    }

    #[test]
    fn gradient_checks() {
        let pts: Vec<Vec<f64>> = (0..50)
            .map(|i| {
                let a = i as f64 * 0.37;
                vec![1.3 * a.cos(), 0.9 * (1.7 * a).sin()]
            })
            .collect();
        assert!(check_weight_gradient(&make_norm_squared(1e-4), &pts, 1e-5) <= 1e-6);
        assert!(check_weight_gradient(&make_element_sum(1e-4), &pts, 1e-5) <= 1e-6);
        assert!(check_weight_gradient(&make_exp_linear(vec![0.7, -0.3], 0.1), &pts, 1e-5) <= 1e-10);
        let lg = make_logistic_classifier(vec![1.5, -2.0], 0.3, 1e-6);
        assert!(check_weight_gradient(&lg, &pts, 1e-5) <= 1e-6);
    }

    #[test]
    fn tape_weight_matches_closed_form() {
        let tw = TapeWeight::new("norm_sq_tape", Some(1e-4), |t, x| {
            let n = t.norm_sq(x)?;
            t.log(n)
        });
        let cf = make_norm_squared(1e-4);
        for x in [[0.3, -0.7], [1.1, 0.2], [0.0, 0.0], [0.001, 0.002]] {
            assert!((tw.log_l(&x) - cf.log_l(&x)).abs() < 1e-15);
            assert!(close(&tw.grad_log_l(&x), &cf.grad_log_l(&x), 1e-15));
        }
    }

    #[test]
    fn spec_parsing() {
        assert_eq!(
            "norm_sq".parse(),
            Ok(WeightSpec::NormSq {
                floor: DEFAULT_FLOOR
            })
        );
        assert_eq!(
            "elem_sum:0.01".parse(),
            Ok(WeightSpec::ElemSum { floor: 0.01 })
        );
        assert_eq!(
            "exp_linear:1,0,0.5".parse(),
            Ok(WeightSpec::ExpLinear {
                a: vec![1.0, 0.0],
                b: 0.5
            })
        );
        assert_eq!(
            "logistic:2,-1,0.5;1e-6".parse(),
            Ok(WeightSpec::Logistic {
                w: vec![2.0, -1.0],
                c: 0.5,
                floor: 1e-6
            })
        );
        assert!(matches!(
            "banana".parse::<WeightSpec>(),
            Err(WeightSpecError::Unknown(_))
        ));
        assert!("exp_linear:1".parse::<WeightSpec>().is_err());
        assert!("norm_sq:-1".parse::<WeightSpec>().is_err());
        assert!("logistic:a,b".parse::<WeightSpec>().is_err());
        for s in [
            "norm_sq:0.001",
            "exp_linear:1,-2,0.5",
            "logistic:2,-1,0.5;0.000001",
        ] {
            let w: WeightSpec = s.parse().unwrap();
            assert_eq!(w.to_string().parse::<WeightSpec>().unwrap(), w);
        }
    }
}
