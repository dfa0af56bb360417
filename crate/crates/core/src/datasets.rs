//! Seedable 2D toy datasets and the sample-batch container.
//!
//! Generators draw in shards of [`SHARD_SIZE`] points, each shard from its
//! own stream `(seed, shard_index)`, so output is independent of how shards
//! are scheduled across threads.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;
use thiserror::Error;

use crate::mixture::GaussianMixture;
use crate::rng::{RngStream, StreamTag};

pub const SHARD_SIZE: usize = 1 << 16;

pub const SPIRAL_NOISE_STD: f64 = 0.1;
pub const SPIRAL_SCALE: f64 = 1.0 / (5.0 * PI);
pub const EIGHT_G_RADIUS: f64 = 0.8;
pub const EIGHT_G_STD: f64 = 0.05;
pub const CIRCLES_INNER: f64 = 0.4;
pub const CIRCLES_OUTER: f64 = 0.8;
pub const CIRCLES_NOISE_STD: f64 = 0.025;
pub const PINWHEEL_ARMS: usize = 5;
pub const PINWHEEL_RADIAL_STD: f64 = 0.3;
pub const PINWHEEL_RADIAL_SCALE: f64 = 0.3;
pub const PINWHEEL_TANGENTIAL_STD: f64 = 0.05;
pub const PINWHEEL_SWIRL: f64 = 3.0;

/// Radius of the pinwheel design box: radial 4σ bound combined with the
/// tangential 4σ bound.
pub fn pinwheel_max_design_radius() -> f64 {
    let radial = PINWHEEL_RADIAL_SCALE * (1.0 + 4.0 * PINWHEEL_RADIAL_STD);
    radial.hypot(4.0 * PINWHEEL_TANGENTIAL_STD)
}

pub fn pinwheel_scale() -> f64 {
    0.9 / pinwheel_max_design_radius()
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("batch needs dim >= 1 and at least one row")]
    Empty,
    #[error("data length {len} is not a multiple of dim {dim}")]
    Ragged { len: usize, dim: usize },
    #[error("non-finite sample value at row {row}")]
    NonFinite { row: usize },
    #[error("unknown dataset '{0}' (expected spiral, circles, pinwheel or 8gaussians)")]
    UnknownDataset(String),
    #[error("csv line {line}: {msg}")]
    Csv { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchMeta {
    pub source: String,
    pub seed: u64,
    pub sampler: String,
}

/// `count x dim` row-major sample matrix with provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleBatch {
    data: Vec<f64>,
    dim: usize,
    meta: BatchMeta,
}

impl SampleBatch {
    pub fn new(dim: usize, data: Vec<f64>, meta: BatchMeta) -> Result<Self, DataError> {
        if dim == 0 {
            return Err(DataError::Empty);
        }
        if !data.len().is_multiple_of(dim) {
            return Err(DataError::Ragged {
                len: data.len(),
                dim,
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(DataError::NonFinite { row: i / dim });
        }
        Ok(Self { data, dim, meta })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn meta(&self) -> &BatchMeta {
        &self.meta
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.dim)
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Writes `x0,x1,...` header then one row per sample, 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let header: Vec<String> = (0..self.dim).map(|i| format!("x{i}")).collect();
        writeln!(w, "{}", header.join(","))?;
        let mut line = String::new();
        for row in self.rows() {
            line.clear();
            for (i, v) in row.iter().enumerate() {
                if i > 0 {
                    line.push(',');
                }
                line.push_str(&format!("{v:.16e}"));
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<(), DataError> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_csv(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R, meta: BatchMeta) -> Result<Self, DataError> {
        let mut lines = r.lines();
        let header = lines.next().ok_or(DataError::Csv {
            line: 1,
            msg: "missing header".into(),
        })??;
        let cols: Vec<&str> = header.trim().split(',').collect();
        for (i, c) in cols.iter().enumerate() {
            if *c != format!("x{i}") {
                return Err(DataError::Csv {
                    line: 1,
                    msg: format!("expected column 'x{i}', found '{c}'"),
                });
            }
        }
        let dim = cols.len();
        let mut data = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let before = data.len();
            for field in line.split(',') {
                let v: f64 = field.trim().parse().map_err(|_| DataError::Csv {
                    line: i + 2,
                    msg: format!("bad number '{field}'"),
                })?;
                data.push(v);
            }
            if data.len() - before != dim {
                return Err(DataError::Csv {
                    line: i + 2,
                    msg: format!("expected {dim} fields"),
                });
            }
        }
        Self::new(dim, data, meta)
    }

    pub fn load_csv(path: &Path) -> Result<Self, DataError> {
        let f = std::fs::File::open(path)?;
        let meta = BatchMeta {
            source: path.display().to_string(),
            seed: 0,
            sampler: "file".into(),
        };
        Self::read_csv(std::io::BufReader::new(f), meta)
    }
}

/// The four synthetic 2D datasets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dataset {
    Spiral,
    Circles,
    Pinwheel,
    #[serde(rename = "8gaussians")]
    EightGaussians,
}

impl Dataset {
    pub const ALL: [Dataset; 4] = [
        Dataset::Spiral,
        Dataset::Circles,
        Dataset::Pinwheel,
        Dataset::EightGaussians,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Dataset::Spiral => "spiral",
            Dataset::Circles => "circles",
            Dataset::Pinwheel => "pinwheel",
            Dataset::EightGaussians => "8gaussians",
        }
    }

    /// Pinned generator constants, recorded in metadata sidecars and checkpoints.
    pub fn constants(self) -> BTreeMap<String, f64> {
        let pairs: Vec<(&str, f64)> = match self {
            Dataset::Spiral => vec![
                ("noise_std", SPIRAL_NOISE_STD),
                ("scale", SPIRAL_SCALE),
                ("arms", 2.0),
            ],
            Dataset::Circles => vec![
                ("inner_radius", CIRCLES_INNER),
                ("outer_radius", CIRCLES_OUTER),
                ("noise_std", CIRCLES_NOISE_STD),
            ],
            Dataset::Pinwheel => vec![
                ("arms", PINWHEEL_ARMS as f64),
                ("radial_std", PINWHEEL_RADIAL_STD),
                ("radial_scale", PINWHEEL_RADIAL_SCALE),
                ("tangential_std", PINWHEEL_TANGENTIAL_STD),
                ("swirl", PINWHEEL_SWIRL),
                ("scale", pinwheel_scale()),
            ],
            Dataset::EightGaussians => vec![
                ("components", 8.0),
                ("radius", EIGHT_G_RADIUS),
                ("std", EIGHT_G_STD),
            ],
        };
        pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    pub fn sample(self, n: usize, seed: u64) -> SampleBatch {
        let mut data = vec![0.0; 2 * n];
        data.par_chunks_mut(2 * SHARD_SIZE)
            .enumerate()
            .for_each(|(shard, chunk)| {
                let mut rng = RngStream::derive(seed, StreamTag::Shard, shard as u64);
                for p in chunk.chunks_exact_mut(2) {
                    let [x, y] = self.draw(&mut rng);
                    p[0] = x;
                    p[1] = y;
                }
            });
        SampleBatch {
            data,
            dim: 2,
            meta: BatchMeta {
                source: self.name().to_string(),
                seed,
                sampler: "generator".into(),
            },
        }
    }

    fn draw(self, rng: &mut RngStream) -> [f64; 2] {
        match self {
            Dataset::Spiral => {
                let phi = rng.uniform_range(0.0, 2.0 * PI);
                let n1 = SPIRAL_NOISE_STD * rng.normal();
                let n2 = SPIRAL_NOISE_STD * rng.normal();
                let second_arm = rng.uniform() < 0.5;
                spiral_point(phi, n1, n2, second_arm)
            }
            Dataset::EightGaussians => {
                let k = rng.below(8);
                let [mx, my] = eight_gaussians_mean(k as usize);
                [
                    mx + EIGHT_G_STD * rng.normal(),
                    my + EIGHT_G_STD * rng.normal(),
                ]
            }
            Dataset::Circles => {
                let outer = rng.below(2) == 1;
                let angle = rng.uniform_range(0.0, 2.0 * PI);
                let noise = CIRCLES_NOISE_STD * rng.normal();
                circles_point(outer, angle, noise)
            }
            Dataset::Pinwheel => {
                let arm = rng.below(PINWHEEL_ARMS as u64) as usize;
                let radial = rng.normal();
                let tangential = rng.normal();
                pinwheel_point(arm, radial, tangential)
            }
        }
    }
}

impl fmt::Display for Dataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Dataset {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "spiral" => Ok(Dataset::Spiral),
            "circles" => Ok(Dataset::Circles),
            "pinwheel" => Ok(Dataset::Pinwheel),
            "8gaussians" | "8g" | "eight_gaussians" => Ok(Dataset::EightGaussians),
            other => Err(DataError::UnknownDataset(other.to_string())),
        }
    }
}

/// Spiral point for angle `phi` and pre-scaling noise `(n1, n2)`.
pub fn spiral_point(phi: f64, n1: f64, n2: f64, second_arm: bool) -> [f64; 2] {
    let r = 2.0 * phi + PI;
    let mut p = [r * phi.cos() + n1, r * phi.sin() + n2];
    if second_arm {
        p = [-p[0], -p[1]];
    }
    [p[0] * SPIRAL_SCALE, p[1] * SPIRAL_SCALE]
}

pub fn eight_gaussians_mean(k: usize) -> [f64; 2] {
    let angle = k as f64 * PI / 4.0;
    [EIGHT_G_RADIUS * angle.cos(), EIGHT_G_RADIUS * angle.sin()]
}

pub fn mixture_8gaussians() -> GaussianMixture {
    let means = (0..8).map(|k| eight_gaussians_mean(k).to_vec()).collect();
    GaussianMixture::isotropic(vec![1.0 / 8.0; 8], means, EIGHT_G_STD).expect("valid mixture")
}

pub fn circles_point(outer: bool, angle: f64, radial_noise: f64) -> [f64; 2] {
    let r = if outer { CIRCLES_OUTER } else { CIRCLES_INNER } + radial_noise;
    [r * angle.cos(), r * angle.sin()]
}

/// Pinwheel point from standard-normal radial and tangential deviates.
pub fn pinwheel_point(arm: usize, radial: f64, tangential: f64) -> [f64; 2] {
    let r = (1.0 + PINWHEEL_RADIAL_STD * radial) * PINWHEEL_RADIAL_SCALE;
    let a = PINWHEEL_TANGENTIAL_STD * tangential;
    let angle = 2.0 * PI * arm as f64 / PINWHEEL_ARMS as f64 + PINWHEEL_SWIRL * r;
    let (s, c) = angle.sin_cos();
    let scale = pinwheel_scale();
    [scale * (c * r - s * a), scale * (s * r + c * a)]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spiral_formula() {
        let p = spiral_point(0.0, 0.0, 0.0, false);
        assert!((p[0] - 0.2).abs() < 1e-15 && p[1] == 0.0);
        let q = spiral_point(0.0, 0.0, 0.0, true);
        assert!((q[0] + 0.2).abs() < 1e-15);
    }

    #[test]
    fn eight_gaussian_means() {
        assert_eq!(eight_gaussians_mean(0), [0.8, 0.0]);
        let m2 = eight_gaussians_mean(2);
        assert!(m2[0].abs() < 1e-15 && (m2[1] - 0.8).abs() < 1e-15);
        let gm = mixture_8gaussians();
        assert_eq!(gm.n_components(), 8);
        assert!((gm.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn circles_points() {
        assert_eq!(circles_point(true, 0.0, 0.0), [0.8, 0.0]);
        let p = circles_point(false, PI, 0.0);
        assert!((p[0] + 0.4).abs() < 1e-15 && p[1].abs() < 1e-15);
    }

    #[test]
    fn pinwheel_arms() {
        let mut arms: Vec<usize> = Vec::new();
        let mut rng = RngStream::new(1, 1);
        for _ in 0..1000 {
            arms.push(rng.below(PINWHEEL_ARMS as u64) as usize);
        }
        assert_eq!(PINWHEEL_ARMS, 5);
        assert!(arms.iter().all(|&a| a < 5));
        // Mean-radial point of arm 0 sits at angle swirl * r.
        let p = pinwheel_point(0, 0.0, 0.0);
        let angle = p[1].atan2(p[0]);
        assert!((angle - PINWHEEL_SWIRL * PINWHEEL_RADIAL_SCALE).abs() < 1e-12);
    }

    #[test]
    fn csv_roundtrip_is_exact() {
        let b = Dataset::Spiral.sample(100, 5);
        let mut buf = Vec::new();
        b.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x0,x1\n"));
        let back = SampleBatch::read_csv(&buf[..], b.meta().clone()).unwrap();
        assert_eq!(back.data(), b.data());
    }

    #[test]
    fn csv_errors() {
        let meta = BatchMeta {
            source: "t".into(),
            seed: 0,
            sampler: "t".into(),
        };
        assert!(SampleBatch::read_csv(&b"a,b\n1,2\n"[..], meta.clone()).is_err());
        assert!(SampleBatch::read_csv(&b"x0,x1\n1\n"[..], meta.clone()).is_err());
        assert!(SampleBatch::read_csv(&b"x0,x1\n1,zz\n"[..], meta).is_err());
    }

    #[test]
    fn parse_names() {
        for d in Dataset::ALL {
            assert_eq!(d.name().parse::<Dataset>().unwrap(), d);
        }
        assert!("moons".parse::<Dataset>().is_err());
    }
}
