//! Ground-truth grid maps, their CSV format, synthetic surfaces and the
//! noisy measurement oracle.
//!
//! Grid files carry the header `x_mm,y_mm,value` and one row per lattice
//! point, in any order. The lattice must be complete and uniformly spaced.

use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{DomainError, GridDomain, Position};
use crate::gp::{kernel_eval, KernelParams};

/// Relative tolerance on lattice spacing.
const SPACING_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{path}: lattice is incomplete, no value at x_mm={x}, y_mm={y}")]
    IncompleteLattice { path: String, x: f64, y: f64 },
    #[error("{path}: {axis} spacing is not uniform ({detail})")]
    NonUniformSpacing {
        path: String,
        axis: &'static str,
        detail: String,
    },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("grid index {0} is outside the map")]
    OffGridIndex(usize),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Values on every point of a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMap {
    domain: GridDomain,
    values: Vec<f64>,
}

impl GridMap {
    pub fn new(domain: GridDomain, values: Vec<f64>) -> Result<Self, DataError> {
        if values.len() != domain.len() {
            return Err(DataError::InvalidConfig(format!(
                "{} values for a grid of {} points",
                values.len(),
                domain.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(DataError::InvalidConfig(format!("value at index {i} is not finite")));
        }
        Ok(Self { domain, values })
    }

    pub fn domain(&self) -> &GridDomain {
        &self.domain
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, index: usize) -> Option<f64> {
        self.values.get(index).copied()
    }

    /// `true` where `f(x) >= theta` (normal); the red zone is `f < theta`.
    pub fn truth(&self, theta: f64) -> Vec<bool> {
        self.values.iter().map(|v| *v >= theta).collect()
    }

    pub fn range(&self) -> f64 {
        let lo = self.values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        hi - lo
    }

    /// Rows in row-major lattice order.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), DataError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["x_mm", "y_mm", "value"])
            .map_err(csv_io)?;
        for (i, v) in self.values.iter().enumerate() {
            let p = self.domain.point_at(i);
            out.write_record([p.x.to_string(), p.y.to_string(), v.to_string()])
                .map_err(csv_io)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}

fn csv_io(e: csv::Error) -> DataError {
    DataError::Io(std::io::Error::other(e))
}

pub fn load_grid_csv(path: &Path) -> Result<GridMap, DataError> {
    let f = std::fs::File::open(path)?;
    read_grid_csv(f, &path.display().to_string())
}

/// Parse grid CSV text; `name` is used in error messages.
pub fn read_grid_csv<R: Read>(reader: R, name: &str) -> Result<GridMap, DataError> {
    let parse_err = |message: String| DataError::Parse {
        path: name.to_string(),
        message,
    };
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| parse_err(e.to_string()))?
        .clone();
    let expected = ["x_mm", "y_mm", "value"];
    if headers.len() != 3 || headers.iter().zip(expected).any(|(a, b)| a != b) {
        return Err(parse_err(format!(
            "expected header x_mm,y_mm,value, found {}",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }

    let mut rows = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| parse_err(format!("line {line}: {e}")))?;
        let field = |j: usize| -> Result<f64, DataError> {
            let s = rec.get(j).unwrap_or("");
            let v: f64 = s
                .parse()
                .map_err(|_| parse_err(format!("line {line}: cannot parse '{s}' as a number")))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(parse_err(format!("line {line}: non-finite value '{s}'")))
            }
        };
        rows.push((field(0)?, field(1)?, field(2)?));
    }
    if rows.is_empty() {
        return Err(parse_err("no data rows".into()));
    }

    let xs = axis_values(rows.iter().map(|r| r.0));
    let ys = axis_values(rows.iter().map(|r| r.1));
    let dx = uniform_spacing(&xs, name, "x")?;
    let dy = uniform_spacing(&ys, name, "y")?;
    let domain = GridDomain::new(Position::new(xs[0], ys[0]), dx, dy, xs.len(), ys.len())?;

    let mut values: Vec<Option<f64>> = vec![None; domain.len()];
    for (x, y, v) in rows {
        let col = xs.binary_search_by(|a| a.total_cmp(&x)).expect("x from axis set");
        let row = ys.binary_search_by(|a| a.total_cmp(&y)).expect("y from axis set");
        let slot = &mut values[row * xs.len() + col];
        if slot.is_some() {
            return Err(parse_err(format!("duplicate entry at x_mm={x}, y_mm={y}")));
        }
        *slot = Some(v);
    }
    if let Some(i) = values.iter().position(Option::is_none) {
        let (row, col) = domain.row_col(i);
        return Err(DataError::IncompleteLattice {
            path: name.to_string(),
            x: xs[col],
            y: ys[row],
        });
    }
    GridMap::new(domain, values.into_iter().map(Option::unwrap).collect())
}

fn axis_values(it: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = it.collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

fn uniform_spacing(axis: &[f64], name: &str, label: &'static str) -> Result<f64, DataError> {
    if axis.len() == 1 {
        return Ok(1.0);
    }
    let spacing = (axis[axis.len() - 1] - axis[0]) / (axis.len() - 1) as f64;
    for (i, w) in axis.windows(2).enumerate() {
        let gap = w[1] - w[0];
        if ((gap - spacing) / spacing).abs() > SPACING_TOL {
            return Err(DataError::NonUniformSpacing {
                path: name.to_string(),
                axis: label,
                detail: format!("gap {gap} after coordinate {} vs mean spacing {spacing}", axis[i]),
            });
        }
    }
    Ok(spacing)
}

/// Synthetic ground-truth surfaces standing in for measured maps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SynthSpec {
    /// Low values within `band_mm` of the lattice edge, high values inside.
    EdgeBand { high: f64, low: f64, band_mm: f64 },
    /// Plane wave `offset + amplitude * sin(2 pi <k, x> / wavelength + phase)`
    /// with seeded direction and phase.
    SinusoidRidge {
        offset: f64,
        amplitude: f64,
        wavelength_mm: f64,
    },
    /// Exact draw from a zero-mean RBF GP, plus `offset`.
    GpDraw {
        offset: f64,
        amplitude: f64,
        length_scale_mm: f64,
    },
}

impl SynthSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            SynthSpec::EdgeBand { .. } => "edge_band",
            SynthSpec::SinusoidRidge { .. } => "sinusoid_ridge",
            SynthSpec::GpDraw { .. } => "gp_draw",
        }
    }
}

pub fn synth_map(spec: &SynthSpec, domain: &GridDomain, seed: u64) -> Result<GridMap, DataError> {
    let bad = |m: &str| Err(DataError::InvalidConfig(m.to_string()));
    let values = match *spec {
        SynthSpec::EdgeBand { high, low, band_mm } => {
            if !(high.is_finite() && low.is_finite()) {
                return bad("edge_band levels must be finite");
            }
            if !(band_mm.is_finite() && band_mm >= 0.0) {
                return bad("edge_band width must be finite and >= 0");
            }
            (0..domain.len())
                .map(|i| {
                    if domain.distance_to_boundary(&domain.point_at(i)) < band_mm {
                        low
                    } else {
                        high
                    }
                })
                .collect()
        }
        SynthSpec::SinusoidRidge {
            offset,
            amplitude,
            wavelength_mm,
        } => {
            if !(wavelength_mm.is_finite() && wavelength_mm > 0.0) {
                return bad("sinusoid wavelength must be finite and > 0");
            }
            if !(offset.is_finite() && amplitude.is_finite()) {
                return bad("sinusoid offset and amplitude must be finite");
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let angle: f64 = rand::Rng::random_range(&mut rng, 0.0..std::f64::consts::PI);
            let phase: f64 = rand::Rng::random_range(&mut rng, 0.0..std::f64::consts::TAU);
            let (s, c) = angle.sin_cos();
            (0..domain.len())
                .map(|i| {
                    let p = domain.point_at(i);
                    let t = (p.x * c + p.y * s) / wavelength_mm;
                    offset + amplitude * (std::f64::consts::TAU * t + phase).sin()
                })
                .collect()
        }
        SynthSpec::GpDraw {
            offset,
            amplitude,
            length_scale_mm,
        } => {
            let params = KernelParams::new(amplitude, length_scale_mm, 0.0)
                .map_err(|e| DataError::InvalidConfig(e.to_string()))?;
            if !offset.is_finite() {
                return bad("gp_draw offset must be finite");
            }
            gp_draw(&params, &domain.points(), seed)
                .into_iter()
                .map(|v| v + offset)
                .collect()
        }
    };
    GridMap::new(domain.clone(), values)
}

/// Sample `f ~ GP(0, k)` at `points` through a jittered Cholesky factor.
pub fn gp_draw(params: &KernelParams, points: &[Position], seed: u64) -> Vec<f64> {
    let n = points.len();
    let jitter = 1e-8 * params.amplitude;
    // dense lower factor, row-major
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = kernel_eval(params, &points[i], &points[j]);
            if i == j {
                s += jitter;
            }
            let (ri, rj) = (&l[i * n..i * n + j], &l[j * n..j * n + j]);
            s -= ri.iter().zip(rj).map(|(a, b)| a * b).sum::<f64>();
            l[i * n + j] = if i == j { s.max(0.0).sqrt() } else { s / l[j * n + j] };
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    (0..n)
        .map(|i| l[i * n..i * n + i + 1].iter().zip(&z).map(|(a, b)| a * b).sum())
        .collect()
}

/// Measurement oracle `y = f(x) + s`, `s ~ N(0, noise_sd^2)`, drawing fresh
/// noise on every query from a seeded stream.
#[derive(Debug, Clone)]
pub struct NoisyOracle {
    map: GridMap,
    noise: Option<Normal<f64>>,
    seed: u64,
    rng: ChaCha8Rng,
}

impl NoisyOracle {
    pub fn new(map: GridMap, noise_sd: f64, seed: u64) -> Result<Self, DataError> {
        if !(noise_sd.is_finite() && noise_sd >= 0.0) {
            return Err(DataError::InvalidConfig(format!(
                "noise_sd must be finite and >= 0, got {noise_sd}"
            )));
        }
        let noise = (noise_sd > 0.0)
            .then(|| Normal::new(0.0, noise_sd).expect("validated noise_sd"));
        Ok(Self {
            map,
            noise,
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn query(&mut self, index: usize) -> Result<f64, DataError> {
        let f = self.map.value(index).ok_or(DataError::OffGridIndex(index))?;
        Ok(match &self.noise {
            Some(n) => f + n.sample(&mut self.rng),
            None => f,
        })
    }

    pub fn map(&self) -> &GridMap {
        &self.map
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn noise_sd(&self) -> f64 {
        self.noise.map_or(0.0, |n| n.std_dev())
    }
}
