//! Synthetic correlated sources, CSV ingestion, normalization and splitting.

use std::path::{Path, PathBuf};

use nalgebra::{Cholesky, DMatrix};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::TrainingSet;

/// Diagonal loading used when factoring a field covariance.
pub const FIELD_JITTER: f64 = 1e-9;

/// Where the samples of an experiment come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SourceSpec {
    /// `N(0,1)` sources with correlation `ρ^|i-j|`.
    GaussianChain {
        sources: usize,
        rho: f64,
        samples: usize,
        seed: u64,
    },
    /// Sensors at planar positions with correlation `ρ^(d/d0)`.
    GaussianField {
        positions: Vec<[f64; 2]>,
        rho: f64,
        d0: f64,
        samples: usize,
        seed: u64,
    },
    Csv {
        path: PathBuf,
        #[serde(default = "default_true")]
        normalize: bool,
    },
}

fn default_true() -> bool {
    true
}

impl SourceSpec {
    pub fn generate(&self) -> Result<TrainingSet> {
        match self {
            SourceSpec::GaussianChain {
                sources,
                rho,
                samples,
                seed,
            } => gen_gaussian_chain(*sources, *rho, *samples, *seed),
            SourceSpec::GaussianField {
                positions,
                rho,
                d0,
                samples,
                seed,
            } => gen_gaussian_field(positions, *rho, *d0, *samples, *seed),
            SourceSpec::Csv { path, normalize } => load_csv(path, *normalize).map(|c| c.data),
        }
    }

    pub fn sources(&self) -> Option<usize> {
        match self {
            SourceSpec::GaussianChain { sources, .. } => Some(*sources),
            SourceSpec::GaussianField { positions, .. } => Some(positions.len()),
            SourceSpec::Csv { .. } => None,
        }
    }
}

fn check_rho(rho: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::invalid(format!("rho {rho} must lie in [0, 1)")));
    }
    Ok(())
}

fn sample_gaussian(cov: DMatrix<f64>, count: usize, seed: u64) -> Result<TrainingSet> {
    let n = cov.nrows();
    let chol = Cholesky::new(cov).ok_or_else(|| Error::invalid("covariance is not positive definite"))?;
    let l = chol.l();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n * count);
    let mut z = vec![0.0; n];
    for _ in 0..count {
        for v in z.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        for i in 0..n {
            let mut s = 0.0;
            for j in 0..=i {
                s += l[(i, j)] * z[j];
            }
            out.push(s);
        }
    }
    TrainingSet::new(n, out)
}

/// Jointly Gaussian unit-variance sources with `Σ_ij = ρ^|i-j|`.
pub fn gen_gaussian_chain(sources: usize, rho: f64, count: usize, seed: u64) -> Result<TrainingSet> {
    check_rho(rho)?;
    if sources == 0 || count == 0 {
        return Err(Error::invalid("need at least one source and one sample"));
    }
    let cov = DMatrix::from_fn(sources, sources, |i, j| rho.powi(i.abs_diff(j) as i32));
    let out = sample_gaussian(cov, count, seed);
    assert!(out.is_ok(), "chain covariance with rho < 1 is positive definite");
    out
}

/// Jointly Gaussian unit-variance sensors with `Σ_ij = ρ^(dist/d0)`.
pub fn gen_gaussian_field(positions: &[[f64; 2]], rho: f64, d0: f64, count: usize, seed: u64) -> Result<TrainingSet> {
    check_rho(rho)?;
    if !(d0 > 0.0) || !d0.is_finite() {
        return Err(Error::invalid(format!("d0 {d0} must be positive")));
    }
    if positions.is_empty() || count == 0 {
        return Err(Error::invalid("need at least one sensor and one sample"));
    }
    let n = positions.len();
    for i in 0..n {
        for j in i + 1..n {
            if positions[i] == positions[j] {
                return Err(Error::invalid(format!(
                    "sensors {i} and {j} coincide; their covariance is singular"
                )));
            }
        }
    }
    let cov = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            1.0 + FIELD_JITTER
        } else {
            rho.powf(distance(positions[i], positions[j]) / d0)
        }
    });
    sample_gaussian(cov, count, seed)
}

pub fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Rows loaded from a CSV file.
#[derive(Debug, Clone)]
pub struct CsvData {
    pub data: TrainingSet,
    pub header: Option<Vec<String>>,
    /// Rows skipped because a cell was empty.
    pub dropped_rows: usize,
}

pub fn load_csv(path: &Path, normalize: bool) -> Result<CsvData> {
    let text = std::fs::read_to_string(path)?;
    parse_csv(&text, normalize)
}

/// Parse comma-separated numeric columns. A first row that is not entirely
/// numeric is taken as a header. Rows with an empty cell are dropped.
pub fn parse_csv(text: &str, normalize: bool) -> Result<CsvData> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut header = None;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    let mut dropped = 0;
    for (r, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse {
            line: r + 1,
            column: 0,
            message: e.to_string(),
        })?;
        if rec.iter().all(str::is_empty) {
            continue;
        }
        if r == 0 && rec.iter().any(|c| !c.is_empty() && c.parse::<f64>().is_err()) {
            width = Some(rec.len());
            header = Some(rec.iter().map(str::to_owned).collect());
            continue;
        }
        let w = *width.get_or_insert(rec.len());
        if rec.len() != w {
            return Err(Error::Parse {
                line: r + 1,
                column: rec.len().min(w) + 1,
                message: format!("expected {w} columns, found {}", rec.len()),
            });
        }
        if rec.iter().any(str::is_empty) {
            dropped += 1;
            continue;
        }
        let row = rec
            .iter()
            .enumerate()
            .map(|(c, cell)| {
                cell.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Parse {
                        line: r + 1,
                        column: c + 1,
                        message: format!("not a number: {cell:?}"),
                    })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    if rows.len() < 2 {
        return Err(Error::DegenerateData(format!(
            "{} complete rows; at least 2 are needed",
            rows.len()
        )));
    }
    let mut data = TrainingSet::from_rows(&rows)?;
    if normalize {
        data = normalize_by_train_half(&data)?;
    }
    Ok(CsvData {
        data,
        header,
        dropped_rows: dropped,
    })
}

/// Rows used for training when splitting `n` rows at `fraction`.
pub fn train_len(n: usize, fraction: f64) -> usize {
    ((n as f64 * fraction).round() as usize).clamp(1, n.saturating_sub(1).max(1))
}

/// Standardize each column with the mean and population standard deviation
/// of the first (training) half of the rows.
pub fn normalize_by_train_half(data: &TrainingSet) -> Result<TrainingSet> {
    let n = data.sources();
    let head: Vec<usize> = (0..train_len(data.len(), 0.5)).collect();
    let train = data.select_rows(&head)?;
    let mut stats = Vec::with_capacity(n);
    for i in 0..n {
        let var = train.variance(i);
        if !(var > 0.0) {
            return Err(Error::DegenerateData(format!(
                "column {} has zero variance on the training rows",
                i + 1
            )));
        }
        stats.push((train.mean(i), var.sqrt()));
    }
    let values = data
        .rows()
        .flat_map(|r| {
            r.iter()
                .zip(&stats)
                .map(|(&x, &(m, s))| (x - m) / s)
                .collect::<Vec<_>>()
        })
        .collect();
    TrainingSet::new(n, values)
}

/// Split into train and test. `None` keeps time order (first rows train);
/// `Some(seed)` shuffles first.
pub fn split(data: &TrainingSet, fraction: f64, shuffle_seed: Option<u64>) -> Result<(TrainingSet, TrainingSet)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid(format!("split fraction {fraction} must lie in (0, 1)")));
    }
    if data.len() < 2 {
        return Err(Error::invalid("at least two rows are needed to split"));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    if let Some(seed) = shuffle_seed {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    let cut = train_len(data.len(), fraction);
    Ok((data.select_rows(&order[..cut])?, data.select_rows(&order[cut..])?))
}

/// Write samples as CSV with a `x1,x2,...` header.
pub fn write_csv<W: std::io::Write>(data: &TrainingSet, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let header: Vec<String> = (1..=data.sources()).map(|i| format!("x{i}")).collect();
    let io = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::invalid(format!("csv: {other:?}")),
    };
    w.write_record(&header).map_err(io)?;
    for row in data.rows() {
        w.write_record(row.iter().map(|v| format!("{v:e}"))).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}
