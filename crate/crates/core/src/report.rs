//! Operational trade-off curve rows and their CSV / JSON serialization.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::Result;

pub const CURVE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// What the cost axis measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CostKind {
    /// Average decoder codebook size.
    Complexity,
    /// Total Steiner-tree communication cost.
    Communication,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffPoint {
    pub lambda: f64,
    pub split: Split,
    pub method: String,
    pub cost_kind: CostKind,
    pub cost: f64,
    pub distortion: f64,
    pub distortion_db: f64,
    pub lagrangian: f64,
    pub seed: u64,
    pub wall_time_s: f64,
}

impl TradeoffPoint {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        lambda: f64,
        split: Split,
        method: impl Into<String>,
        cost_kind: CostKind,
        cost: f64,
        distortion: f64,
        seed: u64,
        wall_time_s: f64,
    ) -> Self {
        Self {
            lambda,
            split,
            method: method.into(),
            cost_kind,
            cost,
            distortion,
            distortion_db: to_db(distortion),
            lagrangian: distortion + lambda * cost,
            seed,
            wall_time_s,
        }
    }

    /// Same design point re-measured on another data split.
    pub fn on_split(&self, split: Split, distortion: f64) -> Self {
        Self {
            split,
            distortion,
            distortion_db: to_db(distortion),
            lagrangian: distortion + self.lambda * self.cost,
            ..self.clone()
        }
    }
}

/// `10·log10` of a mean squared error.
pub fn to_db(mse: f64) -> f64 {
    10.0 * mse.log10()
}

pub const CSV_HEADER: [&str; 10] = [
    "lambda",
    "split",
    "method",
    "cost_kind",
    "cost",
    "distortion",
    "distortion_db",
    "lagrangian",
    "seed",
    "wall_time_s",
];

pub fn write_csv<W: Write>(points: &[TradeoffPoint], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for p in points {
        w.write_record(&[
            format!("{:e}", p.lambda),
            json_tag(&p.split),
            p.method.clone(),
            json_tag(&p.cost_kind),
            format!("{}", p.cost),
            format!("{:e}", p.distortion),
            format!("{:.6}", p.distortion_db),
            format!("{:e}", p.lagrangian),
            p.seed.to_string(),
            format!("{:.3}", p.wall_time_s),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn json_tag<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|v| v.as_str().map(str::to_owned))
        .unwrap_or_default()
}

fn csv_err(e: csv::Error) -> crate::Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => io.into(),
        other => crate::Error::Invalid(format!("csv: {other:?}")),
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CurveFile {
    pub schema_version: u32,
    pub points: Vec<TradeoffPoint>,
}

pub fn write_json<W: Write>(points: &[TradeoffPoint], out: W) -> Result<()> {
    let file = CurveFile {
        schema_version: CURVE_SCHEMA_VERSION,
        points: points.to_vec(),
    };
    serde_json::to_writer_pretty(out, &file).map_err(|e| crate::Error::Invalid(e.to_string()))
}

pub fn read_json(text: &str) -> Result<CurveFile> {
    serde_json::from_str(text).map_err(|e| crate::Error::Invalid(e.to_string()))
}

/// Write `<stem>.csv` and `<stem>.json` under `dir`.
pub fn emit_curves(points: &[TradeoffPoint], dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir)?;
    let csv_path = dir.join(format!("{stem}.csv"));
    let json_path = dir.join(format!("{stem}.json"));
    write_csv(points, fs::File::create(&csv_path)?)?;
    let mut json = fs::File::create(&json_path)?;
    write_json(points, &mut json)?;
    json.write_all(b"\n")?;
    Ok((csv_path, json_path))
}

/// Points not dominated by any point of lower-or-equal cost, sorted by cost.
pub fn lower_envelope(points: &[TradeoffPoint]) -> Vec<TradeoffPoint> {
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.cost.total_cmp(&b.cost).then(a.distortion.total_cmp(&b.distortion)));
    let mut out: Vec<TradeoffPoint> = Vec::new();
    for p in sorted {
        if out.last().is_none_or(|l| p.distortion < l.distortion) {
            out.push(p);
        }
    }
    out
}

/// Indices of points whose distortion exceeds that of some point with lower
/// or equal cost (non-monotone operating points).
pub fn monotonicity_violations(points: &[TradeoffPoint]) -> Vec<usize> {
    (0..points.len())
        .filter(|&i| {
            points
                .iter()
                .any(|q| q.cost <= points[i].cost && q.distortion < points[i].distortion && q.cost < points[i].cost)
        })
        .collect()
}

/// Smallest distortion among points with cost at most `budget`.
pub fn best_within_budget(points: &[TradeoffPoint], budget: f64) -> Option<f64> {
    points
        .iter()
        .filter(|p| p.cost <= budget * (1.0 + 1e-12))
        .map(|p| p.distortion)
        .min_by(f64::total_cmp)
}
