//! WebAssembly bindings for the browser demo. Every export returns a JSON
//! string; failures come back as `{"error": "..."}`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use serde::Serialize;
use serde_json::json;
use wasm_bindgen::prelude::*;
use wzdesign::anneal::gibbs_row;
use wzdesign::data::gen_gaussian_chain;
use wzdesign::greedy::{run_greedy, GreedyConfig};
use wzdesign::quantizer::{design_all, lloyd_max_traced, LloydConfig};
use wzdesign::TrainingSet;

/// Largest inputs accepted, so a page cannot freeze the tab for minutes.
pub const MAX_SAMPLES: usize = 20_000;
pub const MAX_SOURCES: usize = 6;

fn to_json<T: Serialize>(r: Result<T, String>) -> String {
    match r {
        Ok(v) => serde_json::to_string(&v).unwrap_or_else(|e| json!({ "error": e.to_string() }).to_string()),
        Err(e) => json!({ "error": e }).to_string(),
    }
}

#[derive(Debug, Serialize)]
pub struct QuantizerView {
    pub boundaries: Vec<f64>,
    pub codewords: Vec<f64>,
    /// Distortion after each Lloyd iteration.
    pub history: Vec<f64>,
    /// Histogram of the samples over `bins` equal cells of `[lo, hi]`.
    pub histogram: Vec<usize>,
    pub lo: f64,
    pub hi: f64,
}

/// Lloyd-Max quantizer for `samples` standard normal draws.
pub fn quantizer_view(regions: usize, samples: usize, seed: u64) -> Result<QuantizerView, String> {
    if samples == 0 || samples > MAX_SAMPLES {
        return Err(format!("samples must lie in 1..={MAX_SAMPLES}"));
    }
    let data = gen_gaussian_chain(1, 0.0, samples, seed).map_err(|e| e.to_string())?;
    let xs = data.column(0);
    let out = lloyd_max_traced(&xs, regions, LloydConfig::default()).map_err(|e| e.to_string())?;
    let (lo, hi) = (-4.0, 4.0);
    let bins = 80;
    let mut histogram = vec![0; bins];
    for &x in &xs {
        let b = ((x - lo) / (hi - lo) * bins as f64).floor();
        if (0.0..bins as f64).contains(&b) {
            histogram[b as usize] += 1;
        }
    }
    Ok(QuantizerView {
        boundaries: out.quantizer.boundaries().to_vec(),
        codewords: out.quantizer.codewords().to_vec(),
        history: out.history,
        histogram,
        lo,
        hi,
    })
}

#[derive(Debug, Serialize)]
pub struct SweepPoint {
    pub lambda: f64,
    pub complexity: f64,
    pub distortion_db: f64,
    /// Number of bits each source's decoder reads.
    pub subset_sizes: Vec<u32>,
}

/// Greedy complexity-distortion sweep on a Gaussian chain with two bits per
/// source.
pub fn sweep_points(
    sources: usize,
    rho: f64,
    samples: usize,
    seed: u64,
    lambdas: &[f64],
) -> Result<Vec<SweepPoint>, String> {
    if sources == 0 || sources > MAX_SOURCES {
        return Err(format!("sources must lie in 1..={MAX_SOURCES}"));
    }
    if samples == 0 || samples > MAX_SAMPLES {
        return Err(format!("samples must lie in 1..={MAX_SAMPLES}"));
    }
    let data: TrainingSet = gen_gaussian_chain(sources, rho, samples, seed).map_err(|e| e.to_string())?;
    let q = design_all(&data, &vec![16; sources], LloydConfig::default()).map_err(|e| e.to_string())?;
    lambdas
        .iter()
        .map(|&lambda| {
            let cfg = GreedyConfig {
                lambda,
                restarts: 3,
                rng_seed: seed,
                ..Default::default()
            };
            let out = run_greedy(&data, &q, &vec![2; sources], &cfg).map_err(|e| e.to_string())?;
            Ok(SweepPoint {
                lambda,
                complexity: out.point.cost,
                distortion_db: out.point.distortion_db,
                subset_sizes: out.system.selector.subsets().iter().map(|s| s.len()).collect(),
            })
        })
        .collect()
}

/// Gibbs rows of `distortions` at each temperature.
pub fn gibbs_rows(distortions: &[f64], temperatures: &[f64]) -> Result<Vec<Vec<f64>>, String> {
    if distortions.is_empty() || distortions.iter().any(|d| !d.is_finite()) {
        return Err("distortions must be finite and nonempty".to_string());
    }
    if temperatures.iter().any(|t| !(*t > 0.0)) {
        return Err("temperatures must be positive".to_string());
    }
    Ok(temperatures.iter().map(|&t| gibbs_row(distortions, t)).collect())
}

#[wasm_bindgen]
pub fn design_quantizer(regions: usize, samples: usize, seed: u32) -> String {
    to_json(quantizer_view(regions, samples, seed as u64))
}

#[wasm_bindgen]
pub fn complexity_sweep(sources: usize, rho: f64, samples: usize, seed: u32, lambdas: Vec<f64>) -> String {
    to_json(sweep_points(sources, rho, samples, seed as u64, &lambdas))
}

#[wasm_bindgen]
pub fn gibbs_curve(distortions: Vec<f64>, temperatures: Vec<f64>) -> String {
    to_json(gibbs_rows(&distortions, &temperatures))
}
