//! Per-source high-rate quantizers, designed once by Lloyd-Max on the
//! marginal training data and frozen for the joint design.

use crate::error::{Error, Result};
use crate::model::{HighRateQuantizer, TrainingSet};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LloydConfig {
    /// Stop when the relative distortion change falls below this.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for LloydConfig {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iters: 200,
        }
    }
}

/// Result of a Lloyd-Max run, with the distortion after each partition step.
#[derive(Debug, Clone)]
pub struct LloydOutcome {
    pub quantizer: HighRateQuantizer,
    pub history: Vec<f64>,
}

pub fn design_lloyd_max(samples: &[f64], regions: usize, tol: f64, max_iters: usize) -> Result<HighRateQuantizer> {
    lloyd_max_traced(samples, regions, LloydConfig { tol, max_iters }).map(|o| o.quantizer)
}

pub fn lloyd_max_traced(samples: &[f64], regions: usize, config: LloydConfig) -> Result<LloydOutcome> {
    if regions < 2 {
        return Err(Error::invalid("a quantizer needs at least two regions"));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("samples must be finite"));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let distinct = 1 + sorted.windows(2).filter(|w| w[0] != w[1]).count();
    if sorted.is_empty() || distinct == 1 {
        return Err(Error::DegenerateData(
            "all samples are identical; nothing to quantize".into(),
        ));
    }
    if distinct < regions {
        return Err(Error::DegenerateData(format!(
            "{distinct} distinct values cannot fill {regions} regions"
        )));
    }

    let n = sorted.len();
    // Quantile initialization, deduplicated by stepping through distinct values.
    let mut codewords: Vec<f64> = (0..regions)
        .map(|r| sorted[((r as f64 + 0.5) / regions as f64 * n as f64) as usize])
        .collect();
    dedup_codewords(&mut codewords, &sorted);

    let mut history = Vec::new();
    let mut prev = f64::INFINITY;
    for _ in 0..config.max_iters.max(1) {
        let boundaries = midpoints(&codewords);
        // Sorted samples make each cell a contiguous run.
        let mut sums = vec![0.0; regions];
        let mut counts = vec![0usize; regions];
        let mut dist = 0.0;
        let mut cell = 0;
        for &x in &sorted {
            while cell < regions - 1 && x >= boundaries[cell] {
                cell += 1;
            }
            sums[cell] += x;
            counts[cell] += 1;
            dist += (x - codewords[cell]).powi(2);
        }
        dist /= n as f64;
        history.push(dist);

        for r in 0..regions {
            if counts[r] > 0 {
                codewords[r] = sums[r] / counts[r] as f64;
            }
        }
        // Empty cells move to the sample with the largest error under the
        // current codewords.
        for r in 0..regions {
            if counts[r] == 0 {
                let far = farthest_sample(&sorted, &codewords);
                codewords[r] = far;
            }
        }
        codewords.sort_by(f64::total_cmp);
        dedup_codewords(&mut codewords, &sorted);

        let done = prev.is_finite() && (prev - dist).abs() <= config.tol * prev.max(f64::MIN_POSITIVE);
        prev = dist;
        if done {
            break;
        }
    }

    let boundaries = midpoints(&codewords);
    Ok(LloydOutcome {
        quantizer: HighRateQuantizer::new(boundaries, codewords)?,
        history,
    })
}

fn midpoints(codewords: &[f64]) -> Vec<f64> {
    codewords.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
}

fn farthest_sample(sorted: &[f64], codewords: &[f64]) -> f64 {
    let boundaries = midpoints(codewords);
    let mut best = (f64::NEG_INFINITY, sorted[0]);
    for &x in sorted {
        let c = codewords[boundaries.partition_point(|&b| b <= x)];
        let err = (x - c).abs();
        if err > best.0 {
            best = (err, x);
        }
    }
    best.1
}

/// Make codewords strictly increasing by replacing repeats with unused sample
/// values; requires at least `codewords.len()` distinct samples.
fn dedup_codewords(codewords: &mut [f64], sorted: &[f64]) {
    loop {
        codewords.sort_by(f64::total_cmp);
        let Some(dup) = codewords.windows(2).position(|w| w[0] >= w[1]) else {
            return;
        };
        let taken = |v: f64, cw: &[f64]| cw.contains(&v);
        // Nearest distinct sample value above the duplicate, else below.
        let v = codewords[dup];
        let replacement = sorted
            .iter()
            .copied()
            .find(|&s| s > v && !taken(s, codewords))
            .or_else(|| sorted.iter().rev().copied().find(|&s| s < v && !taken(s, codewords)))
            .expect("enough distinct samples");
        codewords[dup + 1] = replacement;
    }
}

pub fn quantize(x: f64, q: &HighRateQuantizer) -> usize {
    q.region(x)
}

/// Design one Lloyd-Max quantizer per source column.
pub fn design_all(data: &TrainingSet, regions: &[usize], config: LloydConfig) -> Result<Vec<HighRateQuantizer>> {
    if regions.len() != data.sources() {
        return Err(Error::invalid(format!(
            "{} region counts for {} sources",
            regions.len(),
            data.sources()
        )));
    }
    use rayon::prelude::*;
    (0..data.sources())
        .into_par_iter()
        .map(|i| design_lloyd_max(&data.column(i), regions[i], config.tol, config.max_iters))
        .collect()
}
