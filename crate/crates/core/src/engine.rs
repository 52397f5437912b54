//! Shared machinery for hard (deterministic) designs.
//!
//! A design is described by a list of decoders, each reconstructing one source
//! from one subset of the received bits. The plain coder has one decoder per
//! source; the routed network has one decoder per (sink, source) pair.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::model::{
    extract_index, BitLayout, BitSubset, CodebookTable, HighRateQuantizer, TrainingSet, MAX_TABLE_BITS,
};

/// Relative slack used when comparing candidate scores.
pub(crate) const TIE_EPS: f64 = 1e-12;

#[inline]
pub(crate) fn nearly_equal(a: f64, b: f64) -> bool {
    (a - b).abs() <= TIE_EPS * a.abs().max(b.abs()) + f64::MIN_POSITIVE
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Decoder {
    pub source: usize,
    pub subset: BitSubset,
    pub weight: f64,
}

/// Training data with every sample already mapped to its quantizer regions.
#[derive(Debug, Clone)]
pub(crate) struct Prepared {
    pub sources: usize,
    pub len: usize,
    pub values: Vec<f64>,
    pub regions: Vec<u16>,
    pub region_counts: Vec<usize>,
    pub means: Vec<f64>,
    /// `members[i][q]`: samples whose source `i` falls in region `q`.
    pub members: Vec<Vec<Vec<u32>>>,
}

impl Prepared {
    pub fn new(data: &TrainingSet, quantizers: &[HighRateQuantizer]) -> Result<Self> {
        let n = data.sources();
        if quantizers.len() != n {
            return Err(Error::invalid(format!(
                "{} quantizers for {n} sources",
                quantizers.len()
            )));
        }
        if quantizers.iter().any(|q| q.region_count() > u16::MAX as usize) {
            return Err(Error::invalid("at most 65535 quantizer regions are supported"));
        }
        let len = data.len();
        let region_counts: Vec<usize> = quantizers.iter().map(|q| q.region_count()).collect();
        let mut regions = Vec::with_capacity(len * n);
        let mut members: Vec<Vec<Vec<u32>>> = region_counts.iter().map(|&c| vec![Vec::new(); c]).collect();
        for (t, row) in data.rows().enumerate() {
            for (i, (&x, q)) in row.iter().zip(quantizers).enumerate() {
                let r = q.region(x);
                regions.push(r as u16);
                members[i][r].push(t as u32);
            }
        }
        let means = (0..n).map(|i| data.mean(i)).collect();
        Ok(Self {
            sources: n,
            len,
            values: data.as_flat().to_vec(),
            regions,
            region_counts,
            means,
            members,
        })
    }

    #[inline]
    pub fn value(&self, t: usize, i: usize) -> f64 {
        self.values[t * self.sources + i]
    }

    #[inline]
    pub fn region(&self, t: usize, i: usize) -> usize {
        self.regions[t * self.sources + i] as usize
    }
}

/// Received index of every training sample under the given labels.
pub(crate) fn full_indices(prep: &Prepared, layout: &BitLayout, labels: &[Vec<u32>]) -> Vec<u64> {
    let shifts: Vec<u32> = (0..prep.sources).map(|i| layout.shift(i)).collect();
    (0..prep.len)
        .map(|t| (0..prep.sources).fold(0u64, |acc, i| acc | (labels[i][prep.region(t, i)] as u64) << shifts[i]))
        .collect()
}

/// Sum of squared reconstruction errors of one decoder over the training set.
pub(crate) fn decoder_sse(prep: &Prepared, indices: &[u64], total: u32, dec: &Decoder, table: &CodebookTable) -> f64 {
    indices
        .iter()
        .enumerate()
        .map(|(t, &idx)| {
            let cell = extract_index(idx, total, dec.subset.mask());
            (prep.value(t, dec.source) - table.value(cell)).powi(2)
        })
        .sum()
}

pub(crate) fn weighted_distortion(
    prep: &Prepared,
    indices: &[u64],
    total: u32,
    decoders: &[Decoder],
    tables: &[CodebookTable],
) -> f64 {
    decoders
        .iter()
        .zip(tables)
        .filter(|(d, _)| d.weight > 0.0)
        .map(|(d, tab)| d.weight * decoder_sse(prep, indices, total, d, tab))
        .sum::<f64>()
        / prep.len as f64
}

/// Optimal relabeling of source `source` with every codebook held fixed.
///
/// Each region independently takes the label minimizing the weighted squared
/// error of the decoders that read this source's bits. The current label is
/// kept unless another label is strictly better; among strictly better labels
/// the smallest wins. Regions without samples are left alone. Returns whether
/// any label changed; `labels` and `indices` are updated in place.
pub(crate) fn wz_update(
    prep: &Prepared,
    layout: &BitLayout,
    source: usize,
    labels: &mut [u32],
    indices: &mut [u64],
    decoders: &[Decoder],
    tables: &[CodebookTable],
) -> bool {
    let own = layout.own_bits(source);
    let affected: Vec<(&Decoder, &CodebookTable)> = decoders
        .iter()
        .zip(tables)
        .filter(|(d, _)| d.weight > 0.0 && d.subset.intersects(own))
        .collect();
    if affected.is_empty() {
        return false;
    }
    let total = layout.total();
    let shift = layout.shift(source);
    let clear = !layout.label_mask(source);
    let label_count = 1u32 << layout.rate(source);
    let mut changed = false;
    let mut scores = vec![0.0; label_count as usize];
    for (region, members) in prep.members[source].iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        scores.iter_mut().for_each(|s| *s = 0.0);
        for &t in members {
            let t = t as usize;
            let base = indices[t] & clear;
            for k in 0..label_count {
                let idx = base | (k as u64) << shift;
                let mut err = 0.0;
                for (d, tab) in &affected {
                    let cell = extract_index(idx, total, d.subset.mask());
                    err += d.weight * (prep.value(t, d.source) - tab.value(cell)).powi(2);
                }
                scores[k as usize] += err;
            }
        }
        let current = labels[region];
        let mut best = current;
        for k in 0..label_count {
            let (sk, sb) = (scores[k as usize], scores[best as usize]);
            if sk < sb && !nearly_equal(sk, sb) {
                best = k;
            }
        }
        if best != current {
            labels[region] = best;
            changed = true;
            for &t in members {
                let t = t as usize;
                indices[t] = (indices[t] & clear) | (best as u64) << shift;
            }
        }
    }
    changed
}

#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    #[inline]
    fn merge(&mut self, n: f64, mean: f64, m2: f64) {
        if n == 0.0 {
            return;
        }
        if self.n == 0.0 {
            *self = Moments { n, mean, m2 };
            return;
        }
        let total = self.n + n;
        let delta = mean - self.mean;
        self.mean += delta * n / total;
        self.m2 += m2 + delta * delta * self.n * n / total;
        self.n = total;
    }
}

/// Per-cell sufficient statistics over the distinct received indices.
///
/// Any centroid codebook over a subset of the received bits is a merge of
/// these cells, so candidate subsets are scored without touching the samples.
#[derive(Debug, Clone)]
pub(crate) struct CellStats {
    total: u32,
    sources: usize,
    keys: Vec<u64>,
    counts: Vec<f64>,
    /// `[cell * sources + i]`
    means: Vec<f64>,
    m2: Vec<f64>,
    overall_means: Vec<f64>,
}

impl CellStats {
    pub fn build(prep: &Prepared, indices: &[u64], total: u32) -> Self {
        let n = prep.sources;
        let mut order: Vec<u32> = (0..prep.len as u32).collect();
        order.sort_unstable_by_key(|&t| indices[t as usize]);
        let mut keys = Vec::new();
        let mut counts = Vec::new();
        let mut means = Vec::new();
        let mut m2 = Vec::new();
        let mut start = 0;
        while start < order.len() {
            let key = indices[order[start] as usize];
            let mut end = start;
            while end < order.len() && indices[order[end] as usize] == key {
                end += 1;
            }
            let run = &order[start..end];
            let cnt = run.len() as f64;
            keys.push(key);
            counts.push(cnt);
            for i in 0..n {
                let mean = run.iter().map(|&t| prep.value(t as usize, i)).sum::<f64>() / cnt;
                let dev = run
                    .iter()
                    .map(|&t| (prep.value(t as usize, i) - mean).powi(2))
                    .sum::<f64>();
                means.push(mean);
                m2.push(dev);
            }
            start = end;
        }
        Self {
            total,
            sources: n,
            keys,
            counts,
            means,
            m2,
            overall_means: prep.means.clone(),
        }
    }

    fn aggregate(&self, source: usize, subset: BitSubset) -> Aggregate {
        let bits = subset.len();
        if bits <= 22 {
            let mut cells = vec![Moments::default(); 1usize << bits];
            for (c, &key) in self.keys.iter().enumerate() {
                let cell = extract_index(key, self.total, subset.mask()) as usize;
                let o = c * self.sources + source;
                cells[cell].merge(self.counts[c], self.means[o], self.m2[o]);
            }
            Aggregate::Dense(cells)
        } else {
            let mut cells: HashMap<u64, Moments> = HashMap::new();
            for (c, &key) in self.keys.iter().enumerate() {
                let cell = extract_index(key, self.total, subset.mask());
                let o = c * self.sources + source;
                cells
                    .entry(cell)
                    .or_default()
                    .merge(self.counts[c], self.means[o], self.m2[o]);
            }
            Aggregate::Sparse(cells)
        }
    }

    /// Within-cell sum of squared errors of a centroid decoder for `source`
    /// reading `subset`.
    pub fn centroid_sse(&self, source: usize, subset: BitSubset) -> f64 {
        match self.aggregate(source, subset) {
            Aggregate::Dense(cells) => cells.iter().map(|m| m.m2).sum(),
            Aggregate::Sparse(cells) => cells.values().map(|m| m.m2).sum(),
        }
    }

    /// Centroid codebook for `source` reading `subset`.
    pub fn centroid_table(&self, source: usize, subset: BitSubset) -> Result<CodebookTable> {
        let bits = subset.len();
        if bits > MAX_TABLE_BITS {
            return Err(Error::invalid(format!(
                "a {bits}-bit decoder table is too large to materialize"
            )));
        }
        let mut table = CodebookTable::constant(bits, self.overall_means[source]);
        let fill = |table: &mut CodebookTable, cell: usize, m: &Moments| {
            if m.n > 0.0 {
                table.values[cell] = m.mean;
                table.populated[cell] = true;
            }
        };
        match self.aggregate(source, subset) {
            Aggregate::Dense(cells) => {
                for (c, m) in cells.iter().enumerate() {
                    fill(&mut table, c, m);
                }
            }
            Aggregate::Sparse(cells) => {
                for (&c, m) in &cells {
                    fill(&mut table, c as usize, m);
                }
            }
        }
        Ok(table)
    }
}

enum Aggregate {
    Dense(Vec<Moments>),
    Sparse(HashMap<u64, Moments>),
}

/// Centroid codebook computed directly from the samples.
pub(crate) fn centroid_table_direct(
    prep: &Prepared,
    indices: &[u64],
    total: u32,
    source: usize,
    subset: BitSubset,
) -> Result<CodebookTable> {
    let bits = subset.len();
    if bits > MAX_TABLE_BITS {
        return Err(Error::invalid(format!(
            "a {bits}-bit decoder table is too large to materialize"
        )));
    }
    let cells = 1usize << bits;
    let mut sums = vec![0.0; cells];
    let mut counts = vec![0usize; cells];
    for (t, &idx) in indices.iter().enumerate() {
        let c = extract_index(idx, total, subset.mask()) as usize;
        sums[c] += prep.value(t, source);
        counts[c] += 1;
    }
    let mut table = CodebookTable::constant(bits, prep.means[source]);
    for c in 0..cells {
        if counts[c] > 0 {
            table.values[c] = sums[c] / counts[c] as f64;
            table.populated[c] = true;
        }
    }
    Ok(table)
}

/// Pick among scored candidates: lowest score; among near-ties prefer the
/// larger subset, then the current one, then the lexicographically smallest.
pub(crate) fn choose_subset(candidates: &[(BitSubset, f64)], current: BitSubset) -> (BitSubset, f64) {
    let min = candidates.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
    let mut best: Option<(BitSubset, f64)> = None;
    for &(s, score) in candidates {
        if !nearly_equal(score, min) && score > min {
            continue;
        }
        best = match best {
            None => Some((s, score)),
            Some((b, bs)) => {
                let better = s.len() > b.len()
                    || (s.len() == b.len() && s == current && b != current)
                    || (s.len() == b.len()
                        && b != current
                        && s != current
                        && s.lex_cmp(&b) == std::cmp::Ordering::Less);
                if better {
                    Some((s, score))
                } else {
                    Some((b, bs))
                }
            }
        };
    }
    best.expect("at least one candidate")
}
