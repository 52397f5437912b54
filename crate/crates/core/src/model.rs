//! Domain types and exact evaluation of a fully specified (hard) coder.
//!
//! Bit convention used everywhere in the crate: the received index `I`
//! concatenates the per-source transmission indices with source 0 first, and
//! each source's index is written most-significant bit first. Global bit
//! position 0 is therefore the MSB of source 0. Extracting a subset of
//! positions packs them in ascending position order, smallest position in the
//! most-significant place.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest total received rate (bits) representable by a [`BitVector`].
pub const MAX_TOTAL_BITS: u32 = 64;

/// Largest bit subset for which a decoder table is materialized.
pub const MAX_TABLE_BITS: u32 = 26;

/// `|T| × N` matrix of training samples, row-major; column `i` is source `X_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSet {
    sources: usize,
    samples: Vec<f64>,
}

impl TrainingSet {
    pub fn new(sources: usize, samples: Vec<f64>) -> Result<Self> {
        if sources == 0 {
            return Err(Error::invalid("training set needs at least one source"));
        }
        if samples.is_empty() || !samples.len().is_multiple_of(sources) {
            return Err(Error::invalid(format!(
                "sample buffer of length {} is not a non-empty multiple of {sources} sources",
                samples.len()
            )));
        }
        if let Some(pos) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite sample at row {}, source {}",
                pos / sources,
                pos % sources
            )));
        }
        Ok(Self { sources, samples })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let sources = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != sources) {
            return Err(Error::invalid("rows have differing lengths"));
        }
        Self::new(sources, rows.concat())
    }

    pub fn sources(&self) -> usize {
        self.sources
    }

    pub fn len(&self) -> usize {
        self.samples.len() / self.sources
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.samples[t * self.sources..(t + 1) * self.sources]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.samples.chunks_exact(self.sources)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.samples
    }

    pub fn column(&self, i: usize) -> Vec<f64> {
        self.rows().map(|r| r[i]).collect()
    }

    pub fn mean(&self, i: usize) -> f64 {
        self.rows().map(|r| r[i]).sum::<f64>() / self.len() as f64
    }

    /// Population variance of source `i`.
    pub fn variance(&self, i: usize) -> f64 {
        let m = self.mean(i);
        self.rows().map(|r| (r[i] - m).powi(2)).sum::<f64>() / self.len() as f64
    }

    /// Pearson correlation between two sources.
    pub fn correlation(&self, i: usize, j: usize) -> f64 {
        let (mi, mj) = (self.mean(i), self.mean(j));
        let (mut sij, mut sii, mut sjj) = (0.0, 0.0, 0.0);
        for r in self.rows() {
            let (a, b) = (r[i] - mi, r[j] - mj);
            sij += a * b;
            sii += a * a;
            sjj += b * b;
        }
        sij / (sii * sjj).sqrt()
    }

    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        let mut samples = Vec::with_capacity(rows.len() * self.sources);
        for &t in rows {
            samples.extend_from_slice(self.row(t));
        }
        Self::new(self.sources, samples)
    }
}

/// Scalar partition of the real line into `region_count` intervals.
///
/// Region `r` covers `[boundaries[r-1], boundaries[r])`; the first and last
/// regions are unbounded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HighRateQuantizer {
    boundaries: Vec<f64>,
    codewords: Vec<f64>,
}

impl HighRateQuantizer {
    pub fn new(boundaries: Vec<f64>, codewords: Vec<f64>) -> Result<Self> {
        if codewords.len() < 2 {
            return Err(Error::invalid("a quantizer needs at least two regions"));
        }
        if boundaries.len() + 1 != codewords.len() {
            return Err(Error::invalid(format!(
                "{} boundaries do not match {} codewords",
                boundaries.len(),
                codewords.len()
            )));
        }
        if boundaries.iter().chain(&codewords).any(|v| !v.is_finite()) {
            return Err(Error::invalid("quantizer parameters must be finite"));
        }
        if !strictly_increasing(&boundaries) || !strictly_increasing(&codewords) {
            return Err(Error::invalid(
                "quantizer boundaries and codewords must be strictly increasing",
            ));
        }
        Ok(Self { boundaries, codewords })
    }

    /// Uniform partition of `[lo, hi]` with `regions` cells.
    pub fn uniform(lo: f64, hi: f64, regions: usize) -> Result<Self> {
        if regions < 2 || !(hi > lo) {
            return Err(Error::invalid("uniform quantizer needs lo < hi and >= 2 regions"));
        }
        let step = (hi - lo) / regions as f64;
        let codewords = (0..regions).map(|r| lo + step * (r as f64 + 0.5)).collect();
        let boundaries = (1..regions).map(|r| lo + step * r as f64).collect();
        Self::new(boundaries, codewords)
    }

    pub fn region_count(&self) -> usize {
        self.codewords.len()
    }

    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    pub fn codewords(&self) -> &[f64] {
        &self.codewords
    }

    /// Index of the region containing `x`; a value equal to a boundary belongs
    /// to the region on its right.
    pub fn region(&self, x: f64) -> usize {
        self.boundaries.partition_point(|&b| b <= x)
    }
}

fn strictly_increasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[0] < w[1])
}

/// Relabeling of quantizer regions into `2^rate` transmission indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WzMap {
    labels: Vec<u32>,
    rate: u32,
}

impl WzMap {
    pub fn new(labels: Vec<u32>, rate: u32) -> Result<Self> {
        if rate == 0 || rate > 16 {
            return Err(Error::invalid(format!("rate {rate} outside 1..=16 bits")));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= 1 << rate) {
            return Err(Error::invalid(format!("label {bad} does not fit in {rate} bits")));
        }
        Ok(Self { labels, rate })
    }

    /// Map region `r` to index `r`; requires `regions == 2^rate`.
    pub fn identity(rate: u32) -> Result<Self> {
        Self::new((0..1u32 << rate.min(16)).collect(), rate)
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn label(&self, region: usize) -> u32 {
        self.labels[region]
    }

    pub fn rate(&self) -> u32 {
        self.rate
    }

    pub fn index_count(&self) -> usize {
        1 << self.rate
    }

    #[cfg(test)]
    pub(crate) fn set_label(&mut self, region: usize, label: u32) {
        debug_assert!(label < 1 << self.rate);
        self.labels[region] = label;
    }
}

/// Received bits `I`; position 0 is the first transmitted (most significant) bit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BitVector {
    value: u64,
    len: u32,
}

impl BitVector {
    /// `value` holds position 0 in its most significant used bit.
    pub fn new(value: u64, len: u32) -> Result<Self> {
        if len > MAX_TOTAL_BITS {
            return Err(Error::invalid(format!("{len} bits exceed the 64-bit index")));
        }
        if len < 64 && value >> len != 0 {
            return Err(Error::invalid(format!("value {value} does not fit in {len} bits")));
        }
        Ok(Self { value, len })
    }

    pub fn from_bits(bits: &[bool]) -> Result<Self> {
        let value = bits.iter().fold(0u64, |acc, &b| (acc << 1) | b as u64);
        Self::new(value, bits.len() as u32)
    }

    pub fn value(&self) -> u64 {
        self.value
    }

    pub fn len(&self) -> u32 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn bit(&self, position: u32) -> bool {
        assert!(position < self.len, "bit position out of range");
        (self.value >> (self.len - 1 - position)) & 1 == 1
    }

    pub fn to_bits(&self) -> Vec<bool> {
        (0..self.len).map(|p| self.bit(p)).collect()
    }
}

impl fmt::Display for BitVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in 0..self.len {
            f.write_str(if self.bit(p) { "1" } else { "0" })?;
        }
        Ok(())
    }
}

/// Set of global bit positions, stored as a mask with bit `p` for position `p`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct BitSubset(u64);

impl BitSubset {
    pub const EMPTY: BitSubset = BitSubset(0);

    pub fn from_mask(mask: u64) -> Self {
        Self(mask)
    }

    pub fn from_positions<I: IntoIterator<Item = u32>>(positions: I) -> Result<Self> {
        let mut mask = 0u64;
        for p in positions {
            if p >= MAX_TOTAL_BITS {
                return Err(Error::PositionOutOfRange {
                    position: p,
                    len: MAX_TOTAL_BITS,
                });
            }
            mask |= 1 << p;
        }
        Ok(Self(mask))
    }

    /// Positions `start..start+len`.
    pub fn range(start: u32, len: u32) -> Self {
        if len == 0 {
            return Self::EMPTY;
        }
        let ones = if len >= 64 { u64::MAX } else { (1u64 << len) - 1 };
        Self(ones << start)
    }

    pub fn mask(&self) -> u64 {
        self.0
    }

    pub fn len(&self) -> u32 {
        self.0.count_ones()
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }

    pub fn contains(&self, position: u32) -> bool {
        position < 64 && self.0 >> position & 1 == 1
    }

    pub fn is_superset_of(&self, other: BitSubset) -> bool {
        self.0 & other.0 == other.0
    }

    pub fn toggled(&self, position: u32) -> Self {
        Self(self.0 ^ (1 << position))
    }

    pub fn union(&self, other: BitSubset) -> Self {
        Self(self.0 | other.0)
    }

    pub fn intersects(&self, other: BitSubset) -> bool {
        self.0 & other.0 != 0
    }

    /// Largest position plus one (0 for the empty set).
    pub fn span(&self) -> u32 {
        64 - self.0.leading_zeros()
    }

    pub fn positions(&self) -> impl Iterator<Item = u32> {
        let mut m = self.0;
        std::iter::from_fn(move || {
            if m == 0 {
                None
            } else {
                let p = m.trailing_zeros();
                m &= m - 1;
                Some(p)
            }
        })
    }

    /// Lexicographic order of the ascending position lists.
    pub fn lex_cmp(&self, other: &BitSubset) -> Ordering {
        self.positions().cmp(other.positions())
    }
}

/// Pack the bits of `index` (a `total`-bit received index) at the positions in
/// `mask`, ascending position first.
#[inline]
pub(crate) fn extract_index(index: u64, total: u32, mask: u64) -> u64 {
    let mut out = 0u64;
    let mut m = mask;
    while m != 0 {
        let p = m.trailing_zeros();
        out = (out << 1) | ((index >> (total - 1 - p)) & 1);
        m &= m - 1;
    }
    out
}

/// Where each source's bits sit in the received index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitLayout {
    rates: Vec<u32>,
    offsets: Vec<u32>,
    total: u32,
}

impl BitLayout {
    pub fn new(rates: &[u32]) -> Result<Self> {
        let mut offsets = Vec::with_capacity(rates.len());
        let mut total = 0u32;
        for &r in rates {
            if r == 0 {
                return Err(Error::invalid("every source must transmit at least one bit"));
            }
            offsets.push(total);
            total += r;
        }
        if total > MAX_TOTAL_BITS {
            return Err(Error::invalid(format!(
                "total rate {total} exceeds {MAX_TOTAL_BITS} bits"
            )));
        }
        Ok(Self {
            rates: rates.to_vec(),
            offsets,
            total,
        })
    }

    pub fn sources(&self) -> usize {
        self.rates.len()
    }

    pub fn total(&self) -> u32 {
        self.total
    }

    pub fn rate(&self, i: usize) -> u32 {
        self.rates[i]
    }

    pub fn rates(&self) -> &[u32] {
        &self.rates
    }

    pub fn offset(&self, i: usize) -> u32 {
        self.offsets[i]
    }

    /// Positions carrying source `i`'s transmission index.
    pub fn own_bits(&self, i: usize) -> BitSubset {
        BitSubset::range(self.offsets[i], self.rates[i])
    }

    pub fn all_bits(&self) -> BitSubset {
        BitSubset::range(0, self.total)
    }

    /// Source owning global position `p`.
    pub fn source_of(&self, p: u32) -> usize {
        self.offsets.partition_point(|&o| o <= p) - 1
    }

    /// Left shift that places source `i`'s label inside the received index.
    #[inline]
    pub(crate) fn shift(&self, i: usize) -> u32 {
        self.total - self.offsets[i] - self.rates[i]
    }

    #[inline]
    pub(crate) fn label_mask(&self, i: usize) -> u64 {
        ((1u64 << self.rates[i]) - 1) << self.shift(i)
    }

    pub(crate) fn compose(&self, labels: impl IntoIterator<Item = u32>) -> u64 {
        labels
            .into_iter()
            .enumerate()
            .fold(0u64, |acc, (i, l)| acc | (l as u64) << self.shift(i))
    }
}

/// Per-source subsets of received positions feeding each decoder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BitSubsetSelector {
    subsets: Vec<BitSubset>,
    total_bits: u32,
}

impl BitSubsetSelector {
    pub fn new(subsets: Vec<BitSubset>, total_bits: u32) -> Result<Self> {
        if total_bits > MAX_TOTAL_BITS {
            return Err(Error::invalid("too many received bits"));
        }
        for s in &subsets {
            if s.span() > total_bits {
                return Err(Error::PositionOutOfRange {
                    position: s.span() - 1,
                    len: total_bits,
                });
            }
        }
        Ok(Self { subsets, total_bits })
    }

    pub fn own_bits(layout: &BitLayout) -> Self {
        Self {
            subsets: (0..layout.sources()).map(|i| layout.own_bits(i)).collect(),
            total_bits: layout.total(),
        }
    }

    pub fn full(layout: &BitLayout) -> Self {
        Self {
            subsets: vec![layout.all_bits(); layout.sources()],
            total_bits: layout.total(),
        }
    }

    pub fn empty(layout: &BitLayout) -> Self {
        Self {
            subsets: vec![BitSubset::EMPTY; layout.sources()],
            total_bits: layout.total(),
        }
    }

    pub fn subsets(&self) -> &[BitSubset] {
        &self.subsets
    }

    pub fn subset(&self, i: usize) -> BitSubset {
        self.subsets[i]
    }

    pub fn total_bits(&self) -> u32 {
        self.total_bits
    }
}

/// Reconstruction table over the `2^|S|` cells of one decoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodebookTable {
    pub values: Vec<f64>,
    pub populated: Vec<bool>,
    /// Returned for cells that saw no training data; the source's training mean.
    pub fallback: f64,
}

impl CodebookTable {
    /// Table where every cell holds `value` and is marked unpopulated.
    pub fn constant(bits: u32, value: f64) -> Self {
        let cells = 1usize << bits;
        Self {
            values: vec![value; cells],
            populated: vec![false; cells],
            fallback: value,
        }
    }

    pub fn cells(&self) -> usize {
        self.values.len()
    }

    /// Reconstruction and whether the fallback was used.
    #[inline]
    pub fn lookup(&self, cell: u64) -> (f64, bool) {
        let c = cell as usize;
        if self.populated[c] {
            (self.values[c], false)
        } else {
            (self.fallback, true)
        }
    }

    #[inline]
    pub(crate) fn value(&self, cell: u64) -> f64 {
        self.lookup(cell).0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderCodebook {
    pub tables: Vec<CodebookTable>,
}

impl DecoderCodebook {
    pub fn table(&self, i: usize) -> &CodebookTable {
        &self.tables[i]
    }
}

/// A complete designed coder: quantizers, Wyner-Ziv maps, selector, codebooks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSystem {
    pub quantizers: Vec<HighRateQuantizer>,
    pub wz_maps: Vec<WzMap>,
    pub selector: BitSubsetSelector,
    pub codebooks: DecoderCodebook,
    pub weights: Vec<f64>,
}

impl SourceSystem {
    pub fn new(
        quantizers: Vec<HighRateQuantizer>,
        wz_maps: Vec<WzMap>,
        selector: BitSubsetSelector,
        codebooks: DecoderCodebook,
        weights: Vec<f64>,
    ) -> Result<Self> {
        let n = quantizers.len();
        if n == 0 {
            return Err(Error::invalid("system needs at least one source"));
        }
        if wz_maps.len() != n || selector.subsets().len() != n || codebooks.tables.len() != n || weights.len() != n {
            return Err(Error::invalid("per-source component counts disagree"));
        }
        for (i, (q, w)) in quantizers.iter().zip(&wz_maps).enumerate() {
            if w.labels().len() != q.region_count() {
                return Err(Error::invalid(format!(
                    "source {i}: WZ-map has {} labels for {} regions",
                    w.labels().len(),
                    q.region_count()
                )));
            }
        }
        let total: u32 = wz_maps.iter().map(WzMap::rate).sum();
        if selector.total_bits() != total {
            return Err(Error::invalid(format!(
                "selector covers {} bits but encoders emit {total}",
                selector.total_bits()
            )));
        }
        for (i, t) in codebooks.tables.iter().enumerate() {
            if t.cells() != 1 << selector.subset(i).len() {
                return Err(Error::invalid(format!(
                    "source {i}: codebook has {} cells for a {}-bit subset",
                    t.cells(),
                    selector.subset(i).len()
                )));
            }
        }
        check_weights(&weights)?;
        Ok(Self {
            quantizers,
            wz_maps,
            selector,
            codebooks,
            weights,
        })
    }

    pub fn sources(&self) -> usize {
        self.quantizers.len()
    }

    pub fn rates(&self) -> Vec<u32> {
        self.wz_maps.iter().map(WzMap::rate).collect()
    }

    pub fn layout(&self) -> BitLayout {
        BitLayout::new(&self.rates()).expect("validated at construction")
    }

    pub fn complexity(&self) -> f64 {
        complexity(&self.selector)
    }
}

pub(crate) fn check_weights(weights: &[f64]) -> Result<()> {
    if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
        return Err(Error::invalid("weights must be finite and nonnegative"));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > 1e-12 {
        return Err(Error::invalid(format!("weights sum to {sum}, not 1")));
    }
    Ok(())
}

pub fn uniform_weights(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

/// `E_i(x_i) = W_i(H_i(x_i))` for every source, concatenated.
pub fn encode(x: &[f64], system: &SourceSystem) -> BitVector {
    assert_eq!(x.len(), system.sources(), "sample length must equal source count");
    let layout = system.layout();
    let index = layout.compose(
        x.iter()
            .zip(system.quantizers.iter().zip(&system.wz_maps))
            .map(|(&v, (q, w))| w.label(q.region(v))),
    );
    BitVector {
        value: index,
        len: layout.total(),
    }
}

/// Packed value of the bits of `bits` at `subset`'s positions.
pub fn extract_bits(bits: &BitVector, subset: &BitSubset) -> Result<u64> {
    if subset.span() > bits.len() {
        return Err(Error::PositionOutOfRange {
            position: subset.span() - 1,
            len: bits.len(),
        });
    }
    Ok(extract_index(bits.value(), bits.len(), subset.mask()))
}

pub fn decode(bits: &BitVector, system: &SourceSystem) -> Vec<f64> {
    (0..system.sources())
        .map(|i| {
            let cell = extract_index(bits.value(), bits.len(), system.selector.subset(i).mask());
            system.codebooks.tables[i].value(cell)
        })
        .collect()
}

/// Average codebook size `(1/N) Σ_i 2^|S(i)|`.
pub fn complexity(selector: &BitSubsetSelector) -> f64 {
    let n = selector.subsets().len();
    selector
        .subsets()
        .iter()
        .map(|s| 2f64.powi(s.len() as i32))
        .sum::<f64>()
        / n as f64
}

/// Codewords a monolithic decoder would store: `N · 2^(Σ R_i)`.
pub fn naive_decoder_storage(sources: usize, rates: &[u32]) -> u128 {
    let total: u32 = rates.iter().sum();
    sources as u128 * (1u128 << total)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    /// Weighted MSE `Σ_i γ_i · mse_i`.
    pub distortion: f64,
    pub per_source: Vec<f64>,
    /// Number of (sample, source) lookups that hit an unpopulated cell.
    pub fallback_hits: usize,
}

pub fn evaluate(data: &TrainingSet, system: &SourceSystem) -> Evaluation {
    assert_eq!(data.sources(), system.sources(), "source count mismatch");
    let n = system.sources();
    let mut sse = vec![0.0; n];
    let mut fallback_hits = 0;
    for row in data.rows() {
        let bits = encode(row, system);
        for i in 0..n {
            let cell = extract_index(bits.value(), bits.len(), system.selector.subset(i).mask());
            let (v, fell_back) = system.codebooks.tables[i].lookup(cell);
            fallback_hits += fell_back as usize;
            sse[i] += (row[i] - v).powi(2);
        }
    }
    let per_source: Vec<f64> = sse.iter().map(|s| s / data.len() as f64).collect();
    let distortion = per_source.iter().zip(&system.weights).map(|(m, w)| m * w).sum();
    Evaluation {
        distortion,
        per_source,
        fallback_hits,
    }
}

/// Empirical weighted mean squared error of `system` on `data`.
pub fn distortion(data: &TrainingSet, system: &SourceSystem) -> f64 {
    evaluate(data, system).distortion
}

pub fn lagrangian(distortion: f64, cost: f64, lambda: f64) -> f64 {
    debug_assert!(lambda >= 0.0);
    distortion + lambda * cost
}
