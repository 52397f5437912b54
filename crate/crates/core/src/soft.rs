//! Expected errors and soft centroids under independent per-source index
//! distributions.
//!
//! A decoder table is handled as a tensor with one axis per contributing
//! source (the sub-index formed by that source's selected bits) and a
//! trailing channel axis holding `x̂²` and `x̂`. Some source axes are
//! contracted once with their region-to-sub-index marginals, so every sample
//! indexes a small block and contracts only the remaining axes with its own
//! marginal rows.

use crate::engine::{Decoder, Prepared};
use crate::model::{extract_index, BitLayout, BitSubset, CodebookTable};

/// Largest precontracted tensor, in elements.
const PRECONTRACT_CAP: usize = 1 << 22;

/// Mass below which a soft cell takes the fallback value.
pub(crate) const MIN_CELL_MASS: f64 = 1e-12;

/// Distribution of one source's sub-index given each of its regions.
#[derive(Debug, Clone)]
pub(crate) struct Marginal {
    pub source: usize,
    pub regions: usize,
    pub dim: usize,
    /// `m[q * dim + s]`
    pub m: Vec<f64>,
}

impl Marginal {
    #[inline]
    fn row(&self, q: usize) -> &[f64] {
        &self.m[q * self.dim..(q + 1) * self.dim]
    }
}

/// Bits of `subset` inside source `source`'s label, as a mask on the label.
pub(crate) fn local_mask(layout: &BitLayout, source: usize, subset: BitSubset) -> u64 {
    (subset.mask() & layout.own_bits(source).mask()) >> layout.offset(source)
}

/// Sub-index of every label of `source` for the bits selected by `subset`.
pub(crate) fn sub_indices(layout: &BitLayout, source: usize, subset: BitSubset) -> Vec<usize> {
    let rate = layout.rate(source);
    let local = local_mask(layout, source, subset);
    (0..1u64 << rate)
        .map(|k| extract_index(k, rate, local) as usize)
        .collect()
}

pub(crate) fn marginal(
    layout: &BitLayout,
    probs: &[f64],
    regions: usize,
    source: usize,
    subset: BitSubset,
) -> Marginal {
    let labels = 1usize << layout.rate(source);
    let subs = sub_indices(layout, source, subset);
    let dim = 1usize << local_mask(layout, source, subset).count_ones();
    let mut m = vec![0.0; regions * dim];
    for q in 0..regions {
        for k in 0..labels {
            m[q * dim + subs[k]] += probs[q * labels + k];
        }
    }
    Marginal {
        source,
        regions,
        dim,
        m,
    }
}

/// Sources whose bits `subset` reads, in source order.
pub(crate) fn contributors(layout: &BitLayout, subset: BitSubset) -> Vec<usize> {
    (0..layout.sources())
        .filter(|&c| local_mask(layout, c, subset) != 0)
        .collect()
}

/// Replace axis `axis` by a product with `mat` (`rows × cols`, row-major).
/// Without `transpose` the axis has length `cols` and becomes `rows`; with
/// it the axis has length `rows` and becomes `cols`.
fn mode_product(
    data: &[f64],
    dims: &[usize],
    axis: usize,
    mat: &[f64],
    rows: usize,
    cols: usize,
    transpose: bool,
) -> (Vec<f64>, Vec<usize>) {
    let outer: usize = dims[..axis].iter().product();
    let inner: usize = dims[axis + 1..].iter().product();
    let (from, to) = if transpose { (rows, cols) } else { (cols, rows) };
    debug_assert_eq!(dims[axis], from);
    let mut out = vec![0.0; outer * to * inner];
    for o in 0..outer {
        let src = &data[o * from * inner..(o + 1) * from * inner];
        let dst = &mut out[o * to * inner..(o + 1) * to * inner];
        for a in 0..from {
            let s = &src[a * inner..(a + 1) * inner];
            if s.iter().all(|&v| v == 0.0) {
                continue;
            }
            for b in 0..to {
                let w = if transpose {
                    mat[a * cols + b]
                } else {
                    mat[b * cols + a]
                };
                if w == 0.0 {
                    continue;
                }
                let d = &mut dst[b * inner..(b + 1) * inner];
                for (x, &y) in d.iter_mut().zip(s) {
                    *x += w * y;
                }
            }
        }
    }
    let mut new_dims = dims.to_vec();
    new_dims[axis] = to;
    (out, new_dims)
}

/// Reorder axes so that new axis `j` is old axis `perm[j]`.
fn permute(data: &[f64], dims: &[usize], perm: &[usize]) -> (Vec<f64>, Vec<usize>) {
    let n = dims.len();
    if perm.iter().enumerate().all(|(j, &p)| j == p) {
        return (data.to_vec(), dims.to_vec());
    }
    let mut strides = vec![1usize; n];
    for a in (0..n.saturating_sub(1)).rev() {
        strides[a] = strides[a + 1] * dims[a + 1];
    }
    let new_dims: Vec<usize> = perm.iter().map(|&p| dims[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| strides[p]).collect();
    let mut out = Vec::with_capacity(data.len());
    let mut idx = vec![0usize; n];
    let mut offset = 0usize;
    for _ in 0..data.len() {
        out.push(data[offset]);
        for a in (0..n).rev() {
            idx[a] += 1;
            offset += src_strides[a];
            if idx[a] < new_dims[a] {
                break;
            }
            offset -= src_strides[a] * new_dims[a];
            idx[a] = 0;
        }
    }
    (out, new_dims)
}

/// Which non-free axes to precontract, minimizing setup plus per-sample work.
fn choose_precontracted(nonfree: &[Marginal], free_dim: usize, channels: usize, samples: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..nonfree.len()).collect();
    order.sort_by(|&a, &b| nonfree[b].dim.cmp(&nonfree[a].dim).then(a.cmp(&b)));
    let inner = (free_dim * channels) as f64;
    let mut best = (f64::INFINITY, 0usize);
    for p in 0..=order.len() {
        let mut dims: Vec<f64> = nonfree.iter().map(|m| m.dim as f64).collect();
        let mut build = 0.0;
        for &a in &order[..p] {
            let d = dims[a];
            dims[a] = nonfree[a].regions as f64;
            build += dims.iter().product::<f64>() * inner * d;
        }
        let size = dims.iter().product::<f64>() * inner;
        if p > 0 && size > PRECONTRACT_CAP as f64 {
            break;
        }
        let w: f64 = order[p..].iter().map(|&a| nonfree[a].dim as f64).product();
        let cost = build + size + samples as f64 * (w + w * inner);
        if cost < best.0 {
            best = (cost, p);
        }
    }
    order.truncate(best.1);
    order
}

/// Contraction layout: `[pre regions.., rest subs.., free, channel]`.
struct Plan {
    pre: Vec<Marginal>,
    pre_strides: Vec<usize>,
    rest: Vec<Marginal>,
    free: Option<Marginal>,
    block_w: usize,
    free_dim: usize,
    channels: usize,
}

impl Plan {
    fn new(mut contrib: Vec<Marginal>, free_source: Option<usize>, channels: usize, samples: usize) -> Self {
        let free = free_source
            .and_then(|f| contrib.iter().position(|m| m.source == f))
            .map(|p| contrib.remove(p));
        let free_dim = free.as_ref().map_or(1, |m| m.dim);
        let pre_idx = choose_precontracted(&contrib, free_dim, channels, samples);
        let mut pre = Vec::new();
        let mut rest = Vec::new();
        let mut taken = vec![false; contrib.len()];
        for &a in &pre_idx {
            taken[a] = true;
        }
        let mut slots: Vec<Option<Marginal>> = contrib.into_iter().map(Some).collect();
        for &a in &pre_idx {
            pre.push(slots[a].take().expect("unique"));
        }
        for (a, s) in slots.into_iter().enumerate() {
            if !taken[a] {
                rest.push(s.expect("not taken"));
            }
        }
        let block_w: usize = rest.iter().map(|m| m.dim).product();
        let mut pre_strides = vec![0usize; pre.len()];
        let mut stride = block_w * free_dim * channels;
        for j in (0..pre.len()).rev() {
            pre_strides[j] = stride;
            stride *= pre[j].regions;
        }
        Self {
            pre,
            pre_strides,
            rest,
            free,
            block_w,
            free_dim,
            channels,
        }
    }

    fn block_len(&self) -> usize {
        self.block_w * self.free_dim * self.channels
    }

    fn tensor_len(&self) -> usize {
        self.pre.iter().map(|m| m.regions).product::<usize>() * self.block_len()
    }

    /// Source order of the tensor axes after permutation, excluding channel.
    fn axis_sources(&self) -> Vec<usize> {
        self.pre
            .iter()
            .chain(&self.rest)
            .chain(self.free.iter())
            .map(|m| m.source)
            .collect()
    }

    #[inline]
    fn offset(&self, prep: &Prepared, t: usize) -> usize {
        self.pre
            .iter()
            .zip(&self.pre_strides)
            .map(|(m, s)| prep.region(t, m.source) * s)
            .sum()
    }

    /// Outer product of the sample's marginal rows over the rest axes.
    #[inline]
    fn weights(&self, prep: &Prepared, t: usize, buf: &mut Vec<f64>, tmp: &mut Vec<f64>) {
        buf.clear();
        buf.push(1.0);
        for m in &self.rest {
            let row = m.row(prep.region(t, m.source));
            tmp.clear();
            for &w in buf.iter() {
                for &r in row {
                    tmp.push(w * r);
                }
            }
            std::mem::swap(buf, tmp);
        }
    }
}

fn plan_for(
    prep: &Prepared,
    layout: &BitLayout,
    probs: &[Vec<f64>],
    subset: BitSubset,
    free_source: Option<usize>,
    channels: usize,
) -> (Plan, Vec<usize>, Vec<usize>) {
    let contrib = contributors(layout, subset);
    let margs: Vec<Marginal> = contrib
        .iter()
        .map(|&c| marginal(layout, &probs[c], prep.region_counts[c], c, subset))
        .collect();
    let dims: Vec<usize> = margs.iter().map(|m| m.dim).collect();
    (Plan::new(margs, free_source, channels, prep.len), contrib, dims)
}

/// Precontract a stacked table tensor (cells in contributor order, then
/// channels) into the plan's layout.
fn build(plan: &Plan, contrib_sources: &[usize], contrib_dims: &[usize], mut data: Vec<f64>) -> Vec<f64> {
    let mut dims: Vec<usize> = contrib_dims.to_vec();
    dims.push(plan.channels);
    for m in &plan.pre {
        let axis = contrib_sources
            .iter()
            .position(|&s| s == m.source)
            .expect("contributor");
        let (d, nd) = mode_product(&data, &dims, axis, &m.m, m.regions, m.dim, false);
        data = d;
        dims = nd;
    }
    let order = plan.axis_sources();
    let mut perm: Vec<usize> = order
        .iter()
        .map(|s| contrib_sources.iter().position(|c| c == s).expect("contributor"))
        .collect();
    perm.push(contrib_sources.len());
    let (mut data, _) = permute(&data, &dims, &perm);
    if plan.free.is_none() {
        debug_assert_eq!(data.len(), plan.tensor_len());
    }
    data.shrink_to_fit();
    data
}

/// Decoders sharing one bit subset, evaluated together against soft
/// encoders. Channels are `Σ γ x̂²` followed by `γ x̂` per member.
pub(crate) struct SoftGroup {
    plan: Plan,
    data: Vec<f64>,
    sources: Vec<usize>,
    weights: Vec<f64>,
}

impl SoftGroup {
    /// `free_source`, when it feeds the subset, is left uncontracted.
    pub fn new(
        prep: &Prepared,
        layout: &BitLayout,
        probs: &[Vec<f64>],
        members: &[(&Decoder, &CodebookTable)],
        free_source: Option<usize>,
    ) -> Self {
        let subset = members[0].0.subset;
        let channels = members.len() + 1;
        let (plan, contrib, dims) = plan_for(prep, layout, probs, subset, free_source, channels);
        let cells = 1u64 << subset.len();
        let mut base = Vec::with_capacity(cells as usize * channels);
        for c in 0..cells {
            let mut sq = 0.0;
            for (d, tab) in members {
                let v = tab.value(c);
                sq += d.weight * v * v;
            }
            base.push(sq);
            for (d, tab) in members {
                base.push(d.weight * tab.value(c));
            }
        }
        let data = build(&plan, &contrib, &dims, base);
        Self {
            plan,
            data,
            sources: members.iter().map(|(d, _)| d.source).collect(),
            weights: members.iter().map(|(d, _)| d.weight).collect(),
        }
    }

    /// Length of the free axis (1 when there is none).
    pub fn free_dim(&self) -> usize {
        self.plan.free_dim
    }

    pub fn has_free(&self) -> bool {
        self.plan.free.is_some()
    }

    /// Weighted expected squared error of sample `t` for each value of the
    /// free sub-index, written to `out` (length `free_dim`).
    #[inline]
    pub fn expected_errors(&self, prep: &Prepared, t: usize, bufs: &mut Buffers, out: &mut [f64]) {
        let ch = self.plan.channels;
        let row = self.plan.free_dim * ch;
        let offset = self.plan.offset(prep, t);
        let block = &self.data[offset..offset + self.plan.block_len()];
        self.plan.weights(prep, t, &mut bufs.w, &mut bufs.tmp);
        let acc = &mut bufs.acc;
        acc.clear();
        acc.resize(row, 0.0);
        for (w, &wv) in bufs.w.iter().enumerate() {
            if wv == 0.0 {
                continue;
            }
            for (a, &b) in acc.iter_mut().zip(&block[w * row..(w + 1) * row]) {
                *a += wv * b;
            }
        }
        let mut constant = 0.0;
        bufs.x.clear();
        for (&s, &g) in self.sources.iter().zip(&self.weights) {
            let x = prep.value(t, s);
            constant += g * x * x;
            bufs.x.push(x);
        }
        for (f, o) in out.iter_mut().enumerate() {
            let a = &acc[f * ch..(f + 1) * ch];
            let cross: f64 = bufs.x.iter().zip(&a[1..]).map(|(x, b)| x * b).sum();
            *o = a[0] - 2.0 * cross + constant;
        }
    }

    /// Sum of weighted expected squared errors over the training set.
    pub fn expected_sse(&self, prep: &Prepared) -> f64 {
        debug_assert_eq!(self.plan.free_dim, 1);
        let mut bufs = Buffers::default();
        let mut e = [0.0];
        let mut sum = 0.0;
        for t in 0..prep.len {
            self.expected_errors(prep, t, &mut bufs, &mut e);
            sum += e[0];
        }
        sum
    }
}

#[derive(Default)]
pub(crate) struct Buffers {
    w: Vec<f64>,
    tmp: Vec<f64>,
    acc: Vec<f64>,
    x: Vec<f64>,
}

/// Indices of the positively weighted decoders accepted by `keep`, grouped
/// by subset in order of first appearance.
pub(crate) fn subset_groups(decoders: &[Decoder], keep: impl Fn(&Decoder) -> bool) -> Vec<Vec<usize>> {
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (k, d) in decoders.iter().enumerate() {
        if d.weight <= 0.0 || !keep(d) {
            continue;
        }
        match groups.iter_mut().find(|g| decoders[g[0]].subset == d.subset) {
            Some(g) => g.push(k),
            None => groups.push(vec![k]),
        }
    }
    groups
}

/// Expected sum of squared errors of one decoder.
#[cfg(test)]
pub(crate) fn decoder_soft_sse(
    prep: &Prepared,
    layout: &BitLayout,
    probs: &[Vec<f64>],
    dec: &Decoder,
    table: &CodebookTable,
) -> f64 {
    let unit = Decoder { weight: 1.0, ..*dec };
    SoftGroup::new(prep, layout, probs, &[(&unit, table)], None).expected_sse(prep)
}

/// Weighted expected distortion `Σ_d γ_d · E[sse_d] / |T|`.
pub(crate) fn soft_distortion(
    prep: &Prepared,
    layout: &BitLayout,
    probs: &[Vec<f64>],
    decoders: &[Decoder],
    tables: &[CodebookTable],
) -> f64 {
    use rayon::prelude::*;
    let groups = subset_groups(decoders, |_| true);
    let parts: Vec<f64> = groups
        .par_iter()
        .map(|g| {
            let members: Vec<_> = g.iter().map(|&k| (&decoders[k], &tables[k])).collect();
            SoftGroup::new(prep, layout, probs, &members, None).expected_sse(prep)
        })
        .collect();
    parts.iter().sum::<f64>() / prep.len as f64
}

/// Per-region, per-label sum over samples of the weighted expected error when
/// source `source` is forced to each label (`acc[q * labels + k]`). Decoders
/// that do not read the source's bits contribute a label-independent term,
/// included only with `all_decoders`.
pub(crate) fn forced_label_errors(
    prep: &Prepared,
    layout: &BitLayout,
    probs: &[Vec<f64>],
    source: usize,
    decoders: &[Decoder],
    tables: &[CodebookTable],
    all_decoders: bool,
) -> Vec<f64> {
    use rayon::prelude::*;
    let labels = 1usize << layout.rate(source);
    let regions = prep.region_counts[source];
    let own = layout.own_bits(source);
    let groups = subset_groups(decoders, |d| all_decoders || d.subset.intersects(own));
    let parts: Vec<Vec<f64>> = groups
        .par_iter()
        .map(|g| {
            let members: Vec<_> = g.iter().map(|&k| (&decoders[k], &tables[k])).collect();
            let sg = SoftGroup::new(prep, layout, probs, &members, Some(source));
            let subs = sub_indices(layout, source, decoders[g[0]].subset);
            let mut acc = vec![0.0; regions * labels];
            let mut bufs = Buffers::default();
            let mut e = vec![0.0; sg.free_dim()];
            for t in 0..prep.len {
                sg.expected_errors(prep, t, &mut bufs, &mut e);
                let q = prep.region(t, source);
                let row = &mut acc[q * labels..(q + 1) * labels];
                if sg.has_free() {
                    for (k, r) in row.iter_mut().enumerate() {
                        *r += e[subs[k]];
                    }
                } else {
                    for r in row.iter_mut() {
                        *r += e[0];
                    }
                }
            }
            acc
        })
        .collect();
    let mut total = vec![0.0; regions * labels];
    for p in parts {
        for (a, b) in total.iter_mut().zip(p) {
            *a += b;
        }
    }
    total
}

/// Probability-weighted centroid tables for each of `sources` reading
/// `subset`, with the expected sum of squared errors each table attains.
pub(crate) fn soft_centroids(
    prep: &Prepared,
    layout: &BitLayout,
    probs: &[Vec<f64>],
    subset: BitSubset,
    sources: &[usize],
) -> Vec<(CodebookTable, f64)> {
    let bits = subset.len();
    let channels = sources.len() + 1;
    let (plan, contrib, dims) = plan_for(prep, layout, probs, subset, None, channels);
    let mut g = vec![0.0; plan.tensor_len()];
    let mut w = Vec::new();
    let mut tmp = Vec::new();
    let mut sq = vec![0.0; sources.len()];
    let mut xs = vec![0.0; sources.len()];
    for t in 0..prep.len {
        let offset = plan.offset(prep, t);
        plan.weights(prep, t, &mut w, &mut tmp);
        for ((x, s), &src) in xs.iter_mut().zip(&mut sq).zip(sources) {
            *x = prep.value(t, src);
            *s += *x * *x;
        }
        let block = &mut g[offset..offset + plan.block_len()];
        for (k, &wv) in w.iter().enumerate() {
            let cell = &mut block[k * channels..(k + 1) * channels];
            cell[0] += wv;
            for (c, &x) in cell[1..].iter_mut().zip(&xs) {
                *c += wv * x;
            }
        }
    }
    // Undo the precontraction with transposed marginals.
    let mut gdims: Vec<usize> = plan.pre.iter().map(|m| m.regions).collect();
    gdims.extend(plan.rest.iter().map(|m| m.dim));
    gdims.push(channels);
    for (a, m) in plan.pre.iter().enumerate() {
        let (d, nd) = mode_product(&g, &gdims, a, &m.m, m.regions, m.dim, true);
        g = d;
        gdims = nd;
    }
    let order = plan.axis_sources();
    let mut perm: Vec<usize> = contrib
        .iter()
        .map(|s| order.iter().position(|o| o == s).expect("axis"))
        .collect();
    perm.push(order.len());
    let (g, _) = permute(&g, &gdims, &perm);
    debug_assert_eq!(g.len(), channels << bits);
    debug_assert_eq!(dims.iter().product::<usize>(), 1usize << bits);

    sources
        .iter()
        .enumerate()
        .map(|(j, &src)| {
            let mut table = CodebookTable::constant(bits, prep.means[src]);
            let mut sse = sq[j];
            for c in 0..1usize << bits {
                let (mass, sum) = (g[c * channels], g[c * channels + 1 + j]);
                if mass >= MIN_CELL_MASS {
                    table.values[c] = sum / mass;
                    table.populated[c] = true;
                }
                let v = table.values[c];
                sse += mass * v * v - 2.0 * v * sum;
            }
            (table, sse.max(0.0))
        })
        .collect()
}

/// Probability-weighted centroid table for `source` reading `subset`.
#[cfg(test)]
pub(crate) fn soft_centroid_table(
    prep: &Prepared,
    layout: &BitLayout,
    probs: &[Vec<f64>],
    source: usize,
    subset: BitSubset,
) -> CodebookTable {
    soft_centroids(prep, layout, probs, subset, &[source]).remove(0).0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine;
    use crate::model::TrainingSet;
    use crate::HighRateQuantizer;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_probs(rng: &mut ChaCha8Rng, regions: usize, labels: usize, sharp: bool) -> Vec<f64> {
        let mut p = Vec::with_capacity(regions * labels);
        for _ in 0..regions {
            let mut row: Vec<f64> = (0..labels)
                .map(|_| {
                    let u: f64 = rng.random();
                    if sharp {
                        u.powi(6)
                    } else {
                        u
                    }
                })
                .collect();
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= s);
            p.extend(row);
        }
        p
    }

    struct Setup {
        prep: Prepared,
        layout: BitLayout,
        probs: Vec<Vec<f64>>,
    }

    fn setup(rates: &[u32], regions: usize, len: usize, seed: u64) -> Setup {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rates.len();
        let rows: Vec<Vec<f64>> = (0..len)
            .map(|_| (0..n).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let data = TrainingSet::from_rows(&rows).unwrap();
        let q = vec![HighRateQuantizer::uniform(-2.0, 2.0, regions).unwrap(); n];
        let prep = Prepared::new(&data, &q).unwrap();
        let layout = BitLayout::new(rates).unwrap();
        let probs = (0..n)
            .map(|i| random_probs(&mut rng, regions, 1 << rates[i], seed.is_multiple_of(2)))
            .collect();
        Setup { prep, layout, probs }
    }

    /// Expected error by enumerating every full index.
    fn brute_sse(s: &Setup, dec: &Decoder, table: &CodebookTable, forced: Option<(usize, usize)>) -> Vec<f64> {
        let n = s.layout.sources();
        let total = s.layout.total();
        (0..s.prep.len)
            .map(|t| {
                let mut e = 0.0;
                for idx in 0..1u64 << total {
                    let mut p = 1.0;
                    for c in 0..n {
                        let k = ((idx >> s.layout.shift(c)) & ((1 << s.layout.rate(c)) - 1)) as usize;
                        let q = s.prep.region(t, c);
                        p *= match forced {
                            Some((f, fk)) if f == c => (k == fk) as u8 as f64,
                            _ => s.probs[c][q * (1 << s.layout.rate(c)) + k],
                        };
                    }
                    let cell = extract_index(idx, total, dec.subset.mask());
                    e += p * (s.prep.value(t, dec.source) - table.value(cell)).powi(2);
                }
                e
            })
            .collect()
    }

    fn random_table(rng: &mut ChaCha8Rng, bits: u32) -> CodebookTable {
        let mut t = CodebookTable::constant(bits, 0.0);
        for c in 0..t.cells() {
            t.values[c] = rng.random_range(-2.0..2.0);
            t.populated[c] = true;
        }
        t
    }

    #[test]
    fn expected_sse_matches_enumeration() {
        for seed in 0..12 {
            let s = setup(&[2, 1, 2], 5, 40, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let mask = rng.random_range(0..32u64);
            let dec = Decoder {
                source: (seed % 3) as usize,
                subset: BitSubset::from_mask(mask),
                weight: 1.0,
            };
            let table = random_table(&mut rng, dec.subset.len());
            let fast = decoder_soft_sse(&s.prep, &s.layout, &s.probs, &dec, &table);
            let slow: f64 = brute_sse(&s, &dec, &table, None).iter().sum();
            assert!((fast - slow).abs() <= 1e-10 * slow.abs().max(1.0), "{fast} vs {slow}");
        }
    }

    #[test]
    fn forced_errors_match_enumeration() {
        for seed in 0..8 {
            let s = setup(&[2, 2, 1], 4, 30, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(7 + seed);
            let decoders: Vec<Decoder> = (0..3)
                .map(|i| Decoder {
                    source: i,
                    subset: BitSubset::from_mask(rng.random_range(1..32u64)),
                    weight: [0.5, 0.3, 0.2][i],
                })
                .collect();
            let tables: Vec<CodebookTable> = decoders
                .iter()
                .map(|d| random_table(&mut rng, d.subset.len()))
                .collect();
            let source = (seed % 3) as usize;
            let labels = 1usize << s.layout.rate(source);
            let fast = forced_label_errors(&s.prep, &s.layout, &s.probs, source, &decoders, &tables, true);
            for k in 0..labels {
                let mut slow = [0.0; 4];
                for (d, tab) in decoders.iter().zip(&tables) {
                    for (t, e) in brute_sse(&s, d, tab, Some((source, k))).iter().enumerate() {
                        slow[s.prep.region(t, source)] += d.weight * e;
                    }
                }
                for q in 0..4 {
                    let f = fast[q * labels + k];
                    assert!(
                        (f - slow[q]).abs() <= 1e-10 * slow[q].abs().max(1.0),
                        "{f} vs {}",
                        slow[q]
                    );
                }
            }
        }
    }

    #[test]
    fn soft_centroids_match_weighted_means() {
        for seed in 0..8 {
            let s = setup(&[1, 2, 2], 6, 50, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let subset = BitSubset::from_mask(rng.random_range(1..32u64));
            let source = (seed % 3) as usize;
            let fast = soft_centroid_table(&s.prep, &s.layout, &s.probs, source, subset);
            let total = s.layout.total();
            let mut mass = vec![0.0; 1 << subset.len()];
            let mut sum = vec![0.0; 1 << subset.len()];
            for t in 0..s.prep.len {
                for idx in 0..1u64 << total {
                    let mut p = 1.0;
                    for c in 0..3 {
                        let labels = 1usize << s.layout.rate(c);
                        let k = ((idx >> s.layout.shift(c)) & (labels as u64 - 1)) as usize;
                        p *= s.probs[c][s.prep.region(t, c) * labels + k];
                    }
                    let cell = extract_index(idx, total, subset.mask()) as usize;
                    mass[cell] += p;
                    sum[cell] += p * s.prep.value(t, source);
                }
            }
            for c in 0..mass.len() {
                let want = sum[c] / mass[c];
                assert!((fast.values[c] - want).abs() < 1e-10, "{} vs {want}", fast.values[c]);
            }
        }
    }

    #[test]
    fn shared_subsets_match_separate_decoders() {
        for seed in 0..6 {
            let s = setup(&[2, 1, 2], 5, 40, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(50 + seed);
            let shared = BitSubset::from_mask(rng.random_range(1..32u64));
            let decoders: Vec<Decoder> = (0..3)
                .map(|i| Decoder {
                    source: i,
                    subset: if i == 2 {
                        BitSubset::from_mask(rng.random_range(1..32u64))
                    } else {
                        shared
                    },
                    weight: [0.2, 0.5, 0.3][i],
                })
                .collect();
            let tables: Vec<CodebookTable> = decoders
                .iter()
                .map(|d| random_table(&mut rng, d.subset.len()))
                .collect();
            let grouped = soft_distortion(&s.prep, &s.layout, &s.probs, &decoders, &tables);
            let separate: f64 = decoders
                .iter()
                .zip(&tables)
                .map(|(d, t)| d.weight * decoder_soft_sse(&s.prep, &s.layout, &s.probs, d, t))
                .sum::<f64>()
                / s.prep.len as f64;
            assert!(
                (grouped - separate).abs() <= 1e-10 * separate,
                "{grouped} vs {separate}"
            );
        }
    }

    #[test]
    fn centroid_sse_matches_evaluation() {
        for seed in 0..6 {
            let s = setup(&[1, 2, 2], 6, 50, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let subset = BitSubset::from_mask(rng.random_range(0..32u64));
            let results = soft_centroids(&s.prep, &s.layout, &s.probs, subset, &[0, 1, 2]);
            for (i, (table, sse)) in results.iter().enumerate() {
                assert_eq!(table, &soft_centroid_table(&s.prep, &s.layout, &s.probs, i, subset));
                let dec = Decoder {
                    source: i,
                    subset,
                    weight: 1.0,
                };
                let want = decoder_soft_sse(&s.prep, &s.layout, &s.probs, &dec, table);
                assert!((sse - want).abs() <= 1e-9 * want.max(1.0), "{sse} vs {want}");
            }
        }
    }

    #[test]
    fn one_hot_soft_matches_hard() {
        let s = setup(&[2, 2], 8, 200, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let labels: Vec<Vec<u32>> = (0..2)
            .map(|_| (0..8).map(|_| rng.random_range(0..4)).collect())
            .collect();
        let probs: Vec<Vec<f64>> = labels
            .iter()
            .map(|l| {
                let mut p = vec![0.0; 8 * 4];
                for (q, &k) in l.iter().enumerate() {
                    p[q * 4 + k as usize] = 1.0;
                }
                p
            })
            .collect();
        let subset = BitSubset::from_mask(0b1011);
        let indices = engine::full_indices(&s.prep, &s.layout, &labels);
        let hard = engine::centroid_table_direct(&s.prep, &indices, 4, 1, subset).unwrap();
        let soft = soft_centroid_table(&s.prep, &s.layout, &probs, 1, subset);
        for c in 0..hard.cells() {
            assert_eq!(hard.populated[c], soft.populated[c]);
            assert!((hard.value(c as u64) - soft.value(c as u64)).abs() < 1e-12);
        }
        let dec = Decoder {
            source: 1,
            subset,
            weight: 1.0,
        };
        let h = engine::decoder_sse(&s.prep, &indices, 4, &dec, &hard);
        let f = decoder_soft_sse(&s.prep, &s.layout, &probs, &dec, &hard);
        assert!((h - f).abs() <= 1e-10 * h);
    }

    #[test]
    fn permute_round_trip() {
        let data: Vec<f64> = (0..24).map(f64::from).collect();
        let (p, d) = permute(&data, &[2, 3, 4], &[2, 0, 1]);
        assert_eq!(d, vec![4, 2, 3]);
        assert_eq!(p[1], data[4]);
        let (back, bd) = permute(&p, &d, &[1, 2, 0]);
        assert_eq!(bd, vec![2, 3, 4]);
        assert_eq!(back, data);
    }
}
