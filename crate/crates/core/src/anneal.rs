//! Deterministic-annealing design of Wyner-Ziv maps and codebooks.
//!
//! Each source maps region `q` to index `k` with probability `P_i(k|q)`, the
//! maps of different sources being independent. At temperature `T` the
//! design minimizes the free energy `J = D - T·H`; Gibbs updates of the
//! encoder rows alternate with soft centroid updates until `J` settles, the
//! selectors take one local step, and the temperature is lowered. Below the
//! final temperature the encoders are hardened and polished by greedy sweeps.

use crate::clock::Stopwatch;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{choose_subset, Decoder, Prepared};
use crate::error::{Error, Result};
use crate::greedy::{hamming1_candidates, GreedyConfig, HardDesign, SelectorSearch};
use crate::model::{
    self, BitLayout, BitSubset, BitSubsetSelector, CodebookTable, DecoderCodebook, HighRateQuantizer, SourceSystem,
    TrainingSet, WzMap,
};
use crate::report::{CostKind, Split, TradeoffPoint};
use crate::soft;

/// Per-source matrices `P_i(k|q)`, stored row-major (`N_i × 2^R_i`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftEncoder {
    probs: Vec<Vec<f64>>,
    regions: Vec<usize>,
    rates: Vec<u32>,
}

impl SoftEncoder {
    pub fn new(probs: Vec<Vec<f64>>, regions: Vec<usize>, rates: Vec<u32>) -> Result<Self> {
        if probs.len() != regions.len() || probs.len() != rates.len() {
            return Err(Error::invalid("per-source counts disagree"));
        }
        for (i, p) in probs.iter().enumerate() {
            let labels = 1usize << rates[i];
            if p.len() != regions[i] * labels {
                return Err(Error::invalid(format!(
                    "source {i}: {} probabilities for {} regions of {labels} labels",
                    p.len(),
                    regions[i]
                )));
            }
            for (q, row) in p.chunks(labels).enumerate() {
                let sum: f64 = row.iter().sum();
                if row.iter().any(|&v| !(v >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
                    return Err(Error::invalid(format!(
                        "source {i} region {q}: row is not a distribution"
                    )));
                }
            }
        }
        Ok(Self { probs, regions, rates })
    }

    pub fn uniform(regions: &[usize], rates: &[u32]) -> Self {
        let probs = regions
            .iter()
            .zip(rates)
            .map(|(&n, &r)| {
                let labels = 1usize << r;
                vec![1.0 / labels as f64; n * labels]
            })
            .collect();
        Self {
            probs,
            regions: regions.to_vec(),
            rates: rates.to_vec(),
        }
    }

    /// One-hot encoder equivalent to the given Wyner-Ziv maps.
    pub fn from_maps(maps: &[WzMap]) -> Self {
        let probs = maps
            .iter()
            .map(|m| {
                let labels = m.index_count();
                let mut p = vec![0.0; m.labels().len() * labels];
                for (q, &k) in m.labels().iter().enumerate() {
                    p[q * labels + k as usize] = 1.0;
                }
                p
            })
            .collect();
        Self {
            probs,
            regions: maps.iter().map(|m| m.labels().len()).collect(),
            rates: maps.iter().map(WzMap::rate).collect(),
        }
    }

    pub fn sources(&self) -> usize {
        self.probs.len()
    }

    pub fn rates(&self) -> &[u32] {
        &self.rates
    }

    pub fn regions(&self) -> &[usize] {
        &self.regions
    }

    pub fn probs(&self, i: usize) -> &[f64] {
        &self.probs[i]
    }

    pub fn row(&self, i: usize, q: usize) -> &[f64] {
        let labels = 1usize << self.rates[i];
        &self.probs[i][q * labels..(q + 1) * labels]
    }

    pub fn set_rows(&mut self, i: usize, rows: Vec<f64>) -> Result<()> {
        if rows.len() != self.probs[i].len() {
            return Err(Error::invalid("row block has the wrong shape"));
        }
        self.probs[i] = rows;
        Ok(())
    }

    /// Argmax of every row; ties go to the smallest index.
    pub fn harden(&self) -> Vec<WzMap> {
        self.probs
            .iter()
            .zip(&self.rates)
            .map(|(p, &r)| WzMap::new(argmax_rows(p, 1 << r), r).expect("labels fit the rate"))
            .collect()
    }

    /// Every row within `tol` of a one-hot vector.
    pub fn is_hard(&self, tol: f64) -> bool {
        self.probs.iter().all(|p| p.iter().all(|&v| v <= tol || v >= 1.0 - tol))
    }
}

fn argmax_rows(p: &[f64], labels: usize) -> Vec<u32> {
    p.chunks(labels)
        .map(|row| {
            let mut best = 0;
            for k in 1..labels {
                if row[k] > row[best] {
                    best = k;
                }
            }
            best as u32
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnealSchedule {
    pub t_init: f64,
    /// Cooling factor: `T ← α·T`.
    pub alpha: f64,
    pub t_min: f64,
    /// Relative change of `J` that counts as equilibrium.
    pub equilibrium_tol: f64,
    pub max_inner: usize,
    /// Amplitude of the multiplicative noise applied at each temperature.
    pub perturbation: f64,
}

impl AnnealSchedule {
    /// Starts at twice the largest per-source variance, stops at `1e-4` of it.
    pub fn for_data(data: &TrainingSet) -> Self {
        let var = (0..data.sources())
            .map(|i| data.variance(i))
            .fold(0.0, f64::max)
            .max(f64::MIN_POSITIVE);
        let t_init = 2.0 * var;
        Self {
            t_init,
            alpha: 0.9,
            t_min: 1e-4 * t_init,
            equilibrium_tol: 1e-5,
            max_inner: 50,
            perturbation: 1e-3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid(format!("alpha {} must lie in (0, 1)", self.alpha)));
        }
        if !(self.t_min > 0.0 && self.t_min < self.t_init) || !self.t_init.is_finite() {
            return Err(Error::invalid(format!(
                "need 0 < t_min ({}) < t_init ({})",
                self.t_min, self.t_init
            )));
        }
        if self.max_inner == 0 || !(self.perturbation >= 0.0) {
            return Err(Error::invalid("max_inner must be >= 1 and perturbation >= 0"));
        }
        Ok(())
    }

    /// Number of temperatures visited.
    pub fn steps(&self) -> usize {
        ((self.t_min / self.t_init).ln() / self.alpha.ln()).floor() as usize + 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnnealConfig {
    pub lambda: f64,
    /// `None` derives the schedule from the training data.
    pub schedule: Option<AnnealSchedule>,
    pub rng_seed: u64,
    /// `Hamming1` or `Fixed`; applied once per temperature.
    pub selector_search: SelectorSearch,
    pub own_bits_mandatory: bool,
    /// Cap on the greedy sweeps that finish the hardened design.
    pub max_sweeps: usize,
    /// Record `J` after every equilibrium iteration.
    pub trace: bool,
}

impl Default for AnnealConfig {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            schedule: None,
            rng_seed: 0,
            selector_search: SelectorSearch::Hamming1,
            own_bits_mandatory: true,
            max_sweeps: 100,
            trace: false,
        }
    }
}

/// `J` after each equilibrium iteration at one temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct TemperatureTrace {
    pub temperature: f64,
    pub free_energy: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct AnnealOutcome {
    pub system: SourceSystem,
    pub point: TradeoffPoint,
    pub temperatures: usize,
    pub trace: Vec<TemperatureTrace>,
}

/// Soft design state over a list of decoders.
pub(crate) struct SoftCore<'a> {
    pub prep: &'a Prepared,
    pub layout: BitLayout,
    pub probs: Vec<Vec<f64>>,
    pub decoders: Vec<Decoder>,
    pub tables: Vec<CodebookTable>,
    /// Expected sum of squared errors of each table, valid right after
    /// a codebook update.
    sse: Vec<f64>,
}

impl<'a> SoftCore<'a> {
    pub fn new(prep: &'a Prepared, layout: BitLayout, probs: Vec<Vec<f64>>, decoders: Vec<Decoder>) -> Self {
        let tables = decoders
            .iter()
            .map(|d| CodebookTable::constant(d.subset.len(), prep.means[d.source]))
            .collect();
        let mut core = Self {
            prep,
            layout,
            probs,
            sse: vec![0.0; decoders.len()],
            decoders,
            tables,
        };
        core.update_codebooks();
        core
    }

    pub fn distortion(&self) -> f64 {
        soft::soft_distortion(self.prep, &self.layout, &self.probs, &self.decoders, &self.tables)
    }

    pub fn entropy(&self) -> f64 {
        entropy_of(self.prep, &self.layout, &self.probs)
    }

    #[cfg(test)]
    pub fn free_energy(&self, t: f64) -> f64 {
        self.distortion() - t * self.entropy()
    }

    /// Free energy from the sums cached by the last codebook update.
    fn updated_free_energy(&self, t: f64) -> f64 {
        let d: f64 = self.decoders.iter().zip(&self.sse).map(|(d, s)| d.weight * s).sum();
        d / self.prep.len as f64 - t * self.entropy()
    }

    pub fn update_codebooks(&mut self) {
        use rayon::prelude::*;
        let (prep, layout, probs) = (self.prep, &self.layout, &self.probs);
        let groups = soft::subset_groups(&self.decoders, |_| true);
        let results: Vec<Vec<(CodebookTable, f64)>> = groups
            .par_iter()
            .map(|g| {
                let sources: Vec<usize> = g.iter().map(|&k| self.decoders[k].source).collect();
                soft::soft_centroids(prep, layout, probs, self.decoders[g[0]].subset, &sources)
            })
            .collect();
        for (g, res) in groups.iter().zip(results) {
            for (&k, (table, sse)) in g.iter().zip(res) {
                self.tables[k] = table;
                self.sse[k] = sse;
            }
        }
    }

    /// Mean over region samples of the weighted error with source `i` forced
    /// to each label, `[q * labels + k]`; empty regions give 0.
    pub fn conditional(&self, i: usize, all_decoders: bool) -> Vec<f64> {
        let mut acc = soft::forced_label_errors(
            self.prep,
            &self.layout,
            &self.probs,
            i,
            &self.decoders,
            &self.tables,
            all_decoders,
        );
        let labels = 1usize << self.layout.rate(i);
        for (q, members) in self.prep.members[i].iter().enumerate() {
            let n = members.len();
            for v in &mut acc[q * labels..(q + 1) * labels] {
                *v = if n == 0 { 0.0 } else { *v / n as f64 };
            }
        }
        acc
    }

    pub fn gibbs_rows(&self, i: usize, t: f64) -> Vec<f64> {
        let labels = 1usize << self.layout.rate(i);
        let scale = self.prep.sources as f64;
        let d = self.conditional(i, false);
        let mut out = Vec::with_capacity(d.len());
        for (q, row) in d.chunks(labels).enumerate() {
            if self.prep.members[i][q].is_empty() {
                out.extend(std::iter::repeat_n(1.0 / labels as f64, labels));
            } else {
                let scaled: Vec<f64> = row.iter().map(|v| v * scale).collect();
                out.extend(gibbs_row(&scaled, t));
            }
        }
        out
    }

    pub fn perturb(&mut self, rng: &mut ChaCha8Rng, amplitude: f64) {
        if amplitude == 0.0 {
            return;
        }
        for (i, p) in self.probs.iter_mut().enumerate() {
            let labels = 1usize << self.layout.rate(i);
            for row in p.chunks_mut(labels) {
                for v in row.iter_mut() {
                    *v *= 1.0 + amplitude * rng.random_range(-1.0..1.0);
                }
                let s: f64 = row.iter().sum();
                row.iter_mut().for_each(|v| *v /= s);
            }
        }
    }

    pub fn is_hard(&self) -> bool {
        self.probs
            .iter()
            .all(|p| p.iter().all(|&v| v <= 1e-12 || v >= 1.0 - 1e-12))
    }

    pub fn hard_labels(&self) -> Vec<Vec<u32>> {
        self.probs
            .iter()
            .enumerate()
            .map(|(i, p)| argmax_rows(p, 1 << self.layout.rate(i)))
            .collect()
    }

    /// Soft centroid table for `source` reading `subset`, with its expected
    /// sum of squared errors.
    pub fn centroid(&self, source: usize, subset: BitSubset) -> (CodebookTable, f64) {
        soft::soft_centroids(self.prep, &self.layout, &self.probs, subset, &[source]).remove(0)
    }

    pub fn set_decoder(&mut self, k: usize, subset: BitSubset, table: CodebookTable, sse: f64) {
        self.decoders[k].subset = subset;
        self.tables[k] = table;
        self.sse[k] = sse;
    }

    /// Anneal from `t_init` down to `t_min`, calling `outer` once per
    /// temperature after equilibrium. Returns the number of temperatures.
    pub fn anneal(
        &mut self,
        schedule: &AnnealSchedule,
        rng: &mut ChaCha8Rng,
        trace: Option<&mut Vec<TemperatureTrace>>,
        outer: &mut dyn FnMut(&mut SoftCore<'a>) -> Result<()>,
    ) -> Result<usize> {
        let mut trace = trace;
        let mut t = schedule.t_init;
        let mut steps = 0;
        loop {
            steps += 1;
            self.perturb(rng, schedule.perturbation);
            self.update_codebooks();
            let mut prev = self.updated_free_energy(t);
            let mut js = vec![prev];
            for _ in 0..schedule.max_inner {
                for i in 0..self.layout.sources() {
                    self.probs[i] = self.gibbs_rows(i, t);
                }
                self.update_codebooks();
                let j = self.updated_free_energy(t);
                js.push(j);
                let settled = (prev - j).abs() <= schedule.equilibrium_tol * prev.abs().max(f64::MIN_POSITIVE);
                prev = j;
                if settled {
                    break;
                }
            }
            if let Some(tr) = trace.as_deref_mut() {
                tr.push(TemperatureTrace {
                    temperature: t,
                    free_energy: js,
                });
            }
            outer(self)?;
            if self.is_hard() {
                break;
            }
            t *= schedule.alpha;
            if t < schedule.t_min {
                break;
            }
        }
        Ok(steps)
    }
}

/// `(1/N) Σ_i Σ_q (|T_q|/|T|)·H(P_i(·|q))` in nats.
fn entropy_of(prep: &Prepared, layout: &BitLayout, probs: &[Vec<f64>]) -> f64 {
    let mut h = 0.0;
    for (i, p) in probs.iter().enumerate() {
        let labels = 1usize << layout.rate(i);
        for (q, row) in p.chunks(labels).enumerate() {
            let w = prep.members[i][q].len() as f64;
            if w == 0.0 {
                continue;
            }
            let hr: f64 = row.iter().filter(|&&v| v > 0.0).map(|&v| -v * v.ln()).sum();
            h += w * hr;
        }
    }
    h / (prep.len as f64 * probs.len() as f64)
}

/// `exp(-d_k/T) / Σ exp(-d/T)`, computed relative to the minimum.
pub fn gibbs_row(d: &[f64], t: f64) -> Vec<f64> {
    let n = d.len();
    if t.is_infinite() {
        return vec![1.0 / n as f64; n];
    }
    let min = d.iter().copied().fold(f64::INFINITY, f64::min);
    let mut row: Vec<f64> = d.iter().map(|&v| (-(v - min) / t).exp()).collect();
    let s: f64 = row.iter().sum();
    row.iter_mut().for_each(|v| *v /= s);
    row
}

fn plain_decoders(system: &SourceSystem) -> Vec<Decoder> {
    system
        .selector
        .subsets()
        .iter()
        .zip(&system.weights)
        .enumerate()
        .map(|(i, (&subset, &weight))| Decoder {
            source: i,
            subset,
            weight,
        })
        .collect()
}

fn check_soft(system: &SourceSystem, soft: &SoftEncoder) -> Result<()> {
    let regions: Vec<usize> = system.quantizers.iter().map(|q| q.region_count()).collect();
    if soft.regions != regions || soft.rates != system.rates() {
        return Err(Error::invalid("soft encoder does not match the system"));
    }
    Ok(())
}

fn core_for<'a>(prep: &'a Prepared, system: &SourceSystem, soft: &SoftEncoder) -> SoftCore<'a> {
    SoftCore {
        prep,
        layout: system.layout(),
        probs: soft.probs.clone(),
        decoders: plain_decoders(system),
        tables: system.codebooks.tables.clone(),
        sse: vec![0.0; system.sources()],
    }
}

/// Expected weighted distortion of `system`'s selector and codebooks when the
/// encoders are replaced by `soft` (the system's own maps are ignored).
pub fn soft_distortion(data: &TrainingSet, system: &SourceSystem, soft: &SoftEncoder) -> Result<f64> {
    check_soft(system, soft)?;
    let prep = Prepared::new(data, &system.quantizers)?;
    Ok(core_for(&prep, system, soft).distortion())
}

/// Average weighted distortion over the samples of source `i`'s region `q`
/// when that region is mapped to `k` deterministically.
pub fn conditional_distortion(
    i: usize,
    q: usize,
    k: usize,
    data: &TrainingSet,
    system: &SourceSystem,
    soft: &SoftEncoder,
) -> Result<f64> {
    check_soft(system, soft)?;
    if i >= soft.sources() || q >= soft.regions[i] || k >= 1 << soft.rates[i] {
        return Err(Error::invalid(format!("no cell ({i}, {q}, {k})")));
    }
    let prep = Prepared::new(data, &system.quantizers)?;
    let core = core_for(&prep, system, soft);
    let d = core.conditional(i, true);
    Ok(d[q * (1 << soft.rates[i]) + k])
}

/// New rows `P_i(·|q)` for source `i` at temperature `t`.
pub fn gibbs_update(
    i: usize,
    data: &TrainingSet,
    system: &SourceSystem,
    soft: &SoftEncoder,
    t: f64,
) -> Result<Vec<f64>> {
    check_soft(system, soft)?;
    if !(t > 0.0) {
        return Err(Error::invalid("temperature must be positive"));
    }
    let prep = Prepared::new(data, &system.quantizers)?;
    Ok(core_for(&prep, system, soft).gibbs_rows(i, t))
}

/// Probability-weighted centroid codebooks for `system`'s selector.
pub fn soft_codebook_update(data: &TrainingSet, system: &SourceSystem, soft: &SoftEncoder) -> Result<DecoderCodebook> {
    check_soft(system, soft)?;
    let prep = Prepared::new(data, &system.quantizers)?;
    let mut core = core_for(&prep, system, soft);
    for d in &mut core.decoders {
        d.weight = 1.0;
    }
    core.update_codebooks();
    Ok(DecoderCodebook { tables: core.tables })
}

/// Average encoder entropy in nats, weighted by region frequency.
pub fn entropy(soft: &SoftEncoder, data: &TrainingSet, quantizers: &[HighRateQuantizer]) -> Result<f64> {
    let prep = Prepared::new(data, quantizers)?;
    if soft.regions != prep.region_counts {
        return Err(Error::invalid("soft encoder does not match the quantizers"));
    }
    let layout = BitLayout::new(&soft.rates)?;
    Ok(entropy_of(&prep, &layout, &soft.probs))
}

/// One soft selector step for every source; candidates are scored on the
/// soft Lagrangian with fresh soft centroids.
fn soft_selector_step(core: &mut SoftCore, lambda: f64, own_bits_mandatory: bool) {
    let n = core.decoders.len();
    let len = core.prep.len as f64;
    for i in 0..n {
        let dec = core.decoders[i];
        let own = core.layout.own_bits(dec.source);
        let candidates = hamming1_candidates(dec.subset, core.layout.total(), own_bits_mandatory.then_some(own));
        let scored: Vec<(BitSubset, f64, CodebookTable, f64)> = candidates
            .into_iter()
            .map(|s| {
                let (table, sse) = core.centroid(dec.source, s);
                let score = dec.weight * sse / len + lambda / n as f64 * 2f64.powi(s.len() as i32);
                (s, score, table, sse)
            })
            .collect();
        let pairs: Vec<(BitSubset, f64)> = scored.iter().map(|(s, v, _, _)| (*s, *v)).collect();
        let (best, _) = choose_subset(&pairs, dec.subset);
        let (_, _, table, sse) = scored.into_iter().find(|(s, _, _, _)| *s == best).expect("chosen");
        core.set_decoder(i, best, table, sse);
    }
}

/// Annealed design at a fixed `λ`, finished by greedy sweeps.
pub fn run_da(
    data: &TrainingSet,
    quantizers: &[HighRateQuantizer],
    rates: &[u32],
    config: &AnnealConfig,
) -> Result<AnnealOutcome> {
    let start = Stopwatch::start();
    if quantizers.len() != data.sources() || rates.len() != data.sources() {
        return Err(Error::invalid("one quantizer and one rate per source are required"));
    }
    if !(config.lambda >= 0.0) || !config.lambda.is_finite() {
        return Err(Error::invalid(format!(
            "lambda {} must be finite and >= 0",
            config.lambda
        )));
    }
    if config.selector_search == SelectorSearch::Full {
        return Err(Error::invalid("annealing supports hamming1 or fixed selector search"));
    }
    let schedule = config.schedule.unwrap_or_else(|| AnnealSchedule::for_data(data));
    schedule.validate()?;
    let layout = BitLayout::new(rates)?;
    let prep = Prepared::new(data, quantizers)?;
    let weights = model::uniform_weights(data.sources());
    let selector = BitSubsetSelector::own_bits(&layout);
    let decoders: Vec<Decoder> = selector
        .subsets()
        .iter()
        .enumerate()
        .map(|(i, &subset)| Decoder {
            source: i,
            subset,
            weight: weights[i],
        })
        .collect();
    let uniform = SoftEncoder::uniform(&prep.region_counts, rates);
    let mut core = SoftCore::new(&prep, layout.clone(), uniform.probs, decoders);
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut trace = Vec::new();
    let lambda = config.lambda;
    let search = config.selector_search;
    let own = config.own_bits_mandatory;
    let temperatures = core.anneal(
        &schedule,
        &mut rng,
        config.trace.then_some(&mut trace),
        &mut |c: &mut SoftCore| {
            if search == SelectorSearch::Hamming1 {
                soft_selector_step(c, lambda, own);
            }
            Ok(())
        },
    )?;

    let subsets: Vec<BitSubset> = core.decoders.iter().map(|d| d.subset).collect();
    let mut design = HardDesign::new(&prep, layout, core.hard_labels(), subsets, weights)?;
    let greedy = GreedyConfig {
        lambda,
        max_sweeps: config.max_sweeps,
        restarts: 1,
        rng_seed: config.rng_seed,
        selector_search: search,
        own_bits_mandatory: own,
        trace: false,
        ..GreedyConfig::default()
    };
    design.descend(&greedy)?;
    let system = design.to_system(quantizers)?;
    let point = TradeoffPoint::new(
        lambda,
        Split::Train,
        "da",
        CostKind::Complexity,
        design.complexity(),
        design.distortion(),
        config.rng_seed,
        start.seconds(),
    );
    Ok(AnnealOutcome {
        system,
        point,
        temperatures,
        trace,
    })
}
