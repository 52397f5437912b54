//! Greedy iterative descent on `L = D + λC`.
//!
//! Each sweep applies the three optimality conditions in a fixed order: every
//! Wyner-Ziv map (codebooks fixed), every bit-subset selector (each candidate
//! scored with its own centroid codebook), then every codebook (centroids).
//! Each step can only lower `L`, and a sweep that changes no discrete
//! assignment ends the run.

use crate::clock::Stopwatch;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{self, choose_subset, CellStats, Decoder, Prepared};
use crate::error::{Error, Result};
use crate::model::{
    self, check_weights, BitLayout, BitSubset, BitSubsetSelector, CodebookTable, DecoderCodebook, HighRateQuantizer,
    SourceSystem, TrainingSet, WzMap,
};
use crate::report::{CostKind, Split, TradeoffPoint};

/// Default cap on the received rate for exhaustive selector search.
pub const DEFAULT_FULL_SEARCH_CAP: u32 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectorSearch {
    /// Exact minimizer over every subset of the received bits.
    Full,
    /// Best of the current subset and its Hamming-distance-1 neighbours.
    Hamming1,
    /// Selectors are never changed.
    Fixed,
}

/// Selectors each restart of `run_greedy` starts from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectorInit {
    /// Every decoder reads all received bits.
    Full,
    /// Every decoder reads its own source's bits only.
    OwnBits,
    /// Each restart's labels are descended from both of the above.
    #[default]
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GreedyConfig {
    pub lambda: f64,
    pub max_sweeps: usize,
    pub restarts: usize,
    pub rng_seed: u64,
    pub selector_search: SelectorSearch,
    /// Every decoder must read at least its own source's bits.
    pub own_bits_mandatory: bool,
    pub full_search_cap: u32,
    pub selector_init: SelectorInit,
    /// Record `L` after every individual update.
    pub trace: bool,
}

impl Default for GreedyConfig {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            max_sweeps: 100,
            restarts: 25,
            rng_seed: 0,
            selector_search: SelectorSearch::Hamming1,
            own_bits_mandatory: true,
            full_search_cap: DEFAULT_FULL_SEARCH_CAP,
            selector_init: SelectorInit::Both,
            trace: false,
        }
    }
}

impl GreedyConfig {
    fn validate(&self) -> Result<()> {
        if self.restarts == 0 {
            return Err(Error::invalid("restarts must be at least 1"));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::invalid(format!(
                "lambda {} must be finite and >= 0",
                self.lambda
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GreedyOutcome {
    pub system: SourceSystem,
    pub point: TradeoffPoint,
    /// `L` after each individual update of the winning run (when tracing).
    pub trace: Vec<f64>,
    pub sweeps: usize,
    /// Index of the winning restart.
    pub restart: usize,
}

/// Mutable hard design of the plain (single decoder site) coder.
#[derive(Debug, Clone)]
pub(crate) struct HardDesign<'a> {
    pub prep: &'a Prepared,
    pub layout: BitLayout,
    pub labels: Vec<Vec<u32>>,
    pub indices: Vec<u64>,
    pub subsets: Vec<BitSubset>,
    pub tables: Vec<CodebookTable>,
    pub weights: Vec<f64>,
}

impl<'a> HardDesign<'a> {
    pub fn new(
        prep: &'a Prepared,
        layout: BitLayout,
        labels: Vec<Vec<u32>>,
        subsets: Vec<BitSubset>,
        weights: Vec<f64>,
    ) -> Result<Self> {
        let indices = engine::full_indices(prep, &layout, &labels);
        let stats = CellStats::build(prep, &indices, layout.total());
        let tables = subsets
            .iter()
            .enumerate()
            .map(|(i, &s)| stats.centroid_table(i, s))
            .collect::<Result<_>>()?;
        Ok(Self {
            prep,
            layout,
            labels,
            indices,
            subsets,
            tables,
            weights,
        })
    }

    pub fn from_system(prep: &'a Prepared, system: &SourceSystem) -> Self {
        let layout = system.layout();
        let labels: Vec<Vec<u32>> = system.wz_maps.iter().map(|w| w.labels().to_vec()).collect();
        let indices = engine::full_indices(prep, &layout, &labels);
        Self {
            prep,
            layout,
            labels,
            indices,
            subsets: system.selector.subsets().to_vec(),
            tables: system.codebooks.tables.clone(),
            weights: system.weights.clone(),
        }
    }

    pub fn decoders(&self) -> Vec<Decoder> {
        self.subsets
            .iter()
            .zip(&self.weights)
            .enumerate()
            .map(|(i, (&subset, &weight))| Decoder {
                source: i,
                subset,
                weight,
            })
            .collect()
    }

    pub fn distortion(&self) -> f64 {
        engine::weighted_distortion(
            self.prep,
            &self.indices,
            self.layout.total(),
            &self.decoders(),
            &self.tables,
        )
    }

    pub fn complexity(&self) -> f64 {
        self.subsets.iter().map(|s| 2f64.powi(s.len() as i32)).sum::<f64>() / self.subsets.len() as f64
    }

    pub fn lagrangian(&self, lambda: f64) -> f64 {
        model::lagrangian(self.distortion(), self.complexity(), lambda)
    }

    pub fn wz_step(&mut self, source: usize) -> bool {
        let decoders = self.decoders();
        engine::wz_update(
            self.prep,
            &self.layout,
            source,
            &mut self.labels[source],
            &mut self.indices,
            &decoders,
            &self.tables,
        )
    }

    pub fn stats(&self) -> CellStats {
        CellStats::build(self.prep, &self.indices, self.layout.total())
    }

    /// Score of decoder `source` reading `subset` with its centroid codebook.
    pub fn subset_score(&self, stats: &CellStats, source: usize, subset: BitSubset, lambda: f64) -> f64 {
        let n = self.subsets.len() as f64;
        self.weights[source] * stats.centroid_sse(source, subset) / self.prep.len as f64
            + lambda / n * 2f64.powi(subset.len() as i32)
    }

    pub fn selector_candidates(
        &self,
        source: usize,
        search: SelectorSearch,
        own_bits_mandatory: bool,
        cap: u32,
    ) -> Result<Vec<BitSubset>> {
        let current = self.subsets[source];
        let own = self.layout.own_bits(source);
        let total = self.layout.total();
        Ok(match search {
            SelectorSearch::Fixed => vec![current],
            SelectorSearch::Hamming1 => hamming1_candidates(current, total, own_bits_mandatory.then_some(own)),
            SelectorSearch::Full => {
                if total > cap {
                    return Err(Error::SearchTooLarge { bits: total, cap });
                }
                let forced = if own_bits_mandatory { own.mask() } else { 0 };
                (0..1u64 << total)
                    .filter(|m| m & forced == forced)
                    .map(BitSubset::from_mask)
                    .collect()
            }
        })
    }

    /// Apply the selector rule to `source`; installs the winner's centroid
    /// codebook. Returns whether the subset changed.
    pub fn selector_step(
        &mut self,
        stats: &CellStats,
        source: usize,
        lambda: f64,
        search: SelectorSearch,
        own_bits_mandatory: bool,
        cap: u32,
    ) -> Result<bool> {
        let candidates = self.selector_candidates(source, search, own_bits_mandatory, cap)?;
        let scored: Vec<(BitSubset, f64)> = candidates
            .into_iter()
            .map(|s| (s, self.subset_score(stats, source, s, lambda)))
            .collect();
        let current = self.subsets[source];
        let (best, _) = choose_subset(&scored, current);
        self.subsets[source] = best;
        self.tables[source] = stats.centroid_table(source, best)?;
        Ok(best != current)
    }

    pub fn codebook_step(&mut self, stats: &CellStats) -> Result<()> {
        for i in 0..self.subsets.len() {
            self.tables[i] = stats.centroid_table(i, self.subsets[i])?;
        }
        Ok(())
    }

    pub fn to_system(&self, quantizers: &[HighRateQuantizer]) -> Result<SourceSystem> {
        let wz_maps = self
            .labels
            .iter()
            .enumerate()
            .map(|(i, l)| WzMap::new(l.clone(), self.layout.rate(i)))
            .collect::<Result<_>>()?;
        SourceSystem::new(
            quantizers.to_vec(),
            wz_maps,
            BitSubsetSelector::new(self.subsets.clone(), self.layout.total())?,
            DecoderCodebook {
                tables: self.tables.clone(),
            },
            self.weights.clone(),
        )
    }

    /// Sweep until no discrete assignment changes. Returns (sweeps, trace).
    pub fn descend(&mut self, config: &GreedyConfig) -> Result<(usize, Vec<f64>)> {
        let mut trace = Vec::new();
        let lambda = config.lambda;
        let record = |d: &Self, trace: &mut Vec<f64>| {
            if config.trace {
                trace.push(d.lagrangian(lambda));
            }
        };
        record(self, &mut trace);
        let mut sweeps = 0;
        while sweeps < config.max_sweeps {
            sweeps += 1;
            let mut changed = false;
            for i in 0..self.subsets.len() {
                changed |= self.wz_step(i);
                record(self, &mut trace);
            }
            let stats = self.stats();
            if config.selector_search != SelectorSearch::Fixed {
                for i in 0..self.subsets.len() {
                    changed |= self.selector_step(
                        &stats,
                        i,
                        lambda,
                        config.selector_search,
                        config.own_bits_mandatory,
                        config.full_search_cap,
                    )?;
                    record(self, &mut trace);
                }
            }
            self.codebook_step(&stats)?;
            record(self, &mut trace);
            if !changed {
                break;
            }
        }
        Ok((sweeps, trace))
    }
}

pub(crate) fn hamming1_candidates(current: BitSubset, total: u32, forced: Option<BitSubset>) -> Vec<BitSubset> {
    let mut out = vec![current];
    for p in 0..total {
        if current.contains(p) && forced.is_some_and(|f| f.contains(p)) {
            continue;
        }
        out.push(current.toggled(p));
    }
    out
}

/// Uniformly random labels for every region of every source.
pub(crate) fn random_labels(rng: &mut impl Rng, region_counts: &[usize], layout: &BitLayout) -> Vec<Vec<u32>> {
    region_counts
        .iter()
        .enumerate()
        .map(|(i, &c)| (0..c).map(|_| rng.random_range(0..1u32 << layout.rate(i))).collect())
        .collect()
}

pub(crate) fn restart_rng(seed: u64, restart: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(restart as u64);
    rng
}

fn check_design_inputs(data: &TrainingSet, quantizers: &[HighRateQuantizer], rates: &[u32]) -> Result<BitLayout> {
    if quantizers.len() != data.sources() || rates.len() != data.sources() {
        return Err(Error::invalid(format!(
            "{} sources but {} quantizers and {} rates",
            data.sources(),
            quantizers.len(),
            rates.len()
        )));
    }
    BitLayout::new(rates)
}

/// Best-of-restarts greedy design from uniformly random Wyner-Ziv maps and
/// the configured initial selector.
pub fn run_greedy(
    data: &TrainingSet,
    quantizers: &[HighRateQuantizer],
    rates: &[u32],
    config: &GreedyConfig,
) -> Result<GreedyOutcome> {
    let layout = check_design_inputs(data, quantizers, rates)?;
    let initials = match config.selector_init {
        SelectorInit::Full => vec![BitSubsetSelector::full(&layout)],
        SelectorInit::OwnBits => vec![BitSubsetSelector::own_bits(&layout)],
        SelectorInit::Both => vec![BitSubsetSelector::full(&layout), BitSubsetSelector::own_bits(&layout)],
    };
    let weights = model::uniform_weights(data.sources());
    best_of_restarts(data, quantizers, rates, &initials, &weights, config)
}

/// Best-of-restarts greedy design with a given initial selector and weights.
pub fn run_greedy_from_selector(
    data: &TrainingSet,
    quantizers: &[HighRateQuantizer],
    rates: &[u32],
    initial: &BitSubsetSelector,
    weights: &[f64],
    config: &GreedyConfig,
) -> Result<GreedyOutcome> {
    best_of_restarts(data, quantizers, rates, std::slice::from_ref(initial), weights, config)
}

/// Every restart draws random labels and descends once from each initial
/// selector. Ties keep the earliest run.
fn best_of_restarts(
    data: &TrainingSet,
    quantizers: &[HighRateQuantizer],
    rates: &[u32],
    initials: &[BitSubsetSelector],
    weights: &[f64],
    config: &GreedyConfig,
) -> Result<GreedyOutcome> {
    config.validate()?;
    let layout = check_design_inputs(data, quantizers, rates)?;
    check_weights(weights)?;
    if initials
        .iter()
        .any(|s| s.subsets().len() != data.sources() || s.total_bits() != layout.total())
    {
        return Err(Error::invalid("initial selector does not match the rates"));
    }
    let start = Stopwatch::start();
    let prep = Prepared::new(data, quantizers)?;
    let runs: Vec<Result<Vec<(HardDesign, usize, Vec<f64>)>>> = (0..config.restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = restart_rng(config.rng_seed, r);
            let labels = random_labels(&mut rng, &prep.region_counts, &layout);
            initials
                .iter()
                .map(|initial| {
                    let mut design = HardDesign::new(
                        &prep,
                        layout.clone(),
                        labels.clone(),
                        initial.subsets().to_vec(),
                        weights.to_vec(),
                    )?;
                    let (sweeps, trace) = design.descend(config)?;
                    Ok((design, sweeps, trace))
                })
                .collect()
        })
        .collect();
    let mut best: Option<(usize, f64, HardDesign, usize, Vec<f64>)> = None;
    for (r, run) in runs.into_iter().enumerate() {
        for (design, sweeps, trace) in run? {
            let l = design.lagrangian(config.lambda);
            if best.as_ref().is_none_or(|b| l < b.1) {
                best = Some((r, l, design, sweeps, trace));
            }
        }
    }
    let (restart, _, design, sweeps, trace) = best.expect("restarts >= 1");
    let system = design.to_system(quantizers)?;
    let point = TradeoffPoint::new(
        config.lambda,
        Split::Train,
        "greedy",
        CostKind::Complexity,
        design.complexity(),
        design.distortion(),
        config.rng_seed,
        start.seconds(),
    );
    Ok(GreedyOutcome {
        system,
        point,
        trace,
        sweeps,
        restart,
    })
}

/// Greedy sweeps starting from an existing system (no restarts).
pub fn descend(data: &TrainingSet, system: &SourceSystem, config: &GreedyConfig) -> Result<GreedyOutcome> {
    config.validate()?;
    let start = Stopwatch::start();
    let prep = Prepared::new(data, &system.quantizers)?;
    let mut design = HardDesign::from_system(&prep, system);
    let (sweeps, trace) = design.descend(config)?;
    let point = TradeoffPoint::new(
        config.lambda,
        Split::Train,
        "greedy",
        CostKind::Complexity,
        design.complexity(),
        design.distortion(),
        config.rng_seed,
        start.seconds(),
    );
    Ok(GreedyOutcome {
        system: design.to_system(&system.quantizers)?,
        point,
        trace,
        sweeps,
        restart: 0,
    })
}

/// Optimal Wyner-Ziv map of source `i` with everything else fixed.
pub fn update_wz_map(i: usize, system: &SourceSystem, data: &TrainingSet) -> Result<WzMap> {
    let prep = Prepared::new(data, &system.quantizers)?;
    let mut design = HardDesign::from_system(&prep, system);
    design.wz_step(i);
    WzMap::new(design.labels[i].clone(), system.wz_maps[i].rate())
}

/// Exact minimizer of `γ_i·mse_i(e) + (λ/N)·2^|e|` over all subsets `e`.
pub fn update_selector_full(
    i: usize,
    system: &SourceSystem,
    data: &TrainingSet,
    lambda: f64,
    own_bits_mandatory: bool,
) -> Result<BitSubset> {
    selector_update(i, system, data, lambda, SelectorSearch::Full, own_bits_mandatory)
}

/// Best of the current subset of source `i` and its Hamming-1 neighbours.
pub fn update_selector_hamming1(
    i: usize,
    system: &SourceSystem,
    data: &TrainingSet,
    lambda: f64,
    own_bits_mandatory: bool,
) -> Result<BitSubset> {
    selector_update(i, system, data, lambda, SelectorSearch::Hamming1, own_bits_mandatory)
}

fn selector_update(
    i: usize,
    system: &SourceSystem,
    data: &TrainingSet,
    lambda: f64,
    search: SelectorSearch,
    own_bits_mandatory: bool,
) -> Result<BitSubset> {
    let prep = Prepared::new(data, &system.quantizers)?;
    let mut design = HardDesign::from_system(&prep, system);
    let stats = design.stats();
    design.selector_step(&stats, i, lambda, search, own_bits_mandatory, DEFAULT_FULL_SEARCH_CAP)?;
    Ok(design.subsets[i])
}

/// Centroid codebooks for the current encoders and selector.
pub fn update_codebooks(system: &SourceSystem, data: &TrainingSet) -> Result<DecoderCodebook> {
    let prep = Prepared::new(data, &system.quantizers)?;
    let layout = system.layout();
    let labels: Vec<Vec<u32>> = system.wz_maps.iter().map(|w| w.labels().to_vec()).collect();
    let indices = engine::full_indices(&prep, &layout, &labels);
    let tables = (0..system.sources())
        .map(|i| engine::centroid_table_direct(&prep, &indices, layout.total(), i, system.selector.subset(i)))
        .collect::<Result<_>>()?;
    Ok(DecoderCodebook { tables })
}

/// Partition sources into groups of the given sizes by correlation
/// agglomeration: larger groups first, each seeded with the most correlated
/// unassigned pair and grown by the source with the highest mean absolute
/// correlation to the group.
pub fn correlation_groups(data: &TrainingSet, group_sizes: &[usize]) -> Result<Vec<Vec<usize>>> {
    let n = data.sources();
    if group_sizes.iter().sum::<usize>() != n || group_sizes.contains(&0) {
        return Err(Error::invalid(format!(
            "group sizes {group_sizes:?} do not partition {n} sources"
        )));
    }
    let mut corr = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            corr[i * n + j] = if i == j { 1.0 } else { data.correlation(i, j).abs() };
        }
    }
    let mut sizes = group_sizes.to_vec();
    sizes.sort_by(|a, b| b.cmp(a));
    let mut free: Vec<bool> = vec![true; n];
    let mut groups = Vec::new();
    for s in sizes {
        let mut group = Vec::with_capacity(s);
        if s == 1 {
            let i = free.iter().position(|&f| f).expect("sizes sum to n");
            group.push(i);
        } else {
            let mut best = (f64::NEG_INFINITY, 0, 0);
            for i in 0..n {
                for j in i + 1..n {
                    if free[i] && free[j] && corr[i * n + j] > best.0 {
                        best = (corr[i * n + j], i, j);
                    }
                }
            }
            group.extend([best.1, best.2]);
            while group.len() < s {
                let mut pick = (f64::NEG_INFINITY, 0);
                for c in 0..n {
                    if free[c] && !group.contains(&c) {
                        let avg = group.iter().map(|&g| corr[g * n + c]).sum::<f64>() / group.len() as f64;
                        if avg > pick.0 {
                            pick = (avg, c);
                        }
                    }
                }
                group.push(pick.1);
            }
        }
        for &g in &group {
            free[g] = false;
        }
        group.sort_unstable();
        groups.push(group);
    }
    groups.sort_by_key(|g| g[0]);
    Ok(groups)
}

#[derive(Debug, Clone)]
pub struct GroupingOutcome {
    pub groups: Vec<Vec<usize>>,
    pub system: SourceSystem,
    pub point: TradeoffPoint,
}

/// Correlation-grouping competitor: conventional full-subset decoding inside
/// each group, each group designed independently by best-of-restarts greedy
/// with its selector held fixed. One point per entry of `partitions`.
pub fn grouping_baseline(
    data: &TrainingSet,
    quantizers: &[HighRateQuantizer],
    rates: &[u32],
    partitions: &[Vec<usize>],
    config: &GreedyConfig,
) -> Result<Vec<GroupingOutcome>> {
    let layout = check_design_inputs(data, quantizers, rates)?;
    let n = data.sources();
    let weights = model::uniform_weights(n);
    let mut out = Vec::with_capacity(partitions.len());
    for sizes in partitions {
        let start = Stopwatch::start();
        let groups = correlation_groups(data, sizes)?;
        let mut labels: Vec<Vec<u32>> = vec![Vec::new(); n];
        let mut subsets = vec![BitSubset::EMPTY; n];
        for group in &groups {
            let sub_rows: Vec<usize> = group.clone();
            let sub_data = TrainingSet::new(
                group.len(),
                data.rows().flat_map(|r| sub_rows.iter().map(move |&i| r[i])).collect(),
            )?;
            let sub_q: Vec<_> = group.iter().map(|&i| quantizers[i].clone()).collect();
            let sub_rates: Vec<u32> = group.iter().map(|&i| rates[i]).collect();
            let sub_layout = BitLayout::new(&sub_rates)?;
            let cfg = GreedyConfig {
                selector_search: SelectorSearch::Fixed,
                trace: false,
                ..config.clone()
            };
            let res = run_greedy_from_selector(
                &sub_data,
                &sub_q,
                &sub_rates,
                &BitSubsetSelector::full(&sub_layout),
                &model::uniform_weights(group.len()),
                &cfg,
            )?;
            let group_bits = group
                .iter()
                .fold(BitSubset::EMPTY, |acc, &i| acc.union(layout.own_bits(i)));
            for (k, &i) in group.iter().enumerate() {
                labels[i] = res.system.wz_maps[k].labels().to_vec();
                subsets[i] = group_bits;
            }
        }
        let prep = Prepared::new(data, quantizers)?;
        let design = HardDesign::new(&prep, layout.clone(), labels, subsets, weights.clone())?;
        let system = design.to_system(quantizers)?;
        let label = format!(
            "grouping{}",
            sizes.iter().map(|s| s.to_string()).collect::<Vec<_>>().join("-")
        );
        let point = TradeoffPoint::new(
            config.lambda,
            Split::Train,
            label,
            CostKind::Complexity,
            design.complexity(),
            design.distortion(),
            config.rng_seed,
            start.seconds(),
        );
        out.push(GroupingOutcome { groups, system, point });
    }
    Ok(out)
}
