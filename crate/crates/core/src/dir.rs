//! Dispersive information routing over multi-hop networks.
//!
//! Every transmitted bit of every source is multicast along a Steiner tree
//! to its own subset of sinks. Each sink decodes every source from the bits
//! it receives, and the design minimizes `L = D + λW` where `W` is the total
//! Steiner cost of all multicasts.

use crate::clock::Stopwatch;
use std::collections::HashMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::anneal::{AnnealSchedule, SoftCore, SoftEncoder};
use crate::engine::{self, nearly_equal, CellStats, Decoder, Prepared};
use crate::error::{Error, Result};
use crate::greedy::{random_labels, restart_rng};
use crate::model::{extract_index, BitLayout, BitSubset, CodebookTable, HighRateQuantizer, TrainingSet, WzMap};
use crate::report::{CostKind, Split, TradeoffPoint};

/// Largest sink count for the exact Steiner program.
pub const MAX_SINKS: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Source(usize),
    Sink(usize),
    Intermediate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkGraph {
    names: Vec<String>,
    edges: Vec<(usize, usize, f64)>,
    roles: Vec<Role>,
    sources: Vec<usize>,
    sinks: Vec<usize>,
}

impl NetworkGraph {
    /// Build from node names, roles and weighted undirected edges.
    pub fn new(names: Vec<String>, roles: Vec<Role>, edges: Vec<(usize, usize, f64)>) -> Result<Self> {
        let n = names.len();
        if roles.len() != n {
            return Err(Error::invalid("one role per node is required"));
        }
        for &(u, v, w) in &edges {
            if u >= n || v >= n {
                return Err(Error::invalid(format!("edge ({u}, {v}) names a missing node")));
            }
            if !(w >= 0.0) || !w.is_finite() {
                return Err(Error::invalid(format!("edge ({u}, {v}) has weight {w}")));
            }
        }
        let sources = indexed_roles(
            &roles,
            |r| match r {
                Role::Source(i) => Some(i),
                _ => None,
            },
            "source",
        )?;
        let sinks = indexed_roles(
            &roles,
            |r| match r {
                Role::Sink(j) => Some(j),
                _ => None,
            },
            "sink",
        )?;
        if sources.is_empty() || sinks.is_empty() {
            return Err(Error::invalid("the network needs at least one source and one sink"));
        }
        let g = Self {
            names,
            edges,
            roles,
            sources,
            sinks,
        };
        let d = g.distances();
        if d.iter().any(|row| row.iter().any(|v| v.is_infinite())) {
            return Err(Error::Infeasible("the network graph is not connected".into()));
        }
        Ok(g)
    }

    /// Parse the text format:
    ///
    /// ```text
    /// [edges]
    /// a b 2.5
    /// [roles]
    /// a source 0
    /// b sink 0
    /// c intermediate
    /// ```
    ///
    /// Blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut ids: HashMap<String, usize> = HashMap::new();
        let mut names: Vec<String> = Vec::new();
        let mut id = |name: &str, names: &mut Vec<String>| {
            *ids.entry(name.to_owned()).or_insert_with(|| {
                names.push(name.to_owned());
                names.len() - 1
            })
        };
        let mut edges = Vec::new();
        let mut role_lines: Vec<(usize, Role)> = Vec::new();
        let mut section = "";
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |column: usize, message: String| Error::Parse {
                line: ln + 1,
                column,
                message,
            };
            if line.starts_with('[') {
                section = match line {
                    "[edges]" => "edges",
                    "[roles]" => "roles",
                    other => return Err(err(1, format!("unknown section {other}"))),
                };
                continue;
            }
            let tok: Vec<&str> = line.split_whitespace().collect();
            match section {
                "edges" => {
                    if tok.len() != 3 {
                        return Err(err(1, "expected `u v w`".into()));
                    }
                    let w: f64 = tok[2].parse().map_err(|_| err(3, format!("bad weight {:?}", tok[2])))?;
                    let (u, v) = (id(tok[0], &mut names), id(tok[1], &mut names));
                    edges.push((u, v, w));
                }
                "roles" => {
                    let node = id(tok[0], &mut names);
                    let index = |k: usize| -> Result<usize> {
                        tok.get(k)
                            .ok_or_else(|| err(k + 1, "missing index".into()))?
                            .parse()
                            .map_err(|_| err(k + 1, format!("bad index {:?}", tok[k])))
                    };
                    let role = match tok.get(1).copied() {
                        Some("source") => Role::Source(index(2)?),
                        Some("sink") => Role::Sink(index(2)?),
                        Some("intermediate") => Role::Intermediate,
                        other => return Err(err(2, format!("unknown role {other:?}"))),
                    };
                    role_lines.push((node, role));
                }
                _ => return Err(err(1, "line outside a section".into())),
            }
        }
        let mut roles = vec![Role::Intermediate; names.len()];
        for (node, role) in role_lines {
            roles[node] = role;
        }
        Self::new(names, roles, edges)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("[edges]\n");
        for &(u, v, w) in &self.edges {
            let _ = writeln!(s, "{} {} {w}", self.names[u], self.names[v]);
        }
        s.push_str("[roles]\n");
        for (name, role) in self.names.iter().zip(&self.roles) {
            let _ = match role {
                Role::Source(i) => writeln!(s, "{name} source {i}"),
                Role::Sink(j) => writeln!(s, "{name} sink {j}"),
                Role::Intermediate => writeln!(s, "{name} intermediate"),
            };
        }
        s
    }

    pub fn nodes(&self) -> usize {
        self.names.len()
    }

    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    pub fn source_count(&self) -> usize {
        self.sources.len()
    }

    pub fn sink_count(&self) -> usize {
        self.sinks.len()
    }

    pub fn source_node(&self, i: usize) -> usize {
        self.sources[i]
    }

    pub fn sink_node(&self, j: usize) -> usize {
        self.sinks[j]
    }

    /// All-pairs shortest path lengths (Floyd-Warshall).
    pub fn distances(&self) -> Vec<Vec<f64>> {
        let n = self.nodes();
        let mut d = vec![vec![f64::INFINITY; n]; n];
        for (v, row) in d.iter_mut().enumerate() {
            row[v] = 0.0;
        }
        for &(u, v, w) in &self.edges {
            if w < d[u][v] {
                d[u][v] = w;
                d[v][u] = w;
            }
        }
        for k in 0..n {
            for i in 0..n {
                let dik = d[i][k];
                if dik.is_infinite() {
                    continue;
                }
                for j in 0..n {
                    let via = dik + d[k][j];
                    if via < d[i][j] {
                        d[i][j] = via;
                    }
                }
            }
        }
        d
    }
}

fn indexed_roles(roles: &[Role], pick: impl Fn(Role) -> Option<usize>, what: &str) -> Result<Vec<usize>> {
    let mut found: Vec<(usize, usize)> = roles
        .iter()
        .enumerate()
        .filter_map(|(node, &r)| pick(r).map(|i| (i, node)))
        .collect();
    found.sort_unstable();
    for (expect, &(i, _)) in found.iter().enumerate() {
        if i != expect {
            return Err(Error::invalid(format!(
                "{what} indices must be 0..{} without gaps or repeats",
                found.len()
            )));
        }
    }
    Ok(found.into_iter().map(|(_, node)| node).collect())
}

/// Binary request matrix, `requests[i][j]`: sink `j` wants source `i`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrafficMatrix {
    requests: Vec<Vec<bool>>,
}

impl TrafficMatrix {
    pub fn new(requests: Vec<Vec<bool>>) -> Result<Self> {
        let m = requests.first().map_or(0, Vec::len);
        if requests.is_empty() || m == 0 || requests.iter().any(|r| r.len() != m) {
            return Err(Error::invalid("traffic matrix must be a non-empty rectangle"));
        }
        if let Some(i) = requests.iter().position(|r| !r.iter().any(|&b| b)) {
            return Err(Error::invalid(format!("source {i} is requested by no sink")));
        }
        Ok(Self { requests })
    }

    /// One row per source of `0`/`1` entries separated by spaces or commas.
    pub fn parse(text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let row = line
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|t| !t.is_empty())
                .enumerate()
                .map(|(c, t)| match t {
                    "0" => Ok(false),
                    "1" => Ok(true),
                    _ => Err(Error::Parse {
                        line: ln + 1,
                        column: c + 1,
                        message: format!("expected 0 or 1, found {t:?}"),
                    }),
                })
                .collect::<Result<Vec<bool>>>()?;
            rows.push(row);
        }
        Self::new(rows)
    }

    pub fn to_text(&self) -> String {
        self.requests
            .iter()
            .map(|r| {
                r.iter()
                    .map(|&b| if b { "1" } else { "0" })
                    .collect::<Vec<_>>()
                    .join(" ")
                    + "\n"
            })
            .collect()
    }

    /// Every sink requests `⌈N/2⌉` distinct random sources; any source left
    /// unrequested is then given to a random sink.
    pub fn random_half(sources: usize, sinks: usize, seed: u64) -> Result<Self> {
        if sources == 0 || sinks == 0 {
            return Err(Error::invalid("need at least one source and one sink"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut req = vec![vec![false; sinks]; sources];
        let per = sources.div_ceil(2);
        for j in 0..sinks {
            for i in rand::seq::index::sample(&mut rng, sources, per) {
                req[i][j] = true;
            }
        }
        for row in &mut req {
            if !row.iter().any(|&b| b) {
                row[rng.random_range(0..sinks)] = true;
            }
        }
        Self::new(req)
    }

    /// Source `i` is requested by sink `i mod M` only.
    pub fn single_requester(sources: usize, sinks: usize) -> Result<Self> {
        let mut req = vec![vec![false; sinks]; sources];
        for (i, row) in req.iter_mut().enumerate() {
            row[i % sinks] = true;
        }
        Self::new(req)
    }

    pub fn sources(&self) -> usize {
        self.requests.len()
    }

    pub fn sinks(&self) -> usize {
        self.requests[0].len()
    }

    pub fn requested(&self, i: usize, j: usize) -> bool {
        self.requests[i][j]
    }

    /// Sinks requesting source `i`, as a sink mask.
    pub fn requesters(&self, i: usize) -> u32 {
        self.requests[i]
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .fold(0, |m, (j, _)| m | 1 << j)
    }

    /// `γ_ij`, uniform over requested pairs, indexed `[i][j]`.
    pub fn uniform_weights(&self) -> Vec<Vec<f64>> {
        let count = self.requests.iter().flatten().filter(|&&b| b).count() as f64;
        self.requests
            .iter()
            .map(|r| r.iter().map(|&b| if b { 1.0 / count } else { 0.0 }).collect())
            .collect()
    }
}

/// `d*_i(B)` for every sink subset `B`, indexed by sink mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteinerCostTable {
    costs: Vec<f64>,
}

impl SteinerCostTable {
    pub fn cost(&self, sinks: u32) -> f64 {
        self.costs[sinks as usize]
    }

    pub fn costs(&self) -> &[f64] {
        &self.costs
    }
}

/// Exact Steiner costs from every source to every sink subset
/// (Dreyfus-Wagner over the sink terminals).
pub fn steiner_tables(graph: &NetworkGraph) -> Result<Vec<SteinerCostTable>> {
    let m = graph.sink_count();
    if m > MAX_SINKS {
        return Err(Error::SearchTooLarge {
            bits: m as u32,
            cap: MAX_SINKS as u32,
        });
    }
    let n = graph.nodes();
    let dist = graph.distances();
    let full = 1usize << m;
    let mut dp = vec![f64::INFINITY; full * n];
    for t in 0..m {
        let s = graph.sink_node(t);
        for v in 0..n {
            dp[(1 << t) * n + v] = dist[s][v];
        }
    }
    let mut merged = vec![f64::INFINITY; n];
    for b in 1..full {
        if b.count_ones() < 2 {
            continue;
        }
        let low = b & b.wrapping_neg();
        for (u, slot) in merged.iter_mut().enumerate() {
            let mut best = f64::INFINITY;
            let rest = b ^ low;
            // Every split with the lowest terminal on the first side.
            let mut sub = rest;
            loop {
                let a = sub | low;
                if a != b {
                    let v = dp[a * n + u] + dp[(b ^ a) * n + u];
                    if v < best {
                        best = v;
                    }
                }
                if sub == 0 {
                    break;
                }
                sub = (sub - 1) & rest;
            }
            *slot = best;
        }
        for v in 0..n {
            let mut best = f64::INFINITY;
            for u in 0..n {
                let c = merged[u] + dist[u][v];
                if c < best {
                    best = c;
                }
            }
            dp[b * n + v] = best;
        }
    }
    Ok((0..graph.source_count())
        .map(|i| {
            let node = graph.source_node(i);
            let mut costs: Vec<f64> = (0..full).map(|b| dp[b * n + node]).collect();
            costs[0] = 0.0;
            SteinerCostTable { costs }
        })
        .collect())
}

/// Steiner table for a single source.
pub fn steiner_table(graph: &NetworkGraph, source: usize) -> Result<SteinerCostTable> {
    if source >= graph.source_count() {
        return Err(Error::invalid(format!("no source {source}")));
    }
    Ok(steiner_tables(graph)?.swap_remove(source))
}

/// Destination sink set (as a sink mask) of every bit of every source.
/// Bit `b` of source `i` is the `b`-th most significant bit of its index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RouterAssignment {
    routes: Vec<Vec<u32>>,
    sinks: usize,
}

impl RouterAssignment {
    pub fn new(routes: Vec<Vec<u32>>, sinks: usize) -> Result<Self> {
        if sinks == 0 || sinks > MAX_SINKS {
            return Err(Error::invalid(format!("sink count {sinks} out of range")));
        }
        if routes.iter().flatten().any(|&r| r >> sinks != 0) {
            return Err(Error::invalid("a route names a sink that does not exist"));
        }
        Ok(Self { routes, sinks })
    }

    /// Every bit of source `i` to exactly its requesting sinks.
    pub fn conventional(rates: &[u32], traffic: &TrafficMatrix) -> Self {
        Self {
            routes: rates
                .iter()
                .enumerate()
                .map(|(i, &r)| vec![traffic.requesters(i); r as usize])
                .collect(),
            sinks: traffic.sinks(),
        }
    }

    pub fn broadcast(rates: &[u32], sinks: usize) -> Self {
        Self {
            routes: rates.iter().map(|&r| vec![(1u32 << sinks) - 1; r as usize]).collect(),
            sinks,
        }
    }

    pub fn empty(rates: &[u32], sinks: usize) -> Self {
        Self {
            routes: rates.iter().map(|&r| vec![0; r as usize]).collect(),
            sinks,
        }
    }

    pub fn route(&self, i: usize, bit: usize) -> u32 {
        self.routes[i][bit]
    }

    pub fn routes(&self) -> &[Vec<u32>] {
        &self.routes
    }

    pub fn sinks(&self) -> usize {
        self.sinks
    }

    /// Received bit positions at sink `j`.
    pub fn sink_subset(&self, j: usize) -> BitSubset {
        let mut mask = 0u64;
        let mut p = 0;
        for bits in &self.routes {
            for &r in bits {
                if r >> j & 1 == 1 {
                    mask |= 1 << p;
                }
                p += 1;
            }
        }
        BitSubset::from_mask(mask)
    }
}

/// `W = Σ_i Σ_b d*_i(C_i(b))`.
pub fn communication_cost(routers: &RouterAssignment, tables: &[SteinerCostTable]) -> f64 {
    routers
        .routes
        .iter()
        .zip(tables)
        .map(|(bits, t)| bits.iter().map(|&r| t.cost(r)).sum::<f64>())
        .sum()
}

/// A designed routed coder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirSystem {
    pub quantizers: Vec<HighRateQuantizer>,
    pub wz_maps: Vec<WzMap>,
    pub routers: RouterAssignment,
    /// `codebooks[j][i]`: decoder for source `i` at sink `j`.
    pub codebooks: Vec<Vec<CodebookTable>>,
    /// `weights[i][j]` = `γ_ij`.
    pub weights: Vec<Vec<f64>>,
}

impl DirSystem {
    pub fn sources(&self) -> usize {
        self.quantizers.len()
    }

    pub fn sinks(&self) -> usize {
        self.routers.sinks()
    }

    pub fn layout(&self) -> BitLayout {
        BitLayout::new(&self.wz_maps.iter().map(WzMap::rate).collect::<Vec<_>>()).expect("valid rates")
    }

    /// Reconstructions of every source at sink `j` for one sample.
    pub fn decode_at(&self, x: &[f64], j: usize) -> Vec<f64> {
        let layout = self.layout();
        let index = layout.compose(
            x.iter()
                .zip(self.quantizers.iter().zip(&self.wz_maps))
                .map(|(&v, (q, w))| w.label(q.region(v))),
        );
        let subset = self.routers.sink_subset(j);
        let cell = extract_index(index, layout.total(), subset.mask());
        self.codebooks[j].iter().map(|t| t.value(cell)).collect()
    }
}

/// `Σ_ij γ_ij · mse_ij` on `data`.
pub fn dir_distortion(data: &TrainingSet, system: &DirSystem) -> f64 {
    let n = system.sources();
    let mut total = 0.0;
    for row in data.rows() {
        for j in 0..system.sinks() {
            let y = system.decode_at(row, j);
            for i in 0..n {
                let w = system.weights[i][j];
                if w > 0.0 {
                    total += w * (row[i] - y[i]).powi(2);
                }
            }
        }
    }
    total / data.len() as f64
}

/// Network quantities shared by every design at one deployment.
#[derive(Debug, Clone)]
pub struct DirProblem {
    pub rates: Vec<u32>,
    pub traffic: TrafficMatrix,
    pub steiner: Vec<SteinerCostTable>,
    pub weights: Vec<Vec<f64>>,
}

impl DirProblem {
    pub fn new(graph: &NetworkGraph, traffic: TrafficMatrix, rates: Vec<u32>) -> Result<Self> {
        if traffic.sources() != graph.source_count() || traffic.sinks() != graph.sink_count() {
            return Err(Error::invalid(format!(
                "traffic matrix is {}x{} but the graph has {} sources and {} sinks",
                traffic.sources(),
                traffic.sinks(),
                graph.source_count(),
                graph.sink_count()
            )));
        }
        if rates.len() != graph.source_count() {
            return Err(Error::invalid("one rate per source is required"));
        }
        BitLayout::new(&rates)?;
        let steiner = steiner_tables(graph)?;
        let weights = traffic.uniform_weights();
        Ok(Self {
            rates,
            traffic,
            steiner,
            weights,
        })
    }

    pub fn sources(&self) -> usize {
        self.rates.len()
    }

    pub fn sinks(&self) -> usize {
        self.traffic.sinks()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RouterSearch {
    /// Every sink subset.
    Full,
    /// Current set and every set differing in one sink.
    Hamming1,
    /// Only the empty set or the source's requesting sinks.
    Conventional,
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Greedy,
    Da,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DirConfig {
    pub lambda: f64,
    pub optimizer: Optimizer,
    pub router_search: RouterSearch,
    pub restarts: usize,
    pub rng_seed: u64,
    pub max_sweeps: usize,
    pub trace: bool,
    pub schedule: Option<AnnealSchedule>,
}

impl Default for DirConfig {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            optimizer: Optimizer::Greedy,
            router_search: RouterSearch::Full,
            restarts: 25,
            rng_seed: 0,
            max_sweeps: 100,
            trace: false,
            schedule: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DirOutcome {
    pub system: DirSystem,
    pub point: TradeoffPoint,
    /// `L` after every update of the winning run (when tracing).
    pub trace: Vec<f64>,
}

/// Mutable hard routed design.
#[derive(Clone)]
pub(crate) struct DirDesign<'a> {
    prep: &'a Prepared,
    problem: &'a DirProblem,
    layout: BitLayout,
    labels: Vec<Vec<u32>>,
    indices: Vec<u64>,
    routes: Vec<Vec<u32>>,
    /// `[j * N + i]`
    tables: Vec<CodebookTable>,
}

impl<'a> DirDesign<'a> {
    fn new(prep: &'a Prepared, problem: &'a DirProblem, labels: Vec<Vec<u32>>, routes: Vec<Vec<u32>>) -> Result<Self> {
        let layout = BitLayout::new(&problem.rates)?;
        let indices = engine::full_indices(prep, &layout, &labels);
        let mut d = Self {
            prep,
            problem,
            layout,
            labels,
            indices,
            routes,
            tables: Vec::new(),
        };
        let stats = d.stats();
        d.tables = d
            .decoders()
            .iter()
            .map(|dec| stats.centroid_table(dec.source, dec.subset))
            .collect::<Result<_>>()?;
        Ok(d)
    }

    fn n(&self) -> usize {
        self.problem.sources()
    }

    fn m(&self) -> usize {
        self.problem.sinks()
    }

    fn routers(&self) -> RouterAssignment {
        RouterAssignment {
            routes: self.routes.clone(),
            sinks: self.m(),
        }
    }

    fn sink_subset(&self, j: usize) -> BitSubset {
        self.routers().sink_subset(j)
    }

    fn decoders(&self) -> Vec<Decoder> {
        let mut out = Vec::with_capacity(self.n() * self.m());
        for j in 0..self.m() {
            let subset = self.sink_subset(j);
            for i in 0..self.n() {
                out.push(Decoder {
                    source: i,
                    subset,
                    weight: self.problem.weights[i][j],
                });
            }
        }
        out
    }

    fn stats(&self) -> CellStats {
        CellStats::build(self.prep, &self.indices, self.layout.total())
    }

    fn distortion(&self) -> f64 {
        engine::weighted_distortion(
            self.prep,
            &self.indices,
            self.layout.total(),
            &self.decoders(),
            &self.tables,
        )
    }

    fn cost(&self) -> f64 {
        communication_cost(&self.routers(), &self.problem.steiner)
    }

    fn lagrangian(&self, lambda: f64) -> f64 {
        self.distortion() + lambda * self.cost()
    }

    fn wz_step(&mut self, i: usize) -> bool {
        let decoders = self.decoders();
        engine::wz_update(
            self.prep,
            &self.layout,
            i,
            &mut self.labels[i],
            &mut self.indices,
            &decoders,
            &self.tables,
        )
    }

    fn sink_sse(&self, stats: &CellStats, j: usize, subset: BitSubset) -> f64 {
        (0..self.n())
            .filter(|&k| self.problem.weights[k][j] > 0.0)
            .map(|k| self.problem.weights[k][j] * stats.centroid_sse(k, subset))
            .sum()
    }

    fn refresh_sink(&mut self, stats: &CellStats, j: usize) -> Result<()> {
        let subset = self.sink_subset(j);
        let n = self.n();
        for i in 0..n {
            self.tables[j * n + i] = stats.centroid_table(i, subset)?;
        }
        Ok(())
    }

    /// Router rule for bit `bit` of source `i`; returns whether it changed.
    fn router_step(
        &mut self,
        stats: &CellStats,
        i: usize,
        bit: usize,
        lambda: f64,
        search: RouterSearch,
    ) -> Result<bool> {
        let m = self.m();
        let current = self.routes[i][bit];
        let p = self.layout.offset(i) + bit as u32;
        let len = self.prep.len as f64;
        let mut with = vec![0.0; m];
        let mut without = vec![0.0; m];
        for j in 0..m {
            let s = self.sink_subset(j);
            let base = BitSubset::from_mask(s.mask() & !(1u64 << p));
            with[j] = self.sink_sse(stats, j, base.toggled(p)) / len;
            without[j] = self.sink_sse(stats, j, base) / len;
        }
        let candidates: Vec<u32> = match search {
            RouterSearch::Fixed => vec![current],
            RouterSearch::Full => (0..1u32 << m).collect(),
            RouterSearch::Hamming1 => std::iter::once(current)
                .chain((0..m).map(|j| current ^ 1 << j))
                .collect(),
            RouterSearch::Conventional => {
                let mut c = vec![current, 0, self.problem.traffic.requesters(i)];
                c.sort_unstable();
                c.dedup();
                c
            }
        };
        let table = &self.problem.steiner[i];
        let score = |c: u32| -> f64 {
            (0..m)
                .map(|j| if c >> j & 1 == 1 { with[j] } else { without[j] })
                .sum::<f64>()
                + lambda * table.cost(c)
        };
        let min = candidates.iter().map(|&c| score(c)).fold(f64::INFINITY, f64::min);
        let mut best: Option<u32> = None;
        for &c in &candidates {
            let s = score(c);
            if s > min && !nearly_equal(s, min) {
                continue;
            }
            best = Some(match best {
                None => c,
                Some(b) => {
                    let key = |x: u32| (std::cmp::Reverse(x.count_ones()), x != current, x);
                    if key(c) < key(b) {
                        c
                    } else {
                        b
                    }
                }
            });
        }
        let best = best.expect("at least one candidate");
        if best == current {
            return Ok(false);
        }
        self.routes[i][bit] = best;
        for j in 0..m {
            if (best ^ current) >> j & 1 == 1 {
                self.refresh_sink(stats, j)?;
            }
        }
        Ok(true)
    }

    fn codebook_step(&mut self, stats: &CellStats) -> Result<()> {
        for j in 0..self.m() {
            self.refresh_sink(stats, j)?;
        }
        Ok(())
    }

    fn descend(
        &mut self,
        lambda: f64,
        search: RouterSearch,
        max_sweeps: usize,
        trace: Option<&mut Vec<f64>>,
    ) -> Result<usize> {
        let mut trace = trace;
        let mut record = |d: &Self| {
            if let Some(t) = trace.as_deref_mut() {
                t.push(d.lagrangian(lambda));
            }
        };
        record(self);
        let mut sweeps = 0;
        while sweeps < max_sweeps {
            sweeps += 1;
            let mut changed = false;
            for i in 0..self.n() {
                changed |= self.wz_step(i);
                record(self);
            }
            let stats = self.stats();
            if search != RouterSearch::Fixed {
                for i in 0..self.n() {
                    for b in 0..self.problem.rates[i] as usize {
                        changed |= self.router_step(&stats, i, b, lambda, search)?;
                        record(self);
                    }
                }
            }
            self.codebook_step(&stats)?;
            record(self);
            if !changed {
                break;
            }
        }
        Ok(sweeps)
    }

    fn to_system(&self, quantizers: &[HighRateQuantizer]) -> Result<DirSystem> {
        let n = self.n();
        Ok(DirSystem {
            quantizers: quantizers.to_vec(),
            wz_maps: self
                .labels
                .iter()
                .enumerate()
                .map(|(i, l)| WzMap::new(l.clone(), self.layout.rate(i)))
                .collect::<Result<_>>()?,
            routers: self.routers(),
            codebooks: self.tables.chunks(n).map(<[CodebookTable]>::to_vec).collect(),
            weights: self.problem.weights.clone(),
        })
    }

    fn point(&self, lambda: f64, method: &str, seed: u64, start: Stopwatch) -> TradeoffPoint {
        TradeoffPoint::new(
            lambda,
            Split::Train,
            method,
            CostKind::Communication,
            self.cost(),
            self.distortion(),
            seed,
            start.seconds(),
        )
    }
}

fn check_inputs(
    data: &TrainingSet,
    quantizers: &[HighRateQuantizer],
    problem: &DirProblem,
    config: &DirConfig,
) -> Result<()> {
    if data.sources() != problem.sources() || quantizers.len() != problem.sources() {
        return Err(Error::invalid(format!(
            "{} data columns and {} quantizers for {} network sources",
            data.sources(),
            quantizers.len(),
            problem.sources()
        )));
    }
    if !(config.lambda >= 0.0) || !config.lambda.is_finite() {
        return Err(Error::invalid(format!(
            "lambda {} must be finite and >= 0",
            config.lambda
        )));
    }
    if config.restarts == 0 {
        return Err(Error::invalid("restarts must be at least 1"));
    }
    Ok(())
}

/// Best-of-restarts descent from random labels and the given routes.
fn best_of_restarts<'a>(
    prep: &'a Prepared,
    problem: &'a DirProblem,
    routes: &[Vec<u32>],
    search: RouterSearch,
    config: &DirConfig,
) -> Result<(DirDesign<'a>, Vec<f64>)> {
    let layout = BitLayout::new(&problem.rates)?;
    let runs: Vec<Result<(DirDesign, Vec<f64>)>> = (0..config.restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = restart_rng(config.rng_seed, r);
            let labels = random_labels(&mut rng, &prep.region_counts, &layout);
            let mut d = DirDesign::new(prep, problem, labels, routes.to_vec())?;
            let mut trace = Vec::new();
            d.descend(
                config.lambda,
                search,
                config.max_sweeps,
                config.trace.then_some(&mut trace),
            )?;
            Ok((d, trace))
        })
        .collect();
    let mut best: Option<(f64, DirDesign, Vec<f64>)> = None;
    for run in runs {
        let (d, t) = run?;
        let l = d.lagrangian(config.lambda);
        if best.as_ref().is_none_or(|b| l < b.0) {
            best = Some((l, d, t));
        }
    }
    let (_, d, t) = best.expect("restarts >= 1");
    Ok((d, t))
}

/// Routing restricted to conventional assignments (each bit of source `i`
/// goes to all of its requesting sinks or nowhere), designed with the same
/// Lagrangian.
pub fn conventional_baseline(
    data: &TrainingSet,
    quantizers: &[HighRateQuantizer],
    problem: &DirProblem,
    config: &DirConfig,
) -> Result<DirOutcome> {
    check_inputs(data, quantizers, problem, config)?;
    let start = Stopwatch::start();
    let prep = Prepared::new(data, quantizers)?;
    let routes = RouterAssignment::conventional(&problem.rates, &problem.traffic).routes;
    let (d, trace) = best_of_restarts(&prep, problem, &routes, RouterSearch::Conventional, config)?;
    Ok(DirOutcome {
        system: d.to_system(quantizers)?,
        point: d.point(config.lambda, "conventional", config.rng_seed, start),
        trace,
    })
}

/// Every bit to every sink; the distortion-minimal routing.
pub fn broadcast_baseline(
    data: &TrainingSet,
    quantizers: &[HighRateQuantizer],
    problem: &DirProblem,
    config: &DirConfig,
) -> Result<DirOutcome> {
    check_inputs(data, quantizers, problem, config)?;
    let start = Stopwatch::start();
    let prep = Prepared::new(data, quantizers)?;
    let routes = RouterAssignment::broadcast(&problem.rates, problem.sinks()).routes;
    let (d, trace) = best_of_restarts(&prep, problem, &routes, RouterSearch::Fixed, config)?;
    Ok(DirOutcome {
        system: d.to_system(quantizers)?,
        point: d.point(config.lambda, "broadcast", config.rng_seed, start),
        trace,
    })
}

/// Joint design of encoders, routers and sink decoders minimizing `D + λW`.
///
/// The conventional-routing design at the same `λ` is computed first and
/// descended with free routers, so the result is never worse than it. Fresh
/// restarts (greedy) or an annealed run at conventional routes (DA) compete
/// with that descent and the lowest Lagrangian wins.
pub fn run_dir_design(
    data: &TrainingSet,
    quantizers: &[HighRateQuantizer],
    problem: &DirProblem,
    config: &DirConfig,
) -> Result<DirOutcome> {
    check_inputs(data, quantizers, problem, config)?;
    let start = Stopwatch::start();
    let prep = Prepared::new(data, quantizers)?;
    let lambda = config.lambda;
    let conv_routes = RouterAssignment::conventional(&problem.rates, &problem.traffic).routes;

    let (mut seeded, mut seeded_trace) =
        best_of_restarts(&prep, problem, &conv_routes, RouterSearch::Conventional, config)?;
    seeded.descend(
        lambda,
        config.router_search,
        config.max_sweeps,
        config.trace.then_some(&mut seeded_trace),
    )?;

    let challenger = match config.optimizer {
        Optimizer::Greedy => best_of_restarts(&prep, problem, &conv_routes, config.router_search, config)?,
        Optimizer::Da => {
            let schedule = config.schedule.unwrap_or_else(|| AnnealSchedule::for_data(data));
            schedule.validate()?;
            let layout = BitLayout::new(&problem.rates)?;
            let tmp = DirDesign::new(&prep, problem, seeded.labels.clone(), conv_routes.clone())?;
            let uniform = SoftEncoder::uniform(&prep.region_counts, &problem.rates);
            let probs = (0..problem.sources()).map(|i| uniform.probs(i).to_vec()).collect();
            let mut core = SoftCore::new(&prep, layout, probs, tmp.decoders());
            let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
            core.anneal(&schedule, &mut rng, None, &mut |_| Ok(()))?;
            let mut d = DirDesign::new(&prep, problem, core.hard_labels(), conv_routes.clone())?;
            let mut trace = Vec::new();
            d.descend(
                lambda,
                config.router_search,
                config.max_sweeps,
                config.trace.then_some(&mut trace),
            )?;
            (d, trace)
        }
    };
    let (best, trace) = if challenger.0.lagrangian(lambda) < seeded.lagrangian(lambda) {
        challenger
    } else {
        (seeded, seeded_trace)
    };
    let method = match config.optimizer {
        Optimizer::Greedy => "dir-greedy",
        Optimizer::Da => "dir-da",
    };
    Ok(DirOutcome {
        system: best.to_system(quantizers)?,
        point: best.point(lambda, method, config.rng_seed, start),
        trace,
    })
}

/// Descend an existing routed system (no restarts).
pub fn descend_dir(
    data: &TrainingSet,
    system: &DirSystem,
    problem: &DirProblem,
    config: &DirConfig,
) -> Result<DirOutcome> {
    check_inputs(data, &system.quantizers, problem, config)?;
    let start = Stopwatch::start();
    let prep = Prepared::new(data, &system.quantizers)?;
    let labels = system.wz_maps.iter().map(|w| w.labels().to_vec()).collect();
    let mut d = DirDesign::new(&prep, problem, labels, system.routers.routes.clone())?;
    let mut trace = Vec::new();
    d.descend(
        config.lambda,
        config.router_search,
        config.max_sweeps,
        config.trace.then_some(&mut trace),
    )?;
    Ok(DirOutcome {
        system: d.to_system(&system.quantizers)?,
        point: d.point(config.lambda, "dir-greedy", config.rng_seed, start),
        trace,
    })
}

/// Router rule for one bit of a designed system, everything else fixed.
pub fn update_router(
    i: usize,
    bit: usize,
    system: &DirSystem,
    data: &TrainingSet,
    problem: &DirProblem,
    lambda: f64,
    search: RouterSearch,
) -> Result<u32> {
    let prep = Prepared::new(data, &system.quantizers)?;
    let labels = system.wz_maps.iter().map(|w| w.labels().to_vec()).collect();
    let mut d = DirDesign::new(&prep, problem, labels, system.routers.routes.clone())?;
    let stats = d.stats();
    d.router_step(&stats, i, bit, lambda, search)?;
    Ok(d.routes[i][bit])
}

/// Node placement for a planar sensor deployment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Deployment {
    pub sources: Vec<[f64; 2]>,
    pub sinks: Vec<[f64; 2]>,
    pub intermediates: Vec<[f64; 2]>,
}

impl Deployment {
    /// Sinks at the four corners of a `side × side` square; sources and
    /// intermediate nodes uniformly at random inside it.
    pub fn corner_sinks(sources: usize, intermediates: usize, side: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut point = || [rng.random_range(0.0..side), rng.random_range(0.0..side)];
        let sources = (0..sources).map(|_| point()).collect();
        let intermediates = (0..intermediates).map(|_| point()).collect();
        Self {
            sources,
            sinks: vec![[0.0, 0.0], [side, 0.0], [0.0, side], [side, side]],
            intermediates,
        }
    }

    /// Complete graph with squared Euclidean edge weights.
    pub fn complete_graph(&self) -> Result<NetworkGraph> {
        let mut names = Vec::new();
        let mut roles = Vec::new();
        let mut pos = Vec::new();
        for (i, &p) in self.sources.iter().enumerate() {
            names.push(format!("src{i}"));
            roles.push(Role::Source(i));
            pos.push(p);
        }
        for (j, &p) in self.sinks.iter().enumerate() {
            names.push(format!("sink{j}"));
            roles.push(Role::Sink(j));
            pos.push(p);
        }
        for (k, &p) in self.intermediates.iter().enumerate() {
            names.push(format!("relay{k}"));
            roles.push(Role::Intermediate);
            pos.push(p);
        }
        let mut edges = Vec::new();
        for u in 0..pos.len() {
            for v in u + 1..pos.len() {
                edges.push((u, v, crate::data::distance(pos[u], pos[v]).powi(2)));
            }
        }
        NetworkGraph::new(names, roles, edges)
    }
}
