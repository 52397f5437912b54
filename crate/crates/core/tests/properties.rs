use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wzdesign::anneal::{gibbs_row, soft_distortion, SoftEncoder};
use wzdesign::data::gen_gaussian_chain;
use wzdesign::dir::{
    communication_cost, conventional_baseline, run_dir_design, steiner_table, DirConfig, DirProblem, NetworkGraph,
    Role, RouterAssignment, TrafficMatrix,
};
use wzdesign::greedy::{
    descend, update_codebooks, update_selector_full, update_selector_hamming1, GreedyConfig, SelectorSearch,
};
use wzdesign::model::{
    self, extract_bits, BitLayout, BitSubset, BitSubsetSelector, BitVector, CodebookTable, DecoderCodebook,
    HighRateQuantizer, SourceSystem, TrainingSet, WzMap,
};
use wzdesign::report::{best_within_budget, lower_envelope, to_db, CostKind, Split, TradeoffPoint};

const REGIONS: usize = 6;

fn random_subset(rng: &mut ChaCha8Rng, total: u32) -> BitSubset {
    BitSubset::from_positions((0..total).filter(|_| rng.random_bool(0.5))).unwrap()
}

/// System with random labels and selectors and centroid codebooks.
fn random_system(rng: &mut ChaCha8Rng, data: &TrainingSet, rates: &[u32]) -> SourceSystem {
    let layout = BitLayout::new(rates).unwrap();
    let quantizers: Vec<_> = (0..rates.len())
        .map(|_| HighRateQuantizer::uniform(-2.5, 2.5, REGIONS).unwrap())
        .collect();
    let maps: Vec<_> = rates
        .iter()
        .map(|&r| WzMap::new((0..REGIONS).map(|_| rng.random_range(0..1u32 << r)).collect(), r).unwrap())
        .collect();
    let subsets: Vec<_> = (0..rates.len()).map(|_| random_subset(rng, layout.total())).collect();
    with_selector(data, quantizers, maps, subsets, layout.total())
}

fn with_selector(
    data: &TrainingSet,
    quantizers: Vec<HighRateQuantizer>,
    maps: Vec<WzMap>,
    subsets: Vec<BitSubset>,
    total: u32,
) -> SourceSystem {
    let n = subsets.len();
    let placeholder = DecoderCodebook {
        tables: subsets.iter().map(|s| CodebookTable::constant(s.len(), 0.0)).collect(),
    };
    let selector = BitSubsetSelector::new(subsets, total).unwrap();
    let mut system = SourceSystem::new(quantizers, maps, selector, placeholder, model::uniform_weights(n)).unwrap();
    system.codebooks = update_codebooks(&system, data).unwrap();
    system
}

fn small_data(seed: u64, sources: usize, len: usize) -> TrainingSet {
    gen_gaussian_chain(sources, 0.8, len, seed).unwrap()
}

/// Index formed by reading `subset` in ascending position order, first bit
/// most significant.
fn packed(bits: &BitVector, positions: &[u32]) -> u64 {
    let mut sorted = positions.to_vec();
    sorted.sort_unstable();
    sorted.iter().fold(0, |acc, &p| (acc << 1) | bits.bit(p) as u64)
}

/// Connected graph: a random spanning tree plus extra edges.
fn random_graph(rng: &mut ChaCha8Rng, nodes: usize, sinks: usize) -> NetworkGraph {
    let mut edges = Vec::new();
    for v in 1..nodes {
        edges.push((rng.random_range(0..v), v, rng.random_range(1..10) as f64));
    }
    for _ in 0..nodes {
        let (u, v) = (rng.random_range(0..nodes), rng.random_range(0..nodes));
        if u != v {
            edges.push((u, v, rng.random_range(1..10) as f64));
        }
    }
    let mut order: Vec<usize> = (0..nodes).collect();
    order.shuffle(rng);
    let mut roles = vec![Role::Intermediate; nodes];
    roles[order[0]] = Role::Source(0);
    for j in 0..sinks {
        roles[order[1 + j]] = Role::Sink(j);
    }
    NetworkGraph::new((0..nodes).map(|v| format!("n{v}")).collect(), roles, edges).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn packing_ignores_subset_representation(value in any::<u64>(), len in 1u32..20, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bits = BitVector::new(value & ((1u64 << len) - 1), len).unwrap();
        let mut positions: Vec<u32> = (0..len).filter(|_| rng.random_bool(0.5)).collect();
        let forward = extract_bits(&bits, &BitSubset::from_positions(positions.clone()).unwrap()).unwrap();
        positions.shuffle(&mut rng);
        let shuffled = extract_bits(&bits, &BitSubset::from_positions(positions.clone()).unwrap()).unwrap();
        prop_assert_eq!(forward, shuffled);
        prop_assert_eq!(forward, packed(&bits, &positions));
    }

    #[test]
    fn complexity_depends_only_on_subset_sizes(sizes in prop::collection::vec(0u32..8, 1..5), seed in any::<u64>()) {
        let total = 8;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pick = |rng: &mut ChaCha8Rng, k: u32| {
            let mut all: Vec<u32> = (0..total).collect();
            all.shuffle(rng);
            BitSubset::from_positions(all[..k as usize].iter().copied()).unwrap()
        };
        let a = BitSubsetSelector::new(sizes.iter().map(|&k| pick(&mut rng, k)).collect(), total).unwrap();
        let b = BitSubsetSelector::new(sizes.iter().map(|&k| pick(&mut rng, k)).collect(), total).unwrap();
        let expected = sizes.iter().map(|&k| (1u64 << k) as f64).sum::<f64>() / sizes.len() as f64;
        prop_assert_eq!(model::complexity(&a), model::complexity(&b));
        prop_assert!((model::complexity(&a) - expected).abs() < 1e-12);
    }

    #[test]
    fn distortion_ignores_row_order(seed in any::<u64>(), sources in 1usize..4, len in 20usize..120) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = small_data(seed, sources, len);
        let system = random_system(&mut rng, &data, &vec![2; sources]);
        let mut rows: Vec<usize> = (0..len).collect();
        rows.shuffle(&mut rng);
        let permuted = data.select_rows(&rows).unwrap();
        let (a, b) = (model::distortion(&data, &system), model::distortion(&permuted, &system));
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
    }

    #[test]
    fn centroid_codebooks_are_no_worse(seed in any::<u64>(), sources in 1usize..4, noise in 0.001f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = small_data(seed, sources, 80);
        let system = random_system(&mut rng, &data, &vec![2; sources]);
        let mut other = system.clone();
        for table in &mut other.codebooks.tables {
            for (v, populated) in table.values.iter_mut().zip(&table.populated) {
                if *populated {
                    *v += noise * (rng.random::<f64>() - 0.5);
                }
            }
        }
        prop_assert!(model::distortion(&data, &system) <= model::distortion(&data, &other) + 1e-12);
    }

    #[test]
    fn one_hot_soft_encoder_matches_hard_distortion(seed in any::<u64>(), sources in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = small_data(seed, sources, 90);
        let system = random_system(&mut rng, &data, &vec![2; sources]);
        let soft = SoftEncoder::from_maps(&system.wz_maps);
        let hard = model::distortion(&data, &system);
        let d = soft_distortion(&data, &system, &soft).unwrap();
        prop_assert!((d - hard).abs() <= 1e-10 * hard.max(1e-300));
    }

    #[test]
    fn gibbs_rows_are_distributions_favouring_low_error(
        d in prop::collection::vec(0.0f64..5.0, 1..8),
        t in 1e-3f64..1e3,
    ) {
        let row = gibbs_row(&d, t);
        prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(row.iter().all(|&p| p >= 0.0));
        for a in 0..d.len() {
            for b in 0..d.len() {
                if d[a] < d[b] {
                    prop_assert!(row[a] >= row[b]);
                }
            }
        }
    }

    #[test]
    fn db_column_matches_linear_distortion(d in 1e-9f64..10.0, cost in 1.0f64..1024.0, lambda in 0.0f64..1.0) {
        let p = TradeoffPoint::new(lambda, Split::Test, "m", CostKind::Complexity, cost, d, 0, 0.0);
        prop_assert!((10f64.powf(p.distortion_db / 10.0) - d).abs() <= 1e-9 * d);
        prop_assert!((p.distortion_db - to_db(d)).abs() < 1e-12);
        prop_assert!((p.lagrangian - (d + lambda * cost)).abs() <= 1e-12 * p.lagrangian.max(1.0));
    }

    #[test]
    fn lower_envelope_is_a_staircase(pts in prop::collection::vec((1.0f64..100.0, 0.01f64..1.0), 1..20)) {
        let points: Vec<_> = pts
            .iter()
            .map(|&(c, d)| TradeoffPoint::new(0.0, Split::Test, "m", CostKind::Complexity, c, d, 0, 0.0))
            .collect();
        let env = lower_envelope(&points);
        for w in env.windows(2) {
            prop_assert!(w[0].cost <= w[1].cost && w[1].distortion < w[0].distortion);
        }
        for p in &points {
            let best = best_within_budget(&env, p.cost).unwrap();
            prop_assert!(best <= p.distortion);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn greedy_descent_never_increases_the_lagrangian(seed in any::<u64>(), sources in 1usize..4, lambda in 0.0f64..0.05) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = small_data(seed, sources, 150);
        let system = random_system(&mut rng, &data, &vec![2; sources]);
        let start = model::lagrangian(model::distortion(&data, &system), system.complexity(), lambda);
        let cfg = GreedyConfig { lambda, trace: true, own_bits_mandatory: false, ..Default::default() };
        let out = descend(&data, &system, &cfg).unwrap();
        prop_assert!(out.sweeps <= cfg.max_sweeps);
        prop_assert!(out.trace[0] <= start + 1e-12);
        for w in out.trace.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12, "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn full_selector_search_dominates_hamming_one(seed in any::<u64>(), sources in 1usize..4, lambda in 0.0f64..0.05) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = small_data(seed, sources, 120);
        let system = random_system(&mut rng, &data, &vec![2; sources]);
        let total = system.layout().total();
        let score = |i: usize, subset: BitSubset| {
            let mut subsets = system.selector.subsets().to_vec();
            subsets[i] = subset;
            let s = with_selector(&data, system.quantizers.clone(), system.wz_maps.clone(), subsets, total);
            model::lagrangian(model::distortion(&data, &s), s.complexity(), lambda)
        };
        for i in 0..sources {
            let full = update_selector_full(i, &system, &data, lambda, false).unwrap();
            let h1 = update_selector_hamming1(i, &system, &data, lambda, false).unwrap();
            let current = score(i, system.selector.subset(i));
            prop_assert!(score(i, full) <= score(i, h1) + 1e-12);
            prop_assert!(score(i, h1) <= current + 1e-12);
        }
    }

    #[test]
    fn steiner_costs_are_monotone_subadditive_and_exact_for_one_sink(
        seed in any::<u64>(),
        nodes in 3usize..8,
        sinks in 1usize..3,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let graph = random_graph(&mut rng, nodes.max(sinks + 1), sinks);
        let table = steiner_table(&graph, 0).unwrap();
        let dist = graph.distances();
        prop_assert_eq!(table.cost(0), 0.0);
        for j in 0..sinks {
            prop_assert_eq!(table.cost(1 << j), dist[graph.source_node(0)][graph.sink_node(j)]);
        }
        let all = 1u32 << sinks;
        for a in 0..all {
            for b in 0..all {
                let u = table.cost(a | b);
                prop_assert!(table.cost(a) <= u + 1e-12);
                prop_assert!(u <= table.cost(a) + table.cost(b) + 1e-12);
            }
        }
    }

    #[test]
    fn communication_cost_is_linear_in_bit_count(seed in any::<u64>(), rate in 1u32..5, sinks in 1usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let graph = random_graph(&mut rng, 6, sinks);
        let table = steiner_table(&graph, 0).unwrap();
        let route = rng.random_range(0..1u32 << sinks);
        let routers = RouterAssignment::new(vec![vec![route; rate as usize]], sinks).unwrap();
        let w = communication_cost(&routers, std::slice::from_ref(&table));
        prop_assert!((w - rate as f64 * table.cost(route)).abs() <= 1e-9 * w.max(1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn routed_design_is_never_worse_than_conventional(seed in any::<u64>(), lambda in 0.0f64..1e-3) {
        let data = small_data(seed, 2, 300);
        let quantizers: Vec<_> = (0..2).map(|_| HighRateQuantizer::uniform(-2.5, 2.5, 8).unwrap()).collect();
        let mut edges = vec![(0, 2, 4.0), (1, 3, 4.0), (0, 4, 1.0), (1, 4, 1.0), (4, 2, 1.0), (4, 3, 1.0)];
        edges.push((0, 1, 9.0));
        let roles = vec![Role::Source(0), Role::Source(1), Role::Sink(0), Role::Sink(1), Role::Intermediate];
        let graph = NetworkGraph::new((0..5).map(|v| format!("n{v}")).collect(), roles, edges).unwrap();
        let traffic = TrafficMatrix::new(vec![vec![true, false], vec![false, true]]).unwrap();
        let problem = DirProblem::new(&graph, traffic, vec![2, 2]).unwrap();
        let cfg = DirConfig { lambda, restarts: 2, rng_seed: seed, ..Default::default() };
        let conv = conventional_baseline(&data, &quantizers, &problem, &cfg).unwrap();
        let dir = run_dir_design(&data, &quantizers, &problem, &cfg).unwrap();
        prop_assert!(dir.point.lagrangian <= conv.point.lagrangian + 1e-12);
    }
}

#[test]
fn fixed_selector_search_keeps_the_selector() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let data = small_data(3, 3, 120);
    let system = random_system(&mut rng, &data, &[2; 3]);
    let cfg = GreedyConfig {
        lambda: 0.01,
        selector_search: SelectorSearch::Fixed,
        own_bits_mandatory: false,
        ..Default::default()
    };
    let out = descend(&data, &system, &cfg).unwrap();
    assert_eq!(out.system.selector, system.selector);
}
