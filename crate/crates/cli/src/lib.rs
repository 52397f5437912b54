//! Configuration-driven experiment harness: single designs, λ sweeps,
//! baselines, routed-network experiments and synthetic data generation.

pub mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use wzdesign::anneal::{run_da, AnnealConfig};
use wzdesign::data::{self, SourceSpec};
use wzdesign::dir::{
    broadcast_baseline, conventional_baseline, dir_distortion, run_dir_design, Deployment, DirConfig, DirOutcome,
    DirProblem, NetworkGraph, Optimizer, TrafficMatrix,
};
use wzdesign::greedy::{grouping_baseline, run_greedy, GreedyConfig};
use wzdesign::model;
use wzdesign::quantizer::{design_all, LloydConfig};
use wzdesign::report::{self, best_within_budget, lower_envelope, monotonicity_violations, to_db};
use wzdesign::{HighRateQuantizer, SourceSystem, Split, TradeoffPoint, TrainingSet};

use config::DirSection;
pub use config::{ConfigError, ExperimentConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verb {
    Design,
    Sweep,
    Dir,
    Gen,
    Baselines,
}

impl Verb {
    pub fn stem(self) -> &'static str {
        match self {
            Verb::Design => "design",
            Verb::Sweep => "sweep",
            Verb::Dir => "dir",
            Verb::Gen => "gen",
            Verb::Baselines => "baselines",
        }
    }
}

/// Command-line adjustments applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub lambda: Option<f64>,
    pub no_timing: bool,
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    ExperimentConfig::from_toml(&text, base).with_context(|| format!("in config {}", path.display()))
}

pub fn apply_overrides(cfg: &mut ExperimentConfig, o: &Overrides) -> Result<()> {
    if let Some(out) = &o.out {
        cfg.out = out.clone();
    }
    if let Some(seed) = o.seed {
        cfg.seed = seed;
    }
    if let Some(lambda) = o.lambda {
        cfg.lambdas = vec![lambda];
    }
    if o.no_timing {
        cfg.output.wall_time = false;
    }
    cfg.validate()?;
    Ok(())
}

/// Files written by one run.
#[derive(Debug, Clone, Default)]
pub struct RunOutput {
    pub files: Vec<PathBuf>,
    pub points: Vec<TradeoffPoint>,
    pub summary: String,
}

/// Train/test data and frozen high-rate quantizers.
pub struct Dataset {
    pub full: TrainingSet,
    pub train: TrainingSet,
    pub test: TrainingSet,
    pub quantizers: Vec<HighRateQuantizer>,
    pub deployment: Option<Deployment>,
}

fn source_spec(cfg: &ExperimentConfig) -> (SourceSpec, Option<Deployment>) {
    let deployment = cfg
        .dir
        .as_ref()
        .and_then(|d| d.deployment.as_ref())
        .map(|d| Deployment::corner_sinks(d.sources, d.intermediates, d.side, d.seed));
    let mut spec = cfg.source.clone();
    if let (Some(dep), SourceSpec::GaussianField { positions, .. }) = (&deployment, &mut spec) {
        *positions = dep.sources.clone();
    }
    (spec, deployment)
}

pub fn prepare_data(cfg: &ExperimentConfig) -> Result<Dataset> {
    let (spec, deployment) = source_spec(cfg);
    let full = spec.generate().context("generating or loading source data")?;
    if full.sources() != cfg.rates.len() {
        return Err(ConfigError::new(
            "rates",
            format!(
                "data has {} sources but {} rates are given",
                full.sources(),
                cfg.rates.len()
            ),
        )
        .into());
    }
    let (train, test) = data::split(&full, cfg.train_fraction, cfg.shuffle_seed)?;
    let quantizers = design_all(&train, &cfg.regions, LloydConfig::default())?;
    Ok(Dataset {
        full,
        train,
        test,
        quantizers,
        deployment,
    })
}

pub fn run_experiment(cfg: &ExperimentConfig, verb: Verb) -> Result<RunOutput> {
    fs::create_dir_all(&cfg.out).with_context(|| format!("creating output directory {}", cfg.out.display()))?;
    let data = prepare_data(cfg)?;
    let mut out = RunOutput::default();
    match verb {
        Verb::Gen => return gen(cfg, &data),
        Verb::Design => {
            let (points, systems) = proposed(cfg, &data, true)?;
            let path = cfg.out.join(format!("{}_systems.json", cfg.name));
            let text = serde_json::to_string_pretty(&systems)?;
            fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
            out.files.push(path);
            out.points = points;
        }
        Verb::Sweep => {
            out.points = proposed(cfg, &data, false)?.0;
            out.points.extend(baselines(cfg, &data)?);
        }
        Verb::Baselines => out.points = baselines(cfg, &data)?,
        Verb::Dir => {
            let Some(dir) = &cfg.dir else {
                return Err(ConfigError::new("dir", "the dir verb needs a [dir] section").into());
            };
            out.points = dir_experiment(cfg, dir, &data)?;
        }
    }
    if !cfg.output.wall_time {
        for p in &mut out.points {
            p.wall_time_s = 0.0;
        }
    }
    let stem = format!("{}_{}", cfg.name, verb.stem());
    let (csv, json) = report::emit_curves(&out.points, &cfg.out, &stem)?;
    out.summary = summarize(&out.points);
    let summary = cfg.out.join(format!("{stem}_summary.txt"));
    fs::write(&summary, &out.summary).with_context(|| format!("writing {}", summary.display()))?;
    out.files.extend([csv, json, summary]);
    Ok(out)
}

fn gen(cfg: &ExperimentConfig, data: &Dataset) -> Result<RunOutput> {
    let mut out = RunOutput::default();
    let path = cfg.out.join(format!("{}_data.csv", cfg.name));
    let file = fs::File::create(&path).with_context(|| format!("writing {}", path.display()))?;
    data::write_csv(&data.full, std::io::BufWriter::new(file))?;
    out.files.push(path);
    if let (Some(dep), Some(dir)) = (&data.deployment, &cfg.dir) {
        let graph = dep.complete_graph()?;
        let gpath = cfg.out.join(format!("{}_graph.txt", cfg.name));
        fs::write(&gpath, graph.to_text())?;
        let traffic = TrafficMatrix::random_half(graph.source_count(), graph.sink_count(), dir.traffic_seed)?;
        let tpath = cfg.out.join(format!("{}_traffic.txt", cfg.name));
        fs::write(&tpath, traffic.to_text())?;
        out.files.extend([gpath, tpath]);
    }
    out.summary = format!(
        "{} samples of {} sources ({} train, {} test)\n",
        data.full.len(),
        data.full.sources(),
        data.train.len(),
        data.test.len()
    );
    Ok(out)
}

fn greedy_config(cfg: &ExperimentConfig, lambda: f64) -> GreedyConfig {
    GreedyConfig {
        lambda,
        max_sweeps: cfg.greedy.max_sweeps,
        restarts: cfg.greedy.restarts,
        rng_seed: cfg.seed,
        selector_search: cfg.greedy.selector_search,
        own_bits_mandatory: cfg.greedy.own_bits_mandatory,
        selector_init: cfg.greedy.selector_init,
        ..Default::default()
    }
}

fn with_test(point: TradeoffPoint, test: &TrainingSet, system: &SourceSystem) -> [TradeoffPoint; 2] {
    let t = point.on_split(Split::Test, model::distortion(test, system));
    [point, t]
}

/// Proposed designs over the λ grid, train and test rows per design.
fn proposed(
    cfg: &ExperimentConfig,
    data: &Dataset,
    keep_systems: bool,
) -> Result<(Vec<TradeoffPoint>, serde_json::Value)> {
    let mut points = Vec::new();
    let mut systems = Vec::new();
    for &lambda in &cfg.lambdas {
        if cfg.optimizer.greedy() {
            let g = run_greedy(&data.train, &data.quantizers, &cfg.rates, &greedy_config(cfg, lambda))
                .with_context(|| format!("greedy design at λ={lambda}"))?;
            points.extend(with_test(g.point.clone(), &data.test, &g.system));
            if keep_systems {
                systems.push(serde_json::json!({ "method": "greedy", "lambda": lambda, "system": g.system }));
            }
        }
        if cfg.optimizer.da() {
            let acfg = AnnealConfig {
                lambda,
                schedule: Some(cfg.anneal.schedule(&data.train)),
                rng_seed: cfg.seed,
                selector_search: cfg.greedy.selector_search,
                own_bits_mandatory: cfg.greedy.own_bits_mandatory,
                max_sweeps: cfg.greedy.max_sweeps,
                trace: false,
            };
            let d = run_da(&data.train, &data.quantizers, &cfg.rates, &acfg)
                .with_context(|| format!("annealed design at λ={lambda}"))?;
            points.extend(with_test(d.point.clone(), &data.test, &d.system));
            if keep_systems {
                systems.push(serde_json::json!({ "method": "da", "lambda": lambda, "system": d.system }));
            }
        }
    }
    Ok((points, serde_json::Value::Array(systems)))
}

fn baselines(cfg: &ExperimentConfig, data: &Dataset) -> Result<Vec<TradeoffPoint>> {
    let n = cfg.rates.len();
    let partitions = if cfg.baselines.grouping.is_empty() {
        vec![vec![n], vec![1; n]]
    } else {
        cfg.baselines.grouping.clone()
    };
    let outcomes = grouping_baseline(
        &data.train,
        &data.quantizers,
        &cfg.rates,
        &partitions,
        &greedy_config(cfg, 0.0),
    )
    .context("grouping baseline")?;
    Ok(outcomes
        .into_iter()
        .flat_map(|g| with_test(g.point, &data.test, &g.system))
        .collect())
}

fn load_network(cfg: &ExperimentConfig, dir: &DirSection, data: &Dataset) -> Result<(NetworkGraph, TrafficMatrix)> {
    let graph = match (&dir.graph, &data.deployment) {
        (Some(path), _) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading graph {}", path.display()))?;
            NetworkGraph::parse(&text).with_context(|| format!("in graph {}", path.display()))?
        }
        (None, Some(dep)) => dep.complete_graph()?,
        (None, None) => bail!(ConfigError::new(
            "dir.graph",
            "a graph file or a deployment is required"
        )),
    };
    if graph.source_count() != cfg.rates.len() {
        bail!(ConfigError::new(
            "dir.graph",
            format!(
                "graph has {} sources but the data has {}",
                graph.source_count(),
                cfg.rates.len()
            ),
        ));
    }
    let traffic = match &dir.traffic {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading traffic {}", path.display()))?;
            TrafficMatrix::parse(&text).with_context(|| format!("in traffic matrix {}", path.display()))?
        }
        None => TrafficMatrix::random_half(graph.source_count(), graph.sink_count(), dir.traffic_seed)?,
    };
    Ok((graph, traffic))
}

fn dir_experiment(cfg: &ExperimentConfig, dir: &DirSection, data: &Dataset) -> Result<Vec<TradeoffPoint>> {
    let (graph, traffic) = load_network(cfg, dir, data)?;
    let problem = DirProblem::new(&graph, traffic, cfg.rates.clone())?;
    let schedule = cfg.anneal.schedule(&data.train);
    let mut points = Vec::new();
    let push = |points: &mut Vec<TradeoffPoint>, o: DirOutcome| {
        let test = o.point.on_split(Split::Test, dir_distortion(&data.test, &o.system));
        points.push(o.point);
        points.push(test);
    };
    for &lambda in &cfg.lambdas {
        let base = DirConfig {
            lambda,
            router_search: dir.router_search,
            restarts: dir.restarts,
            rng_seed: cfg.seed,
            max_sweeps: dir.max_sweeps,
            schedule: Some(schedule),
            ..Default::default()
        };
        let conv = conventional_baseline(&data.train, &data.quantizers, &problem, &base)
            .with_context(|| format!("conventional routing at λ={lambda}"))?;
        push(&mut points, conv);
        if dir.optimizer.greedy() {
            let cfg_g = DirConfig {
                optimizer: Optimizer::Greedy,
                ..base.clone()
            };
            let o = run_dir_design(&data.train, &data.quantizers, &problem, &cfg_g)
                .with_context(|| format!("routed greedy design at λ={lambda}"))?;
            push(&mut points, o);
        }
        if dir.optimizer.da() {
            let cfg_d = DirConfig {
                optimizer: Optimizer::Da,
                ..base.clone()
            };
            let o = run_dir_design(&data.train, &data.quantizers, &problem, &cfg_d)
                .with_context(|| format!("routed annealed design at λ={lambda}"))?;
            push(&mut points, o);
        }
    }
    if dir.broadcast {
        let o = broadcast_baseline(
            &data.train,
            &data.quantizers,
            &problem,
            &DirConfig {
                rng_seed: cfg.seed,
                restarts: dir.restarts,
                max_sweeps: dir.max_sweeps,
                ..Default::default()
            },
        )?;
        push(&mut points, o);
    }
    Ok(points)
}

/// Per-method envelope monotonicity and pairwise dominance on the test
/// split (train when no test rows exist).
pub fn summarize(points: &[TradeoffPoint]) -> String {
    let split = if points.iter().any(|p| p.split == Split::Test) {
        Split::Test
    } else {
        Split::Train
    };
    let mut methods: Vec<&str> = Vec::new();
    for p in points.iter().filter(|p| p.split == split) {
        let family = family(&p.method);
        if !methods.contains(&family) {
            methods.push(family);
        }
    }
    let curve = |m: &str| -> Vec<TradeoffPoint> {
        points
            .iter()
            .filter(|p| p.split == split && family(&p.method) == m)
            .cloned()
            .collect()
    };
    let split_name = match split {
        Split::Train => "train",
        Split::Test => "test",
    };
    let mut s = format!("summary on the {split_name} split\n");
    for m in &methods {
        let c = curve(m);
        let env = lower_envelope(&c);
        let bad = monotonicity_violations(&c);
        let _ = writeln!(
            s,
            "{m}: {} points, {} on the lower envelope, {} off-envelope (non-monotone) points{}",
            c.len(),
            env.len(),
            bad.len(),
            if bad.is_empty() {
                String::new()
            } else {
                format!(" at λ = {:?}", bad.iter().map(|&k| c[k].lambda).collect::<Vec<_>>())
            }
        );
    }
    for a in &methods {
        for b in &methods {
            if a == b {
                continue;
            }
            let (ca, cb) = (curve(a), curve(b));
            let mut best: Option<(f64, f64)> = None;
            let mut wins = 0;
            for p in &cb {
                if let Some(d) = best_within_budget(&ca, p.cost) {
                    let gain = p.distortion_db - to_db(d);
                    if gain > 0.0 {
                        wins += 1;
                    }
                    if best.is_none_or(|(g, _)| gain > g) {
                        best = Some((gain, p.cost));
                    }
                }
            }
            if let Some((gain, cost)) = best {
                let _ = writeln!(
                    s,
                    "{a} vs {b}: lower distortion at {wins}/{} of {b}'s costs, largest gain {gain:.3} dB at cost {cost:.4}",
                    cb.len()
                );
            }
        }
    }
    s
}

/// Grouping points share one curve regardless of the partition.
fn family(method: &str) -> &str {
    if method.starts_with("grouping") {
        "grouping"
    } else {
        method
    }
}
