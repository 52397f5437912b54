//! Experiment configuration file (TOML).

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use wzdesign::anneal::AnnealSchedule;
use wzdesign::data::SourceSpec;
use wzdesign::dir::RouterSearch;
use wzdesign::greedy::{SelectorInit, SelectorSearch};
use wzdesign::TrainingSet;

pub const CONFIG_VERSION: u32 = 1;

/// Invalid configuration, naming the offending field.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config field `{}`: {}", self.field, self.message)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerChoice {
    #[default]
    Greedy,
    Da,
    Both,
}

impl OptimizerChoice {
    pub fn greedy(self) -> bool {
        matches!(self, Self::Greedy | Self::Both)
    }

    pub fn da(self) -> bool {
        matches!(self, Self::Da | Self::Both)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GreedySection {
    pub restarts: usize,
    pub max_sweeps: usize,
    pub selector_search: SelectorSearch,
    pub own_bits_mandatory: bool,
    pub selector_init: SelectorInit,
}

impl Default for GreedySection {
    fn default() -> Self {
        Self {
            restarts: 25,
            max_sweeps: 100,
            selector_search: SelectorSearch::Hamming1,
            own_bits_mandatory: true,
            selector_init: SelectorInit::Both,
        }
    }
}

/// Unset fields take the data-driven defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnealSection {
    pub t_init: Option<f64>,
    pub alpha: Option<f64>,
    pub t_min: Option<f64>,
    pub equilibrium_tol: Option<f64>,
    pub max_inner: Option<usize>,
    pub perturbation: Option<f64>,
}

impl AnnealSection {
    pub fn schedule(&self, train: &TrainingSet) -> AnnealSchedule {
        let base = AnnealSchedule::for_data(train);
        let t_init = self.t_init.unwrap_or(base.t_init);
        AnnealSchedule {
            t_init,
            alpha: self.alpha.unwrap_or(base.alpha),
            t_min: self.t_min.unwrap_or(if self.t_init.is_some() {
                1e-4 * t_init
            } else {
                base.t_min
            }),
            equilibrium_tol: self.equilibrium_tol.unwrap_or(base.equilibrium_tol),
            max_inner: self.max_inner.unwrap_or(base.max_inner),
            perturbation: self.perturbation.unwrap_or(base.perturbation),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSection {
    /// Group-size lists for the correlation-grouping baseline. Empty means
    /// one group of all sources and one group per source.
    pub grouping: Vec<Vec<usize>>,
}

/// Random planar deployment with sinks at the corners of a square.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeploymentSection {
    pub sources: usize,
    pub intermediates: usize,
    #[serde(default = "default_side")]
    pub side: f64,
    pub seed: u64,
}

fn default_side() -> f64 {
    100.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DirSection {
    /// Edge list with roles; exclusive with `deployment`.
    pub graph: Option<PathBuf>,
    pub deployment: Option<DeploymentSection>,
    /// Request matrix; when absent every sink requests a random half of
    /// the sources drawn with `traffic_seed`.
    pub traffic: Option<PathBuf>,
    pub traffic_seed: u64,
    pub optimizer: OptimizerChoice,
    pub router_search: RouterSearch,
    pub restarts: usize,
    pub max_sweeps: usize,
    pub broadcast: bool,
}

impl Default for DirSection {
    fn default() -> Self {
        Self {
            graph: None,
            deployment: None,
            traffic: None,
            traffic_seed: 0,
            optimizer: OptimizerChoice::Greedy,
            router_search: RouterSearch::Full,
            restarts: 25,
            max_sweeps: 100,
            broadcast: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    /// Record wall-clock time per point; off gives byte-identical reruns.
    pub wall_time: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { wall_time: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    #[serde(default = "default_name")]
    pub name: String,
    /// Seed of every randomized design step.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    pub source: SourceSpec,
    #[serde(default = "default_fraction")]
    pub train_fraction: f64,
    #[serde(default)]
    pub shuffle_seed: Option<u64>,
    pub rates: Vec<u32>,
    pub regions: Vec<usize>,
    pub lambdas: Vec<f64>,
    #[serde(default)]
    pub optimizer: OptimizerChoice,
    #[serde(default)]
    pub greedy: GreedySection,
    #[serde(default)]
    pub anneal: AnnealSection,
    #[serde(default)]
    pub baselines: BaselineSection,
    #[serde(default)]
    pub dir: Option<DirSection>,
    #[serde(default)]
    pub output: OutputSection,
}

fn default_name() -> String {
    "experiment".to_string()
}

fn default_out() -> PathBuf {
    PathBuf::from("results")
}

fn default_fraction() -> f64 {
    0.5
}

impl ExperimentConfig {
    /// Parse and validate; relative paths are resolved against `base`.
    pub fn from_toml(text: &str, base: &Path) -> anyhow::Result<Self> {
        let mut cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let SourceSpec::Csv { path, .. } = &mut self.source {
            fix(path);
        }
        if let Some(dir) = &mut self.dir {
            dir.graph.as_mut().map(fix);
            dir.traffic.as_mut().map(fix);
        }
    }

    /// Number of sources implied by the source description, when known.
    pub fn source_count(&self) -> usize {
        if let Some(d) = self.dir.as_ref().and_then(|d| d.deployment.as_ref()) {
            if matches!(&self.source, SourceSpec::GaussianField { positions, .. } if positions.is_empty()) {
                return d.sources;
            }
        }
        self.source.sources().unwrap_or(self.rates.len())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.version != CONFIG_VERSION {
            return Err(ConfigError::new(
                "version",
                format!("unsupported version {} (expected {CONFIG_VERSION})", self.version),
            ));
        }
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(ConfigError::new("name", "must be a nonempty file stem"));
        }
        if self.lambdas.is_empty() {
            return Err(ConfigError::new("lambdas", "the λ grid must be nonempty"));
        }
        for (k, l) in self.lambdas.iter().enumerate() {
            if !(l.is_finite() && *l >= 0.0) {
                return Err(ConfigError::new(
                    format!("lambdas[{k}]"),
                    format!("{l} is not a finite nonnegative value"),
                ));
            }
        }
        if self.lambdas.windows(2).any(|w| w[1] <= w[0]) {
            return Err(ConfigError::new("lambdas", "must be strictly increasing"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(ConfigError::new("train_fraction", "must lie strictly between 0 and 1"));
        }
        let n = self.source_count();
        if self.rates.len() != n {
            return Err(ConfigError::new(
                "rates",
                format!("expected {n} entries, found {}", self.rates.len()),
            ));
        }
        if let Some(k) = self.rates.iter().position(|&r| r == 0) {
            return Err(ConfigError::new(format!("rates[{k}]"), "must be at least 1"));
        }
        if self.rates.iter().sum::<u32>() > 64 {
            return Err(ConfigError::new("rates", "at most 64 bits in total"));
        }
        if self.regions.len() != n {
            return Err(ConfigError::new(
                "regions",
                format!("expected {n} entries, found {}", self.regions.len()),
            ));
        }
        if let Some(k) = self.regions.iter().position(|&r| r < 2) {
            return Err(ConfigError::new(format!("regions[{k}]"), "must be at least 2"));
        }
        if self.regions.iter().any(|&r| r > u16::MAX as usize) {
            return Err(ConfigError::new("regions", "at most 65535 regions per source"));
        }
        if self.greedy.restarts == 0 {
            return Err(ConfigError::new("greedy.restarts", "must be at least 1"));
        }
        if self.optimizer.da() && self.greedy.selector_search == SelectorSearch::Full {
            return Err(ConfigError::new(
                "greedy.selector_search",
                "annealing supports hamming1 or fixed selector search",
            ));
        }
        self.validate_anneal()?;
        for (k, sizes) in self.baselines.grouping.iter().enumerate() {
            if sizes.iter().sum::<usize>() != n || sizes.contains(&0) {
                return Err(ConfigError::new(
                    format!("baselines.grouping[{k}]"),
                    format!("group sizes must be positive and sum to {n}"),
                ));
            }
        }
        if let Some(dir) = &self.dir {
            self.validate_dir(dir, n)?;
        }
        Ok(())
    }

    fn validate_anneal(&self) -> Result<(), ConfigError> {
        let a = &self.anneal;
        let positive = |name: &str, v: Option<f64>| match v {
            Some(x) if !(x.is_finite() && x > 0.0) => {
                Err(ConfigError::new(format!("anneal.{name}"), "must be positive"))
            }
            _ => Ok(()),
        };
        positive("t_init", a.t_init)?;
        positive("t_min", a.t_min)?;
        positive("equilibrium_tol", a.equilibrium_tol)?;
        if let Some(alpha) = a.alpha {
            if !(alpha > 0.0 && alpha < 1.0) {
                return Err(ConfigError::new("anneal.alpha", "must lie strictly between 0 and 1"));
            }
        }
        if let (Some(hi), Some(lo)) = (a.t_init, a.t_min) {
            if lo >= hi {
                return Err(ConfigError::new("anneal.t_min", "must be below anneal.t_init"));
            }
        }
        if a.max_inner == Some(0) {
            return Err(ConfigError::new("anneal.max_inner", "must be at least 1"));
        }
        if let Some(p) = a.perturbation {
            if !(0.0..1.0).contains(&p) {
                return Err(ConfigError::new("anneal.perturbation", "must lie in [0, 1)"));
            }
        }
        Ok(())
    }

    fn validate_dir(&self, dir: &DirSection, n: usize) -> Result<(), ConfigError> {
        match (&dir.graph, &dir.deployment) {
            (Some(_), Some(_)) => {
                return Err(ConfigError::new(
                    "dir.graph",
                    "give either dir.graph or dir.deployment, not both",
                ));
            }
            (None, None) => {
                return Err(ConfigError::new(
                    "dir.graph",
                    "a graph file or a deployment is required",
                ))
            }
            (None, Some(d)) => {
                if d.sources != n {
                    return Err(ConfigError::new(
                        "dir.deployment.sources",
                        format!("deployment has {} sources but the data has {n}", d.sources),
                    ));
                }
                if !(d.side.is_finite() && d.side > 0.0) {
                    return Err(ConfigError::new("dir.deployment.side", "must be positive"));
                }
                match &self.source {
                    SourceSpec::GaussianField { positions, .. } if positions.is_empty() => {}
                    _ => {
                        return Err(ConfigError::new(
                            "source",
                            "a deployment places the sensors; use kind = \"gaussian_field\" with positions = []",
                        ));
                    }
                }
            }
            (Some(_), None) => {}
        }
        if dir.restarts == 0 {
            return Err(ConfigError::new("dir.restarts", "must be at least 1"));
        }
        if dir.optimizer.da() && self.greedy.selector_search == SelectorSearch::Full {
            return Err(ConfigError::new(
                "greedy.selector_search",
                "annealing supports hamming1 or fixed selector search",
            ));
        }
        Ok(())
    }
}
