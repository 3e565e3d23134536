//! Experiment configuration: one TOML file plus command-line overrides.
//!
//! Resolution order: built-in defaults, then the file, then flags. A
//! `preset` names a base simulation design; keys under `[sim]` refine it.
//! Nested tables merge key by key, so a partial table keeps the defaults of
//! the keys it leaves out.
//! The master `seed` is copied into every component seed. Unknown keys are
//! rejected before any work starts.

use std::path::{Path, PathBuf};

use deepchoice::baselines::{RclConfig, StackedGrid};
use deepchoice::causal::{CoverageConfig, CrossfitConfig, RieszConfig};
use deepchoice::deepset::{SetArch, TrainConfig};
use deepchoice::elastic::{BenchmarkConfig, DeepSetSpec, Estimator, PriceShift};
use deepchoice::sim::SimConfig;
use deepchoice::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::autos::SyntheticAutos;
use crate::empirical::EmpiricalConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Simulate,
    Train,
    Benchmark,
    Infer,
    Coverage,
    Empirical,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Train => "train",
            Command::Benchmark => "benchmark",
            Command::Infer => "infer",
            Command::Coverage => "coverage",
            Command::Empirical => "empirical",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub estimators: Vec<Estimator>,
    pub train_ratio: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            estimators: vec![Estimator::DeepSet, Estimator::Mnl],
            train_ratio: 0.8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkSection {
    pub reps: usize,
    pub train_ratio: f64,
    pub estimators: Vec<Estimator>,
    pub elasticity_pct: f64,
    pub new_product: bool,
    /// Grid points of the elasticity-versus-price curve written for
    /// inattention designs.
    pub curve_points: usize,
}

impl Default for BenchmarkSection {
    fn default() -> Self {
        let b = BenchmarkConfig::default();
        Self {
            reps: b.reps,
            train_ratio: b.train_ratio,
            estimators: b.estimators,
            elasticity_pct: b.elasticity_pct,
            new_product: b.new_product,
            curve_points: 40,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferSection {
    pub folds: usize,
    pub shift: PriceShift,
    pub riesz: RieszConfig,
    pub debias: bool,
}

impl Default for InferSection {
    fn default() -> Self {
        let c = CrossfitConfig::default();
        Self {
            folds: c.folds,
            shift: c.shift,
            riesz: c.riesz,
            debias: c.debias,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoverageSection {
    pub sims: usize,
    pub truth_draws: usize,
    pub theta0_markets: usize,
    pub folds: usize,
    pub shift: PriceShift,
    pub deepset: DeepSetSpec,
    pub riesz: RieszConfig,
}

impl Default for CoverageSection {
    fn default() -> Self {
        let c = CoverageConfig::default();
        Self {
            sims: c.sims,
            truth_draws: c.truth_draws,
            theta0_markets: c.theta0_markets,
            folds: c.crossfit.folds,
            shift: c.crossfit.shift,
            deepset: c.crossfit.demand,
            riesz: c.crossfit.riesz,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub command: Option<Command>,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub preset: Option<String>,
    /// Input file: a dataset CSV for train/infer, an auto CSV for empirical.
    pub data: Option<PathBuf>,
    pub sim: SimConfig,
    pub deepset: DeepSetSpec,
    pub rcl: RclConfig,
    pub stacked: StackedGrid,
    pub train: TrainSection,
    pub benchmark: BenchmarkSection,
    pub infer: InferSection,
    pub coverage: CoverageSection,
    pub empirical: EmpiricalConfig,
    pub synthetic: SyntheticAutos,
}

/// Demand network for train, benchmark and infer: one market per Adam step,
/// a short warmup and geometric decay to a tenth of the learning rate.
pub fn benchmark_deepset() -> DeepSetSpec {
    DeepSetSpec {
        arch: SetArch::default(),
        train: TrainConfig {
            epochs: 200,
            batch_markets: Some(1),
            lr_decay: 0.1,
            warmup_epochs: 10,
            ..TrainConfig::default()
        },
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            command: None,
            output_dir: PathBuf::from("out"),
            seed: 0,
            preset: None,
            data: None,
            sim: SimConfig::default(),
            deepset: benchmark_deepset(),
            rcl: RclConfig::default(),
            stacked: StackedGrid::default(),
            train: TrainSection::default(),
            benchmark: BenchmarkSection::default(),
            infer: InferSection::default(),
            coverage: CoverageSection::default(),
            empirical: EmpiricalConfig::default(),
            synthetic: SyntheticAutos::default(),
        }
    }
}

/// One `dotted.key = value` override. Values parse as TOML literals, falling
/// back to a bare string.
pub fn parse_override(s: &str) -> Result<(String, toml::Value)> {
    let (key, raw) = s
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{s}' must look like key=value")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(Error::Config(format!("override '{s}' has an empty key")));
    }
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((key.to_string(), value))
}

/// Sets `key` (dotted path) in `table`, creating intermediate tables.
pub fn set_path(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().expect("split yields at least one part");
    let mut cur = table;
    for p in parts {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("'{p}' in '{key}' is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

pub fn read_table(path: &Path) -> Result<toml::Table> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Expands the preset, deserializes, propagates the master seed and
/// validates.
pub fn resolve(mut table: toml::Table) -> Result<ExperimentConfig> {
    if let Some(name) = table.get("preset") {
        let name = name
            .as_str()
            .ok_or_else(|| Error::Config("preset must be a string".into()))?;
        let base = SimConfig::preset(name)?;
        let mut sim = match toml::Value::try_from(&base) {
            Ok(toml::Value::Table(t)) => t,
            _ => return Err(Error::Config("cannot expand preset".into())),
        };
        if let Some(user) = table.remove("sim") {
            let user = match user {
                toml::Value::Table(t) => t,
                _ => return Err(Error::Config("[sim] must be a table".into())),
            };
            merge(&mut sim, user);
        }
        table.insert("sim".into(), toml::Value::Table(sim));
    }
    // Deep merge over the full defaults so a partial nested table keeps the
    // section's own defaults for the keys it omits.
    let mut full = match toml::Value::try_from(ExperimentConfig::default()) {
        Ok(toml::Value::Table(t)) => t,
        _ => return Err(Error::Config("cannot serialize defaults".into())),
    };
    merge(&mut full, table);
    let mut cfg: ExperimentConfig = toml::Value::Table(full)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    cfg.apply_seed();
    cfg.validate()?;
    Ok(cfg)
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        resolve(toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }

    fn apply_seed(&mut self) {
        let s = self.seed;
        self.sim.seed = s;
        self.deepset.train.seed = s;
        self.rcl.seed = s;
        self.stacked.seed = s;
        self.infer.riesz.seed = s;
        self.coverage.deepset.train.seed = s;
        self.coverage.riesz.seed = s;
        self.empirical.deepset.train.seed = s;
        self.synthetic.seed = s;
        if let deepchoice::causal::FirstStageSpec::Mlp { seed, .. } = &mut self.empirical.first_stage {
            *seed = s;
        }
    }

    /// Every component seed, by name.
    pub fn seeds(&self) -> Vec<(&'static str, u64)> {
        let mut out = vec![
            ("master", self.seed),
            ("sim", self.sim.seed),
            ("deepset", self.deepset.train.seed),
            ("rcl", self.rcl.seed),
            ("stacked", self.stacked.seed),
            ("riesz", self.infer.riesz.seed),
            ("coverage_deepset", self.coverage.deepset.train.seed),
            ("coverage_riesz", self.coverage.riesz.seed),
            ("empirical_deepset", self.empirical.deepset.train.seed),
            ("synthetic", self.synthetic.seed),
        ];
        if let deepchoice::causal::FirstStageSpec::Mlp { seed, .. } = &self.empirical.first_stage {
            out.push(("first_stage", *seed));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.deepset.arch.validate()?;
        self.deepset.train.validate()?;
        self.coverage.deepset.arch.validate()?;
        self.coverage.deepset.train.validate()?;
        self.empirical.deepset.arch.validate()?;
        self.empirical.deepset.train.validate()?;
        self.synthetic.validate()?;
        self.infer.shift.validate()?;
        self.coverage.shift.validate()?;
        for (name, r) in [("train", self.train.train_ratio), ("benchmark", self.benchmark.train_ratio)] {
            if !(r > 0.0 && r < 1.0) {
                return Err(Error::Config(format!("{name}.train_ratio {r} must lie in (0, 1)")));
            }
        }
        if self.benchmark.reps == 0 || self.benchmark.estimators.is_empty() {
            return Err(Error::Config("benchmark needs reps ≥ 1 and at least one estimator".into()));
        }
        if self.train.estimators.is_empty() {
            return Err(Error::Config("train needs at least one estimator".into()));
        }
        if !(self.benchmark.elasticity_pct > 0.0) {
            return Err(Error::Config("benchmark.elasticity_pct must be positive".into()));
        }
        if self.infer.folds < 2 || self.coverage.folds < 2 {
            return Err(Error::Config("cross-fitting needs at least 2 folds".into()));
        }
        if self.coverage.sims == 0 || self.coverage.truth_draws == 0 || self.coverage.theta0_markets == 0 {
            return Err(Error::Config("coverage sims, truth_draws and theta0_markets must be positive".into()));
        }
        if !(self.empirical.delta > 0.0) {
            return Err(Error::Config("empirical.delta must be positive".into()));
        }
        Ok(())
    }

    pub fn benchmark_config(&self) -> BenchmarkConfig {
        BenchmarkConfig {
            sim: self.sim.clone(),
            reps: self.benchmark.reps,
            train_ratio: self.benchmark.train_ratio,
            estimators: self.benchmark.estimators.clone(),
            deepset: self.deepset.clone(),
            rcl: self.rcl.clone(),
            stacked: self.stacked.clone(),
            elasticity_pct: self.benchmark.elasticity_pct,
            new_product: self.benchmark.new_product,
        }
    }

    pub fn crossfit_config(&self) -> CrossfitConfig {
        CrossfitConfig {
            folds: self.infer.folds,
            shift: self.infer.shift,
            demand: self.deepset.clone(),
            riesz: self.infer.riesz.clone(),
            debias: self.infer.debias,
            seed: self.seed,
        }
    }

    pub fn coverage_config(&self) -> CoverageConfig {
        CoverageConfig {
            sim: self.sim.clone(),
            sims: self.coverage.sims,
            crossfit: CrossfitConfig {
                folds: self.coverage.folds,
                shift: self.coverage.shift,
                demand: self.coverage.deepset.clone(),
                riesz: self.coverage.riesz.clone(),
                debias: true,
                seed: self.seed,
            },
            truth_draws: self.coverage.truth_draws,
            theta0_markets: self.coverage.theta0_markets,
            seed: self.seed,
        }
    }
}
