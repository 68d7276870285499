//! Experiment orchestration: configuration, seed fan-out, metrics, CSV
//! output, plots and the invariant report.

mod cartpole;
mod invariants;
mod inventory;
mod plots;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use cartpole::{
    checkpoint_rows, lower_bound_holding, run_cartpole_experiment, run_cartpole_seed,
    timesteps_to_solve, CheckpointRow,
};
pub use invariants::{run_invariant_suite, InvariantLine, InvariantReport};
pub use inventory::{inventory_rows, run_inventory_experiment, run_inventory_seed, InventoryRow};
pub use plots::emit_plots;

use crate::error::{Error, Result};
use crate::inventory::InventoryParams;
use crate::model_free::{CriticLoss, DqnConfig};
use crate::numerics::NumericPolicy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    InventoryModelBased,
    CartpoleModelFree,
    InvariantSuite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "RPI")]
    Rpi,
    #[serde(rename = "AMPI-Q")]
    AmpiQ,
    #[serde(rename = "TRPO")]
    Trpo,
    #[serde(rename = "DQN")]
    Dqn,
    #[serde(rename = "RPI_DQN")]
    RpiDqn,
}

impl Algorithm {
    pub fn label(&self) -> &'static str {
        match self {
            Algorithm::Rpi => "RPI",
            Algorithm::AmpiQ => "AMPI-Q",
            Algorithm::Trpo => "TRPO",
            Algorithm::Dqn => "DQN",
            Algorithm::RpiDqn => "RPI_DQN",
        }
    }

    fn is_model_based(&self) -> bool {
        matches!(self, Algorithm::Rpi | Algorithm::AmpiQ | Algorithm::Trpo)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RpiSettings {
    pub numeric: NumericPolicy,
}

impl Default for RpiSettings {
    fn default() -> Self {
        Self {
            numeric: NumericPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AmpiSettings {
    pub m: usize,
}

impl Default for AmpiSettings {
    fn default() -> Self {
        Self { m: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrpoSettings {
    pub delta: f64,
}

impl Default for TrpoSettings {
    fn default() -> Self {
        Self { delta: 2.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InventorySettings {
    pub env: InventoryParams,
    pub feature_dim: usize,
    pub feature_low: f64,
    pub feature_high: f64,
    pub iterations: usize,
    pub rpi: RpiSettings,
    pub ampi_q: AmpiSettings,
    pub trpo: TrpoSettings,
}

impl Default for InventorySettings {
    fn default() -> Self {
        Self {
            env: InventoryParams::benchmark(),
            feature_dim: 50,
            feature_low: 1.0,
            feature_high: 5.0,
            iterations: 50,
            rpi: RpiSettings::default(),
            ampi_q: AmpiSettings::default(),
            trpo: TrpoSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CartpoleSettings {
    /// Slack `τ` on the Monte-Carlo lower-bound check.
    pub lower_bound_slack: f64,
    /// Undiscounted evaluation return that counts as solved.
    pub solve_threshold: f64,
    pub dqn: DqnConfig,
    pub rpi_dqn: DqnConfig,
}

impl Default for CartpoleSettings {
    fn default() -> Self {
        Self {
            lower_bound_slack: 0.5,
            solve_threshold: 475.0,
            dqn: DqnConfig::default(),
            rpi_dqn: DqnConfig {
                loss: CriticLoss::Rpi,
                ..DqnConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InvariantSettings {
    pub master_seed: u64,
    /// Random tabular instances per randomized check.
    pub instances: usize,
    /// RPI iterations on the inventory instance.
    pub inventory_iterations: usize,
    pub numeric: NumericPolicy,
}

impl Default for InvariantSettings {
    fn default() -> Self {
        Self {
            master_seed: 20_240_501,
            instances: 5,
            inventory_iterations: 10,
            numeric: NumericPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub algorithms: Vec<Algorithm>,
    pub inventory: InventorySettings,
    pub cartpole: CartpoleSettings,
    pub invariants: InvariantSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::default_for(ExperimentKind::InventoryModelBased)
    }
}

impl ExperimentConfig {
    /// Desk-scale defaults: 20 inventory seeds, 5 cart-pole seeds.
    pub fn default_for(kind: ExperimentKind) -> Self {
        let (seeds, algorithms, dir) = match kind {
            ExperimentKind::InventoryModelBased => (
                (0..20).collect(),
                vec![Algorithm::Rpi, Algorithm::AmpiQ, Algorithm::Trpo],
                "out/inventory",
            ),
            ExperimentKind::CartpoleModelFree => (
                (0..5).collect(),
                vec![Algorithm::Dqn, Algorithm::RpiDqn],
                "out/cartpole",
            ),
            ExperimentKind::InvariantSuite => (vec![0], Vec::new(), "out/invariants"),
        };
        Self {
            kind,
            seeds,
            output_dir: PathBuf::from(dir),
            algorithms,
            inventory: InventorySettings::default(),
            cartpole: CartpoleSettings::default(),
            invariants: InvariantSettings::default(),
        }
    }

    /// 500 inventory seeds or 25 cart-pole seeds with 100 evaluation episodes.
    pub fn apply_full_scale(&mut self) {
        match self.kind {
            ExperimentKind::InventoryModelBased => self.seeds = (0..500).collect(),
            ExperimentKind::CartpoleModelFree => {
                self.seeds = (0..25).collect();
                self.cartpole.dqn.n_eval = 100;
                self.cartpole.rpi_dqn.n_eval = 100;
            }
            ExperimentKind::InvariantSuite => {}
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::from_toml_str_for(text, None)
    }

    /// Parses a possibly partial file over the defaults of its kind. The
    /// kind comes from the file or from `expected`; both given and different
    /// is a configuration error.
    pub fn from_toml_str_for(text: &str, expected: Option<ExperimentKind>) -> Result<Self> {
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let declared = match table.get("kind") {
            Some(value) => Some(
                ExperimentKind::deserialize(value.clone())
                    .map_err(|e| Error::Config(format!("kind: {e}")))?,
            ),
            None => None,
        };
        let kind = match (declared, expected) {
            (Some(d), Some(e)) if d != e => {
                return Err(Error::Config(format!(
                    "config declares kind {d:?} but {e:?} was requested"
                )))
            }
            (Some(k), _) | (None, Some(k)) => k,
            (None, None) => return Err(Error::Config("config does not declare a kind".into())),
        };
        table.remove("kind");
        let defaults = toml::Table::try_from(Self::default_for(kind))
            .map_err(|e| Error::Config(e.to_string()))?;
        let mut merged = defaults;
        merge_tables(&mut merged, table);
        let config = Self::deserialize(toml::Value::Table(merged))
            .map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::load_for(path, None)
    }

    pub fn load_for(path: &Path, expected: Option<ExperimentKind>) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str_for(&text, expected)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seed list is empty".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(Error::Config("seed list has duplicates".into()));
        }
        let mut algorithms = self.algorithms.clone();
        algorithms.sort();
        algorithms.dedup();
        if algorithms.len() != self.algorithms.len() {
            return Err(Error::Config("algorithm list has duplicates".into()));
        }
        match self.kind {
            ExperimentKind::InventoryModelBased => {
                if self.algorithms.is_empty() || self.algorithms.iter().any(|a| !a.is_model_based())
                {
                    return Err(Error::Config(
                        "inventory experiments run a non-empty subset of RPI, AMPI-Q, TRPO".into(),
                    ));
                }
                let inv = &self.inventory;
                inv.env
                    .validate()
                    .map_err(|e| Error::Config(e.to_string()))?;
                if inv.feature_dim == 0
                    || inv.iterations == 0
                    || !(inv.feature_low < inv.feature_high)
                {
                    return Err(Error::Config(
                        "inventory needs feature_dim ≥ 1, iterations ≥ 1 and feature_low < feature_high".into(),
                    ));
                }
                if inv.ampi_q.m == 0 || !(inv.trpo.delta > 0.0) {
                    return Err(Error::Config(
                        "AMPI-Q needs m ≥ 1 and TRPO needs delta > 0".into(),
                    ));
                }
            }
            ExperimentKind::CartpoleModelFree => {
                if self.algorithms.is_empty() || self.algorithms.iter().any(|a| a.is_model_based())
                {
                    return Err(Error::Config(
                        "cart-pole experiments run a non-empty subset of DQN, RPI_DQN".into(),
                    ));
                }
                self.dqn_config(Algorithm::Dqn).validate()?;
                self.dqn_config(Algorithm::RpiDqn).validate()?;
                if !(self.cartpole.lower_bound_slack >= 0.0)
                    || !self.cartpole.solve_threshold.is_finite()
                {
                    return Err(Error::Config(
                        "invalid lower_bound_slack or solve_threshold".into(),
                    ));
                }
            }
            ExperimentKind::InvariantSuite => {
                if self.invariants.instances == 0 || self.invariants.inventory_iterations == 0 {
                    return Err(Error::Config(
                        "invariant suite needs instances ≥ 1 and iterations ≥ 1".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// The per-algorithm table with its loss pinned to the algorithm.
    pub fn dqn_config(&self, algorithm: Algorithm) -> DqnConfig {
        match algorithm {
            Algorithm::RpiDqn => DqnConfig {
                loss: CriticLoss::Rpi,
                ..self.cartpole.rpi_dqn.clone()
            },
            _ => DqnConfig {
                loss: CriticLoss::Msbe,
                ..self.cartpole.dqn.clone()
            },
        }
    }
}

/// Overlays `overlay` on `base`, recursing into nested tables.
fn merge_tables(base: &mut toml::Table, overlay: toml::Table) {
    for (key, value) in overlay {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(inner)), toml::Value::Table(over)) => {
                merge_tables(inner, over)
            }
            (_, value) => {
                base.insert(key, value);
            }
        }
    }
}

/// Parses `0,3,7`, `0..20` (half-open) or a mix such as `0..3,10`.
pub fn parse_seed_list(text: &str) -> Result<Vec<u64>> {
    let mut seeds = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let parse = |s: &str| {
            s.trim()
                .parse::<u64>()
                .map_err(|_| Error::Config(format!("invalid seed `{s}`")))
        };
        if let Some((lo, hi)) = part.split_once("..") {
            let (lo, hi) = (parse(lo)?, parse(hi)?);
            if lo >= hi {
                return Err(Error::Config(format!("empty seed range `{part}`")));
            }
            seeds.extend(lo..hi);
        } else {
            seeds.push(parse(part)?);
        }
    }
    if seeds.is_empty() {
        return Err(Error::Config("seed list is empty".into()));
    }
    Ok(seeds)
}

/// Mean and sample standard deviation (`0` for a single value).
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Some((mean, std))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlgorithmSummary {
    pub algorithm: Algorithm,
    pub n_seeds: usize,
    /// Terminal true value (inventory) or timesteps to solve over solved seeds (cart-pole).
    pub value: Option<(f64, f64)>,
    /// Seeds that reached the solve threshold (cart-pole only).
    pub solved_seeds: Option<usize>,
    pub holding: (f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedSummary {
    pub seed: u64,
    pub algorithm: Algorithm,
    /// Terminal true value, or timesteps to solve (`None` when unsolved).
    pub value: Option<f64>,
    pub holding: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsSummary {
    pub kind: ExperimentKind,
    pub algorithms: Vec<AlgorithmSummary>,
    pub seeds: Vec<SeedSummary>,
    /// Seeds left out of every aggregate, with the reason.
    pub excluded: Vec<(u64, String)>,
    pub files: Vec<PathBuf>,
}

impl MetricsSummary {
    pub fn algorithm(&self, algorithm: Algorithm) -> Option<&AlgorithmSummary> {
        self.algorithms.iter().find(|a| a.algorithm == algorithm)
    }

    pub fn seed_rows(&self, algorithm: Algorithm) -> impl Iterator<Item = &SeedSummary> {
        self.seeds.iter().filter(move |s| s.algorithm == algorithm)
    }
}

fn fmt_opt(value: Option<f64>) -> String {
    value.map(|v| v.to_string()).unwrap_or_default()
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)?)
}

fn prepare_output_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn write_metadata(config: &ExperimentConfig, notes: &[(&str, String)], path: &Path) -> Result<()> {
    let mut text = String::new();
    for (key, value) in notes {
        text.push_str(&format!("# {key}: {value}\n"));
    }
    text.push_str(&config.to_toml_string()?);
    fs::write(path, text)?;
    Ok(())
}
