use nalgebra::DVector;
use rayon::prelude::*;

use super::{
    csv_writer, fmt_opt, mean_std, prepare_output_dir, write_metadata, Algorithm, AlgorithmSummary,
    ExperimentConfig, ExperimentKind, InventorySettings, MetricsSummary, SeedSummary,
};
use crate::error::{Error, Result};
use crate::features::sample_features;
use crate::inventory::build_inventory_mdp;
use crate::mdp::{greedy_policy, QTable, TabularMdp};
use crate::model_based::{
    ampiq_run, find_feasible_initial_theta_with, rpi_run_with, trpo_run, RunTrace,
};

/// Lower-bound violations smaller than this count as holding.
const HOLDING_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct InventoryRow {
    pub seed: u64,
    pub algorithm: Algorithm,
    pub k: usize,
    pub mean_estimated_value: f64,
    pub mean_true_value: f64,
    pub bellman_residual: f64,
    /// `min (f_k − f_{k−1})`, `+∞` at `k = 0`.
    pub min_monotonicity_slack: f64,
    pub min_lowerbound_slack: f64,
}

/// Runs every requested algorithm on one seed's feature draw. All algorithms
/// share the feasible start `θ_0`; a seed without one fails with
/// `NoFeasibleStart` for all of them.
pub fn run_inventory_seed(
    settings: &InventorySettings,
    algorithms: &[Algorithm],
    seed: u64,
) -> Result<(TabularMdp, Vec<(Algorithm, RunTrace)>)> {
    let mdp = build_inventory_mdp(&settings.env)?;
    let phi = sample_features(
        mdp.n_states(),
        mdp.n_actions(),
        settings.feature_dim,
        settings.feature_low,
        settings.feature_high,
        seed,
    )?;
    let numeric = &settings.rpi.numeric;
    let zero_greedy = greedy_policy(&QTable::zeros(mdp.n_pairs()), &mdp)?;
    let theta0 = find_feasible_initial_theta_with(&mdp, &phi, &zero_greedy, numeric)?;
    let weights = QTable::from_vec(vec![1.0; mdp.n_pairs()]);
    let initial = DVector::from_element(mdp.n_states(), 1.0 / mdp.n_states() as f64);

    let mut traces = Vec::with_capacity(algorithms.len());
    for &algorithm in algorithms {
        let mut trace = match algorithm {
            Algorithm::Rpi => rpi_run_with(&mdp, &phi, settings.iterations, &weights, numeric)?,
            Algorithm::AmpiQ => {
                ampiq_run(&mdp, &phi, &theta0, settings.ampi_q.m, settings.iterations)?
            }
            Algorithm::Trpo => trpo_run(
                &mdp,
                &phi,
                &theta0,
                settings.trpo.delta,
                settings.iterations,
                &initial,
            )?,
            other => {
                return Err(Error::Config(format!(
                    "{} is not a model-based algorithm",
                    other.label()
                )))
            }
        };
        trace.metadata = trace.metadata.clone().with("feature_seed", seed);
        traces.push((algorithm, trace));
    }
    Ok((mdp, traces))
}

pub fn inventory_rows(
    mdp: &TabularMdp,
    seed: u64,
    algorithm: Algorithm,
    trace: &RunTrace,
) -> Vec<InventoryRow> {
    trace
        .records
        .iter()
        .enumerate()
        .map(|(k, record)| InventoryRow {
            seed,
            algorithm,
            k,
            mean_estimated_value: record.mean_estimate(mdp),
            mean_true_value: record.mean_true_value(mdp),
            bellman_residual: record.bellman_residual,
            min_monotonicity_slack: trace.monotonicity_slack(k),
            min_lowerbound_slack: record.lower_bound_slack(),
        })
        .collect()
}

type SeedOutcome = std::result::Result<Vec<(Algorithm, Vec<InventoryRow>)>, Error>;

/// Runs all seeds in parallel and writes `inventory_iterations.csv`,
/// `inventory_seeds.csv`, `inventory_summary.csv`, `inventory_excluded.csv`
/// and `inventory_metadata.toml` under the output directory.
pub fn run_inventory_experiment(config: &ExperimentConfig) -> Result<MetricsSummary> {
    config.validate()?;
    if config.kind != ExperimentKind::InventoryModelBased {
        return Err(Error::Config("not an inventory experiment".into()));
    }
    let outcomes: Vec<(u64, SeedOutcome)> = config
        .seeds
        .par_iter()
        .map(|&seed| {
            let outcome = run_inventory_seed(&config.inventory, &config.algorithms, seed).map(
                |(mdp, traces)| {
                    traces
                        .iter()
                        .map(|(algorithm, trace)| {
                            (*algorithm, inventory_rows(&mdp, seed, *algorithm, trace))
                        })
                        .collect()
                },
            );
            (seed, outcome)
        })
        .collect();

    let mut per_seed = Vec::new();
    let mut excluded = Vec::new();
    for (seed, outcome) in outcomes {
        match outcome {
            Ok(rows) => per_seed.push((seed, rows)),
            Err(Error::NoFeasibleStart { t }) => {
                log::warn!(
                    "seed {seed}: no feasible start (t = {t:e}); excluded from all aggregates"
                );
                excluded.push((seed, format!("no feasible start (t = {t:e})")));
            }
            Err(other) => return Err(other),
        }
    }

    let dir = &config.output_dir;
    prepare_output_dir(dir)?;
    let iterations_path = dir.join("inventory_iterations.csv");
    let mut writer = csv_writer(&iterations_path)?;
    writer.write_record([
        "seed",
        "algo",
        "k",
        "mean_estimated_value",
        "mean_true_value",
        "bellman_residual",
        "min_monotonicity_slack",
        "min_lowerbound_slack",
    ])?;
    for (_, algorithms) in &per_seed {
        for (_, rows) in algorithms {
            for row in rows {
                writer.write_record([
                    row.seed.to_string(),
                    row.algorithm.label().to_string(),
                    row.k.to_string(),
                    row.mean_estimated_value.to_string(),
                    row.mean_true_value.to_string(),
                    row.bellman_residual.to_string(),
                    row.min_monotonicity_slack.to_string(),
                    row.min_lowerbound_slack.to_string(),
                ])?;
            }
        }
    }
    writer.flush()?;

    let mut seeds = Vec::new();
    for (seed, algorithms) in &per_seed {
        for (algorithm, rows) in algorithms {
            let holding = rows
                .iter()
                .filter(|r| r.min_lowerbound_slack >= -HOLDING_TOL)
                .count() as f64;
            seeds.push(SeedSummary {
                seed: *seed,
                algorithm: *algorithm,
                value: rows.last().map(|r| r.mean_true_value),
                holding: 100.0 * holding / rows.len() as f64,
            });
        }
    }
    let seeds_path = dir.join("inventory_seeds.csv");
    let mut writer = csv_writer(&seeds_path)?;
    writer.write_record([
        "seed",
        "algo",
        "terminal_true_value",
        "lower_bound_holding_pct",
    ])?;
    for s in &seeds {
        writer.write_record([
            s.seed.to_string(),
            s.algorithm.label().to_string(),
            fmt_opt(s.value),
            s.holding.to_string(),
        ])?;
    }
    writer.flush()?;

    let algorithms = aggregate(&config.algorithms, &seeds);
    let summary_path = dir.join("inventory_summary.csv");
    let mut writer = csv_writer(&summary_path)?;
    writer.write_record([
        "algo",
        "n_seeds",
        "terminal_true_value_mean",
        "terminal_true_value_std",
        "lower_bound_holding_mean",
        "lower_bound_holding_std",
        "excluded_seeds",
    ])?;
    for a in &algorithms {
        writer.write_record([
            a.algorithm.label().to_string(),
            a.n_seeds.to_string(),
            fmt_opt(a.value.map(|v| v.0)),
            fmt_opt(a.value.map(|v| v.1)),
            a.holding.0.to_string(),
            a.holding.1.to_string(),
            excluded.len().to_string(),
        ])?;
    }
    writer.flush()?;

    let excluded_path = dir.join("inventory_excluded.csv");
    let mut writer = csv_writer(&excluded_path)?;
    writer.write_record(["seed", "reason"])?;
    for (seed, reason) in &excluded {
        writer.write_record([seed.to_string(), reason.clone()])?;
    }
    writer.flush()?;

    let metadata_path = dir.join("inventory_metadata.toml");
    write_metadata(
        config,
        &[
            (
                "initial policy",
                "greedy on the zero estimate, then greedy on the feasible start".into(),
            ),
            (
                "mean values",
                "uniform over states, actions drawn from the iterate's policy".into(),
            ),
            ("TRPO initial policy", "uniform over actions".into()),
            (
                "lower-bound holding",
                format!("fraction of iterates with min(Q - f) >= -{HOLDING_TOL:e}"),
            ),
        ],
        &metadata_path,
    )?;

    Ok(MetricsSummary {
        kind: ExperimentKind::InventoryModelBased,
        algorithms,
        seeds,
        excluded,
        files: vec![
            iterations_path,
            seeds_path,
            summary_path,
            excluded_path,
            metadata_path,
        ],
    })
}

fn aggregate(order: &[Algorithm], seeds: &[SeedSummary]) -> Vec<AlgorithmSummary> {
    order
        .iter()
        .map(|&algorithm| {
            let rows: Vec<&SeedSummary> =
                seeds.iter().filter(|s| s.algorithm == algorithm).collect();
            let values: Vec<f64> = rows.iter().filter_map(|s| s.value).collect();
            let holding: Vec<f64> = rows.iter().map(|s| s.holding).collect();
            AlgorithmSummary {
                algorithm,
                n_seeds: rows.len(),
                value: mean_std(&values),
                solved_seeds: None,
                holding: mean_std(&holding).unwrap_or((0.0, 0.0)),
            }
        })
        .collect()
}
