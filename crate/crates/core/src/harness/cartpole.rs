use rayon::prelude::*;

use super::{
    csv_writer, fmt_opt, mean_std, prepare_output_dir, write_metadata, Algorithm, AlgorithmSummary,
    ExperimentConfig, ExperimentKind, MetricsSummary, SeedSummary,
};
use crate::error::{Error, Result};
use crate::model_free::{dqn_train, EvalCheckpoint, ModelFreeTrace};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointRow {
    pub seed: u64,
    pub algorithm: Algorithm,
    pub checkpoint: EvalCheckpoint,
    pub lower_bound_ok: bool,
}

/// Percentage of checkpoints whose critic start estimate stays below the
/// discounted Monte-Carlo return plus `slack`.
pub fn lower_bound_holding(checkpoints: &[EvalCheckpoint], slack: f64) -> Result<f64> {
    if checkpoints.is_empty() {
        return Err(Error::InvalidArgument(
            "lower-bound holding needs at least one checkpoint".into(),
        ));
    }
    let holding = checkpoints
        .iter()
        .filter(|c| c.mean_critic_start_estimate <= c.mean_discounted_return + slack)
        .count();
    Ok(100.0 * holding as f64 / checkpoints.len() as f64)
}

/// First checkpoint step whose undiscounted return reaches `threshold`.
pub fn timesteps_to_solve(checkpoints: &[EvalCheckpoint], threshold: f64) -> Option<usize> {
    checkpoints
        .iter()
        .find(|c| c.mean_undiscounted_return >= threshold)
        .map(|c| c.env_step)
}

pub fn checkpoint_rows(
    seed: u64,
    algorithm: Algorithm,
    trace: &ModelFreeTrace,
    slack: f64,
) -> Vec<CheckpointRow> {
    trace
        .checkpoints
        .iter()
        .map(|&checkpoint| CheckpointRow {
            seed,
            algorithm,
            checkpoint,
            lower_bound_ok: checkpoint.mean_critic_start_estimate
                <= checkpoint.mean_discounted_return + slack,
        })
        .collect()
}

pub fn run_cartpole_seed(
    config: &ExperimentConfig,
    algorithm: Algorithm,
    seed: u64,
) -> Result<ModelFreeTrace> {
    dqn_train(&config.dqn_config(algorithm), seed)
}

/// Trains every (seed, algorithm) pair in parallel and writes
/// `cartpole_checkpoints.csv`, `cartpole_seeds.csv`, `cartpole_summary.csv`
/// and `cartpole_metadata.toml`.
pub fn run_cartpole_experiment(config: &ExperimentConfig) -> Result<MetricsSummary> {
    config.validate()?;
    if config.kind != ExperimentKind::CartpoleModelFree {
        return Err(Error::Config("not a cart-pole experiment".into()));
    }
    let jobs: Vec<(u64, Algorithm)> = config
        .seeds
        .iter()
        .flat_map(|&seed| config.algorithms.iter().map(move |&a| (seed, a)))
        .collect();
    let traces: Vec<(u64, Algorithm, ModelFreeTrace)> = jobs
        .par_iter()
        .map(|&(seed, algorithm)| {
            run_cartpole_seed(config, algorithm, seed).map(|t| (seed, algorithm, t))
        })
        .collect::<Result<_>>()?;

    let slack = config.cartpole.lower_bound_slack;
    let threshold = config.cartpole.solve_threshold;
    let dir = &config.output_dir;
    prepare_output_dir(dir)?;

    let checkpoints_path = dir.join("cartpole_checkpoints.csv");
    let mut writer = csv_writer(&checkpoints_path)?;
    writer.write_record([
        "seed",
        "algo",
        "env_step",
        "mean_discounted_return",
        "mean_undiscounted_return",
        "mean_critic_start_estimate",
        "lower_bound_ok",
    ])?;
    let mut seeds = Vec::new();
    for (seed, algorithm, trace) in &traces {
        for row in checkpoint_rows(*seed, *algorithm, trace, slack) {
            let c = row.checkpoint;
            writer.write_record([
                row.seed.to_string(),
                row.algorithm.label().to_string(),
                c.env_step.to_string(),
                c.mean_discounted_return.to_string(),
                c.mean_undiscounted_return.to_string(),
                c.mean_critic_start_estimate.to_string(),
                row.lower_bound_ok.to_string(),
            ])?;
        }
        let holding = if trace.checkpoints.is_empty() {
            0.0
        } else {
            lower_bound_holding(&trace.checkpoints, slack)?
        };
        seeds.push(SeedSummary {
            seed: *seed,
            algorithm: *algorithm,
            value: timesteps_to_solve(&trace.checkpoints, threshold).map(|s| s as f64),
            holding,
        });
    }
    writer.flush()?;

    let seeds_path = dir.join("cartpole_seeds.csv");
    let mut writer = csv_writer(&seeds_path)?;
    writer.write_record([
        "seed",
        "algo",
        "timesteps_to_solve",
        "lower_bound_holding_pct",
    ])?;
    for s in &seeds {
        let solve = s
            .value
            .map(|v| v.to_string())
            .unwrap_or_else(|| "not-solved".into());
        writer.write_record([
            s.seed.to_string(),
            s.algorithm.label().to_string(),
            solve,
            s.holding.to_string(),
        ])?;
    }
    writer.flush()?;

    let algorithms: Vec<AlgorithmSummary> = config
        .algorithms
        .iter()
        .map(|&algorithm| {
            let rows: Vec<&SeedSummary> =
                seeds.iter().filter(|s| s.algorithm == algorithm).collect();
            let solved: Vec<f64> = rows.iter().filter_map(|s| s.value).collect();
            let holding: Vec<f64> = rows.iter().map(|s| s.holding).collect();
            AlgorithmSummary {
                algorithm,
                n_seeds: rows.len(),
                value: mean_std(&solved),
                solved_seeds: Some(solved.len()),
                holding: mean_std(&holding).unwrap_or((0.0, 0.0)),
            }
        })
        .collect();
    let summary_path = dir.join("cartpole_summary.csv");
    let mut writer = csv_writer(&summary_path)?;
    writer.write_record([
        "algo",
        "n_seeds",
        "solved_seeds",
        "timesteps_to_solve_mean",
        "timesteps_to_solve_std",
        "lower_bound_holding_mean",
        "lower_bound_holding_std",
    ])?;
    for a in &algorithms {
        writer.write_record([
            a.algorithm.label().to_string(),
            a.n_seeds.to_string(),
            a.solved_seeds.unwrap_or(0).to_string(),
            fmt_opt(a.value.map(|v| v.0)),
            fmt_opt(a.value.map(|v| v.1)),
            a.holding.0.to_string(),
            a.holding.1.to_string(),
        ])?;
    }
    writer.flush()?;

    let metadata_path = dir.join("cartpole_metadata.toml");
    write_metadata(
        config,
        &[
            (
                "timesteps to solve",
                format!("first checkpoint with mean undiscounted return >= {threshold}; unsolved seeds excluded from the mean and counted in solved_seeds"),
            ),
            ("lower-bound check", format!("critic start estimate <= discounted return + {slack}")),
            ("truncation", "truncated episodes bootstrap; only termination zeroes the target".into()),
        ],
        &metadata_path,
    )?;

    Ok(MetricsSummary {
        kind: ExperimentKind::CartpoleModelFree,
        algorithms,
        seeds,
        excluded: Vec::new(),
        files: vec![checkpoints_path, seeds_path, summary_path, metadata_path],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn checkpoint(
        step: usize,
        undiscounted: f64,
        discounted: f64,
        estimate: f64,
    ) -> EvalCheckpoint {
        EvalCheckpoint {
            env_step: step,
            mean_discounted_return: discounted,
            mean_undiscounted_return: undiscounted,
            mean_critic_start_estimate: estimate,
        }
    }

    #[test]
    fn holding_percentages() {
        let low: Vec<_> = (1..=4)
            .map(|i| checkpoint(i * 1000, 100.0, 60.0, 1.0))
            .collect();
        assert_eq!(lower_bound_holding(&low, 0.5).unwrap(), 100.0);
        let high: Vec<_> = (1..=4)
            .map(|i| checkpoint(i * 1000, 100.0, 60.0, 61.0))
            .collect();
        assert_eq!(lower_bound_holding(&high, 0.5).unwrap(), 0.0);
        let mut mixed = low.clone();
        mixed[2].mean_critic_start_estimate = 70.0;
        assert_eq!(lower_bound_holding(&mixed, 0.5).unwrap(), 75.0);
        assert!(lower_bound_holding(&[], 0.5).is_err());
    }

    #[test]
    fn solve_times() {
        let never: Vec<_> = (1..=5)
            .map(|i| checkpoint(i * 1000, 200.0, 0.0, 0.0))
            .collect();
        assert_eq!(timesteps_to_solve(&never, 475.0), None);
        let first = vec![
            checkpoint(1000, 480.0, 0.0, 0.0),
            checkpoint(2000, 100.0, 0.0, 0.0),
        ];
        assert_eq!(timesteps_to_solve(&first, 475.0), Some(1000));
        let rising: Vec<_> = (1..=20)
            .map(|i| checkpoint(i * 1000, 35.0 * i as f64, 0.0, 0.0))
            .collect();
        assert_eq!(timesteps_to_solve(&rising, 475.0), Some(14_000));
    }
}
