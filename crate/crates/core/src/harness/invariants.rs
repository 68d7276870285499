//! Randomized invariant battery with one report line per property.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::InvariantSettings;
use crate::cartpole::{self, CartPoleState};
use crate::error::{Error, Result};
use crate::features::{evaluate, identity_features, sample_features, FeatureMap, ParamVector};
use crate::inventory::{build_inventory_mdp, InventoryParams};
use crate::mdp::{
    bellman_apply, bellman_optimality_apply, exact_q_value, greedy_policy, optimal_q,
    policy_iteration, DeterministicPolicy, Policy, QTable, StochasticPolicy, TabularMdp,
};
use crate::model_based::{
    discounted_occupancy, linear_advantage, rpi_run_with, trpo_policy_update, PolicySnapshot,
    RunTrace,
};
use crate::model_free::{
    bellman_targets, dqn_train, jensen_gap_check, msbe_loss, rpi_loss, rpi_loss_terms, CriticLoss,
    DqnConfig, RpiLossParams, Transition,
};
use crate::nn::{init_params, Mlp};
use crate::numerics::{least_squares, lp_solve, solve_linear_system, LinearProgram, LpStatus};

#[derive(Debug, Clone, PartialEq)]
pub struct InvariantLine {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct InvariantReport {
    pub lines: Vec<InvariantLine>,
}

impl InvariantReport {
    pub fn passed(&self) -> bool {
        self.lines.iter().all(|l| l.passed)
    }

    pub fn line(&self, name: &str) -> Option<&InvariantLine> {
        self.lines.iter().find(|l| l.name == name)
    }

    fn record(&mut self, name: &'static str, outcome: Result<(bool, String)>) {
        let (passed, detail) = match outcome {
            Ok(v) => v,
            Err(e) => (false, format!("error: {e}")),
        };
        self.lines.push(InvariantLine {
            name,
            passed,
            detail,
        });
    }
}

impl fmt::Display for InvariantReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for line in &self.lines {
            writeln!(
                f,
                "{} {}: {}",
                if line.passed { "PASS" } else { "FAIL" },
                line.name,
                line.detail
            )?;
        }
        let failed = self.lines.iter().filter(|l| !l.passed).count();
        write!(f, "{} invariants, {} failed", self.lines.len(), failed)
    }
}

const TOL: f64 = 1e-6;

fn random_mdp(
    rng: &mut ChaCha8Rng,
    max_states: usize,
    max_actions: usize,
    discount: f64,
) -> Result<TabularMdp> {
    let s = rng.gen_range(2..=max_states);
    let a = rng.gen_range(2..=max_actions);
    TabularMdp::random(rng, s, a, discount)
}

fn random_q(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> QTable {
    QTable::from_vec((0..n).map(|_| rng.gen_range(-scale..scale)).collect())
}

fn random_policy(rng: &mut ChaCha8Rng, mdp: &TabularMdp) -> Result<DeterministicPolicy> {
    DeterministicPolicy::new(
        (0..mdp.n_states())
            .map(|_| rng.gen_range(0..mdp.n_actions()))
            .collect(),
        mdp.n_actions(),
    )
}

/// Runs the whole battery. `settings.numeric` governs the LP solves inside
/// the model-based checks.
pub fn run_invariant_suite(settings: &InvariantSettings) -> InvariantReport {
    let mut report = InvariantReport::default();
    let seed = settings.master_seed;
    let n = settings.instances;

    report.record(
        "bellman operators are monotone",
        operators_monotone(seed, n),
    );
    report.record(
        "bellman operators are gamma-contractions",
        operators_contract(seed + 1, n),
    );
    report.record(
        "optimality operator dominates policy operator",
        optimality_dominates(seed + 2, n),
    );
    report.record(
        "bellman subsolutions lower-bound Q_mu",
        subsolutions_lower_bound(seed + 3, n),
    );
    report.record(
        "greedy step improves the policy",
        greedy_improves(seed + 4, n),
    );
    report.record(
        "linear evaluation is linear",
        evaluation_linear(seed + 5, n),
    );
    report.record(
        "least squares satisfies normal equations",
        least_squares_normal(seed + 6, n),
    );
    report.record(
        "lp solver matches vertex enumeration",
        lp_vertex_oracle(seed + 7, 10 * n),
    );
    report.record(
        "tabular rpi reproduces policy iteration",
        tabular_equivalence(seed + 8, n, settings),
    );

    match inventory_trace(settings) {
        Ok((mdp, trace)) => {
            report.record(
                "rpi iterates are monotone on inventory",
                Ok(monotone(&trace)),
            );
            report.record(
                "rpi iterates lower-bound Q_mu on inventory",
                Ok(lower_bounds(&trace)),
            );
            report.record(
                "rpi projection identity on inventory",
                projection_identity(&mdp, &trace, seed + 9),
            );
            report.record("rpi evaluation lp never unbounded", Ok(lp_statuses(&trace)));
            report.record(
                "final greedy gap bounded by bellman residual",
                greedy_gap_bound(&mdp, &trace),
            );
        }
        Err(e) => {
            for name in [
                "rpi iterates are monotone on inventory",
                "rpi iterates lower-bound Q_mu on inventory",
                "rpi projection identity on inventory",
                "rpi evaluation lp never unbounded",
                "final greedy gap bounded by bellman residual",
            ] {
                report.record(
                    name,
                    Err(Error::ContractViolation(format!(
                        "inventory run failed: {e}"
                    ))),
                );
            }
        }
    }

    report.record(
        "trust-region step respects the kl radius",
        trust_region(seed + 10, n),
    );
    report.record(
        "discounted occupancy has mass 1/(1-gamma)",
        occupancy_mass(seed + 11, n),
    );
    report.record(
        "mlp gradients match finite differences",
        mlp_gradients(seed + 12),
    );
    report.record(
        "critic loss gradients match finite differences",
        loss_gradients(seed + 13, n),
    );
    report.record(
        "rpi loss splits into its three terms",
        loss_decomposition(seed + 14),
    );
    report.record(
        "rpi floor penalty pushes Q upward",
        floor_direction(seed + 15),
    );
    report.record(
        "sampled penalty dominates exact penalty",
        jensen(seed + 16, n),
    );
    report.record(
        "cart-pole physics is deterministic",
        physics_deterministic(seed + 17),
    );
    report.record(
        "cart-pole discounted return stays below 99.34",
        discounted_cap(seed + 18),
    );
    report.record(
        "loss switch leaves behavior unchanged before training",
        loss_switch(seed + 19),
    );
    report
}

fn operators_monotone(seed: u64, n: usize) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::INFINITY;
    for _ in 0..n {
        let mdp = random_mdp(&mut rng, 8, 4, 0.9)?;
        let mu = random_policy(&mut rng, &mdp)?;
        let g = random_q(&mut rng, mdp.n_pairs(), 5.0);
        let f = QTable(g.0.map(|v| v + rng.gen_range(0.0..1.0)));
        worst =
            worst.min(bellman_apply(&mdp, &mu, &f)?.min_slack_over(&bellman_apply(&mdp, &mu, &g)?));
        worst = worst.min(
            bellman_optimality_apply(&mdp, &f)?
                .min_slack_over(&bellman_optimality_apply(&mdp, &g)?),
        );
    }
    Ok((
        worst >= -1e-12,
        format!("min (T f - T g) = {worst:e} for f >= g"),
    ))
}

fn operators_contract(seed: u64, n: usize) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..n {
        let mdp = random_mdp(&mut rng, 8, 4, 0.9)?;
        let mu = random_policy(&mut rng, &mdp)?;
        let f = random_q(&mut rng, mdp.n_pairs(), 5.0);
        let g = random_q(&mut rng, mdp.n_pairs(), 5.0);
        let bound = mdp.discount() * f.sup_distance(&g);
        let policy_gap = bellman_apply(&mdp, &mu, &f)?.sup_distance(&bellman_apply(&mdp, &mu, &g)?);
        let opt_gap =
            bellman_optimality_apply(&mdp, &f)?.sup_distance(&bellman_optimality_apply(&mdp, &g)?);
        worst = worst.max(policy_gap - bound).max(opt_gap - bound);
    }
    Ok((
        worst <= 1e-12,
        format!("max excess over gamma*||f-g|| = {worst:e}"),
    ))
}

fn optimality_dominates(seed: u64, n: usize) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::INFINITY;
    for _ in 0..n {
        let mdp = random_mdp(&mut rng, 8, 4, 0.9)?;
        let mu = random_policy(&mut rng, &mdp)?;
        let f = random_q(&mut rng, mdp.n_pairs(), 5.0);
        worst = worst.min(
            bellman_optimality_apply(&mdp, &f)?.min_slack_over(&bellman_apply(&mdp, &mu, &f)?),
        );
    }
    Ok((worst >= -1e-12, format!("min (T f - T_mu f) = {worst:e}")))
}

/// Builds `f = Q_μ − (I − γ P Π_μ)⁻¹ u` with `u ≥ 0`, so `T_μ f − f = u`.
fn subsolutions_lower_bound(seed: u64, n: usize) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::INFINITY;
    let mut worst_residual: f64 = 0.0;
    for _ in 0..n {
        let mdp = random_mdp(&mut rng, 8, 4, 0.9)?;
        let mu = random_policy(&mut rng, &mdp)?;
        let q = exact_q_value(&mdp, &mu)?;
        let pairs = mdp.n_pairs();
        let mut system = DMatrix::identity(pairs, pairs);
        for pair in 0..pairs {
            for s in 0..mdp.n_states() {
                system[(pair, mdp.index(s, mu.action(s)))] -=
                    mdp.discount() * mdp.transition()[(pair, s)];
            }
        }
        let u = DVector::from_fn(pairs, |_, _| rng.gen_range(0.0..2.0));
        let f = QTable(&q.0 - solve_linear_system(&system, &u)?);
        let residual = bellman_apply(&mdp, &mu, &f)?.0 - &f.0;
        worst_residual = worst_residual.max((residual - u).amax());
        worst = worst.min(q.min_slack_over(&f));
    }
    Ok((
        worst >= -1e-9 && worst_residual < 1e-9,
        format!("min (Q_mu - f) = {worst:e}, construction error {worst_residual:e}"),
    ))
}

fn greedy_improves(seed: u64, n: usize) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::INFINITY;
    for _ in 0..n {
        let mdp = random_mdp(&mut rng, 8, 4, 0.9)?;
        let mu = random_policy(&mut rng, &mdp)?;
        let q = exact_q_value(&mdp, &mu)?;
        let improved = exact_q_value(&mdp, &greedy_policy(&q, &mdp)?)?;
        worst = worst.min(improved.min_slack_over(&q));
    }
    Ok((worst >= -1e-9, format!("min (Q_greedy - Q_mu) = {worst:e}")))
}

fn evaluation_linear(seed: u64, n: usize) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let phi = sample_features(6, 3, 4, -1.0, 1.0, seed + i as u64)?;
        let t1 = ParamVector(DVector::from_fn(4, |_, _| rng.gen_range(-3.0..3.0)));
        let t2 = ParamVector(DVector::from_fn(4, |_, _| rng.gen_range(-3.0..3.0)));
        let (a, b) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
        let combined = evaluate(&phi, &ParamVector(&t1.0 * a + &t2.0 * b))?;
        let separate = evaluate(&phi, &t1)?.0 * a + evaluate(&phi, &t2)?.0 * b;
        worst = worst.max((combined.0 - separate).amax());
    }
    Ok((worst < 1e-12, format!("max deviation {worst:e}")))
}

fn least_squares_normal(seed: u64, n: usize) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let a = DMatrix::from_fn(30, 6, |_, _| rng.gen_range(-1.0..1.0));
        let b = DVector::from_fn(30, |_, _| rng.gen_range(-5.0..5.0));
        let x = least_squares(&a, &b)?;
        worst = worst.max((a.transpose() * (&a * &x - &b)).amax());
    }
    Ok((worst < 1e-9, format!("max |A^T (Ax - b)| = {worst:e}")))
}

fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn go(start: usize, n: usize, k: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if current.len() == k {
            out.push(current.clone());
            return;
        }
        for i in start..n {
            current.push(i);
            go(i + 1, n, k, current, out);
            current.pop();
        }
    }
    let mut out = Vec::new();
    go(0, n, k, &mut Vec::new(), &mut out);
    out
}

/// Best objective over basic feasible points of `{A x ≤ b}`, if any.
fn best_vertex(a: &DMatrix<f64>, b: &DVector<f64>, c: &DVector<f64>) -> Option<f64> {
    let n = a.ncols();
    let mut best: Option<f64> = None;
    for rows in subsets(a.nrows(), n) {
        let sub = DMatrix::from_fn(n, n, |i, j| a[(rows[i], j)]);
        let rhs = DVector::from_fn(n, |i, _| b[rows[i]]);
        if let Ok(x) = solve_linear_system(&sub, &rhs) {
            if (a * &x - b).max() <= 1e-9 {
                let v = c.dot(&x);
                best = Some(best.map_or(v, |cur: f64| cur.max(v)));
            }
        }
    }
    best
}

fn lp_vertex_oracle(seed: u64, count: usize) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut mismatches = 0;
    let mut optimal = 0;
    for _ in 0..count {
        let n = rng.gen_range(1..=4);
        let m = rng.gen_range(n..=8);
        let a = DMatrix::from_fn(m, n, |_, _| rng.gen_range(-1.0..1.0));
        let b = DVector::from_fn(m, |_, _| rng.gen_range(-0.5..1.0));
        let c = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let solution = lp_solve(&LinearProgram::new(c.clone(), a.clone(), b.clone())?)?;
        let oracle = best_vertex(&a, &b, &c);
        match (solution.status, oracle) {
            (LpStatus::Optimal, Some(v)) => {
                optimal += 1;
                worst = worst.max((solution.objective_value.unwrap_or(f64::NAN) - v).abs());
            }
            (LpStatus::Infeasible, None) | (LpStatus::Unbounded, Some(_)) => {}
            _ => mismatches += 1,
        }
    }
    Ok((
        mismatches == 0 && worst <= 1e-7,
        format!("{count} programs ({optimal} optimal), {mismatches} status mismatches, max objective gap {worst:e}"),
    ))
}

fn tabular_equivalence(
    seed: u64,
    n: usize,
    settings: &InvariantSettings,
) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst_step: f64 = 0.0;
    let mut worst_final: f64 = 0.0;
    for _ in 0..n {
        let mdp = random_mdp(&mut rng, 8, 4, 0.9)?;
        let phi = identity_features(mdp.n_states(), mdp.n_actions());
        let weights = QTable::from_vec(vec![1.0; mdp.n_pairs()]);
        let probe = rpi_run_with(&mdp, &phi, 1, &weights, &settings.numeric)?;
        let PolicySnapshot::Deterministic(mu0) = &probe.records[0].policy else {
            return Err(Error::ContractViolation(
                "rpi records deterministic policies".into(),
            ));
        };
        let (_, values) = policy_iteration(&mdp, mu0.clone(), 100)?;
        let trace = rpi_run_with(&mdp, &phi, values.len(), &weights, &settings.numeric)?;
        for (k, q) in values.iter().enumerate() {
            worst_step = worst_step.max(trace.records[k + 1].estimate.sup_distance(q));
        }
        let q_star = optimal_q(&mdp, 1e-10)?;
        worst_final = worst_final.max(trace.last().estimate.sup_distance(&q_star));
    }
    Ok((
        worst_step <= 1e-6 && worst_final <= 1e-5,
        format!("max per-step gap {worst_step:e}, final gap to Q* {worst_final:e}"),
    ))
}

fn inventory_trace(settings: &InvariantSettings) -> Result<(TabularMdp, RunTrace)> {
    let mdp = build_inventory_mdp(&InventoryParams::benchmark())?;
    let weights = QTable::from_vec(vec![1.0; mdp.n_pairs()]);
    let mut last_err = None;
    for seed in 1..=5 {
        let phi: FeatureMap = sample_features(mdp.n_states(), mdp.n_actions(), 50, 1.0, 5.0, seed)?;
        match rpi_run_with(
            &mdp,
            &phi,
            settings.inventory_iterations,
            &weights,
            &settings.numeric,
        ) {
            Ok(trace) => return Ok((mdp, trace)),
            Err(e @ Error::NoFeasibleStart { .. }) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last_err.expect("at least one attempt"))
}

fn monotone(trace: &RunTrace) -> (bool, String) {
    let worst = (1..trace.records.len())
        .map(|k| trace.monotonicity_slack(k))
        .fold(f64::INFINITY, f64::min);
    (worst >= -TOL, format!("min (f_k+1 - f_k) = {worst:e}"))
}

fn lower_bounds(trace: &RunTrace) -> (bool, String) {
    let worst = trace
        .records
        .iter()
        .map(|r| r.lower_bound_slack())
        .fold(f64::INFINITY, f64::min);
    (worst >= -TOL, format!("min (Q_mu_k - f_k) = {worst:e}"))
}

fn projection_identity(mdp: &TabularMdp, trace: &RunTrace, seed: u64) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights = QTable::from_vec(vec![1.0; mdp.n_pairs()]);
    let mut worst: f64 = 0.0;
    for k in 0..trace.records.len() - 1 {
        let f_k = &trace.records[k].estimate;
        let q_k = &trace.records[k].true_q;
        let f_next = &trace.records[k + 1].estimate;
        let whole = q_k.weighted_l1_distance(f_k, &weights);
        let mut check = |f: &QTable| {
            let split =
                f.weighted_l1_distance(f_k, &weights) + q_k.weighted_l1_distance(f, &weights);
            worst = worst.max((split - whole).abs() / whole.max(1e-12));
        };
        check(f_next);
        for _ in 0..10 {
            let alpha: f64 = rng.gen();
            check(&QTable(&f_k.0 * (1.0 - alpha) + &f_next.0 * alpha));
        }
    }
    Ok((worst <= 1e-5, format!("max relative defect {worst:e}")))
}

fn lp_statuses(trace: &RunTrace) -> (bool, String) {
    let bad = trace
        .records
        .iter()
        .filter(|r| r.lp_status != Some(LpStatus::Optimal))
        .count();
    (bad == 0, format!("{bad} non-optimal evaluation programs"))
}

fn greedy_gap_bound(mdp: &TabularMdp, trace: &RunTrace) -> Result<(bool, String)> {
    let last = trace.last();
    let q_star = optimal_q(mdp, 1e-9)?;
    let gap = last.true_q.sup_distance(&q_star);
    let residual = bellman_optimality_apply(mdp, &last.estimate)?.sup_distance(&last.estimate);
    let bound = 2.0 * residual / (1.0 - mdp.discount()) + 1e-4;
    Ok((
        gap <= bound,
        format!("||Q_mu_K - Q*|| = {gap:e} <= {bound:e}"),
    ))
}

fn trust_region(seed: u64, n: usize) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let mdp = random_mdp(&mut rng, 8, 4, 0.9)?;
        let phi = sample_features(
            mdp.n_states(),
            mdp.n_actions(),
            3,
            1.0,
            5.0,
            seed + i as u64,
        )?;
        let mu = StochasticPolicy::uniform(mdp.n_states(), mdp.n_actions());
        let theta = ParamVector(DVector::from_fn(3, |_, _| rng.gen_range(-2.0..2.0)));
        let advantage = linear_advantage(&mdp, &phi, &mu, &theta)?;
        let nu = DVector::from_element(mdp.n_states(), 1.0 / mdp.n_states() as f64);
        let rho = discounted_occupancy(&mdp, &mu, &nu)?;
        let delta = rng.gen_range(0.05..2.0);
        let pi = trpo_policy_update(&mdp, &mu, &advantage, &rho, delta)?;
        let kl: f64 = (0..mdp.n_states())
            .map(|s| {
                rho[s]
                    * (0..mdp.n_actions())
                        .map(|a| mu.prob(s, a) * (mu.prob(s, a) / pi.prob(s, a)).ln())
                        .sum::<f64>()
            })
            .sum();
        worst = worst.max(kl / delta - 1.0);
    }
    Ok((
        worst <= 1e-6,
        format!("max relative excess over delta {worst:e}"),
    ))
}

fn occupancy_mass(seed: u64, n: usize) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let mdp = random_mdp(&mut rng, 8, 4, 0.9)?;
        let mu = random_policy(&mut rng, &mdp)?;
        let nu = DVector::from_element(mdp.n_states(), 1.0 / mdp.n_states() as f64);
        let rho = discounted_occupancy(&mdp, &mu, &nu)?;
        worst = worst.max((rho.sum() - 1.0 / (1.0 - mdp.discount())).abs());
        if rho.min() < -1e-12 {
            return Ok((false, "negative occupancy".into()));
        }
    }
    Ok((
        worst < 1e-9,
        format!("max |sum rho - 1/(1-gamma)| = {worst:e}"),
    ))
}

fn relative_error(numeric: f64, analytic: f64) -> f64 {
    (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-6)
}

fn mlp_gradients(seed: u64) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = init_params(&[4, 16, 16, 2], seed)?;
    let batch = 6;
    let inputs: Vec<f64> = (0..batch * 4).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let upstream: Vec<f64> = (0..batch * 2).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let loss = |n: &Mlp| -> Result<f64> {
        Ok(n.forward_batch(&inputs, batch)?
            .iter()
            .zip(&upstream)
            .map(|(o, u)| o * u)
            .sum())
    };
    let grads = net.backward(&inputs, batch, &upstream)?;
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let i = rng.gen_range(0..net.n_params());
        let (mut plus, mut minus) = (net.clone(), net.clone());
        plus.params_mut()[i] += 1e-5;
        minus.params_mut()[i] -= 1e-5;
        let numeric = (loss(&plus)? - loss(&minus)?) / 2e-5;
        worst = worst.max(relative_error(numeric, grads.values[i]));
    }
    Ok((worst < 1e-4, format!("max relative error {worst:e}")))
}

fn random_transition(rng: &mut ChaCha8Rng) -> Transition {
    let mut s = || CartPoleState {
        x: rng.gen_range(-2.0..2.0),
        x_dot: rng.gen_range(-2.0..2.0),
        theta: rng.gen_range(-0.2..0.2),
        theta_dot: rng.gen_range(-2.0..2.0),
    };
    let (state, next_state) = (s(), s());
    Transition {
        state,
        action: rng.gen_range(0..2),
        reward: 1.0,
        next_state,
        terminal: rng.gen_bool(0.2),
    }
}

/// Finite-difference check of both critic losses on batches whose
/// predictions stay away from the hinge kinks.
fn loss_gradients(seed: u64, n: usize) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = RpiLossParams::default();
    let mut worst: f64 = 0.0;
    let mut batches = 0;
    while batches < n {
        let net = init_params(&[4, 16, 16, 2], rng.gen())?;
        let target = init_params(&[4, 16, 16, 2], rng.gen())?;
        let batch: Vec<Transition> = (0..16).map(|_| random_transition(&mut rng)).collect();
        let y = bellman_targets(&batch, &target, 0.99)?;
        let q = net.forward_batch(
            &batch
                .iter()
                .flat_map(|t| t.state.to_array())
                .collect::<Vec<_>>(),
            batch.len(),
        )?;
        let near_kink = batch.iter().enumerate().any(|(i, t)| {
            let v = q[i * 2 + t.action];
            (v - y[i]).abs() < 1e-3 || (v - params.q_min).abs() < 1e-3
        });
        if near_kink {
            continue;
        }
        batches += 1;
        for use_rpi in [false, true] {
            let eval = |n: &Mlp| -> Result<(f64, crate::nn::GradientSet)> {
                if use_rpi {
                    rpi_loss(&batch, n, &target, 0.99, &params)
                } else {
                    msbe_loss(&batch, n, &target, 0.99)
                }
            };
            let (_, grads) = eval(&net)?;
            for _ in 0..40 {
                let i = rng.gen_range(0..net.n_params());
                let (mut plus, mut minus) = (net.clone(), net.clone());
                plus.params_mut()[i] += 1e-5;
                minus.params_mut()[i] -= 1e-5;
                let numeric = (eval(&plus)?.0 - eval(&minus)?.0) / 2e-5;
                worst = worst.max(relative_error(numeric, grads.values[i]));
            }
        }
    }
    Ok((
        worst < 1e-4,
        format!("{n} batches, max relative error {worst:e}"),
    ))
}

fn loss_decomposition(seed: u64) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = RpiLossParams::default();
    let net = init_params(&[4, 16, 16, 2], seed)?;
    let target = init_params(&[4, 16, 16, 2], seed + 1)?;
    let batch: Vec<Transition> = (0..32).map(|_| random_transition(&mut rng)).collect();
    let (loss, _) = rpi_loss(&batch, &net, &target, 0.99, &params)?;
    let y = bellman_targets(&batch, &target, 0.99)?;
    let q = net.forward_batch(
        &batch
            .iter()
            .flat_map(|t| t.state.to_array())
            .collect::<Vec<_>>(),
        batch.len(),
    )?;
    let mut total = 0.0;
    let mut hinge_ok = true;
    for (i, t) in batch.iter().enumerate() {
        let (linear, bellman, floor) = rpi_loss_terms(q[i * 2 + t.action], y[i], &params);
        hinge_ok &= bellman >= 0.0 && floor >= 0.0;
        total += linear + bellman + floor;
    }
    let gap = (loss - total / batch.len() as f64).abs();
    Ok((
        gap < 1e-12 && hinge_ok,
        format!("|loss - sum of terms| = {gap:e}"),
    ))
}

fn floor_direction(seed: u64) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = RpiLossParams::default();
    let widths = [4, 8, 2];
    let mut values = vec![0.0; 4 * 8 + 8 + 8 * 2 + 2];
    let n = values.len();
    values[n - 2] = params.q_min - 1.0;
    values[n - 1] = params.q_min - 1.0;
    let net = Mlp::from_params(&widths, values)?;
    let batch: Vec<Transition> = (0..16).map(|_| random_transition(&mut rng)).collect();
    let (_, grads) = rpi_loss(&batch, &net, &net, 0.99, &params)?;
    let mut stepped = net.clone();
    for (p, g) in stepped.params_mut().iter_mut().zip(&grads.values) {
        *p -= 1e-3 * g;
    }
    let states: Vec<f64> = batch.iter().flat_map(|t| t.state.to_array()).collect();
    let before = net.forward_batch(&states, batch.len())?;
    let after = stepped.forward_batch(&states, batch.len())?;
    let rises = batch
        .iter()
        .enumerate()
        .all(|(i, t)| after[i * 2 + t.action] > before[i * 2 + t.action]);
    Ok((rises, "every sampled Q rises after a descent step".into()))
}

fn jensen(seed: u64, n: usize) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::INFINITY;
    for _ in 0..n {
        let mdp = random_mdp(&mut rng, 6, 3, 0.9)?;
        let mu = random_policy(&mut rng, &mdp)?;
        let f = random_q(&mut rng, mdp.n_pairs(), 5.0);
        let report = jensen_gap_check(&mdp, &f, &mu, 20_000, &mut rng)?;
        worst = worst.min((report.relaxed - report.exact) / report.standard_error.max(1e-12));
    }
    Ok((
        worst >= -3.0,
        format!("min (relaxed - exact) / se = {worst:.3}"),
    ))
}

fn physics_deterministic(seed: u64) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..100 {
        let s = cartpole::reset(&mut rng);
        let a = rng.gen_range(0..2);
        let first = cartpole::step(&s, a, 0)?;
        let second = cartpole::step(&s, a, 0)?;
        if first.next_state.to_array().map(f64::to_bits)
            != second.next_state.to_array().map(f64::to_bits)
        {
            return Ok((false, "repeated step differs".into()));
        }
    }
    Ok((true, "100 repeated steps bit-identical".into()))
}

fn discounted_cap(seed: u64) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cap = (1.0 - 0.99f64.powi(500)) / 0.01;
    let mut best: f64 = 0.0;
    // A hand-made balancing controller survives long episodes.
    for _ in 0..20 {
        let (d, _) = cartpole::rollout_return(
            |s| usize::from(s.theta + 0.5 * s.theta_dot + 0.01 * s.x + 0.1 * s.x_dot > 0.0),
            0.99,
            500,
            &mut rng,
        )?;
        best = best.max(d);
    }
    Ok((
        best <= cap + 1e-9,
        format!("max discounted return {best:.6} vs cap {cap:.6}"),
    ))
}

fn loss_switch(seed: u64) -> Result<(bool, String)> {
    let base = DqnConfig {
        total_steps: 600,
        learning_starts: 600,
        eval_interval: 300,
        n_eval: 2,
        ..DqnConfig::default()
    };
    let msbe = dqn_train(
        &DqnConfig {
            loss: CriticLoss::Msbe,
            ..base.clone()
        },
        seed,
    )?;
    let rpi = dqn_train(
        &DqnConfig {
            loss: CriticLoss::Rpi,
            ..base
        },
        seed,
    )?;
    let same =
        msbe.checkpoints == rpi.checkpoints && msbe.gradient_steps == 0 && rpi.gradient_steps == 0;
    Ok((
        same,
        "checkpoints identical with no gradient steps taken".into(),
    ))
}
