//! Experiment drivers and result emission: single solves with artifact
//! output, the τ-floor sweep, the rear-end-approximation batch study, the
//! communication comparison, and fine-grid safety checks.

use crate::coordination_net::{run_distributed_solve, CommLedger, Phase, Tier};
use crate::kkt_core::{HessianMode, Iterate, Problem, RecaMode};
use crate::pdip_solver::{
    solve, LinSolver, NullObserver, SolveReport, SolveStatus, SolverConfig,
};
use crate::reca_param::RhoSlope;
use crate::scenario::Scenario;
use crate::scenario_io::{generate_random_scenario, GenOptions};
use crate::vehicle_model::{rk4_step, VehicleControl, VehicleState};
use crate::{Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// How to run one solve.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub reca: RecaMode,
    pub hessian: HessianMode,
    pub rho_slope: RhoSlope,
    pub solver: SolverConfig,
    /// Run through the message-passing runtime and keep its ledger. The
    /// iterates are identical either way; this only adds accounting.
    pub distributed: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            reca: RecaMode::Exact,
            hessian: HessianMode::GaussNewton,
            rho_slope: RhoSlope::Continuity,
            solver: SolverConfig::default(),
            distributed: false,
        }
    }
}

/// Result of one solve, with everything artifact emission needs.
pub struct RunOutcome {
    pub problem: Problem,
    pub iterate: Iterate,
    pub report: SolveReport,
    pub ledger: Option<CommLedger>,
}

/// Solve one scenario.
pub fn run_single(sc: Scenario, opt: &RunOptions) -> Result<RunOutcome> {
    let prob = Problem::new(sc, opt.reca, opt.hessian, opt.rho_slope)?;
    let (iterate, report, ledger) = if opt.distributed {
        let (it, rep, led) = run_distributed_solve(&prob, &opt.solver)?;
        (it, rep, Some(led))
    } else {
        let (it, rep) = solve(&prob, &opt.solver, LinSolver::Hierarchical, &mut NullObserver);
        (it, rep, None)
    };
    Ok(RunOutcome { problem: prob, iterate, report, ledger })
}

/// Iteration trace as CSV: `iter,r_inf,tau,alpha,alpha_max,merit`.
pub fn trace_csv(report: &SolveReport) -> String {
    let mut out = String::from("iter,r_inf,tau,alpha,alpha_max,merit\n");
    for t in &report.trace {
        out.push_str(&format!(
            "{},{:e},{:e},{:e},{:e},{:e}\n",
            t.iter, t.r_inf, t.tau, t.alpha, t.alpha_max, t.merit
        ));
    }
    out
}

/// Trajectories as CSV: `vehicle,k,t,p,v,E,Fb`. Controls are zero-order-hold
/// over `[t_k, t_{k+1})`; the terminal row repeats the last control.
pub fn trajectory_csv(prob: &Problem, it: &Iterate) -> String {
    let mut out = String::from("vehicle,k,t,p,v,E,Fb\n");
    let dt = prob.scenario.dt;
    for (i, vb) in prob.vehicles.iter().enumerate() {
        let y = &it.vehicles[i].y;
        let big_k = prob.big_k();
        for k in 0..=big_k {
            let kc = k.min(big_k - 1);
            out.push_str(&format!(
                "{},{},{:e},{:e},{:e},{:e},{:e}\n",
                i,
                k,
                k as f64 * dt,
                y[vb.tr.idx_p(k)],
                y[vb.tr.idx_v(k)],
                y[vb.tr.idx_e(kc)],
                y[vb.tr.idx_fb(kc)],
            ));
        }
    }
    out
}

/// Summary of one solve, serialized as the run's `summary.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    pub status: String,
    pub iterations: usize,
    pub objective: f64,
    pub tau: f64,
    pub r_inf: f64,
    pub reca: String,
    pub hessian: String,
    pub tol: f64,
    pub tau_min: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub total_floats: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub total_airtime_us: Option<u64>,
}

pub fn summarize(outcome: &RunOutcome, opt: &RunOptions, seed: Option<u64>) -> Summary {
    let status = match &outcome.report.status {
        SolveStatus::Converged => "converged".to_string(),
        SolveStatus::MaxIterations => "max-iterations".to_string(),
        SolveStatus::Failed(m) => format!("failed: {m}"),
    };
    Summary {
        status,
        iterations: outcome.report.iterations,
        objective: outcome.report.objective,
        tau: outcome.report.tau,
        r_inf: outcome.report.r_inf,
        reca: format!("{:?}", opt.reca),
        hessian: format!("{:?}", opt.hessian),
        tol: opt.solver.tol,
        tau_min: opt.solver.tau_min,
        seed,
        total_floats: outcome.ledger.as_ref().map(|l| l.total_floats()),
        total_airtime_us: outcome.ledger.as_ref().map(|l| l.total_airtime_us()),
    }
}

/// Write trace, trajectories, optional ledger and summary under `dir`.
pub fn write_artifacts(
    dir: &std::path::Path,
    outcome: &RunOutcome,
    opt: &RunOptions,
    seed: Option<u64>,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("trace.csv"), trace_csv(&outcome.report))?;
    std::fs::write(dir.join("trajectories.csv"), trajectory_csv(&outcome.problem, &outcome.iterate))?;
    if let Some(ledger) = &outcome.ledger {
        let mut buf = Vec::new();
        ledger.write_csv(&mut buf)?;
        std::fs::write(dir.join("ledger.csv"), buf)?;
    }
    let summary = summarize(outcome, opt, seed);
    std::fs::write(
        dir.join("summary.json"),
        serde_json::to_string_pretty(&summary).expect("summary serialization"),
    )?;
    Ok(())
}

/// One row of the τ-floor sweep.
#[derive(Debug, Clone, Serialize)]
pub struct TauSweepRow {
    pub tau_min: f64,
    pub converged: bool,
    pub iterations: usize,
    pub objective: f64,
    /// Objective gap relative to the finest floor in the sweep.
    pub rel_gap: f64,
}

/// Solve the same scenario under each barrier floor, finest floor last used
/// as the gap baseline.
pub fn tau_sweep(sc: &Scenario, opt: &RunOptions, floors: &[f64]) -> Result<Vec<TauSweepRow>> {
    if floors.is_empty() {
        return Err(Error::Other("empty tau_min list".into()));
    }
    let mut floors = floors.to_vec();
    floors.sort_by(|a, b| b.total_cmp(a));
    let runs: Vec<(f64, SolveReport)> = floors
        .iter()
        .map(|&tau_min| {
            let run_opt = RunOptions {
                solver: SolverConfig { tau_min, ..opt.solver.clone() },
                ..opt.clone()
            };
            run_single(sc.clone(), &run_opt).map(|o| (tau_min, o.report))
        })
        .collect::<Result<_>>()?;
    let baseline = runs.last().map(|(_, r)| r.objective).unwrap();
    Ok(runs
        .into_iter()
        .map(|(tau_min, rep)| TauSweepRow {
            tau_min,
            converged: rep.status == SolveStatus::Converged,
            iterations: rep.iterations,
            objective: rep.objective,
            rel_gap: (rep.objective - baseline).abs() / baseline.abs().max(1e-300),
        })
        .collect())
}

pub fn tau_sweep_csv(rows: &[TauSweepRow]) -> String {
    let mut out = String::from("tau_min,converged,iterations,objective,rel_gap\n");
    for r in rows {
        out.push_str(&format!(
            "{:e},{},{},{:e},{:e}\n",
            r.tau_min, r.converged, r.iterations, r.objective, r.rel_gap
        ));
    }
    out
}

/// One seed of the approximation batch.
#[derive(Debug, Clone, Serialize)]
pub struct BatchRow {
    pub seed: u64,
    pub exact_objective: f64,
    pub param_objective: f64,
    /// `(J_param - J_exact) / |J_exact|`, clamped below at zero.
    pub rel_suboptimality: f64,
    /// Worst violation of the exact rear-end rows by the parameterized
    /// solution (positive means a gap shortfall in meters).
    pub exact_reca_violation: f64,
    pub exact_iterations: usize,
    pub param_iterations: usize,
    /// Direction-phase vehicle-to-lane floats per iteration.
    pub vl_exact_per_iter: f64,
    pub vl_param_per_iter: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BatchSummary {
    pub rows: Vec<BatchRow>,
    pub failures: Vec<(u64, String)>,
    pub median_rel_suboptimality: f64,
    pub max_exact_reca_violation: f64,
    /// Relative reduction of the per-iteration vehicle-to-lane direction
    /// payload, averaged over seeds.
    pub vl_reduction: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn vl_per_iter(ledger: &CommLedger, iterations: usize) -> f64 {
    ledger.floats_between(Phase::Direction, Tier::Vehicle, Tier::Lane) as f64
        / iterations.max(1) as f64
}

fn batch_one(
    seed: u64,
    gen: &GenOptions,
    param_mode: RecaMode,
    hessian: HessianMode,
    cfg: &SolverConfig,
) -> Result<BatchRow> {
    let sc = generate_random_scenario(seed, gen)?.to_scenario()?;
    let exact_prob = Problem::new(sc.clone(), RecaMode::Exact, hessian, RhoSlope::Continuity)?;
    let (_, exact_rep, exact_led) = run_distributed_solve(&exact_prob, cfg)?;
    if exact_rep.status != SolveStatus::Converged {
        return Err(Error::Other(format!("exact solve: {:?}", exact_rep.status)));
    }
    let param_prob = Problem::new(sc, param_mode, hessian, RhoSlope::Continuity)?;
    let (param_it, param_rep, param_led) = run_distributed_solve(&param_prob, cfg)?;
    if param_rep.status != SolveStatus::Converged {
        return Err(Error::Other(format!("param solve: {:?}", param_rep.status)));
    }
    Ok(BatchRow {
        seed,
        exact_objective: exact_rep.objective,
        param_objective: param_rep.objective,
        rel_suboptimality: ((param_rep.objective - exact_rep.objective)
            / exact_rep.objective.abs().max(1e-300))
        .max(0.0),
        exact_reca_violation: max_separation_violation(&param_prob, &param_it),
        exact_iterations: exact_rep.iterations,
        param_iterations: param_rep.iterations,
        vl_exact_per_iter: vl_per_iter(&exact_led, exact_rep.iterations),
        vl_param_per_iter: vl_per_iter(&param_led, param_rep.iterations),
    })
}

/// Solve each seed with the exact rear-end rows and with the parameterized
/// approximation, and compare objectives, feasibility and communication.
/// Individual failures are collected without aborting the batch. Seeds run
/// in parallel; the aggregation order is the seed order regardless of the
/// thread count.
pub fn reca_batch(
    seeds: &[u64],
    gen: &GenOptions,
    param_mode: RecaMode,
    hessian: HessianMode,
    cfg: &SolverConfig,
) -> BatchSummary {
    let results: Vec<(u64, Result<BatchRow>)> = seeds
        .par_iter()
        .map(|&seed| (seed, batch_one(seed, gen, param_mode, hessian, cfg)))
        .collect();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (seed, res) in results {
        match res {
            Ok(row) => rows.push(row),
            Err(e) => failures.push((seed, e.to_string())),
        }
    }
    let median_rel_suboptimality = median(rows.iter().map(|r| r.rel_suboptimality).collect());
    let max_exact_reca_violation =
        rows.iter().map(|r| r.exact_reca_violation).fold(0.0f64, f64::max);
    let vl_reduction = if rows.is_empty() {
        f64::NAN
    } else {
        rows.iter()
            .map(|r| 1.0 - r.vl_param_per_iter / r.vl_exact_per_iter.max(1e-300))
            .sum::<f64>()
            / rows.len() as f64
    };
    BatchSummary { rows, failures, median_rel_suboptimality, max_exact_reca_violation, vl_reduction }
}

pub fn batch_csv(summary: &BatchSummary) -> String {
    let mut out = String::from(
        "seed,exact_objective,param_objective,rel_suboptimality,exact_reca_violation,exact_iterations,param_iterations,vl_exact_per_iter,vl_param_per_iter\n",
    );
    for r in &summary.rows {
        out.push_str(&format!(
            "{},{:e},{:e},{:e},{:e},{},{},{:e},{:e}\n",
            r.seed,
            r.exact_objective,
            r.param_objective,
            r.rel_suboptimality,
            r.exact_reca_violation,
            r.exact_iterations,
            r.param_iterations,
            r.vl_exact_per_iter,
            r.vl_param_per_iter
        ));
    }
    out
}

/// Worst shortfall of the exact rear-end separation at the node grid:
/// `max over separators, nodes of (delta - (p_front - p_rear))`, or 0 if all
/// gaps hold.
pub fn max_separation_violation(prob: &Problem, it: &Iterate) -> f64 {
    let mut worst = 0.0f64;
    for lane in &prob.lanes {
        for sep in &lane.separators {
            let rear = &prob.vehicles[sep.rear];
            let front = &prob.vehicles[sep.front];
            for k in 0..=prob.big_k() {
                let gap = it.vehicles[sep.front].y[front.tr.idx_p(k)]
                    - it.vehicles[sep.rear].y[rear.tr.idx_p(k)];
                worst = worst.max(sep.delta - gap);
            }
        }
    }
    worst
}

/// Exact-vs-parameterized communication comparison on one scenario.
#[derive(Debug, Clone, Serialize)]
pub struct CommReport {
    pub exact: CommPhaseTotals,
    pub param: CommPhaseTotals,
    /// Relative reduction of the per-iteration direction-phase
    /// vehicle-to-lane payload.
    pub vl_direction_reduction: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CommPhaseTotals {
    pub iterations: usize,
    pub total_floats: usize,
    pub total_airtime_us: u64,
    pub direction_vl_per_iter: f64,
}

fn phase_totals(ledger: &CommLedger, iterations: usize) -> CommPhaseTotals {
    CommPhaseTotals {
        iterations,
        total_floats: ledger.total_floats(),
        total_airtime_us: ledger.total_airtime_us(),
        direction_vl_per_iter: vl_per_iter(ledger, iterations),
    }
}

pub fn comm_report(
    sc: &Scenario,
    param_mode: RecaMode,
    hessian: HessianMode,
    cfg: &SolverConfig,
) -> Result<CommReport> {
    let exact_prob = Problem::new(sc.clone(), RecaMode::Exact, hessian, RhoSlope::Continuity)?;
    let (_, exact_rep, exact_led) = run_distributed_solve(&exact_prob, cfg)?;
    let param_prob = Problem::new(sc.clone(), param_mode, hessian, RhoSlope::Continuity)?;
    let (_, param_rep, param_led) = run_distributed_solve(&param_prob, cfg)?;
    let exact = phase_totals(&exact_led, exact_rep.iterations);
    let param = phase_totals(&param_led, param_rep.iterations);
    let vl_direction_reduction =
        1.0 - param.direction_vl_per_iter / exact.direction_vl_per_iter.max(1e-300);
    Ok(CommReport { exact, param, vl_direction_reduction })
}

/// Fine-grid safety audit of a converged solution.
#[derive(Debug, Clone, Serialize)]
pub struct SafetyReport {
    /// Worst `gap - delta` over same-lane pairs on the fine grid (negative
    /// means a shortfall).
    pub min_gap_margin: f64,
    /// Worst `t_in(second) - t_out(first)` over ordered crossing pairs
    /// (negative means overlapping conflict-zone occupancy).
    pub min_occupancy_margin: f64,
}

/// Re-integrate every vehicle from each shooting node with `subdiv` RK4
/// substeps per interval (zero-order-hold controls) and audit rear-end gaps
/// and conflict-zone occupancy on that fine grid.
pub fn fine_grid_safety(prob: &Problem, it: &Iterate, subdiv: usize) -> SafetyReport {
    let big_k = prob.big_k();
    let dt = prob.scenario.dt;
    let h = dt / subdiv as f64;
    let n = prob.n_vehicles();

    // Fine-grid positions per vehicle: big_k * subdiv + 1 samples.
    let mut pos: Vec<Vec<f64>> = Vec::with_capacity(n);
    for i in 0..n {
        let vb = &prob.vehicles[i];
        let y = &it.vehicles[i].y;
        let params = prob.scenario.params_of(i);
        let mut p = Vec::with_capacity(big_k * subdiv + 1);
        for k in 0..big_k {
            let mut x = VehicleState { p: y[vb.tr.idx_p(k)], v: y[vb.tr.idx_v(k)] };
            let u = VehicleControl { e: y[vb.tr.idx_e(k)], fb: y[vb.tr.idx_fb(k)] };
            for _ in 0..subdiv {
                p.push(x.p);
                x = rk4_step(&params, x, u, h).next;
            }
        }
        p.push(y[vb.tr.idx_p(big_k)]);
        pos.push(p);
    }

    // Rear-end gaps on the fine grid.
    let mut min_gap_margin = f64::INFINITY;
    for lane in &prob.lanes {
        for sep in &lane.separators {
            for j in 0..pos[sep.rear].len() {
                min_gap_margin =
                    min_gap_margin.min(pos[sep.front][j] - pos[sep.rear][j] - sep.delta);
            }
        }
    }

    // Conflict-zone occupancy windows per (vehicle, zone), using the widened
    // in/out bounds that include the vehicle body.
    let occupancy = |vehicle: usize, zone: usize| -> Option<(f64, f64)> {
        let cross = prob
            .scenario
            .crossings_of(vehicle)
            .into_iter()
            .find(|c| c.zone == zone)?;
        let p = &pos[vehicle];
        let mut t_in = None;
        let mut t_out = None;
        for (j, &pj) in p.iter().enumerate() {
            if pj > cross.p_in && pj < cross.p_out {
                let t = j as f64 * h;
                if t_in.is_none() {
                    t_in = Some(t);
                }
                t_out = Some(t);
            }
        }
        Some((t_in?, t_out?))
    };
    let mut min_occupancy_margin = f64::INFINITY;
    for pair in &prob.central.pairs {
        if let (Some((_, first_out)), Some((second_in, _))) =
            (occupancy(pair.first, pair.zone), occupancy(pair.second, pair.zone))
        {
            min_occupancy_margin = min_occupancy_margin.min(second_in - first_out);
        }
    }

    SafetyReport { min_gap_margin, min_occupancy_margin }
}
