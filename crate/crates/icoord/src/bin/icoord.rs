//! Command-line front end: single solves, scenario generation, the batch
//! studies and oracle checks. Exit codes: 0 success, 2 solver failure,
//! 3 invalid input.

use clap::{Args, Parser, Subcommand, ValueEnum};
use icoord::experiments::{
    batch_csv, comm_report, fine_grid_safety, reca_batch, run_single, summarize, tau_sweep,
    tau_sweep_csv, write_artifacts, RunOptions,
};
use icoord::hier_linalg::{search_direction, NullRecorder};
use icoord::kkt_core::{HessianMode, Problem, RecaMode};
use icoord::pdip_solver::{SolveStatus, SolverConfig};
use icoord::reference_oracle::{dense_direction, direction_distance, direction_scale};
use icoord::scenario::Scenario;
use icoord::scenario_io::{generate_random_scenario, GenOptions, Layout, ScenarioFile};
use std::path::PathBuf;
use std::process::ExitCode;

const EXIT_SOLVER: u8 = 2;
const EXIT_INPUT: u8 = 3;

#[derive(Parser)]
#[command(name = "icoord", about = "Semi-distributed interior-point intersection coordination")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum RecaArg {
    Exact,
    Primal,
    Dual,
}

impl From<RecaArg> for RecaMode {
    fn from(a: RecaArg) -> Self {
        match a {
            RecaArg::Exact => RecaMode::Exact,
            RecaArg::Primal => RecaMode::Primal,
            RecaArg::Dual => RecaMode::Dual,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum HessianArg {
    Gn,
    Exact,
}

impl From<HessianArg> for HessianMode {
    fn from(a: HessianArg) -> Self {
        match a {
            HessianArg::Gn => HessianMode::GaussNewton,
            HessianArg::Exact => HessianMode::Exact,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum LayoutArg {
    TwoLane,
    FourWay,
}

#[derive(Args)]
struct Common {
    /// Scenario JSON file; omit to generate the built-in reference layout
    /// from --seed.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Seed for generated scenarios.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Rear-end constraint handling.
    #[arg(long, value_enum, default_value = "exact")]
    reca: RecaArg,
    /// Lagrangian Hessian approximation.
    #[arg(long, value_enum, default_value = "gn")]
    hessian: HessianArg,
    /// Residual tolerance.
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    /// Barrier floor.
    #[arg(long, default_value_t = 1e-6)]
    tau_min: f64,
    /// Iteration budget.
    #[arg(long, default_value_t = 200)]
    max_iter: usize,
    /// Run through the message-passing runtime and emit its ledger.
    #[arg(long, value_enum, default_value = "off")]
    distributed: OnOff,
    /// Output directory (artifacts) or file (gen).
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn run_options(&self) -> RunOptions {
        RunOptions {
            reca: self.reca.into(),
            hessian: self.hessian.into(),
            solver: SolverConfig {
                tol: self.tol,
                tau_min: self.tau_min,
                max_iters: self.max_iter,
                ..SolverConfig::default()
            },
            distributed: matches!(self.distributed, OnOff::On),
            ..RunOptions::default()
        }
    }

    /// Load the scenario file or generate the reference layout.
    fn scenario(&self) -> Result<(Scenario, Option<u64>), String> {
        match &self.scenario {
            Some(path) => {
                let file = ScenarioFile::load(path).map_err(|e| e.to_string())?;
                let seed = file.seed;
                Ok((file.to_scenario().map_err(|e| e.to_string())?, seed))
            }
            None => {
                let file = generate_random_scenario(self.seed, &GenOptions::reference_twelve())
                    .map_err(|e| e.to_string())?;
                Ok((file.to_scenario().map_err(|e| e.to_string())?, Some(self.seed)))
            }
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve one scenario and write run artifacts.
    Solve {
        #[command(flatten)]
        common: Common,
    },
    /// Generate a random scenario file.
    Gen {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "four-way")]
        layout: LayoutArg,
        #[arg(long, default_value_t = 3)]
        vehicles_per_lane: usize,
    },
    /// Exact-vs-parameterized suboptimality batch over seeded scenarios.
    BatchReca {
        #[command(flatten)]
        common: Common,
        /// Number of consecutive seeds starting at --seed.
        #[arg(long, default_value_t = 50)]
        count: usize,
    },
    /// Solve under a ladder of barrier floors and tabulate the trade-off.
    SweepTau {
        #[command(flatten)]
        common: Common,
    },
    /// Compare communication ledgers between exact and parameterized modes.
    CommReport {
        #[command(flatten)]
        common: Common,
    },
    /// Check the hierarchical direction against the dense oracle and audit
    /// the solution's safety properties.
    CheckKkt {
        #[command(flatten)]
        common: Common,
    },
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}

type CmdResult = Result<(), (u8, String)>;

fn input_err<E: ToString>(e: E) -> (u8, String) {
    (EXIT_INPUT, e.to_string())
}

fn solver_err<E: ToString>(e: E) -> (u8, String) {
    (EXIT_SOLVER, e.to_string())
}

fn run(cmd: Cmd) -> CmdResult {
    match cmd {
        Cmd::Solve { common } => {
            let (sc, seed) = common.scenario().map_err(input_err)?;
            let opt = common.run_options();
            let out = run_single(sc, &opt).map_err(solver_err)?;
            let summary = summarize(&out, &opt, seed);
            println!("{}", serde_json::to_string_pretty(&summary).unwrap());
            if let Some(dir) = &common.out {
                write_artifacts(dir, &out, &opt, seed).map_err(input_err)?;
            }
            match out.report.status {
                SolveStatus::Converged => Ok(()),
                ref s => Err(solver_err(format!("{s:?}"))),
            }
        }
        Cmd::Gen { common, layout, vehicles_per_lane } => {
            let gen = match layout {
                LayoutArg::FourWay => GenOptions {
                    layout: Layout::FourWay,
                    vehicles_per_lane,
                    require_pairs: if vehicles_per_lane == 3 { Some(20) } else { None },
                    ..GenOptions::reference_twelve()
                },
                LayoutArg::TwoLane => {
                    GenOptions { vehicles_per_lane, ..GenOptions::batch_two_lane() }
                }
            };
            let file = generate_random_scenario(common.seed, &gen).map_err(input_err)?;
            match &common.out {
                Some(path) => file.save(path).map_err(input_err)?,
                None => println!("{}", file.to_json()),
            }
            Ok(())
        }
        Cmd::BatchReca { common, count } => {
            let param_mode = match common.reca {
                RecaArg::Exact => RecaMode::Primal,
                other => other.into(),
            };
            let opt = common.run_options();
            let seeds: Vec<u64> = (common.seed..common.seed + count as u64).collect();
            let summary =
                reca_batch(&seeds, &GenOptions::batch_two_lane(), param_mode, opt.hessian, &opt.solver);
            println!(
                "{} scenarios, {} failures; median suboptimality {:.4e}; worst exact-row violation {:.3e}; v->L direction reduction {:.2}%",
                summary.rows.len(),
                summary.failures.len(),
                summary.median_rel_suboptimality,
                summary.max_exact_reca_violation,
                100.0 * summary.vl_reduction
            );
            if let Some(dir) = &common.out {
                std::fs::create_dir_all(dir).map_err(input_err)?;
                std::fs::write(dir.join("batch.csv"), batch_csv(&summary)).map_err(input_err)?;
                std::fs::write(
                    dir.join("batch_summary.json"),
                    serde_json::to_string_pretty(&summary).unwrap(),
                )
                .map_err(input_err)?;
            }
            if summary.rows.is_empty() {
                return Err(solver_err("all scenarios failed"));
            }
            Ok(())
        }
        Cmd::SweepTau { common } => {
            let (sc, _) = common.scenario().map_err(input_err)?;
            let opt = common.run_options();
            let floors = [1.0, 1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6];
            let rows = tau_sweep(&sc, &opt, &floors).map_err(solver_err)?;
            let csv = tau_sweep_csv(&rows);
            print!("{csv}");
            if let Some(dir) = &common.out {
                std::fs::create_dir_all(dir).map_err(input_err)?;
                std::fs::write(dir.join("tau_sweep.csv"), csv).map_err(input_err)?;
            }
            if rows.iter().any(|r| !r.converged) {
                return Err(solver_err("a sweep run did not converge"));
            }
            Ok(())
        }
        Cmd::CommReport { common } => {
            let (sc, _) = common.scenario().map_err(input_err)?;
            let param_mode = match common.reca {
                RecaArg::Exact => RecaMode::Primal,
                other => other.into(),
            };
            let opt = common.run_options();
            let report =
                comm_report(&sc, param_mode, opt.hessian, &opt.solver).map_err(solver_err)?;
            let json = serde_json::to_string_pretty(&report).unwrap();
            println!("{json}");
            if let Some(dir) = &common.out {
                std::fs::create_dir_all(dir).map_err(input_err)?;
                std::fs::write(dir.join("comm_report.json"), json).map_err(input_err)?;
            }
            Ok(())
        }
        Cmd::CheckKkt { common } => {
            let (sc, _) = common.scenario().map_err(input_err)?;
            let opt = common.run_options();
            let prob = Problem::new(sc, opt.reca, opt.hessian, opt.rho_slope)
                .map_err(input_err)?;
            // Oracle comparison at the initial iterate: the hierarchical
            // elimination must match the dense KKT solve.
            let it = prob.initial_iterate().map_err(input_err)?;
            let res = prob.residuals(&it, opt.solver.tau0);
            let hier = search_direction(&prob, &it, &res, &mut NullRecorder).map_err(solver_err)?;
            let dense = dense_direction(&prob, &it, &res).map_err(solver_err)?;
            let rel = direction_distance(&hier, &dense) / direction_scale(&dense).max(1e-300);
            println!("direction relative error vs dense oracle: {rel:.3e}");
            // Then solve and audit the solution.
            let out = run_single(prob.scenario.clone(), &opt).map_err(solver_err)?;
            if out.report.status != SolveStatus::Converged {
                return Err(solver_err(format!("{:?}", out.report.status)));
            }
            let safety = fine_grid_safety(&out.problem, &out.iterate, 10);
            println!(
                "converged in {} iterations; r_inf {:.3e}; fine-grid gap margin {:.3e} m; occupancy margin {:.3e} s",
                out.report.iterations, out.report.r_inf, safety.min_gap_margin,
                safety.min_occupancy_margin
            );
            if rel > 1e-8 {
                return Err(solver_err(format!("direction mismatch {rel:.3e}")));
            }
            if safety.min_gap_margin < -1e-3 {
                return Err(solver_err(format!(
                    "fine-grid gap shortfall {:.3e}",
                    safety.min_gap_margin
                )));
            }
            Ok(())
        }
    }
}
