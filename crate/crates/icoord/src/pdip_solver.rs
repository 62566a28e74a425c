//! Primal-dual interior-point driver.
//!
//! One Newton direction per iteration (hierarchical or monolithic linear
//! algebra, identical systems), a fraction-to-boundary step cap, an l1-merit
//! Armijo backtracking line search evaluated blockwise, and the
//! Fiacco-McCormick barrier update with an optional floor on the barrier
//! parameter.

use crate::hier_linalg::{search_direction, DirRecorder};
use crate::kkt_core::{Direction, Iterate, Problem, RecaMode, Residuals};
use crate::reference_oracle::dense_direction;
use crate::{Error, Result};

/// All tunables of the interior-point loop.
#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// Termination tolerance on the residual norm and the barrier parameter.
    pub tol: f64,
    /// Initial barrier parameter.
    pub tau0: f64,
    /// Barrier reduction factor.
    pub eta: f64,
    /// Fraction-to-boundary margin.
    pub kappa: f64,
    /// Armijo slope fraction.
    pub gamma: f64,
    /// Backtracking factor.
    pub beta: f64,
    /// Floor on the barrier parameter. Setting it above `tol` switches to the
    /// early-termination mode: convergence only requires the residual norm.
    pub tau_min: f64,
    /// Outer iteration budget.
    pub max_iters: usize,
    /// Line-search trial budget per iteration.
    pub max_trials: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol: 1e-6,
            tau0: 1.0,
            eta: 0.2,
            kappa: 0.01,
            gamma: 1e-4,
            beta: 0.5,
            tau_min: 1e-12,
            max_iters: 200,
            max_trials: 40,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.tol > 0.0
            && self.tau0 > 0.0
            && self.eta > 0.0
            && self.eta < 1.0
            && self.kappa > 0.0
            && self.kappa < 1.0
            && self.gamma > 0.0
            && self.gamma <= 0.5
            && self.beta > 0.0
            && self.beta < 1.0
            && self.tau_min <= self.tau0;
        ok.then_some(())
            .ok_or_else(|| Error::Other("invalid solver configuration".into()))
    }
}

/// Which linear algebra produces the Newton direction. Both solve the same
/// system; the monolithic path exists as a cross-check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LinSolver {
    #[default]
    Hierarchical,
    Monolithic,
}

/// Per-iteration progress record.
#[derive(Debug, Clone)]
pub struct TraceRow {
    pub iter: usize,
    pub r_inf: f64,
    pub tau: f64,
    pub alpha: f64,
    pub alpha_max: f64,
    pub merit: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SolveStatus {
    Converged,
    MaxIterations,
    Failed(String),
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub iterations: usize,
    pub trace: Vec<TraceRow>,
    /// Sum of the vehicle objectives at the final iterate.
    pub objective: f64,
    pub tau: f64,
    pub r_inf: f64,
}

/// Hooks for observing a solve; the communication simulation implements this
/// to timestamp its ledger.
pub trait SolveObserver: DirRecorder {
    fn begin_iteration(&mut self, _iter: usize) {}
    /// One Armijo trial (merit scalars travel up, the verdict travels down).
    fn step_trial(&mut self, _trial: usize) {}
    fn end_iteration(&mut self, _row: &TraceRow) {}
    /// Called with the iterate after each accepted step.
    fn post_step(&mut self, _it: &Iterate) {}
}

pub struct NullObserver;

impl DirRecorder for NullObserver {}
impl SolveObserver for NullObserver {}

/// Merit value split by block owner, as each node would evaluate it.
#[derive(Debug, Clone)]
pub struct MeritParts {
    pub vehicles: Vec<f64>,
    pub lanes: Vec<f64>,
    pub central: f64,
}

impl MeritParts {
    pub fn total(&self) -> f64 {
        // Fixed summation order keeps the value identical across solve paths.
        self.vehicles.iter().sum::<f64>() + self.lanes.iter().sum::<f64>() + self.central
    }
}

/// Local inequality values of one vehicle including any lane-variable
/// contribution routed through the coupling (the separator rows in the
/// parameterized modes).
fn vehicle_h_full(prob: &Problem, i: usize, it: &Iterate) -> (f64, nalgebra::DVector<f64>, nalgebra::DVector<f64>) {
    let vb = &prob.vehicles[i];
    let (j, g, mut h) = prob.vehicle_local_values(i, &it.vehicles[i].y);
    let c = prob.couple_down(i, &it.lanes[vb.lane]);
    for (bcol, col) in prob.coupling.basis[i].iter().enumerate() {
        for &(row, wgt) in col {
            if row >= vb.off_mu() && row < vb.off_s() {
                h[row - vb.off_mu()] += wgt * c[bcol];
            }
        }
    }
    (j, g, h)
}

fn l1(v: &nalgebra::DVector<f64>) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

/// l1 merit with barrier terms, blockwise.
pub fn merit(prob: &Problem, it: &Iterate, tau: f64, nu: f64) -> MeritParts {
    let mut vehicles = Vec::with_capacity(prob.n_vehicles());
    for i in 0..prob.n_vehicles() {
        let (j, g, h) = vehicle_h_full(prob, i, it);
        let s = &it.vehicles[i].s;
        let mut viol = l1(&g);
        for r in 0..h.len() {
            viol += (h[r] + s[r]).abs();
        }
        let logs: f64 = s.iter().map(|x| x.ln()).sum();
        vehicles.push(j + nu * viol - tau * logs);
    }

    let mut lanes = Vec::with_capacity(prob.lanes.len());
    for l in 0..prob.lanes.len() {
        let part = match prob.mode {
            RecaMode::Exact => {
                let n = prob.lanes[l].n_rows;
                if n == 0 {
                    0.0
                } else {
                    let r = prob.lane_residual(l, it, tau);
                    let viol: f64 = (0..n).map(|j| r[j].abs()).sum();
                    let logs: f64 = (0..n).map(|j| it.lanes[l][n + j].ln()).sum();
                    nu * viol - tau * logs
                }
            }
            RecaMode::Primal => 0.0,
            // Consensus equality constraints owned by the lane.
            RecaMode::Dual => nu * l1(&prob.lane_residual(l, it, tau)),
        };
        lanes.push(part);
    }

    let n_c = prob.central.n_c();
    let central = if n_c == 0 {
        0.0
    } else {
        let r = prob.central_residual(it, tau);
        let viol: f64 = (0..n_c).map(|c| r[c].abs()).sum();
        let logs: f64 = it.central.s.iter().map(|x| x.ln()).sum();
        nu * viol - tau * logs
    };

    MeritParts { vehicles, lanes, central }
}

/// Directional derivative of the merit along a Newton direction. The
/// direction solves the constraint linearizations exactly, so every l1 term
/// contributes its negated violation.
pub fn merit_directional_derivative(
    prob: &Problem,
    it: &Iterate,
    dir: &Direction,
    tau: f64,
    nu: f64,
) -> f64 {
    let mut grad_term = 0.0;
    let mut viol = 0.0;
    let mut slack_term = 0.0;
    for i in 0..prob.n_vehicles() {
        let (_, grad) = prob.vehicle_objective(i, &it.vehicles[i].y);
        grad_term += grad.dot(&dir.vehicles[i].y);
        let (_, g, h) = vehicle_h_full(prob, i, it);
        viol += l1(&g);
        let s = &it.vehicles[i].s;
        for r in 0..h.len() {
            viol += (h[r] + s[r]).abs();
        }
        for r in 0..s.len() {
            slack_term += dir.vehicles[i].s[r] / s[r];
        }
    }
    for l in 0..prob.lanes.len() {
        match prob.mode {
            RecaMode::Exact => {
                let n = prob.lanes[l].n_rows;
                if n > 0 {
                    let r = prob.lane_residual(l, it, tau);
                    viol += (0..n).map(|j| r[j].abs()).sum::<f64>();
                    for j in 0..n {
                        slack_term += dir.lanes[l][n + j] / it.lanes[l][n + j];
                    }
                }
            }
            RecaMode::Primal => {}
            RecaMode::Dual => viol += l1(&prob.lane_residual(l, it, tau)),
        }
    }
    let n_c = prob.central.n_c();
    if n_c > 0 {
        let r = prob.central_residual(it, tau);
        viol += (0..n_c).map(|c| r[c].abs()).sum::<f64>();
        for c in 0..n_c {
            slack_term += dir.central.s[c] / it.central.s[c];
        }
    }
    grad_term - nu * viol - tau * slack_term
}

/// Largest step in `(0, 1]` keeping all slacks and inequality multipliers
/// above `kappa` times their current value, blockwise minimum.
pub fn fraction_to_boundary(prob: &Problem, it: &Iterate, dir: &Direction, kappa: f64) -> f64 {
    fn cap(a: &mut f64, v: &nalgebra::DVector<f64>, d: &nalgebra::DVector<f64>, kappa: f64) {
        for j in 0..v.len() {
            if d[j] < 0.0 {
                *a = a.min((1.0 - kappa) * v[j] / (-d[j]));
            }
        }
    }
    let mut a = 1.0f64;
    for i in 0..prob.n_vehicles() {
        cap(&mut a, &it.vehicles[i].mu, &dir.vehicles[i].mu, kappa);
        cap(&mut a, &it.vehicles[i].s, &dir.vehicles[i].s, kappa);
    }
    if matches!(prob.mode, RecaMode::Exact) {
        for l in 0..prob.lanes.len() {
            cap(&mut a, &it.lanes[l], &dir.lanes[l], kappa);
        }
    }
    cap(&mut a, &it.central.mu, &dir.central.mu, kappa);
    cap(&mut a, &it.central.s, &dir.central.s, kappa);
    a
}

/// Fiacco-McCormick update with floor.
pub fn barrier_update(tau: f64, r_inf: f64, eta: f64, tau_min: f64) -> f64 {
    if r_inf < tau {
        (eta * tau).max(tau_min)
    } else {
        tau
    }
}

/// Termination test. With the floor active (`tau_min` at or above the
/// tolerance) only the residual condition applies once `tau` reaches it.
pub fn terminate(r_inf: f64, tau: f64, tol: f64, tau_min: f64) -> bool {
    r_inf < tol && (tau < tol || tau <= tau_min * (1.0 + 1e-12))
}

fn multiplier_inf_norm(prob: &Problem, it: &Iterate) -> f64 {
    let mut n = 0.0f64;
    for v in &it.vehicles {
        n = n.max(v.lam.amax()).max(v.mu.amax());
    }
    for (l, z) in it.lanes.iter().enumerate() {
        if z.is_empty() {
            continue;
        }
        match prob.mode {
            // First half of the lane block holds the rear-end multipliers.
            RecaMode::Exact => {
                let nr = prob.lanes[l].n_rows;
                for j in 0..nr {
                    n = n.max(z[j].abs());
                }
            }
            RecaMode::Primal => {}
            RecaMode::Dual => n = n.max(z.amax()),
        }
    }
    if !it.central.mu.is_empty() {
        n = n.max(it.central.mu.amax());
    }
    n
}

/// Backtracking line search on the merit. Returns the accepted step and the
/// merit value at it.
pub fn armijo_backtrack(
    prob: &Problem,
    it: &Iterate,
    dir: &Direction,
    alpha_max: f64,
    tau: f64,
    nu: f64,
    cfg: &SolverConfig,
    obs: &mut dyn SolveObserver,
) -> Result<(f64, f64)> {
    let phi0 = merit(prob, it, tau, nu).total();
    let dphi = merit_directional_derivative(prob, it, dir, tau, nu);
    if !(dphi < 0.0) {
        return Err(Error::DescentFailure(dphi));
    }
    let mut alpha = alpha_max;
    for trial in 0..cfg.max_trials {
        obs.step_trial(trial);
        let cand = prob.step(it, dir, alpha);
        let phi = merit(prob, &cand, tau, nu).total();
        if phi <= phi0 + alpha * cfg.gamma * dphi {
            return Ok((alpha, phi));
        }
        alpha *= cfg.beta;
    }
    Err(Error::LineSearchFailure(cfg.max_trials))
}

/// Run the interior-point loop from the built-in initial iterate.
pub fn solve(
    prob: &Problem,
    cfg: &SolverConfig,
    lin: LinSolver,
    obs: &mut dyn SolveObserver,
) -> (Iterate, SolveReport) {
    let mut it = match prob.initial_iterate() {
        Ok(it) => it,
        Err(e) => {
            // No iterate to report; an empty problem state is not
            // representable, so surface the failure with a zero-size trace.
            return (
                Iterate {
                    vehicles: vec![],
                    lanes: vec![],
                    central: crate::kkt_core::CentralVars {
                        mu: nalgebra::DVector::zeros(0),
                        s: nalgebra::DVector::zeros(0),
                    },
                },
                SolveReport {
                    status: SolveStatus::Failed(e.to_string()),
                    iterations: 0,
                    trace: vec![],
                    objective: f64::NAN,
                    tau: cfg.tau0,
                    r_inf: f64::NAN,
                },
            );
        }
    };
    let report = solve_from(prob, &mut it, cfg, lin, obs);
    (it, report)
}

/// Interior-point loop from a caller-provided interior iterate, mutated in
/// place to the final point.
pub fn solve_from(
    prob: &Problem,
    it: &mut Iterate,
    cfg: &SolverConfig,
    lin: LinSolver,
    obs: &mut dyn SolveObserver,
) -> SolveReport {
    let fail = |it: &Iterate, trace: Vec<TraceRow>, tau: f64, r_inf: f64, msg: String| {
        let objective =
            (0..prob.n_vehicles()).map(|i| prob.vehicle_objective(i, &it.vehicles[i].y).0).sum();
        SolveReport {
            status: SolveStatus::Failed(msg),
            iterations: trace.len(),
            trace,
            objective,
            tau,
            r_inf,
        }
    };

    if let Err(e) = cfg.validate() {
        return fail(it, vec![], cfg.tau0, f64::NAN, e.to_string());
    }
    let mut tau = cfg.tau0;
    let mut nu = 1.0f64;
    let mut trace: Vec<TraceRow> = Vec::new();
    let mut res = prob.residuals(it, tau);
    let mut r_inf = res.inf_norm();

    for iter in 1..=cfg.max_iters {
        if terminate(r_inf, tau, cfg.tol, cfg.tau_min) {
            let objective = (0..prob.n_vehicles())
                .map(|i| prob.vehicle_objective(i, &it.vehicles[i].y).0)
                .sum();
            return SolveReport {
                status: SolveStatus::Converged,
                iterations: trace.len(),
                trace,
                objective,
                tau,
                r_inf,
            };
        }
        let new_tau = barrier_update(tau, r_inf, cfg.eta, cfg.tau_min);
        if new_tau != tau {
            tau = new_tau;
            res = prob.residuals(it, tau);
            r_inf = res.inf_norm();
        }

        obs.begin_iteration(iter);
        nu = nu.max(1.0).max(1.1 * multiplier_inf_norm(prob, it));

        let dir = match lin {
            LinSolver::Hierarchical => search_direction(prob, it, &res, obs),
            LinSolver::Monolithic => dense_direction(prob, it, &res),
        };
        let dir = match dir {
            Ok(d) => d,
            Err(e) => return fail(it, trace, tau, r_inf, e.to_string()),
        };
        let alpha_max = fraction_to_boundary(prob, it, &dir, cfg.kappa);
        let (alpha, phi) =
            match armijo_backtrack(prob, it, &dir, alpha_max, tau, nu, cfg, obs) {
                Ok(v) => v,
                Err(e) => return fail(it, trace, tau, r_inf, e.to_string()),
            };

        *it = prob.step(it, &dir, alpha);
        prob.clip_iterate(it);
        obs.post_step(it);
        res = prob.residuals(it, tau);
        r_inf = res.inf_norm();

        let row = TraceRow { iter, r_inf, tau, alpha, alpha_max, merit: phi };
        obs.end_iteration(&row);
        trace.push(row);
    }

    if terminate(r_inf, tau, cfg.tol, cfg.tau_min) {
        let objective =
            (0..prob.n_vehicles()).map(|i| prob.vehicle_objective(i, &it.vehicles[i].y).0).sum();
        return SolveReport {
            status: SolveStatus::Converged,
            iterations: trace.len(),
            trace,
            objective,
            tau,
            r_inf,
        };
    }
    let objective =
        (0..prob.n_vehicles()).map(|i| prob.vehicle_objective(i, &it.vehicles[i].y).0).sum();
    SolveReport {
        status: SolveStatus::MaxIterations,
        iterations: trace.len(),
        trace,
        objective,
        tau,
        r_inf,
    }
}

/// Residual norms usable as a convergence probe on a finished iterate.
pub fn final_norms(prob: &Problem, it: &Iterate, tau: f64) -> (f64, Residuals) {
    let res = prob.residuals(it, tau);
    (res.inf_norm(), res)
}
