//! Problem assembly and KKT-system building blocks.
//!
//! A `Problem` instantiates the coordination NLP for one of three rear-end
//! coupling modes:
//! - `Exact`: rear-end rows live at the lane centers, one row per adjacent
//!   pair and node, coupled to the vehicles through the position trajectory.
//! - `Primal`: a piecewise-linear separator per adjacent pair, with the knot
//!   vector `theta` owned by the lane center and the separation rows on board
//!   the vehicles.
//! - `Dual`: each vehicle owns copies of its neighboring knot vectors, with
//!   lane-center consensus multipliers tying the copies together.
//!
//! The block coupling is described uniformly by three sparse structures per
//! vehicle: a basis (columns in vehicle coordinates), a lane scatter (how
//! basis columns enter lane rows, with signs) and a central scatter (how
//! crossing times enter the crossing-order rows). Both the residual and the
//! off-diagonal KKT blocks are linear in these structures, which is what makes
//! the hierarchical elimination exact.

use crate::linalg::LdltFactor;
use crate::reca_param::{rho_weights, theta_init, RhoSlope, Q};
use crate::scenario::{CrossingPair, Scenario};
use crate::transcription::{ConstraintEval, VehicleTranscription};
use crate::vehicle_model::VehicleState;
use crate::{Error, Result};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum RecaMode {
    #[default]
    Exact,
    Primal,
    Dual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum HessianMode {
    #[default]
    GaussNewton,
    Exact,
}

/// Lane-center Hessian regularization in primal mode (the separator knots
/// carry no curvature of their own).
pub const LANE_REG: f64 = 1e-6;

/// Escalation ladder for the vehicle-level inertia correction.
const ZETAS: [f64; 8] = [0.0, 1e-6, 1e-4, 1e-2, 1.0, 1e2, 1e4, 1e6];

#[derive(Debug, Clone, Copy)]
pub struct Separator {
    /// Rear vehicle of the pair.
    pub rear: usize,
    /// Front vehicle of the pair.
    pub front: usize,
    /// Required gap, the rear vehicle's safety margin.
    pub delta: f64,
}

#[derive(Debug, Clone)]
pub struct VehicleBlock {
    pub tr: VehicleTranscription,
    pub lane: usize,
    pub pos_in_lane: usize,
    /// Separator ahead of this vehicle (it is the rear of that pair).
    pub front_sep: Option<usize>,
    /// Separator behind this vehicle (it is the front of that pair).
    pub rear_sep: Option<usize>,
    pub n_y: usize,
    pub n_g: usize,
    pub n_h: usize,
    /// Offset of the front separation rows in the inequality stack.
    pub front_row0: usize,
    /// Offset of the rear separation rows.
    pub rear_row0: usize,
    /// Offset in `y` of the rear-separator knot copy (dual mode).
    pub rear_copy0: usize,
    /// Offset in `y` of the front-separator knot copy (dual mode).
    pub front_copy0: usize,
}

impl VehicleBlock {
    pub fn n_v(&self) -> usize {
        self.n_y + self.n_g + 2 * self.n_h
    }

    pub fn off_lam(&self) -> usize {
        self.n_y
    }

    pub fn off_mu(&self) -> usize {
        self.n_y + self.n_g
    }

    pub fn off_s(&self) -> usize {
        self.n_y + self.n_g + self.n_h
    }
}

#[derive(Debug, Clone)]
pub struct LaneBlock {
    /// Vehicle indices, rear to front.
    pub vehicles: Vec<usize>,
    pub separators: Vec<Separator>,
    /// Lane variable count: `2 (m-1)(K+1)` in exact mode (multipliers and
    /// slacks of the rear-end rows), `(m-1) q` otherwise.
    pub n_z: usize,
    /// Rows receiving vehicle coupling: `(m-1)(K+1)` exact, `(m-1) q` else.
    pub n_rows: usize,
}

#[derive(Debug, Clone)]
pub struct CentralBlock {
    pub pairs: Vec<CrossingPair>,
}

impl CentralBlock {
    pub fn n_c(&self) -> usize {
        self.pairs.len()
    }
}

/// One sparse basis column in vehicle-block coordinates.
pub type BasisCol = Vec<(usize, f64)>;

#[derive(Debug, Clone)]
pub struct Coupling {
    /// Per vehicle: basis columns spanning the lane-coupled directions.
    pub basis: Vec<Vec<BasisCol>>,
    /// Per vehicle: `(lane_row, basis_col, sign)` placement into lane rows.
    pub scatter: Vec<Vec<(usize, usize, f64)>>,
    /// Per vehicle: `(pair_row, local_t_index, sign)` placement of crossing
    /// times into the crossing-order rows.
    pub theta: Vec<Vec<(usize, usize, f64)>>,
}

#[derive(Debug, Clone)]
pub struct Problem {
    pub scenario: Scenario,
    pub mode: RecaMode,
    pub hessian: HessianMode,
    pub rho_slope: RhoSlope,
    pub vehicles: Vec<VehicleBlock>,
    pub lanes: Vec<LaneBlock>,
    pub central: CentralBlock,
    pub coupling: Coupling,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VehicleVars {
    pub y: DVector<f64>,
    pub lam: DVector<f64>,
    pub mu: DVector<f64>,
    pub s: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CentralVars {
    pub mu: DVector<f64>,
    pub s: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Iterate {
    pub vehicles: Vec<VehicleVars>,
    /// Lane variables: `(mu_L, s_L)` exact, `theta` primal, consensus
    /// multipliers dual.
    pub lanes: Vec<DVector<f64>>,
    pub central: CentralVars,
}

/// Search directions share the iterate layout.
pub type Direction = Iterate;

#[derive(Debug, Clone)]
pub struct Residuals {
    pub vehicles: Vec<DVector<f64>>,
    pub lanes: Vec<DVector<f64>>,
    pub central: DVector<f64>,
}

impl Residuals {
    pub fn inf_norm(&self) -> f64 {
        let mut n = 0.0f64;
        for r in &self.vehicles {
            n = n.max(r.amax());
        }
        for r in self.lanes.iter().filter(|r| !r.is_empty()) {
            n = n.max(r.amax());
        }
        if !self.central.is_empty() {
            n = n.max(self.central.amax());
        }
        n
    }
}

impl Problem {
    pub fn new(
        scenario: Scenario,
        mode: RecaMode,
        hessian: HessianMode,
        rho_slope: RhoSlope,
    ) -> Result<Problem> {
        scenario.validate()?;
        let big_k = scenario.horizon;
        let param = !matches!(mode, RecaMode::Exact);
        if param && big_k < 3 {
            return Err(Error::InvalidScenario(
                "parameterized modes need a horizon of at least 3".into(),
            ));
        }

        let mut vehicles = Vec::with_capacity(scenario.vehicles.len());
        for vi in 0..scenario.vehicles.len() {
            let v = &scenario.vehicles[vi];
            let tr = VehicleTranscription::new(
                vi,
                scenario.params_of(vi),
                big_k,
                scenario.dt,
                VehicleState { p: v.p0, v: v.v0 },
                v.v_ref,
                scenario.crossings_of(vi),
            );
            let lane = v.lane;
            let pos = scenario.lanes[lane].vehicles.iter().position(|&x| x == vi).unwrap();
            let m = scenario.lanes[lane].vehicles.len();
            let front_sep = (pos + 1 < m).then_some(pos);
            let rear_sep = (pos > 0).then(|| pos - 1);

            let n_hp = tr.n_h();
            let front_rows = if param && front_sep.is_some() { big_k + 1 } else { 0 };
            let rear_rows = if param && rear_sep.is_some() { big_k + 1 } else { 0 };
            let n_h = n_hp + front_rows + rear_rows;
            let front_row0 = n_hp;
            let rear_row0 = n_hp + front_rows;

            let dual = matches!(mode, RecaMode::Dual);
            let rear_copies = if dual && rear_sep.is_some() { Q } else { 0 };
            let front_copies = if dual && front_sep.is_some() { Q } else { 0 };
            let rear_copy0 = tr.n_y();
            let front_copy0 = tr.n_y() + rear_copies;
            let n_y = tr.n_y() + rear_copies + front_copies;
            let n_g = tr.n_g();

            vehicles.push(VehicleBlock {
                tr,
                lane,
                pos_in_lane: pos,
                front_sep,
                rear_sep,
                n_y,
                n_g,
                n_h,
                front_row0,
                rear_row0,
                rear_copy0,
                front_copy0,
            });
        }

        let mut lanes = Vec::with_capacity(scenario.lanes.len());
        for lane in &scenario.lanes {
            let separators: Vec<Separator> = lane
                .vehicles
                .windows(2)
                .map(|w| Separator {
                    rear: w[0],
                    front: w[1],
                    delta: scenario.params_of(w[0]).delta,
                })
                .collect();
            let n_sep = separators.len();
            let (n_z, n_rows) = match mode {
                RecaMode::Exact => (2 * n_sep * (big_k + 1), n_sep * (big_k + 1)),
                RecaMode::Primal | RecaMode::Dual => (n_sep * Q, n_sep * Q),
            };
            lanes.push(LaneBlock { vehicles: lane.vehicles.clone(), separators, n_z, n_rows });
        }

        let central = CentralBlock { pairs: scenario.order.clone() };

        // Coupling structures.
        let mut basis = vec![Vec::new(); vehicles.len()];
        let mut scatter = vec![Vec::new(); vehicles.len()];
        let mut theta = vec![Vec::new(); vehicles.len()];
        for (vi, vb) in vehicles.iter().enumerate() {
            let tr = &vb.tr;
            match mode {
                RecaMode::Exact => {
                    if vb.front_sep.is_some() || vb.rear_sep.is_some() {
                        for k in 0..=big_k {
                            basis[vi].push(vec![(tr.idx_p(k), 1.0)]);
                        }
                        if let Some(j) = vb.front_sep {
                            for k in 0..=big_k {
                                scatter[vi].push((j * (big_k + 1) + k, k, 1.0));
                            }
                        }
                        if let Some(j) = vb.rear_sep {
                            for k in 0..=big_k {
                                scatter[vi].push((j * (big_k + 1) + k, k, -1.0));
                            }
                        }
                    }
                }
                RecaMode::Primal => {
                    // Basis column order: rear block first, then front block,
                    // matching the (theta_{i,i-1}, theta_{i,i}) convention.
                    let mut bcol = 0;
                    if let Some(j) = vb.rear_sep {
                        for c in 0..Q {
                            let col = (0..=big_k)
                                .map(|k| {
                                    let w = rho_weights(k, big_k, rho_slope)[c];
                                    (vb.off_mu() + vb.rear_row0 + k, w)
                                })
                                .collect();
                            basis[vi].push(col);
                            scatter[vi].push((j * Q + c, bcol, 1.0));
                            bcol += 1;
                        }
                    }
                    if let Some(j) = vb.front_sep {
                        for c in 0..Q {
                            let col = (0..=big_k)
                                .map(|k| {
                                    let w = rho_weights(k, big_k, rho_slope)[c];
                                    (vb.off_mu() + vb.front_row0 + k, -w)
                                })
                                .collect();
                            basis[vi].push(col);
                            scatter[vi].push((j * Q + c, bcol, 1.0));
                            bcol += 1;
                        }
                    }
                }
                RecaMode::Dual => {
                    let mut bcol = 0;
                    if let Some(j) = vb.rear_sep {
                        for c in 0..Q {
                            basis[vi].push(vec![(vb.rear_copy0 + c, 1.0)]);
                            scatter[vi].push((j * Q + c, bcol, -1.0));
                            bcol += 1;
                        }
                    }
                    if let Some(j) = vb.front_sep {
                        for c in 0..Q {
                            basis[vi].push(vec![(vb.front_copy0 + c, 1.0)]);
                            scatter[vi].push((j * Q + c, bcol, 1.0));
                            bcol += 1;
                        }
                    }
                }
            }
            for (row, pair) in central.pairs.iter().enumerate() {
                if pair.first == vi {
                    let (_, t_out) = tr.zone_time_indices(pair.zone).unwrap();
                    theta[vi].push((row, t_out - tr.n_w(), 1.0));
                }
                if pair.second == vi {
                    let (t_in, _) = tr.zone_time_indices(pair.zone).unwrap();
                    theta[vi].push((row, t_in - tr.n_w(), -1.0));
                }
            }
        }

        Ok(Problem {
            scenario,
            mode,
            hessian,
            rho_slope,
            vehicles,
            lanes,
            central,
            coupling: Coupling { basis, scatter, theta },
        })
    }

    pub fn n_vehicles(&self) -> usize {
        self.vehicles.len()
    }

    pub fn big_k(&self) -> usize {
        self.scenario.horizon
    }

    /// Objective value and gradient over the (possibly extended) `y`.
    pub fn vehicle_objective(&self, i: usize, y: &DVector<f64>) -> (f64, DVector<f64>) {
        let vb = &self.vehicles[i];
        let core = y.rows(0, vb.tr.n_y()).into_owned();
        let (j, grad_core) = vb.tr.objective(&core);
        let mut grad = DVector::zeros(vb.n_y);
        grad.rows_mut(0, vb.tr.n_y()).copy_from(&grad_core);
        (j, grad)
    }

    /// Local constraint evaluation: values and Jacobians with respect to the
    /// vehicle's own variables only. In primal mode the separator rows carry
    /// only their `p +- delta/2` part here; the knot contribution enters
    /// through the lane coupling.
    pub fn vehicle_local(&self, i: usize, y: &DVector<f64>) -> ConstraintEval {
        let vb = &self.vehicles[i];
        let tr = &vb.tr;
        let big_k = self.big_k();
        let core = y.rows(0, tr.n_y()).into_owned();
        let ev = tr.eval_constraints(&core);
        if matches!(self.mode, RecaMode::Exact) {
            debug_assert_eq!(vb.n_y, tr.n_y());
            return ev;
        }

        let mut g_jac = DMatrix::zeros(vb.n_g, vb.n_y);
        g_jac.view_mut((0, 0), (vb.n_g, tr.n_y())).copy_from(&ev.jg);
        let mut h = DVector::zeros(vb.n_h);
        h.rows_mut(0, tr.n_h()).copy_from(&ev.h);
        let mut h_jac = DMatrix::zeros(vb.n_h, vb.n_y);
        h_jac.view_mut((0, 0), (tr.n_h(), tr.n_y())).copy_from(&ev.jh);

        let dual = matches!(self.mode, RecaMode::Dual);
        if let Some(j) = vb.front_sep {
            let delta = self.lanes[vb.lane].separators[j].delta;
            for k in 0..=big_k {
                let row = vb.front_row0 + k;
                h[row] = y[tr.idx_p(k)] + 0.5 * delta;
                h_jac[(row, tr.idx_p(k))] = 1.0;
                if dual {
                    let w = rho_weights(k, big_k, self.rho_slope);
                    for c in 0..Q {
                        h[row] -= w[c] * y[vb.front_copy0 + c];
                        h_jac[(row, vb.front_copy0 + c)] = -w[c];
                    }
                }
            }
        }
        if let Some(j) = vb.rear_sep {
            let delta = self.lanes[vb.lane].separators[j].delta;
            for k in 0..=big_k {
                let row = vb.rear_row0 + k;
                h[row] = 0.5 * delta - y[tr.idx_p(k)];
                h_jac[(row, tr.idx_p(k))] = -1.0;
                if dual {
                    let w = rho_weights(k, big_k, self.rho_slope);
                    for c in 0..Q {
                        h[row] += w[c] * y[vb.rear_copy0 + c];
                        h_jac[(row, vb.rear_copy0 + c)] = w[c];
                    }
                }
            }
        }
        ConstraintEval { g: ev.g, jg: g_jac, h, jh: h_jac }
    }

    /// Value-only local evaluation (objective, equalities, local inequality
    /// stack); used by the line search.
    pub fn vehicle_local_values(
        &self,
        i: usize,
        y: &DVector<f64>,
    ) -> (f64, DVector<f64>, DVector<f64>) {
        let vb = &self.vehicles[i];
        let tr = &vb.tr;
        let big_k = self.big_k();
        let core = y.rows(0, tr.n_y()).into_owned();
        let (j, g, h_core) = tr.eval_values(&core);
        if matches!(self.mode, RecaMode::Exact) {
            return (j, g, h_core);
        }
        let mut h = DVector::zeros(vb.n_h);
        h.rows_mut(0, tr.n_h()).copy_from(&h_core);
        let dual = matches!(self.mode, RecaMode::Dual);
        if let Some(jj) = vb.front_sep {
            let delta = self.lanes[vb.lane].separators[jj].delta;
            for k in 0..=big_k {
                let row = vb.front_row0 + k;
                h[row] = y[tr.idx_p(k)] + 0.5 * delta;
                if dual {
                    let w = rho_weights(k, big_k, self.rho_slope);
                    for c in 0..Q {
                        h[row] -= w[c] * y[vb.front_copy0 + c];
                    }
                }
            }
        }
        if let Some(jj) = vb.rear_sep {
            let delta = self.lanes[vb.lane].separators[jj].delta;
            for k in 0..=big_k {
                let row = vb.rear_row0 + k;
                h[row] = 0.5 * delta - y[tr.idx_p(k)];
                if dual {
                    let w = rho_weights(k, big_k, self.rho_slope);
                    for c in 0..Q {
                        h[row] += w[c] * y[vb.rear_copy0 + c];
                    }
                }
            }
        }
        (j, g, h)
    }

    pub fn pack_vehicle(&self, i: usize, v: &VehicleVars) -> DVector<f64> {
        let vb = &self.vehicles[i];
        let mut z = DVector::zeros(vb.n_v());
        z.rows_mut(0, vb.n_y).copy_from(&v.y);
        z.rows_mut(vb.off_lam(), vb.n_g).copy_from(&v.lam);
        z.rows_mut(vb.off_mu(), vb.n_h).copy_from(&v.mu);
        z.rows_mut(vb.off_s(), vb.n_h).copy_from(&v.s);
        z
    }

    pub fn unpack_vehicle(&self, i: usize, z: &DVector<f64>) -> VehicleVars {
        let vb = &self.vehicles[i];
        VehicleVars {
            y: z.rows(0, vb.n_y).into_owned(),
            lam: z.rows(vb.off_lam(), vb.n_g).into_owned(),
            mu: z.rows(vb.off_mu(), vb.n_h).into_owned(),
            s: z.rows(vb.off_s(), vb.n_h).into_owned(),
        }
    }

    /// Down-coupling vector `Sc_i' z_L` in basis coordinates.
    pub fn couple_down(&self, i: usize, lane_z: &DVector<f64>) -> DVector<f64> {
        let mut c = DVector::zeros(self.coupling.basis[i].len());
        for &(lane_row, bcol, sign) in &self.coupling.scatter[i] {
            c[bcol] += sign * lane_z[lane_row];
        }
        c
    }

    /// Up-coupling `U_i' z_v` in basis coordinates.
    pub fn couple_up(&self, i: usize, z_v: &DVector<f64>) -> DVector<f64> {
        let cols = &self.coupling.basis[i];
        let mut u = DVector::zeros(cols.len());
        for (bcol, col) in cols.iter().enumerate() {
            for &(row, wgt) in col {
                u[bcol] += wgt * z_v[row];
            }
        }
        u
    }

    /// Full vehicle residual (reported form: complementarity rows are
    /// `s mu - tau`), including lane and central coupling terms.
    pub fn vehicle_residual(
        &self,
        i: usize,
        vars: &VehicleVars,
        lane_z: &DVector<f64>,
        mu_c: &DVector<f64>,
        tau: f64,
    ) -> DVector<f64> {
        let vb = &self.vehicles[i];
        let ev = self.vehicle_local(i, &vars.y);
        let (_, grad) = self.vehicle_objective(i, &vars.y);
        let mut r = DVector::zeros(vb.n_v());
        let r1 = grad + ev.jg.transpose() * &vars.lam + ev.jh.transpose() * &vars.mu;
        r.rows_mut(0, vb.n_y).copy_from(&r1);
        r.rows_mut(vb.off_lam(), vb.n_g).copy_from(&ev.g);
        for j in 0..vb.n_h {
            r[vb.off_mu() + j] = ev.h[j] + vars.s[j];
            r[vb.off_s() + j] = vars.s[j] * vars.mu[j] - tau;
        }
        // Lane coupling: U (Sc' z_L).
        let c = self.couple_down(i, lane_z);
        for (bcol, col) in self.coupling.basis[i].iter().enumerate() {
            for &(row, wgt) in col {
                r[row] += wgt * c[bcol];
            }
        }
        // Crossing-order multipliers into the T-stationarity rows.
        let n_w = vb.tr.n_w();
        for &(pair_row, t_local, sign) in &self.coupling.theta[i] {
            r[n_w + t_local] += sign * mu_c[pair_row];
        }
        r
    }

    /// Lane residual (reported form).
    pub fn lane_residual(&self, l: usize, it: &Iterate, tau: f64) -> DVector<f64> {
        let lane = &self.lanes[l];
        let lane_z = &it.lanes[l];
        let mut up = DVector::zeros(lane.n_rows);
        for &vi in &lane.vehicles {
            let z_v = self.pack_vehicle(vi, &it.vehicles[vi]);
            let u = self.couple_up(vi, &z_v);
            for &(lane_row, bcol, sign) in &self.coupling.scatter[vi] {
                up[lane_row] += sign * u[bcol];
            }
        }
        match self.mode {
            RecaMode::Exact => {
                let n = lane.n_rows;
                let big_k = self.big_k();
                let mut r = DVector::zeros(lane.n_z);
                for (j, sep) in lane.separators.iter().enumerate() {
                    for k in 0..=big_k {
                        let row = j * (big_k + 1) + k;
                        let (mu, s) = (lane_z[row], lane_z[n + row]);
                        r[row] = up[row] + sep.delta + s;
                        r[n + row] = s * mu - tau;
                    }
                }
                r
            }
            RecaMode::Primal | RecaMode::Dual => up,
        }
    }

    /// Central residual (reported form): crossing-order rows plus
    /// complementarity.
    pub fn central_residual(&self, it: &Iterate, tau: f64) -> DVector<f64> {
        let n_c = self.central.n_c();
        let mut r = DVector::zeros(2 * n_c);
        for (vi, vb) in self.vehicles.iter().enumerate() {
            let y = &it.vehicles[vi].y;
            for &(pair_row, t_local, sign) in &self.coupling.theta[vi] {
                r[pair_row] += sign * y[vb.tr.n_w() + t_local];
            }
        }
        for c in 0..n_c {
            r[c] += it.central.s[c];
            r[n_c + c] = it.central.s[c] * it.central.mu[c] - tau;
        }
        r
    }

    pub fn residuals(&self, it: &Iterate, tau: f64) -> Residuals {
        let vehicles = (0..self.n_vehicles())
            .map(|i| {
                self.vehicle_residual(
                    i,
                    &it.vehicles[i],
                    &it.lanes[self.vehicles[i].lane],
                    &it.central.mu,
                    tau,
                )
            })
            .collect();
        let lanes = (0..self.lanes.len()).map(|l| self.lane_residual(l, it, tau)).collect();
        Residuals { vehicles, lanes, central: self.central_residual(it, tau) }
    }

    /// Convert a reported-form residual block stack to solver form by scaling
    /// the complementarity rows with the corresponding slacks.
    pub fn to_solver_form(&self, r: &mut Residuals, it: &Iterate) {
        for (i, rv) in r.vehicles.iter_mut().enumerate() {
            let vb = &self.vehicles[i];
            for j in 0..vb.n_h {
                rv[vb.off_s() + j] /= it.vehicles[i].s[j];
            }
        }
        if matches!(self.mode, RecaMode::Exact) {
            for (l, rl) in r.lanes.iter_mut().enumerate() {
                let n = self.lanes[l].n_rows;
                for j in 0..n {
                    rl[n + j] /= it.lanes[l][n + j];
                }
            }
        }
        let n_c = self.central.n_c();
        for c in 0..n_c {
            r.central[n_c + c] /= it.central.s[c];
        }
    }

    /// Initial iterate: constant-control rollouts, unit multipliers and
    /// slacks, separator knots at mid-gap.
    pub fn initial_iterate(&self) -> Result<Iterate> {
        let big_k = self.big_k();
        let mut core_guesses = Vec::with_capacity(self.n_vehicles());
        for vb in &self.vehicles {
            core_guesses.push(vb.tr.initial_guess()?);
        }
        let p_traj = |vi: usize| -> DVector<f64> {
            let tr = &self.vehicles[vi].tr;
            DVector::from_fn(big_k + 1, |k, _| core_guesses[vi][tr.idx_p(k)])
        };

        let mut vehicles = Vec::with_capacity(self.n_vehicles());
        for (vi, vb) in self.vehicles.iter().enumerate() {
            let mut y = DVector::zeros(vb.n_y);
            y.rows_mut(0, vb.tr.n_y()).copy_from(&core_guesses[vi]);
            if matches!(self.mode, RecaMode::Dual) {
                if let Some(j) = vb.rear_sep {
                    let sep = &self.lanes[vb.lane].separators[j];
                    let th = theta_init(&p_traj(sep.rear), &p_traj(sep.front), big_k);
                    for c in 0..Q {
                        y[vb.rear_copy0 + c] = th[c];
                    }
                }
                if let Some(j) = vb.front_sep {
                    let sep = &self.lanes[vb.lane].separators[j];
                    let th = theta_init(&p_traj(sep.rear), &p_traj(sep.front), big_k);
                    for c in 0..Q {
                        y[vb.front_copy0 + c] = th[c];
                    }
                }
            }
            vehicles.push(VehicleVars {
                y,
                lam: DVector::zeros(vb.n_g),
                mu: DVector::from_element(vb.n_h, 1.0),
                s: DVector::from_element(vb.n_h, 1.0),
            });
        }

        let mut lanes = Vec::with_capacity(self.lanes.len());
        for lane in &self.lanes {
            let z = match self.mode {
                RecaMode::Exact => DVector::from_element(lane.n_z, 1.0),
                RecaMode::Primal => {
                    let mut z = DVector::zeros(lane.n_z);
                    for (j, sep) in lane.separators.iter().enumerate() {
                        let th = theta_init(&p_traj(sep.rear), &p_traj(sep.front), big_k);
                        for c in 0..Q {
                            z[j * Q + c] = th[c];
                        }
                    }
                    z
                }
                RecaMode::Dual => DVector::zeros(lane.n_z),
            };
            lanes.push(z);
        }

        let n_c = self.central.n_c();
        Ok(Iterate {
            vehicles,
            lanes,
            central: CentralVars {
                mu: DVector::from_element(n_c, 1.0),
                s: DVector::from_element(n_c, 1.0),
            },
        })
    }

    /// Clamp every vehicle's crossing times strictly inside the horizon.
    pub fn clip_iterate(&self, it: &mut Iterate) {
        for (vi, vb) in self.vehicles.iter().enumerate() {
            let tr = &vb.tr;
            let (lo, hi) = (crate::transcription::T_MARGIN, tr.t_max() - crate::transcription::T_MARGIN);
            for r in 0..tr.n_t() {
                let idx = tr.idx_t(r);
                it.vehicles[vi].y[idx] = it.vehicles[vi].y[idx].clamp(lo, hi);
            }
        }
    }

    /// `it + alpha * dir`, blockwise.
    pub fn step(&self, it: &Iterate, dir: &Direction, alpha: f64) -> Iterate {
        let vehicles = it
            .vehicles
            .iter()
            .zip(&dir.vehicles)
            .map(|(v, d)| VehicleVars {
                y: &v.y + &d.y * alpha,
                lam: &v.lam + &d.lam * alpha,
                mu: &v.mu + &d.mu * alpha,
                s: &v.s + &d.s * alpha,
            })
            .collect();
        let lanes = it.lanes.iter().zip(&dir.lanes).map(|(z, d)| z + d * alpha).collect();
        let central = CentralVars {
            mu: &it.central.mu + &dir.central.mu * alpha,
            s: &it.central.s + &dir.central.s * alpha,
        };
        Iterate { vehicles, lanes, central }
    }

    /// True if all slacks and inequality multipliers are strictly positive.
    pub fn is_interior(&self, it: &Iterate) -> bool {
        let pos = |v: &DVector<f64>| v.iter().all(|&x| x > 0.0);
        if !it.vehicles.iter().all(|v| pos(&v.mu) && pos(&v.s)) {
            return false;
        }
        if matches!(self.mode, RecaMode::Exact)
            && !it.lanes.iter().all(|z| z.iter().all(|&x| x > 0.0))
        {
            return false;
        }
        pos(&it.central.mu) && pos(&it.central.s)
    }

    /// Hessian block `B` of vehicle `i` at the current point.
    pub fn vehicle_hessian(&self, i: usize, vars: &VehicleVars) -> DMatrix<f64> {
        let vb = &self.vehicles[i];
        match self.hessian {
            HessianMode::GaussNewton => {
                let mut b = DMatrix::zeros(vb.n_y, vb.n_y);
                let d = vb.tr.gn_hessian_diag();
                for j in 0..vb.tr.n_y() {
                    b[(j, j)] = d[j];
                }
                // Knot copies (dual mode) carry the same floor regularization.
                for j in vb.tr.n_y()..vb.n_y {
                    b[(j, j)] = 1e-8;
                }
                b
            }
            HessianMode::Exact => {
                let core = vars.y.rows(0, vb.tr.n_y()).into_owned();
                let mu_path = vars.mu.rows(0, vb.tr.n_h()).into_owned();
                let core_h = vb.tr.lagrangian_hessian(&core, &vars.lam, &mu_path);
                let mut b = DMatrix::zeros(vb.n_y, vb.n_y);
                b.view_mut((0, 0), (vb.tr.n_y(), vb.tr.n_y())).copy_from(&core_h);
                b
            }
        }
    }

    /// Factor the vehicle KKT block by eliminating `(mu, s)` into a condensed
    /// symmetric-indefinite system, escalating the inertia correction until
    /// the block is second-order consistent.
    pub fn vehicle_factor(&self, i: usize, vars: &VehicleVars) -> Result<VehicleFactor> {
        let vb = &self.vehicles[i];
        let ev = self.vehicle_local(i, &vars.y);
        let b = self.vehicle_hessian(i, vars);
        let sigma = DVector::from_fn(vb.n_h, |j, _| vars.mu[j] / vars.s[j]);
        let g_mat = ev.jg.transpose();
        let h_mat = ev.jh.transpose();

        let n = vb.n_y + vb.n_g;
        let mut kc0 = DMatrix::zeros(n, n);
        // B + H Sigma H'.
        let mut h_scaled = h_mat.clone();
        for j in 0..vb.n_h {
            h_scaled.column_mut(j).scale_mut(sigma[j]);
        }
        let byy = &b + &h_scaled * h_mat.transpose();
        kc0.view_mut((0, 0), (vb.n_y, vb.n_y)).copy_from(&byy);
        kc0.view_mut((0, vb.n_y), (vb.n_y, vb.n_g)).copy_from(&g_mat);
        kc0.view_mut((vb.n_y, 0), (vb.n_g, vb.n_y)).copy_from(&g_mat.transpose());

        for &zeta in &ZETAS {
            let mut kc = kc0.clone();
            for j in 0..vb.n_y {
                kc[(j, j)] += zeta;
            }
            let fac = LdltFactor::new(&kc);
            let inertia = fac.inertia();
            if !fac.is_singular()
                && inertia.positive == vb.n_y
                && inertia.negative == vb.n_g
            {
                return Ok(VehicleFactor {
                    n_y: vb.n_y,
                    n_g: vb.n_g,
                    n_h: vb.n_h,
                    g_mat,
                    h_mat,
                    sigma,
                    kc,
                    fac,
                    zeta,
                });
            }
        }
        Err(Error::RegularizationFailure(*ZETAS.last().unwrap()))
    }
}

/// Condensed factorization of one vehicle block, able to solve against any
/// right-hand side in full `(y, lam, mu, s)` coordinates.
pub struct VehicleFactor {
    pub n_y: usize,
    pub n_g: usize,
    pub n_h: usize,
    /// `grad g` as columns (`n_y x n_g`).
    pub g_mat: DMatrix<f64>,
    /// `grad h` as columns (`n_y x n_h`).
    pub h_mat: DMatrix<f64>,
    pub sigma: DVector<f64>,
    kc: DMatrix<f64>,
    fac: LdltFactor,
    pub zeta: f64,
}

impl VehicleFactor {
    pub fn n_v(&self) -> usize {
        self.n_y + self.n_g + 2 * self.n_h
    }

    /// Solve `M_v delta = rhs` with `rhs` in solver form (complementarity rows
    /// already scaled by `1/s`).
    pub fn solve(&self, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        let (n_y, n_g, n_h) = (self.n_y, self.n_g, self.n_h);
        let b1 = rhs.rows(0, n_y);
        let b2 = rhs.rows(n_y, n_g);
        let b3 = rhs.rows(n_y + n_g, n_h);
        let b4 = rhs.rows(n_y + n_g + n_h, n_h);

        let mut rc = DVector::zeros(n_y + n_g);
        let adj = DVector::from_fn(n_h, |j, _| b4[j] - self.sigma[j] * b3[j]);
        rc.rows_mut(0, n_y).copy_from(&(b1 - &self.h_mat * adj));
        rc.rows_mut(n_y, n_g).copy_from(&b2);
        let sol = self.fac.solve_refined(&self.kc, &rc, 2)?;

        let dy = sol.rows(0, n_y).into_owned();
        let dl = sol.rows(n_y, n_g).into_owned();
        let ds = b3 - self.h_mat.transpose() * &dy;
        let dmu = DVector::from_fn(n_h, |j, _| b4[j] - self.sigma[j] * ds[j]);

        let mut out = DVector::zeros(self.n_v());
        out.rows_mut(0, n_y).copy_from(&dy);
        out.rows_mut(n_y, n_g).copy_from(&dl);
        out.rows_mut(n_y + n_g, n_h).copy_from(&dmu);
        out.rows_mut(n_y + n_g + n_h, n_h).copy_from(&ds);
        out
            .iter()
            .all(|v| v.is_finite())
            .then_some(out)
            .ok_or_else(|| Error::Singular("vehicle block".into()))
    }

    /// Apply the local KKT matrix (solver form) to a full-coordinate vector.
    pub fn apply(&self, b_block: &DMatrix<f64>, z: &DVector<f64>) -> DVector<f64> {
        let (n_y, n_g, n_h) = (self.n_y, self.n_g, self.n_h);
        let zy = z.rows(0, n_y);
        let zl = z.rows(n_y, n_g);
        let zm = z.rows(n_y + n_g, n_h);
        let zs = z.rows(n_y + n_g + n_h, n_h);
        let mut out = DVector::zeros(self.n_v());
        out.rows_mut(0, n_y)
            .copy_from(&(b_block * zy + &self.g_mat * zl + &self.h_mat * zm));
        out.rows_mut(n_y, n_g).copy_from(&(self.g_mat.transpose() * zy));
        out.rows_mut(n_y + n_g, n_h)
            .copy_from(&(self.h_mat.transpose() * zy + zs));
        for j in 0..n_h {
            out[n_y + n_g + n_h + j] = zm[j] + self.sigma[j] * zs[j];
        }
        out
    }
}
