//! Direct multiple-shooting transcription of one vehicle's OCP, plus the
//! lane-level rear-end rows and intersection-level crossing-order rows.
//!
//! Per-vehicle decision vector `y = (w, T)` with `w` interleaved as
//! `(x_0, u_0, x_1, u_1, ..., u_{K-1}, x_K)`, states `x = (p, v)` and controls
//! `u = (E, Fb)`, followed by the crossing times `T` (an entry/exit pair per
//! conflict-zone traversal, traversals sorted by entry position).

use crate::scenario::Crossing;
use crate::vehicle_model::{
    position_at, rk4_step, rk4_step_second_order, steady_state_control, VehicleControl,
    VehicleParams, VehicleState,
};
use crate::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// Crossing times are kept strictly inside the horizon by this margin.
pub const T_MARGIN: f64 = 1e-6;

/// Rows of the path-constraint block per interior node.
pub const PATH_ROWS_PER_NODE: usize = 4;
/// Rows of the path-constraint block at the terminal node.
pub const PATH_ROWS_TERMINAL: usize = 2;

#[derive(Debug, Clone)]
pub struct VehicleTranscription {
    /// Index of the vehicle in the scenario (for diagnostics).
    pub vehicle: usize,
    pub params: VehicleParams,
    /// Number of shooting intervals.
    pub k: usize,
    pub dt: f64,
    pub x0: VehicleState,
    pub v_ref: f64,
    pub u_ref: VehicleControl,
    /// Conflict-zone traversals, sorted by entry position, with bounds already
    /// widened by half the vehicle length.
    pub crossings: Vec<Crossing>,
    /// Terminal speed weight from the scalar Riccati equation.
    pub q_f: f64,
}

impl VehicleTranscription {
    pub fn new(
        vehicle: usize,
        params: VehicleParams,
        k: usize,
        dt: f64,
        x0: VehicleState,
        v_ref: f64,
        crossings: Vec<Crossing>,
    ) -> Self {
        let u_ref = steady_state_control(&params, v_ref);
        let q_f = terminal_weight(&params, v_ref, dt);
        VehicleTranscription { vehicle, params, k, dt, x0, v_ref, u_ref, crossings, q_f }
    }

    pub fn n_w(&self) -> usize {
        4 * self.k + 2
    }

    pub fn n_t(&self) -> usize {
        2 * self.crossings.len()
    }

    pub fn n_y(&self) -> usize {
        self.n_w() + self.n_t()
    }

    pub fn n_g(&self) -> usize {
        2 * (self.k + 1) + self.n_t()
    }

    pub fn n_h(&self) -> usize {
        PATH_ROWS_PER_NODE * self.k + PATH_ROWS_TERMINAL
    }

    pub fn idx_p(&self, k: usize) -> usize {
        4 * k
    }

    pub fn idx_v(&self, k: usize) -> usize {
        4 * k + 1
    }

    pub fn idx_e(&self, k: usize) -> usize {
        debug_assert!(k < self.k);
        4 * k + 2
    }

    pub fn idx_fb(&self, k: usize) -> usize {
        debug_assert!(k < self.k);
        4 * k + 3
    }

    /// Index in `y` of crossing time `r` (traversal `r/2`, entry if `r` even,
    /// exit if odd).
    pub fn idx_t(&self, r: usize) -> usize {
        debug_assert!(r < self.n_t());
        self.n_w() + r
    }

    /// Indices in `y` of the (entry, exit) times at conflict zone `zone`.
    pub fn zone_time_indices(&self, zone: usize) -> Option<(usize, usize)> {
        let c = self.crossings.iter().position(|cr| cr.zone == zone)?;
        Some((self.idx_t(2 * c), self.idx_t(2 * c + 1)))
    }

    pub fn t_max(&self) -> f64 {
        self.k as f64 * self.dt
    }

    /// Clamp the crossing-time entries of `y` strictly inside the horizon.
    pub fn clip_times(&self, y: &mut DVector<f64>) {
        let (lo, hi) = (T_MARGIN, self.t_max() - T_MARGIN);
        for r in 0..self.n_t() {
            let i = self.idx_t(r);
            y[i] = y[i].clamp(lo, hi);
        }
    }

    fn unpack(&self, y: &DVector<f64>) -> (Vec<VehicleState>, Vec<VehicleControl>) {
        let states = (0..=self.k)
            .map(|k| VehicleState { p: y[self.idx_p(k)], v: y[self.idx_v(k)] })
            .collect();
        let controls = (0..self.k)
            .map(|k| VehicleControl { e: y[self.idx_e(k)], fb: y[self.idx_fb(k)] })
            .collect();
        (states, controls)
    }

    /// Target positions of the crossing rows, in `T` order.
    fn crossing_targets(&self) -> Vec<f64> {
        self.crossings.iter().flat_map(|c| [c.p_in, c.p_out]).collect()
    }

    /// Objective value and gradient.
    pub fn objective(&self, y: &DVector<f64>) -> (f64, DVector<f64>) {
        let q = 1.0 / (self.v_ref * self.v_ref);
        let re = 1.0 / (self.params.e_max * self.params.e_max);
        let rb = 1.0 / (self.params.fb_max * self.params.fb_max);
        let mut j = 0.0;
        let mut grad = DVector::zeros(self.n_y());
        for k in 0..=self.k {
            let dv = y[self.idx_v(k)] - self.v_ref;
            let w = if k == self.k { q + self.q_f } else { q };
            j += w * dv * dv;
            grad[self.idx_v(k)] += 2.0 * w * dv;
        }
        for k in 0..self.k {
            let de = y[self.idx_e(k)] - self.u_ref.e;
            let db = y[self.idx_fb(k)] - self.u_ref.fb;
            j += re * de * de + rb * db * db;
            grad[self.idx_e(k)] += 2.0 * re * de;
            grad[self.idx_fb(k)] += 2.0 * rb * db;
        }
        (j, grad)
    }

    /// Diagonal of the Gauss-Newton Hessian approximation (objective curvature
    /// plus a small uniform regularization).
    pub fn gn_hessian_diag(&self) -> DVector<f64> {
        let q = 1.0 / (self.v_ref * self.v_ref);
        let re = 1.0 / (self.params.e_max * self.params.e_max);
        let rb = 1.0 / (self.params.fb_max * self.params.fb_max);
        let mut d = DVector::from_element(self.n_y(), 1e-8);
        for k in 0..=self.k {
            let w = if k == self.k { q + self.q_f } else { q };
            d[self.idx_v(k)] += 2.0 * w;
        }
        for k in 0..self.k {
            d[self.idx_e(k)] += 2.0 * re;
            d[self.idx_fb(k)] += 2.0 * rb;
        }
        d
    }

    /// Constraint values only (objective, equality, path inequality); used by
    /// the line search. Crossing times are clamped internally before
    /// evaluation.
    pub fn eval_values(&self, y: &DVector<f64>) -> (f64, DVector<f64>, DVector<f64>) {
        let mut y = y.clone();
        self.clip_times(&mut y);
        let (states, controls) = self.unpack(&y);
        let (j, _) = self.objective(&y);

        let mut g = DVector::zeros(self.n_g());
        g[0] = states[0].p - self.x0.p;
        g[1] = states[0].v - self.x0.v;
        for k in 0..self.k {
            let s = rk4_step(&self.params, states[k], controls[k], self.dt);
            g[2 + 2 * k] = states[k + 1].p - s.next.p;
            g[3 + 2 * k] = states[k + 1].v - s.next.v;
        }
        let targets = self.crossing_targets();
        let cs = self.crossing_row_scale();
        for (r, &target) in targets.iter().enumerate() {
            let t = y[self.idx_t(r)];
            let pos = position_at(&self.params, &states, &controls, t, self.dt)
                .expect("clamped crossing time inside horizon");
            g[2 * (self.k + 1) + r] = cs * (pos.p - target);
        }

        let h = self.path_values(&y);
        (j, g, h)
    }

    /// Scale of the crossing-time interpolation rows `p(T) = p_bound`. The
    /// raw row is in meters while one second of crossing-time motion is
    /// `~v_ref` meters; dividing by `v_ref` expresses the row in seconds of
    /// crossing-time error, matching the units of the `T` variables it pins.
    /// Without this the l1 merit's second-order violation growth along the
    /// Newton direction is dominated by these rows (quadratic in the
    /// interpolation) and the line search crawls after each barrier cut.
    pub fn crossing_row_scale(&self) -> f64 {
        1.0 / self.v_ref
    }

    /// Path inequalities per node: torque bound, bilinear power bound, and
    /// the motor-speed bounds `0 <= omega <= omega_max` expressed in `v`.
    /// Each row is divided by the magnitude of its bound so that violations,
    /// slacks, and multipliers are commensurate across rows; without this the
    /// power row (bound ~1e5 W) dominates the l1 merit and the residual norms
    /// by five orders of magnitude. The brake force carries no bound rows:
    /// its quadratic penalty keeps it near zero, and barrier-bounding it at
    /// zero would park it at `fb_max * sqrt(tau/2)` on the whole central
    /// path, polluting every barrier-floor solution.
    fn path_values(&self, y: &DVector<f64>) -> DVector<f64> {
        let p = &self.params;
        let mut h = DVector::zeros(self.n_h());
        for k in 0..self.k {
            let v = y[self.idx_v(k)];
            let e = y[self.idx_e(k)];
            let b = PATH_ROWS_PER_NODE * k;
            h[b] = (e - p.e_max) / p.e_max;
            h[b + 1] = (p.c_omega * e * v - p.p_max) / p.p_max;
            h[b + 2] = -v;
            h[b + 3] = (p.c_omega * v - p.omega_max) / p.omega_max;
        }
        let v_k = y[self.idx_v(self.k)];
        let b = PATH_ROWS_PER_NODE * self.k;
        h[b] = -v_k;
        h[b + 1] = (p.c_omega * v_k - p.omega_max) / p.omega_max;
        h
    }

    /// Full constraint evaluation with Jacobians (rows × n_y). Crossing times
    /// are clamped internally before evaluation.
    pub fn eval_constraints(&self, y: &DVector<f64>) -> ConstraintEval {
        let mut y = y.clone();
        self.clip_times(&mut y);
        let (states, controls) = self.unpack(&y);

        let n_y = self.n_y();
        let mut g = DVector::zeros(self.n_g());
        let mut jg = DMatrix::zeros(self.n_g(), n_y);
        g[0] = states[0].p - self.x0.p;
        g[1] = states[0].v - self.x0.v;
        jg[(0, self.idx_p(0))] = 1.0;
        jg[(1, self.idx_v(0))] = 1.0;
        for k in 0..self.k {
            let s = rk4_step(&self.params, states[k], controls[k], self.dt);
            for c in 0..2 {
                let row = 2 + 2 * k + c;
                g[row] = [states[k + 1].p, states[k + 1].v][c] - [s.next.p, s.next.v][c];
                jg[(row, self.idx_p(k + 1) + c)] = 1.0;
                jg[(row, self.idx_p(k))] = -s.a[(c, 0)];
                jg[(row, self.idx_v(k))] = -s.a[(c, 1)];
                jg[(row, self.idx_e(k))] = -s.b[(c, 0)];
                jg[(row, self.idx_fb(k))] = -s.b[(c, 1)];
            }
        }
        let targets = self.crossing_targets();
        let cs = self.crossing_row_scale();
        for (r, &target) in targets.iter().enumerate() {
            let t = y[self.idx_t(r)];
            let pos = position_at(&self.params, &states, &controls, t, self.dt)
                .expect("clamped crossing time inside horizon");
            let row = 2 * (self.k + 1) + r;
            g[row] = cs * (pos.p - target);
            let k = pos.k_own;
            jg[(row, self.idx_p(k))] = cs * pos.dx[0];
            jg[(row, self.idx_v(k))] = cs * pos.dx[1];
            jg[(row, self.idx_e(k))] = cs * pos.du[0];
            jg[(row, self.idx_fb(k))] = cs * pos.du[1];
            jg[(row, self.idx_t(r))] = cs * pos.dt;
        }

        let p = &self.params;
        let h = self.path_values(&y);
        let mut jh = DMatrix::zeros(self.n_h(), n_y);
        for k in 0..self.k {
            let v = y[self.idx_v(k)];
            let e = y[self.idx_e(k)];
            let b = PATH_ROWS_PER_NODE * k;
            jh[(b, self.idx_e(k))] = 1.0 / p.e_max;
            jh[(b + 1, self.idx_e(k))] = p.c_omega * v / p.p_max;
            jh[(b + 1, self.idx_v(k))] = p.c_omega * e / p.p_max;
            jh[(b + 2, self.idx_v(k))] = -1.0;
            jh[(b + 3, self.idx_v(k))] = p.c_omega / p.omega_max;
        }
        let b = PATH_ROWS_PER_NODE * self.k;
        jh[(b, self.idx_v(self.k))] = -1.0;
        jh[(b + 1, self.idx_v(self.k))] = p.c_omega / p.omega_max;

        ConstraintEval { g, jg, h, jh }
    }

    /// Exact Hessian of the Lagrangian `J + lam' g + mu_p' h` over `y`
    /// (excluding lane- and intersection-level multipliers, whose rows are
    /// linear in `y` except the crossing-order rows which are linear in `T`).
    pub fn lagrangian_hessian(
        &self,
        y: &DVector<f64>,
        lam: &DVector<f64>,
        mu_p: &DVector<f64>,
    ) -> DMatrix<f64> {
        let mut y = y.clone();
        self.clip_times(&mut y);
        let (states, controls) = self.unpack(&y);
        let n_y = self.n_y();
        let mut hess = DMatrix::zeros(n_y, n_y);

        // Objective curvature (diagonal, exact: the objective is quadratic).
        let q = 1.0 / (self.v_ref * self.v_ref);
        let re = 1.0 / (self.params.e_max * self.params.e_max);
        let rb = 1.0 / (self.params.fb_max * self.params.fb_max);
        for k in 0..=self.k {
            let w = if k == self.k { q + self.q_f } else { q };
            hess[(self.idx_v(k), self.idx_v(k))] += 2.0 * w;
        }
        for k in 0..self.k {
            hess[(self.idx_e(k), self.idx_e(k))] += 2.0 * re;
            hess[(self.idx_fb(k), self.idx_fb(k))] += 2.0 * rb;
        }

        // Defect rows: g = x_{k+1} - F(x_k, u_k), curvature -lam' D2F over
        // (p_k, v_k, E_k, Fb_k).
        for k in 0..self.k {
            let s2 = rk4_step_second_order(&self.params, states[k], controls[k], self.dt);
            let idx = [self.idx_p(k), self.idx_v(k), self.idx_e(k), self.idx_fb(k)];
            for c in 0..2 {
                let w = lam[2 + 2 * k + c];
                if w == 0.0 {
                    continue;
                }
                for a in 0..4 {
                    for b in 0..4 {
                        hess[(idx[a], idx[b])] -= w * s2.next[c].h[a][b];
                    }
                }
            }
        }

        // Crossing rows: curvature of the partial-step position over the
        // owning node variables and the crossing time.
        for r in 0..self.n_t() {
            let w = self.crossing_row_scale() * lam[2 * (self.k + 1) + r];
            if w == 0.0 {
                continue;
            }
            let t = y[self.idx_t(r)];
            let k = ((t / self.dt).floor() as usize).min(self.k - 1);
            let s2 = rk4_step_second_order(
                &self.params,
                states[k],
                controls[k],
                t - k as f64 * self.dt,
            );
            let idx = [self.idx_p(k), self.idx_v(k), self.idx_e(k), self.idx_fb(k), self.idx_t(r)];
            for a in 0..5 {
                for b in 0..5 {
                    hess[(idx[a], idx[b])] += w * s2.next[0].h[a][b];
                }
            }
        }

        // Power rows: h = (c_omega E v - P_max) / P_max, cross curvature
        // c_omega / P_max.
        let cw = self.params.c_omega / self.params.p_max;
        for k in 0..self.k {
            let w = mu_p[PATH_ROWS_PER_NODE * k + 1];
            if w == 0.0 {
                continue;
            }
            hess[(self.idx_e(k), self.idx_v(k))] += w * cw;
            hess[(self.idx_v(k), self.idx_e(k))] += w * cw;
        }
        hess
    }

    /// Initial guess: roll out the steady-state control from `x0` and place
    /// the crossing times where the rollout reaches the zone boundaries.
    pub fn initial_guess(&self) -> Result<DVector<f64>> {
        let mut y = DVector::zeros(self.n_y());
        let mut states = vec![self.x0];
        for k in 0..self.k {
            y[self.idx_p(k)] = states[k].p;
            y[self.idx_v(k)] = states[k].v;
            y[self.idx_e(k)] = self.u_ref.e;
            y[self.idx_fb(k)] = self.u_ref.fb;
            states.push(rk4_step(&self.params, states[k], self.u_ref, self.dt).next);
        }
        y[self.idx_p(self.k)] = states[self.k].p;
        y[self.idx_v(self.k)] = states[self.k].v;

        let controls = vec![self.u_ref; self.k];
        let targets = self.crossing_targets();
        for (r, &target) in targets.iter().enumerate() {
            if states[self.k].p < target {
                return Err(Error::HorizonTooShort { vehicle: self.vehicle, p_out: target });
            }
            y[self.idx_t(r)] = if states[0].p >= target {
                T_MARGIN
            } else {
                self.time_at_position(&states, &controls, target)
            };
        }
        self.clip_times(&mut y);
        Ok(y)
    }

    /// Time at which a forward-moving trajectory reaches position `target`,
    /// by bisection within the owning interval.
    fn time_at_position(
        &self,
        states: &[VehicleState],
        controls: &[VehicleControl],
        target: f64,
    ) -> f64 {
        let k = (0..self.k)
            .find(|&k| states[k + 1].p >= target)
            .expect("target within rolled-out horizon");
        let (mut lo, mut hi) = (k as f64 * self.dt, (k + 1) as f64 * self.dt);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            let p = position_at(&self.params, states, controls, mid, self.dt).unwrap().p;
            if p < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

#[derive(Debug, Clone)]
pub struct ConstraintEval {
    pub g: DVector<f64>,
    /// `n_g x n_y` Jacobian of `g`.
    pub jg: DMatrix<f64>,
    pub h: DVector<f64>,
    /// `n_h x n_y` Jacobian of `h`.
    pub jh: DMatrix<f64>,
}

/// Rear-end (lane) inequality values for one lane: vehicles ordered rear to
/// front, pair-major, rows `k = 0..=K` per adjacent pair:
/// `p_rear_k + delta_rear - p_front_k <= 0`.
pub fn lane_rear_end_values(
    trs: &[&VehicleTranscription],
    ys: &[&DVector<f64>],
) -> DVector<f64> {
    assert_eq!(trs.len(), ys.len());
    if trs.len() < 2 {
        return DVector::zeros(0);
    }
    let k = trs[0].k;
    let mut h = DVector::zeros((trs.len() - 1) * (k + 1));
    for j in 0..trs.len() - 1 {
        let (rear, front) = (trs[j], trs[j + 1]);
        debug_assert_eq!(rear.k, front.k);
        for kk in 0..=k {
            h[j * (k + 1) + kk] =
                ys[j][rear.idx_p(kk)] + rear.params.delta - ys[j + 1][front.idx_p(kk)];
        }
    }
    h
}

/// Crossing-order (intersection) inequality value for one ordered pair:
/// `t_out_first - t_in_second <= 0`.
pub fn crossing_order_value(
    first: (&VehicleTranscription, &DVector<f64>),
    second: (&VehicleTranscription, &DVector<f64>),
    zone: usize,
) -> f64 {
    let (_, out_first) = first.0.zone_time_indices(zone).expect("first traverses zone");
    let (in_second, _) = second.0.zone_time_indices(zone).expect("second traverses zone");
    first.1[out_first] - second.1[in_second]
}

/// Terminal speed weight: positive root of the scalar discrete Riccati
/// equation for the speed subsystem linearized at `(v_ref, u_ref)`.
pub fn terminal_weight(params: &VehicleParams, v_ref: f64, dt: f64) -> f64 {
    let u_ref = steady_state_control(params, v_ref);
    let s = rk4_step(params, VehicleState { p: 0.0, v: v_ref }, u_ref, dt);
    let a = s.a[(1, 1)];
    let (b_e, b_fb) = (s.b[(1, 0)], s.b[(1, 1)]);
    let q = 1.0 / (v_ref * v_ref);
    // c = B R^{-1} B' with R = diag(1/E_max^2, 1/Fb_max^2).
    let c = b_e * b_e * params.e_max * params.e_max + b_fb * b_fb * params.fb_max * params.fb_max;
    // c P^2 + (1 - A^2 - Q c) P - Q = 0, positive root.
    let lin = 1.0 - a * a - q * c;
    (-lin + (lin * lin + 4.0 * c * q).sqrt()) / (2.0 * c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::Crossing;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_xoshiro::Xoshiro256PlusPlus;

    fn make_tr() -> VehicleTranscription {
        VehicleTranscription::new(
            0,
            VehicleParams::default(),
            20,
            0.25,
            VehicleState { p: -60.0, v: 15.0 },
            70.0 / 3.6,
            vec![Crossing { zone: 0, p_in: -2.25, p_out: 6.75 }],
        )
    }

    fn random_interior(tr: &VehicleTranscription, seed: u64) -> DVector<f64> {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        let mut y = tr.initial_guess().unwrap();
        for i in 0..y.len() {
            y[i] += rng.gen_range(-0.1..0.1) * (1.0 + y[i].abs() * 0.05);
        }
        tr.clip_times(&mut y);
        y
    }

    #[test]
    fn dimensions() {
        let tr = make_tr();
        assert_eq!(tr.n_w(), 82);
        assert_eq!(tr.n_t(), 2);
        assert_eq!(tr.n_y(), 84);
        assert_eq!(tr.n_g(), 2 * 21 + 2);
        assert_eq!(tr.n_h(), 4 * 20 + 2);
    }

    #[test]
    fn initial_guess_feasible() {
        let tr = make_tr();
        let y = tr.initial_guess().unwrap();
        let (_, g, h) = tr.eval_values(&y);
        assert!(g.amax() < 1e-7, "equality residual {}", g.amax());
        // Feasible up to the inactive brake bound (-Fb = 0 on the rollout);
        // interiority is carried by the slacks, not by h itself.
        assert!(h.max() <= 0.0, "path constraints violated: {}", h.max());
        // Crossing times consistent with constant-speed estimate.
        let (t_in, t_out) = tr.zone_time_indices(0).unwrap();
        assert!(y[t_in] < y[t_out]);
        assert!((y[t_in] - 57.75 / 15.0).abs() < 0.5);
    }

    #[test]
    fn horizon_too_short_detected() {
        let mut tr = make_tr();
        tr.k = 5;
        match tr.initial_guess() {
            Err(Error::HorizonTooShort { vehicle: 0, .. }) => {}
            other => panic!("expected HorizonTooShort, got {other:?}"),
        }
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let tr = make_tr();
        let y = random_interior(&tr, 3);
        let ev = tr.eval_constraints(&y);
        let eps = 1e-6;
        for i in 0..tr.n_y() {
            let mut yp = y.clone();
            let mut ym = y.clone();
            yp[i] += eps;
            ym[i] -= eps;
            let (_, gp, hp) = tr.eval_values(&yp);
            let (_, gm, hm) = tr.eval_values(&ym);
            for r in 0..tr.n_g() {
                let fd = (gp[r] - gm[r]) / (2.0 * eps);
                assert!(
                    (fd - ev.jg[(r, i)]).abs() < 2e-5 * (1.0 + fd.abs()),
                    "g row {r} col {i}: fd={fd} an={}",
                    ev.jg[(r, i)]
                );
            }
            for r in 0..tr.n_h() {
                let fd = (hp[r] - hm[r]) / (2.0 * eps);
                assert!(
                    (fd - ev.jh[(r, i)]).abs() < 1e-5 * (1.0 + fd.abs()),
                    "h row {r} col {i}: fd={fd} an={}",
                    ev.jh[(r, i)]
                );
            }
        }
    }

    #[test]
    fn objective_gradient_matches_finite_differences() {
        let tr = make_tr();
        let y = random_interior(&tr, 5);
        let (_, grad) = tr.objective(&y);
        let eps = 1e-6;
        for i in 0..tr.n_y() {
            let mut yp = y.clone();
            let mut ym = y.clone();
            yp[i] += eps;
            ym[i] -= eps;
            let fd = (tr.objective(&yp).0 - tr.objective(&ym).0) / (2.0 * eps);
            assert!((fd - grad[i]).abs() < 1e-6 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn lagrangian_hessian_matches_finite_differences() {
        let tr = make_tr();
        let y = random_interior(&tr, 7);
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(11);
        let lam = DVector::from_fn(tr.n_g(), |_, _| rng.gen_range(-1.0..1.0));
        let mu = DVector::from_fn(tr.n_h(), |_, _| rng.gen_range(0.0..1.0));
        let hess = tr.lagrangian_hessian(&y, &lam, &mu);
        // Symmetry.
        for i in 0..tr.n_y() {
            for j in 0..i {
                assert_relative_eq!(hess[(i, j)], hess[(j, i)], epsilon = 1e-12);
            }
        }
        // Against central differences of the Lagrangian gradient.
        let grad_l = |y: &DVector<f64>| -> DVector<f64> {
            let ev = tr.eval_constraints(y);
            let (_, gj) = tr.objective(y);
            gj + ev.jg.transpose() * &lam + ev.jh.transpose() * &mu
        };
        let eps = 1e-5;
        for i in 0..tr.n_y() {
            let mut yp = y.clone();
            let mut ym = y.clone();
            yp[i] += eps;
            ym[i] -= eps;
            let col = (grad_l(&yp) - grad_l(&ym)) / (2.0 * eps);
            for r in 0..tr.n_y() {
                assert!(
                    (col[r] - hess[(r, i)]).abs() < 5e-5 * (1.0 + col[r].abs()),
                    "hessian ({r},{i}): fd={} an={}",
                    col[r],
                    hess[(r, i)]
                );
            }
        }
    }

    #[test]
    fn terminal_weight_matches_value_iteration() {
        let params = VehicleParams::default();
        let v_ref = 70.0 / 3.6;
        let dt = 0.25;
        let p_closed = terminal_weight(&params, v_ref, dt);

        let u_ref = steady_state_control(&params, v_ref);
        let s = rk4_step(&params, VehicleState { p: 0.0, v: v_ref }, u_ref, dt);
        let a = s.a[(1, 1)];
        let c = s.b[(1, 0)].powi(2) * params.e_max.powi(2)
            + s.b[(1, 1)].powi(2) * params.fb_max.powi(2);
        let q = 1.0 / (v_ref * v_ref);
        let mut p = q;
        for _ in 0..500 {
            p = q + a * a * p - a * a * p * p * c / (1.0 + p * c);
        }
        assert_relative_eq!(p_closed, p, max_relative = 1e-10);
        assert!(p_closed > 0.0);
        // Residual of the Riccati fixed point.
        let res = q + a * a * p_closed - a * a * p_closed * p_closed * c / (1.0 + p_closed * c)
            - p_closed;
        assert!(res.abs() < 1e-12);
    }

    #[test]
    fn rear_end_rows() {
        let params = VehicleParams::default();
        let mk = |vehicle, p0| {
            VehicleTranscription::new(
                vehicle,
                params,
                10,
                0.5,
                VehicleState { p: p0, v: 10.0 },
                10.0,
                vec![],
            )
        };
        let rear = mk(0, -50.0);
        let front = mk(1, -40.0);
        let y_rear = rear.initial_guess().unwrap();
        let y_front = front.initial_guess().unwrap();
        let h = lane_rear_end_values(&[&rear, &front], &[&y_rear, &y_front]);
        assert_eq!(h.len(), 11);
        // Both roll at the same speed: gap stays 10 m, delta = 7.
        for k in 0..=10 {
            assert_relative_eq!(h[k], -3.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn crossing_order_row() {
        let tr_a = make_tr();
        let mut tr_b = make_tr();
        tr_b.vehicle = 1;
        tr_b.x0.p = -65.0;
        let ya = tr_a.initial_guess().unwrap();
        let yb = tr_b.initial_guess().unwrap();
        let v = crossing_order_value((&tr_a, &ya), (&tr_b, &yb), 0);
        let (_, out_a) = tr_a.zone_time_indices(0).unwrap();
        let (in_b, _) = tr_b.zone_time_indices(0).unwrap();
        assert_relative_eq!(v, ya[out_a] - yb[in_b], epsilon = 1e-14);
    }

    #[test]
    fn times_clipped_inside_horizon() {
        let tr = make_tr();
        let mut y = tr.initial_guess().unwrap();
        y[tr.idx_t(0)] = -5.0;
        y[tr.idx_t(1)] = 100.0;
        let (_, g, _) = tr.eval_values(&y);
        // Evaluation used the clamped times: finite values, no panic.
        assert!(g.iter().all(|v| v.is_finite()));
        tr.clip_times(&mut y);
        assert_eq!(y[tr.idx_t(0)], T_MARGIN);
        assert_eq!(y[tr.idx_t(1)], tr.t_max() - T_MARGIN);
    }
}
