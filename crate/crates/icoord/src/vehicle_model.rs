//! Electric-vehicle longitudinal dynamics, RK4 integration with exact discrete
//! sensitivities, and intra-interval position evaluation.
//!
//! Sensitivities are obtained by differentiating the RK4 map itself, so the
//! transcription Jacobians are exact derivatives of the implemented constraints.

use crate::{Error, Result};
use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct VehicleParams {
    /// Mass (kg).
    pub m: f64,
    /// Motor gain (N per torque unit).
    pub c_e: f64,
    /// Motor-speed gain (rad/s per m/s).
    pub c_omega: f64,
    /// Aerodynamic drag coefficient (N s^2 / m^2).
    pub c_d: f64,
    /// Rolling resistance (N).
    pub c_r: f64,
    /// Maximum motor speed (rad/s).
    pub omega_max: f64,
    /// Maximum motor torque.
    pub e_max: f64,
    /// Maximum motor power (W).
    pub p_max: f64,
    /// Maximum friction brake force (N).
    pub fb_max: f64,
    /// Vehicle length (m).
    pub d: f64,
    /// Safety margin (m), at least the vehicle length.
    pub delta: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        VehicleParams {
            m: 1500.0,
            c_e: 280.0,
            c_omega: 8.0,
            c_d: 0.35,
            c_r: 150.0,
            omega_max: 800.0,
            e_max: 400.0,
            p_max: 120_000.0,
            fb_max: 10_000.0,
            d: 4.5,
            delta: 7.0,
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<()> {
        let pos = [
            self.m, self.c_e, self.c_omega, self.omega_max, self.e_max, self.p_max, self.fb_max,
            self.d,
        ];
        if pos.iter().any(|&v| !(v > 0.0)) || self.c_d < 0.0 || self.c_r < 0.0 {
            return Err(Error::InvalidScenario("non-positive vehicle parameter".into()));
        }
        if self.delta < self.d {
            return Err(Error::InvalidScenario(format!(
                "safety margin delta={} smaller than vehicle length d={}",
                self.delta, self.d
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleState {
    pub p: f64,
    pub v: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleControl {
    pub e: f64,
    pub fb: f64,
}

/// Result of one RK4 step with first-order sensitivities of the discrete map.
#[derive(Debug, Clone)]
pub struct StepSensitivity {
    pub next: VehicleState,
    /// d(next)/d(x), rows (p, v) by columns (p, v).
    pub a: Matrix2<f64>,
    /// d(next)/d(u), rows (p, v) by columns (E, Fb).
    pub b: Matrix2<f64>,
    /// d(next)/d(h).
    pub dh: Vector2<f64>,
}

/// State derivative (p_dot, v_dot) of the continuous dynamics.
pub fn continuous_dynamics(
    params: &VehicleParams,
    x: VehicleState,
    u: VehicleControl,
) -> Vector2<f64> {
    Vector2::new(
        x.v,
        (params.c_e * u.e - u.fb - params.c_d * x.v * x.v - params.c_r) / params.m,
    )
}

/// Jacobians of the continuous dynamics: (df/dx, df/du).
fn dynamics_jacobians(params: &VehicleParams, x: VehicleState) -> (Matrix2<f64>, Matrix2<f64>) {
    let fx = Matrix2::new(0.0, 1.0, 0.0, -2.0 * params.c_d * x.v / params.m);
    let fu = Matrix2::new(0.0, 0.0, params.c_e / params.m, -1.0 / params.m);
    (fx, fu)
}

/// One classical RK4 step of length `h` with exact discrete sensitivities with
/// respect to the initial state, the (zero-order-hold) control and the step
/// length.
pub fn rk4_step(
    params: &VehicleParams,
    x: VehicleState,
    u: VehicleControl,
    h: f64,
) -> StepSensitivity {
    debug_assert!(h >= 0.0, "negative step length");
    let x0 = Vector2::new(x.p, x.v);

    // Stage values and their derivatives w.r.t. (x, u, h).
    let mut k = [Vector2::zeros(); 4];
    let mut kx = [Matrix2::zeros(); 4];
    let mut ku = [Matrix2::zeros(); 4];
    let mut kh = [Vector2::zeros(); 4];
    // Stage-state sensitivities.
    let coeff = [0.0, 0.5, 0.5, 1.0];
    let mut xs = x0;
    let mut xs_x = Matrix2::identity();
    let mut xs_u = Matrix2::zeros();
    let mut xs_h = Vector2::zeros();
    for s in 0..4 {
        if s > 0 {
            let c = coeff[s];
            xs = x0 + k[s - 1] * (c * h);
            xs_x = Matrix2::identity() + kx[s - 1] * (c * h);
            xs_u = ku[s - 1] * (c * h);
            xs_h = k[s - 1] * c + kh[s - 1] * (c * h);
        }
        let st = VehicleState { p: xs[0], v: xs[1] };
        k[s] = continuous_dynamics(params, st, u);
        let (fx, fu) = dynamics_jacobians(params, st);
        kx[s] = fx * xs_x;
        ku[s] = fx * xs_u + fu;
        kh[s] = fx * xs_h;
    }

    let ksum = k[0] + k[1] * 2.0 + k[2] * 2.0 + k[3];
    let next = x0 + ksum * (h / 6.0);
    let a = Matrix2::identity() + (kx[0] + kx[1] * 2.0 + kx[2] * 2.0 + kx[3]) * (h / 6.0);
    let b = (ku[0] + ku[1] * 2.0 + ku[2] * 2.0 + ku[3]) * (h / 6.0);
    let dh = ksum / 6.0 + (kh[0] + kh[1] * 2.0 + kh[2] * 2.0 + kh[3]) * (h / 6.0);

    StepSensitivity { next: VehicleState { p: next[0], v: next[1] }, a, b, dh }
}

/// Number of differentiation directions for second-order propagation:
/// (p, v, E, Fb, h).
pub const N_DIRS: usize = 5;

/// Scalar carrying value, gradient and Hessian over the five directions.
#[derive(Debug, Clone, Copy)]
pub struct D2 {
    pub v: f64,
    pub g: [f64; N_DIRS],
    pub h: [[f64; N_DIRS]; N_DIRS],
}

impl D2 {
    pub fn constant(v: f64) -> Self {
        D2 { v, g: [0.0; N_DIRS], h: [[0.0; N_DIRS]; N_DIRS] }
    }

    pub fn variable(v: f64, dir: usize) -> Self {
        let mut g = [0.0; N_DIRS];
        g[dir] = 1.0;
        D2 { v, g, h: [[0.0; N_DIRS]; N_DIRS] }
    }

    pub fn add(&self, o: &D2) -> D2 {
        let mut r = *self;
        r.v += o.v;
        for i in 0..N_DIRS {
            r.g[i] += o.g[i];
            for j in 0..N_DIRS {
                r.h[i][j] += o.h[i][j];
            }
        }
        r
    }

    pub fn scale(&self, c: f64) -> D2 {
        let mut r = *self;
        r.v *= c;
        for i in 0..N_DIRS {
            r.g[i] *= c;
            for j in 0..N_DIRS {
                r.h[i][j] *= c;
            }
        }
        r
    }

    pub fn mul(&self, o: &D2) -> D2 {
        let mut r = D2::constant(self.v * o.v);
        for i in 0..N_DIRS {
            r.g[i] = self.g[i] * o.v + self.v * o.g[i];
            for j in 0..N_DIRS {
                r.h[i][j] = self.h[i][j] * o.v
                    + self.g[i] * o.g[j]
                    + self.g[j] * o.g[i]
                    + self.v * o.h[i][j];
            }
        }
        r
    }
}

/// Second-order output of an RK4 step: value, Jacobian and Hessians of the two
/// state components with respect to (p, v, E, Fb, h).
#[derive(Debug, Clone)]
pub struct StepSecondOrder {
    pub next: [D2; 2],
}

/// RK4 step propagated with full second-order forward sensitivities. Used for
/// the exact Lagrangian Hessian and for crossing-row curvature.
pub fn rk4_step_second_order(
    params: &VehicleParams,
    x: VehicleState,
    u: VehicleControl,
    h: f64,
) -> StepSecondOrder {
    let p0 = D2::variable(x.p, 0);
    let v0 = D2::variable(x.v, 1);
    let e = D2::variable(u.e, 2);
    let fb = D2::variable(u.fb, 3);
    let hh = D2::variable(h, 4);

    let f = |pv: &[D2; 2]| -> [D2; 2] {
        let vv = pv[1];
        let drag = vv.mul(&vv).scale(-params.c_d);
        let accel = e
            .scale(params.c_e)
            .add(&fb.scale(-1.0))
            .add(&drag)
            .add(&D2::constant(-params.c_r))
            .scale(1.0 / params.m);
        [vv, accel]
    };

    let x0 = [p0, v0];
    let k1 = f(&x0);
    let half = |k: &[D2; 2], c: f64| -> [D2; 2] {
        [x0[0].add(&k[0].mul(&hh).scale(c)), x0[1].add(&k[1].mul(&hh).scale(c))]
    };
    let k2 = f(&half(&k1, 0.5));
    let k3 = f(&half(&k2, 0.5));
    let k4 = f(&half(&k3, 1.0));

    let mut next = [D2::constant(0.0); 2];
    for c in 0..2 {
        let ks = k1[c].add(&k2[c].scale(2.0)).add(&k3[c].scale(2.0)).add(&k4[c]);
        next[c] = x0[c].add(&ks.mul(&hh).scale(1.0 / 6.0));
    }
    StepSecondOrder { next }
}

/// Position (and its gradient) at continuous time `t` along a multiple-shooting
/// trajectory: a partial RK4 step of length `t - t_k` from the owning node
/// `k = floor(t / dt)` (clamped so the last node owns `t = K dt`).
pub struct PositionAt {
    pub p: f64,
    /// Gradient w.r.t. the owning node state (p_k, v_k).
    pub dx: Vector2<f64>,
    /// Gradient w.r.t. the owning node control (E_k, Fb_k).
    pub du: Vector2<f64>,
    /// Time derivative (the velocity of the partial step).
    pub dt: f64,
    /// Index of the owning shooting interval.
    pub k_own: usize,
}

pub fn position_at(
    params: &VehicleParams,
    states: &[VehicleState],
    controls: &[VehicleControl],
    t: f64,
    dt: f64,
) -> Result<PositionAt> {
    let kk = controls.len();
    debug_assert_eq!(states.len(), kk + 1);
    let t_max = kk as f64 * dt;
    if !(0.0..=t_max).contains(&t) {
        return Err(Error::TimeOutOfRange { t, t_max });
    }
    let k_own = ((t / dt).floor() as usize).min(kk - 1);
    let h = t - k_own as f64 * dt;
    let s = rk4_step(params, states[k_own], controls[k_own], h);
    Ok(PositionAt {
        p: s.next.p,
        dx: Vector2::new(s.a[(0, 0)], s.a[(0, 1)]),
        du: Vector2::new(s.b[(0, 0)], s.b[(0, 1)]),
        dt: s.dh[0],
        k_own,
    })
}

/// Steady-state input holding speed `v_r`: torque balancing drag and rolling
/// resistance, no braking.
pub fn steady_state_control(params: &VehicleParams, v_r: f64) -> VehicleControl {
    VehicleControl { e: (params.c_d * v_r * v_r + params.c_r) / params.c_e, fb: 0.0 }
}
