//! Monolithic dense reference for the hierarchical linear algebra.
//!
//! Assembles the entire Newton system -- every vehicle block, lane block,
//! central block and all couplings -- into one dense symmetric matrix and
//! solves it with an independent LU factorization. The hierarchical solver
//! must reproduce this direction to tight tolerance; the oracle shares no
//! factorization code with it.

use crate::kkt_core::{
    CentralVars, Direction, Iterate, Problem, RecaMode, Residuals, LANE_REG,
};
use crate::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// Index map of the flattened system: vehicles first, then lanes, then the
/// central block.
pub struct DenseLayout {
    pub veh: Vec<usize>,
    pub lane: Vec<usize>,
    pub central: usize,
    pub n: usize,
}

impl DenseLayout {
    pub fn new(prob: &Problem) -> Self {
        let mut off = 0;
        let veh = prob
            .vehicles
            .iter()
            .map(|vb| {
                let o = off;
                off += vb.n_v();
                o
            })
            .collect();
        let lane = prob
            .lanes
            .iter()
            .map(|l| {
                let o = off;
                off += l.n_z;
                o
            })
            .collect();
        let central = off;
        off += 2 * prob.central.n_c();
        DenseLayout { veh, lane, central, n: off }
    }
}

/// Assemble the full Newton matrix in solver form (complementarity rows
/// scaled by the slacks, making the matrix symmetric). Uses the same
/// inertia-corrected Hessian shift as the hierarchical path so both solve the
/// identical system.
pub fn assemble_dense(prob: &Problem, it: &Iterate) -> Result<(DMatrix<f64>, DenseLayout)> {
    let lay = DenseLayout::new(prob);
    let mut m = DMatrix::zeros(lay.n, lay.n);

    for (i, vb) in prob.vehicles.iter().enumerate() {
        let o = lay.veh[i];
        let vars = &it.vehicles[i];
        let fac = prob.vehicle_factor(i, vars)?;
        let mut b = prob.vehicle_hessian(i, vars);
        for j in 0..vb.n_y {
            b[(j, j)] += fac.zeta;
        }
        let ev = prob.vehicle_local(i, &vars.y);
        let (oy, ol, om, os) = (o, o + vb.off_lam(), o + vb.off_mu(), o + vb.off_s());
        m.view_mut((oy, oy), (vb.n_y, vb.n_y)).copy_from(&b);
        for r in 0..vb.n_g {
            for c in 0..vb.n_y {
                m[(ol + r, oy + c)] = ev.jg[(r, c)];
                m[(oy + c, ol + r)] = ev.jg[(r, c)];
            }
        }
        for r in 0..vb.n_h {
            for c in 0..vb.n_y {
                m[(om + r, oy + c)] = ev.jh[(r, c)];
                m[(oy + c, om + r)] = ev.jh[(r, c)];
            }
            m[(om + r, os + r)] = 1.0;
            m[(os + r, om + r)] = 1.0;
            m[(os + r, os + r)] = vars.mu[r] / vars.s[r];
        }

        // Lane coupling U Sc' and its transpose.
        let ol0 = lay.lane[vb.lane];
        for (bcol, col) in prob.coupling.basis[i].iter().enumerate() {
            for &(lane_row, bc, sign) in &prob.coupling.scatter[i] {
                if bc != bcol {
                    continue;
                }
                for &(row, wgt) in col {
                    m[(o + row, ol0 + lane_row)] += wgt * sign;
                    m[(ol0 + lane_row, o + row)] += wgt * sign;
                }
            }
        }

        // Central coupling into the crossing-time stationarity rows.
        let n_w = vb.tr.n_w();
        for &(pair_row, t, sign) in &prob.coupling.theta[i] {
            m[(o + n_w + t, lay.central + pair_row)] += sign;
            m[(lay.central + pair_row, o + n_w + t)] += sign;
        }
    }

    for (l, lane) in prob.lanes.iter().enumerate() {
        let o = lay.lane[l];
        match prob.mode {
            RecaMode::Exact => {
                let n = lane.n_rows;
                for r in 0..n {
                    m[(o + r, o + n + r)] = 1.0;
                    m[(o + n + r, o + r)] = 1.0;
                    m[(o + n + r, o + n + r)] = it.lanes[l][r] / it.lanes[l][n + r];
                }
            }
            RecaMode::Primal => {
                for r in 0..lane.n_z {
                    m[(o + r, o + r)] = LANE_REG;
                }
            }
            RecaMode::Dual => {}
        }
    }

    let n_c = prob.central.n_c();
    for c in 0..n_c {
        let o = lay.central;
        m[(o + c, o + n_c + c)] = 1.0;
        m[(o + n_c + c, o + c)] = 1.0;
        m[(o + n_c + c, o + n_c + c)] = it.central.mu[c] / it.central.s[c];
    }

    Ok((m, lay))
}

/// Stack solver-form residual blocks into one vector in dense layout order.
pub fn flatten(prob: &Problem, lay: &DenseLayout, res: &Residuals) -> DVector<f64> {
    let mut out = DVector::zeros(lay.n);
    for (i, r) in res.vehicles.iter().enumerate() {
        out.rows_mut(lay.veh[i], r.len()).copy_from(r);
    }
    for (l, r) in res.lanes.iter().enumerate() {
        out.rows_mut(lay.lane[l], r.len()).copy_from(r);
    }
    out.rows_mut(lay.central, 2 * prob.central.n_c()).copy_from(&res.central);
    out
}

/// Split a dense solution vector back into per-block direction variables.
pub fn unflatten(prob: &Problem, lay: &DenseLayout, x: &DVector<f64>) -> Direction {
    let vehicles = (0..prob.n_vehicles())
        .map(|i| {
            let vb = &prob.vehicles[i];
            prob.unpack_vehicle(i, &x.rows(lay.veh[i], vb.n_v()).into_owned())
        })
        .collect();
    let lanes = (0..prob.lanes.len())
        .map(|l| x.rows(lay.lane[l], prob.lanes[l].n_z).into_owned())
        .collect();
    let n_c = prob.central.n_c();
    Direction {
        vehicles,
        lanes,
        central: CentralVars {
            mu: x.rows(lay.central, n_c).into_owned(),
            s: x.rows(lay.central + n_c, n_c).into_owned(),
        },
    }
}

/// Newton direction by solving the assembled monolithic system with LU plus
/// two steps of iterative refinement. Same signature and convention as the
/// hierarchical `search_direction`: `res` is the reported-form residual.
pub fn dense_direction(prob: &Problem, it: &Iterate, res: &Residuals) -> Result<Direction> {
    let (m, lay) = assemble_dense(prob, it)?;
    let mut rhs_res = res.clone();
    prob.to_solver_form(&mut rhs_res, it);
    let rhs = -flatten(prob, &lay, &rhs_res);

    let lu = m.clone().lu();
    let mut x = lu
        .solve(&rhs)
        .ok_or_else(|| Error::Singular("monolithic KKT system".into()))?;
    for _ in 0..2 {
        let resid = &rhs - &m * &x;
        let corr = lu
            .solve(&resid)
            .ok_or_else(|| Error::Singular("monolithic KKT system".into()))?;
        x += corr;
    }
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::Singular("monolithic KKT system".into()));
    }
    Ok(unflatten(prob, &lay, &x))
}

/// Largest elementwise difference between two directions, for comparisons.
pub fn direction_distance(a: &Direction, b: &Direction) -> f64 {
    let mut worst = 0.0f64;
    for (va, vb) in a.vehicles.iter().zip(&b.vehicles) {
        worst = worst.max((&va.y - &vb.y).amax());
        worst = worst.max((&va.lam - &vb.lam).amax());
        worst = worst.max((&va.mu - &vb.mu).amax());
        worst = worst.max((&va.s - &vb.s).amax());
    }
    for (la, lb) in a.lanes.iter().zip(&b.lanes) {
        if !la.is_empty() {
            worst = worst.max((la - lb).amax());
        }
    }
    if !a.central.mu.is_empty() {
        worst = worst.max((&a.central.mu - &b.central.mu).amax());
        worst = worst.max((&a.central.s - &b.central.s).amax());
    }
    worst
}

/// Largest direction entry, for relative comparisons.
pub fn direction_scale(a: &Direction) -> f64 {
    let mut worst = 0.0f64;
    for v in &a.vehicles {
        worst = worst.max(v.y.amax()).max(v.lam.amax()).max(v.mu.amax()).max(v.s.amax());
    }
    for l in &a.lanes {
        if !l.is_empty() {
            worst = worst.max(l.amax());
        }
    }
    if !a.central.mu.is_empty() {
        worst = worst.max(a.central.mu.amax()).max(a.central.s.amax());
    }
    worst
}
