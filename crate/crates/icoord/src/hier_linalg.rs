//! Hierarchical solution of the full KKT system.
//!
//! The Newton system over (vehicles, lanes, central) is block-eliminated in
//! three tiers: each vehicle condenses its block onto its coupling basis, each
//! lane center forms and factors its Schur complement, and the intersection
//! center solves the final dense system over the crossing-order variables.
//! Back-substitution retraces the tiers in reverse. The elimination is exact:
//! the result equals the monolithic Newton direction up to floating-point
//! round-off of the same operations.
//!
//! Every quantity that would cross a node boundary in a deployment is exposed
//! through the `DirRecorder` hooks with its exact float count.

use crate::kkt_core::{Direction, Iterate, Problem, RecaMode, Residuals, LANE_REG};
use crate::linalg::{mirror_lower, LdltFactor};
use crate::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// Observer for the messages exchanged while building one search direction.
/// All float counts are exact payload sizes; symmetric matrices count their
/// lower triangle only.
pub trait DirRecorder {
    fn v_to_l(&mut self, _vehicle: usize, _lane: usize, _floats: usize) {}
    fn v_to_c(&mut self, _vehicle: usize, _floats: usize) {}
    fn l_to_c(&mut self, _lane: usize, _floats: usize) {}
    fn c_to_l(&mut self, _lane: usize, _floats: usize) {}
    fn c_to_v(&mut self, _vehicle: usize, _floats: usize) {}
    fn l_to_v(&mut self, _lane: usize, _vehicle: usize, _floats: usize) {}
}

/// Recorder that ignores everything (monolithic solves).
pub struct NullRecorder;

impl DirRecorder for NullRecorder {}

/// Everything a vehicle computes locally for one direction: its factorization
/// and the solved basis/coupling columns.
struct VehicleData {
    /// (M_v)^{-1} f_v.
    minv_rhs: DVector<f64>,
    /// (M_v)^{-1} U, one solved column per basis column.
    minv_u: Vec<DVector<f64>>,
    /// (M_v)^{-1} E_T, one solved column per crossing time.
    minv_t: Vec<DVector<f64>>,
    /// Upload to the lane center.
    z_core: DMatrix<f64>,
    x_cross: DMatrix<f64>,
    u_up: DVector<f64>,
    /// Upload to the intersection center.
    w_tilde: DMatrix<f64>,
    u_tilde: DVector<f64>,
}

/// Number of floats in the lower triangle of an `n x n` symmetric matrix.
fn sym_floats(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Exact float count of the search-direction upload from a vehicle to its
/// lane center: symmetric basis core, basis-by-time cross block, solved
/// residual contraction and current coupling values.
pub fn v_to_l_floats(basis: usize, n_t: usize) -> usize {
    if basis == 0 {
        0
    } else {
        sym_floats(basis) + basis * n_t + 2 * basis
    }
}

/// Exact float count of the vehicle-to-center upload.
pub fn v_to_c_floats(n_t: usize) -> usize {
    if n_t == 0 {
        0
    } else {
        sym_floats(n_t) + 2 * n_t
    }
}

/// Exact float count of the lane-to-center upload over the lane's stacked
/// crossing times.
pub fn l_to_c_floats(n_lane_t: usize) -> usize {
    sym_floats(n_lane_t) + n_lane_t
}

fn vehicle_condense(
    prob: &Problem,
    i: usize,
    it: &Iterate,
    rhs: &DVector<f64>,
) -> Result<VehicleData> {
    let vb = &prob.vehicles[i];
    let factor = prob.vehicle_factor(i, &it.vehicles[i])?;
    let minv_rhs = factor.solve(rhs)?;

    let basis = &prob.coupling.basis[i];
    let n_t = vb.tr.n_t();
    let n_w = vb.tr.n_w();

    let mut minv_u = Vec::with_capacity(basis.len());
    for col in basis {
        let mut e = DVector::zeros(vb.n_v());
        for &(row, wgt) in col {
            e[row] = wgt;
        }
        minv_u.push(factor.solve(&e)?);
    }
    let mut minv_t = Vec::with_capacity(n_t);
    for t in 0..n_t {
        let mut e = DVector::zeros(vb.n_v());
        e[n_w + t] = 1.0;
        minv_t.push(factor.solve(&e)?);
    }

    let b = basis.len();
    let mut z_core = DMatrix::zeros(b, b);
    for c in 0..b {
        for r in c..b {
            // Lower triangle, mirrored afterwards: this defines the exact
            // symmetric payload used identically by every solve path.
            z_core[(r, c)] = prob.couple_up(i, &minv_u[c])[r];
        }
    }
    mirror_lower(&mut z_core);
    let mut x_cross = DMatrix::zeros(b, n_t);
    for t in 0..n_t {
        x_cross.column_mut(t).copy_from(&prob.couple_up(i, &minv_t[t]));
    }
    let u_up = prob.couple_up(i, &minv_rhs);

    let mut w_tilde = DMatrix::zeros(n_t, n_t);
    for c in 0..n_t {
        for r in c..n_t {
            w_tilde[(r, c)] = minv_t[c][n_w + r];
        }
    }
    mirror_lower(&mut w_tilde);
    let u_tilde = DVector::from_fn(n_t, |t, _| minv_rhs[n_w + t]);

    Ok(VehicleData { minv_rhs, minv_u, minv_t, z_core, x_cross, u_up, w_tilde, u_tilde })
}

struct LaneData {
    /// Columns of the lane Schur complement: map from lane rows to the lane's
    /// stacked crossing-time directions.
    minv_c: DMatrix<f64>,
    minv_rhs: DVector<f64>,
    /// Uploads to the center.
    y_mat: DMatrix<f64>,
    y_vec: DVector<f64>,
    /// (vehicle, local time index) per stacked column.
    t_cols: Vec<(usize, usize)>,
}

fn lane_condense(
    prob: &Problem,
    l: usize,
    it: &Iterate,
    lane_rhs: &DVector<f64>,
    vdata: &[VehicleData],
) -> Result<Option<LaneData>> {
    let lane = &prob.lanes[l];
    if lane.n_z == 0 {
        return Ok(None);
    }
    let n_z = lane.n_z;
    let n_rows = lane.n_rows;

    // Local lane block.
    let mut mbar = DMatrix::zeros(n_z, n_z);
    match prob.mode {
        RecaMode::Exact => {
            for r in 0..n_rows {
                mbar[(r, n_rows + r)] = 1.0;
                mbar[(n_rows + r, r)] = 1.0;
                let (mu, s) = (it.lanes[l][r], it.lanes[l][n_rows + r]);
                mbar[(n_rows + r, n_rows + r)] = mu / s;
            }
        }
        RecaMode::Primal => {
            for r in 0..n_z {
                mbar[(r, r)] = LANE_REG;
            }
        }
        RecaMode::Dual => {}
    }
    // Subtract the vehicle Schur terms Sc Z Sc'.
    for &vi in &lane.vehicles {
        let sc = &prob.coupling.scatter[vi];
        let z = &vdata[vi].z_core;
        for &(r1, b1, s1) in sc {
            for &(r2, b2, s2) in sc {
                mbar[(r1, r2)] -= s1 * s2 * z[(b1, b2)];
            }
        }
    }
    let fac = LdltFactor::new(&mbar);
    if fac.is_singular() {
        return Err(Error::Singular(format!("lane {l} Schur complement")));
    }

    // Coupling to the center: stacked crossing-time columns of the lane's
    // vehicles.
    let mut t_cols = Vec::new();
    for &vi in &lane.vehicles {
        for t in 0..prob.vehicles[vi].tr.n_t() {
            t_cols.push((vi, t));
        }
    }
    let n_lt = t_cols.len();
    let mut c_mat = DMatrix::zeros(n_z, n_lt);
    let mut col0 = 0;
    for &vi in &lane.vehicles {
        let n_t = prob.vehicles[vi].tr.n_t();
        for &(lane_row, bcol, sign) in &prob.coupling.scatter[vi] {
            for t in 0..n_t {
                c_mat[(lane_row, col0 + t)] += sign * vdata[vi].x_cross[(bcol, t)];
            }
        }
        col0 += n_t;
    }

    // Reduced right-hand side: f_L - sum Sc u_i.
    let mut fbar = lane_rhs.clone();
    for &vi in &lane.vehicles {
        for &(lane_row, bcol, sign) in &prob.coupling.scatter[vi] {
            fbar[lane_row] -= sign * vdata[vi].u_up[bcol];
        }
    }

    let mut minv_c = DMatrix::zeros(n_z, n_lt);
    for t in 0..n_lt {
        let col = fac.solve_refined(&mbar, &c_mat.column(t).into_owned(), 2)?;
        minv_c.column_mut(t).copy_from(&col);
    }
    let minv_rhs = fac.solve_refined(&mbar, &fbar, 2)?;

    let mut y_mat = DMatrix::zeros(n_lt, n_lt);
    for c in 0..n_lt {
        for r in c..n_lt {
            y_mat[(r, c)] = c_mat.column(r).dot(&minv_c.column(c));
        }
    }
    mirror_lower(&mut y_mat);
    let y_vec = c_mat.transpose() * &minv_rhs;

    Ok(Some(LaneData { minv_c, minv_rhs, y_mat, y_vec, t_cols }))
}

/// Compute the Newton direction for the whole system by hierarchical block
/// elimination. `res` is the reported-form residual at the iterate.
pub fn search_direction(
    prob: &Problem,
    it: &Iterate,
    res: &Residuals,
    rec: &mut dyn DirRecorder,
) -> Result<Direction> {
    // Right-hand side: -r in solver form.
    let mut rhs = res.clone();
    prob.to_solver_form(&mut rhs, it);
    for r in rhs.vehicles.iter_mut() {
        r.neg_mut();
    }
    for r in rhs.lanes.iter_mut() {
        r.neg_mut();
    }
    rhs.central.neg_mut();

    // Tier 1: vehicles.
    let mut vdata = Vec::with_capacity(prob.n_vehicles());
    for i in 0..prob.n_vehicles() {
        let vd = vehicle_condense(prob, i, it, &rhs.vehicles[i])?;
        let vb = &prob.vehicles[i];
        rec.v_to_l(i, vb.lane, v_to_l_floats(vd.minv_u.len(), vb.tr.n_t()));
        rec.v_to_c(i, v_to_c_floats(vb.tr.n_t()));
        vdata.push(vd);
    }

    // Tier 2: lanes.
    let mut ldata = Vec::with_capacity(prob.lanes.len());
    for l in 0..prob.lanes.len() {
        let ld = lane_condense(prob, l, it, &rhs.lanes[l], &vdata)?;
        if let Some(ld) = &ld {
            if !ld.t_cols.is_empty() {
                rec.l_to_c(l, l_to_c_floats(ld.t_cols.len()));
            }
        }
        ldata.push(ld);
    }

    // Tier 3: center.
    let n_c = prob.central.n_c();
    let dz_c = if n_c > 0 {
        let mut m = DMatrix::zeros(2 * n_c, 2 * n_c);
        for c in 0..n_c {
            m[(c, n_c + c)] = 1.0;
            m[(n_c + c, c)] = 1.0;
            m[(n_c + c, n_c + c)] = it.central.mu[c] / it.central.s[c];
        }
        for i in 0..prob.n_vehicles() {
            let th = &prob.coupling.theta[i];
            let w = &vdata[i].w_tilde;
            for &(r1, t1, s1) in th {
                for &(r2, t2, s2) in th {
                    m[(r1, r2)] -= s1 * s2 * w[(t1, t2)];
                }
            }
        }
        for ld in ldata.iter().flatten() {
            for (c1, &(v1, t1)) in ld.t_cols.iter().enumerate() {
                for (c2, &(v2, t2)) in ld.t_cols.iter().enumerate() {
                    // Scatter Y through the crossing-order rows of both
                    // stacked time columns.
                    for &(r1, tt1, s1) in &prob.coupling.theta[v1] {
                        if tt1 != t1 {
                            continue;
                        }
                        for &(r2, tt2, s2) in &prob.coupling.theta[v2] {
                            if tt2 != t2 {
                                continue;
                            }
                            m[(r1, r2)] -= s1 * s2 * ld.y_mat[(c1, c2)];
                        }
                    }
                }
            }
        }

        let mut f = rhs.central.clone();
        for i in 0..prob.n_vehicles() {
            for &(row, t, sign) in &prob.coupling.theta[i] {
                f[row] -= sign * vdata[i].u_tilde[t];
            }
        }
        for ld in ldata.iter().flatten() {
            for (c, &(vi, t)) in ld.t_cols.iter().enumerate() {
                for &(row, tt, sign) in &prob.coupling.theta[vi] {
                    if tt == t {
                        f[row] += sign * ld.y_vec[c];
                    }
                }
            }
        }

        let fac = LdltFactor::new(&m);
        if fac.is_singular() {
            return Err(Error::Singular("central system".into()));
        }
        fac.solve_refined(&m, &f, 2)?
    } else {
        DVector::zeros(0)
    };
    let dmu_c = dz_c.rows(0, n_c).into_owned();
    let ds_c = dz_c.rows(n_c, n_c).into_owned();

    // Back-substitution: lanes.
    let mut dz_l = Vec::with_capacity(prob.lanes.len());
    for (l, ld) in ldata.iter().enumerate() {
        match ld {
            None => dz_l.push(DVector::zeros(prob.lanes[l].n_z)),
            Some(ld) => {
                let n_lt = ld.t_cols.len();
                let mut g = DVector::zeros(n_lt);
                for (c, &(vi, t)) in ld.t_cols.iter().enumerate() {
                    for &(row, tt, sign) in &prob.coupling.theta[vi] {
                        if tt == t {
                            g[c] += sign * dmu_c[row];
                        }
                    }
                }
                if n_lt > 0 {
                    rec.c_to_l(l, n_lt);
                }
                dz_l.push(&ld.minv_rhs + &ld.minv_c * g);
            }
        }
    }

    // Back-substitution: vehicles.
    let mut dv = Vec::with_capacity(prob.n_vehicles());
    for i in 0..prob.n_vehicles() {
        let vb = &prob.vehicles[i];
        let vd = &vdata[i];
        let c = prob.couple_down(i, &dz_l[vb.lane]);
        if !prob.coupling.scatter[i].is_empty() {
            rec.l_to_v(vb.lane, i, prob.coupling.scatter[i].len());
        }
        let mut t_bcast = DVector::<f64>::zeros(vb.tr.n_t());
        for &(row, t, sign) in &prob.coupling.theta[i] {
            t_bcast[t] += sign * dmu_c[row];
        }
        if vb.tr.n_t() > 0 {
            rec.c_to_v(i, vb.tr.n_t());
        }
        let mut dz = vd.minv_rhs.clone();
        for (b, col) in vd.minv_u.iter().enumerate() {
            dz.axpy(-c[b], col, 1.0);
        }
        for (t, col) in vd.minv_t.iter().enumerate() {
            dz.axpy(-t_bcast[t], col, 1.0);
        }
        dv.push(prob.unpack_vehicle(i, &dz));
    }

    Ok(Direction {
        vehicles: dv,
        lanes: dz_l,
        central: crate::kkt_core::CentralVars { mu: dmu_c, s: ds_c },
    })
}
