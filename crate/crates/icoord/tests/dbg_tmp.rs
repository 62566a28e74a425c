use icoord::hier_linalg::{search_direction, NullRecorder};
use icoord::kkt_core::{HessianMode, Iterate, Problem, RecaMode};
use icoord::pdip_solver::*;
use icoord::reca_param::RhoSlope;
use icoord::scenario::{Lane, Scenario, Vehicle, Zone};

fn single_vehicle() -> Scenario {
    Scenario {
        lanes: vec![Lane { zones: vec![Zone { id: 0, p_in: 0.0, p_out: 4.5 }], vehicles: vec![0] }],
        vehicles: vec![Vehicle { lane: 0, p0: -60.0, v0: 15.0, v_ref: 15.0, params: None }],
        order: vec![],
        horizon: 20,
        dt: 0.3,
        default_params: None,
    }
}

fn run_variant(prob: &Problem, armijo: bool, nu_ratchet: bool, scaled_norm: bool, max_iters: usize) {
    let cfg = SolverConfig::default();
    let mut it = prob.initial_iterate().unwrap();
    let mut tau = cfg.tau0;
    let mut nu_prev = 1.0f64;
    let norm = |prob: &Problem, it: &Iterate, tau: f64| -> f64 {
        let mut res = prob.residuals(it, tau);
        if scaled_norm {
            prob.to_solver_form(&mut res, it);
        }
        res.inf_norm()
    };
    for iter in 1..=max_iters {
        let r_inf = norm(prob, &it, tau);
        if r_inf < cfg.tol && (tau < cfg.tol) {
            println!("  CONVERGED at iter {iter} r {r_inf:.3e} tau {tau:.3e}");
            return;
        }
        if r_inf < tau {
            tau = (cfg.eta * tau).max(cfg.tau_min);
        }
        let mut mult: f64 = 0.0;
        for v in &it.vehicles { mult = mult.max(v.lam.amax()).max(v.mu.amax()); }
        let nu = if nu_ratchet { nu_prev.max(1.0).max(1.1 * mult) } else { (1.1 * mult).max(1.0) };
        nu_prev = nu;
        let res = prob.residuals(&it, tau);
        let dir = search_direction(prob, &it, &res, &mut NullRecorder).unwrap();
        let amax = fraction_to_boundary(prob, &it, &dir, cfg.kappa);
        let alpha = if armijo {
            let phi0 = merit(prob, &it, tau, nu).total();
            let dphi = merit_directional_derivative(prob, &it, &dir, tau, nu);
            let mut a = amax;
            let mut chosen = None;
            for _ in 0..cfg.max_trials {
                let cand = prob.step(&it, &dir, a);
                if merit(prob, &cand, tau, nu).total() <= phi0 + a * cfg.gamma * dphi {
                    chosen = Some(a);
                    break;
                }
                a *= cfg.beta;
            }
            match chosen { Some(a) => a, None => { println!("  LS FAIL iter {iter}"); return; } }
        } else { amax };
        it = prob.step(&it, &dir, alpha);
        prob.clip_iterate(&mut it);
        if iter % 10 == 0 || iter < 8 {
            println!("  it {iter:3} r {:.3e} tau {tau:.2e} a {alpha:.3e}", norm(prob, &it, tau));
        }
    }
    println!("  NOT CONVERGED r {:.3e} tau {tau:.2e}", norm(prob, &it, tau));
}

#[test]
fn dbg_variants() {
    let prob = Problem::new(single_vehicle(), RecaMode::Exact, HessianMode::GaussNewton, RhoSlope::Continuity).unwrap();
    println!("A: no armijo, alpha = amax:");
    run_variant(&prob, false, false, false, 120);
    println!("B: armijo, nu fresh each iter:");
    run_variant(&prob, true, false, false, 120);
    println!("C: armijo, nu fresh, scaled compl norm:");
    run_variant(&prob, true, false, true, 120);
}

fn run_variant2(prob: &Problem, eta: f64, gamma: f64, max_iters: usize) {
    let cfg = SolverConfig { eta, gamma, ..Default::default() };
    let mut it = prob.initial_iterate().unwrap();
    let mut tau = cfg.tau0;
    let mut n_rej = 0usize;
    for iter in 1..=max_iters {
        let r_inf = prob.residuals(&it, tau).inf_norm();
        if r_inf < cfg.tol && tau < cfg.tol {
            println!("  CONVERGED at iter {iter} (rejected trials {n_rej})");
            return;
        }
        if r_inf < tau { tau = (cfg.eta * tau).max(cfg.tau_min); }
        let mut mult: f64 = 0.0;
        for v in &it.vehicles { mult = mult.max(v.lam.amax()).max(v.mu.amax()); }
        let nu = (1.1 * mult).max(1.0);
        let res = prob.residuals(&it, tau);
        let dir = search_direction(prob, &it, &res, &mut NullRecorder).unwrap();
        let amax = fraction_to_boundary(prob, &it, &dir, cfg.kappa);
        let phi0 = merit(prob, &it, tau, nu).total();
        let dphi = merit_directional_derivative(prob, &it, &dir, tau, nu);
        let mut a = amax;
        let mut ok = false;
        for _ in 0..cfg.max_trials {
            let cand = prob.step(&it, &dir, a);
            if merit(prob, &cand, tau, nu).total() <= phi0 + a * cfg.gamma * dphi { ok = true; break; }
            a *= cfg.beta; n_rej += 1;
        }
        if !ok { println!("  LS FAIL iter {iter}"); return; }
        it = prob.step(&it, &dir, a);
        prob.clip_iterate(&mut it);
        if iter % 20 == 0 {
            println!("  it {iter:3} r {:.3e} tau {tau:.2e} a {a:.3e}", prob.residuals(&it, tau).inf_norm());
        }
    }
    println!("  NOT CONVERGED");
}

#[test]
fn dbg_eta() {
    let prob = Problem::new(single_vehicle(), RecaMode::Exact, HessianMode::GaussNewton, RhoSlope::Continuity).unwrap();
    for eta in [0.5, 0.7, 0.8, 0.9] {
        println!("eta {eta}:");
        run_variant2(&prob, eta, 1e-4, 300);
    }
}

#[test]
fn dbg_taufloor() {
    use icoord::pdip_solver::*;
    let zone = icoord::scenario::Zone { id: 0, p_in: 0.0, p_out: 4.5 };
    let mut sc = Scenario {
        lanes: vec![
            icoord::scenario::Lane { zones: vec![zone], vehicles: vec![0, 1] },
            icoord::scenario::Lane { zones: vec![zone], vehicles: vec![2, 3] },
        ],
        vehicles: vec![
            icoord::scenario::Vehicle { lane: 0, p0: -50.0, v0: 15.0, v_ref: 15.0, params: None },
            icoord::scenario::Vehicle { lane: 0, p0: -40.0, v0: 15.0, v_ref: 15.0, params: None },
            icoord::scenario::Vehicle { lane: 1, p0: -45.0, v0: 15.0, v_ref: 15.0, params: None },
            icoord::scenario::Vehicle { lane: 1, p0: -36.0, v0: 15.0, v_ref: 15.0, params: None },
        ],
        order: vec![],
        horizon: 20,
        dt: 0.3,
        default_params: None,
    };
    sc.order = icoord::scenario::default_crossing_order(&sc);
    let prob = Problem::new(sc, RecaMode::Exact, HessianMode::GaussNewton, RhoSlope::Continuity).unwrap();
    let cfg = SolverConfig::default();
    let (_, full) = solve(&prob, &cfg, LinSolver::Hierarchical, &mut NullObserver);
    println!("full: {:?} iters {} obj {:.6e}", full.status, full.iterations, full.objective);
    for tm in [1e-2, 1e-3, 1e-4] {
        let floored = SolverConfig { tau_min: tm, ..SolverConfig::default() };
        let (_, fast) = solve(&prob, &floored, LinSolver::Hierarchical, &mut NullObserver);
        println!("fast tm {tm:.0e}: {:?} iters {} obj {:.6e} relgap {:.3}", fast.status, fast.iterations, fast.objective, (fast.objective - full.objective).abs() / full.objective);
    }
}

#[test]
fn dbg_trace4() {
    use icoord::pdip_solver::*;
    let zone = icoord::scenario::Zone { id: 0, p_in: 0.0, p_out: 4.5 };
    let mut sc = Scenario {
        lanes: vec![
            icoord::scenario::Lane { zones: vec![zone], vehicles: vec![0, 1] },
            icoord::scenario::Lane { zones: vec![zone], vehicles: vec![2, 3] },
        ],
        vehicles: vec![
            icoord::scenario::Vehicle { lane: 0, p0: -50.0, v0: 15.0, v_ref: 15.0, params: None },
            icoord::scenario::Vehicle { lane: 0, p0: -40.0, v0: 15.0, v_ref: 15.0, params: None },
            icoord::scenario::Vehicle { lane: 1, p0: -45.0, v0: 15.0, v_ref: 15.0, params: None },
            icoord::scenario::Vehicle { lane: 1, p0: -36.0, v0: 15.0, v_ref: 15.0, params: None },
        ],
        order: vec![],
        horizon: 20,
        dt: 0.3,
        default_params: None,
    };
    sc.order = icoord::scenario::default_crossing_order(&sc);
    let prob = Problem::new(sc, RecaMode::Exact, HessianMode::GaussNewton, RhoSlope::Continuity).unwrap();
    let cfg = SolverConfig { max_iters: 60, ..Default::default() };
    let (_, rep) = solve(&prob, &cfg, LinSolver::Hierarchical, &mut NullObserver);
    for t in &rep.trace {
        println!("it {:3} r {:.3e} tau {:.2e} a {:.3e} amax {:.3e} phi {:.4e}", t.iter, t.r_inf, t.tau, t.alpha, t.alpha_max, t.merit);
    }
    println!("status {:?}", rep.status);
}

#[test]
fn dbg_stuckrow() {
    use icoord::pdip_solver::*;
    let zone = icoord::scenario::Zone { id: 0, p_in: 0.0, p_out: 4.5 };
    let mut sc = Scenario {
        lanes: vec![
            icoord::scenario::Lane { zones: vec![zone], vehicles: vec![0, 1] },
            icoord::scenario::Lane { zones: vec![zone], vehicles: vec![2, 3] },
        ],
        vehicles: vec![
            icoord::scenario::Vehicle { lane: 0, p0: -50.0, v0: 15.0, v_ref: 15.0, params: None },
            icoord::scenario::Vehicle { lane: 0, p0: -40.0, v0: 15.0, v_ref: 15.0, params: None },
            icoord::scenario::Vehicle { lane: 1, p0: -45.0, v0: 15.0, v_ref: 15.0, params: None },
            icoord::scenario::Vehicle { lane: 1, p0: -36.0, v0: 15.0, v_ref: 15.0, params: None },
        ],
        order: vec![],
        horizon: 20,
        dt: 0.3,
        default_params: None,
    };
    sc.order = icoord::scenario::default_crossing_order(&sc);
    println!("order: {:?}", sc.order);
    let prob = Problem::new(sc, RecaMode::Exact, HessianMode::GaussNewton, RhoSlope::Continuity).unwrap();
    let cfg = SolverConfig { max_iters: 30, ..Default::default() };
    let (it, _) = solve(&prob, &cfg, LinSolver::Hierarchical, &mut NullObserver);
    let res = prob.residuals(&it, 1.0);
    for (i, rv) in res.vehicles.iter().enumerate() {
        let (idx, val) = rv.iter().enumerate().fold((0, 0.0f64), |acc, (j, &x)| if x.abs() > acc.1.abs() { (j, x) } else { acc });
        println!("veh {i}: max |r| {val:.3e} at row {idx}");
        // print crossing times
        let vb_t0 = it.vehicles[i].y.len();
        let _ = vb_t0;
    }
    for (i, v) in it.vehicles.iter().enumerate() {
        let n = v.y.len();
        println!("veh {i}: T = {:?}", &v.y.as_slice()[n-2..]);
    }
    for (l, rl) in res.lanes.iter().enumerate() {
        if rl.len() > 0 { println!("lane {l}: max |r| {:.3e}", rl.amax()); }
    }
    println!("central: max |r| {:.3e}", res.central.amax());
}

#[test]
fn dbg_twelve() {
    use icoord::pdip_solver::*;
    let zone = icoord::scenario::Zone { id: 0, p_in: 0.0, p_out: 6.0 };
    let p0s = [-118.0, -104.0, -80.0, -112.0, -98.0, -86.0, -120.0, -107.0, -92.0, -115.0, -101.0, -83.0];
    let mut sc = Scenario {
        lanes: (0..4).map(|l| icoord::scenario::Lane {
            zones: vec![zone],
            vehicles: (0..3).map(|j| l * 3 + j).collect(),
        }).collect(),
        vehicles: (0..12).map(|i| icoord::scenario::Vehicle {
            lane: i / 3, p0: p0s[i], v0: 19.44, v_ref: 19.44, params: None,
        }).collect(),
        order: vec![],
        horizon: 100,
        dt: 0.2,
        default_params: None,
    };
    // sort each lane's vehicles far-to-near? lane vehicles must be ordered rear..front or front..rear per validate; p0s chosen decreasing per lane triple
    sc.order = icoord::scenario::default_crossing_order(&sc);
    println!("pairs: {}", sc.order.len());
    let t0 = std::time::Instant::now();
    let prob = Problem::new(sc, RecaMode::Exact, HessianMode::GaussNewton, RhoSlope::Continuity).unwrap();
    let cfg = SolverConfig::default();
    let (_, full) = solve(&prob, &cfg, LinSolver::Hierarchical, &mut NullObserver);
    println!("full: {:?} iters {} obj {:.6e} ({:.1?})", full.status, full.iterations, full.objective, t0.elapsed());
    for t in full.trace.iter() {
        if t.iter % 5 == 0 || t.alpha < 0.99 {
            println!("  it {:3} r {:.3e} tau {:.2e} a {:.3e}", t.iter, t.r_inf, t.tau, t.alpha);
        }
    }
    let floored = SolverConfig { tau_min: 1e-2, ..SolverConfig::default() };
    let (_, fast) = solve(&prob, &floored, LinSolver::Hierarchical, &mut NullObserver);
    println!("floor 1e-2: {:?} iters {} obj {:.6e} relgap {:.4}", fast.status, fast.iterations, fast.objective,
        (fast.objective - full.objective).abs() / full.objective.abs());
}

#[test]
#[ignore]
fn dbg_reference() {
    use icoord::pdip_solver::*;
    use icoord::scenario_io::{generate_random_scenario, GenOptions};
    let file = generate_random_scenario(1, &GenOptions::reference_twelve()).unwrap();
    let sc = file.to_scenario().unwrap();
    println!("pairs: {}", sc.order.len());
    let t0 = std::time::Instant::now();
    let prob = Problem::new(sc, RecaMode::Exact, HessianMode::GaussNewton, RhoSlope::Continuity).unwrap();
    println!("build: {:.1?}", t0.elapsed());
    let cfg = SolverConfig { max_iters: 150, ..SolverConfig::default() };
    let t0 = std::time::Instant::now();
    let (_, full) = solve(&prob, &cfg, LinSolver::Hierarchical, &mut NullObserver);
    println!("full: {:?} iters {} obj {:.6e} ({:.1?})", full.status, full.iterations, full.objective, t0.elapsed());
    for t in full.trace.iter() {
        println!("  it {:3} r {:.3e} tau {:.2e} a {:.3e} amax {:.3e}", t.iter, t.r_inf, t.tau, t.alpha, t.alpha_max);
    }
    let floored = SolverConfig { tau_min: 1e-2, max_iters: 150, ..SolverConfig::default() };
    let t0 = std::time::Instant::now();
    let (_, fast) = solve(&prob, &floored, LinSolver::Hierarchical, &mut NullObserver);
    println!("floor 1e-2: {:?} iters {} obj {:.6e} ({:.1?})", fast.status, fast.iterations, fast.objective, t0.elapsed());
    if full.objective.abs() > 0.0 {
        println!("relgap {:.4}", (fast.objective - full.objective).abs() / full.objective.abs());
    }
}

#[test]
#[ignore]
fn dbg_merit12() {
    use icoord::pdip_solver::*;
    use icoord::scenario_io::{generate_random_scenario, GenOptions};
    let sc = generate_random_scenario(1, &GenOptions::reference_twelve()).unwrap().to_scenario().unwrap();
    let prob = Problem::new(sc, RecaMode::Exact, HessianMode::GaussNewton, RhoSlope::Continuity).unwrap();
    let cfg = SolverConfig::default();
    let mut it = prob.initial_iterate().unwrap();
    let mut tau = cfg.tau0;
    let mut nu = 1.0f64;
    let parts = |cand: &Iterate, tau: f64| -> (f64, f64, f64) {
        let obj = merit(&prob, cand, 0.0, 0.0).total();
        let viol = merit(&prob, cand, 0.0, 1.0).total() - obj;
        let barrier = merit(&prob, cand, tau, 0.0).total() - obj;
        (obj, viol, barrier)
    };
    for iter in 1..=42 {
        let mut res = prob.residuals(&it, tau);
        let mut r_inf = res.inf_norm();
        if r_inf <= cfg.tol && tau <= cfg.tau_min { println!("converged {iter}"); break; }
        if r_inf < tau { tau = (cfg.eta * tau).max(cfg.tau_min); res = prob.residuals(&it, tau); r_inf = res.inf_norm(); }
        let mut mult: f64 = 0.0;
        for v in &it.vehicles { mult = mult.max(v.lam.amax()).max(v.mu.amax()); }
        nu = nu.max(1.0).max(1.1 * mult);
        let dir = icoord::hier_linalg::search_direction(&prob, &it, &res, &mut icoord::hier_linalg::NullRecorder).unwrap();
        let amax = fraction_to_boundary(&prob, &it, &dir, cfg.kappa);
        let (alpha, _) = armijo_backtrack(&prob, &it, &dir, amax, tau, nu, &cfg, &mut NullObserver).unwrap();
        if iter >= 36 && alpha < 0.3 * amax {
            let phi0 = merit(&prob, &it, tau, nu).total();
            let dphi = merit_directional_derivative(&prob, &it, &dir, tau, nu);
            let (o0, v0, b0) = parts(&it, tau);
            println!("iter {iter} tau {tau:.2e} nu {nu:.3e} r {r_inf:.3e} amax {amax:.3e} alpha {alpha:.3e} dphi {dphi:.3e}");
            println!("  base: obj {o0:.6e} viol {v0:.6e} barrier {b0:.6e} phi {phi0:.6e}");
            let mut a = amax;
            for _ in 0..8 {
                let cand = prob.step(&it, &dir, a);
                let (o, v, b) = parts(&cand, tau);
                let phi = merit(&prob, &cand, tau, nu).total();
                let need = phi0 + a * cfg.gamma * dphi;
                println!("  a {a:.3e}: dobj {:+.4e} dviol(x nu) {:+.4e} dbarrier {:+.4e} phi-need {:+.4e}", o - o0, nu * (v - v0), b - b0, phi - need);
                a *= 0.5;
            }
            break;
        }
        it = prob.step(&it, &dir, alpha);
        prob.clip_iterate(&mut it);
    }
}

#[test]
#[ignore]
fn dbg_screen() {
    use icoord::pdip_solver::*;
    use icoord::scenario_io::{generate_random_scenario, GenOptions};
    let sc4 = {
        let mut s = Scenario {
            lanes: vec![
                Lane { zones: vec![Zone { id: 0, p_in: 0.0, p_out: 4.5 }], vehicles: vec![0, 1] },
                Lane { zones: vec![Zone { id: 0, p_in: 0.0, p_out: 4.5 }], vehicles: vec![2, 3] },
            ],
            vehicles: vec![
                Vehicle { lane: 0, p0: -50.0, v0: 15.0, v_ref: 15.0, params: None },
                Vehicle { lane: 0, p0: -40.0, v0: 15.0, v_ref: 15.0, params: None },
                Vehicle { lane: 1, p0: -45.0, v0: 15.0, v_ref: 15.0, params: None },
                Vehicle { lane: 1, p0: -36.0, v0: 15.0, v_ref: 15.0, params: None },
            ],
            order: vec![],
            horizon: 20,
            dt: 0.3,
            default_params: None,
        };
        s.order = icoord::scenario::default_crossing_order(&s);
        s
    };
    for (name, hess, eta) in [
        ("gn eta.2", HessianMode::GaussNewton, 0.2),
        ("gn eta.5", HessianMode::GaussNewton, 0.5),
        ("ex eta.2", HessianMode::Exact, 0.2),
        ("ex eta.5", HessianMode::Exact, 0.5),
        ("gn eta.1", HessianMode::GaussNewton, 0.1),
        ("ex eta.35", HessianMode::Exact, 0.35),
    ] {
        let prob = Problem::new(sc4.clone(), RecaMode::Exact, hess, RhoSlope::Continuity).unwrap();
        let cfg = SolverConfig { eta, ..SolverConfig::default() };
        let t0 = std::time::Instant::now();
        let (_, rep) = solve(&prob, &cfg, LinSolver::Hierarchical, &mut NullObserver);
        let cuts = rep.trace.iter().filter(|t| t.alpha < t.alpha_max).count();
        println!("4v {name}: {:?} iters {} cuts {} obj {:.6e} ({:.1?})", rep.status, rep.iterations, cuts, rep.objective, t0.elapsed());
    }
    // winner check at scale comes separately; quick 12-vehicle with exact hessian eta 0.5
    let sc12 = generate_random_scenario(1, &GenOptions::reference_twelve()).unwrap().to_scenario().unwrap();
    for (name, hess, eta) in [("ex eta.5", HessianMode::Exact, 0.5)] {
        let prob = Problem::new(sc12.clone(), RecaMode::Exact, hess, RhoSlope::Continuity).unwrap();
        let cfg = SolverConfig { eta, max_iters: 80, ..SolverConfig::default() };
        let t0 = std::time::Instant::now();
        let (_, rep) = solve(&prob, &cfg, LinSolver::Hierarchical, &mut NullObserver);
        let cuts = rep.trace.iter().filter(|t| t.alpha < t.alpha_max).count();
        println!("12v {name}: {:?} iters {} cuts {} obj {:.6e} ({:.1?})", rep.status, rep.iterations, cuts, rep.objective, t0.elapsed());
        for t in rep.trace.iter() {
            println!("  it {:3} r {:.3e} tau {:.2e} a {:.3e} amax {:.3e}", t.iter, t.r_inf, t.tau, t.alpha, t.alpha_max);
        }
    }
}

#[test]
#[ignore]
fn dbg_violblocks() {
    use icoord::pdip_solver::*;
    use icoord::scenario_io::{generate_random_scenario, GenOptions};
    let sc = generate_random_scenario(1, &GenOptions::reference_twelve()).unwrap().to_scenario().unwrap();
    let prob = Problem::new(sc, RecaMode::Exact, HessianMode::GaussNewton, RhoSlope::Continuity).unwrap();
    let cfg = SolverConfig::default();
    let mut it = prob.initial_iterate().unwrap();
    let mut tau = cfg.tau0;
    let mut nu = 1.0f64;
    for iter in 1..=40 {
        let mut res = prob.residuals(&it, tau);
        let mut r_inf = res.inf_norm();
        if r_inf <= cfg.tol && tau <= cfg.tau_min { println!("converged {iter}"); break; }
        if r_inf < tau { tau = (cfg.eta * tau).max(cfg.tau_min); res = prob.residuals(&it, tau); r_inf = res.inf_norm(); }
        let mut mult: f64 = 0.0;
        for v in &it.vehicles { mult = mult.max(v.lam.amax()).max(v.mu.amax()); }
        nu = nu.max(1.0).max(1.1 * mult);
        let dir = icoord::hier_linalg::search_direction(&prob, &it, &res, &mut icoord::hier_linalg::NullRecorder).unwrap();
        let amax = fraction_to_boundary(&prob, &it, &dir, cfg.kappa);
        let (alpha, _) = armijo_backtrack(&prob, &it, &dir, amax, tau, nu, &cfg, &mut NullObserver).unwrap();
        if iter >= 36 && alpha < 0.3 * amax {
            // per-part violation at base and at amax: viol part = (nu=1,tau=0) - (nu=0,tau=0)
            let p0a = merit(&prob, &it, 0.0, 1.0);
            let p0b = merit(&prob, &it, 0.0, 0.0);
            let cand = prob.step(&it, &dir, amax);
            let p1a = merit(&prob, &cand, 0.0, 1.0);
            let p1b = merit(&prob, &cand, 0.0, 0.0);
            println!("iter {iter} tau {tau:.2e} nu {nu:.2e} amax {amax:.3e} alpha {alpha:.3e}");
            for i in 0..p0a.vehicles.len() {
                let v0 = p0a.vehicles[i] - p0b.vehicles[i];
                let v1 = p1a.vehicles[i] - p1b.vehicles[i];
                println!("  veh {i}: viol {v0:.3e} -> {v1:.3e}");
            }
            for l in 0..p0a.lanes.len() {
                let v0 = p0a.lanes[l] - p0b.lanes[l];
                let v1 = p1a.lanes[l] - p1b.lanes[l];
                println!("  lane {l}: viol {v0:.3e} -> {v1:.3e}");
            }
            println!("  central: viol {:.3e} -> {:.3e}", p0a.central - p0b.central, p1a.central - p1b.central);
            // Decompose worst vehicle: g rows vs h rows.
            let mut worst = 0; let mut wv = 0.0;
            for i in 0..p1a.vehicles.len() {
                let d = (p1a.vehicles[i] - p1b.vehicles[i]) - (p0a.vehicles[i] - p0b.vehicles[i]);
                if d > wv { wv = d; worst = i; }
            }
            let (_, g1, h1) = prob.vehicle_local_values(worst, &cand.vehicles[worst].y);
            let s1 = &cand.vehicles[worst].s;
            let gsum: f64 = g1.iter().map(|x| x.abs()).sum();
            let mut hsum = 0.0f64; let mut hmaxrow = 0usize; let mut hmax = 0.0f64;
            for r in 0..h1.len() {
                let v = (h1[r] + s1[r]).abs();
                hsum += v;
                if v > hmax { hmax = v; hmaxrow = r; }
            }
            let mut gmaxrow = 0usize; let mut gmax = 0.0f64;
            for r in 0..g1.len() { let v = g1[r].abs(); if v > gmax { gmax = v; gmaxrow = r; } }
            println!("  worst veh {worst}: g_l1 {gsum:.3e} (max {gmax:.3e} row {gmaxrow}/{}) h_l1 {hsum:.3e} (max {hmax:.3e} row {hmaxrow}/{})", g1.len(), h1.len());
            break;
        }
        it = prob.step(&it, &dir, alpha);
        prob.clip_iterate(&mut it);
    }
}

#[test]
#[ignore]
fn dbg_multrows() {
    use icoord::pdip_solver::*;
    use icoord::scenario_io::{generate_random_scenario, GenOptions};
    let sc = generate_random_scenario(1, &GenOptions::reference_twelve()).unwrap().to_scenario().unwrap();
    let prob = Problem::new(sc, RecaMode::Exact, HessianMode::GaussNewton, RhoSlope::Continuity).unwrap();
    let cfg = SolverConfig::default();
    let mut it = prob.initial_iterate().unwrap();
    let mut tau = cfg.tau0;
    for iter in 1..=36 {
        let mut res = prob.residuals(&it, tau);
        let mut r_inf = res.inf_norm();
        if r_inf < tau { tau = (cfg.eta * tau).max(cfg.tau_min); res = prob.residuals(&it, tau); r_inf = res.inf_norm(); }
        let dir = icoord::hier_linalg::search_direction(&prob, &it, &res, &mut icoord::hier_linalg::NullRecorder).unwrap();
        let amax = fraction_to_boundary(&prob, &it, &dir, cfg.kappa);
        let nu = 10.0;
        let (alpha, _) = armijo_backtrack(&prob, &it, &dir, amax, tau, nu, &cfg, &mut NullObserver).unwrap();
        if iter == 36 {
            println!("iter {iter} tau {tau:.2e} r {r_inf:.3e}");
            for i in 0..prob.n_vehicles() {
                let v = &it.vehicles[i];
                let ng = v.lam.len();
                let lam_dyn = v.lam.rows(0, ng - 4).amax();
                let lam_cross = v.lam.rows(ng - 4, 4).amax();
                let mu_max = v.mu.amax();
                // argmax row of lam
                let mut am = 0; let mut av = 0.0;
                for r in 0..ng { if v.lam[r].abs() > av { av = v.lam[r].abs(); am = r; } }
                println!("  veh {i}: |lam_dyn| {lam_dyn:.3e} |lam_cross| {lam_cross:.3e} |mu| {mu_max:.3e} argmax lam row {am}/{ng}");
                // crossing-time direction magnitude
                let n_t = prob.vehicles[i].tr.n_t();
                let ny = prob.vehicles[i].tr.n_y();
                let dt_entries: Vec<f64> = (0..n_t).map(|r| dir.vehicles[i].y[ny - n_t + r]).collect();
                println!("    dT {:?}", dt_entries.iter().map(|x| format!("{x:.3e}")).collect::<Vec<_>>());
            }
        }
        it = prob.step(&it, &dir, alpha);
        prob.clip_iterate(&mut it);
    }
}

#[test]
#[ignore]
fn dbg_batch8() {
    use icoord::experiments::*;
    use icoord::kkt_core::{HessianMode, Problem, RecaMode};
    use icoord::pdip_solver::*;
    use icoord::reca_param::RhoSlope;
    use icoord::scenario_io::{generate_random_scenario, GenOptions};
    for seed in [1u64, 2, 3] {
        let sc = generate_random_scenario(seed, &GenOptions::batch_two_lane()).unwrap().to_scenario().unwrap();
        let cfg = SolverConfig::default();
        for (label, mode) in [("exact", RecaMode::Exact), ("primal", RecaMode::Primal)] {
            let t0 = std::time::Instant::now();
            let prob = Problem::new(sc.clone(), mode, HessianMode::GaussNewton, RhoSlope::Continuity).unwrap();
            let (it, rep) = solve(&prob, &cfg, LinSolver::Hierarchical, &mut NullObserver);
            println!(
                "seed {seed} {label}: {:?} iters {} obj {:.6e} sep-viol {:.2e} ({:.2?})",
                rep.status, rep.iterations, rep.objective,
                max_separation_violation(&prob, &it), t0.elapsed()
            );
        }
    }
}
