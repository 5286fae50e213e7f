mod common;

use flatpwa::controllers::{clf_model, clf_step, mpc_step, shift_cells};
use flatpwa::miqp::{solve_cells, solve_miqp, SolveOptions};
use common::problem;
use flatpwa::scenario::Problem;
use flatpwa::sim::{write_csv, Law, SimOutput};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SCENARIOS: [&str; 9] = [
    "aircraft_mpc",
    "aircraft_mpc_rate",
    "aircraft_flmpc",
    "aircraft_flmpc_rate",
    "aircraft_clf",
    "pmsm_case1",
    "pmsm_case2",
    "uav_mpc",
    "uav_mpc_csv",
];

fn run_from(p: &Problem, x0: &[f64], duration: Option<f64>) -> SimOutput {
    let mut cfg = p.sim_config().unwrap();
    if let Some(d) = duration {
        cfg.duration = d;
    }
    p.closed_loop().unwrap().simulate(x0, &cfg).unwrap()
}

fn run(p: &Problem) -> SimOutput {
    run_from(p, &p.scenario.sim.x0, None)
}

#[test]
fn every_fixture_scenario_builds() {
    for name in SCENARIOS {
        let p = problem(name);
        p.law().unwrap();
        let cfg = p.sim_config().unwrap();
        assert!(cfg.ts > 0.0, "{name}");
    }
}

#[test]
fn aircraft_mpc_keeps_true_constraints_and_converges() {
    let p = problem("aircraft_mpc");
    let o = run(&p);
    assert!(o.aborted.is_none(), "{:?}", o.aborted);
    let s = &o.summary;
    assert_eq!((s.input_violations, s.state_violations, s.forecast_violations), (0, 0, 0), "{s:?}");
    assert!(o.rows.iter().all(|r| r.z[0] <= 0.2567 + 1e-9));
    let settled = o.rows.iter().position(|r| r.z[0].hypot(r.z[1]) <= 1e-2).expect("reaches the origin");
    assert!(o.rows[settled..].iter().all(|r| r.z[0].hypot(r.z[1]) <= 1e-2));
    assert!(o.rows[settled].t <= 10.0);
}

#[test]
fn mpc_at_the_origin_stays_there() {
    let p = problem("aircraft_mpc");
    let spec = p.mpc_spec().unwrap();
    let out = mpc_step(&spec, &p.union, &p.big_m, &[0.0, 0.0], None, None).unwrap();
    assert!(out.v.amax() < 1e-8);
    assert!(out.z_pred.iter().all(|z| z.amax() < 1e-8));
}

#[test]
fn forecast_pairs_lie_in_the_admissible_union() {
    let p = problem("aircraft_mpc");
    let spec = p.mpc_spec().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..20 {
        let z0 = [rng.gen_range(-0.3..0.25), rng.gen_range(-1.0..1.0)];
        let Ok(out) = mpc_step(&spec, &p.union, &p.big_m, &z0, None, None) else { continue };
        for (z, v) in out.z_pred.iter().zip(&out.v_pred) {
            let zeta: Vec<f64> = z.iter().chain(v.iter()).copied().collect();
            assert!(p.union.residual(&zeta) <= 1e-7, "z0 = {z0:?}");
        }
    }
}

#[test]
fn flmpc_forecast_leaves_the_bound_where_mpc_does_not() {
    let fl = run(&problem("aircraft_flmpc_rate"));
    let mpc = run(&problem("aircraft_mpc_rate"));
    assert!(fl.aborted.is_none() && mpc.aborted.is_none());
    assert!(fl.summary.forecast_violations >= 1, "{:?}", fl.summary);
    assert_eq!(fl.summary.input_violations, 0);
    assert_eq!(mpc.summary.forecast_violations, 0);
    assert_eq!(mpc.summary.input_violations, 0);
}

#[test]
fn clf_decreases_along_sampled_trajectories() {
    let p = problem("aircraft_clf");
    let Law::Clf { spec, .. } = p.law().unwrap() else { unreachable!() };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..5 {
        let z0 = [rng.gen_range(-0.3..0.25), rng.gen_range(-1.0..1.0)];
        let o = run_from(&p, &z0, Some(4.0));
        assert!(o.aborted.is_none());
        assert_eq!(o.summary.input_violations, 0);
        for w in o.rows.windows(2) {
            if w[0].z[0].hypot(w[0].z[1]) > 1e-6 {
                assert!(spec.value(&w[1].z) < spec.value(&w[0].z) + 1e-9, "t = {}", w[0].t);
            }
        }
    }
}

#[test]
fn clf_argmin_ignores_cost_scaling() {
    let p = problem("aircraft_clf");
    let Law::Clf { spec, policy, .. } = p.law().unwrap() else { unreachable!() };
    let (a, b) = p.plant.brunovsky();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut checked = 0;
    for _ in 0..100 {
        let z = [rng.gen_range(-0.3..0.25), rng.gen_range(-1.0..1.0)];
        let lambda = rng.gen_range(1e-3..1e3);
        let m = clf_model(&spec, &p.union, &p.big_m, policy, &a, &b, &z).unwrap();
        let base = solve_miqp(&m, &SolveOptions::default()).unwrap();
        let mut scaled = m.clone();
        scaled.h *= lambda;
        scaled.g *= lambda;
        scaled.c0 *= lambda;
        let r = solve_miqp(&scaled, &SolveOptions::default()).unwrap();
        assert_eq!(base.status, r.status);
        if base.has_solution() {
            checked += 1;
            assert!((base.continuous(&m)[0] - r.continuous(&scaled)[0]).abs() <= 1e-6, "z = {z:?}, λ = {lambda}");
        }
    }
    assert!(checked > 50);
}

#[test]
fn clf_at_the_origin_returns_zero() {
    let p = problem("aircraft_clf");
    let Law::Clf { spec, policy, solve } = p.law().unwrap() else { unreachable!() };
    let (a, b) = p.plant.brunovsky();
    let out = clf_step(&spec, &p.union, &p.big_m, policy, (&a, &b), &[0.0, 0.0], &solve).unwrap();
    assert!(out.v.amax() < 1e-8);
}

#[test]
fn pmsm_low_input_weight_settles_quickly() {
    let o = run(&problem("pmsm_case1"));
    let s = &o.summary;
    assert!(o.aborted.is_none());
    assert_eq!((s.input_violations, s.state_violations, s.forecast_violations), (0, 0, 0));
    assert!(s.final_error < 1e-3, "{s:?}");
    assert!(s.settle_times.iter().all(|t| t.is_some_and(|t| t < 2.0)), "{s:?}");
}

#[test]
fn uav_tracks_the_circle_without_violations() {
    let p = problem("uav_mpc");
    let o = run_from(&p, &p.scenario.sim.x0, Some(2.0));
    let s = &o.summary;
    assert!(o.aborted.is_none(), "{:?}", o.aborted);
    assert_eq!((s.input_violations, s.state_violations, s.forecast_violations, s.infeasible_steps), (0, 0, 0, 0));
    // airspeed heads from 15 towards the 18 m/s reference
    assert!(o.rows.last().unwrap().u[0] > 15.0);
}

#[test]
fn single_thread_runs_are_byte_identical() {
    let p = problem("aircraft_mpc");
    let mut cfg = p.sim_config().unwrap();
    cfg.record_timing = false;
    cfg.duration = 3.0;
    let csv = || {
        let o = p.closed_loop().unwrap().simulate(&p.scenario.sim.x0, &cfg).unwrap();
        let mut buf = Vec::new();
        write_csv(p.plant.as_ref(), &o.rows, &mut buf).unwrap();
        buf
    };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let (a, b) = pool.install(|| (csv(), csv()));
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("t,x1,x2,z1,z2,u1,v1,cell_index,solver_ms\n"));
}

#[test]
fn shifted_forecasts_stay_feasible() {
    // measured, not a guarantee: the shifted plan plus some tail cell is feasible
    let p = problem("aircraft_mpc");
    let spec = p.mpc_spec().unwrap();
    let o = run_from(&p, &p.scenario.sim.x0, Some(3.0));
    let mut ok = 0;
    let mut total = 0;
    for w in o.rows.windows(2) {
        let prev = mpc_step(&spec, &p.union, &p.big_m, &w[0].z, None, None).unwrap();
        let shifted = shift_cells(&prev.cells).unwrap();
        let next = flatpwa::controllers::mpc_model(&spec, &p.union, &p.big_m, &w[1].z, None).unwrap();
        total += 1;
        if (0..p.union.len()).any(|tail| {
            let mut cells = shifted.clone();
            *cells.last_mut().unwrap() = tail;
            solve_cells(&next, &cells).unwrap().is_some()
        }) {
            ok += 1;
        }
    }
    assert!(ok * 100 >= 95 * total, "{ok}/{total}");
}
