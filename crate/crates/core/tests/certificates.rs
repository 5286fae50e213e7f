mod common;

use flatpwa::error_bounds::{grid_error_certificate, GridOptions, GridSpec, TaylorCenter};
use flatpwa::scenario::{certify, taylor_table, true_map, Decomposed, Problem, Scenario};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn decomposed(name: &str) -> (Scenario, Decomposed) {
    let sc = Scenario::load(&common::fixture(&format!("scenarios/{name}.toml"))).unwrap();
    let d = Problem::decompose(&sc).unwrap();
    (sc, d)
}

fn worst_off_grid(dec: &Decomposed, samples: usize, seed: u64) -> Vec<f64> {
    let phi = true_map(&dec.params);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = vec![0.0; dec.d.network().n2()];
    for _ in 0..samples {
        let x: Vec<f64> = dec.lo.iter().zip(&dec.hi).map(|(&l, &h)| rng.gen_range(l..h)).collect();
        let e = phi(&x) - dec.d.eval(&x).unwrap();
        for (w, e) in worst.iter_mut().zip(e.iter()) {
            *w = f64::max(*w, e.abs());
        }
    }
    worst
}

#[test]
fn aircraft_grid_certificate_matches_and_is_sound() {
    let (sc, dec) = decomposed("aircraft_mpc");
    let c = certify(&dec, sc.certify.as_ref().unwrap(), &GridOptions::default()).unwrap();
    assert!(c.points > 8_600_000, "{}", c.points);
    assert!((c.eps_bar[0] - 0.1897).abs() <= 0.02, "{c:?}");
    assert!(c.wall.as_secs_f64() <= 120.0);
    let worst = worst_off_grid(&dec, 100_000, 11);
    assert!(worst[0] <= c.eps_bar[0], "{worst:?} > {:?}", c.eps_bar);
    let mut closed = sc.certify.clone().unwrap();
    closed.endpoints = true;
    let cc = certify(&dec, &closed, &GridOptions::default()).unwrap();
    assert!(cc.eps_bar[0] >= c.eps_bar[0] && worst[0] <= cc.eps_bar[0]);
}

#[test]
fn aircraft_taylor_table() {
    let (sc, dec) = decomposed("aircraft_mpc");
    let rows = taylor_table(&dec, &sc.bounds, TaylorCenter::VertexCentroid).unwrap().unwrap();
    let expected = [
        ("+++", 4.9177, 1325.2, 0.2006),
        ("++-", 3.6495, 983.5, 0.1365),
        ("+-+", 3.6457, 982.5, 0.1379),
    ];
    assert_eq!(rows.len(), 3);
    for (pattern, r, t, h) in expected {
        let row = rows.iter().find(|b| b.pattern == pattern).unwrap_or_else(|| panic!("no cell {pattern}"));
        assert!((row.radius - r).abs() <= 1e-2, "{row:?}");
        assert!((row.eps_taylor - t).abs() <= 1.0, "{row:?}");
        assert!((row.eps_vertex - h).abs() <= 1e-2, "{row:?}");
    }
}

#[test]
fn taylor_table_is_only_for_the_aircraft() {
    let (sc, dec) = decomposed("uav_mpc");
    assert!(taylor_table(&dec, &sc.bounds, TaylorCenter::default()).unwrap().is_none());
}

#[test]
fn pmsm_axiswise_certificate_is_sound() {
    let (sc, dec) = decomposed("pmsm_case1");
    let c = certify(&dec, sc.certify.as_ref().unwrap(), &GridOptions::default()).unwrap();
    assert!((c.eps_bar[0] - 0.4927).abs() <= 1e-3 && (c.eps_bar[1] - 0.9650).abs() <= 1e-3, "{c:?}");
    let worst = worst_off_grid(&dec, 100_000, 12);
    assert!(worst.iter().zip(&c.eps_bar).all(|(w, e)| w <= e), "{worst:?}");
}

#[test]
fn uav_certificate_is_sound() {
    let (sc, dec) = decomposed("uav_mpc");
    let c = certify(&dec, sc.certify.as_ref().unwrap(), &GridOptions::default()).unwrap();
    let worst = worst_off_grid(&dec, 100_000, 13);
    assert!(worst[0] <= c.eps_bar[0], "{worst:?} > {:?}", c.eps_bar);
}

#[test]
fn self_approximation_has_zero_grid_error() {
    let (_, dec) = decomposed("aircraft_mpc");
    let net = dec.d.network().clone();
    let g = GridSpec::new(dec.lo.clone(), dec.hi.clone(), vec![0.01, 0.1]).unwrap();
    let c = grid_error_certificate(|x: &[f64]| net.forward(x).unwrap(), &dec.d, &g, &[7.2917], &GridOptions::default())
        .unwrap();
    assert!(c.eps_grid[0] <= 1e-12, "{c:?}");
}

#[test]
fn expired_deadline_reports_budget() {
    let (sc, dec) = decomposed("aircraft_mpc");
    let opts = GridOptions { deadline: Some(std::time::Instant::now()), ..Default::default() };
    let err = certify(&dec, sc.certify.as_ref().unwrap(), &opts).unwrap_err();
    assert!(matches!(err, flatpwa::Error::Budget(_)), "{err}");
}
