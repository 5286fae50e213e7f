mod common;

use common::linearization_gap;
use flatpwa::plants::{AircraftParams, FlatPlant, PmsmParams, UavParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn aircraft_closed_loop_is_a_double_integrator() {
    let p = AircraftParams::default();
    let gap = linearization_gap(&p, &[0.1, 0.0], |t| vec![0.5 * (3.0 * t).sin()]);
    assert!(gap <= 1e-6, "{gap:e}");
}

#[test]
fn uav_closed_loop_is_two_double_integrators() {
    let p = UavParams::default();
    let gap = linearization_gap(&p, &[0.0, 0.0, 0.3, 15.0], |t| vec![0.5 * t.sin(), 0.3 * (2.0 * t).cos()]);
    assert!(gap <= 1e-6, "{gap:e}");
}

#[test]
fn pmsm_closed_loop_is_a_chain() {
    let p = PmsmParams::default();
    let gap = linearization_gap(&p, &p.x_e, |t| vec![0.2 * t.sin(), 10.0 * t.cos()]);
    assert!(gap <= 1e-6, "{gap:e}");
}

#[test]
fn aircraft_bound_chain_on_random_pairs() {
    let p = AircraftParams::default();
    let k = p.lipschitz();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut draw = || [rng.gen_range(-p.phi_bar..p.phi_bar), rng.gen_range(-p.v_bar..p.v_bar)];
    for _ in 0..10_000 {
        let (a, b) = (draw(), draw());
        let d = (a[0] - b[0]).hypot(a[1] - b[1]);
        let fa = p.phi_scalar(a[0], a[1]).unwrap();
        let fb = p.phi_scalar(b[0], b[1]).unwrap();
        assert!((fa - fb).abs() <= k.gamma_phi * d + 1e-12);
        let (ga, gb) = (p.phi_grad(a[0], a[1]).unwrap(), p.phi_grad(b[0], b[1]).unwrap());
        assert!((ga.0 - gb.0).abs() <= k.c_z * d + 1e-12);
        assert!((ga.1 - gb.1).abs() <= k.c_v * d + 1e-12);
    }
}

#[test]
fn applied_input_is_phi_of_flat_state() {
    let p = PmsmParams::default();
    let x = [0.03, 0.01, 0.05];
    let v = [1.0, -20.0];
    let u = p.applied_input(&x, &v).unwrap();
    let z = p.to_flat(&x);
    let zeta: Vec<f64> = z.iter().copied().chain(v).collect();
    assert!((u - p.phi_at(&zeta)).amax() < 1e-12);
}
