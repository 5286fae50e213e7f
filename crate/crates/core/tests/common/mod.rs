#![allow(dead_code)]

use std::path::PathBuf;

use flatpwa::kernel::Vector;
use flatpwa::plants::{rk4_step, FlatPlant};
use flatpwa::polytope::HPolytope;
use flatpwa::relu_pwa::ReluNetwork;
use flatpwa::scenario::{Problem, Scenario};

pub fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(rel)
}

pub fn network(name: &str) -> ReluNetwork {
    ReluNetwork::load(&fixture(&format!("networks/{name}.toml"))).unwrap()
}

pub const AIRCRAFT_LO: [f64; 2] = [-0.349, -5.0];
pub const AIRCRAFT_HI: [f64; 2] = [0.349, 5.0];
pub const UAV_LO: [f64; 2] = [-26.0, -26.0];
pub const UAV_HI: [f64; 2] = [26.0, 26.0];
pub const PMSM_LO: [f64; 5] = [-0.05, -0.05, -1.5, -5.0, -250.0];
pub const PMSM_HI: [f64; 5] = [0.15, 0.25, 1.5, 5.0, 250.0];

pub fn workspace(name: &str) -> (Vec<f64>, Vec<f64>) {
    match name {
        "aircraft" => (AIRCRAFT_LO.to_vec(), AIRCRAFT_HI.to_vec()),
        "uav" => (UAV_LO.to_vec(), UAV_HI.to_vec()),
        "pmsm" => (PMSM_LO.to_vec(), PMSM_HI.to_vec()),
        _ => panic!("unknown fixture {name}"),
    }
}

pub fn workspace_box(name: &str) -> HPolytope {
    let (lo, hi) = workspace(name);
    HPolytope::from_box(&lo, &hi).unwrap()
}

pub fn scenario(name: &str) -> Scenario {
    Scenario::load(&fixture(&format!("scenarios/{name}.toml"))).unwrap()
}

pub fn problem(name: &str) -> Problem {
    Problem::build(scenario(name)).unwrap()
}

pub type Signal = fn(f64) -> Vec<f64>;

/// Max relative gap between `z(x(t))` of the nonlinear loop and the Brunovský
/// response to the same `v(t)`, over `[0, 1]` with `h = 1e-4`.
pub fn linearization_gap(plant: &dyn FlatPlant, x0: &[f64], v: Signal) -> f64 {
    let (a, b) = plant.brunovsky();
    let h = 1e-4;
    let mut x = Vector::from_row_slice(x0);
    let mut z = plant.to_flat(x0);
    let mut worst: f64 = 0.0;
    for k in 0..10_000 {
        let t = k as f64 * h;
        let mut fx = |t: f64, x: &Vector| plant.closed_loop_rhs(x.as_slice(), &v(t));
        let mut fz = |t: f64, z: &Vector| Ok(&a * z + &b * Vector::from_vec(v(t)));
        x = rk4_step(&mut fx, t, &x, h).unwrap();
        z = rk4_step(&mut fz, t, &z, h).unwrap();
        let zx = plant.to_flat(x.as_slice());
        worst = worst.max((&zx - &z).amax() / z.amax().max(1.0));
    }
    worst
}
