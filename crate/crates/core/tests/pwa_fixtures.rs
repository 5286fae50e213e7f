mod common;

use std::time::Instant;

use flatpwa::relu_pwa::{enumerate_cells, EnumerateOptions, PwaDecomposition};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;

fn decompose(name: &str) -> PwaDecomposition {
    enumerate_cells(&network(name), &workspace_box(name), &EnumerateOptions::default()).unwrap()
}

fn sample(rng: &mut ChaCha8Rng, name: &str) -> Vec<f64> {
    let (lo, hi) = workspace(name);
    lo.iter().zip(&hi).map(|(l, h)| rng.gen_range(*l..=*h)).collect()
}

#[test]
fn fixture_cell_counts() {
    for (name, want) in [("aircraft", 3), ("uav", 14), ("pmsm", 10)] {
        let t = Instant::now();
        let d = decompose(name);
        assert_eq!(d.len(), want, "{name}");
        assert!(t.elapsed().as_secs_f64() < 1.0, "{name} took {:?}", t.elapsed());
    }
}

#[test]
fn aircraft_forward_at_origin() {
    // hand forward pass: every neuron is active at the origin
    let h = [14.9468, 1.4271, 0.8521];
    let w2 = [-1.5659, -1.2676, 2.1689];
    let y: f64 = h.iter().zip(&w2).map(|(a, b)| a * b).sum::<f64>() + 23.6044;
    let net = network("aircraft");
    assert!((net.forward(&[0.0, 0.0]).unwrap()[0] - y).abs() < 1e-12);
    assert!((y - 0.2379).abs() < 1e-3);
}

#[test]
fn pwa_matches_forward_on_random_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for name in ["aircraft", "uav", "pmsm"] {
        let d = decompose(name);
        let net = network(name);
        let worst = (0..10_000)
            .map(|_| {
                let x = sample(&mut rng, name);
                (d.eval(&x).unwrap() - net.forward(&x).unwrap()).amax()
            })
            .fold(0.0, f64::max);
        assert!(worst <= 1e-7, "{name}: {worst}");
    }
}

#[test]
fn interior_samples_carry_their_pattern() {
    for name in ["aircraft", "uav", "pmsm"] {
        let d = decompose(name);
        let net = d.network();
        for p in &d.pieces {
            let (c, _) = p.cell.chebyshev_center().unwrap().unwrap();
            for k in 0..net.n1() {
                let pre = net.w1().row(k).transpose().dot(&c) + net.b1()[k];
                if pre.abs() > 1e-9 {
                    assert_eq!(pre.signum() as i8, p.pattern.signs()[k], "{name} {}", p.pattern);
                }
            }
            // interior-disjoint: the center is strictly outside every other cell
            for q in d.pieces.iter().filter(|q| q.pattern != p.pattern) {
                assert!(q.cell.residual(c.as_slice()) > 0.0, "{name}: {} inside {}", p.pattern, q.pattern);
            }
        }
    }
}

#[test]
fn planar_grids_are_covered() {
    for name in ["aircraft", "uav"] {
        let d = decompose(name);
        let (lo, hi) = workspace(name);
        for i in 0..50 {
            for j in 0..50 {
                let x = [
                    lo[0] + (hi[0] - lo[0]) * i as f64 / 49.0,
                    lo[1] + (hi[1] - lo[1]) * j as f64 / 49.0,
                ];
                assert!(d.locate(&x).is_ok(), "{name} {x:?}");
            }
        }
    }
}

#[test]
fn aircraft_network_lipschitz() {
    assert!((decompose("aircraft").lipschitz() - 7.29).abs() <= 0.01);
}
