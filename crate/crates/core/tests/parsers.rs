//! Stable-toolchain mirror of the fuzz targets: mutated seeds must parse or
//! fail with an error, never panic.

mod common;

use std::fs;
use std::path::Path;

use flatpwa::plants::PlantParams;
use flatpwa::relu_pwa::ReluNetwork;
use flatpwa::scenario::Scenario;
use flatpwa::sim::Reference;
use proptest::prelude::*;

fn seeds(dir: &str) -> Vec<String> {
    let mut paths: Vec<_> = fs::read_dir(common::fixture(dir)).unwrap().map(|e| e.unwrap().path()).collect();
    paths.sort();
    paths.iter().map(|p| fs::read_to_string(p).unwrap()).collect()
}

/// Replace bytes `[start, start + len)` of `s` (clamped to char boundaries) with `insert`.
fn splice(s: &str, start: usize, len: usize, insert: &str) -> String {
    let mut a = start.min(s.len());
    while !s.is_char_boundary(a) {
        a -= 1;
    }
    let mut b = (a + len).min(s.len());
    while !s.is_char_boundary(b) {
        b += 1;
    }
    format!("{}{}{}", &s[..a], insert, &s[b..])
}

const TOKENS: &str = r#"(?s)(|[-+]?[0-9.eE]{1,8}|nan|inf|-inf|\[|\]|=|"|,|\n|[a-z_]{1,8}|\[\[[a-z]{1,6}\]\]|.{0,6})"#;

fn mutated(dir: &'static str) -> impl Strategy<Value = String> {
    let seeds = seeds(dir);
    (0..seeds.len(), any::<prop::sample::Index>(), 0usize..24, TOKENS)
        .prop_map(move |(i, at, len, insert)| {
            let s = &seeds[i];
            splice(s, at.index(s.len() + 1), len, &insert)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn network_toml_never_panics(text in mutated("networks")) {
        if let Ok(net) = ReluNetwork::from_toml_str(&text) {
            prop_assert!(net.forward(&vec![0.0; net.n0()]).is_ok());
        }
    }

    #[test]
    fn scenario_toml_never_panics(text in mutated("scenarios")) {
        if let Ok(sc) = Scenario::from_toml_str(&text, Path::new(".")) {
            prop_assert!(sc.sample_time() > 0.0);
        }
    }

    #[test]
    fn plant_params_never_panic(text in mutated("params")) {
        if let Ok(p) = PlantParams::from_toml_str(&text) {
            let plant = p.build();
            let (lo, hi) = plant.workspace();
            prop_assert_eq!(lo.len(), hi.len());
        }
    }

    #[test]
    fn reference_csv_never_panics_and_round_trips(text in mutated("references")) {
        if let Ok(r) = Reference::from_csv_str(&text, 4, 2) {
            let again = Reference::from_csv_str(&r.to_csv_string(), 4, 2).unwrap();
            prop_assert_eq!(again.t, r.t);
            prop_assert_eq!(again.z, r.z);
        }
    }
}

#[test]
fn seeds_themselves_parse() {
    for s in seeds("networks") {
        ReluNetwork::from_toml_str(&s).unwrap();
    }
    for s in seeds("params") {
        PlantParams::from_toml_str(&s).unwrap();
    }
    for s in seeds("scenarios") {
        Scenario::from_toml_str(&s, Path::new(".")).unwrap();
    }
    for s in seeds("references") {
        Reference::from_csv_str(&s, 4, 2).unwrap();
    }
}
