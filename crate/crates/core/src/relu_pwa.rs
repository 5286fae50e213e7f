//! Exact piecewise-affine form of a one-hidden-layer ReLU network.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{check_finite, spectral_norm, Matrix, Tolerances, Vector};
use crate::polytope::HPolytope;

#[derive(Debug, Clone, PartialEq)]
pub struct ReluNetwork {
    w1: Matrix,
    b1: Vector,
    w2: Matrix,
    b2: Vector,
    pub input_labels: Vec<String>,
    pub output_labels: Vec<String>,
    /// Physical size of one output unit (e.g. 1e5 for forces in 10⁵ N).
    pub unit_scale: f64,
}

/// On-disk layout; matrices are flattened row-major.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkFile {
    n0: usize,
    n1: usize,
    n2: usize,
    #[serde(rename = "W1")]
    w1: Vec<f64>,
    b1: Vec<f64>,
    #[serde(rename = "W2")]
    w2: Vec<f64>,
    b2: Vec<f64>,
    #[serde(default)]
    input_labels: Vec<String>,
    #[serde(default)]
    output_labels: Vec<String>,
    #[serde(default = "one")]
    unit_scale: f64,
}

fn one() -> f64 {
    1.0
}

impl ReluNetwork {
    pub fn new(w1: Matrix, b1: Vector, w2: Matrix, b2: Vector) -> Result<Self> {
        let (n1, n0) = w1.shape();
        if n0 == 0 || n1 == 0 {
            return Err(Error::dim("network needs at least one input and one neuron"));
        }
        if b1.len() != n1 || w2.ncols() != n1 || b2.len() != w2.nrows() || w2.nrows() == 0 {
            return Err(Error::dim(format!(
                "W1 {}x{}, b1 {}, W2 {}x{}, b2 {}",
                n1,
                n0,
                b1.len(),
                w2.nrows(),
                w2.ncols(),
                b2.len()
            )));
        }
        check_finite(&w1, "W1")?;
        check_finite(&w2, "W2")?;
        if b1.iter().chain(b2.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network biases"));
        }
        Ok(ReluNetwork {
            w1,
            b1,
            w2,
            b2,
            input_labels: Vec::new(),
            output_labels: Vec::new(),
            unit_scale: 1.0,
        })
    }

    pub fn n0(&self) -> usize {
        self.w1.ncols()
    }

    pub fn n1(&self) -> usize {
        self.w1.nrows()
    }

    pub fn n2(&self) -> usize {
        self.w2.nrows()
    }

    pub fn w1(&self) -> &Matrix {
        &self.w1
    }

    pub fn b1(&self) -> &Vector {
        &self.b1
    }

    pub fn w2(&self) -> &Matrix {
        &self.w2
    }

    pub fn b2(&self) -> &Vector {
        &self.b2
    }

    fn check_input(&self, y0: &[f64]) -> Result<()> {
        if y0.len() != self.n0() {
            return Err(Error::dim(format!("network input has length {}, expected {}", y0.len(), self.n0())));
        }
        Ok(())
    }

    fn pre_activation(&self, y0: &[f64], k: usize) -> f64 {
        self.w1.row(k).iter().zip(y0).map(|(w, y)| w * y).sum::<f64>() + self.b1[k]
    }

    pub fn forward(&self, y0: &[f64]) -> Result<Vector> {
        self.check_input(y0)?;
        let hidden: Vec<f64> = (0..self.n1()).map(|k| self.pre_activation(y0, k).max(0.0)).collect();
        Ok(Vector::from_fn(self.n2(), |j, _| {
            self.w2.row(j).iter().zip(&hidden).map(|(w, h)| w * h).sum::<f64>() + self.b2[j]
        }))
    }

    /// Pattern of the point, counting a zero pre-activation as active.
    pub fn pattern_at(&self, y0: &[f64]) -> Result<ActivationPattern> {
        self.check_input(y0)?;
        Ok(ActivationPattern(
            (0..self.n1()).map(|k| if self.pre_activation(y0, k) >= 0.0 { 1 } else { -1 }).collect(),
        ))
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let f: NetworkFile = toml::from_str(s).map_err(|e| Error::Parse(e.to_string()))?;
        let expect = |name: &str, got: usize, want: usize| {
            if got == want {
                Ok(())
            } else {
                Err(Error::Parse(format!("{name} has {got} entries, expected {want}")))
            }
        };
        let size = |a: usize, b: usize| a.checked_mul(b).ok_or_else(|| Error::Parse("network dimensions overflow".into()));
        expect("W1", f.w1.len(), size(f.n1, f.n0)?)?;
        expect("b1", f.b1.len(), f.n1)?;
        expect("W2", f.w2.len(), size(f.n2, f.n1)?)?;
        expect("b2", f.b2.len(), f.n2)?;
        if !f.input_labels.is_empty() {
            expect("input_labels", f.input_labels.len(), f.n0)?;
        }
        if !f.output_labels.is_empty() {
            expect("output_labels", f.output_labels.len(), f.n2)?;
        }
        if !(f.unit_scale.is_finite() && f.unit_scale > 0.0) {
            return Err(Error::Parse("unit_scale must be positive".into()));
        }
        let mut net = ReluNetwork::new(
            Matrix::from_row_slice(f.n1, f.n0, &f.w1),
            Vector::from_vec(f.b1),
            Matrix::from_row_slice(f.n2, f.n1, &f.w2),
            Vector::from_vec(f.b2),
        )?;
        net.input_labels = f.input_labels;
        net.output_labels = f.output_labels;
        net.unit_scale = f.unit_scale;
        Ok(net)
    }

    pub fn to_toml_string(&self) -> String {
        let flat = |m: &Matrix| (0..m.nrows()).flat_map(|i| m.row(i).iter().copied().collect::<Vec<_>>()).collect();
        let f = NetworkFile {
            n0: self.n0(),
            n1: self.n1(),
            n2: self.n2(),
            w1: flat(&self.w1),
            b1: self.b1.iter().copied().collect(),
            w2: flat(&self.w2),
            b2: self.b2.iter().copied().collect(),
            input_labels: self.input_labels.clone(),
            output_labels: self.output_labels.clone(),
            unit_scale: self.unit_scale,
        };
        toml::to_string(&f).expect("network serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| Error::Config { path: path.to_owned(), msg: e.to_string() })
    }
}

/// Per-neuron activation signs.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ActivationPattern(Vec<i8>);

impl ActivationPattern {
    pub fn new(signs: Vec<i8>) -> Result<Self> {
        if signs.iter().any(|&s| s != 1 && s != -1) {
            return Err(Error::Invalid("activation signs must be ±1".into()));
        }
        Ok(ActivationPattern(signs))
    }

    /// Pattern whose bit `k` of `code` set means neuron `k` active.
    pub fn from_code(code: u64, n1: usize) -> Self {
        ActivationPattern((0..n1).map(|k| if code >> k & 1 == 1 { 1 } else { -1 }).collect())
    }

    pub fn code(&self) -> u64 {
        self.0.iter().enumerate().filter(|(_, &s)| s > 0).map(|(k, _)| 1u64 << k).sum()
    }

    pub fn signs(&self) -> &[i8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for ActivationPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &s in &self.0 {
            f.write_str(if s > 0 { "+" } else { "-" })?;
        }
        Ok(())
    }
}

impl std::str::FromStr for ActivationPattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.chars()
            .map(|c| match c {
                '+' => Ok(1),
                '-' => Ok(-1),
                _ => Err(Error::Parse(format!("bad pattern character {c:?}"))),
            })
            .collect::<Result<Vec<_>>>()
            .map(ActivationPattern)
    }
}

#[derive(Debug, Clone)]
pub struct AffinePiece {
    pub pattern: ActivationPattern,
    pub map: Matrix,
    pub offset: Vector,
    /// Support cell already intersected with the workspace.
    pub cell: HPolytope,
}

impl AffinePiece {
    pub fn eval(&self, zeta: &[f64]) -> Vector {
        Vector::from_fn(self.map.nrows(), |j, _| {
            self.map.row(j).iter().zip(zeta).map(|(a, x)| a * x).sum::<f64>() + self.offset[j]
        })
    }
}

/// Affine map of a pattern and its cell `H(α) ∩ Z`, with no emptiness check.
pub fn pattern_piece(net: &ReluNetwork, alpha: &ActivationPattern, z: &HPolytope) -> Result<AffinePiece> {
    let (n0, n1, n2) = (net.n0(), net.n1(), net.n2());
    if alpha.len() != n1 {
        return Err(Error::dim(format!("pattern has {} signs for {} neurons", alpha.len(), n1)));
    }
    if z.dim() != n0 {
        return Err(Error::dim("workspace dimension differs from network input"));
    }
    let gate: Vec<f64> = alpha.signs().iter().map(|&s| if s > 0 { 1.0 } else { 0.0 }).collect();
    let mut map = Matrix::zeros(n2, n0);
    let mut offset = net.b2.clone();
    for k in (0..n1).filter(|&k| gate[k] > 0.0) {
        for j in 0..n2 {
            let w = net.w2[(j, k)];
            for i in 0..n0 {
                map[(j, i)] += w * net.w1[(k, i)];
            }
            offset[j] += w * net.b1[k];
        }
    }
    let a = Matrix::from_fn(n1, n0, |k, i| -f64::from(alpha.signs()[k]) * net.w1[(k, i)]);
    let b = Vector::from_fn(n1, |k, _| f64::from(alpha.signs()[k]) * net.b1[k]);
    let cell = HPolytope::new(a, b)?.intersect(z)?;
    Ok(AffinePiece { pattern: alpha.clone(), map, offset, cell })
}

/// Options for [`enumerate_cells`] and [`piece_for_pattern`].
#[derive(Debug, Clone, Copy)]
pub struct EnumerateOptions {
    /// Refuse networks wider than this (the loop is `2^n1`).
    pub max_neurons: usize,
    /// A cell is kept only if it contains a Euclidean ball of at least this radius.
    pub min_radius: f64,
}

impl Default for EnumerateOptions {
    fn default() -> Self {
        EnumerateOptions { max_neurons: 25, min_radius: 1e-9 }
    }
}

/// The piece for `alpha`, or `None` when its cell has no interior inside `z`.
///
/// Patterns whose cell is only a shared face (hyperplanes through a common point,
/// a neuron that never switches) are dropped: on a face the network equals the
/// map of a neighbouring full-dimensional cell.
pub fn piece_for_pattern(
    net: &ReluNetwork,
    alpha: &ActivationPattern,
    z: &HPolytope,
    opts: &EnumerateOptions,
) -> Result<Option<AffinePiece>> {
    let piece = pattern_piece(net, alpha, z)?;
    Ok(match piece.cell.chebyshev_center()? {
        Some((_, r)) if r > opts.min_radius => Some(piece),
        _ => None,
    })
}

#[derive(Debug, Clone)]
pub struct PwaDecomposition {
    pub workspace: HPolytope,
    pub pieces: Vec<AffinePiece>,
    net: ReluNetwork,
    by_code: HashMap<u64, usize>,
}

/// Every full-dimensional cell of `net` over the workspace `z`.
pub fn enumerate_cells(net: &ReluNetwork, z: &HPolytope, opts: &EnumerateOptions) -> Result<PwaDecomposition> {
    let n1 = net.n1();
    if n1 > opts.max_neurons.min(63) {
        return Err(Error::TooLarge { what: "hidden width (shrink the network)", limit: opts.max_neurons.min(63) });
    }
    let found: Vec<Option<AffinePiece>> = (0..1u64 << n1)
        .into_par_iter()
        .map(|code| piece_for_pattern(net, &ActivationPattern::from_code(code, n1), z, opts))
        .collect::<Result<_>>()?;
    PwaDecomposition::from_pieces(net.clone(), z.clone(), found.into_iter().flatten().collect())
}

impl PwaDecomposition {
    pub fn from_pieces(net: ReluNetwork, workspace: HPolytope, pieces: Vec<AffinePiece>) -> Result<Self> {
        if pieces.is_empty() {
            return Err(Error::EmptyUnion);
        }
        let by_code = pieces.iter().enumerate().map(|(i, p)| (p.pattern.code(), i)).collect();
        Ok(PwaDecomposition { workspace, pieces, net, by_code })
    }

    pub fn network(&self) -> &ReluNetwork {
        &self.net
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn index_of(&self, alpha: &ActivationPattern) -> Option<usize> {
        self.by_code.get(&alpha.code()).copied()
    }

    /// Index of a piece containing `zeta`.
    ///
    /// The pattern at `zeta` is tried first; otherwise the piece with the smallest
    /// residual wins, which on a shared face is harmless by continuity.
    pub fn locate(&self, zeta: &[f64]) -> Result<usize> {
        let tol = Tolerances::default().feas;
        if let Some(&i) = self.by_code.get(&self.net.pattern_at(zeta)?.code()) {
            if self.pieces[i].cell.contains(zeta, tol) {
                return Ok(i);
            }
        }
        let (best, res) = self
            .pieces
            .iter()
            .enumerate()
            .map(|(i, p)| (i, p.cell.residual(zeta)))
            .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
        if res <= tol {
            Ok(best)
        } else {
            Err(Error::OutsideWorkspace)
        }
    }

    pub fn eval(&self, zeta: &[f64]) -> Result<Vector> {
        let i = self.locate(zeta)?;
        Ok(self.pieces[i].eval(zeta))
    }

    /// `max_i ‖F_i‖₂`.
    pub fn lipschitz(&self) -> f64 {
        self.pieces.iter().map(|p| spectral_norm(&p.map)).fold(0.0, f64::max)
    }
}

pub fn pwa_eval(d: &PwaDecomposition, zeta: &[f64]) -> Result<Vector> {
    d.eval(zeta)
}

pub fn pwa_lipschitz(d: &PwaDecomposition) -> f64 {
    d.lipschitz()
}

fn binomial(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    (0..k).fold(1u128, |acc, i| acc * u128::from(n - i) / u128::from(i + 1))
}

/// Lower bound on the maximal region count, evaluated as printed:
/// `(∏_{l<L} ⌊M/n_x⌋^{n_x}) · Σ_{j≤n_x} C(L, j)`.
///
/// Hyperplane-arrangement counting would use `C(M, j)` in the sum; the printed
/// form is kept since the value is informational.
pub fn region_count_lower_bound(layers: u32, width: u32, n_x: u32) -> Result<u128> {
    if layers == 0 || width == 0 || n_x == 0 {
        return Err(Error::Invalid("region bound needs L, M, n_x ≥ 1".into()));
    }
    let overflow = || Error::TooLarge { what: "region bound", limit: usize::MAX };
    let per_layer = u128::from(width / n_x).checked_pow(n_x).ok_or_else(overflow)?;
    let prod = per_layer.checked_pow(layers - 1).ok_or_else(overflow)?;
    let sum: u128 = (0..=u64::from(n_x)).map(|j| binomial(u64::from(layers), j)).sum();
    prod.checked_mul(sum).ok_or_else(overflow)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oversized_dimensions_are_a_parse_error() {
        let text = "n0 = 100000000000\nn1 = 100000000000\nn2 = 1\nW1 = []\nb1 = []\nW2 = []\nb2 = [0.0]\n";
        assert!(matches!(ReluNetwork::from_toml_str(text), Err(Error::Parse(_))));
    }

    fn net_2x3() -> ReluNetwork {
        ReluNetwork::new(
            Matrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]),
            Vector::from_vec(vec![0.0, 0.5, -0.5]),
            Matrix::from_row_slice(1, 3, &[1.0, -2.0, 0.5]),
            Vector::from_vec(vec![0.3]),
        )
        .unwrap()
    }

    fn square() -> HPolytope {
        HPolytope::from_box(&[-1.0, -1.0], &[1.0, 1.0]).unwrap()
    }

    #[test]
    fn zero_weights_give_output_bias() {
        let net = ReluNetwork::new(Matrix::zeros(2, 3), Vector::zeros(2), Matrix::zeros(1, 2), Vector::from_vec(vec![4.2]))
            .unwrap();
        assert_eq!(net.forward(&[1.0, -7.0, 3.0]).unwrap()[0], 4.2);
        assert!(net.forward(&[1.0]).is_err());
    }

    #[test]
    fn single_neuron_on_its_kink() {
        let net = ReluNetwork::new(
            Matrix::from_row_slice(1, 2, &[2.0, 0.5]),
            Vector::from_vec(vec![-1.0]),
            Matrix::from_element(1, 1, 1.0),
            Vector::zeros(1),
        )
        .unwrap();
        assert_eq!(net.forward(&[0.5, 0.0]).unwrap()[0], 0.0);
        assert_eq!(net.forward(&[1.0, 0.0]).unwrap()[0], 1.0);
    }

    #[test]
    fn extreme_patterns() {
        let net = net_2x3();
        let off = pattern_piece(&net, &"---".parse().unwrap(), &square()).unwrap();
        assert_eq!(off.map, Matrix::zeros(1, 2));
        assert_eq!(off.offset, *net.b2());
        let on = pattern_piece(&net, &"+++".parse().unwrap(), &square()).unwrap();
        assert_eq!(on.map, net.w2() * net.w1());
        assert_eq!(on.offset, net.w2() * net.b1() + net.b2());
    }

    #[test]
    fn pattern_codes_round_trip() {
        let p = ActivationPattern::from_code(0b101, 3);
        assert_eq!(p.to_string(), "+-+");
        assert_eq!(p.code(), 0b101);
        assert!("+x".parse::<ActivationPattern>().is_err());
        assert!(ActivationPattern::new(vec![1, 0]).is_err());
    }

    #[test]
    fn pieces_agree_with_forward_at_interior_points() {
        let net = net_2x3();
        let d = enumerate_cells(&net, &square(), &EnumerateOptions::default()).unwrap();
        assert!(d.len() <= 8 && d.len() >= 4);
        for p in &d.pieces {
            let (c, _) = p.cell.chebyshev_center().unwrap().unwrap();
            let y = net.forward(c.as_slice()).unwrap();
            assert!((p.eval(c.as_slice()) - y).amax() < 1e-9);
            assert_eq!(net.pattern_at(c.as_slice()).unwrap(), p.pattern);
        }
    }

    #[test]
    fn concurrent_hyperplanes_keep_only_full_cells() {
        // two lines through the origin split the square into four cells
        let net = ReluNetwork::new(
            Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]),
            Vector::zeros(2),
            Matrix::from_row_slice(1, 2, &[1.0, 1.0]),
            Vector::zeros(1),
        )
        .unwrap();
        assert_eq!(enumerate_cells(&net, &square(), &EnumerateOptions::default()).unwrap().len(), 4);
        // a neuron that never switches on the square contributes no extra cells
        let always = ReluNetwork::new(
            Matrix::from_row_slice(1, 2, &[1.0, 0.0]),
            Vector::from_vec(vec![5.0]),
            Matrix::from_element(1, 1, 1.0),
            Vector::zeros(1),
        )
        .unwrap();
        assert_eq!(enumerate_cells(&always, &square(), &EnumerateOptions::default()).unwrap().len(), 1);
    }

    #[test]
    fn eval_outside_workspace_fails() {
        let d = enumerate_cells(&net_2x3(), &square(), &EnumerateOptions::default()).unwrap();
        assert!(matches!(d.eval(&[3.0, 0.0]), Err(Error::OutsideWorkspace)));
    }

    #[test]
    fn width_guard() {
        let net = ReluNetwork::new(Matrix::zeros(4, 1), Vector::zeros(4), Matrix::zeros(1, 4), Vector::zeros(1)).unwrap();
        let opts = EnumerateOptions { max_neurons: 3, ..Default::default() };
        let z = HPolytope::from_box(&[0.0], &[1.0]).unwrap();
        assert!(matches!(enumerate_cells(&net, &z, &opts), Err(Error::TooLarge { .. })));
    }

    #[test]
    fn lipschitz_examples() {
        let zero = ReluNetwork::new(Matrix::zeros(2, 2), Vector::zeros(2), Matrix::zeros(1, 2), Vector::zeros(1)).unwrap();
        assert_eq!(enumerate_cells(&zero, &square(), &EnumerateOptions::default()).unwrap().lipschitz(), 0.0);
        let lin = ReluNetwork::new(
            Matrix::from_row_slice(1, 2, &[3.0, 4.0]),
            Vector::from_vec(vec![100.0]),
            Matrix::from_element(1, 1, 2.0),
            Vector::zeros(1),
        )
        .unwrap();
        let d = enumerate_cells(&lin, &square(), &EnumerateOptions::default()).unwrap();
        assert!((d.lipschitz() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn region_bound_as_printed() {
        assert_eq!(region_count_lower_bound(1, 3, 2).unwrap(), 2);
        assert_eq!(region_count_lower_bound(1, 1, 1).unwrap(), 2);
        assert_eq!(region_count_lower_bound(2, 4, 2).unwrap(), 16);
        assert!(region_count_lower_bound(0, 4, 2).is_err());
    }

    #[test]
    fn toml_round_trip() {
        let mut net = net_2x3();
        net.input_labels = vec!["a".into(), "b".into()];
        net.unit_scale = 1e5;
        let back = ReluNetwork::from_toml_str(&net.to_toml_string()).unwrap();
        assert_eq!(back, net);
        assert!(ReluNetwork::from_toml_str("n0 = 1\nn1 = 1\nn2 = 1\nW1 = [1.0]\nb1 = []\nW2 = [1.0]\nb2 = [0.0]").is_err());
        assert!(ReluNetwork::from_toml_str("n0 = 1\nn1 = 1\nn2 = 1\nW1 = [1.0]\nb1 = [0.0]\nW2 = [1.0]\nb2 = [0.0]\nextra = 1").is_err());
    }
}
