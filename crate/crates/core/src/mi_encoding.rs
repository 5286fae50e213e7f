//! Big-M encoding of the admissible union `Ṽ` for one step and over a horizon.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::kernel::{Matrix, Vector};
use crate::polytope::HPolytope;
use crate::relu_pwa::{ActivationPattern, AffinePiece, PwaDecomposition};

/// Output bounds `lower ≤ y ≤ upper`; either side may be infinite.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputBounds {
    pub lower: Vector,
    pub upper: Vector,
}

impl OutputBounds {
    pub fn new(lower: Vector, upper: Vector) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::dim("output bounds"));
        }
        if lower.iter().chain(upper.iter()).any(|v| v.is_nan()) {
            return Err(Error::NonFinite("output bounds"));
        }
        Ok(OutputBounds { lower, upper })
    }

    /// `|y_j| ≤ ubar_j`.
    pub fn symmetric(ubar: &[f64]) -> Result<Self> {
        let hi = Vector::from_row_slice(ubar);
        Self::new(-&hi, hi)
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }
}

/// One output-bounded cell of `Ṽ`, in network-input coordinates.
#[derive(Debug, Clone)]
pub struct UnionMember {
    pub pattern: ActivationPattern,
    /// Index of the source piece in the decomposition.
    pub piece: usize,
    pub map: Matrix,
    pub offset: Vector,
    pub set: HPolytope,
}

#[derive(Debug, Clone)]
pub struct AdmissibleUnion {
    pub members: Vec<UnionMember>,
    pub bounds: OutputBounds,
    pub eps: Vector,
    /// Box the decomposition was built on.
    pub workspace: HPolytope,
    /// `S` with network input `= S ζ`.
    lift: Matrix,
}

/// `Ṽ = ∪ {ζ ∈ C_j : lower + ε ≤ F_j ζ + f_j ≤ upper − ε}`, dropping cells with no interior.
pub fn build_admissible_union(d: &PwaDecomposition, bounds: &OutputBounds, eps: &[f64]) -> Result<AdmissibleUnion> {
    let n2 = d.network().n2();
    if bounds.len() != n2 || eps.len() != n2 {
        return Err(Error::dim(format!("{n2} network outputs")));
    }
    for j in 0..n2 {
        let (lo, hi, e) = (bounds.lower[j], bounds.upper[j], eps[j]);
        if !(e >= 0.0 && e.is_finite()) || !(lo + e < hi - e) {
            return Err(Error::InvalidTightening);
        }
    }
    let mut members = Vec::new();
    for (k, piece) in d.pieces.iter().enumerate() {
        let mut set = piece.cell.clone();
        for j in 0..n2 {
            let row: Vec<f64> = piece.map.row(j).iter().copied().collect();
            if bounds.upper[j].is_finite() {
                set.append_row(&row, bounds.upper[j] - eps[j] - piece.offset[j])?;
            }
            if bounds.lower[j].is_finite() {
                let neg: Vec<f64> = row.iter().map(|v| -v).collect();
                set.append_row(&neg, -(bounds.lower[j] + eps[j]) + piece.offset[j])?;
            }
        }
        if matches!(set.chebyshev_center()?, Some((_, r)) if r > 1e-9) {
            members.push(UnionMember {
                pattern: piece.pattern.clone(),
                piece: k,
                map: piece.map.clone(),
                offset: piece.offset.clone(),
                set,
            });
        }
    }
    if members.is_empty() {
        return Err(Error::EmptyUnion);
    }
    let n0 = d.workspace.dim();
    Ok(AdmissibleUnion {
        members,
        bounds: bounds.clone(),
        eps: Vector::from_row_slice(eps),
        workspace: d.workspace.clone(),
        lift: Matrix::identity(n0, n0),
    })
}

impl AdmissibleUnion {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Attach the selector `S` from `ζ = (z, v)` to the network input.
    pub fn with_lift(mut self, s: Matrix) -> Result<Self> {
        if s.nrows() != self.workspace.dim() {
            return Err(Error::dim("lift rows must match the network input"));
        }
        self.lift = s;
        Ok(self)
    }

    pub fn lift(&self) -> &Matrix {
        &self.lift
    }

    /// Dimension of `ζ`.
    pub fn zeta_dim(&self) -> usize {
        self.lift.ncols()
    }

    /// Drop rows implied by the rest of each member.
    pub fn remove_redundant_rows(mut self) -> Result<Self> {
        for m in &mut self.members {
            m.set = m.set.remove_redundant()?;
        }
        Ok(self)
    }

    fn net_input(&self, zeta: &[f64]) -> Vec<f64> {
        (&self.lift * Vector::from_row_slice(zeta)).iter().copied().collect()
    }

    /// Members whose closed set contains `ζ`.
    pub fn members_containing(&self, zeta: &[f64], tol: f64) -> Vec<usize> {
        let y = self.net_input(zeta);
        (0..self.len()).filter(|&j| self.members[j].set.contains(&y, tol)).collect()
    }

    /// Members as affine pieces on their output-bounded cells.
    pub fn pieces(&self) -> Vec<AffinePiece> {
        self.members
            .iter()
            .map(|m| AffinePiece { pattern: m.pattern.clone(), map: m.map.clone(), offset: m.offset.clone(), cell: m.set.clone() })
            .collect()
    }

    /// Distance-like residual `min_j max_row (a ζ − b)`; nonpositive inside `Ṽ`.
    pub fn residual(&self, zeta: &[f64]) -> f64 {
        let y = self.net_input(zeta);
        self.members.iter().map(|m| m.set.residual(&y)).fold(f64::INFINITY, f64::min)
    }
}

/// Certified big-M data over a workspace box.
#[derive(Debug, Clone)]
pub struct BigM {
    /// `max(0, max_{ζ∈Z} (Θ_j[r,:]ζ − θ_j[r]))` per member and row.
    pub rows: Vec<Vec<f64>>,
}

impl BigM {
    /// `M*_j`, the row maximum per member.
    pub fn per_cell(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.iter().copied().fold(0.0, f64::max)).collect()
    }
}

/// `M` per row from one LP each, floored at zero.
pub fn compute_big_m(u: &AdmissibleUnion, z_box: &HPolytope) -> Result<BigM> {
    let rows = u
        .members
        .iter()
        .map(|m| Ok(m.set.row_violations(z_box)?.into_iter().map(|v| v.max(0.0)).collect()))
        .collect::<Result<_>>()?;
    Ok(BigM { rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum BigMPolicy {
    /// Certified per-row constants; rows with `M = 0` are implied by the
    /// workspace, which is then imposed as hard rows instead.
    #[default]
    PerRow,
    /// One constant for every row, checked against the certified values.
    Uniform(f64),
}

impl BigMPolicy {
    /// Constants to use per member and row.
    pub fn resolve(&self, m: &BigM) -> Result<Vec<Vec<f64>>> {
        match *self {
            BigMPolicy::PerRow => Ok(m.rows.clone()),
            BigMPolicy::Uniform(v) => {
                for (cell, req) in m.per_cell().into_iter().enumerate() {
                    if !(v >= req) {
                        return Err(Error::BigMTooSmall { cell, m: v, required: req });
                    }
                }
                Ok(m.rows.iter().map(|r| vec![v; r.len()]).collect())
            }
        }
    }
}

/// Variable reference inside a model under construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    Cont(usize),
    Bin(usize),
}

/// Where each component of `ζ` lives: a continuous column or a fixed value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ZetaEntry {
    Var(usize),
    Const(f64),
}

/// Index layout of a horizon model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HorizonLayout {
    pub n_z: usize,
    pub n_v: usize,
    pub horizon: usize,
    /// Members per step.
    pub cells: usize,
}

impl HorizonLayout {
    /// First column of `z(k)`, `k = 0..=horizon`.
    pub fn z(&self, k: usize) -> usize {
        k * self.n_z
    }

    /// First column of `v(k)`, `k < horizon`.
    pub fn v(&self, k: usize) -> usize {
        (self.horizon + 1) * self.n_z + k * self.n_v
    }

    pub fn n_cont(&self) -> usize {
        (self.horizon + 1) * self.n_z + self.horizon * self.n_v
    }

    /// Column of `β_{k,j}` in the finished model.
    pub fn beta(&self, k: usize, j: usize) -> usize {
        self.n_cont() + k * self.cells + j
    }
}

/// `min ½xᵀHx + gᵀx + c0` over continuous columns followed by binary columns.
///
/// Big-M rows carry their `−M β` coefficient inside `a_ineq`; `big_m_col`
/// names that binary column.
#[derive(Debug, Clone)]
pub struct MiqpModel {
    pub n_cont: usize,
    pub n_bin: usize,
    pub h: Matrix,
    pub g: Vector,
    pub c0: f64,
    pub a_ineq: Matrix,
    pub b_ineq: Vector,
    pub big_m_col: Vec<Option<usize>>,
    pub a_eq: Matrix,
    pub b_eq: Vector,
    /// Binary columns of each cardinality row `Σβ = len − 1`.
    pub groups: Vec<Vec<usize>>,
    pub lower: Vector,
    pub upper: Vector,
    pub layout: Option<HorizonLayout>,
}

impl MiqpModel {
    pub fn n(&self) -> usize {
        self.n_cont + self.n_bin
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let x = Vector::from_row_slice(x);
        0.5 * x.dot(&(&self.h * &x)) + self.g.dot(&x) + self.c0
    }

    /// Largest violation of any row or bound.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let xv = Vector::from_row_slice(x);
        let ineq = (&self.a_ineq * &xv - &self.b_ineq).iter().fold(0.0f64, |m, &r| m.max(r));
        let eq = (&self.a_eq * &xv - &self.b_eq).iter().fold(0.0f64, |m, &r| m.max(r.abs()));
        let bounds = x
            .iter()
            .enumerate()
            .fold(0.0f64, |m, (i, &v)| m.max(self.lower[i] - v).max(v - self.upper[i]));
        ineq.max(eq).max(bounds)
    }

    /// Listing in the common LP file format, for cross-checking with external solvers.
    pub fn to_lp_string(&self) -> String {
        let name = |j: usize| if j < self.n_cont { format!("x{j}") } else { format!("b{}", j - self.n_cont) };
        let linear = |row: &mut String, coefs: &mut dyn Iterator<Item = (usize, f64)>| {
            let mut first = true;
            for (j, c) in coefs.filter(|(_, c)| *c != 0.0) {
                let sign = if c < 0.0 { "-" } else if first { "" } else { "+" };
                let _ = write!(row, " {sign} {} {}", c.abs(), name(j));
                first = false;
            }
            if first {
                row.push_str(" 0 x0");
            }
        };
        let n = self.n();
        let mut s = String::new();
        let _ = writeln!(s, "\\ constant objective term {}", self.c0);
        s.push_str("Minimize\n obj:");
        linear(&mut s, &mut (0..n).map(|j| (j, self.g[j])));
        let mut quad = Vec::new();
        for i in 0..n {
            for j in i..n {
                let c = if i == j { self.h[(i, i)] } else { self.h[(i, j)] + self.h[(j, i)] };
                if c != 0.0 {
                    quad.push(if i == j {
                        format!("{c} {} ^ 2", name(i))
                    } else {
                        format!("{c} {} * {}", name(i), name(j))
                    });
                }
            }
        }
        if !quad.is_empty() {
            let _ = write!(s, " + [ {} ] / 2", quad.join(" + ").replace("+ -", "- "));
        }
        s.push_str("\nSubject To\n");
        for i in 0..self.a_ineq.nrows() {
            let _ = write!(s, " c{i}:");
            linear(&mut s, &mut (0..n).map(|j| (j, self.a_ineq[(i, j)])));
            let _ = writeln!(s, " <= {}", self.b_ineq[i]);
        }
        for i in 0..self.a_eq.nrows() {
            let _ = write!(s, " e{i}:");
            linear(&mut s, &mut (0..n).map(|j| (j, self.a_eq[(i, j)])));
            let _ = writeln!(s, " = {}", self.b_eq[i]);
        }
        s.push_str("Bounds\n");
        for j in 0..self.n_cont {
            let (lo, hi) = (self.lower[j], self.upper[j]);
            match (lo.is_finite(), hi.is_finite()) {
                (false, false) => {
                    let _ = writeln!(s, " {} free", name(j));
                }
                (true, true) => {
                    let _ = writeln!(s, " {lo} <= {} <= {hi}", name(j));
                }
                (true, false) => {
                    let _ = writeln!(s, " {} >= {lo}", name(j));
                }
                (false, true) => {
                    let _ = writeln!(s, " -inf <= {} <= {hi}", name(j));
                }
            }
        }
        if self.n_bin > 0 {
            s.push_str("Binaries\n");
            let names: Vec<String> = (self.n_cont..n).map(name).collect();
            let _ = writeln!(s, " {}", names.join(" "));
        }
        s.push_str("End\n");
        s
    }
}

/// Incremental builder; binaries are numbered separately and placed after
/// every continuous column when the model is finished.
#[derive(Debug, Clone, Default)]
pub struct ModelBuilder {
    n_cont: usize,
    n_bin: usize,
    lower: Vec<f64>,
    upper: Vec<f64>,
    ineq: Vec<(Vec<(Var, f64)>, f64, Option<usize>)>,
    eq: Vec<(Vec<(Var, f64)>, f64)>,
    groups: Vec<Vec<usize>>,
    quad: Vec<(usize, usize, f64)>,
    lin: Vec<(usize, f64)>,
    c0: f64,
}

impl ModelBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Allocate `n` free continuous columns; returns the first.
    pub fn add_continuous(&mut self, n: usize) -> usize {
        let start = self.n_cont;
        self.n_cont += n;
        self.lower.extend(std::iter::repeat_n(f64::NEG_INFINITY, n));
        self.upper.extend(std::iter::repeat_n(f64::INFINITY, n));
        start
    }

    pub fn n_cont(&self) -> usize {
        self.n_cont
    }

    pub fn add_row(&mut self, coefs: Vec<(Var, f64)>, rhs: f64) {
        self.ineq.push((coefs, rhs, None));
    }

    pub fn add_eq(&mut self, coefs: Vec<(Var, f64)>, rhs: f64) {
        self.eq.push((coefs, rhs));
    }

    /// Adds `½ (x − r)ᵀ W (x − r)` summed as `‖x − r‖²_Q` with `W = 2Q`, over the
    /// continuous columns starting at `col`.
    pub fn add_tracking_cost(&mut self, col: usize, q: &Matrix, r: &[f64]) {
        let n = q.nrows();
        for i in 0..n {
            for j in 0..n {
                let w = q[(i, j)];
                if w != 0.0 {
                    self.quad.push((col + i, col + j, 2.0 * w));
                    self.lin.push((col + i, -2.0 * w * r[j]));
                    self.c0 += w * r[i] * r[j];
                }
            }
        }
    }

    /// Rows `a ζ ≤ b` of a polytope in `ζ` coordinates, with `ζ` given by `zeta`.
    pub fn add_polytope_rows(&mut self, p: &HPolytope, zeta: &[ZetaEntry]) -> Result<()> {
        if p.dim() != zeta.len() {
            return Err(Error::dim("polytope rows against ζ map"));
        }
        for i in 0..p.n_rows() {
            let (coefs, rhs) = substitute(p.a().row(i).iter().copied(), p.b()[i], zeta);
            self.add_row(coefs, rhs);
        }
        Ok(())
    }

    /// One step of the big-M encoding; returns the binary indices of the step.
    ///
    /// Member rows become `Θ_j ζ − M β_j ≤ θ_j` and the step gets `Σ β_j = |A| − 1`.
    /// Under the per-row policy rows with `M = 0` are left out and the
    /// workspace box is imposed as hard rows instead. A single member gets no
    /// binaries: its rows are hard.
    pub fn encode_step(
        &mut self,
        u: &AdmissibleUnion,
        zeta: &[ZetaEntry],
        big_m: &BigM,
        policy: BigMPolicy,
    ) -> Result<Vec<usize>> {
        if zeta.len() != u.zeta_dim() {
            return Err(Error::dim("ζ map against union lift"));
        }
        let ms = policy.resolve(big_m)?;
        let lifted = |p: &HPolytope| HPolytope::new(p.a() * u.lift(), p.b().clone());
        let per_row = policy == BigMPolicy::PerRow;
        if per_row {
            self.add_polytope_rows(&lifted(&u.workspace)?, zeta)?;
        }
        if u.len() == 1 {
            let set = lifted(&u.members[0].set)?;
            for i in 0..set.n_rows() {
                if per_row && ms[0][i] <= 1e-9 {
                    continue;
                }
                let (coefs, rhs) = substitute(set.a().row(i).iter().copied(), set.b()[i], zeta);
                self.add_row(coefs, rhs);
            }
            return Ok(Vec::new());
        }
        let first = self.n_bin;
        self.n_bin += u.len();
        let betas: Vec<usize> = (first..self.n_bin).collect();
        for (j, m) in u.members.iter().enumerate() {
            let set = lifted(&m.set)?;
            for i in 0..set.n_rows() {
                let big = ms[j][i];
                if per_row && big <= 1e-9 {
                    continue;
                }
                let (mut coefs, rhs) = substitute(set.a().row(i).iter().copied(), set.b()[i], zeta);
                coefs.push((Var::Bin(betas[j]), -big));
                self.ineq.push((coefs, rhs, Some(betas[j])));
            }
        }
        self.eq.push((betas.iter().map(|&b| (Var::Bin(b), 1.0)).collect(), (u.len() - 1) as f64));
        self.groups.push(betas.clone());
        Ok(betas)
    }

    pub fn build(self) -> MiqpModel {
        let n_cont = self.n_cont;
        let n = n_cont + self.n_bin;
        let col = |v: Var| match v {
            Var::Cont(i) => i,
            Var::Bin(i) => n_cont + i,
        };
        let mut a_ineq = Matrix::zeros(self.ineq.len(), n);
        let mut b_ineq = Vector::zeros(self.ineq.len());
        let mut big_m_col = Vec::with_capacity(self.ineq.len());
        for (r, (coefs, rhs, bin)) in self.ineq.iter().enumerate() {
            for &(v, c) in coefs {
                a_ineq[(r, col(v))] += c;
            }
            b_ineq[r] = *rhs;
            big_m_col.push(bin.map(|b| n_cont + b));
        }
        let mut a_eq = Matrix::zeros(self.eq.len(), n);
        let mut b_eq = Vector::zeros(self.eq.len());
        for (r, (coefs, rhs)) in self.eq.iter().enumerate() {
            for &(v, c) in coefs {
                a_eq[(r, col(v))] += c;
            }
            b_eq[r] = *rhs;
        }
        let mut h = Matrix::zeros(n, n);
        for &(i, j, w) in &self.quad {
            h[(i, j)] += w;
        }
        let mut g = Vector::zeros(n);
        for &(i, w) in &self.lin {
            g[i] += w;
        }
        let mut lower = Vector::zeros(n);
        let mut upper = Vector::from_element(n, 1.0);
        for i in 0..n_cont {
            lower[i] = self.lower[i];
            upper[i] = self.upper[i];
        }
        MiqpModel {
            n_cont,
            n_bin: self.n_bin,
            h,
            g,
            c0: self.c0,
            a_ineq,
            b_ineq,
            big_m_col,
            a_eq,
            b_eq,
            groups: self.groups.into_iter().map(|g| g.into_iter().map(|b| n_cont + b).collect()).collect(),
            lower,
            upper,
            layout: None,
        }
    }
}

fn substitute(row: impl Iterator<Item = f64>, rhs: f64, zeta: &[ZetaEntry]) -> (Vec<(Var, f64)>, f64) {
    let mut coefs = Vec::new();
    let mut rhs = rhs;
    for (a, e) in row.zip(zeta) {
        if a == 0.0 {
            continue;
        }
        match *e {
            ZetaEntry::Var(c) => coefs.push((Var::Cont(c), a)),
            ZetaEntry::Const(v) => rhs -= a * v,
        }
    }
    (coefs, rhs)
}

/// Everything `encode_horizon` needs besides the union.
#[derive(Debug, Clone)]
pub struct HorizonSpec<'a> {
    pub horizon: usize,
    pub a_d: &'a Matrix,
    pub b_d: &'a Matrix,
    /// Hard state set, imposed on `z(1..=N)`.
    pub state_set: &'a HPolytope,
    /// Hard rows on `v(0..N)`, if any.
    pub input_set: Option<&'a HPolytope>,
    pub q: &'a Matrix,
    pub r: &'a Matrix,
    /// Also charge `‖z(N) − z_ref(N)‖²_Q`.
    pub terminal_cost: bool,
    pub z0: &'a [f64],
    /// `z_ref(k)` for `k = 0..=N`; zero when absent.
    pub z_ref: Option<&'a [Vector]>,
    /// `v_ref(k)` for `k < N`; zero when absent.
    pub v_ref: Option<&'a [Vector]>,
    pub big_m: &'a BigM,
    pub policy: BigMPolicy,
    /// Impose `Ṽ` on `ζ(0)` only, leaving later inputs free.
    pub union_first_step_only: bool,
}

/// Horizon model with `ζ(k) = (z(k), v(k)) ∈ Ṽ` for `k < N`.
pub fn encode_horizon(u: &AdmissibleUnion, spec: &HorizonSpec<'_>) -> Result<MiqpModel> {
    let n_p = spec.horizon;
    if n_p == 0 {
        return Err(Error::Invalid("prediction horizon must be at least 1".into()));
    }
    let (n_z, n_v) = (spec.a_d.nrows(), spec.b_d.ncols());
    if spec.a_d.ncols() != n_z || spec.b_d.nrows() != n_z || spec.z0.len() != n_z {
        return Err(Error::dim("prediction model"));
    }
    if u.zeta_dim() != n_z + n_v {
        return Err(Error::dim(format!("union lives in {} dims, model has {}", u.zeta_dim(), n_z + n_v)));
    }
    if spec.q.shape() != (n_z, n_z) || spec.r.shape() != (n_v, n_v) || spec.state_set.dim() != n_z {
        return Err(Error::dim("cost or state set"));
    }
    if spec.input_set.is_some_and(|p| p.dim() != n_v) {
        return Err(Error::dim("input set"));
    }
    if spec.z_ref.is_some_and(|r| r.len() < n_p + 1 || r.iter().any(|z| z.len() != n_z))
        || spec.v_ref.is_some_and(|r| r.len() < n_p || r.iter().any(|v| v.len() != n_v))
    {
        return Err(Error::Invalid("reference shorter than the horizon or of the wrong size".into()));
    }
    let layout = HorizonLayout { n_z, n_v, horizon: n_p, cells: if u.len() > 1 { u.len() } else { 0 } };
    let mut b = ModelBuilder::new();
    b.add_continuous(layout.n_cont());
    let zv = |k: usize| -> Vec<ZetaEntry> {
        (0..n_z).map(|i| ZetaEntry::Var(layout.z(k) + i)).chain((0..n_v).map(|i| ZetaEntry::Var(layout.v(k) + i))).collect()
    };
    let zonly = |k: usize| -> Vec<ZetaEntry> { (0..n_z).map(|i| ZetaEntry::Var(layout.z(k) + i)).collect() };
    let vonly = |k: usize| -> Vec<ZetaEntry> { (0..n_v).map(|i| ZetaEntry::Var(layout.v(k) + i)).collect() };

    for (i, &z) in spec.z0.iter().enumerate() {
        b.add_eq(vec![(Var::Cont(layout.z(0) + i), 1.0)], z);
    }
    for k in 0..n_p {
        for i in 0..n_z {
            let mut row = vec![(Var::Cont(layout.z(k + 1) + i), 1.0)];
            row.extend((0..n_z).filter(|&j| spec.a_d[(i, j)] != 0.0).map(|j| (Var::Cont(layout.z(k) + j), -spec.a_d[(i, j)])));
            row.extend((0..n_v).filter(|&j| spec.b_d[(i, j)] != 0.0).map(|j| (Var::Cont(layout.v(k) + j), -spec.b_d[(i, j)])));
            b.add_eq(row, 0.0);
        }
    }
    let zero_z = Vector::zeros(n_z);
    let zero_v = Vector::zeros(n_v);
    for k in 0..n_p {
        if k == 0 || !spec.union_first_step_only {
            b.encode_step(u, &zv(k), spec.big_m, spec.policy)?;
        }
        b.add_polytope_rows(spec.state_set, &zonly(k + 1))?;
        if let Some(p) = spec.input_set {
            b.add_polytope_rows(p, &vonly(k))?;
        }
        let zr = spec.z_ref.map_or(&zero_z, |r| &r[k]);
        let vr = spec.v_ref.map_or(&zero_v, |r| &r[k]);
        b.add_tracking_cost(layout.z(k), spec.q, zr.as_slice());
        b.add_tracking_cost(layout.v(k), spec.r, vr.as_slice());
    }
    if spec.terminal_cost {
        let zr = spec.z_ref.map_or(&zero_z, |r| &r[n_p]);
        b.add_tracking_cost(layout.z(n_p), spec.q, zr.as_slice());
    }
    let mut m = b.build();
    m.layout = Some(layout);
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::relu_pwa::{enumerate_cells, EnumerateOptions, ReluNetwork};

    fn identity_decomp() -> PwaDecomposition {
        // y = relu(x) - relu(-x) = x on one cell per sign; two pieces
        let net = ReluNetwork::new(
            Matrix::from_row_slice(2, 1, &[1.0, -1.0]),
            Vector::zeros(2),
            Matrix::from_row_slice(1, 2, &[1.0, -1.0]),
            Vector::zeros(1),
        )
        .unwrap();
        let z = HPolytope::from_box(&[-2.0], &[2.0]).unwrap();
        enumerate_cells(&net, &z, &EnumerateOptions::default()).unwrap()
    }

    #[test]
    fn tightening_is_validated() {
        let d = identity_decomp();
        let b = OutputBounds::symmetric(&[1.0]).unwrap();
        assert!(matches!(build_admissible_union(&d, &b, &[1.0]), Err(Error::InvalidTightening)));
        assert!(matches!(build_admissible_union(&d, &b, &[-0.1]), Err(Error::InvalidTightening)));
        let u = build_admissible_union(&d, &b, &[0.25]).unwrap();
        assert_eq!(u.len(), 2);
        assert!(u.residual(&[0.7]) <= 0.0);
        assert!(u.residual(&[0.8]) > 0.0);
        let tight = OutputBounds::new(Vector::from_vec(vec![1.5]), Vector::from_vec(vec![f64::INFINITY])).unwrap();
        let u = build_admissible_union(&d, &tight, &[0.0]).unwrap();
        assert_eq!(u.len(), 1);
        let void = OutputBounds::new(Vector::from_vec(vec![3.0]), Vector::from_vec(vec![5.0])).unwrap();
        assert!(matches!(build_admissible_union(&d, &void, &[0.0]), Err(Error::EmptyUnion)));
    }

    #[test]
    fn big_m_floor_and_override() {
        let d = identity_decomp();
        let u = build_admissible_union(&d, &OutputBounds::symmetric(&[1.0]).unwrap(), &[0.0]).unwrap();
        let m = compute_big_m(&u, &d.workspace).unwrap();
        // members are [-1, 0] and [0, 1]; the worst row over [-2, 2] misses by 2
        let cells = m.per_cell();
        assert!(cells.iter().all(|&c| (c - 2.0).abs() < 1e-9), "{cells:?}");
        assert!(m.rows.iter().flatten().all(|&v| v >= 0.0));
        assert!(BigMPolicy::Uniform(2.0).resolve(&m).is_ok());
        assert!(matches!(BigMPolicy::Uniform(1.0).resolve(&m), Err(Error::BigMTooSmall { .. })));
    }

    #[test]
    fn step_encoding_counts() {
        let d = identity_decomp();
        let u = build_admissible_union(&d, &OutputBounds::symmetric(&[1.0]).unwrap(), &[0.0]).unwrap();
        let m = compute_big_m(&u, &d.workspace).unwrap();
        let mut b = ModelBuilder::new();
        let x = b.add_continuous(1);
        let betas = b.encode_step(&u, &[ZetaEntry::Var(x)], &m, BigMPolicy::Uniform(10.0)).unwrap();
        let model = b.build();
        assert_eq!(betas.len(), 2);
        assert_eq!(model.n_bin, 2);
        assert_eq!(model.groups, vec![vec![1, 2]]);
        assert_eq!(model.a_eq.nrows(), 1);
        assert_eq!(model.b_eq[0], 1.0);
        assert!(model.big_m_col.iter().all(|c| c.is_some()));
        // relaxing the member holding x > 0 leaves only the other one active
        let pos = u.members_containing(&[0.5], 0.0)[0];
        let mut beta = [0.0, 0.0];
        beta[pos] = 1.0;
        assert!(model.max_violation(&[-0.5, beta[0], beta[1]]) <= 0.0);
        assert!(model.max_violation(&[0.5, beta[0], beta[1]]) > 0.0);
        assert!(model.max_violation(&[0.5, beta[1], beta[0]]) <= 0.0);
    }

    #[test]
    fn constants_fold_into_offsets() {
        let d = identity_decomp();
        let u = build_admissible_union(&d, &OutputBounds::symmetric(&[1.0]).unwrap(), &[0.0]).unwrap();
        let m = compute_big_m(&u, &d.workspace).unwrap();
        let mut b = ModelBuilder::new();
        b.encode_step(&u, &[ZetaEntry::Const(0.5)], &m, BigMPolicy::PerRow).unwrap();
        let model = b.build();
        assert_eq!(model.n_cont, 0);
        let pos = u.members_containing(&[0.5], 0.0)[0];
        let mut beta = [1.0, 1.0];
        beta[pos] = 0.0;
        assert!(model.max_violation(&beta) <= 0.0);
        assert!(model.max_violation(&[beta[1], beta[0]]) > 0.0);
    }

    #[test]
    fn horizon_layout_and_lp_listing() {
        let d = identity_decomp();
        let u = build_admissible_union(&d, &OutputBounds::symmetric(&[1.0]).unwrap(), &[0.0])
            .unwrap()
            .with_lift(Matrix::from_row_slice(1, 2, &[0.0, 1.0]))
            .unwrap();
        let m = compute_big_m(&u, &d.workspace).unwrap();
        let (a, bm) = (Matrix::identity(1, 1), Matrix::from_element(1, 1, 0.1));
        let (q, r) = (Matrix::identity(1, 1), Matrix::identity(1, 1) * 0.5);
        let spec = HorizonSpec {
            horizon: 3,
            a_d: &a,
            b_d: &bm,
            state_set: &HPolytope::universe(1),
            input_set: None,
            q: &q,
            r: &r,
            terminal_cost: false,
            z0: &[1.0],
            z_ref: None,
            v_ref: None,
            big_m: &m,
            policy: BigMPolicy::Uniform(5000.0),
            union_first_step_only: false,
        };
        let model = encode_horizon(&u, &spec).unwrap();
        let l = model.layout.unwrap();
        assert_eq!((model.n_cont, model.n_bin), (7, 6));
        assert_eq!(l.beta(2, 1), 12);
        assert_eq!(model.groups.len(), 3);
        assert_eq!(model.a_eq.nrows(), 1 + 3 + 3);
        let lp = model.to_lp_string();
        assert!(lp.contains("Binaries") && lp.contains("b5") && lp.ends_with("End\n"));
        assert!(matches!(
            encode_horizon(&u, &HorizonSpec { horizon: 0, ..spec.clone() }),
            Err(Error::Invalid(_))
        ));
        // cost at z = 1, v = 0 throughout: three stages of ‖1‖²
        let mut x = vec![1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0];
        x.extend([0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        assert!((model.objective(&x) - 3.0).abs() < 1e-12);
        assert!(model.max_violation(&x) <= 1e-12);
    }
}
