//! H-representation polytopes `{x : A x ≤ b}`.

use crate::error::{Error, Result};
use crate::kernel::{check_finite, solve_lp, LpProblem, LpStatus, Matrix, Tolerances, Vector};

#[derive(Debug, Clone, PartialEq)]
pub struct HPolytope {
    a: Matrix,
    b: Vector,
}

impl HPolytope {
    pub fn new(a: Matrix, b: Vector) -> Result<Self> {
        if a.nrows() != b.len() {
            return Err(Error::dim(format!("{} rows but {} offsets", a.nrows(), b.len())));
        }
        check_finite(&a, "polytope rows")?;
        if b.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("polytope offsets"));
        }
        for i in 0..a.nrows() {
            if a.row(i).iter().all(|&v| v == 0.0) && b[i] < 0.0 {
                return Err(Error::TriviallyEmpty(i));
            }
        }
        Ok(HPolytope { a, b })
    }

    /// Axis-aligned box `lo ≤ x ≤ hi`.
    pub fn from_box(lo: &[f64], hi: &[f64]) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::dim("box bounds"));
        }
        let d = lo.len();
        let mut a = Matrix::zeros(2 * d, d);
        let mut b = Vector::zeros(2 * d);
        for i in 0..d {
            a[(2 * i, i)] = 1.0;
            b[2 * i] = hi[i];
            a[(2 * i + 1, i)] = -1.0;
            b[2 * i + 1] = -lo[i];
        }
        HPolytope::new(a, b)
    }

    /// Whole space in dimension `d` (no rows).
    pub fn universe(d: usize) -> Self {
        HPolytope { a: Matrix::zeros(0, d), b: Vector::zeros(0) }
    }

    pub fn dim(&self) -> usize {
        self.a.ncols()
    }

    pub fn n_rows(&self) -> usize {
        self.a.nrows()
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &Vector {
        &self.b
    }

    /// Largest row residual `max_i (a_iᵀx − b_i)`; nonpositive inside.
    pub fn residual(&self, x: &[f64]) -> f64 {
        (0..self.n_rows())
            .map(|i| self.a.row(i).iter().zip(x).map(|(a, x)| a * x).sum::<f64>() - self.b[i])
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        self.n_rows() == 0 || self.residual(x) <= tol
    }

    /// Row-wise concatenation.
    pub fn intersect(&self, other: &HPolytope) -> Result<HPolytope> {
        if self.dim() != other.dim() {
            return Err(Error::dim(format!("intersect {}-d with {}-d", self.dim(), other.dim())));
        }
        let (m1, m2) = (self.n_rows(), other.n_rows());
        let a = Matrix::from_fn(m1 + m2, self.dim(), |i, j| {
            if i < m1 { self.a[(i, j)] } else { other.a[(i - m1, j)] }
        });
        let b = Vector::from_fn(m1 + m2, |i, _| if i < m1 { self.b[i] } else { other.b[i - m1] });
        Ok(HPolytope { a, b })
    }

    /// `{ζ : A S ζ ≤ b}` for a map `S` from the new space into this one.
    pub fn pullback(&self, s: &Matrix) -> Result<HPolytope> {
        if s.nrows() != self.dim() {
            return Err(Error::dim("pullback map"));
        }
        HPolytope::new(&self.a * s, self.b.clone())
    }

    pub fn append_row(&mut self, row: &[f64], rhs: f64) -> Result<()> {
        if row.len() != self.dim() {
            return Err(Error::dim("appended row"));
        }
        if !rhs.is_finite() || row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("appended row"));
        }
        if row.iter().all(|&v| v == 0.0) && rhs < 0.0 {
            return Err(Error::TriviallyEmpty(self.n_rows()));
        }
        let m = self.n_rows();
        let d = self.dim();
        let mut a = self.a.clone().resize_vertically(m + 1, 0.0);
        for j in 0..d {
            a[(m, j)] = row[j];
        }
        self.a = a;
        self.b = self.b.clone().resize_vertically(m + 1, rhs);
        Ok(())
    }

    /// A point satisfying every row, if one exists.
    pub fn feasible_point(&self) -> Result<Option<Vector>> {
        let lp = LpProblem::new(Vector::zeros(self.dim()), self.a.clone(), self.b.clone());
        let r = solve_lp(&lp)?;
        Ok((r.status == LpStatus::Optimal).then_some(r.x))
    }

    /// Phase-one emptiness test on the closed set.
    pub fn is_empty(&self) -> Result<bool> {
        Ok(self.feasible_point()?.is_none())
    }

    /// Center and radius of the largest inscribed Euclidean ball; `None` when empty.
    pub fn chebyshev_center(&self) -> Result<Option<(Vector, f64)>> {
        let d = self.dim();
        let m = self.n_rows();
        let g = Matrix::from_fn(m, d + 1, |i, j| {
            if j < d { self.a[(i, j)] } else { self.a.row(i).norm() }
        });
        let mut c = Vector::zeros(d + 1);
        c[d] = -1.0;
        let mut lo = Vector::from_element(d + 1, f64::NEG_INFINITY);
        lo[d] = 0.0;
        let lp = LpProblem::new(c, g, self.b.clone())
            .with_bounds(lo, Vector::from_element(d + 1, f64::INFINITY));
        let r = solve_lp(&lp)?;
        match r.status {
            LpStatus::Optimal => Ok(Some((r.x.rows(0, d).into_owned(), r.x[d]))),
            LpStatus::Infeasible => Ok(None),
            LpStatus::Unbounded => Err(Error::Unbounded("polytope has an unbounded inscribed ball")),
        }
    }

    fn check_bounded(&self) -> Result<()> {
        let d = self.dim();
        for i in 0..d {
            for s in [1.0, -1.0] {
                let mut c = Vector::zeros(d);
                c[i] = s;
                let r = solve_lp(&LpProblem::new(c, self.a.clone(), self.b.clone()))?;
                if r.status == LpStatus::Unbounded {
                    return Err(Error::Unbounded("polytope"));
                }
            }
        }
        Ok(())
    }

    /// Exact vertex set by solving every `d`-subset of rows.
    pub fn vertices(&self) -> Result<VertexSet> {
        let d = self.dim();
        if d > 6 {
            return Err(Error::TooLarge { what: "vertex enumeration dimension", limit: 6 });
        }
        self.check_bounded()?;
        let tol = Tolerances::default();
        let m = self.n_rows();
        let mut out = VertexSet::default();
        if d == 0 || m < d {
            return Ok(out);
        }
        let mut subset: Vec<usize> = (0..d).collect();
        loop {
            let sub = Matrix::from_fn(d, d, |i, j| self.a[(subset[i], j)]);
            let rhs = Vector::from_fn(d, |i, _| self.b[subset[i]]);
            let sv = sub.clone().singular_values();
            if sv.min() > 1e-10 * sv.max().max(1.0) {
                if let Some(x) = sub.lu().solve(&rhs) {
                    let scale = 1.0 + self.b.amax();
                    if self.residual(x.as_slice()) <= tol.feas * scale {
                        out.insert(x, subset.clone(), tol.dedup);
                    }
                }
            }
            if !next_combination(&mut subset, m) {
                break;
            }
        }
        Ok(out)
    }

    /// Same set with rows implied by the others removed (one LP per row).
    pub fn remove_redundant(&self) -> Result<HPolytope> {
        let tol = Tolerances::default().feas;
        let m = self.n_rows();
        let mut keep = vec![true; m];
        for i in 0..m {
            let others: Vec<usize> = (0..m).filter(|&k| k != i && keep[k]).collect();
            let g = Matrix::from_fn(others.len(), self.dim(), |r, j| self.a[(others[r], j)]);
            let h = Vector::from_fn(others.len(), |r, _| self.b[others[r]]);
            let r = solve_lp(&LpProblem::new(-self.a.row(i).transpose(), g, h))?;
            match r.status {
                LpStatus::Optimal if -r.objective <= self.b[i] + tol * (1.0 + self.b[i].abs()) => keep[i] = false,
                LpStatus::Infeasible => return Ok(self.clone()),
                _ => {}
            }
        }
        let rows: Vec<usize> = (0..m).filter(|&i| keep[i]).collect();
        HPolytope::new(
            Matrix::from_fn(rows.len(), self.dim(), |r, j| self.a[(rows[r], j)]),
            Vector::from_fn(rows.len(), |r, _| self.b[rows[r]]),
        )
    }

    /// Per-row `max_{ζ∈Z} (a_iᵀζ − b_i)`.
    pub fn row_violations(&self, z: &HPolytope) -> Result<Vec<f64>> {
        if z.dim() != self.dim() {
            return Err(Error::dim("row_violations workspace"));
        }
        (0..self.n_rows())
            .map(|i| {
                let c = -self.a.row(i).transpose();
                let r = solve_lp(&LpProblem::new(c, z.a.clone(), z.b.clone()))?;
                match r.status {
                    LpStatus::Optimal => Ok(-r.objective - self.b[i]),
                    LpStatus::Unbounded => Err(Error::Unbounded("workspace")),
                    LpStatus::Infeasible => Err(Error::Invalid("workspace is empty".into())),
                }
            })
            .collect()
    }

    /// Largest row violation over a bounded workspace `Z`.
    pub fn max_row_violation(&self, z: &HPolytope) -> Result<f64> {
        Ok(self.row_violations(z)?.into_iter().fold(f64::NEG_INFINITY, f64::max))
    }
}

fn next_combination(c: &mut [usize], n: usize) -> bool {
    let k = c.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if c[i] < n - k + i {
            c[i] += 1;
            for j in i + 1..k {
                c[j] = c[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

#[derive(Debug, Clone, Default)]
pub struct VertexSet {
    pub points: Vec<Vector>,
    /// Row subsets that produced each vertex.
    pub sources: Vec<Vec<Vec<usize>>>,
}

impl VertexSet {
    pub fn from_points(points: Vec<Vector>) -> Self {
        let sources = vec![Vec::new(); points.len()];
        VertexSet { points, sources }
    }

    fn insert(&mut self, x: Vector, rows: Vec<usize>, tol: f64) {
        if let Some(k) = self.points.iter().position(|p| (p - &x).amax() <= tol) {
            self.sources[k].push(rows);
        } else {
            self.points.push(x);
            self.sources.push(vec![rows]);
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Arithmetic mean of the vertices.
    pub fn centroid(&self) -> Result<Vector> {
        let first = self.points.first().ok_or(Error::Invalid("empty vertex set".into()))?;
        let mut c = Vector::zeros(first.len());
        for p in &self.points {
            c += p;
        }
        Ok(c / self.points.len() as f64)
    }
}

fn l1(a: &Vector, b: &Vector) -> f64 {
    (a - b).iter().map(|v| v.abs()).sum()
}

/// Smallest 1-norm ball containing every vertex, as an LP.
pub fn min_enclosing_l1_ball(v: &VertexSet) -> Result<(Vector, f64)> {
    let first = v.points.first().ok_or(Error::Invalid("empty vertex set".into()))?;
    let d = first.len();
    let k = v.len();
    // variables: center (d), r, t (k*d)
    let n = d + 1 + k * d;
    let rows = 2 * k * d + k;
    let mut g = Matrix::zeros(rows, n);
    let mut h = Vector::zeros(rows);
    let mut row = 0;
    for (p, pt) in v.points.iter().enumerate() {
        for i in 0..d {
            let t = d + 1 + p * d + i;
            // pt_i − c_i ≤ t
            g[(row, i)] = -1.0;
            g[(row, t)] = -1.0;
            h[row] = -pt[i];
            row += 1;
            // c_i − pt_i ≤ t
            g[(row, i)] = 1.0;
            g[(row, t)] = -1.0;
            h[row] = pt[i];
            row += 1;
        }
        for i in 0..d {
            g[(row, d + 1 + p * d + i)] = 1.0;
        }
        g[(row, d)] = -1.0;
        row += 1;
    }
    let mut c = Vector::zeros(n);
    c[d] = 1.0;
    let r = solve_lp(&LpProblem::new(c, g, h))?;
    if r.status != LpStatus::Optimal {
        return Err(Error::Invalid("enclosing-ball LP failed".into()));
    }
    let center = r.x.rows(0, d).into_owned();
    let radius = v.points.iter().map(|p| l1(p, &center)).fold(0.0, f64::max);
    Ok((center, radius))
}

/// 1-norm ball centered at the vertex centroid.
pub fn centroid_l1_ball(v: &VertexSet) -> Result<(Vector, f64)> {
    let center = v.centroid()?;
    let radius = v.points.iter().map(|p| l1(p, &center)).fold(0.0, f64::max);
    Ok((center, radius))
}
