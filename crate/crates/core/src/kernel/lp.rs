use super::linalg::{check_finite, check_finite_vec};
use super::{Matrix, Vector};
use crate::error::{Error, Result};

/// `min cᵀx  s.t.  G x ≤ h,  E x = d,  lower ≤ x ≤ upper`.
///
/// Infinite bounds are allowed; everything else must be finite.
#[derive(Debug, Clone)]
pub struct LpProblem {
    pub c: Vector,
    pub g: Matrix,
    pub h: Vector,
    pub e: Matrix,
    pub d: Vector,
    pub lower: Vector,
    pub upper: Vector,
}

impl LpProblem {
    pub fn new(c: Vector, g: Matrix, h: Vector) -> Self {
        let n = c.len();
        LpProblem {
            c,
            g,
            h,
            e: Matrix::zeros(0, n),
            d: Vector::zeros(0),
            lower: Vector::from_element(n, f64::NEG_INFINITY),
            upper: Vector::from_element(n, f64::INFINITY),
        }
    }

    pub fn with_equalities(mut self, e: Matrix, d: Vector) -> Self {
        self.e = e;
        self.d = d;
        self
    }

    pub fn with_bounds(mut self, lower: Vector, upper: Vector) -> Self {
        self.lower = lower;
        self.upper = upper;
        self
    }

    pub fn n(&self) -> usize {
        self.c.len()
    }

    fn validate(&self) -> Result<()> {
        let n = self.n();
        if self.g.ncols() != n || self.g.nrows() != self.h.len() {
            return Err(Error::dim("LP inequality block"));
        }
        if self.e.ncols() != n || self.e.nrows() != self.d.len() {
            return Err(Error::dim("LP equality block"));
        }
        if self.lower.len() != n || self.upper.len() != n {
            return Err(Error::dim("LP bounds"));
        }
        check_finite_vec(&self.c, "LP cost")?;
        check_finite(&self.g, "LP inequality matrix")?;
        check_finite_vec(&self.h, "LP inequality offset")?;
        check_finite(&self.e, "LP equality matrix")?;
        check_finite_vec(&self.d, "LP equality offset")?;
        if self.lower.iter().chain(self.upper.iter()).any(|v| v.is_nan()) {
            return Err(Error::NonFinite("LP bounds"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

/// Multipliers with the sign convention `c + Gᵀλ + Eᵀμ - ν_lo + ν_up = 0`, `λ, ν ≥ 0`.
#[derive(Debug, Clone)]
pub struct LpDuals {
    pub ineq: Vector,
    pub eq: Vector,
    pub lower: Vector,
    pub upper: Vector,
}

impl LpDuals {
    /// Dual objective; equals the primal optimum under strong duality.
    pub fn objective(&self, p: &LpProblem) -> f64 {
        let mut v = -self.ineq.dot(&p.h) - self.eq.dot(&p.d);
        for j in 0..p.n() {
            if self.lower[j] != 0.0 {
                v += self.lower[j] * p.lower[j];
            }
            if self.upper[j] != 0.0 {
                v -= self.upper[j] * p.upper[j];
            }
        }
        v
    }
}

#[derive(Debug, Clone)]
pub struct LpResult {
    pub status: LpStatus,
    pub x: Vector,
    pub objective: f64,
    pub duals: Option<LpDuals>,
    pub iterations: usize,
}

#[derive(Clone, Copy)]
enum RowKind {
    Ineq(usize),
    Upper(usize),
    Lower(usize),
    Eq(usize),
}

/// Revised simplex on the standard form obtained by splitting free variables.
///
/// Dantzig pricing, switching to Bland's rule after a run of degenerate pivots.
pub fn solve_lp(p: &LpProblem) -> Result<LpResult> {
    p.validate()?;
    let n = p.n();

    let mut kinds = Vec::new();
    for i in 0..p.g.nrows() {
        kinds.push(RowKind::Ineq(i));
    }
    for j in 0..n {
        if p.upper[j].is_finite() {
            kinds.push(RowKind::Upper(j));
        }
        if p.lower[j].is_finite() {
            kinds.push(RowKind::Lower(j));
        }
    }
    for i in 0..p.e.nrows() {
        kinds.push(RowKind::Eq(i));
    }
    let m = kinds.len();
    if m == 0 {
        let status = if p.c.amax() == 0.0 { LpStatus::Optimal } else { LpStatus::Unbounded };
        let empty = Vector::zeros(0);
        return Ok(LpResult {
            status,
            x: Vector::zeros(n),
            objective: if status == LpStatus::Optimal { 0.0 } else { f64::NEG_INFINITY },
            duals: (status == LpStatus::Optimal).then(|| LpDuals {
                ineq: empty.clone(),
                eq: empty,
                lower: Vector::zeros(n),
                upper: Vector::zeros(n),
            }),
            iterations: 0,
        });
    }
    let n_ineq = m - p.e.nrows();
    // columns: x+ (n), x- (n), slacks (n_ineq), artificials (m)
    let n_struct = 2 * n + n_ineq;
    let n_cols = n_struct + m;
    let mut a = Matrix::zeros(m, n_cols);
    let mut b = Vector::zeros(m);
    let mut sign = vec![1.0; m];
    for (r, kind) in kinds.iter().enumerate() {
        let (coef, rhs): (Vec<(usize, f64)>, f64) = match *kind {
            RowKind::Ineq(i) => ((0..n).map(|j| (j, p.g[(i, j)])).collect(), p.h[i]),
            RowKind::Upper(j) => (vec![(j, 1.0)], p.upper[j]),
            RowKind::Lower(j) => (vec![(j, -1.0)], -p.lower[j]),
            RowKind::Eq(i) => ((0..n).map(|j| (j, p.e[(i, j)])).collect(), p.d[i]),
        };
        let s = if rhs < 0.0 { -1.0 } else { 1.0 };
        sign[r] = s;
        for (j, v) in coef {
            a[(r, j)] = s * v;
            a[(r, n + j)] = -s * v;
        }
        if r < n_ineq {
            a[(r, 2 * n + r)] = s;
        }
        a[(r, n_struct + r)] = 1.0;
        b[r] = s * rhs;
    }

    let mut basis: Vec<usize> = (0..m)
        .map(|r| if r < n_ineq && sign[r] > 0.0 { 2 * n + r } else { n_struct + r })
        .collect();

    let mut cost1 = Vector::zeros(n_cols);
    for r in 0..m {
        if basis[r] >= n_struct {
            cost1[n_struct + r] = 1.0;
        }
    }
    let mut iters = 0;
    let all_cols: Vec<bool> = vec![true; n_cols];
    if basis.iter().any(|&c| c >= n_struct) {
        let out = simplex(&a, &b, &cost1, &mut basis, &all_cols, &mut iters)?;
        debug_assert!(out.is_some(), "phase one is bounded below");
        let x_b = basic_solution(&a, &b, &basis)?;
        let infeas: f64 = basis
            .iter()
            .zip(x_b.iter())
            .filter(|(&c, _)| c >= n_struct)
            .map(|(_, &v)| v)
            .sum();
        if infeas > 1e-9 * (1.0 + b.amax()) {
            return Ok(LpResult {
                status: LpStatus::Infeasible,
                x: Vector::zeros(n),
                objective: f64::NAN,
                duals: None,
                iterations: iters,
            });
        }
        drive_out_artificials(&a, &mut basis, n_struct)?;
    }

    let mut cost2 = Vector::zeros(n_cols);
    for j in 0..n {
        cost2[j] = p.c[j];
        cost2[n + j] = -p.c[j];
    }
    let allowed: Vec<bool> = (0..n_cols).map(|c| c < n_struct).collect();
    let bounded = simplex(&a, &b, &cost2, &mut basis, &allowed, &mut iters)?;
    if bounded.is_none() {
        return Ok(LpResult {
            status: LpStatus::Unbounded,
            x: Vector::zeros(n),
            objective: f64::NEG_INFINITY,
            duals: None,
            iterations: iters,
        });
    }
    let x_b = basic_solution(&a, &b, &basis)?;
    let mut y_full = Vector::zeros(n_cols);
    for (r, &c) in basis.iter().enumerate() {
        y_full[c] = x_b[r].max(0.0);
    }
    let x = Vector::from_fn(n, |j, _| y_full[j] - y_full[n + j]);
    let objective = p.c.dot(&x);

    let yd = simplex_duals(&a, &cost2, &basis)?;
    let mut duals = LpDuals {
        ineq: Vector::zeros(p.g.nrows()),
        eq: Vector::zeros(p.e.nrows()),
        lower: Vector::zeros(n),
        upper: Vector::zeros(n),
    };
    for (r, kind) in kinds.iter().enumerate() {
        let v = -sign[r] * yd[r];
        match *kind {
            RowKind::Ineq(i) => duals.ineq[i] = v.max(0.0),
            RowKind::Upper(j) => duals.upper[j] = v.max(0.0),
            RowKind::Lower(j) => duals.lower[j] = v.max(0.0),
            RowKind::Eq(i) => duals.eq[i] = v,
        }
    }
    Ok(LpResult { status: LpStatus::Optimal, x, objective, duals: Some(duals), iterations: iters })
}

fn basis_matrix(a: &Matrix, basis: &[usize]) -> Matrix {
    Matrix::from_fn(a.nrows(), basis.len(), |i, k| a[(i, basis[k])])
}

fn basic_solution(a: &Matrix, b: &Vector, basis: &[usize]) -> Result<Vector> {
    let lu = basis_matrix(a, basis).lu();
    lu.solve(b).ok_or(Error::Singular("simplex basis"))
}

fn simplex_duals(a: &Matrix, cost: &Vector, basis: &[usize]) -> Result<Vector> {
    let bt = basis_matrix(a, basis).transpose();
    let cb = Vector::from_fn(basis.len(), |k, _| cost[basis[k]]);
    bt.lu().solve(&cb).ok_or(Error::Singular("simplex basis"))
}

/// Runs primal simplex from a feasible basis. `Ok(None)` signals unboundedness.
fn simplex(
    a: &Matrix,
    b: &Vector,
    cost: &Vector,
    basis: &mut [usize],
    allowed: &[bool],
    iters: &mut usize,
) -> Result<Option<()>> {
    let (m, n_cols) = a.shape();
    let max_iter = 50 * (m + n_cols) + 1000;
    let mut in_basis = vec![false; n_cols];
    for &c in basis.iter() {
        in_basis[c] = true;
    }
    let mut degenerate_run = 0usize;
    let opt_tol = 1e-10 * (1.0 + cost.amax());
    loop {
        *iters += 1;
        if *iters > max_iter {
            return Err(Error::IterationLimit("simplex"));
        }
        let lu = basis_matrix(a, basis).lu();
        let x_b = lu.solve(b).ok_or(Error::Singular("simplex basis"))?;
        let cb = Vector::from_fn(m, |k, _| cost[basis[k]]);
        let bt = basis_matrix(a, basis).transpose();
        let y = bt.lu().solve(&cb).ok_or(Error::Singular("simplex basis"))?;

        let bland = degenerate_run > 20;
        let mut entering: Option<(usize, f64)> = None;
        for j in 0..n_cols {
            if in_basis[j] || !allowed[j] {
                continue;
            }
            let dj = cost[j] - a.column(j).dot(&y);
            if dj < -opt_tol {
                match entering {
                    None => entering = Some((j, dj)),
                    Some((_, best)) if !bland && dj < best => entering = Some((j, dj)),
                    _ => {}
                }
                if bland {
                    break;
                }
            }
        }
        let Some((q, _)) = entering else { return Ok(Some(())) };

        let w = lu.solve(&a.column(q).into_owned()).ok_or(Error::Singular("simplex basis"))?;
        let piv_tol = 1e-9 * w.amax().max(1.0);
        let mut leave: Option<(usize, f64)> = None;
        for i in 0..m {
            if w[i] > piv_tol {
                let ratio = x_b[i].max(0.0) / w[i];
                let better = match leave {
                    None => true,
                    Some((li, lr)) => {
                        ratio < lr - 1e-12 || (ratio <= lr + 1e-12 && basis[i] < basis[li])
                    }
                };
                if better {
                    leave = Some((i, ratio));
                }
            }
        }
        let Some((r, step)) = leave else { return Ok(None) };
        if step <= 1e-12 {
            degenerate_run += 1;
        } else {
            degenerate_run = 0;
        }
        in_basis[basis[r]] = false;
        basis[r] = q;
        in_basis[q] = true;
    }
}

/// Pivots zero-level artificials out of the basis where a structural column allows it.
/// Artificials left behind belong to redundant rows and stay at zero.
fn drive_out_artificials(a: &Matrix, basis: &mut [usize], n_struct: usize) -> Result<()> {
    let m = a.nrows();
    for r in 0..m {
        if basis[r] < n_struct {
            continue;
        }
        let binv = basis_matrix(a, basis)
            .try_inverse()
            .ok_or(Error::Singular("simplex basis"))?;
        let row = binv.row(r);
        let mut best: Option<(usize, f64)> = None;
        for j in 0..n_struct {
            if basis.contains(&j) {
                continue;
            }
            let v = (row * a.column(j))[(0, 0)].abs();
            if v > 1e-7 && best.is_none_or(|(_, bv)| v > bv) {
                best = Some((j, v));
            }
        }
        if let Some((j, _)) = best {
            basis[r] = j;
        }
    }
    Ok(())
}
