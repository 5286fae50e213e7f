use super::elim::eliminate_equalities;
use super::linalg::{check_finite, check_finite_vec, check_symmetric, symmetrize};
use super::lp::{solve_lp, LpProblem, LpStatus};
use super::{Matrix, Tolerances, Vector};
use crate::error::{Error, Result};

/// `min ½xᵀHx + gᵀx  s.t.  G x ≤ h,  E x = d` with `H ⪰ 0`.
#[derive(Debug, Clone)]
pub struct QpProblem {
    pub h: Matrix,
    pub g: Vector,
    pub a_ineq: Matrix,
    pub b_ineq: Vector,
    pub a_eq: Matrix,
    pub b_eq: Vector,
}

impl QpProblem {
    pub fn new(h: Matrix, g: Vector) -> Self {
        let n = g.len();
        QpProblem {
            h,
            g,
            a_ineq: Matrix::zeros(0, n),
            b_ineq: Vector::zeros(0),
            a_eq: Matrix::zeros(0, n),
            b_eq: Vector::zeros(0),
        }
    }

    pub fn with_inequalities(mut self, a: Matrix, b: Vector) -> Self {
        self.a_ineq = a;
        self.b_ineq = b;
        self
    }

    pub fn with_equalities(mut self, a: Matrix, b: Vector) -> Self {
        self.a_eq = a;
        self.b_eq = b;
        self
    }

    pub fn n(&self) -> usize {
        self.g.len()
    }

    pub fn objective(&self, x: &Vector) -> f64 {
        0.5 * x.dot(&(&self.h * x)) + self.g.dot(x)
    }

    fn validate(&self) -> Result<()> {
        let n = self.n();
        if self.h.shape() != (n, n) {
            return Err(Error::dim("QP Hessian"));
        }
        if self.a_ineq.ncols() != n || self.a_ineq.nrows() != self.b_ineq.len() {
            return Err(Error::dim("QP inequality block"));
        }
        if self.a_eq.ncols() != n || self.a_eq.nrows() != self.b_eq.len() {
            return Err(Error::dim("QP equality block"));
        }
        check_finite(&self.h, "QP Hessian")?;
        check_finite_vec(&self.g, "QP linear cost")?;
        check_finite(&self.a_ineq, "QP inequality matrix")?;
        check_finite_vec(&self.b_ineq, "QP inequality offset")?;
        check_finite(&self.a_eq, "QP equality matrix")?;
        check_finite_vec(&self.b_eq, "QP equality offset")?;
        check_symmetric(&self.h, 1e-10 * self.h.amax().max(1.0))?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.primal).max(self.dual).max(self.complementarity)
    }
}

#[derive(Debug, Clone)]
pub struct QpResult {
    pub status: QpStatus,
    pub x: Vector,
    pub objective: f64,
    /// Multipliers of `G x ≤ h` (nonnegative).
    pub lambda: Vector,
    /// Multipliers of `E x = d`, sign convention `Hx + g + Gᵀλ + Eᵀμ = 0`.
    pub mu: Vector,
    /// Inequality rows in the final working set; feed back as a warm start.
    pub active: Vec<usize>,
    pub iterations: usize,
    pub kkt: KktResiduals,
}

pub fn solve_qp(p: &QpProblem) -> Result<QpResult> {
    solve_qp_warm(p, &[])
}

/// Solves with the listed inequality rows tried first.
///
/// Equalities are eliminated, then the reduced problem goes through the
/// dual active-set method of Goldfarb and Idnani. A reduced Hessian that is
/// only semidefinite is handled by proximal-point outer iterations.
pub fn solve_qp_warm(p: &QpProblem, warm: &[usize]) -> Result<QpResult> {
    solve_qp_tol(p, warm, Tolerances::default())
}

/// [`solve_qp_warm`] with explicit tolerances.
pub fn solve_qp_tol(p: &QpProblem, warm: &[usize], tol: Tolerances) -> Result<QpResult> {
    p.validate()?;
    let n = p.n();
    let h_norm = p.h.amax().max(1.0);
    let h_sym = symmetrize(&p.h);
    if n > 0 {
        let min_eig = h_sym.clone().symmetric_eigenvalues().min();
        if min_eig < -tol.psd * h_norm {
            return Err(Error::NotPsd(min_eig));
        }
    }

    let failed = |status, iters| QpResult {
        status,
        x: Vector::zeros(n),
        objective: if status == QpStatus::Unbounded { f64::NEG_INFINITY } else { f64::NAN },
        lambda: Vector::zeros(p.a_ineq.nrows()),
        mu: Vector::zeros(p.a_eq.nrows()),
        active: Vec::new(),
        iterations: iters,
        kkt: KktResiduals::default(),
    };

    let (x0, basis) = if p.a_eq.nrows() > 0 {
        match eliminate_equalities(&p.a_eq, &p.b_eq, None) {
            Some(el) => (el.x0, el.basis),
            None => return Ok(failed(QpStatus::Infeasible, 0)),
        }
    } else {
        (Vector::zeros(n), Matrix::identity(n, n))
    };
    let hr = symmetrize(&(basis.transpose() * &h_sym * &basis));
    let gr = basis.transpose() * (&h_sym * &x0 + &p.g);
    let ar = &p.a_ineq * &basis;
    let br = &p.b_ineq - &p.a_ineq * &x0;

    let (y, lambda, active, iterations) = match solve_reduced(&hr, &gr, &ar, &br, warm, tol)? {
        Reduced::Solved { y, lambda, active, iterations } => (y, lambda, active, iterations),
        Reduced::Infeasible(it) => return Ok(failed(QpStatus::Infeasible, it)),
        Reduced::Unbounded(it) => return Ok(failed(QpStatus::Unbounded, it)),
    };
    let x = &x0 + &basis * &y;
    let grad = &h_sym * &x + &p.g + p.a_ineq.transpose() * &lambda;
    let mu = if p.a_eq.nrows() > 0 {
        let et = p.a_eq.transpose();
        let eps = 1e-12 * et.amax().max(1.0);
        et.svd(true, true)
            .solve(&(-&grad), eps)
            .unwrap_or_else(|_| Vector::zeros(p.a_eq.nrows()))
    } else {
        Vector::zeros(0)
    };
    let kkt = kkt_residuals(p, &x, &lambda, &mu);
    Ok(QpResult {
        status: QpStatus::Optimal,
        objective: p.objective(&x),
        x,
        lambda,
        mu,
        active,
        iterations,
        kkt,
    })
}

pub(crate) fn kkt_residuals(p: &QpProblem, x: &Vector, lambda: &Vector, mu: &Vector) -> KktResiduals {
    let stat = &p.h * x + &p.g + p.a_ineq.transpose() * lambda + p.a_eq.transpose() * mu;
    let slack = &p.b_ineq - &p.a_ineq * x;
    let primal_ineq = slack.iter().fold(0.0f64, |m, &s| m.max(-s));
    let primal_eq = if p.a_eq.nrows() > 0 { (&p.a_eq * x - &p.b_eq).amax() } else { 0.0 };
    let comp = slack.iter().zip(lambda.iter()).fold(0.0f64, |m, (&s, &l)| m.max((s * l).abs()));
    KktResiduals {
        stationarity: if stat.is_empty() { 0.0 } else { stat.amax() },
        primal: primal_ineq.max(primal_eq),
        dual: lambda.iter().fold(0.0f64, |m, &l| m.max(-l)),
        complementarity: comp,
    }
}

pub(crate) enum Reduced {
    Solved { y: Vector, lambda: Vector, active: Vec<usize>, iterations: usize },
    Infeasible(usize),
    Unbounded(usize),
}

/// Inequality-only QP. Picks plain GI or proximal iterations by the curvature of `h`.
pub(crate) fn solve_reduced(
    h: &Matrix,
    g: &Vector,
    a: &Matrix,
    b: &Vector,
    warm: &[usize],
    tol: Tolerances,
) -> Result<Reduced> {
    let n = g.len();
    let m = a.nrows();
    if n == 0 {
        let worst = b.iter().fold(0.0f64, |w, &v| w.max(-v));
        return Ok(if worst > tol.feas {
            Reduced::Infeasible(0)
        } else {
            Reduced::Solved { y: Vector::zeros(0), lambda: Vector::zeros(m), active: vec![], iterations: 0 }
        });
    }
    let scale = h.amax().max(1.0);
    let min_eig = h.clone().symmetric_eigenvalues().min();
    let mut hreg = h.clone();
    for i in 0..n {
        hreg[(i, i)] += tol.hessian_reg * scale;
    }
    if min_eig > tol.pd_threshold * scale {
        return gi_solve(h, g, a, b, warm, tol);
    }

    if recession_descent(h, g, a, scale)? {
        let feasible = solve_lp(&LpProblem::new(Vector::zeros(n), a.clone(), b.clone()))?.status
            == LpStatus::Optimal;
        return Ok(if feasible { Reduced::Unbounded(0) } else { Reduced::Infeasible(0) });
    }
    // proximal point: min f(y) + ρ/2 ‖y − y_k‖²
    let rho = 1e-2 * scale;
    for i in 0..n {
        hreg[(i, i)] += rho;
    }
    let mut y = Vector::zeros(n);
    let mut active: Vec<usize> = warm.to_vec();
    let mut total = 0;
    for _ in 0..20_000 {
        let gk = g - &y * rho;
        match gi_solve(&hreg, &gk, a, b, &active, tol)? {
            Reduced::Solved { y: y_new, lambda, active: act, iterations } => {
                total += iterations;
                let step = (&y_new - &y).amax();
                y = y_new;
                active = act;
                if step <= 1e-12 * (1.0 + y.amax()) {
                    return Ok(Reduced::Solved { y, lambda, active, iterations: total });
                }
            }
            other => return Ok(other),
        }
    }
    Err(Error::IterationLimit("proximal QP"))
}

/// Is there a direction `d` with `H d = 0`, `A d ≤ 0` and `gᵀd < 0`?
fn recession_descent(h: &Matrix, g: &Vector, a: &Matrix, scale: f64) -> Result<bool> {
    let n = g.len();
    let lp = LpProblem::new(g.clone(), a.clone(), Vector::zeros(a.nrows()))
        .with_equalities(h.clone(), Vector::zeros(n))
        .with_bounds(Vector::from_element(n, -1.0), Vector::from_element(n, 1.0));
    let r = solve_lp(&lp)?;
    Ok(r.status == LpStatus::Optimal && r.objective < -1e-9 * scale.max(g.amax()))
}

/// Dual active-set method for `min ½yᵀHy + gᵀy s.t. A y ≤ b` with `H ≻ 0`.
pub(crate) fn gi_solve(
    h: &Matrix,
    g: &Vector,
    a: &Matrix,
    b: &Vector,
    warm: &[usize],
    tol: Tolerances,
) -> Result<Reduced> {
    let n = g.len();
    let m = a.nrows();
    let chol = h.clone().cholesky().ok_or(Error::Singular("QP Hessian"))?;
    // J = L⁻ᵀ
    let mut j = chol
        .l()
        .transpose()
        .solve_upper_triangular(&Matrix::identity(n, n))
        .ok_or(Error::Singular("QP Hessian"))?;
    let mut x = -chol.solve(g);
    let mut r = Matrix::zeros(n, n);
    let mut active: Vec<usize> = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    let mut in_active = vec![false; m];

    let norms: Vec<f64> = (0..m).map(|i| a.row(i).norm()).collect();
    let mut hints: Vec<usize> = warm.iter().rev().copied().filter(|&i| i < m).collect();
    let mut iterations = 0usize;
    let max_iter = 20 * (n + m) + 200;
    let viol_tol = |i: usize| 1e-2 * tol.feas * (1.0 + b[i].abs());

    // slack_i = b_i - a_iᵀy; the method works with n_i = -a_i
    let slack = |x: &Vector, i: usize| b[i] - a.row(i).transpose().dot(x);

    loop {
        let mut chosen: Option<usize> = None;
        while let Some(i) = hints.pop() {
            if !in_active[i] && norms[i] > 0.0 && slack(&x, i) < -viol_tol(i) {
                chosen = Some(i);
                break;
            }
        }
        if chosen.is_none() {
            let mut worst = 0.0;
            for i in (0..m).filter(|&i| !in_active[i]) {
                let s = slack(&x, i);
                if s < -viol_tol(i) {
                    let sn = if norms[i] > 0.0 { s / norms[i] } else { f64::NEG_INFINITY };
                    if sn < worst {
                        worst = sn;
                        chosen = Some(i);
                    }
                }
            }
        }
        let Some(p) = chosen else {
            let mut lambda = Vector::zeros(m);
            for (k, &i) in active.iter().enumerate() {
                lambda[i] = u[k].max(0.0);
            }
            return Ok(Reduced::Solved { y: x, lambda, active, iterations });
        };
        if norms[p] == 0.0 {
            return Ok(Reduced::Infeasible(iterations));
        }
        let np = -a.row(p).transpose();
        let mut u_plus = 0.0;

        loop {
            iterations += 1;
            if iterations > max_iter {
                return Err(Error::IterationLimit("dual active-set QP"));
            }
            let q = active.len();
            let d = j.transpose() * &np;
            let mut z = Vector::zeros(n);
            for k in q..n {
                if d[k] != 0.0 {
                    z.axpy(d[k], &j.column(k), 1.0);
                }
            }
            let mut rv = vec![0.0; q];
            for i in (0..q).rev() {
                let mut s = d[i];
                for k in i + 1..q {
                    s -= r[(i, k)] * rv[k];
                }
                rv[i] = s / r[(i, i)];
            }
            let mut t1 = f64::INFINITY;
            let mut k_drop = None;
            for k in 0..q {
                if rv[k] > 1e-14 {
                    let t = u[k] / rv[k];
                    if t < t1 {
                        t1 = t;
                        k_drop = Some(k);
                    }
                }
            }
            let zn = z.dot(&np);
            let t2 = if zn > 1e-15 * (1.0 + np.norm_squared()) {
                (-slack(&x, p) / zn).max(0.0)
            } else {
                f64::INFINITY
            };
            if t1.is_infinite() && t2.is_infinite() {
                return Ok(Reduced::Infeasible(iterations));
            }
            let t = t1.min(t2);
            if t2.is_finite() {
                x.axpy(t, &z, 1.0);
            }
            for k in 0..q {
                u[k] -= t * rv[k];
            }
            u_plus += t;
            if t2 <= t1 {
                add_constraint(&mut j, &mut r, d, q);
                active.push(p);
                u.push(u_plus);
                in_active[p] = true;
                break;
            }
            let kd = k_drop.expect("finite t1 has an index");
            drop_constraint(&mut j, &mut r, &mut active, &mut u, &mut in_active, kd);
        }
    }
}

fn givens(a: f64, b: f64) -> (f64, f64, f64) {
    let h = a.hypot(b);
    if h == 0.0 {
        (1.0, 0.0, 0.0)
    } else {
        (a / h, b / h, h)
    }
}

fn add_constraint(j: &mut Matrix, r: &mut Matrix, mut d: Vector, q: usize) {
    let n = d.len();
    for i in (q + 1..n).rev() {
        if d[i] == 0.0 {
            continue;
        }
        let (c, s, h) = givens(d[i - 1], d[i]);
        d[i - 1] = h;
        d[i] = 0.0;
        for k in 0..n {
            let (ja, jb) = (j[(k, i - 1)], j[(k, i)]);
            j[(k, i - 1)] = c * ja + s * jb;
            j[(k, i)] = -s * ja + c * jb;
        }
    }
    for i in 0..=q {
        r[(i, q)] = d[i];
    }
}

fn drop_constraint(
    j: &mut Matrix,
    r: &mut Matrix,
    active: &mut Vec<usize>,
    u: &mut Vec<f64>,
    in_active: &mut [bool],
    k: usize,
) {
    let q = active.len();
    let n = j.nrows();
    in_active[active[k]] = false;
    active.remove(k);
    u.remove(k);
    for col in k..q - 1 {
        for row in 0..q {
            r[(row, col)] = r[(row, col + 1)];
        }
    }
    for row in 0..q {
        r[(row, q - 1)] = 0.0;
    }
    for i in k..q - 1 {
        let (c, s, h) = givens(r[(i, i)], r[(i + 1, i)]);
        r[(i, i)] = h;
        r[(i + 1, i)] = 0.0;
        for col in i + 1..q - 1 {
            let (ra, rb) = (r[(i, col)], r[(i + 1, col)]);
            r[(i, col)] = c * ra + s * rb;
            r[(i + 1, col)] = -s * ra + c * rb;
        }
        for row in 0..n {
            let (ja, jb) = (j[(row, i)], j[(row, i + 1)]);
            j[(row, i)] = c * ja + s * jb;
            j[(row, i + 1)] = -s * ja + c * jb;
        }
    }
}
