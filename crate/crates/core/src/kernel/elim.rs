use super::{Matrix, Vector};

/// Parametrization of `{x : E x = d}` as `x = x0 + N y`.
///
/// Columns listed in `free` keep their identity: `x[free[k]] = y[k]`.
#[derive(Debug, Clone)]
pub struct Elimination {
    pub x0: Vector,
    pub basis: Matrix,
    pub free: Vec<usize>,
    pub dependent: Vec<usize>,
    /// Rows found linearly dependent on the others and consistent.
    pub redundant_rows: Vec<usize>,
}

impl Elimination {
    pub fn lift(&self, y: &Vector) -> Vector {
        &self.x0 + &self.basis * y
    }
}

/// Gauss-Jordan elimination with complete pivoting.
///
/// `prefer` marks columns that should become dependent when a choice exists.
/// Returns `None` when the system is inconsistent.
pub fn eliminate_equalities(
    e: &Matrix,
    d: &Vector,
    prefer: Option<&[bool]>,
) -> Option<Elimination> {
    let (p, n) = e.shape();
    let mut m = e.clone();
    let mut rhs = d.clone();
    let scale = e.amax().max(1.0);
    let piv_tol = 1e-11 * scale;
    let mut row_done = vec![false; p];
    let mut col_used = vec![false; n];
    let mut pivots: Vec<(usize, usize)> = Vec::new();

    loop {
        let mut best: Option<(usize, usize, f64, bool)> = None;
        for r in (0..p).filter(|&r| !row_done[r]) {
            for c in (0..n).filter(|&c| !col_used[c]) {
                let a = m[(r, c)].abs();
                if a <= piv_tol {
                    continue;
                }
                let pref = prefer.is_some_and(|pr| pr[c]);
                let better = match best {
                    None => true,
                    Some((_, _, ba, bp)) => (pref && !bp) || (pref == bp && a > ba * 1.5),
                };
                if better {
                    best = Some((r, c, a, pref));
                }
            }
        }
        let Some((r, c, _, _)) = best else { break };
        let pv = m[(r, c)];
        for j in 0..n {
            m[(r, j)] /= pv;
        }
        rhs[r] /= pv;
        for rr in 0..p {
            if rr == r {
                continue;
            }
            let f = m[(rr, c)];
            if f != 0.0 {
                for j in 0..n {
                    let v = m[(r, j)];
                    if v != 0.0 {
                        m[(rr, j)] -= f * v;
                    }
                }
                rhs[rr] -= f * rhs[r];
                m[(rr, c)] = 0.0;
            }
        }
        row_done[r] = true;
        col_used[c] = true;
        pivots.push((r, c));
    }

    let mut redundant = Vec::new();
    let rhs_tol = 1e-9 * d.amax().max(1.0);
    for r in (0..p).filter(|&r| !row_done[r]) {
        if rhs[r].abs() > rhs_tol {
            return None;
        }
        redundant.push(r);
    }

    let free: Vec<usize> = (0..n).filter(|&c| !col_used[c]).collect();
    let mut x0 = Vector::zeros(n);
    let mut basis = Matrix::zeros(n, free.len());
    for (k, &c) in free.iter().enumerate() {
        basis[(c, k)] = 1.0;
    }
    for &(r, c) in &pivots {
        x0[c] = rhs[r];
        for (k, &fc) in free.iter().enumerate() {
            basis[(c, k)] = -m[(r, fc)];
        }
    }
    let mut dependent: Vec<usize> = pivots.iter().map(|&(_, c)| c).collect();
    dependent.sort_unstable();
    Some(Elimination { x0, basis, free, dependent, redundant_rows: redundant })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_equation() {
        let e = Matrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let el = eliminate_equalities(&e, &Vector::from_vec(vec![2.0]), None).unwrap();
        assert_eq!(el.free.len(), 1);
        let x = el.lift(&Vector::from_vec(vec![0.5]));
        assert!((x[0] + x[1] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn redundant_and_inconsistent() {
        let e = Matrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]);
        let el = eliminate_equalities(&e, &Vector::from_vec(vec![1.0, 2.0]), None).unwrap();
        assert_eq!(el.redundant_rows.len(), 1);
        assert!(eliminate_equalities(&e, &Vector::from_vec(vec![1.0, 3.0]), None).is_none());
    }

    #[test]
    fn preferred_columns_become_dependent() {
        let e = Matrix::from_row_slice(1, 3, &[5.0, 1.0, 0.0]);
        let el =
            eliminate_equalities(&e, &Vector::from_vec(vec![1.0]), Some(&[false, true, false]))
                .unwrap();
        assert_eq!(el.dependent, vec![1]);
    }
}
