use super::{Matrix, Vector};
use crate::error::{Error, Result};

pub fn check_finite(m: &Matrix, what: &'static str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

pub(crate) fn check_finite_vec(v: &Vector, what: &'static str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

/// Errors when `m` is non-square or differs from its transpose by more than `tol`.
pub fn check_symmetric(m: &Matrix, tol: f64) -> Result<()> {
    if !m.is_square() {
        return Err(Error::dim(format!("{}x{} matrix is not square", m.nrows(), m.ncols())));
    }
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in i + 1..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    if worst > tol {
        Err(Error::NotSymmetric(worst))
    } else {
        Ok(())
    }
}

/// Eigenvalues of a symmetric matrix in ascending order.
pub fn eig_sym(m: &Matrix) -> Result<Vec<f64>> {
    check_finite(m, "eig_sym input")?;
    check_symmetric(m, 1e-10)?;
    if m.nrows() == 0 {
        return Ok(Vec::new());
    }
    let mut ev: Vec<f64> = m.clone().symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    Ok(ev)
}

/// Largest singular value.
pub fn spectral_norm(m: &Matrix) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    if m.nrows() == 1 {
        return m.row(0).norm();
    }
    m.clone().singular_values().max()
}

/// Symmetrized copy; used where round-off breaks exact symmetry.
pub(crate) fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_spectrum() {
        assert_eq!(eig_sym(&Matrix::identity(2, 2)).unwrap(), vec![1.0, 1.0]);
    }

    #[test]
    fn swap_spectrum() {
        let ev = eig_sym(&Matrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])).unwrap();
        assert!((ev[0] + 1.0).abs() < 1e-12 && (ev[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn asymmetric_rejected() {
        let m = Matrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        assert!(matches!(eig_sym(&m), Err(Error::NotSymmetric(_))));
    }

    #[test]
    fn nan_rejected() {
        let m = Matrix::from_row_slice(1, 1, &[f64::NAN]);
        assert!(matches!(eig_sym(&m), Err(Error::NonFinite(_))));
    }

    #[test]
    fn row_vector_norm() {
        let m = Matrix::from_row_slice(1, 2, &[3.0, 4.0]);
        assert!((spectral_norm(&m) - 5.0).abs() < 1e-12);
    }
}
