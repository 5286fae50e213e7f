//! Dense linear algebra and the small LP/QP solvers everything else sits on.

mod elim;
mod linalg;
mod lp;
mod qp;
mod tol;

pub use elim::{eliminate_equalities, Elimination};
pub use linalg::{check_finite, check_symmetric, eig_sym, spectral_norm};
pub use lp::{solve_lp, LpDuals, LpProblem, LpResult, LpStatus};
pub use qp::{solve_qp, solve_qp_tol, solve_qp_warm, KktResiduals, QpProblem, QpResult, QpStatus};
pub use tol::Tolerances;

pub type Matrix = nalgebra::DMatrix<f64>;
pub type Vector = nalgebra::DVector<f64>;
