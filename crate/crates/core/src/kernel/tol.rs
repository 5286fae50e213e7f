/// Numerical tolerances shared by the solvers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// Absolute residual allowed on each constraint row.
    pub feas: f64,
    pub kkt: f64,
    pub symmetry: f64,
    /// Relative slack on the smallest eigenvalue in PSD checks.
    pub psd: f64,
    pub dedup: f64,
    pub hessian_reg: f64,
    /// Relative smallest eigenvalue above which a Hessian counts as definite.
    pub pd_threshold: f64,
    pub integrality: f64,
    pub gap: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            feas: 1e-8,
            kkt: 1e-7,
            symmetry: 1e-10,
            psd: 1e-8,
            dedup: 1e-7,
            hessian_reg: 1e-10,
            pd_threshold: 1e-8,
            integrality: 1e-6,
            gap: 1e-6,
        }
    }
}
