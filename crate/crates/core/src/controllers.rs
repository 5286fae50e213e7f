//! Control laws in flat coordinates: CLF program, constrained MPC, the FL-MPC
//! baseline, and the LMI check for a quadratic CLF.

use std::time::Duration;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernel::{eig_sym, Matrix, Vector};
use crate::mi_encoding::{
    encode_horizon, AdmissibleUnion, OutputBounds, BigM, BigMPolicy, HorizonSpec, ModelBuilder, MiqpModel, Var, ZetaEntry,
};
use crate::miqp::{solve_cells, solve_miqp, CellSolution, MiqpResult, MiqpStatus, SolveOptions};
use crate::plants::FlatPlant;
use crate::polytope::HPolytope;

/// `V(z) = zᵀPz` with decay rate `γ` and desired control `v_d = −K z`.
#[derive(Debug, Clone)]
pub struct ClfSpec {
    pub p: Matrix,
    pub gamma: f64,
    pub k: Matrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClfReport {
    /// Largest eigenvalue of `ΨAᵀ + AΨ − 2BBᵀ + γΨ`, `Ψ = P⁻¹`.
    pub lmi_max_eig: f64,
    pub pd_min_eig: f64,
    pub pass: bool,
}

/// Checks `P ≻ 0` and `ΨAᵀ + AΨ − 2BBᵀ ⪯ −γΨ`.
pub fn verify_clf(spec: &ClfSpec, a: &Matrix, b: &Matrix) -> Result<ClfReport> {
    let n = spec.p.nrows();
    if spec.p.shape() != (n, n) || a.shape() != (n, n) || b.nrows() != n {
        return Err(Error::dim("CLF data"));
    }
    let pd_min_eig = min_eig(&spec.p)?;
    let psi = spec.p.clone().try_inverse().ok_or(Error::Singular("CLF matrix P"))?;
    let lmi = &psi * a.transpose() + a * &psi - b * b.transpose() * 2.0 + &psi * spec.gamma;
    let lmi_max_eig = eig_sym(&lmi)?.last().copied().unwrap_or(0.0);
    Ok(ClfReport { lmi_max_eig, pd_min_eig, pass: lmi_max_eig <= 1e-8 && pd_min_eig > 1e-8 })
}

fn min_eig(m: &Matrix) -> Result<f64> {
    Ok(eig_sym(m)?.first().copied().unwrap_or(0.0))
}

impl ClfSpec {
    pub fn value(&self, z: &[f64]) -> f64 {
        let z = Vector::from_row_slice(z);
        z.dot(&(&self.p * &z))
    }

    pub fn desired(&self, z: &[f64]) -> Vector {
        -(&self.k * Vector::from_row_slice(z))
    }
}

/// One solved controller step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub v: Vector,
    /// Union member holding `ζ(0)`.
    pub cell: Option<usize>,
    /// Forecast `z(0..=N)`; a single entry for the CLF law.
    pub z_pred: Vec<Vector>,
    pub v_pred: Vec<Vector>,
    /// Member chosen at each forecast step.
    pub cells: Vec<usize>,
    pub status: MiqpStatus,
    pub nodes: usize,
    pub solve_time: Duration,
}

fn accept(r: &MiqpResult, what: &'static str) -> Result<()> {
    match r.status {
        MiqpStatus::Optimal => Ok(()),
        MiqpStatus::Infeasible => Err(Error::Infeasible),
        MiqpStatus::BudgetExceeded if r.has_solution() => Ok(()),
        MiqpStatus::BudgetExceeded => Err(Error::Budget(what)),
    }
}

/// Single-step model of the CLF program at a measured `z`.
pub fn clf_model(spec: &ClfSpec, u: &AdmissibleUnion, big_m: &BigM, policy: BigMPolicy, a: &Matrix, b: &Matrix, z: &[f64]) -> Result<MiqpModel> {
    let n_z = a.nrows();
    let n_v = b.ncols();
    if z.len() != n_z || u.zeta_dim() != n_z + n_v || spec.k.shape() != (n_v, n_z) {
        return Err(Error::dim("CLF step"));
    }
    let mut mb = ModelBuilder::new();
    let v0 = mb.add_continuous(n_v);
    let zeta: Vec<ZetaEntry> =
        z.iter().map(|&c| ZetaEntry::Const(c)).chain((0..n_v).map(|i| ZetaEntry::Var(v0 + i))).collect();
    mb.encode_step(u, &zeta, big_m, policy)?;
    mb.add_tracking_cost(v0, &Matrix::identity(n_v, n_v), spec.desired(z).as_slice());
    // 2zᵀP(Az + Bv) ≤ −γ zᵀPz
    let zv = Vector::from_row_slice(z);
    let pz = &spec.p * &zv;
    let coef = (b.transpose() * &pz) * 2.0;
    let rhs = -spec.gamma * zv.dot(&pz) - 2.0 * pz.dot(&(a * &zv));
    mb.add_row((0..n_v).filter(|&i| coef[i] != 0.0).map(|i| (Var::Cont(v0 + i), coef[i])).collect(), rhs);
    Ok(mb.build())
}

/// `v = argmin ‖v − v_d(z)‖²` over `(z, v) ∈ Ṽ` with the CLF decrease row.
pub fn clf_step(
    spec: &ClfSpec,
    u: &AdmissibleUnion,
    big_m: &BigM,
    policy: BigMPolicy,
    (a, b): (&Matrix, &Matrix),
    z: &[f64],
    opts: &SolveOptions,
) -> Result<StepOutcome> {
    let m = clf_model(spec, u, big_m, policy, a, b, z)?;
    let r = solve_miqp(&m, opts)?;
    accept(&r, "CLF solver")?;
    let v = Vector::from_row_slice(&r.x.as_slice()[..b.ncols()]);
    let cells = r.cells(&m);
    let cell = if u.len() == 1 { Some(0) } else { cells.first().copied() };
    Ok(StepOutcome {
        v: v.clone(),
        cell,
        z_pred: vec![Vector::from_row_slice(z)],
        v_pred: vec![v],
        cells: cell.into_iter().collect(),
        status: r.status,
        nodes: r.nodes,
        solve_time: r.wall,
    })
}

/// Tunings and prediction model of the MPC laws.
#[derive(Debug, Clone)]
pub struct MpcSpec {
    pub q: Matrix,
    pub r: Matrix,
    pub horizon: usize,
    pub ts: f64,
    pub a_d: Matrix,
    pub b_d: Matrix,
    pub state_set: HPolytope,
    pub input_set: Option<HPolytope>,
    pub terminal_cost: bool,
    pub policy: BigMPolicy,
    pub solve: SolveOptions,
}

impl MpcSpec {
    pub fn validate(&self) -> Result<()> {
        let (n_z, n_v) = (self.a_d.nrows(), self.b_d.ncols());
        if self.horizon == 0 || !(self.ts > 0.0) {
            return Err(Error::Invalid("MPC needs N_p >= 1 and T_s > 0".into()));
        }
        if self.q.shape() != (n_z, n_z) || self.r.shape() != (n_v, n_v) {
            return Err(Error::dim("MPC weights"));
        }
        if min_eig(&self.r)? <= 0.0 {
            return Err(Error::Invalid("R must be positive definite".into()));
        }
        let q_min = min_eig(&self.q)?;
        if q_min < -1e-12 * self.q.amax().max(1.0) {
            return Err(Error::NotPsd(q_min));
        }
        Ok(())
    }
}

/// References over the horizon: `z_ref(0..=N)` and `v_ref(0..N)`.
#[derive(Debug, Clone)]
pub struct HorizonRefs {
    pub z: Vec<Vector>,
    pub v: Vec<Vector>,
}

fn horizon_model(
    spec: &MpcSpec,
    u: &AdmissibleUnion,
    big_m: &BigM,
    z0: &[f64],
    refs: Option<&HorizonRefs>,
    first_only: bool,
) -> Result<MiqpModel> {
    spec.validate()?;
    encode_horizon(
        u,
        &HorizonSpec {
            horizon: spec.horizon,
            a_d: &spec.a_d,
            b_d: &spec.b_d,
            state_set: &spec.state_set,
            input_set: spec.input_set.as_ref(),
            q: &spec.q,
            r: &spec.r,
            terminal_cost: spec.terminal_cost,
            z0,
            z_ref: refs.map(|r| r.z.as_slice()),
            v_ref: refs.map(|r| r.v.as_slice()),
            big_m,
            policy: spec.policy,
            union_first_step_only: first_only,
        },
    )
}

/// Model solved by [`mpc_step`], for inspection and oracles.
pub fn mpc_model(spec: &MpcSpec, u: &AdmissibleUnion, big_m: &BigM, z0: &[f64], refs: Option<&HorizonRefs>) -> Result<MiqpModel> {
    horizon_model(spec, u, big_m, z0, refs, false)
}

fn horizon_outcome(m: &MiqpModel, r: &MiqpResult, u: &AdmissibleUnion) -> StepOutcome {
    let l = m.layout.expect("horizon models carry a layout");
    let x = r.x.as_slice();
    let z_pred: Vec<Vector> = (0..=l.horizon).map(|k| Vector::from_row_slice(&x[l.z(k)..l.z(k) + l.n_z])).collect();
    let v_pred: Vec<Vector> = (0..l.horizon).map(|k| Vector::from_row_slice(&x[l.v(k)..l.v(k) + l.n_v])).collect();
    let cells = if u.len() == 1 { vec![0; l.horizon] } else { r.cells(m) };
    StepOutcome {
        v: v_pred[0].clone(),
        cell: cells.first().copied(),
        z_pred,
        v_pred,
        cells,
        status: r.status,
        nodes: r.nodes,
        solve_time: r.wall,
    }
}

const HOP_ROUNDS: usize = 40;

fn step_zeta(m: &MiqpModel, x: &[f64], k: usize) -> Vec<f64> {
    let l = m.layout.expect("horizon models carry a layout");
    x[l.z(k)..l.z(k) + l.n_z].iter().chain(&x[l.v(k)..l.v(k) + l.n_v]).copied().collect()
}

/// Primal heuristic over cell sequences.
///
/// Starts from `warm` or, failing that, from constant sequences of the members
/// near `z0`, then repeatedly moves every forecast pair lying on a face of its
/// cell into a neighbouring member. The current trajectory stays feasible under
/// each move, so the cost never increases.
fn cell_search(
    m: &MiqpModel,
    u: &AdmissibleUnion,
    z0: &[f64],
    refs: Option<&HorizonRefs>,
    warm: Option<Vec<usize>>,
) -> Result<Option<CellSolution>> {
    let n = m.groups.len();
    let mut starts: Vec<Vec<usize>> = warm.into_iter().filter(|w| w.len() == n).collect();
    let v_guess = refs.map_or_else(|| vec![0.0; u.zeta_dim() - z0.len()], |r| r.v[0].iter().copied().collect());
    let zeta0: Vec<f64> = z0.iter().copied().chain(v_guess).collect();
    let near = u.members_containing(&zeta0, 1e-9);
    let order: Vec<usize> = near.iter().copied().chain((0..u.len()).filter(|j| !near.contains(j))).collect();
    starts.extend(order.into_iter().map(|j| vec![j; n]));

    let mut found = None;
    for s in starts {
        if let Some(sol) = solve_cells(m, &s)? {
            found = Some((s, sol));
            break;
        }
    }
    let Some((mut cells, mut sol)) = found else { return Ok(None) };
    for _ in 0..HOP_ROUNDS {
        let mut next = cells.clone();
        for (k, c) in next.iter_mut().enumerate() {
            let inside = u.members_containing(&step_zeta(m, sol.x.as_slice(), k), 1e-7);
            if inside.len() > 1 {
                let at = inside.iter().position(|j| j == c).unwrap_or(0);
                *c = inside[(at + 1) % inside.len()];
            }
        }
        if next == cells {
            break;
        }
        match solve_cells(m, &next)? {
            Some(s) if s.objective < sol.objective - 1e-9 * (1.0 + sol.objective.abs()) => {
                cells = next;
                sol = s;
            }
            _ => break,
        }
    }
    Ok(Some(sol))
}

/// Constrained MPC: every forecast pair lies in `Ṽ`.
///
/// `warm_cells` seeds the search with a cell sequence, typically the
/// previous solution shifted by one step.
pub fn mpc_step(
    spec: &MpcSpec,
    u: &AdmissibleUnion,
    big_m: &BigM,
    z0: &[f64],
    refs: Option<&HorizonRefs>,
    warm_cells: Option<Vec<usize>>,
) -> Result<StepOutcome> {
    let m = horizon_model(spec, u, big_m, z0, refs, false)?;
    let opts = if u.len() > 1 {
        let incumbent = cell_search(&m, u, z0, refs, warm_cells)?.map(|s| s.x);
        SolveOptions { incumbent, ..spec.solve.clone() }
    } else {
        spec.solve.clone()
    };
    let r = solve_miqp(&m, &opts)?;
    accept(&r, "MPC solver")?;
    Ok(horizon_outcome(&m, &r, u))
}

/// FL-MPC baseline: `Ṽ` on the first input only; state rows on every step.
pub fn flmpc_step(
    spec: &MpcSpec,
    u: &AdmissibleUnion,
    big_m: &BigM,
    z0: &[f64],
    refs: Option<&HorizonRefs>,
) -> Result<StepOutcome> {
    let m = horizon_model(spec, u, big_m, z0, refs, true)?;
    let r = solve_miqp(&m, &spec.solve)?;
    accept(&r, "FL-MPC solver")?;
    let mut out = horizon_outcome(&m, &r, u);
    out.cells.truncate(1);
    Ok(out)
}

/// Shift a cell sequence by one step, repeating the last cell.
pub fn shift_cells(cells: &[usize]) -> Option<Vec<usize>> {
    let last = *cells.last()?;
    Some(cells[1..].iter().copied().chain(std::iter::once(last)).collect())
}

/// True input-bound excess of each forecast pair, clamped at zero.
///
/// The leading entries of `Φ` are the channels the network models; those are
/// held to the design `bounds`, and every channel to the plant's own limits.
pub fn forecast_input_excess(plant: &dyn FlatPlant, out: &StepOutcome, bounds: &OutputBounds) -> Result<Vec<f64>> {
    out.v_pred
        .iter()
        .enumerate()
        .map(|(k, v)| {
            let u = plant.phi(out.z_pred[k].as_slice(), v.as_slice())?;
            let design = (0..bounds.len())
                .map(|j| (u[j] - bounds.upper[j]).max(bounds.lower[j] - u[j]))
                .fold(f64::NEG_INFINITY, f64::max);
            Ok(plant.input_excess(u.as_slice()).max(design).max(0.0))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrator_lmi_passes_for_small_gamma() {
        let spec = ClfSpec { p: Matrix::identity(2, 2), gamma: 0.1, k: Matrix::zeros(2, 2) };
        let r = verify_clf(&spec, &Matrix::zeros(2, 2), &Matrix::identity(2, 2)).unwrap();
        assert!(r.pass);
        assert!((r.lmi_max_eig + 1.9).abs() < 1e-12);
    }

    #[test]
    fn indefinite_p_fails() {
        let spec = ClfSpec { p: Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -0.5]), gamma: 0.1, k: Matrix::zeros(1, 2) };
        let a = Matrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let b = Matrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let r = verify_clf(&spec, &a, &b).unwrap();
        assert!(!r.pass && r.pd_min_eig < 0.0);
        let singular = ClfSpec { p: Matrix::zeros(2, 2), ..spec };
        assert!(matches!(verify_clf(&singular, &a, &b), Err(Error::Singular(_))));
    }

    #[test]
    fn aircraft_clf_passes() {
        let spec = ClfSpec {
            p: Matrix::from_row_slice(2, 2, &[0.1430, 0.1932, 0.1932, 0.6378]),
            gamma: 0.05,
            k: Matrix::from_row_slice(1, 2, &[3.16, 2.55]),
        };
        let a = Matrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let b = Matrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let r = verify_clf(&spec, &a, &b).unwrap();
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn shifting_repeats_the_tail() {
        assert_eq!(shift_cells(&[2, 0, 1]), Some(vec![0, 1, 1]));
        assert_eq!(shift_cells(&[]), None);
    }
}
