//! Branch-and-bound for [`MiqpModel`] plus the exhaustive cell-sequence oracle.
//!
//! Binaries carry no cost, so relaxations are only semidefinite in them. Free
//! binaries get a tiny curvature `δ` and each node bound is corrected by
//! `δ/2` per free binary, which keeps the bounds valid.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernel::{solve_qp_tol, Matrix, QpProblem, QpStatus, Tolerances, Vector};
use crate::mi_encoding::MiqpModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MiqpStatus {
    Optimal,
    Infeasible,
    /// Node or time budget ran out; the result carries the incumbent, if any.
    BudgetExceeded,
}

#[derive(Debug, Clone)]
pub struct MiqpResult {
    pub status: MiqpStatus,
    /// Continuous columns followed by binaries; empty without a solution.
    pub x: Vector,
    pub objective: f64,
    /// Best proven lower bound.
    pub bound: f64,
    pub nodes: usize,
    pub qps: usize,
    /// Largest drop of a child bound below its parent's, for diagnostics.
    pub max_bound_drop: f64,
    pub wall: Duration,
}

impl MiqpResult {
    pub fn has_solution(&self) -> bool {
        !self.x.is_empty()
    }

    pub fn binaries<'a>(&'a self, m: &MiqpModel) -> &'a [f64] {
        if self.has_solution() { &self.x.as_slice()[m.n_cont..] } else { &[] }
    }

    pub fn continuous<'a>(&'a self, m: &MiqpModel) -> &'a [f64] {
        if self.has_solution() { &self.x.as_slice()[..m.n_cont] } else { &[] }
    }

    /// Index of the zero selector in each cardinality group.
    pub fn cells(&self, m: &MiqpModel) -> Vec<usize> {
        if !self.has_solution() {
            return Vec::new();
        }
        m.groups
            .iter()
            .map(|g| g.iter().position(|&c| self.x[c] < 0.5).unwrap_or(0))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub max_nodes: usize,
    pub time_limit: Option<Duration>,
    /// Absolute objective gap for pruning and termination.
    pub gap: f64,
    /// Cell choice per group tried before the search.
    pub warm_cells: Option<Vec<usize>>,
    /// Known feasible point; ignored unless it is integral and within tolerance.
    pub incumbent: Option<Vector>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { max_nodes: 100_000, time_limit: None, gap: 1e-6, warm_cells: None, incumbent: None }
    }
}

/// Binary state inside a node: free, or fixed to 0/1.
type Fixing = Vec<Option<bool>>;

struct NodeQp {
    qp: QpProblem,
    free: Vec<usize>,
    /// Stable id of each QP inequality row, for warm starts across nodes.
    ids: Vec<usize>,
}

fn check_model(m: &MiqpModel) -> Result<()> {
    let n = m.n();
    if m.h.shape() != (n, n) || m.g.len() != n || m.a_ineq.ncols() != n || m.a_eq.ncols() != n {
        return Err(Error::dim("MIQP model"));
    }
    if m.a_ineq.nrows() != m.b_ineq.len() || m.big_m_col.len() != m.b_ineq.len() || m.a_eq.nrows() != m.b_eq.len() {
        return Err(Error::dim("MIQP rows"));
    }
    for i in 0..n {
        for j in m.n_cont..n {
            if m.h[(i, j)] != 0.0 || m.h[(j, i)] != 0.0 {
                return Err(Error::Invalid("binary columns must not enter the quadratic cost".into()));
            }
        }
    }
    if m.g.iter().skip(m.n_cont).any(|&v| v != 0.0) {
        return Err(Error::Invalid("binary columns must not enter the linear cost".into()));
    }
    let mut seen = vec![false; m.n_bin];
    for g in &m.groups {
        for &c in g {
            if c < m.n_cont || c >= n || std::mem::replace(&mut seen[c - m.n_cont], true) {
                return Err(Error::Invalid("cardinality groups must partition the binaries".into()));
            }
        }
    }
    if seen.iter().any(|s| !s) {
        return Err(Error::Invalid("binary outside every cardinality group".into()));
    }
    Ok(())
}

/// Relaxation of a node; `None` when a row with no free columns already fails.
fn node_qp(m: &MiqpModel, fixed: &Fixing, delta: f64, tol: f64) -> Option<NodeQp> {
    let nc = m.n_cont;
    let free: Vec<usize> = (0..m.n_bin).filter(|&b| fixed[b].is_none()).collect();
    let mut col = vec![usize::MAX; m.n()];
    for (i, c) in col.iter_mut().enumerate().take(nc) {
        *c = i;
    }
    for (k, &b) in free.iter().enumerate() {
        col[nc + b] = nc + k;
    }
    let n = nc + free.len();
    let fixed_val = |c: usize| -> f64 { fixed[c - nc].map_or(0.0, |v| if v { 1.0 } else { 0.0 }) };

    let mut rows: Vec<(Vec<(usize, f64)>, f64, usize)> = Vec::new();
    for i in 0..m.a_ineq.nrows() {
        if let Some(b) = m.big_m_col[i] {
            if fixed[b - nc] == Some(true) {
                continue;
            }
        }
        let mut rhs = m.b_ineq[i];
        let mut coefs = Vec::new();
        for j in 0..m.n() {
            let a = m.a_ineq[(i, j)];
            if a == 0.0 {
                continue;
            }
            if col[j] == usize::MAX {
                rhs -= a * fixed_val(j);
            } else {
                coefs.push((col[j], a));
            }
        }
        if coefs.is_empty() {
            if rhs < -tol * (1.0 + m.b_ineq[i].abs()) {
                return None;
            }
            continue;
        }
        rows.push((coefs, rhs, i));
    }
    let base = m.a_ineq.nrows();
    for j in 0..nc {
        if m.upper[j].is_finite() {
            rows.push((vec![(j, 1.0)], m.upper[j], base + 2 * j));
        }
        if m.lower[j].is_finite() {
            rows.push((vec![(j, -1.0)], -m.lower[j], base + 2 * j + 1));
        }
    }
    for (k, &b) in free.iter().enumerate() {
        let j = nc + b;
        rows.push((vec![(nc + k, 1.0)], 1.0, base + 2 * j));
        rows.push((vec![(nc + k, -1.0)], 0.0, base + 2 * j + 1));
    }

    let mut eqs: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();
    for i in 0..m.a_eq.nrows() {
        let mut rhs = m.b_eq[i];
        let mut coefs = Vec::new();
        for j in 0..m.n() {
            let a = m.a_eq[(i, j)];
            if a == 0.0 {
                continue;
            }
            if col[j] == usize::MAX {
                rhs -= a * fixed_val(j);
            } else {
                coefs.push((col[j], a));
            }
        }
        if coefs.is_empty() {
            if rhs.abs() > tol * (1.0 + m.b_eq[i].abs()) {
                return None;
            }
            continue;
        }
        eqs.push((coefs, rhs));
    }

    let mut h = Matrix::zeros(n, n);
    h.view_mut((0, 0), (nc, nc)).copy_from(&m.h.view((0, 0), (nc, nc)));
    for k in 0..free.len() {
        h[(nc + k, nc + k)] = delta;
    }
    let g = Vector::from_fn(n, |i, _| if i < nc { m.g[i] } else { 0.0 });
    let mut a = Matrix::zeros(rows.len(), n);
    let mut b = Vector::zeros(rows.len());
    let mut ids = Vec::with_capacity(rows.len());
    for (r, (coefs, rhs, id)) in rows.into_iter().enumerate() {
        for (j, v) in coefs {
            a[(r, j)] += v;
        }
        b[r] = rhs;
        ids.push(id);
    }
    let mut e = Matrix::zeros(eqs.len(), n);
    let mut d = Vector::zeros(eqs.len());
    for (r, (coefs, rhs)) in eqs.into_iter().enumerate() {
        for (j, v) in coefs {
            e[(r, j)] += v;
        }
        d[r] = rhs;
    }
    Some(NodeQp { qp: QpProblem::new(h, g).with_inequalities(a, b).with_equalities(e, d), free, ids })
}

/// Result of one node relaxation.
struct Relaxed {
    x: Vector,
    /// Valid lower bound on the node.
    bound: f64,
    active_ids: Vec<usize>,
}

struct Engine<'a> {
    m: &'a MiqpModel,
    delta: f64,
    tol: Tolerances,
    qps: usize,
}

impl<'a> Engine<'a> {
    fn new(m: &'a MiqpModel) -> Self {
        let scale = m.h.amax().max(1.0);
        let tol = Tolerances { pd_threshold: 1e-12, ..Default::default() };
        Engine { m, delta: 1e-9 * scale, tol, qps: 0 }
    }

    fn relax(&mut self, fixed: &Fixing, warm_ids: &[usize]) -> Result<Option<Relaxed>> {
        let m = self.m;
        let Some(nq) = node_qp(m, fixed, self.delta, self.tol.feas) else { return Ok(None) };
        let pos: std::collections::HashMap<usize, usize> = nq.ids.iter().enumerate().map(|(r, &id)| (id, r)).collect();
        let warm: Vec<usize> = warm_ids.iter().filter_map(|id| pos.get(id).copied()).collect();
        self.qps += 1;
        let r = solve_qp_tol(&nq.qp, &warm, self.tol)?;
        match r.status {
            QpStatus::Optimal => {}
            QpStatus::Infeasible => return Ok(None),
            QpStatus::Unbounded => return Err(Error::Invalid("MIQP relaxation is unbounded".into())),
        }
        let nc = m.n_cont;
        let mut x = Vector::zeros(m.n());
        x.rows_mut(0, nc).copy_from(&r.x.rows(0, nc));
        for b in 0..m.n_bin {
            x[nc + b] = fixed[b].map_or(0.0, |v| if v { 1.0 } else { 0.0 });
        }
        for (k, &b) in nq.free.iter().enumerate() {
            x[nc + b] = r.x[nc + k].clamp(0.0, 1.0);
        }
        let reg: f64 = nq.free.iter().map(|&b| x[nc + b] * x[nc + b]).sum::<f64>() * self.delta / 2.0;
        let bound = m.objective(x.as_slice()) + reg - self.delta / 2.0 * nq.free.len() as f64;
        Ok(Some(Relaxed { x, bound, active_ids: r.active.iter().map(|&i| nq.ids[i]).collect() }))
    }
}

fn is_feasible_point(m: &MiqpModel, x: &Vector, tol: Tolerances) -> bool {
    x.len() == m.n()
        && x.iter().all(|v| v.is_finite())
        && (m.n_cont..m.n()).all(|j| x[j].min(1.0 - x[j]).abs() <= tol.integrality)
        && m.max_violation(x.as_slice()) <= 1e2 * tol.feas
}

/// Optimal continuous completion of a fixed cell choice.
#[derive(Debug, Clone)]
pub struct CellSolution {
    pub objective: f64,
    pub x: Vector,
}

/// Solves the QP left after fixing every group to `cells`; `None` when infeasible.
pub fn solve_cells(m: &MiqpModel, cells: &[usize]) -> Result<Option<CellSolution>> {
    check_model(m)?;
    let f = fixing_for_cells(m, cells).ok_or_else(|| Error::dim("one cell per group"))?;
    let mut eng = Engine::new(m);
    Ok(eng.relax(&f, &[])?.map(|r| CellSolution { objective: m.objective(r.x.as_slice()), x: r.x }))
}

/// One zero per group: the group's chosen cell.
fn fixing_for_cells(m: &MiqpModel, cells: &[usize]) -> Option<Fixing> {
    if cells.len() != m.groups.len() {
        return None;
    }
    let mut f = vec![None; m.n_bin];
    for (g, &c) in m.groups.iter().zip(cells) {
        if c >= g.len() {
            return None;
        }
        for (k, &col) in g.iter().enumerate() {
            f[col - m.n_cont] = Some(k != c);
        }
    }
    Some(f)
}

/// Apply cardinality logic; `false` when some group cannot hold exactly one zero.
fn propagate(m: &MiqpModel, f: &mut Fixing) -> bool {
    for g in &m.groups {
        let idx: Vec<usize> = g.iter().map(|&c| c - m.n_cont).collect();
        let zeros = idx.iter().filter(|&&b| f[b] == Some(false)).count();
        let free: Vec<usize> = idx.iter().copied().filter(|&b| f[b].is_none()).collect();
        match (zeros, free.len()) {
            (z, _) if z > 1 => return false,
            (1, _) => free.iter().for_each(|&b| f[b] = Some(true)),
            (0, 0) => return false,
            (0, 1) => f[free[0]] = Some(false),
            _ => {}
        }
    }
    true
}

struct Node {
    bound: f64,
    depth: usize,
    seq: usize,
    fixed: Fixing,
    warm: Vec<usize>,
}

impl PartialEq for Node {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Node {
    // max-heap: smallest bound first, then deeper, then older
    fn cmp(&self, o: &Self) -> Ordering {
        o.bound
            .total_cmp(&self.bound)
            .then(self.depth.cmp(&o.depth))
            .then(o.seq.cmp(&self.seq))
    }
}

/// Best-first branch-and-bound on the binaries.
///
/// Branches on the most fractional selector (ties to the lowest column, i.e.
/// the earliest step) and propagates each group's cardinality row.
pub fn solve_miqp(m: &MiqpModel, opts: &SolveOptions) -> Result<MiqpResult> {
    check_model(m)?;
    let start = Instant::now();
    let mut eng = Engine::new(m);
    let int_tol = eng.tol.integrality;
    let mut best: Option<(f64, Vector)> = None;
    let mut nodes = 0usize;
    let mut max_drop = 0.0f64;

    let try_leaf = |eng: &mut Engine, fixed: &Fixing, warm: &[usize], best: &mut Option<(f64, Vector)>| -> Result<()> {
        if let Some(r) = eng.relax(fixed, warm)? {
            let obj = m.objective(r.x.as_slice());
            if best.as_ref().is_none_or(|(b, _)| obj < *b) {
                *best = Some((obj, r.x));
            }
        }
        Ok(())
    };

    if let Some(x) = &opts.incumbent {
        if is_feasible_point(m, x, eng.tol) {
            best = Some((m.objective(x.as_slice()), x.clone()));
        }
    }
    if let Some(cells) = &opts.warm_cells {
        if let Some(f) = fixing_for_cells(m, cells) {
            try_leaf(&mut eng, &f, &[], &mut best)?;
        }
    }

    let mut root = vec![None; m.n_bin];
    let mut heap = BinaryHeap::new();
    let mut seq = 0usize;
    if propagate(m, &mut root) {
        heap.push(Node { bound: f64::NEG_INFINITY, depth: 0, seq, fixed: root, warm: Vec::new() });
    }
    let out_of_budget = |nodes: usize| {
        nodes >= opts.max_nodes || opts.time_limit.is_some_and(|t| start.elapsed() >= t)
    };
    let mut exhausted = false;
    while let Some(node) = heap.pop() {
        let inc = best.as_ref().map_or(f64::INFINITY, |b| b.0);
        if node.bound >= inc - opts.gap {
            heap.clear();
            break;
        }
        if out_of_budget(nodes) {
            heap.push(node);
            exhausted = true;
            break;
        }
        nodes += 1;
        let Some(r) = eng.relax(&node.fixed, &node.warm)? else { continue };
        if node.bound.is_finite() {
            max_drop = max_drop.max(node.bound - r.bound);
        }
        let bound = r.bound.max(node.bound);
        if bound >= inc - opts.gap {
            continue;
        }
        let frac = |b: usize| {
            let v = r.x[m.n_cont + b];
            v.min(1.0 - v)
        };
        let free: Vec<usize> = (0..m.n_bin).filter(|&b| node.fixed[b].is_none()).collect();
        if free.is_empty() {
            let obj = m.objective(r.x.as_slice());
            if obj < inc {
                best = Some((obj, r.x));
            }
            continue;
        }
        // rounding: the smallest selector of each group becomes the active cell
        let cells: Vec<usize> = m
            .groups
            .iter()
            .map(|g| {
                (0..g.len())
                    .min_by(|&a, &b| r.x[g[a]].total_cmp(&r.x[g[b]]).then(a.cmp(&b)))
                    .unwrap_or(0)
            })
            .collect();
        let integral = free.iter().all(|&b| frac(b) <= int_tol);
        if integral || nodes == 1 || nodes.is_multiple_of(8) {
            if let Some(f) = fixing_for_cells(m, &cells) {
                if f.iter().zip(&node.fixed).all(|(a, b)| b.is_none() || a == b) {
                    try_leaf(&mut eng, &f, &r.active_ids, &mut best)?;
                }
            }
        }
        let inc = best.as_ref().map_or(f64::INFINITY, |b| b.0);
        if bound >= inc - opts.gap {
            continue;
        }
        let pick = free
            .iter()
            .copied()
            .max_by(|&a, &b| frac(a).total_cmp(&frac(b)).then(b.cmp(&a)))
            .expect("free binaries remain");
        let pick = if frac(pick) <= int_tol {
            // integral but not fathomed: branch on the first free selector that is 0
            free.iter().copied().find(|&b| r.x[m.n_cont + b] < 0.5).unwrap_or(pick)
        } else {
            pick
        };
        for val in [false, true] {
            let mut f = node.fixed.clone();
            f[pick] = Some(val);
            if !propagate(m, &mut f) {
                continue;
            }
            seq += 1;
            heap.push(Node { bound, depth: node.depth + 1, seq, fixed: f, warm: r.active_ids.clone() });
        }
    }
    let wall = start.elapsed();
    let open_bound = heap.iter().map(|n| n.bound).fold(f64::INFINITY, f64::min);
    Ok(match best {
        Some((obj, x)) => MiqpResult {
            status: if exhausted { MiqpStatus::BudgetExceeded } else { MiqpStatus::Optimal },
            x,
            objective: obj,
            bound: if exhausted { open_bound.min(obj) } else { obj },
            nodes,
            qps: eng.qps,
            max_bound_drop: max_drop,
            wall,
        },
        None => MiqpResult {
            status: if exhausted { MiqpStatus::BudgetExceeded } else { MiqpStatus::Infeasible },
            x: Vector::zeros(0),
            objective: f64::INFINITY,
            bound: if exhausted { open_bound } else { f64::INFINITY },
            nodes,
            qps: eng.qps,
            max_bound_drop: max_drop,
            wall,
        },
    })
}

/// Refuse enumerations larger than this many cell sequences.
pub const ENUMERATION_GUARD: u128 = 1_000_000;

/// Exact optimum by solving one QP per cell sequence.
pub fn solve_by_cell_enumeration(m: &MiqpModel) -> Result<MiqpResult> {
    check_model(m)?;
    let start = Instant::now();
    let sizes: Vec<usize> = m.groups.iter().map(Vec::len).collect();
    let total = sizes.iter().try_fold(1u128, |acc, &s| acc.checked_mul(s as u128)).unwrap_or(u128::MAX);
    if total > ENUMERATION_GUARD {
        return Err(Error::TooLarge { what: "cell sequences", limit: ENUMERATION_GUARD as usize });
    }
    let decode = |mut k: u128| -> Vec<usize> {
        sizes
            .iter()
            .map(|&s| {
                let c = (k % s as u128) as usize;
                k /= s as u128;
                c
            })
            .collect()
    };
    let found: Vec<Option<(f64, u128, Vector)>> = (0..total)
        .into_par_iter()
        .map(|k| {
            let f = fixing_for_cells(m, &decode(k)).expect("sizes come from the groups");
            let mut eng = Engine::new(m);
            Ok(eng.relax(&f, &[])?.map(|r| (m.objective(r.x.as_slice()), k, r.x)))
        })
        .collect::<Result<_>>()?;
    let best = found
        .into_iter()
        .flatten()
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let wall = start.elapsed();
    let qps = total as usize;
    Ok(match best {
        Some((obj, _, x)) => MiqpResult {
            status: MiqpStatus::Optimal,
            x,
            objective: obj,
            bound: obj,
            nodes: qps,
            qps,
            max_bound_drop: 0.0,
            wall,
        },
        None => MiqpResult {
            status: MiqpStatus::Infeasible,
            x: Vector::zeros(0),
            objective: f64::INFINITY,
            bound: f64::INFINITY,
            nodes: qps,
            qps,
            max_bound_drop: 0.0,
            wall,
        },
    })
}
