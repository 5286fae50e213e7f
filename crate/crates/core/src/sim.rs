//! Closed-loop simulation: sampled controller, zero-order hold on `v`, RK4 plant.

use std::io::Write;
use std::time::Instant;

use serde::Serialize;

use crate::controllers::{
    clf_step, flmpc_step, forecast_input_excess, mpc_step, shift_cells, ClfSpec, HorizonRefs, MpcSpec, StepOutcome,
};
use crate::error::{Error, Result};
use crate::kernel::{Matrix, Vector};
use crate::mi_encoding::{AdmissibleUnion, BigM, BigMPolicy};
use crate::miqp::{MiqpStatus, SolveOptions};
use crate::plants::{rk4_step, FlatPlant};

/// Sampled reference `(z_ref, v_ref)` on the controller grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    pub t: Vec<f64>,
    pub z: Vec<Vector>,
    pub v: Vec<Vector>,
}

impl Reference {
    pub fn constant(z: Vector, v: Vector) -> Self {
        Reference { t: vec![0.0], z: vec![z], v: vec![v] }
    }

    /// Parses `t, z1.., v1..` with a header row; times must increase strictly.
    pub fn from_csv_str(text: &str, n_z: usize, n_v: usize) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let header = rdr.headers()?.clone();
        let expected: Vec<String> = std::iter::once("t".to_string())
            .chain((1..=n_z).map(|i| format!("z{i}")))
            .chain((1..=n_v).map(|i| format!("v{i}")))
            .collect();
        if header.iter().collect::<Vec<_>>() != expected.iter().map(String::as_str).collect::<Vec<_>>() {
            return Err(Error::Parse(format!("reference header must be {}", expected.join(","))));
        }
        let mut r = Reference { t: Vec::new(), z: Vec::new(), v: Vec::new() };
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let vals: Vec<f64> = rec
                .iter()
                .map(|s| s.parse::<f64>().map_err(|e| Error::Parse(format!("row {}: {e}", line + 2))))
                .collect::<Result<_>>()?;
            if vals.len() != 1 + n_z + n_v || vals.iter().any(|v| !v.is_finite()) {
                return Err(Error::Parse(format!("row {}: expected {} finite values", line + 2, 1 + n_z + n_v)));
            }
            if r.t.last().is_some_and(|&t| vals[0] <= t) {
                return Err(Error::Parse(format!("row {}: time must increase", line + 2)));
            }
            r.t.push(vals[0]);
            r.z.push(Vector::from_row_slice(&vals[1..1 + n_z]));
            r.v.push(Vector::from_row_slice(&vals[1 + n_z..]));
        }
        if r.t.is_empty() {
            return Err(Error::Parse("reference has no rows".into()));
        }
        Ok(r)
    }

    pub fn to_csv_string(&self) -> String {
        let (n_z, n_v) = (self.z[0].len(), self.v[0].len());
        let mut s = String::from("t");
        (1..=n_z).for_each(|i| s.push_str(&format!(",z{i}")));
        (1..=n_v).for_each(|i| s.push_str(&format!(",v{i}")));
        s.push('\n');
        for k in 0..self.t.len() {
            s.push_str(&self.t[k].to_string());
            self.z[k].iter().chain(self.v[k].iter()).for_each(|x| s.push_str(&format!(",{x}")));
            s.push('\n');
        }
        s
    }

    /// Counter-clockwise circle of radius `r` at speed `c`, centred at the origin,
    /// sampled every `ts` up to `t_end`; flat state `(x1, ẋ1, x2, ẋ2)`.
    pub fn circle(r: f64, c: f64, ts: f64, t_end: f64) -> Result<Self> {
        if !(r > 0.0 && c > 0.0 && ts > 0.0 && t_end >= 0.0) {
            return Err(Error::Invalid("circle needs positive radius, speed and step".into()));
        }
        let w = c / r;
        let n = (t_end / ts).round() as usize + 1;
        let mut out = Reference { t: Vec::with_capacity(n), z: Vec::new(), v: Vec::new() };
        for k in 0..n {
            let t = k as f64 * ts;
            let (s, co) = (w * t).sin_cos();
            out.t.push(t);
            out.z.push(Vector::from_vec(vec![r * co, -c * s, r * s, c * co]));
            out.v.push(Vector::from_vec(vec![-c * w * co, -c * w * s]));
        }
        Ok(out)
    }

    /// Samples `k..=k+n` of `z` and `k..k+n` of `v`, holding the last row past the end.
    pub fn window(&self, k: usize, n: usize) -> HorizonRefs {
        let last = self.t.len() - 1;
        HorizonRefs {
            z: (k..=k + n).map(|i| self.z[i.min(last)].clone()).collect(),
            v: (k..k + n).map(|i| self.v[i.min(last)].clone()).collect(),
        }
    }

    fn check_grid(&self, ts: f64) -> Result<()> {
        let ok = self.t.len() == 1 || self.t.iter().enumerate().all(|(k, &t)| (t - self.t[0] - k as f64 * ts).abs() <= 1e-6 * ts.max(1.0));
        if ok {
            Ok(())
        } else {
            Err(Error::Invalid(format!("reference is not sampled every T_s = {ts}")))
        }
    }
}

/// Control law driving the loop.
#[derive(Debug, Clone)]
pub enum Law {
    Clf { spec: ClfSpec, policy: BigMPolicy, solve: SolveOptions },
    Mpc(MpcSpec),
    FlMpc(MpcSpec),
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub ts: f64,
    pub duration: f64,
    /// RK4 steps per sample.
    pub substeps: usize,
    pub reference: Option<Reference>,
    /// Target in flat coordinates for convergence metrics; the origin by default.
    pub target: Option<Vector>,
    /// Re-apply the previous `v` when a step has no feasible answer.
    pub hold_on_infeasible: bool,
    pub record_timing: bool,
    /// Settling band for `settle_times`.
    pub settle_band: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            ts: 0.1,
            duration: 10.0,
            substeps: 20,
            reference: None,
            target: None,
            hold_on_infeasible: false,
            record_timing: true,
            settle_band: 1e-2,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SimRow {
    pub t: f64,
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub cell: Option<usize>,
    pub solver_ms: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct SimSummary {
    pub steps: usize,
    /// Integration points where the true input left its bounds (by more than 1e-6).
    pub input_violations: usize,
    pub max_input_excess: f64,
    /// Integration points outside the hard state set.
    pub state_violations: usize,
    pub max_state_excess: f64,
    /// Forecast pairs past the first whose true input leaves the design bounds.
    pub forecast_violations: usize,
    pub max_forecast_excess: f64,
    pub infeasible_steps: usize,
    pub budget_steps: usize,
    pub mean_solver_ms: f64,
    pub max_solver_ms: f64,
    pub final_error: f64,
    /// Per flat coordinate, the time after which `|z_i − target_i|` stays within the band.
    pub settle_times: Vec<Option<f64>>,
    /// Samples where `V` failed to decrease while `‖z‖ > 1e-3` (CLF law only).
    pub clf_increases: usize,
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub rows: Vec<SimRow>,
    pub summary: SimSummary,
    /// Why the run stopped early, if it did.
    pub aborted: Option<String>,
    pub aborted_infeasible: bool,
}

/// Problem data shared by every step.
pub struct ClosedLoop<'a> {
    pub plant: &'a dyn FlatPlant,
    pub union: &'a AdmissibleUnion,
    pub big_m: &'a BigM,
    pub law: Law,
}

const VIOLATION_TOL: f64 = 1e-6;

impl ClosedLoop<'_> {
    fn step(&self, k: usize, z: &[f64], warm: Option<Vec<usize>>, cfg: &SimConfig) -> Result<StepOutcome> {
        match &self.law {
            Law::Clf { spec, policy, solve } => {
                let (a, b) = self.plant.brunovsky();
                clf_step(spec, self.union, self.big_m, *policy, (&a, &b), z, solve)
            }
            Law::Mpc(spec) | Law::FlMpc(spec) => {
                let refs = cfg.reference.as_ref().map(|r| r.window(k, spec.horizon));
                if matches!(self.law, Law::Mpc(_)) {
                    mpc_step(spec, self.union, self.big_m, z, refs.as_ref(), warm)
                } else {
                    flmpc_step(spec, self.union, self.big_m, z, refs.as_ref())
                }
            }
        }
    }

    /// Runs from simulation state `x0`.
    pub fn simulate(&self, x0: &[f64], cfg: &SimConfig) -> Result<SimOutput> {
        let plant = self.plant;
        if x0.len() != plant.state_dim() {
            return Err(Error::dim(format!("{} needs {} initial states", plant.name(), plant.state_dim())));
        }
        if !(cfg.ts > 0.0) || cfg.substeps == 0 || !(cfg.duration >= 0.0) {
            return Err(Error::Invalid("simulation needs T_s > 0, substeps >= 1, duration >= 0".into()));
        }
        if let Law::Mpc(s) | Law::FlMpc(s) = &self.law {
            if (s.ts - cfg.ts).abs() > 1e-12 {
                return Err(Error::Invalid("MPC sample time differs from the simulation's".into()));
            }
        }
        if let Some(r) = &cfg.reference {
            r.check_grid(cfg.ts)?;
            if r.z[0].len() != plant.flat_dim() || r.v[0].len() != plant.flat_input_dim() {
                return Err(Error::dim("reference size"));
            }
        }
        let n_steps = (cfg.duration / cfg.ts).round() as usize;
        let h = cfg.ts / cfg.substeps as f64;
        let zs = plant.state_set();
        let target = cfg.target.clone().unwrap_or_else(|| Vector::zeros(plant.flat_dim()));

        let mut rows = Vec::with_capacity(n_steps + 1);
        let mut s = SimSummary::default();
        let mut x = Vector::from_row_slice(x0);
        let mut prev_v: Option<Vector> = None;
        let mut warm: Option<Vec<usize>> = None;
        let mut solve_ms = Vec::new();
        let mut aborted = None;
        let mut aborted_infeasible = false;
        let mut prev_clf: Option<f64> = None;

        for k in 0..=n_steps {
            let t = k as f64 * cfg.ts;
            let z = plant.to_flat(x.as_slice());
            if let Law::Clf { spec, .. } = &self.law {
                let val = spec.value(z.as_slice());
                if let Some(p) = prev_clf {
                    if z.norm() > 1e-3 && val >= p {
                        s.clf_increases += 1;
                    }
                }
                prev_clf = Some(val);
            }
            let started = Instant::now();
            let outcome = self.step(k, z.as_slice(), warm.take(), cfg);
            let ms = started.elapsed().as_secs_f64() * 1e3;
            let (v, cell) = match outcome {
                Ok(out) => {
                    solve_ms.push(ms);
                    if out.status == MiqpStatus::BudgetExceeded {
                        s.budget_steps += 1;
                    }
                    if out.v_pred.len() > 1 {
                        let ex = forecast_input_excess(plant, &out, &self.union.bounds)?;
                        for &e in &ex[1..] {
                            s.max_forecast_excess = s.max_forecast_excess.max(e);
                            if e > VIOLATION_TOL {
                                s.forecast_violations += 1;
                            }
                        }
                    }
                    warm = shift_cells(&out.cells);
                    (out.v, out.cell)
                }
                Err(e @ (Error::Infeasible | Error::Budget(_))) => {
                    s.infeasible_steps += 1;
                    match (&prev_v, cfg.hold_on_infeasible) {
                        (Some(v), true) => (v.clone(), None),
                        _ => {
                            aborted_infeasible = matches!(e, Error::Infeasible);
                            aborted = Some(format!("step {k} at t = {t}: {e}"));
                            break;
                        }
                    }
                }
                Err(e) => return Err(e),
            };
            let u = plant.applied_input(x.as_slice(), v.as_slice())?;
            rows.push(SimRow {
                t,
                x: x.iter().copied().collect(),
                z: z.iter().copied().collect(),
                u: u.iter().copied().collect(),
                v: v.iter().copied().collect(),
                cell,
                solver_ms: cfg.record_timing.then_some(ms),
            });
            s.steps = k;
            if k == n_steps {
                break;
            }
            // hold v over one period, checking the true constraints at every RK4 node
            let mut rhs = |_: f64, x: &Vector| plant.closed_loop_rhs(x.as_slice(), v.as_slice());
            for j in 0..cfg.substeps {
                let ex = plant.input_excess(plant.applied_input(x.as_slice(), v.as_slice())?.as_slice());
                record(&mut s, ex, zs.residual(plant.to_flat(x.as_slice()).as_slice()));
                x = match rk4_step(&mut rhs, t + j as f64 * h, &x, h) {
                    Ok(x) => x,
                    Err(e) => {
                        aborted = Some(format!("plant integration failed at t = {}: {e}", t + j as f64 * h));
                        break;
                    }
                };
            }
            if aborted.is_some() {
                break;
            }
            prev_v = Some(v);
        }
        if let Some(last) = rows.last() {
            let ex = plant.input_excess(&last.u);
            record(&mut s, ex, zs.residual(&last.z));
        }
        if !solve_ms.is_empty() {
            s.mean_solver_ms = solve_ms.iter().sum::<f64>() / solve_ms.len() as f64;
            s.max_solver_ms = solve_ms.iter().copied().fold(0.0, f64::max);
        }
        let target_at = |k: usize| -> Vector {
            cfg.reference.as_ref().map_or(target.clone(), |r| r.z[k.min(r.t.len() - 1)].clone())
        };
        s.final_error = rows.last().map_or(f64::NAN, |r| (Vector::from_row_slice(&r.z) - target_at(rows.len() - 1)).norm());
        s.settle_times = (0..plant.flat_dim())
            .map(|i| {
                let outside = rows
                    .iter()
                    .enumerate()
                    .rposition(|(k, r)| (r.z[i] - target_at(k)[i]).abs() > cfg.settle_band);
                match outside {
                    None => Some(0.0),
                    Some(k) if k + 1 < rows.len() => Some(rows[k + 1].t),
                    Some(_) => None,
                }
            })
            .collect();
        Ok(SimOutput { rows, summary: s, aborted, aborted_infeasible })
    }
}

fn record(s: &mut SimSummary, input_excess: f64, state_excess: f64) {
    s.max_input_excess = s.max_input_excess.max(input_excess);
    if input_excess > VIOLATION_TOL {
        s.input_violations += 1;
    }
    s.max_state_excess = s.max_state_excess.max(state_excess);
    if state_excess > VIOLATION_TOL {
        s.state_violations += 1;
    }
}

/// CSV header: `t, x…, z…, u…, v…, cell_index, solver_ms`.
pub fn csv_header(plant: &dyn FlatPlant) -> Vec<String> {
    std::iter::once("t".to_string())
        .chain((1..=plant.state_dim()).map(|i| format!("x{i}")))
        .chain((1..=plant.flat_dim()).map(|i| format!("z{i}")))
        .chain((1..=plant.input_dim()).map(|i| format!("u{i}")))
        .chain((1..=plant.flat_input_dim()).map(|i| format!("v{i}")))
        .chain(["cell_index".to_string(), "solver_ms".to_string()])
        .collect()
}

pub fn write_csv<W: Write>(plant: &dyn FlatPlant, rows: &[SimRow], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(csv_header(plant))?;
    for r in rows {
        let mut rec: Vec<String> = std::iter::once(r.t)
            .chain(r.x.iter().copied())
            .chain(r.z.iter().copied())
            .chain(r.u.iter().copied())
            .chain(r.v.iter().copied())
            .map(|v| v.to_string())
            .collect();
        rec.push(r.cell.map_or_else(String::new, |c| c.to_string()));
        rec.push(r.solver_ms.map_or_else(String::new, |m| format!("{m:.3}")));
        wr.write_record(&rec)?;
    }
    wr.flush()?;
    Ok(())
}

/// Brunovský response to a held-input sequence, integrated like the plant.
pub fn linear_response(a: &Matrix, b: &Matrix, z0: &Vector, v: &[Vector], ts: f64, substeps: usize) -> Result<Vec<Vector>> {
    let h = ts / substeps as f64;
    let mut z = z0.clone();
    let mut out = vec![z.clone()];
    for vk in v {
        let mut f = |_: f64, z: &Vector| Ok(a * z + b * vk);
        for _ in 0..substeps {
            z = rk4_step(&mut f, 0.0, &z, h)?;
        }
        out.push(z.clone());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_round_trip_and_errors() {
        let r = Reference::circle(100.0, 18.0, 0.5, 2.0).unwrap();
        assert_eq!(r.t.len(), 5);
        assert!((r.z[0][0] - 100.0).abs() < 1e-12 && (r.z[0][3] - 18.0).abs() < 1e-12);
        let back = Reference::from_csv_str(&r.to_csv_string(), 4, 2).unwrap();
        assert_eq!(back.t, r.t);
        for k in 0..5 {
            assert!((&back.z[k] - &r.z[k]).amax() < 1e-12);
        }
        assert!(Reference::from_csv_str("t,z1\n0,1\n", 2, 0).is_err());
        assert!(Reference::from_csv_str("t,z1\n1,1\n0,2\n", 1, 0).is_err());
        assert!(Reference::from_csv_str("t,z1\n0,nan\n", 1, 0).is_err());
        assert!(Reference::from_csv_str("t,z1\n", 1, 0).is_err());
        assert!(Reference::from_csv_str("t,z1\n0,1,2\n", 1, 0).is_err());
    }

    #[test]
    fn window_holds_last_sample() {
        let r = Reference::circle(10.0, 1.0, 1.0, 2.0).unwrap();
        let w = r.window(1, 4);
        assert_eq!(w.z.len(), 5);
        assert_eq!(w.v.len(), 4);
        assert_eq!(w.z[4], r.z[2]);
    }

    #[test]
    fn circle_reference_is_consistent_with_double_integrators() {
        // v is the derivative of the velocity components
        let r = Reference::circle(100.0, 18.0, 1e-3, 0.002).unwrap();
        let dv = (r.z[2][1] - r.z[0][1]) / 2e-3;
        assert!((dv - r.v[1][0]).abs() < 1e-4);
    }
}
