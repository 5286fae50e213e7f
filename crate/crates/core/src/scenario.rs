//! Scenario files: one TOML describing plant, network, constraints, controller and run.
//!
//! Relative paths inside a scenario resolve against the scenario's directory.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Deserialize;

use crate::controllers::{ClfSpec, MpcSpec};
use crate::error::{Error, Result};
use crate::error_bounds::{
    axiswise_error_certificate, grid_error_certificate, taylor_cell_bounds, ErrorCertificate, GridOptions, GridSpec,
    SlopeRange, TaylorCellBound, TaylorCenter,
};
use crate::kernel::{Matrix, Vector};
use crate::mi_encoding::{build_admissible_union, compute_big_m, AdmissibleUnion, BigM, BigMPolicy, OutputBounds};
use crate::miqp::SolveOptions;
use crate::plants::{rk4_discretize, FlatPlant, PlantParams};
use crate::polytope::HPolytope;
use crate::relu_pwa::{enumerate_cells, EnumerateOptions, PwaDecomposition, ReluNetwork};
use crate::sim::{ClosedLoop, Law, Reference, SimConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControllerKind {
    Clf,
    Mpc,
    Flmpc,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub plant: String,
    /// Plant parameter file; defaults are used when absent.
    pub params: Option<PathBuf>,
    pub network: PathBuf,
    pub controller: ControllerKind,
    /// Directory for run outputs.
    pub out_dir: Option<PathBuf>,
    pub threads: Option<usize>,
    pub workspace: Option<BoxSpec>,
    pub bounds: BoundsSpec,
    pub certify: Option<CertifySpec>,
    #[serde(default)]
    pub tuning: TuningSpec,
    pub clf: Option<ClfToml>,
    pub sim: SimToml,
    #[serde(default)]
    pub solver: SolverToml,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub eps: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CertifyMethod {
    /// Euclidean padding with a Lipschitz constant.
    #[default]
    Grid,
    /// Per-axis padding from slope ranges.
    Axiswise,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertifySpec {
    pub step: Vec<f64>,
    #[serde(default)]
    pub method: CertifyMethod,
    /// Sample the box edges as well as the interior lattice.
    #[serde(default = "yes")]
    pub endpoints: bool,
    #[serde(default = "default_samples")]
    pub check_samples: usize,
}

fn yes() -> bool {
    true
}

fn default_samples() -> usize {
    10_000
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuningSpec {
    pub q: Option<Vec<Vec<f64>>>,
    pub r: Option<Vec<Vec<f64>>>,
    pub horizon: Option<usize>,
    pub ts: Option<f64>,
    #[serde(default)]
    pub terminal_cost: bool,
    /// Uniform big-M in place of the per-row values.
    pub big_m: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClfToml {
    pub p: Vec<Vec<f64>>,
    pub gamma: f64,
    pub k: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimToml {
    pub x0: Vec<f64>,
    pub duration: f64,
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    /// Sample time for the CLF law; MPC laws use `tuning.ts`.
    pub ts: Option<f64>,
    /// Reference CSV with columns `t, z…, v…`.
    pub reference: Option<PathBuf>,
    pub circle: Option<CircleToml>,
    /// Constant reference.
    pub z_ref: Option<Vec<f64>>,
    pub v_ref: Option<Vec<f64>>,
    #[serde(default)]
    pub hold_on_infeasible: bool,
    #[serde(default = "yes")]
    pub record_timing: bool,
    #[serde(default = "default_band")]
    pub settle_band: f64,
}

fn default_substeps() -> usize {
    20
}

fn default_band() -> f64 {
    1e-2
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CircleToml {
    pub radius: f64,
    pub speed: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverToml {
    #[serde(default = "default_nodes")]
    pub max_nodes: usize,
    pub time_limit_ms: Option<u64>,
    #[serde(default = "default_gap")]
    pub gap: f64,
}

fn default_nodes() -> usize {
    100_000
}

fn default_gap() -> f64 {
    1e-6
}

impl Default for SolverToml {
    fn default() -> Self {
        SolverToml { max_nodes: default_nodes(), time_limit_ms: None, gap: default_gap() }
    }
}

impl Scenario {
    pub fn from_toml_str(s: &str, base_dir: &Path) -> Result<Self> {
        let mut sc: Scenario = toml::from_str(s).map_err(|e| Error::Parse(e.to_string()))?;
        sc.base_dir = base_dir.to_owned();
        sc.validate()?;
        Ok(sc)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config { path: path.to_owned(), msg: e.to_string() })?;
        let dir = path.parent().unwrap_or(Path::new("."));
        Self::from_toml_str(&text, dir).map_err(|e| match e {
            Error::Config { .. } => e,
            e => Error::Config { path: path.to_owned(), msg: e.to_string() },
        })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_owned()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Checks that need no file access.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Parse(m.to_string()));
        let b = &self.bounds;
        if b.lower.len() != b.upper.len() || b.eps.len() != b.lower.len() || b.lower.is_empty() {
            return bad("bounds.lower, bounds.upper and bounds.eps need one entry per network output");
        }
        if let Some(w) = &self.workspace {
            if w.lo.len() != w.hi.len() || w.lo.iter().zip(&w.hi).any(|(l, h)| !(l < h) || !l.is_finite() || !h.is_finite()) {
                return bad("workspace needs finite lo < hi of equal length");
            }
        }
        if let Some(c) = &self.certify {
            if c.step.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
                return bad("certify.step must be positive");
            }
        }
        if self.threads == Some(0) {
            return bad("threads must be positive");
        }
        let t = &self.tuning;
        if t.ts.is_some_and(|v| !(v > 0.0 && v.is_finite())) || t.horizon == Some(0) {
            return bad("tuning needs ts > 0 and horizon >= 1");
        }
        if t.big_m.is_some_and(|m| !(m > 0.0 && m.is_finite())) {
            return bad("tuning.big_m must be positive");
        }
        for (name, m) in [("q", &t.q), ("r", &t.r)] {
            if let Some(m) = m {
                square(name, m)?;
            }
        }
        if self.controller != ControllerKind::Clf && (t.q.is_none() || t.r.is_none() || t.horizon.is_none() || t.ts.is_none()) {
            return bad("MPC controllers need tuning.q, tuning.r, tuning.horizon and tuning.ts");
        }
        if self.controller == ControllerKind::Clf {
            let Some(c) = &self.clf else { return bad("the CLF controller needs a [clf] table") };
            square("clf.p", &c.p)?;
            if !(c.gamma > 0.0 && c.gamma.is_finite()) || c.k.is_empty() {
                return bad("clf.gamma must be positive and clf.k nonempty");
            }
            if self.sim.ts.is_none() {
                return bad("the CLF controller needs sim.ts");
            }
        }
        let s = &self.sim;
        if !(s.duration >= 0.0 && s.duration.is_finite()) || s.substeps == 0 || s.substeps > 100_000 {
            return bad("sim needs duration >= 0 and 1 <= substeps <= 100000");
        }
        if s.x0.iter().any(|v| !v.is_finite()) {
            return bad("sim.x0 must be finite");
        }
        if s.ts.is_some_and(|v| !(v > 0.0 && v.is_finite())) {
            return bad("sim.ts must be positive");
        }
        if [s.reference.is_some(), s.circle.is_some(), s.z_ref.is_some()].iter().filter(|&&b| b).count() > 1 {
            return bad("choose one of sim.reference, sim.circle, sim.z_ref");
        }
        if s.circle.as_ref().is_some_and(|c| !(c.radius > 0.0 && c.radius.is_finite() && c.speed > 0.0 && c.speed.is_finite())) {
            return bad("sim.circle needs positive finite radius and speed");
        }
        if s.v_ref.is_some() && s.z_ref.is_none() {
            return bad("sim.v_ref needs sim.z_ref");
        }
        if self.solver.max_nodes == 0 || !(self.solver.gap >= 0.0) {
            return bad("solver needs max_nodes >= 1 and gap >= 0");
        }
        Ok(())
    }

    pub fn sample_time(&self) -> f64 {
        match self.controller {
            ControllerKind::Clf => self.sim.ts.unwrap_or(0.1),
            _ => self.tuning.ts.unwrap_or(0.1),
        }
    }

    pub fn solve_options(&self) -> SolveOptions {
        SolveOptions {
            max_nodes: self.solver.max_nodes,
            time_limit: self.solver.time_limit_ms.map(Duration::from_millis),
            gap: self.solver.gap,
            warm_cells: None,
            incumbent: None,
        }
    }
}

fn square(name: &str, m: &[Vec<f64>]) -> Result<()> {
    if m.is_empty() || m.iter().any(|r| r.len() != m.len()) || m.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Parse(format!("{name} must be a finite square matrix")));
    }
    Ok(())
}

fn matrix(rows: &[Vec<f64>]) -> Result<Matrix> {
    let n = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != n) {
        return Err(Error::Parse("ragged matrix".into()));
    }
    Ok(Matrix::from_row_iterator(rows.len(), n, rows.iter().flatten().copied()))
}

/// Plant parameters with the network's cells over the workspace box `[lo, hi]`.
pub struct Decomposed {
    pub params: PlantParams,
    pub d: PwaDecomposition,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

/// Everything a run needs, built once from a scenario.
pub struct Problem {
    pub scenario: Scenario,
    pub params: PlantParams,
    pub plant: Box<dyn FlatPlant>,
    pub decomposition: PwaDecomposition,
    pub union: AdmissibleUnion,
    pub big_m: BigM,
    pub policy: BigMPolicy,
}

impl Problem {
    /// Plant and network only; enough for `enumerate` and `certify`.
    pub fn decompose(sc: &Scenario) -> Result<Decomposed> {
        let params = match &sc.params {
            Some(p) => PlantParams::load(&sc.resolve(p))?,
            None => PlantParams::by_name(&sc.plant)?,
        };
        let plant = params.build();
        if plant.name() != sc.plant {
            return Err(Error::Invalid(format!("parameter file is for {}, scenario says {}", plant.name(), sc.plant)));
        }
        let net = ReluNetwork::load(&sc.resolve(&sc.network))?;
        let (lo, hi) = match &sc.workspace {
            Some(w) => (w.lo.clone(), w.hi.clone()),
            None => plant.workspace(),
        };
        if lo.len() != net.n0() || sc.bounds.lower.len() != net.n2() {
            return Err(Error::dim("network size disagrees with the workspace or bounds"));
        }
        if plant.network_input_map().nrows() != net.n0() {
            return Err(Error::dim(format!("{} expects a network with {} inputs", sc.plant, plant.network_input_map().nrows())));
        }
        let d = enumerate_cells(&net, &HPolytope::from_box(&lo, &hi)?, &EnumerateOptions::default())?;
        Ok(Decomposed { params, d, lo, hi })
    }

    pub fn build(sc: Scenario) -> Result<Self> {
        let Decomposed { params, d: decomposition, .. } = Self::decompose(&sc)?;
        let plant = params.build();
        let b = &sc.bounds;
        let bounds = OutputBounds::new(Vector::from_vec(b.lower.clone()), Vector::from_vec(b.upper.clone()))?;
        let union = build_admissible_union(&decomposition, &bounds, &b.eps)?
            .with_lift(plant.network_input_map())?
            .remove_redundant_rows()?;
        let big_m = compute_big_m(&union, &decomposition.workspace)?;
        let policy = match sc.tuning.big_m {
            Some(m) => BigMPolicy::Uniform(m),
            None => BigMPolicy::PerRow,
        };
        policy.resolve(&big_m)?;
        if sc.sim.x0.len() != plant.state_dim() {
            return Err(Error::dim(format!("sim.x0 needs {} entries for {}", plant.state_dim(), sc.plant)));
        }
        Ok(Problem { scenario: sc, params, plant, decomposition, union, big_m, policy })
    }

    pub fn clf_spec(&self) -> Result<ClfSpec> {
        let c = self.scenario.clf.as_ref().ok_or_else(|| Error::Invalid("scenario has no [clf] table".into()))?;
        let spec = ClfSpec { p: matrix(&c.p)?, gamma: c.gamma, k: matrix(&c.k)? };
        let n = self.plant.flat_dim();
        if spec.p.shape() != (n, n) || spec.k.shape() != (self.plant.flat_input_dim(), n) {
            return Err(Error::dim("clf.p or clf.k"));
        }
        Ok(spec)
    }

    pub fn mpc_spec(&self) -> Result<MpcSpec> {
        let t = &self.scenario.tuning;
        let missing = || Error::Invalid("tuning needs q, r, horizon and ts".into());
        let ts = t.ts.ok_or_else(missing)?;
        let (a, b) = self.plant.brunovsky();
        let (a_d, b_d) = rk4_discretize(&a, &b, ts)?;
        let spec = MpcSpec {
            q: matrix(t.q.as_ref().ok_or_else(missing)?)?,
            r: matrix(t.r.as_ref().ok_or_else(missing)?)?,
            horizon: t.horizon.ok_or_else(missing)?,
            ts,
            a_d,
            b_d,
            state_set: self.plant.state_set(),
            input_set: self.plant.input_set(),
            terminal_cost: t.terminal_cost,
            policy: self.policy,
            solve: self.scenario.solve_options(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn law(&self) -> Result<Law> {
        Ok(match self.scenario.controller {
            ControllerKind::Clf => {
                Law::Clf { spec: self.clf_spec()?, policy: self.policy, solve: self.scenario.solve_options() }
            }
            ControllerKind::Mpc => Law::Mpc(self.mpc_spec()?),
            ControllerKind::Flmpc => Law::FlMpc(self.mpc_spec()?),
        })
    }

    pub fn closed_loop(&self) -> Result<ClosedLoop<'_>> {
        Ok(ClosedLoop { plant: self.plant.as_ref(), union: &self.union, big_m: &self.big_m, law: self.law()? })
    }

    pub fn sim_config(&self) -> Result<SimConfig> {
        let s = &self.scenario.sim;
        let ts = self.scenario.sample_time();
        let (n_z, n_v) = (self.plant.flat_dim(), self.plant.flat_input_dim());
        let reference = if let Some(path) = &s.reference {
            let path = self.scenario.resolve(path);
            let text = std::fs::read_to_string(&path).map_err(|e| Error::Config { path: path.clone(), msg: e.to_string() })?;
            Some(Reference::from_csv_str(&text, n_z, n_v).map_err(|e| Error::Config { path, msg: e.to_string() })?)
        } else if let Some(c) = s.circle {
            if n_z != 4 || n_v != 2 {
                return Err(Error::Invalid("circle references need a planar double integrator".into()));
            }
            Some(Reference::circle(c.radius, c.speed, ts, s.duration + ts * (self.scenario.tuning.horizon.unwrap_or(1) as f64))?)
        } else if let Some(z) = &s.z_ref {
            let v = s.v_ref.clone().unwrap_or_else(|| vec![0.0; n_v]);
            if z.len() != n_z || v.len() != n_v {
                return Err(Error::dim("sim.z_ref or sim.v_ref"));
            }
            Some(Reference::constant(Vector::from_vec(z.clone()), Vector::from_vec(v)))
        } else {
            None
        };
        Ok(SimConfig {
            ts,
            duration: s.duration,
            substeps: s.substeps,
            target: reference.as_ref().filter(|r| r.t.len() == 1).map(|r| r.z[0].clone()),
            reference,
            hold_on_infeasible: s.hold_on_infeasible,
            record_timing: s.record_timing,
            settle_band: s.settle_band,
        })
    }
}

/// Error certificate for the scenario's network against the plant's true map.
pub fn certify(dec: &Decomposed, spec: &CertifySpec, opts: &GridOptions) -> Result<ErrorCertificate> {
    let (params, d) = (&dec.params, &dec.d);
    if spec.step.len() != dec.lo.len() {
        return Err(Error::dim("certify.step needs one entry per network input"));
    }
    let grid = GridSpec::new(dec.lo.clone(), dec.hi.clone(), spec.step.clone())?.with_endpoints(spec.endpoints);
    match (params, spec.method) {
        (PlantParams::Aircraft(p), CertifyMethod::Grid) => {
            let phi = |x: &[f64]| Vector::from_element(1, p.phi_scalar(x[0], x[1]).unwrap_or(f64::NAN));
            grid_error_certificate(phi, d, &grid, &[p.lipschitz().gamma_phi], opts)
        }
        (PlantParams::Uav(_), CertifyMethod::Grid) => {
            // airspeed is the Euclidean norm of the velocity, Lipschitz 1
            let phi = |x: &[f64]| Vector::from_element(1, x[0].hypot(x[1]));
            grid_error_certificate(phi, d, &grid, &[1.0], opts)
        }
        (PlantParams::Pmsm(p), CertifyMethod::Axiswise) => {
            let slopes: Vec<Vec<SlopeRange>> = p
                .phi_slopes()
                .iter()
                .map(|row| row.iter().map(|&(min, max)| SlopeRange { min, max }).collect())
                .collect();
            axiswise_error_certificate(|x: &[f64]| p.phi_at(x), d, &grid, &slopes, opts)
        }
        (p, m) => Err(Error::Invalid(format!("{m:?} certificate is not available for {}", p.build().name()))),
    }
}

/// Per-cell Taylor bounds on the output-bounded cells, for scalar plants with
/// a known gradient bound (the aircraft).
pub fn taylor_table(dec: &Decomposed, bounds: &BoundsSpec, center: TaylorCenter) -> Result<Option<Vec<TaylorCellBound>>> {
    let PlantParams::Aircraft(p) = &dec.params else { return Ok(None) };
    let ob = OutputBounds::new(Vector::from_vec(bounds.lower.clone()), Vector::from_vec(bounds.upper.clone()))?;
    let u = build_admissible_union(&dec.d, &ob, &bounds.eps)?;
    let phi = |x: &[f64]| p.phi_scalar(x[0], x[1]).unwrap_or(f64::NAN);
    let grad = |x: &[f64]| {
        let (gz, gv) = p.phi_grad(x[0], x[1]).unwrap_or((f64::NAN, f64::NAN));
        Vector::from_vec(vec![gz, gv])
    };
    taylor_cell_bounds(phi, grad, &u.pieces(), p.lipschitz().c_zeta, center).map(Some)
}

/// True map `Φ` in network-input coordinates, for spot checks.
pub fn true_map(params: &PlantParams) -> Box<dyn Fn(&[f64]) -> Vector + Sync + '_> {
    match params {
        PlantParams::Aircraft(p) => Box::new(move |x| Vector::from_element(1, p.phi_scalar(x[0], x[1]).unwrap_or(f64::NAN))),
        PlantParams::Uav(_) => Box::new(|x| Vector::from_element(1, x[0].hypot(x[1]))),
        PlantParams::Pmsm(p) => Box::new(move |x| p.phi_at(x)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MIN: &str = r#"
plant = "aircraft"
network = "net.toml"
controller = "mpc"
[bounds]
lower = [-4.0]
upper = [4.0]
eps = [0.1897]
[tuning]
q = [[20.0, 1.0], [1.0, 0.5]]
r = [[0.005]]
horizon = 5
ts = 0.1
[sim]
x0 = [0.25, 0.0]
duration = 10.0
"#;

    #[test]
    fn parses_minimal_scenario() {
        let s = Scenario::from_toml_str(MIN, Path::new("/tmp/x")).unwrap();
        assert_eq!(s.controller, ControllerKind::Mpc);
        assert_eq!(s.resolve(&s.network), PathBuf::from("/tmp/x/net.toml"));
        assert_eq!(s.sim.substeps, 20);
        assert_eq!(s.sample_time(), 0.1);
    }

    #[test]
    fn rejects_bad_scenarios() {
        let base = Path::new(".");
        assert!(Scenario::from_toml_str(&MIN.replace("horizon = 5", "horizon = 0"), base).is_err());
        assert!(Scenario::from_toml_str(&MIN.replace("eps = [0.1897]", "eps = []"), base).is_err());
        assert!(Scenario::from_toml_str(&MIN.replace("controller = \"mpc\"", "controller = \"pid\""), base).is_err());
        assert!(Scenario::from_toml_str(&format!("{MIN}\nbogus = 1\n"), base).is_err());
        assert!(Scenario::from_toml_str(&MIN.replace("controller = \"mpc\"", "controller = \"clf\""), base).is_err());
        assert!(Scenario::from_toml_str(&MIN.replace("r = [[0.005]]", "r = [[0.005, 1.0]]"), base).is_err());
        let circle = |r: &str| MIN.replace("duration = 10.0", &format!("duration = 10.0\ncircle = {{ radius = {r}, speed = 18.0 }}"));
        assert!(Scenario::from_toml_str(&circle("100.0"), base).is_ok());
        assert!(Scenario::from_toml_str(&circle("nan"), base).is_err());
        assert!(Scenario::from_toml_str(&circle("-1.0"), base).is_err());
    }
}
