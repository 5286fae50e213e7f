//! Case-study plants with their flat coordinates, plus RK4 integration.

pub mod aircraft;
pub mod pmsm;
pub mod uav;

use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::kernel::{Matrix, Vector};
use crate::polytope::HPolytope;

pub use aircraft::{AircraftConstants, AircraftParams};
pub use pmsm::PmsmParams;
pub use uav::UavParams;

/// A differentially flat plant seen through its linearizing feedback.
///
/// The simulation state `x` may extend the physical state (the UAV carries its
/// airspeed as an extra integrator); `closed_loop_rhs` is the vector field of
/// that state under the feedback `u = Φ(z(x), v)` for a held `v`.
pub trait FlatPlant: Send + Sync {
    fn name(&self) -> &'static str;
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn flat_dim(&self) -> usize;
    fn flat_input_dim(&self) -> usize;

    fn to_flat(&self, x: &[f64]) -> Vector;
    #[allow(clippy::wrong_self_convention)]
    fn from_flat(&self, z: &[f64]) -> Result<Vector>;
    /// Linearizing input map `u = Φ(z, v)`.
    fn phi(&self, z: &[f64], v: &[f64]) -> Result<Vector>;
    fn closed_loop_rhs(&self, x: &[f64], v: &[f64]) -> Result<Vector>;
    /// Brunovský pair `(A, B)`.
    fn brunovsky(&self) -> (Matrix, Matrix);

    /// Input actually applied at simulation state `x`.
    fn applied_input(&self, x: &[f64], v: &[f64]) -> Result<Vector> {
        self.phi(self.to_flat(x).as_slice(), v)
    }

    /// Largest violation of the physical input bounds; nonpositive when admissible.
    fn input_excess(&self, u: &[f64]) -> f64;

    /// Hard state set `Z_s` over `z`.
    fn state_set(&self) -> HPolytope {
        HPolytope::universe(self.flat_dim())
    }

    /// Hard rows on `v` alone, if any.
    fn input_set(&self) -> Option<HPolytope> {
        None
    }

    /// Selector from `ζ = (z, v)` to the network input.
    fn network_input_map(&self) -> Matrix;

    /// Default enumeration workspace in network-input coordinates.
    fn workspace(&self) -> (Vec<f64>, Vec<f64>);
}

/// Plant parameter file, tagged by `plant`.
#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "plant", rename_all = "lowercase")]
pub enum PlantParams {
    Aircraft(AircraftParams),
    Uav(UavParams),
    Pmsm(PmsmParams),
}

impl PlantParams {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let p: PlantParams = toml::from_str(s).map_err(|e| Error::Parse(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| Error::Config { path: path.to_owned(), msg: e.to_string() })
    }

    /// Default parameters of a plant by name.
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "aircraft" => Ok(PlantParams::Aircraft(AircraftParams::default())),
            "uav" => Ok(PlantParams::Uav(UavParams::default())),
            "pmsm" => Ok(PlantParams::Pmsm(PmsmParams::default())),
            _ => Err(Error::Invalid(format!("unknown plant {name:?}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            PlantParams::Aircraft(p) => p.validate(),
            PlantParams::Uav(p) => p.validate(),
            PlantParams::Pmsm(p) => p.validate(),
        }
    }

    pub fn build(&self) -> Box<dyn FlatPlant> {
        match self {
            PlantParams::Aircraft(p) => Box::new(p.clone()),
            PlantParams::Uav(p) => Box::new(p.clone()),
            PlantParams::Pmsm(p) => Box::new(p.clone()),
        }
    }
}

pub(crate) fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Parse(format!("{name} must be positive and finite, got {v}")))
    }
}

/// One classical RK4 step of `ẋ = f(t, x)`.
pub fn rk4_step<F>(f: &mut F, t: f64, x: &Vector, h: f64) -> Result<Vector>
where
    F: FnMut(f64, &Vector) -> Result<Vector>,
{
    let k1 = f(t, x)?;
    let k2 = f(t + h / 2.0, &(x + &k1 * (h / 2.0)))?;
    let k3 = f(t + h / 2.0, &(x + &k2 * (h / 2.0)))?;
    let k4 = f(t + h, &(x + &k3 * h))?;
    Ok(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0))
}

/// Fixed-step RK4 over `[0, t_end]`; returns the samples including both ends.
pub fn rk4_integrate<F>(mut f: F, x0: &Vector, t_end: f64, h: f64) -> Result<Vec<(f64, Vector)>>
where
    F: FnMut(f64, &Vector) -> Result<Vector>,
{
    if !(h > 0.0) || !(t_end >= 0.0) {
        return Err(Error::Invalid("rk4 needs h > 0 and t_end >= 0".into()));
    }
    let steps = (t_end / h).round() as usize;
    if ((steps as f64) * h - t_end).abs() > 1e-9 * t_end.max(1.0) {
        return Err(Error::Invalid("rk4 step does not divide the horizon".into()));
    }
    let mut out = Vec::with_capacity(steps + 1);
    let mut x = x0.clone();
    out.push((0.0, x.clone()));
    for k in 0..steps {
        let t = k as f64 * h;
        x = rk4_step(&mut f, t, &x, h)?;
        out.push((t + h, x.clone()));
    }
    Ok(out)
}

/// RK4 of `ż = Az + Bv` with `v` held over one period.
pub fn rk4_discretize(a: &Matrix, b: &Matrix, ts: f64) -> Result<(Matrix, Matrix)> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n {
        return Err(Error::dim("rk4_discretize"));
    }
    let at = a * ts;
    let mut ad = Matrix::identity(n, n);
    let mut term = Matrix::identity(n, n);
    let mut bsum = Matrix::identity(n, n) * ts;
    let mut bterm = Matrix::identity(n, n) * ts;
    for i in 1..=4 {
        term = &term * &at / i as f64;
        ad += &term;
        if i < 4 {
            bterm = &bterm * &at / (i + 1) as f64;
            bsum += &bterm;
        }
    }
    Ok((ad, bsum * b))
}
