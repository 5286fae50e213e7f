//! Permanent magnet synchronous motor in port-Hamiltonian form.
//!
//! `x1, x2` are stator fluxes, `x3` the mechanical momentum; flat output
//! `(x1, x3)` with `z = (x1, x3, (Υ/L) x2)`.

use serde::{Deserialize, Serialize};

use super::{positive, FlatPlant};
use crate::error::{Error, Result};
use crate::kernel::{Matrix, Vector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PmsmParams {
    pub jm: f64,
    /// Stator inductance in H.
    pub l: f64,
    pub r: f64,
    pub upsilon: f64,
    pub x_e: [f64; 3],
    pub u_e: [f64; 2],
    /// Voltage bounds `|u_i| ≤ u_max[i]`.
    pub u_max: [f64; 2],
    pub workspace_lo: [f64; 5],
    pub workspace_hi: [f64; 5],
}

impl Default for PmsmParams {
    fn default() -> Self {
        PmsmParams {
            jm: 0.012,
            l: 0.0038,
            r: 0.225,
            upsilon: 0.17,
            x_e: [0.0507, 0.0, 0.1084],
            u_e: [3.0, 1.9941],
            u_max: [6.0, 6.0],
            workspace_lo: [-0.05, -0.05, -1.5, -5.0, -250.0],
            workspace_hi: [0.15, 0.25, 1.5, 5.0, 250.0],
        }
    }
}

impl PmsmParams {
    pub fn validate(&self) -> Result<()> {
        for (n, v) in [("jm", self.jm), ("l", self.l), ("r", self.r), ("upsilon", self.upsilon)] {
            positive(n, v)?;
        }
        for v in self.u_max {
            positive("u_max", v)?;
        }
        if self.workspace_lo.iter().zip(&self.workspace_hi).any(|(l, h)| !(l < h) || !l.is_finite() || !h.is_finite()) {
            return Err(Error::Parse("workspace_lo must be below workspace_hi".into()));
        }
        if self.x_e.iter().chain(&self.u_e).any(|v| !v.is_finite()) {
            return Err(Error::Parse("equilibrium must be finite".into()));
        }
        Ok(())
    }

    pub fn z_e(&self) -> Vector {
        self.to_flat(&self.x_e)
    }

    /// Open-loop vector field.
    pub fn dynamics(&self, x: &[f64], u: &[f64]) -> Vector {
        let k = self.r / self.l;
        Vector::from_vec(vec![
            -k * x[0] + x[1] * x[2] / self.jm + u[0],
            -x[2] * (self.upsilon + x[0]) / self.jm - k * x[1] + u[1],
            self.upsilon / self.l * x[1],
        ])
    }

    /// `Φ` on a stacked `ζ = (z, v)`.
    pub fn phi_at(&self, zeta: &[f64]) -> Vector {
        self.phi(&zeta[..3], &zeta[3..]).expect("PMSM map is total")
    }

    /// Slope ranges of `Φ` over the workspace box, per output and input axis.
    pub fn phi_slopes(&self) -> [[(f64, f64); 5]; 2] {
        let (lo, hi) = (self.workspace_lo, self.workspace_hi);
        let c = self.l / (self.jm * self.upsilon);
        let span = |a: f64, lo: f64, hi: f64| {
            let (p, q) = (a * lo, a * hi);
            (p.min(q), p.max(q))
        };
        [
            [(self.r / self.l, self.r / self.l), span(-c, lo[2], hi[2]), span(-c, lo[1], hi[1]), (1.0, 1.0), (0.0, 0.0)],
            [
                span(1.0 / self.jm, lo[1], hi[1]),
                span(1.0 / self.jm, self.upsilon + lo[0], self.upsilon + hi[0]),
                (self.r / self.upsilon, self.r / self.upsilon),
                (0.0, 0.0),
                (self.l / self.upsilon, self.l / self.upsilon),
            ],
        ]
    }
}

impl FlatPlant for PmsmParams {
    fn name(&self) -> &'static str {
        "pmsm"
    }

    fn state_dim(&self) -> usize {
        3
    }

    fn input_dim(&self) -> usize {
        2
    }

    fn flat_dim(&self) -> usize {
        3
    }

    fn flat_input_dim(&self) -> usize {
        2
    }

    fn to_flat(&self, x: &[f64]) -> Vector {
        Vector::from_vec(vec![x[0], x[2], self.upsilon / self.l * x[1]])
    }

    fn from_flat(&self, z: &[f64]) -> Result<Vector> {
        Ok(Vector::from_vec(vec![z[0], self.l / self.upsilon * z[2], z[1]]))
    }

    /// The `z3` term of `u2` is `(R/Υ) z3`: it cancels the `−(R/L) x2` damping,
    /// and reduces to the equilibrium inputs at `z_e`.
    fn phi(&self, z: &[f64], v: &[f64]) -> Result<Vector> {
        let (l, j, y) = (self.l, self.jm, self.upsilon);
        Ok(Vector::from_vec(vec![
            v[0] + self.r / l * z[0] - l / (j * y) * z[1] * z[2],
            l / y * v[1] + z[1] * (y + z[0]) / j + self.r / y * z[2],
        ]))
    }

    fn closed_loop_rhs(&self, x: &[f64], v: &[f64]) -> Result<Vector> {
        let u = self.phi(self.to_flat(x).as_slice(), v)?;
        Ok(self.dynamics(x, u.as_slice()))
    }

    fn brunovsky(&self) -> (Matrix, Matrix) {
        (
            Matrix::from_row_slice(3, 3, &[0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]),
            Matrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0]),
        )
    }

    fn input_excess(&self, u: &[f64]) -> f64 {
        (u[0].abs() - self.u_max[0]).max(u[1].abs() - self.u_max[1])
    }

    fn network_input_map(&self) -> Matrix {
        Matrix::identity(5, 5)
    }

    fn workspace(&self) -> (Vec<f64>, Vec<f64>) {
        (self.workspace_lo.to_vec(), self.workspace_hi.to_vec())
    }
}
