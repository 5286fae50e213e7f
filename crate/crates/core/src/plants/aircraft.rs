//! Longitudinal aircraft model `φ̈ = J⁻¹(−d1 L(φ) + d2 u) cos φ`.
//!
//! Forces are expressed in units of `force_unit` (1e5 N by default), so `u`,
//! `Φ` and the error bounds are all O(1).

use serde::{Deserialize, Serialize};

use super::{positive, FlatPlant};
use crate::error::{Error, Result};
use crate::kernel::{Matrix, Vector};
use crate::polytope::HPolytope;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AircraftParams {
    pub l0: f64,
    pub l1: f64,
    pub l3: f64,
    /// Longitudinal inertia, N·m².
    pub j: f64,
    pub d1: f64,
    pub d2: f64,
    /// Elevator force bound in N.
    pub u_max: f64,
    pub force_unit: f64,
    /// Workspace half-widths for `z1` (rad) and `v` (rad/s²).
    pub phi_bar: f64,
    pub v_bar: f64,
}

impl Default for AircraftParams {
    fn default() -> Self {
        AircraftParams {
            l0: 2.5e5,
            l1: 8.6e6,
            l3: 4.35e7,
            j: 4.5e6,
            d1: 4.0,
            d2: 42.0,
            u_max: 5e5,
            force_unit: 1e5,
            phi_bar: 0.349,
            v_bar: 5.0,
        }
    }
}

/// Lipschitz data of `Φ` over the workspace, in force units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AircraftConstants {
    pub a: f64,
    pub b: f64,
    pub gamma_phi: f64,
    pub c_z: f64,
    pub c_v: f64,
    pub c_zeta: f64,
}

impl AircraftParams {
    pub fn validate(&self) -> Result<()> {
        for (n, v) in [
            ("l1", self.l1),
            ("l3", self.l3),
            ("j", self.j),
            ("d1", self.d1),
            ("d2", self.d2),
            ("u_max", self.u_max),
            ("force_unit", self.force_unit),
            ("phi_bar", self.phi_bar),
            ("v_bar", self.v_bar),
        ] {
            positive(n, v)?;
        }
        if !self.l0.is_finite() {
            return Err(Error::Parse("l0 must be finite".into()));
        }
        if self.phi_bar >= std::f64::consts::FRAC_PI_2 {
            return Err(Error::Parse("phi_bar must stay below pi/2".into()));
        }
        Ok(())
    }

    pub fn lift(&self, phi: f64) -> f64 {
        self.l0 + self.l1 * phi - self.l3 * phi.powi(3)
    }

    /// `φ_S = sqrt(l1 / (3 l3))`, the stall angle.
    pub fn stall_angle(&self) -> f64 {
        (self.l1 / (3.0 * self.l3)).sqrt()
    }

    /// Input bound in force units.
    pub fn u_bound(&self) -> f64 {
        self.u_max / self.force_unit
    }

    fn cos_checked(z1: f64) -> Result<f64> {
        let c = z1.cos();
        if c <= 1e-6 {
            return Err(Error::Invalid(format!("cos(z1) too small at z1 = {z1}")));
        }
        Ok(c)
    }

    pub fn phi_scalar(&self, z1: f64, v: f64) -> Result<f64> {
        let c = Self::cos_checked(z1)?;
        Ok((v * self.j / c + self.d1 * self.lift(z1)) / (self.d2 * self.force_unit))
    }

    /// `(∂Φ/∂z1, ∂Φ/∂v)`.
    pub fn phi_grad(&self, z1: f64, v: f64) -> Result<(f64, f64)> {
        let c = Self::cos_checked(z1)?;
        let s = self.d2 * self.force_unit;
        let dz = (self.d1 * (self.l1 - 3.0 * self.l3 * z1 * z1) + self.j * v * z1.sin() / (c * c)) / s;
        // the v-slope is J/(d2 cos z1); J cos z1/d2 would not be the derivative of Φ
        let dv = self.j / (c * s);
        Ok((dz, dv))
    }

    /// Constants of the bound chain over `|z1| ≤ phi_bar`, `|v| ≤ v_bar`.
    ///
    /// `C_z` follows the closed form as printed, where the `J v̄` term is not
    /// divided by `d2`; the Taylor table only reproduces with that value.
    pub fn lipschitz(&self) -> AircraftConstants {
        let (pb, vb) = (self.phi_bar, self.v_bar);
        let (c, s) = (pb.cos(), pb.sin());
        let unit = self.force_unit;
        let a = self.j / (self.d2 * c) / unit;
        let b = (vb * self.j / (c * c) + self.d1 * (self.l1 + 3.0 * self.l3 * pb * pb)) / self.d2 / unit;
        let c_z1 = self.j * s / (self.d2 * c * c) / unit;
        let c_z2 = (6.0 * self.d1 * self.l3 * pb / self.d2 + self.j * vb * (1.0 / (c * c) + 2.0 * s / c.powi(4))) / unit;
        let c_z = c_z1.max(c_z2);
        let c_v = self.j / (self.d2 * c * c) / unit;
        AircraftConstants { a, b, gamma_phi: a.hypot(b), c_z, c_v, c_zeta: c_z.max(c_v) }
    }

    /// Open-loop vector field for `x = (φ, φ̇)` and `u` in force units.
    pub fn dynamics(&self, x: &[f64], u: f64) -> Vector {
        let phi = x[0];
        let acc = (-self.d1 * self.lift(phi) + u * self.force_unit * self.d2) * phi.cos() / self.j;
        Vector::from_vec(vec![x[1], acc])
    }
}

impl FlatPlant for AircraftParams {
    fn name(&self) -> &'static str {
        "aircraft"
    }

    fn state_dim(&self) -> usize {
        2
    }

    fn input_dim(&self) -> usize {
        1
    }

    fn flat_dim(&self) -> usize {
        2
    }

    fn flat_input_dim(&self) -> usize {
        1
    }

    fn to_flat(&self, x: &[f64]) -> Vector {
        Vector::from_column_slice(&x[..2])
    }

    fn from_flat(&self, z: &[f64]) -> Result<Vector> {
        Ok(Vector::from_column_slice(&z[..2]))
    }

    fn phi(&self, z: &[f64], v: &[f64]) -> Result<Vector> {
        Ok(Vector::from_vec(vec![self.phi_scalar(z[0], v[0])?]))
    }

    fn closed_loop_rhs(&self, x: &[f64], v: &[f64]) -> Result<Vector> {
        let u = self.phi_scalar(x[0], v[0])?;
        Ok(self.dynamics(x, u))
    }

    fn brunovsky(&self) -> (Matrix, Matrix) {
        (Matrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]), Matrix::from_row_slice(2, 1, &[0.0, 1.0]))
    }

    fn input_excess(&self, u: &[f64]) -> f64 {
        u[0].abs() - self.u_bound()
    }

    fn state_set(&self) -> HPolytope {
        HPolytope::new(Matrix::from_row_slice(1, 2, &[1.0, 0.0]), Vector::from_vec(vec![self.stall_angle()]))
            .expect("stall row is finite")
    }

    fn network_input_map(&self) -> Matrix {
        Matrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0])
    }

    fn workspace(&self) -> (Vec<f64>, Vec<f64>) {
        (vec![-self.phi_bar, -self.v_bar], vec![self.phi_bar, self.v_bar])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phi_at_origin_and_slope() {
        let p = AircraftParams::default();
        assert!((p.phi_scalar(0.0, 0.0).unwrap() - 4.0 * 2.5e5 / (42.0 * 1e5)).abs() < 1e-12);
        assert!((p.phi_scalar(0.0, 0.0).unwrap() - 0.2381).abs() < 1e-4);
        let (_, dv) = p.phi_grad(0.0, 0.0).unwrap();
        assert!((dv - 1.0714).abs() < 1e-4);
        assert!(p.phi_scalar(std::f64::consts::FRAC_PI_2, 0.0).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let p = AircraftParams::default();
        for &(z, v) in &[(0.1, 2.0), (-0.3, -4.0), (0.34, 5.0)] {
            let (dz, dv) = p.phi_grad(z, v).unwrap();
            let h = 1e-6;
            let fz = (p.phi_scalar(z + h, v).unwrap() - p.phi_scalar(z - h, v).unwrap()) / (2.0 * h);
            let fv = (p.phi_scalar(z, v + h).unwrap() - p.phi_scalar(z, v - h).unwrap()) / (2.0 * h);
            assert!((dz - fz).abs() < 1e-5 * dz.abs().max(1.0));
            assert!((dv - fv).abs() < 1e-6);
        }
    }

    #[test]
    fn stall_angle_and_bound() {
        let p = AircraftParams::default();
        assert!((p.stall_angle() - 0.2571).abs() < 1e-3);
        assert_eq!(p.u_bound(), 5.0);
    }

    #[test]
    fn constants_match_closed_forms() {
        let k = AircraftParams::default().lipschitz();
        // independent arithmetic
        let c = 0.349f64.cos();
        let a = 4.5e6 / (42.0 * c) / 1e5;
        assert!((k.a - a).abs() < 1e-12);
        assert!((k.gamma_phi - 29.42).abs() < 0.05);
        assert!((k.c_v - 1.2134).abs() < 1e-3);
        assert!((k.c_z - 538.9626).abs() < 0.5);
        assert_eq!(k.c_zeta, k.c_z);
    }
}
