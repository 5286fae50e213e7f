//! Planar fixed-wing UAV `ẋ1 = u1 cos x3, ẋ2 = u1 sin x3, ẋ3 = g u2 / u1`.
//!
//! Flat output is the position; `z = (x1, ẋ1, x2, ẋ2)` and `v` are the two
//! accelerations. The airspeed `u1` is a function of `z`, so the closed loop
//! carries it as a fourth state `s` (dynamic extension).

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{positive, FlatPlant};
use crate::error::{Error, Result};
use crate::kernel::{Matrix, Vector};
use crate::polytope::HPolytope;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UavParams {
    pub u1_min: f64,
    pub u1_max: f64,
    pub u2_max: f64,
    pub g: f64,
    /// Number of vertices of the inner polygon replacing `‖v‖ ≤ ū2 g`.
    pub polygon_sides: usize,
    /// Tightening certified for the airspeed network.
    pub eps: f64,
    /// Half-width of the velocity box the network is enumerated on.
    pub speed_box: f64,
}

impl Default for UavParams {
    fn default() -> Self {
        UavParams {
            u1_min: 10.0,
            u1_max: 26.0,
            u2_max: 0.5774,
            g: 9.81,
            polygon_sides: 16,
            eps: 0.981,
            speed_box: 26.0,
        }
    }
}

impl UavParams {
    pub fn validate(&self) -> Result<()> {
        for (n, v) in [
            ("u1_min", self.u1_min),
            ("u1_max", self.u1_max),
            ("u2_max", self.u2_max),
            ("g", self.g),
            ("speed_box", self.speed_box),
        ] {
            positive(n, v)?;
        }
        if self.u1_min >= self.u1_max {
            return Err(Error::Parse("u1_min must be below u1_max".into()));
        }
        if !(3..=4096).contains(&self.polygon_sides) {
            return Err(Error::Parse("polygon_sides must be in 3..=4096".into()));
        }
        if !(self.eps >= 0.0 && self.eps.is_finite()) {
            return Err(Error::Parse("eps must be nonnegative".into()));
        }
        Ok(())
    }

    /// Radius `ū2 g` of the acceleration disk.
    pub fn accel_radius(&self) -> f64 {
        self.u2_max * self.g
    }

    /// Regular polygon inscribed in the acceleration disk, with its vertices.
    pub fn bank_polygon(&self) -> (HPolytope, Vec<[f64; 2]>) {
        let n = self.polygon_sides;
        let r = self.accel_radius();
        let verts: Vec<[f64; 2]> = (0..n)
            .map(|k| {
                let t = 2.0 * PI * k as f64 / n as f64;
                [r * t.cos(), r * t.sin()]
            })
            .collect();
        let mut a = Matrix::zeros(n, 2);
        let mut b = Vector::zeros(n);
        for k in 0..n {
            let t = 2.0 * PI * (k as f64 + 0.5) / n as f64;
            a[(k, 0)] = t.cos();
            a[(k, 1)] = t.sin();
            b[k] = r * (PI / n as f64).cos();
        }
        (HPolytope::new(a, b).expect("polygon rows are finite"), verts)
    }

    /// `(u1, u2)` from flat velocities and accelerations.
    pub fn flat_inputs(&self, zdot: [f64; 2], v: [f64; 2]) -> Result<(f64, f64)> {
        let u1 = zdot[0].hypot(zdot[1]);
        if u1 <= 1e-9 {
            return Err(Error::Invalid("zero airspeed has no bank-angle input".into()));
        }
        Ok((u1, (v[1] * zdot[0] - v[0] * zdot[1]) / (self.g * u1)))
    }

    /// Open-loop vector field for `x = (x1, x2, x3)`.
    pub fn dynamics(&self, x: &[f64], u: &[f64]) -> Vector {
        Vector::from_vec(vec![u[0] * x[2].cos(), u[0] * x[2].sin(), self.g * u[1] / u[0]])
    }
}

impl FlatPlant for UavParams {
    fn name(&self) -> &'static str {
        "uav"
    }

    fn state_dim(&self) -> usize {
        4
    }

    fn input_dim(&self) -> usize {
        2
    }

    fn flat_dim(&self) -> usize {
        4
    }

    fn flat_input_dim(&self) -> usize {
        2
    }

    fn to_flat(&self, x: &[f64]) -> Vector {
        let (c, s) = (x[2].cos(), x[2].sin());
        Vector::from_vec(vec![x[0], x[3] * c, x[1], x[3] * s])
    }

    fn from_flat(&self, z: &[f64]) -> Result<Vector> {
        let speed = z[1].hypot(z[3]);
        if speed <= 1e-9 {
            return Err(Error::Invalid("heading undefined at zero speed".into()));
        }
        Ok(Vector::from_vec(vec![z[0], z[2], z[3].atan2(z[1]), speed]))
    }

    fn phi(&self, z: &[f64], v: &[f64]) -> Result<Vector> {
        let (u1, u2) = self.flat_inputs([z[1], z[3]], [v[0], v[1]])?;
        Ok(Vector::from_vec(vec![u1, u2]))
    }

    fn closed_loop_rhs(&self, x: &[f64], v: &[f64]) -> Result<Vector> {
        let s = x[3];
        if s <= 1e-9 {
            return Err(Error::Invalid("zero airspeed".into()));
        }
        let (c, sn) = (x[2].cos(), x[2].sin());
        Ok(Vector::from_vec(vec![s * c, s * sn, (v[1] * c - v[0] * sn) / s, v[0] * c + v[1] * sn]))
    }

    fn brunovsky(&self) -> (Matrix, Matrix) {
        let mut a = Matrix::zeros(4, 4);
        a[(0, 1)] = 1.0;
        a[(2, 3)] = 1.0;
        let mut b = Matrix::zeros(4, 2);
        b[(1, 0)] = 1.0;
        b[(3, 1)] = 1.0;
        (a, b)
    }

    fn input_excess(&self, u: &[f64]) -> f64 {
        (self.u1_min - u[0]).max(u[0] - self.u1_max).max(u[1].abs() - self.u2_max)
    }

    fn input_set(&self) -> Option<HPolytope> {
        Some(self.bank_polygon().0)
    }

    fn network_input_map(&self) -> Matrix {
        let mut s = Matrix::zeros(2, 6);
        s[(0, 1)] = 1.0;
        s[(1, 3)] = 1.0;
        s
    }

    fn workspace(&self) -> (Vec<f64>, Vec<f64>) {
        (vec![-self.speed_box; 2], vec![self.speed_box; 2])
    }
}
