//! Sup-norm bounds on `|Φ − Φnn|`: dense grid with Lipschitz padding, and
//! per-cell Taylor expansion checked at the vertices.

use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernel::{spectral_norm, Vector};
use crate::polytope::{centroid_l1_ball, min_enclosing_l1_ball};
use crate::relu_pwa::{AffinePiece, PwaDecomposition};

/// Uniform grid `{i·δ}` clipped to a box, one step per axis.
#[derive(Debug, Clone, Serialize)]
pub struct GridSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub step: Vec<f64>,
    /// Add `lo` and `hi` to each axis when they are not multiples of the step
    /// and pad with the exact covering radius. Off by default: the plain grid
    /// with `ρ̄ = ‖δ/2‖` leaves the strip between the last multiple of `δ` and
    /// the box edge slightly under-covered.
    pub include_endpoints: bool,
}

impl GridSpec {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, step: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.len() != step.len() || lo.is_empty() {
            return Err(Error::dim("grid bounds and steps"));
        }
        if step.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::Invalid("grid steps must be positive".into()));
        }
        if lo.iter().zip(&hi).any(|(l, h)| !(l <= h) || !l.is_finite() || !h.is_finite()) {
            return Err(Error::Invalid("grid bounds must satisfy lo <= hi".into()));
        }
        Ok(GridSpec { lo, hi, step, include_endpoints: false })
    }

    pub fn with_endpoints(mut self, on: bool) -> Self {
        self.include_endpoints = on;
        self
    }

    pub fn dim(&self) -> usize {
        self.step.len()
    }

    pub fn axis(&self, i: usize) -> Vec<f64> {
        let (lo, hi, d) = (self.lo[i], self.hi[i], self.step[i]);
        let eps = 1e-9 * d;
        let first = ((lo - eps) / d).ceil() as i64;
        let last = ((hi + eps) / d).floor() as i64;
        let mut pts: Vec<f64> = (first..=last).map(|k| k as f64 * d).collect();
        if self.include_endpoints {
            if pts.first().is_none_or(|&p| p - lo > eps) {
                pts.insert(0, lo);
            }
            if pts.last().is_none_or(|&p| hi - p > eps) {
                pts.push(hi);
            }
        }
        pts
    }

    pub fn n_points(&self) -> u128 {
        (0..self.dim()).map(|i| self.axis(i).len() as u128).product()
    }

    /// `‖δ/2‖₂`, the granularity of an unbounded uniform grid.
    pub fn rho_bar(&self) -> f64 {
        self.step.iter().map(|d| (d / 2.0).powi(2)).sum::<f64>().sqrt()
    }

    /// Per-axis largest distance from a box point to its nearest grid coordinate.
    pub fn axis_cover(&self) -> Vec<f64> {
        (0..self.dim())
            .map(|i| {
                let pts = self.axis(i);
                let (Some(&first), Some(&last)) = (pts.first(), pts.last()) else {
                    return self.hi[i] - self.lo[i];
                };
                let inner = pts.windows(2).map(|w| (w[1] - w[0]) / 2.0).fold(0.0, f64::max);
                inner.max(first - self.lo[i]).max(self.hi[i] - last)
            })
            .collect()
    }

    /// Exact `sup_ζ min_g ‖ζ − g‖₂` over the box for this grid.
    pub fn covering_radius(&self) -> f64 {
        self.axis_cover().iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    /// Radius used to pad the grid error.
    pub fn padding_radius(&self) -> f64 {
        if self.include_endpoints {
            self.covering_radius()
        } else {
            self.rho_bar()
        }
    }
}

/// Smallest `ρ̄` that keeps the padding below `Δε`.
pub fn required_granularity(delta_eps: f64, gamma_eps: f64) -> Result<f64> {
    if !(delta_eps > 0.0 && gamma_eps > 0.0) {
        return Err(Error::Invalid("required_granularity needs positive inputs".into()));
    }
    Ok(delta_eps / gamma_eps)
}

#[derive(Debug, Clone, Serialize)]
pub struct ErrorCertificate {
    /// Largest grid error per output.
    pub eps_grid: Vec<f64>,
    /// Lipschitz constant of the error per output (Euclidean form) or the
    /// padding slope used by the axiswise form.
    pub gamma: Vec<f64>,
    pub rho: f64,
    /// Certified bound per output.
    pub eps_bar: Vec<f64>,
    pub points: u128,
    #[serde(serialize_with = "secs")]
    pub wall: Duration,
}

fn secs<S: serde::Serializer>(d: &Duration, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_f64(d.as_secs_f64())
}

/// Options for the grid sweep.
#[derive(Debug, Clone, Copy)]
pub struct GridOptions {
    pub max_points: u128,
    /// Abort with [`Error::Budget`] once this instant passes.
    pub deadline: Option<Instant>,
}

impl Default for GridOptions {
    fn default() -> Self {
        GridOptions { max_points: 50_000_000, deadline: None }
    }
}

/// Max `|Φ − Φnn|` per output over the grid.
pub fn grid_max_error<F>(phi: F, d: &PwaDecomposition, g: &GridSpec, opts: &GridOptions) -> Result<(Vec<f64>, u128)>
where
    F: Fn(&[f64]) -> Vector + Sync,
{
    let n0 = d.network().n0();
    let n2 = d.network().n2();
    if g.dim() != n0 {
        return Err(Error::dim("grid dimension differs from network input"));
    }
    let axes: Vec<Vec<f64>> = (0..n0).map(|i| g.axis(i)).collect();
    let total = g.n_points();
    if total > opts.max_points {
        return Err(Error::TooLarge {
            what: "grid point count (use a coarser step)",
            limit: opts.max_points.min(usize::MAX as u128) as usize,
        });
    }
    let total = total as usize;
    let worst = (0..total)
        .into_par_iter()
        .with_min_len(4096)
        .try_fold(
            || (vec![0.0; n2], vec![0.0; n0]),
            |(mut acc, mut x), mut idx| {
                if idx % 4096 == 0 && opts.deadline.is_some_and(|d| Instant::now() > d) {
                    return Err(Error::Budget("certification"));
                }
                for (i, ax) in axes.iter().enumerate().rev() {
                    x[i] = ax[idx % ax.len()];
                    idx /= ax.len();
                }
                let e = phi(&x) - d.eval(&x)?;
                for (a, v) in acc.iter_mut().zip(e.iter()) {
                    *a = f64::max(*a, v.abs());
                }
                Ok::<_, Error>((acc, x))
            },
        )
        .map(|r| r.map(|(acc, _)| acc))
        .try_reduce(|| vec![0.0; n2], |a, b| Ok(a.iter().zip(&b).map(|(x, y)| x.max(*y)).collect()))?;
    Ok((worst, total as u128))
}

/// Row-wise Lipschitz constants `max_i ‖F_i[j,:]‖₂` of the decomposition.
pub fn row_lipschitz(d: &PwaDecomposition) -> Vec<f64> {
    (0..d.network().n2())
        .map(|j| d.pieces.iter().map(|p| spectral_norm(&p.map.rows(j, 1).into_owned())).fold(0.0, f64::max))
        .collect()
}

/// Grid certificate `ε̄ = ε̃ + (γ_Φ + γ_nn)·ρ`, `ρ` from [`GridSpec::padding_radius`].
///
/// `gamma_phi` holds one Lipschitz constant per output row of `Φ` over the box.
pub fn grid_error_certificate<F>(
    phi: F,
    d: &PwaDecomposition,
    g: &GridSpec,
    gamma_phi: &[f64],
    opts: &GridOptions,
) -> Result<ErrorCertificate>
where
    F: Fn(&[f64]) -> Vector + Sync,
{
    if gamma_phi.len() != d.network().n2() || gamma_phi.iter().any(|&v| !(v >= 0.0)) {
        return Err(Error::Invalid("one nonnegative Lipschitz constant per output".into()));
    }
    let t = Instant::now();
    let (eps_grid, points) = grid_max_error(phi, d, g, opts)?;
    let gamma: Vec<f64> = gamma_phi.iter().zip(row_lipschitz(d)).map(|(a, b)| a + b).collect();
    let rho = g.padding_radius();
    let eps_bar = eps_grid.iter().zip(&gamma).map(|(e, l)| e + l * rho).collect();
    Ok(ErrorCertificate { eps_grid, gamma, rho, eps_bar, points, wall: t.elapsed() })
}

/// Range of one partial derivative `∂Φ_j/∂x_i` over the box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlopeRange {
    pub min: f64,
    pub max: f64,
}

/// Grid certificate padded axis by axis.
///
/// Inside a cell the error slope along axis `i` is `∂Φ_j/∂x_i − F[j,i]`, so with
/// `slopes[j][i]` bracketing the first term the error moves by at most
/// `Σ_i L_ji·c_i` to the nearest grid point, `c_i` the per-axis cover. Continuity
/// of the error carries the bound across cell faces. Much tighter than the
/// Euclidean form when `Φ` is affine along some axes.
pub fn axiswise_error_certificate<F>(
    phi: F,
    d: &PwaDecomposition,
    g: &GridSpec,
    slopes: &[Vec<SlopeRange>],
    opts: &GridOptions,
) -> Result<ErrorCertificate>
where
    F: Fn(&[f64]) -> Vector + Sync,
{
    let (n0, n2) = (d.network().n0(), d.network().n2());
    if slopes.len() != n2 || slopes.iter().any(|s| s.len() != n0) {
        return Err(Error::dim("slope table must be outputs x inputs"));
    }
    let t = Instant::now();
    let (eps_grid, points) = grid_max_error(phi, d, g, opts)?;
    let cover = g.axis_cover();
    let pad: Vec<f64> = (0..n2)
        .map(|j| {
            (0..n0)
                .map(|i| {
                    let s = slopes[j][i];
                    let l = d
                        .pieces
                        .iter()
                        .map(|p| (s.max - p.map[(j, i)]).abs().max((s.min - p.map[(j, i)]).abs()))
                        .fold(0.0, f64::max);
                    l * cover[i]
                })
                .sum()
        })
        .collect();
    let eps_bar = eps_grid.iter().zip(&pad).map(|(e, p)| e + p).collect();
    let rho = g.covering_radius();
    let gamma = pad.iter().map(|p| if rho > 0.0 { p / rho } else { 0.0 }).collect();
    Ok(ErrorCertificate { eps_grid, gamma, rho, eps_bar, points, wall: t.elapsed() })
}

/// Where the Taylor expansion of each cell is centered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum TaylorCenter {
    /// Center of the smallest enclosing 1-norm ball.
    #[default]
    MinEnclosing,
    /// Mean of the vertices, radius to the farthest vertex.
    VertexCentroid,
}

#[derive(Debug, Clone, Serialize)]
pub struct TaylorCellBound {
    pub pattern: String,
    pub center: Vec<f64>,
    pub radius: f64,
    pub eps_taylor: f64,
    pub eps_vertex: f64,
    pub total: f64,
}

/// Per-cell bound `C_ζ r/2 + max_vertex |Φnn − φ_lin|` for a scalar `Φ`.
///
/// `pieces` may be the raw decomposition or the output-bounded cells of an
/// admissible union.
pub fn taylor_cell_bounds<F, G>(
    phi: F,
    grad: G,
    pieces: &[AffinePiece],
    c_zeta: f64,
    center: TaylorCenter,
) -> Result<Vec<TaylorCellBound>>
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> Vector,
{
    if pieces.iter().any(|p| p.map.nrows() != 1) {
        return Err(Error::dim("Taylor bounds are for scalar maps"));
    }
    if !(c_zeta >= 0.0) {
        return Err(Error::Invalid("C_zeta must be nonnegative".into()));
    }
    pieces
        .iter()
        .map(|p| {
            let vs = p.cell.vertices()?;
            let (ze, r) = match center {
                TaylorCenter::MinEnclosing => min_enclosing_l1_ball(&vs)?,
                TaylorCenter::VertexCentroid => centroid_l1_ball(&vs)?,
            };
            let (f0, g0) = (phi(ze.as_slice()), grad(ze.as_slice()));
            let eps_vertex = vs
                .points
                .iter()
                .map(|v| (p.eval(v.as_slice())[0] - (f0 + g0.dot(&(v - &ze)))).abs())
                .fold(0.0, f64::max);
            let eps_taylor = c_zeta * r / 2.0;
            Ok(TaylorCellBound {
                pattern: p.pattern.to_string(),
                center: ze.iter().copied().collect(),
                radius: r,
                eps_taylor,
                eps_vertex,
                total: eps_taylor + eps_vertex,
            })
        })
        .collect()
}
