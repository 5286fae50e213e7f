use std::fs;
use std::path::Path;

use flatpwa::error_bounds::{ErrorCertificate, TaylorCellBound};
use flatpwa::kernel::{Matrix, Vector};
use flatpwa::relu_pwa::AffinePiece;
use flatpwa::sim::SimSummary;
use serde::Serialize;

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn vec(v: &Vector) -> Vec<f64> {
    v.iter().copied().collect()
}

#[derive(Serialize)]
pub struct CellReport {
    pub pattern: String,
    /// `F(α)`, one row per network output.
    pub map: Vec<Vec<f64>>,
    pub offset: Vec<f64>,
    /// Support cell `Θ y ≤ θ` in network-input coordinates.
    pub theta: Vec<Vec<f64>>,
    pub theta_rhs: Vec<f64>,
    pub vertex_count: usize,
    pub vertices: Vec<Vec<f64>>,
}

impl CellReport {
    pub fn new(p: &AffinePiece) -> flatpwa::Result<Self> {
        let vs = p.cell.vertices()?;
        Ok(CellReport {
            pattern: p.pattern.to_string(),
            map: rows(&p.map),
            offset: vec(&p.offset),
            theta: rows(p.cell.a()),
            theta_rhs: vec(p.cell.b()),
            vertex_count: vs.len(),
            vertices: vs.points.iter().map(vec).collect(),
        })
    }
}

#[derive(Serialize)]
pub struct CellsReport {
    pub plant: String,
    pub workspace_lo: Vec<f64>,
    pub workspace_hi: Vec<f64>,
    pub count: usize,
    pub wall_s: f64,
    pub cells: Vec<CellReport>,
}

#[derive(Serialize)]
pub struct OffGridCheck {
    pub samples: usize,
    pub seed: u64,
    pub worst: Vec<f64>,
    pub sound: bool,
}

#[derive(Serialize)]
pub struct CertificateReport {
    pub plant: String,
    pub certificate: ErrorCertificate,
    pub off_grid: OffGridCheck,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub taylor: Option<Vec<TaylorCellBound>>,
}

#[derive(Serialize)]
pub struct BigMCell {
    pub pattern: String,
    pub m_star: f64,
    pub rows: Vec<f64>,
}

#[derive(Serialize)]
pub struct BigMReport {
    pub plant: String,
    pub cells: Vec<BigMCell>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub uniform_override: Option<f64>,
    pub override_ok: bool,
}

#[derive(Serialize)]
pub struct SimReport<'a> {
    pub plant: &'a str,
    pub controller: String,
    pub summary: &'a SimSummary,
    pub aborted: Option<&'a str>,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> std::io::Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
    fs::write(path, text + "\n")
}
