#![allow(clippy::type_complexity)]

mod report;

use std::fmt;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use clap::{Parser, Subcommand};
use flatpwa::controllers::verify_clf;
use flatpwa::error_bounds::{GridOptions, TaylorCenter};
use flatpwa::scenario::{certify, taylor_table, true_map, Decomposed, Problem, Scenario};
use flatpwa::sim::write_csv;
use flatpwa::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use report::*;

/// Neural-network feedback linearization with mixed-integer control.
#[derive(Parser)]
#[command(name = "flatpwa", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Enumerate the network's affine cells; writes cells.json.
    Enumerate(Args),
    /// Certify the approximation error; writes certificate.json.
    Certify(Args),
    /// Run the closed loop; writes trajectory.csv and summary.json.
    Simulate(Args),
    /// Report the big-M constants per cell; writes bigm.json.
    Bigm(Args),
    /// Check the CLF LMI for the scenario's P and γ; writes clf.json.
    VerifyClf(Args),
}

#[derive(clap::Args)]
struct Args {
    /// Scenario TOML file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (default: the scenario's out_dir, else ./out).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for grid sweeps and branch-and-bound.
    #[arg(long)]
    threads: Option<usize>,
    /// Seed for randomized spot checks.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Wall-clock budget: per controller step for simulate, total for certify.
    #[arg(long)]
    budget_ms: Option<u64>,
}

/// Process exit status with a message.
struct Failure {
    code: u8,
    msg: String,
}

const INFEASIBLE: u8 = 2;
const BUDGET: u8 = 3;
const CONFIG: u8 = 4;

impl Failure {
    fn new(code: u8, msg: impl Into<String>) -> Self {
        Failure { code, msg: msg.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Infeasible => INFEASIBLE,
            Error::Budget(_) => BUDGET,
            Error::Config { .. }
            | Error::Parse(_)
            | Error::Invalid(_)
            | Error::Dimension(_)
            | Error::BigMTooSmall { .. }
            | Error::InvalidTightening
            | Error::EmptyUnion
            | Error::NotSymmetric(_)
            | Error::NotPsd(_)
            | Error::TooLarge { .. } => CONFIG,
            _ => 1,
        };
        Failure::new(code, e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::new(1, e.to_string())
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.msg)
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(CONFIG);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}

fn run(cmd: Command) -> Outcome {
    let (args, f): (&Args, fn(&Args, Scenario, &Path) -> Outcome) = match &cmd {
        Command::Enumerate(a) => (a, enumerate),
        Command::Certify(a) => (a, certify_cmd),
        Command::Simulate(a) => (a, simulate),
        Command::Bigm(a) => (a, bigm),
        Command::VerifyClf(a) => (a, verify),
    };
    let sc = Scenario::load(&args.config)?;
    if let Some(n) = args.threads.or(sc.threads) {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::new(1, e.to_string()))?;
    }
    let out = match (&args.out, &sc.out_dir) {
        (Some(o), _) => o.clone(),
        (None, Some(o)) => sc.resolve(o),
        (None, None) => PathBuf::from("out"),
    };
    fs::create_dir_all(&out)?;
    f(args, sc, &out)
}

fn enumerate(_: &Args, sc: Scenario, out: &Path) -> Outcome {
    let t = Instant::now();
    let dec = Problem::decompose(&sc)?;
    let wall = t.elapsed();
    let cells = dec.d.pieces.iter().map(CellReport::new).collect::<flatpwa::Result<Vec<_>>>()?;
    let report = CellsReport {
        plant: sc.plant.clone(),
        workspace_lo: dec.lo.clone(),
        workspace_hi: dec.hi.clone(),
        count: cells.len(),
        wall_s: wall.as_secs_f64(),
        cells,
    };
    write_json(&out.join("cells.json"), &report)?;
    println!("{}: {} cells in {:.3} s", sc.plant, report.count, report.wall_s);
    for c in &report.cells {
        println!("  {}  {} vertices", c.pattern, c.vertex_count);
    }
    Ok(())
}

fn off_grid(dec: &Decomposed, samples: usize, seed: u64, eps_bar: &[f64]) -> flatpwa::Result<OffGridCheck> {
    let phi = true_map(&dec.params);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = vec![0.0; eps_bar.len()];
    for _ in 0..samples {
        let x: Vec<f64> = dec.lo.iter().zip(&dec.hi).map(|(&l, &h)| if l < h { rng.gen_range(l..h) } else { l }).collect();
        let e = phi(&x) - dec.d.eval(&x)?;
        for (w, e) in worst.iter_mut().zip(e.iter()) {
            *w = f64::max(*w, e.abs());
        }
    }
    let sound = worst.iter().zip(eps_bar).all(|(w, e)| w <= e);
    Ok(OffGridCheck { samples, seed, worst, sound })
}

fn certify_cmd(args: &Args, sc: Scenario, out: &Path) -> Outcome {
    let spec = sc.certify.clone().ok_or_else(|| Failure::new(CONFIG, "scenario has no [certify] table"))?;
    let start = Instant::now();
    let deadline = args.budget_ms.map(|ms| start + Duration::from_millis(ms));
    let dec = Problem::decompose(&sc)?;
    let cert = certify(&dec, &spec, &GridOptions { deadline, ..Default::default() })?;
    let check = off_grid(&dec, spec.check_samples, args.seed, &cert.eps_bar)?;
    let taylor = taylor_table(&dec, &sc.bounds, TaylorCenter::VertexCentroid)?;
    println!(
        "{}: eps_grid {:?}, eps_bar {:?} over {} points in {:.2} s",
        sc.plant,
        cert.eps_grid,
        cert.eps_bar,
        cert.points,
        cert.wall.as_secs_f64()
    );
    println!("off-grid check ({} samples, seed {}): worst {:?}", check.samples, check.seed, check.worst);
    if let Some(rows) = &taylor {
        println!("  cell   center                 radius   eps_T     eps_H    total");
        for r in rows {
            println!(
                "  {:<5}  ({:>8.4}, {:>8.4})  {:>7.4}  {:>8.1}  {:>7.4}  {:>8.1}",
                r.pattern, r.center[0], r.center[1], r.radius, r.eps_taylor, r.eps_vertex, r.total
            );
        }
    }
    let sound = check.sound;
    let report = CertificateReport { plant: sc.plant.clone(), certificate: cert, off_grid: check, taylor };
    write_json(&out.join("certificate.json"), &report)?;
    if !sound {
        return Err(Failure::new(1, "an off-grid sample exceeds the certified bound"));
    }
    Ok(())
}

fn simulate(args: &Args, mut sc: Scenario, out: &Path) -> Outcome {
    if let Some(ms) = args.budget_ms {
        sc.solver.time_limit_ms = Some(ms);
    }
    let p = Problem::build(sc)?;
    let cfg = p.sim_config()?;
    let o = p.closed_loop()?.simulate(&p.scenario.sim.x0, &cfg)?;
    let mut w = BufWriter::new(File::create(out.join("trajectory.csv"))?);
    write_csv(p.plant.as_ref(), &o.rows, &mut w)?;
    let s = &o.summary;
    let report = SimReport {
        plant: &p.scenario.plant,
        controller: format!("{:?}", p.scenario.controller).to_lowercase(),
        summary: s,
        aborted: o.aborted.as_deref(),
    };
    write_json(&out.join("summary.json"), &report)?;
    println!("{} {}: {} steps", report.plant, report.controller, s.steps);
    println!("  input violations {} (max excess {:.3e})", s.input_violations, s.max_input_excess);
    println!("  state violations {} (max excess {:.3e})", s.state_violations, s.max_state_excess);
    println!("  forecast violations {} (max excess {:.3e})", s.forecast_violations, s.max_forecast_excess);
    println!("  solver ms mean {:.3} max {:.3}", s.mean_solver_ms, s.max_solver_ms);
    println!("  final error {:.3e}", s.final_error);
    match o.aborted {
        Some(msg) if o.aborted_infeasible => Err(Failure::new(INFEASIBLE, msg)),
        Some(msg) => Err(Failure::new(BUDGET, msg)),
        None => Ok(()),
    }
}

fn bigm(_: &Args, sc: Scenario, out: &Path) -> Outcome {
    let uniform = sc.tuning.big_m;
    let mut certified = sc.clone();
    certified.tuning.big_m = None;
    let p = Problem::build(certified)?;
    let per_cell = p.big_m.per_cell();
    let cells: Vec<BigMCell> = p
        .union
        .members
        .iter()
        .zip(&p.big_m.rows)
        .zip(&per_cell)
        .map(|((m, rows), &m_star)| BigMCell { pattern: m.pattern.to_string(), m_star, rows: rows.clone() })
        .collect();
    let required = per_cell.iter().copied().fold(0.0, f64::max);
    let override_ok = uniform.is_none_or(|m| m >= required);
    println!("{}: {} members", sc.plant, cells.len());
    for c in &cells {
        println!("  {}  M* = {:.4}", c.pattern, c.m_star);
    }
    if let Some(m) = uniform {
        println!("uniform override {m}: {}", if override_ok { "valid" } else { "too small" });
    }
    write_json(&out.join("bigm.json"), &BigMReport { plant: sc.plant.clone(), cells, uniform_override: uniform, override_ok })?;
    if !override_ok {
        return Err(Failure::new(CONFIG, format!("big-M override is below the required {required:.4}")));
    }
    Ok(())
}

fn verify(_: &Args, sc: Scenario, out: &Path) -> Outcome {
    let p = Problem::build(sc)?;
    let spec = p.clf_spec()?;
    let (a, b) = p.plant.brunovsky();
    let r = verify_clf(&spec, &a, &b)?;
    write_json(&out.join("clf.json"), &r)?;
    println!("lmi max eig {:.4e}, P min eig {:.4e}: {}", r.lmi_max_eig, r.pd_min_eig, if r.pass { "pass" } else { "fail" });
    if !r.pass {
        return Err(Failure::new(1, "CLF conditions do not hold"));
    }
    Ok(())
}
