use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use mfgaccel::analysis::run_sweep;
use mfgaccel::config::RunConfig;
use mfgaccel::io::{self, write_atomic, write_json};
use mfgaccel::mfg::{self, free_flow, SolutionKind};
use mfgaccel::model::{audit_assumptions, AuditBox};
use mfgaccel::trajectory::{minimize_direct, solve_el_bvp};
use mfgaccel::Error;

#[derive(Parser)]
#[command(name = "mfgaccel", version, about = "Acceleration-penalized mean field games on a 1D phase grid")]
struct Cli {
    /// JSON run configuration; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides the sampling seed of the initial measure.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum LimitKind {
    Classical,
    Control,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the penalized system for one eps.
    SolveEps {
        #[arg(long)]
        eps: f64,
    },
    /// Solve a limit system.
    SolveLimit {
        #[arg(long, value_enum)]
        kind: LimitKind,
    },
    /// Run the penalty ladder and write report.csv and rates.json.
    Sweep,
    /// Optimal curve from one initial state, by direct minimization and by
    /// the Euler-Lagrange boundary value problem.
    Traj {
        #[arg(long)]
        eps: f64,
        #[arg(long, allow_hyphen_values = true)]
        x: f64,
        #[arg(long, allow_hyphen_values = true)]
        v: f64,
        /// Number of time nodes of the curve.
        #[arg(long, default_value_t = 401)]
        m: usize,
    },
    /// Check the structural assumptions of the configured model on the grid box.
    Audit {
        #[arg(long, default_value_t = 41)]
        samples: usize,
    },
}

enum Failure {
    Invalid(String),
    NotConverged(String),
    Other(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidInput(_) | Error::Config(_) | Error::Unsupported(_) | Error::Json(_) => {
                Failure::Invalid(e.to_string())
            }
            Error::Numerical { .. } | Error::Transport { .. } => Failure::NotConverged(e.to_string()),
            Error::Io(_) => Failure::Other(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::NotConverged(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
        Err(Failure::Other(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.measure.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let cfg = load_config(cli)?;
    let out = cli.out.as_path();
    match cli.command {
        Command::SolveEps { eps } => {
            if eps == 0.0 {
                return Err(Failure::Invalid(
                    "eps = 0 is the limit system; use `solve-limit --kind classical|control`".into(),
                ));
            }
            let problem = cfg.problem()?;
            let sol = mfg::solve_eps_system(&problem, eps)?;
            finish_solution(out, &sol, &cfg)
        }
        Command::SolveLimit { kind } => {
            let kind = match kind {
                LimitKind::Classical => SolutionKind::ClassicalLimit,
                LimitKind::Control => SolutionKind::MfgOfControl,
            };
            let problem = cfg.problem()?;
            let sol = mfg::solve_limit(&problem, kind)?;
            finish_solution(out, &sol, &cfg)
        }
        Command::Sweep => {
            let problem = cfg.problem()?;
            let plan = cfg.sweep_plan()?;
            let report = run_sweep(&problem, &plan)?;
            write_atomic(&out.join("report.csv"), report.csv().as_bytes())?;
            write_atomic(&out.join("probes.csv"), report.probes_csv().as_bytes())?;
            write_json(&out.join("rates.json"), &report.rates_json())?;
            write_json(&out.join("meta.json"), &json!({ "config": cfg, "rows": report.rows }))?;
            for r in &report.rows {
                if let Some(flag) = &r.flag {
                    eprintln!("warning: eps = {} flagged: {flag}", r.eps);
                }
            }
            print!("{}", report.csv());
            Ok(())
        }
        Command::Traj { eps, x, v, m } => traj(out, &cfg, eps, x, v, m),
        Command::Audit { samples } => {
            let g = &cfg.grid;
            let bx = AuditBox {
                x: (-g.r_x, g.r_x),
                v: (-g.r_v, g.r_v),
            };
            let audit = audit_assumptions(&cfg.spec(), Some(&cfg.model.terminal), bx, samples);
            let record = json!({ "passed": audit.passed(), "worst": audit.worst(), "audit": audit });
            write_json(&out.join("audit.json"), &record)?;
            println!("{}", serde_json::to_string_pretty(&record).map_err(Error::from)?);
            if audit.passed() {
                Ok(())
            } else {
                Err(Failure::Invalid(format!("model fails the structural assumptions (worst margin {})", audit.worst())))
            }
        }
    }
}

fn finish_solution(out: &Path, sol: &mfg::MFGSolution, cfg: &RunConfig) -> Result<(), Failure> {
    io::write_solution(out, sol, cfg, cfg.output.time_stride)?;
    println!(
        "{:?} eps={} iterations={} gap={} converged={}",
        sol.kind, sol.eps, sol.iterations, sol.fixed_point_gap, sol.converged
    );
    if sol.converged {
        Ok(())
    } else {
        Err(Failure::NotConverged(format!(
            "no fixed point after {} iterations (gap {}); artifacts written to {}",
            sol.iterations,
            sol.fixed_point_gap,
            out.display()
        )))
    }
}

fn traj(out: &Path, cfg: &RunConfig, eps: f64, x: f64, v: f64, m: usize) -> Result<(), Failure> {
    let problem = cfg.problem()?;
    let grid = problem.grid;
    if !grid.x.contains(x) || !grid.v.contains(v) {
        return Err(Failure::Invalid(format!(
            "initial state ({x}, {v}) lies outside the grid box [{}, {}] x [{}, {}]",
            grid.x.min, grid.x.max, grid.v.min, grid.v.max
        )));
    }
    if eps.is_nan() || eps < 0.0 {
        return Err(Failure::Invalid(format!("eps must be nonnegative, got {eps}")));
    }
    // the population follows free transport of the initial measure
    let coupling = problem.freeze(&free_flow(&problem.mu0, &grid.t));
    let t_final = grid.t_final();
    let (spec, g) = (&problem.spec, &problem.terminal);
    let direct = minimize_direct(eps, 0.0, t_final, x, v, spec, &coupling, g, m)?;
    let bvp = solve_el_bvp(eps, 0.0, t_final, x, v, spec, &coupling, g, m)?;
    write_atomic(&out.join("direct.csv"), io::curve_csv(&direct.curve).as_bytes())?;
    write_atomic(&out.join("bvp.csv"), io::curve_csv(&bvp.curve).as_bytes())?;
    let gap = (direct.cost - bvp.cost).abs();
    let record = json!({
        "eps": eps, "x": x, "v": v, "m": m,
        "direct": { "cost": direct.cost, "stationarity": direct.stationarity, "iterations": direct.iterations, "converged": direct.converged },
        "bvp": { "cost": bvp.cost, "residual": bvp.residual, "raw_residual": bvp.raw_residual, "boundary_residuals": bvp.boundary_residuals, "converged": bvp.converged },
        "cost_gap": gap,
        "config": cfg,
    });
    write_json(&out.join("traj.json"), &record)?;
    println!("direct={} bvp={} gap={gap}", direct.cost, bvp.cost);
    if direct.converged && bvp.converged {
        Ok(())
    } else {
        Err(Failure::NotConverged("curve solvers did not meet their tolerances".into()))
    }
}
