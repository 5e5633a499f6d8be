use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use nlpf::config::RunConfig;
use nlpf::diagnostics::{self, StepRecord};
use nlpf::io;
use nlpf::study::{self, StudyReport};
use nlpf::{solver, Error, Result};

#[derive(Parser)]
#[command(name = "nlpf", version, about = "Nonlocal nonisothermal phase-field simulator")]
struct Cli {
    /// Worker threads for per-cell loops (results do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation and write snapshots, records and a manifest.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recompute diagnostics from a run directory.
    Verify {
        /// Directory written by `run`.
        dir: PathBuf,
        /// Comma-separated subset of checks; all applicable ones by default.
        #[arg(long, value_delimiter = ',')]
        checks: Vec<Check>,
        /// Report path, `<dir>/verify.csv` by default.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Smallest truncation satisfying the Moser-bound criterion.
    Calibrate {
        #[arg(long)]
        c_star: f64,
        #[arg(long, default_value_t = 1)]
        dim: usize,
    },
    /// Multi-run protocols.
    Study {
        kind: StudyKind,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Refinement levels for `dt-refinement`.
        #[arg(long, default_value_t = 4)]
        levels: usize,
        /// Perturbation size for `dependence`.
        #[arg(long, default_value_t = 1e-3)]
        delta: f64,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Check {
    Records,
    Energy,
    Entropy,
    Selection,
    Upper,
    LowerBound,
    Generic,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StudyKind {
    DtRefinement,
    Dependence,
    LocalLimit,
    InclusionDependence,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot set up {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    let outcome = match cli.command {
        Command::Run { config, out } => cmd_run(&config, &out),
        Command::Verify { dir, checks, out } => cmd_verify(&dir, &checks, out),
        Command::Calibrate { c_star, dim } => cmd_calibrate(c_star, dim),
        Command::Study { kind, config, out, levels, delta } => cmd_study(kind, &config, &out, levels, delta),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 3 })
        }
    }
}

fn load(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.display().to_string(), source: e })?;
    RunConfig::from_toml(&text)
}

fn cmd_run(config: &Path, out: &Path) -> Result<bool> {
    let cfg = load(config)?;
    let built = cfg.build()?;
    io::ensure_dir(out)?;
    let tr = solver::run(&built.system, built.init.clone(), &built.solver)?;
    let d = built.system.components();
    for (k, s) in tr.snapshots.iter().enumerate() {
        io::write_snapshot(&out.join(io::snapshot_name(k)), &built.system.grid, d, s)?;
    }
    io::write_records(&out.join("records.csv"), &tr.records)?;
    io::write_text(&out.join("manifest.toml"), &cfg.resolved(built.solver.rho).to_toml()?)?;
    println!(
        "{} steps, {} snapshots, rho = {}, rejected steps = {}",
        tr.records.len() - 1,
        tr.snapshots.len(),
        built.solver.rho,
        tr.rejections
    );
    Ok(true)
}

struct Line {
    check: &'static str,
    quantity: &'static str,
    value: f64,
    threshold: f64,
    passed: bool,
}

impl Line {
    fn at_most(check: &'static str, quantity: &'static str, value: f64, threshold: f64) -> Self {
        Line { check, quantity, value, threshold, passed: value <= threshold }
    }

    fn at_least(check: &'static str, quantity: &'static str, value: f64, threshold: f64) -> Self {
        Line { check, quantity, value, threshold, passed: value >= threshold }
    }

    fn info(check: &'static str, quantity: &'static str, value: f64) -> Self {
        Line { check, quantity, value, threshold: f64::NAN, passed: true }
    }
}

fn csv_fields(r: &StepRecord) -> [f64; 8] {
    [r.t, r.total_energy, r.total_entropy, r.min_theta, r.max_theta, r.entropy_residual_min, r.pairing_residual, r.selection_margin]
}

fn cmd_verify(dir: &Path, requested: &[Check], out: Option<PathBuf>) -> Result<bool> {
    let cfg = load(&dir.join("manifest.toml"))?;
    let built = cfg.build()?;
    let sys = &built.system;
    let snaps = io::read_trajectory(dir, &sys.grid, sys.components())?;
    let (records, coarse) = diagnostics::records_from_snapshots(sys, &snaps, &built.solver)?;
    let insulated = sys.boundary.is_insulated();
    let checks: Vec<Check> = if requested.is_empty() {
        let mut all = vec![Check::Records, Check::Energy, Check::Entropy, Check::Selection, Check::Upper];
        if sys.model.uniqueness() {
            all.push(Check::LowerBound);
        }
        if insulated {
            all.push(Check::Generic);
        }
        all
    } else {
        requested.to_vec()
    };
    let stepwise = checks.iter().any(|c| matches!(c, Check::Records | Check::Energy | Check::Entropy | Check::Selection));
    if coarse && stepwise {
        return Err(Error::Precondition("step-wise checks need every step stored (output cadence 1)".into()));
    }

    let mut lines = Vec::new();
    for check in &checks {
        match check {
            Check::Records => {
                let stored = io::read_records(&dir.join("records.csv"))?;
                let same = stored.len() == records.len()
                    && stored.iter().zip(&records).all(|(a, b)| {
                        a.iter().zip(csv_fields(b)).all(|(x, y)| io::format_float(*x) == io::format_float(y))
                    });
                lines.push(Line { check: "records", quantity: "bit_exact", value: same as u8 as f64, threshold: 1.0, passed: same });
            }
            Check::Energy => {
                let e = diagnostics::energy_budget(&records)?;
                lines.push(Line::at_most("energy", "max_budget_residual", e.max_budget_residual, 1e-10));
                lines.push(Line::info("energy", "relative_drift", e.relative_drift));
                lines.push(Line::info("energy", "boundary_heat", e.boundary_heat));
            }
            Check::Entropy => {
                let s = diagnostics::entropy_production(&records);
                let scale = records.iter().map(|r| r.total_entropy.abs()).fold(1.0, f64::max);
                lines.push(Line::at_least("entropy", "worst_relative_defect", s.worst_relative_defect, -1e-8));
                if insulated {
                    lines.push(Line::at_least("entropy", "min_local_residual", s.min_local_residual, -1e-8 * scale));
                } else {
                    lines.push(Line::info("entropy", "min_local_residual", s.min_local_residual));
                }
                lines.push(Line::info("entropy", "balance_residual", s.balance_residual));
                lines.push(Line::info("entropy", "total_increase", s.total_increase));
            }
            Check::Selection => {
                let m = records.iter().map(|r| r.selection_margin).fold(f64::INFINITY, f64::min);
                let bound = records.iter().map(|r| r.selection_margin + r.selection_max).fold(0.0, f64::max);
                lines.push(Line::at_least("selection", "min_margin", m, -1e-6 * bound));
            }
            Check::Upper => {
                let tg = sys.boundary.theta_at(built.solver.horizon).iter().cloned().fold(0.0, f64::max);
                let u = diagnostics::upper_envelope(&records, tg, built.solver.n_reg, 1e-2)?;
                lines.push(Line::at_most("upper", "empirical_sup", u.empirical_sup, built.solver.rho));
                lines.push(Line::info("upper", "late_trend", u.trend));
            }
            Check::LowerBound => {
                let lb = diagnostics::lower_bound_check(&sys.model, &records, built.solver.rho)?;
                lines.push(Line::at_least("lower_bound", "margin", lb.margin, 0.0));
                lines.push(Line::info("lower_bound", "measured_r", lb.r));
            }
            Check::Generic => {
                let mut worst: f64 = 0.0;
                for (s, r) in snaps.iter().zip(recovered_selections(&built, &snaps)?) {
                    let mut state = s.clone();
                    state.xi = r;
                    worst = worst.max(diagnostics::generic_check(sys, &state, built.solver.rho)?.max());
                }
                lines.push(Line::at_most("generic", "max_residual", worst, 1e-13));
            }
        }
    }

    let rows: Vec<Vec<String>> = lines
        .iter()
        .map(|l| {
            vec![
                l.check.to_string(),
                l.quantity.to_string(),
                io::format_float(l.value),
                io::format_float(l.threshold),
                l.passed.to_string(),
            ]
        })
        .collect();
    let path = out.unwrap_or_else(|| dir.join("verify.csv"));
    io::write_table(&path, &["check", "quantity", "value", "threshold", "passed"], &rows)?;
    let mut ok = true;
    for l in &lines {
        if !l.passed {
            ok = false;
            eprintln!("FAIL {} {}: {:e} (threshold {:e})", l.check, l.quantity, l.value, l.threshold);
        }
    }
    println!("{} checks, {}; report in {}", checks.len(), if ok { "all passed" } else { "failures" }, path.display());
    Ok(ok)
}

fn recovered_selections(built: &nlpf::config::Built, snaps: &[solver::State]) -> Result<Vec<Vec<f64>>> {
    let sys = &built.system;
    let mut out = vec![solver::initial_selection(sys, &snaps[0].chi)?];
    for p in snaps.windows(2) {
        out.push(solver::recover_selection(sys, &p[0], &p[1].chi, p[1].t - p[0].t, built.solver.rho)?);
    }
    Ok(out)
}

fn cmd_calibrate(c_star: f64, dim: usize) -> Result<bool> {
    let rho = diagnostics::calibrate_rho(c_star, dim)?;
    let lhs = diagnostics::moser_bound(c_star, dim, rho);
    println!("rho* = {rho}");
    println!("C*(1+log rho*)^{} = {lhs:e} <= rho*/2 = {:e}", 4 + 2 * dim, rho / 2.0);
    if rho > 1.0 {
        let below = rho / 1.01;
        println!("at rho*/1.01: {:e} > {:e}", diagnostics::moser_bound(c_star, dim, below), below / 2.0);
    }
    Ok(true)
}

fn write_report(path: &Path, r: &StudyReport) -> Result<()> {
    let rows: Vec<Vec<String>> = r.rows.iter().map(|row| row.iter().map(|v| io::format_float(*v)).collect()).collect();
    io::write_table(path, &r.header, &rows)
}

fn cmd_study(kind: StudyKind, config: &Path, out: &Path, levels: usize, delta: f64) -> Result<bool> {
    let cfg = load(config)?;
    let report = match kind {
        StudyKind::DtRefinement => study::dt_refinement(&cfg.build()?, levels, None, (0.8, 1.2))?,
        StudyKind::Dependence => study::dependence_study(&cfg.build()?, delta, 0.1, 2.0)?.0,
        StudyKind::LocalLimit => study::local_limit_study(&cfg.grid()?, &[4.0, 8.0, 16.0], 0.1)?.0,
        StudyKind::InclusionDependence => {
            study::inclusion_dependence(&cfg.potential()?, &[1e-3, 5e-4], &[1e-3, 5e-4], &[10, 20, 40, 80])?.0
        }
    };
    write_report(out, &report)?;
    println!("{}; report in {}", if report.passed { "passed" } else { "failed" }, out.display());
    Ok(report.passed)
}
