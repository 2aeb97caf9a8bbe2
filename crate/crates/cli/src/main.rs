//! Config-driven runner: computes the covariance series, verifies the
//! limit statements by seeded Monte Carlo, diagnoses the condition
//! statistics, estimates Gram rank events, and dumps paths.

mod config;
mod report;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use mdclt_core::ar::{sigma_series, simulate_driven, stationary_initial};
use mdclt_core::diagnostics::{build_ar_row, inequality_audit, root_n_scaling, AUDIT_CHECKS};
use mdclt_core::matrix::{inverse, psd_sqrt, solve_lyapunov, stability_constants};
use mdclt_core::mc::{
    decay_report, omega_rank_demo, run_experiment, DecayReport, InitialState, McConfig,
};
use mdclt_core::{ArParams, Error as CoreError, InnovationSpec, RngStream, StabilityConstants, SymMat};

use config::{load_config, provenance, sha256_hex, CliError, Provenance, ReportFormat};
use report::{ensure_out_dir, evaluate_verdict, print_verdict, write_csv, write_json, AuditSummary, CltReport};

#[derive(Parser)]
#[command(
    name = "mdclt",
    version,
    about = "Martingale CLT laboratory: AR(d) simulation, condition statistics, seeded Monte Carlo verification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute the asymptotic covariance series of a stable model and
    /// cross-check it against the fixed-point solver
    ComputeSigma(ComputeSigmaArgs),
    /// Run the replicated experiment and apply the configured verdict
    VerifyClt(ConfigArgs),
    /// Write the condition decay table and audit every replication
    DiagnoseConditions(ConfigArgs),
    /// Estimate full-rank frequencies of the Gram matrix per horizon
    RankDemo(ConfigArgs),
    /// Dump one simulated path (replication 0, largest horizon) as CSV
    Simulate(ConfigArgs),
}

#[derive(Args)]
struct ComputeSigmaArgs {
    /// Model coefficients, comma separated; the dimension is the length
    #[arg(long, value_delimiter = ',', required = true)]
    theta: Vec<f64>,
    /// Certified Frobenius tail bound for the series truncation
    #[arg(long, default_value_t = 1e-12)]
    tol: f64,
    /// Output directory
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct ConfigArgs {
    /// Path to a schema-v1 JSON experiment config
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides the config's out_dir; default ".")
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads, 0 = runtime default (overrides MDCLT_WORKERS and
    /// the config; output does not depend on the worker count)
    #[arg(long)]
    workers: Option<usize>,
    /// Base seed override
    #[arg(long)]
    seed: Option<u64>,
}

/// Rust ignores SIGPIPE, turning writes into a closed pipe (`mdclt ... |
/// head`) into EPIPE panics; restore the conventional die-quietly default.
#[cfg(unix)]
fn reset_sigpipe() {
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
}

#[cfg(not(unix))]
fn reset_sigpipe() {}

fn main() {
    reset_sigpipe();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                // Usage mistakes are config errors under the exit contract.
                _ => 4,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let outcome = match cli.command {
        Command::ComputeSigma(args) => cmd_compute_sigma(&args),
        Command::VerifyClt(args) => cmd_verify_clt(&args),
        Command::DiagnoseConditions(args) => cmd_diagnose_conditions(&args),
        Command::RankDemo(args) => cmd_rank_demo(&args),
        Command::Simulate(args) => cmd_simulate(&args),
    };
    if let Err(e) = outcome {
        eprintln!("error: {}", e.message);
        std::process::exit(e.code);
    }
}

// ---------------------------------------------------------------------------
// Shared plumbing

fn resolve_workers(flag: Option<usize>, from_config: Option<usize>) -> Result<Option<usize>, CliError> {
    if flag.is_some() {
        return Ok(flag);
    }
    if let Ok(raw) = std::env::var("MDCLT_WORKERS") {
        let parsed = raw.trim().parse::<usize>().map_err(|_| {
            CliError::config(format!("MDCLT_WORKERS must be a nonnegative integer, got {raw:?}"))
        })?;
        return Ok(Some(parsed));
    }
    Ok(from_config)
}

/// Runs `f` on a dedicated pool of the requested size (0 or None: the
/// runtime default). Every engine entry point is worker-count invariant,
/// so this only affects wall time.
fn with_pool<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    match workers {
        None | Some(0) => Ok(f()),
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w)
                .build()
                .map_err(|e| CliError::config(format!("cannot build a {w}-worker pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

fn resolve_out(flag: &Option<PathBuf>, from_config: &Option<String>) -> PathBuf {
    if let Some(dir) = flag {
        return dir.clone();
    }
    match from_config {
        Some(dir) => PathBuf::from(dir),
        None => PathBuf::from("."),
    }
}

fn draw_initial(cfg: &McConfig, rng: &mut RngStream) -> Result<Vec<f64>, CoreError> {
    match &cfg.initial {
        InitialState::Zero => Ok(vec![0.0; cfg.model.dim()]),
        InitialState::Fixed { u0 } => Ok(u0.clone()),
        InitialState::Stationary { tol } => {
            stationary_initial(&cfg.model, &cfg.innovation, *tol, rng)
        }
    }
}

// ---------------------------------------------------------------------------
// compute-sigma

#[derive(Serialize)]
struct SigmaRequest<'a> {
    theta: &'a [f64],
    tol: f64,
}

#[derive(Serialize)]
struct SigmaReport<'a> {
    provenance: Provenance,
    theta: &'a [f64],
    dim: usize,
    spectral_radius: f64,
    terms_used: usize,
    tail_bound: f64,
    sigma: &'a SymMat,
    sigma_inverse: SymMat,
    sigma_root: SymMat,
    sigma_inverse_root: SymMat,
    head: &'a SymMat,
    constants: StabilityConstants,
    /// Frobenius distance between the series value and the independent
    /// fixed-point solution of S = B S B^T + e1 e1^T.
    lyapunov_gap: f64,
}

fn cmd_compute_sigma(args: &ComputeSigmaArgs) -> Result<(), CliError> {
    let p = ArParams::new(args.theta.clone())?;
    let d = p.dim();
    let series = sigma_series(&p, args.tol)?;
    let rho = p.spectral_radius()?;
    let b = p.companion();
    let constants = stability_constants(&b, args.tol)?;
    let e11 = SymMat::from_upper_fn(d, |i, j| if i == 0 && j == 0 { 1.0 } else { 0.0 });
    let lyapunov = solve_lyapunov(&b, &e11, args.tol)?;
    let lyapunov_gap = series.sigma.sub(&lyapunov).frobenius_norm();
    let sigma_inverse = inverse(&series.sigma)?;
    let sigma_root = psd_sqrt(&series.sigma)?;
    let sigma_inverse_root = psd_sqrt(&sigma_inverse)?;

    let request = SigmaRequest { theta: &args.theta, tol: args.tol };
    let request_bytes =
        serde_json::to_vec(&request).map_err(|e| CliError::config(format!("serialize request: {e}")))?;
    let report = SigmaReport {
        provenance: provenance(sha256_hex(&request_bytes), None),
        theta: p.theta(),
        dim: d,
        spectral_radius: rho,
        terms_used: series.terms_used,
        tail_bound: series.tail_bound,
        sigma: &series.sigma,
        sigma_inverse,
        sigma_root,
        sigma_inverse_root,
        head: &series.head,
        constants,
        lyapunov_gap,
    };
    ensure_out_dir(&args.out)?;
    let path = write_json(&args.out, "sigma.json", &report)?;
    println!(
        "spectral radius {rho:.6}, {} series terms, tail bound {:.2e}, fixed-point gap {:.2e}",
        series.terms_used, series.tail_bound, lyapunov_gap
    );
    println!("wrote {}", path.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// verify-clt

fn cmd_verify_clt(args: &ConfigArgs) -> Result<(), CliError> {
    let loaded = load_config(&args.config)?;
    let mut cfg = loaded.config;
    if let Some(seed) = args.seed {
        cfg.experiment.seed = seed;
    }
    let thresholds = cfg
        .verdict
        .clone()
        .ok_or_else(|| CliError::config("verify-clt needs a `verdict` section in the config"))?;
    let workers = resolve_workers(args.workers, cfg.workers)?;
    let summary = with_pool(workers, || run_experiment(&cfg.experiment))??;
    let verdict = evaluate_verdict(&summary, &thresholds)?;

    let out_dir = resolve_out(&args.out, &cfg.out_dir);
    ensure_out_dir(&out_dir)?;
    if cfg.wants(ReportFormat::Json) {
        let report = CltReport {
            provenance: provenance(loaded.sha256.clone(), Some(cfg.experiment.seed)),
            verdict: &verdict,
            summary: &summary,
        };
        let path = write_json(&out_dir, "summary.json", &report)?;
        println!("wrote {}", path.display());
    }
    if cfg.wants(ReportFormat::Csv) {
        let (header, rows) = summary.statistics_csv();
        let path = write_csv(&out_dir, "statistics.csv", &header, &rows)?;
        println!("wrote {}", path.display());
        let (header, rows) = summary.mixing_csv();
        let path = write_csv(&out_dir, "mixing.csv", &header, &rows)?;
        println!("wrote {}", path.display());
    }
    print_verdict(&verdict);
    if !verdict.pass {
        let failed: Vec<&str> = verdict
            .checks
            .iter()
            .filter(|c| !c.pass)
            .map(|c| c.name)
            .collect();
        return Err(CliError::stat(format!("verdict FAIL: {}", failed.join(", "))));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// diagnose-conditions

/// Rebuilds every replication with the engine's substream rule and runs
/// the six-inequality audit on each (horizon, eps) row. Returns the
/// number of audited rows; the first violation aborts with the check
/// name in the error.
fn audit_all(cfg: &McConfig) -> Result<usize, CoreError> {
    let d = cfg.model.dim();
    let max_n = *cfg.n_grid.last().expect("validated nonempty");
    let counts: Vec<usize> = (0..cfg.replications)
        .into_par_iter()
        .map(|r| -> Result<usize, CoreError> {
            (|| {
                let mut rng = RngStream::substream(cfg.seed, r as u64);
                let u0 = draw_initial(cfg, &mut rng)?;
                let z: Vec<f64> = (0..max_n).map(|_| cfg.innovation.sample(&mut rng)).collect();
                let mut rows = 0usize;
                for &n in &cfg.n_grid {
                    let path = simulate_driven(&cfg.model, &u0, &z[..n])?;
                    let row = build_ar_row(&path, &cfg.model, &cfg.innovation, &root_n_scaling(d, n))?;
                    for &eps in &cfg.eps_grid {
                        inequality_audit(&row, eps, cfg.truncation_a)?;
                        rows += 1;
                    }
                }
                Ok(rows)
            })()
            .map_err(|e: CoreError| CoreError::Replication { r, source: Box::new(e) })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(counts.iter().sum())
}

#[derive(Serialize)]
struct ConditionsReport<'a> {
    provenance: Provenance,
    audit: AuditSummary,
    decay: &'a DecayReport,
}

fn cmd_diagnose_conditions(args: &ConfigArgs) -> Result<(), CliError> {
    let loaded = load_config(&args.config)?;
    let mut cfg = loaded.config;
    if let Some(seed) = args.seed {
        cfg.experiment.seed = seed;
    }
    let section = cfg
        .decay
        .clone()
        .ok_or_else(|| CliError::config("diagnose-conditions needs a `decay` section in the config"))?;
    let workers = resolve_workers(args.workers, cfg.workers)?;
    let (decay, rows_audited) = with_pool(workers, || -> Result<(DecayReport, usize), CoreError> {
        let decay = decay_report(&cfg.experiment, &section.thresholds)?;
        let rows = audit_all(&cfg.experiment)?;
        Ok((decay, rows))
    })??;

    let out_dir = resolve_out(&args.out, &cfg.out_dir);
    ensure_out_dir(&out_dir)?;
    if cfg.wants(ReportFormat::Json) {
        let report = ConditionsReport {
            provenance: provenance(loaded.sha256.clone(), Some(cfg.experiment.seed)),
            audit: AuditSummary {
                replications: cfg.experiment.replications,
                rows_audited,
                checks: AUDIT_CHECKS.to_vec(),
                all_passed: true,
            },
            decay: &decay,
        };
        let path = write_json(&out_dir, "conditions.json", &report)?;
        println!("wrote {}", path.display());
    }
    if cfg.wants(ReportFormat::Csv) {
        let (header, rows) = decay.csv_rows();
        let path = write_csv(&out_dir, "decay.csv", &header, &rows)?;
        println!("wrote {}", path.display());
    }
    println!(
        "audited {rows_audited} rows across {} replications: all six checks hold",
        cfg.experiment.replications
    );
    for row in &decay.rows {
        let eps = row.eps.map(|e| format!(" eps = {e}")).unwrap_or_default();
        println!(
            "decay {}{eps}: medians {:?}, strictly decreasing = {}, final below {} = {}",
            row.statistic, row.medians, row.strictly_decreasing, row.threshold, row.final_below
        );
    }
    if section.monotone && !decay.all_pass {
        let failing: Vec<&str> = decay
            .rows
            .iter()
            .filter(|r| !r.pass)
            .map(|r| r.statistic.as_str())
            .collect();
        return Err(CliError::stat(format!(
            "decay verdict FAIL: {}",
            failing.join(", ")
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// rank-demo

#[derive(Serialize)]
struct RankReport<'a> {
    provenance: Provenance,
    report: &'a mdclt_core::mc::OmegaReport,
}

fn cmd_rank_demo(args: &ConfigArgs) -> Result<(), CliError> {
    let loaded = load_config(&args.config)?;
    let mut cfg = loaded.config;
    if let Some(seed) = args.seed {
        cfg.experiment.seed = seed;
    }
    let case = cfg
        .rank_case
        .clone()
        .ok_or_else(|| CliError::config("rank-demo needs a `rank_case` section in the config"))?;
    let workers = resolve_workers(args.workers, cfg.workers)?;
    let report = with_pool(workers, || omega_rank_demo(&case, &cfg.experiment))??;

    let out_dir = resolve_out(&args.out, &cfg.out_dir);
    ensure_out_dir(&out_dir)?;
    if cfg.wants(ReportFormat::Json) {
        let shell = RankReport {
            provenance: provenance(loaded.sha256.clone(), Some(cfg.experiment.seed)),
            report: &report,
        };
        let path = write_json(&out_dir, "rank.json", &shell)?;
        println!("wrote {}", path.display());
    }
    if cfg.wants(ReportFormat::Csv) {
        let (header, rows) = report.csv_rows();
        let path = write_csv(&out_dir, "omega.csv", &header, &rows)?;
        println!("wrote {}", path.display());
    }
    for (n, f) in report.n_grid.iter().zip(&report.frequency) {
        println!("case {}: n = {n}, full-rank frequency {f}", report.case_name);
    }
    println!("monotone violations: {}", report.monotone_violations);
    if let Some(bound) = &report.bound {
        println!(
            "singular-event bound at n = {}: target {:.6}, empirical {:.6} (SE {:.6})",
            bound.n, bound.target, bound.empirical_complement, bound.standard_error
        );
        if !bound.pass {
            return Err(CliError::stat(format!(
                "empirical singular frequency {:.6} fell more than 3 SE below the bound {:.6}",
                bound.empirical_complement, bound.target
            )));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// simulate

#[derive(Serialize)]
struct PathManifest<'a> {
    provenance: Provenance,
    model: &'a ArParams,
    innovation: &'a InnovationSpec,
    horizon: usize,
    replication: usize,
    initial_state: &'a [f64],
}

fn cmd_simulate(args: &ConfigArgs) -> Result<(), CliError> {
    let loaded = load_config(&args.config)?;
    let mut cfg = loaded.config;
    if let Some(seed) = args.seed {
        cfg.experiment.seed = seed;
    }
    let e = &cfg.experiment;
    let d = e.model.dim();
    let n = *e.n_grid.last().expect("validated nonempty");
    let mut rng = RngStream::substream(e.seed, 0);
    let u0 = draw_initial(e, &mut rng)?;
    let z: Vec<f64> = (0..n).map(|_| e.innovation.sample(&mut rng)).collect();
    let path = simulate_driven(&e.model, &u0, &z)?;

    let out_dir = resolve_out(&args.out, &cfg.out_dir);
    ensure_out_dir(&out_dir)?;
    // Initial values carry k <= 0 and an empty innovation column.
    let header: Vec<String> = vec!["k".into(), "y".into(), "z".into()];
    let mut rows = Vec::with_capacity(d + n);
    for k in (1 - d as i64)..=0 {
        rows.push(vec![k.to_string(), format!("{}", path.y_at(k)), String::new()]);
    }
    for k in 1..=n {
        rows.push(vec![
            k.to_string(),
            format!("{}", path.y_at(k as i64)),
            format!("{}", path.innovation(k)),
        ]);
    }
    if cfg.wants(ReportFormat::Csv) {
        let csv_path = write_csv(&out_dir, "path.csv", &header, &rows)?;
        println!("wrote {}", csv_path.display());
    }
    if cfg.wants(ReportFormat::Json) {
        let manifest = PathManifest {
            provenance: provenance(loaded.sha256.clone(), Some(e.seed)),
            model: &e.model,
            innovation: &e.innovation,
            horizon: n,
            replication: 0,
            initial_state: &u0,
        };
        let json_path = write_json(&out_dir, "path.json", &manifest)?;
        println!("wrote {}", json_path.display());
    }
    let start = match &e.initial {
        InitialState::Zero => "the zero state",
        InitialState::Fixed { .. } => "a fixed state",
        InitialState::Stationary { .. } => "a stationary draw",
    };
    println!("simulated {n} steps from {start}");
    Ok(())
}
