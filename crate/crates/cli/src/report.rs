//! Report writers and the verify-clt verdict.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use mdclt_core::matrix::inverse;
use mdclt_core::mc::{McSummary, MixingOutcome};
use mdclt_core::SymMat;

use crate::config::{CliError, Provenance, VerdictThresholds};

pub fn ensure_out_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| {
        CliError::config(format!("output directory {} not writable: {e}", dir.display()))
    })
}

pub fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<PathBuf, CliError> {
    let path = dir.join(name);
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::config(format!("cannot serialize {name}: {e}")))?;
    text.push('\n');
    fs::write(&path, text)
        .map_err(|e| CliError::config(format!("cannot write {}: {e}", path.display())))?;
    Ok(path)
}

/// UTF-8, LF-terminated records, '.' decimal point, header row mandatory.
pub fn write_csv(
    dir: &Path,
    name: &str,
    header: &[String],
    rows: &[Vec<String>],
) -> Result<PathBuf, CliError> {
    let path = dir.join(name);
    let io_err = |e: csv::Error| CliError::config(format!("cannot write {}: {e}", path.display()));
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(&path)
        .map_err(io_err)?;
    writer.write_record(header).map_err(io_err)?;
    for row in rows {
        writer.write_record(row).map_err(io_err)?;
    }
    writer
        .flush()
        .map_err(|e| CliError::config(format!("cannot flush {}: {e}", path.display())))?;
    Ok(path)
}

// ---------------------------------------------------------------------------
// Verdict

#[derive(Debug, Clone, Serialize)]
pub struct VerdictCheck {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Verdict {
    pub pass: bool,
    /// Horizon the thresholds were applied at (the largest in the grid).
    pub evaluated_at_n: usize,
    pub checks: Vec<VerdictCheck>,
}

fn check(name: &'static str, pass: bool, detail: String) -> VerdictCheck {
    VerdictCheck { name, pass, detail }
}

/// Applies the configured thresholds at the largest horizon. Marginal
/// normality and mixing use the per-component tests the engine stored;
/// the covariance checks compare the raw CLT covariance to the inverse
/// series matrix and the standardized self-normalized covariance to the
/// identity. An ingredient the run could not produce (KS skipped for too
/// few replications, mixing skipped) fails its check with the reason.
pub fn evaluate_verdict(
    summary: &McSummary,
    t: &VerdictThresholds,
) -> Result<Verdict, CliError> {
    let h = summary.horizons.last().expect("validated nonempty grid");
    let d = summary.config.model.dim();
    let mut checks = Vec::with_capacity(5);

    for (name, stat) in [
        ("clt_marginal_ks", &h.clt),
        ("self_norm_marginal_ks", &h.self_norm),
    ] {
        match &stat.ks {
            Some(list) => {
                let min_p = list.iter().map(|k| k.p_value).fold(f64::INFINITY, f64::min);
                checks.push(check(
                    name,
                    min_p > t.ks_alpha,
                    format!("min component p = {min_p:.4}, needs > {}", t.ks_alpha),
                ));
            }
            None => checks.push(check(
                name,
                false,
                "marginal KS unavailable: too few replications".into(),
            )),
        }
    }

    let sigma_inv = inverse(&summary.sigma)?;
    let gap = h.clt.cov.sub(&sigma_inv).frobenius_norm();
    let budget = t.cov_rel_tol * sigma_inv.frobenius_norm();
    checks.push(check(
        "clt_covariance",
        gap <= budget,
        format!("||cov - inverse sigma||_F = {gap:.4}, budget {budget:.4}"),
    ));

    let gap = h
        .self_norm
        .std_cov
        .sub(&SymMat::identity(d))
        .frobenius_norm();
    let budget = t.self_cov_rel_tol * (d as f64).sqrt();
    checks.push(check(
        "self_norm_covariance",
        gap <= budget,
        format!("||std cov - identity||_F = {gap:.4}, budget {budget:.4}"),
    ));

    match &h.mixing {
        MixingOutcome::Evaluated { grid } => {
            let corrected = t.mixing_alpha / grid.tests as f64;
            let min_p = grid
                .cells
                .iter()
                .map(|c| c.ks.p_value)
                .fold(f64::INFINITY, f64::min);
            checks.push(check(
                "mixing",
                min_p >= corrected,
                format!(
                    "min cell p = {min_p:.4} over {} cells, corrected level {corrected:.2e}",
                    grid.tests
                ),
            ));
        }
        MixingOutcome::Skipped { reason } => {
            checks.push(check("mixing", false, format!("mixing skipped: {reason}")));
        }
    }

    let pass = checks.iter().all(|c| c.pass);
    Ok(Verdict { pass, evaluated_at_n: h.n, checks })
}

pub fn print_verdict(verdict: &Verdict) {
    for c in &verdict.checks {
        let tag = if c.pass { "PASS" } else { "FAIL" };
        println!("[{tag}] {} (n = {}) {}", c.name, verdict.evaluated_at_n, c.detail);
    }
    println!("VERDICT: {}", if verdict.pass { "PASS" } else { "FAIL" });
}

// ---------------------------------------------------------------------------
// JSON report shells

#[derive(Serialize)]
pub struct CltReport<'a> {
    pub provenance: Provenance,
    pub verdict: &'a Verdict,
    pub summary: &'a McSummary,
}

#[derive(Serialize)]
pub struct AuditSummary {
    pub replications: usize,
    /// (replication, horizon, eps) triples audited, six checks each.
    pub rows_audited: usize,
    pub checks: Vec<&'static str>,
    pub all_passed: bool,
}
