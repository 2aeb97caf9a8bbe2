//! Strict schema-v1 configuration, provenance, and error-to-exit mapping.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use mdclt_core::mc::{DecayThresholds, McConfig, RankCase};
use mdclt_core::Error as CoreError;

pub const SCHEMA_VERSION: u32 = 1;

/// Stable exit contract: 0 PASS, 1 statistical FAIL, 2 model error,
/// 3 numeric non-convergence, 4 config error.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn stat(message: impl Into<String>) -> CliError {
        CliError { code: 1, message: message.into() }
    }

    pub fn config(message: impl Into<String>) -> CliError {
        CliError { code: 4, message: message.into() }
    }

    pub fn from_core(e: CoreError) -> CliError {
        CliError { code: core_exit_code(&e), message: e.to_string() }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> CliError {
        CliError::from_core(e)
    }
}

/// Structural model rejections exit 2, runtime numeric failures exit 3,
/// audit violations are statistical findings (exit 1), everything the user
/// could have written differently in the config exits 4.
fn core_exit_code(e: &CoreError) -> i32 {
    match e {
        CoreError::Replication { source, .. } => core_exit_code(source),
        CoreError::AuditFailure { .. } => 1,
        CoreError::Unstable { .. }
        | CoreError::BadDim(_)
        | CoreError::NotFinite(..)
        | CoreError::NotSymmetric { .. }
        | CoreError::NotPsd(_)
        | CoreError::NotPd
        | CoreError::GramSingular => 2,
        CoreError::NonConvergence { .. } | CoreError::Overflow { .. } => 3,
        CoreError::BadParam(_)
        | CoreError::BadConfig(_)
        | CoreError::TooFewSamples(_)
        | CoreError::BucketTooSmall { .. } => 4,
    }
}

/// Report formats a command may emit. The JSON report carries the
/// provenance block and the full result; CSV files are tabular extracts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Json,
    Csv,
}

/// Verdict thresholds for verify-clt, applied at the largest horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerdictThresholds {
    /// Every marginal KS p-value must exceed this.
    pub ks_alpha: f64,
    /// Family-wise level for the mixing verdict, re-derived from the
    /// stored cell p-values with the same Bonferroni correction the
    /// engine uses.
    pub mixing_alpha: f64,
    /// Relative Frobenius budget for the raw covariance of
    /// sqrt(n)(theta_hat - theta) against the inverse series matrix.
    pub cov_rel_tol: f64,
    /// Relative Frobenius budget for the standardized self-normalized
    /// covariance against the identity.
    pub self_cov_rel_tol: f64,
}

impl VerdictThresholds {
    pub fn validate(&self) -> Result<(), CliError> {
        for (name, v) in [("ks_alpha", self.ks_alpha), ("mixing_alpha", self.mixing_alpha)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(CliError::config(format!("{name} must lie in (0, 1), got {v}")));
            }
        }
        for (name, v) in [
            ("cov_rel_tol", self.cov_rel_tol),
            ("self_cov_rel_tol", self.self_cov_rel_tol),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(CliError::config(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Decay table settings for diagnose-conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecaySection {
    pub thresholds: DecayThresholds,
    /// When true, any decay row that is not strictly decreasing with its
    /// final median at or below the threshold fails the command; by
    /// default the table is informational and only audit violations fail.
    #[serde(default)]
    pub monotone: bool,
}

/// One config file drives every subcommand; sections a command does not
/// use may be present (they are validated but ignored). Unknown keys are
/// rejected everywhere so a misspelled threshold cannot pass silently.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub experiment: McConfig,
    /// Worker threads; 0 or absent means the runtime default. Overridden
    /// by MDCLT_WORKERS, which is overridden by --workers.
    #[serde(default)]
    pub workers: Option<usize>,
    /// Output directory; overridden by --out. Default ".".
    #[serde(default)]
    pub out_dir: Option<String>,
    /// Which report files to write; default: both JSON and CSV.
    #[serde(default)]
    pub formats: Option<Vec<ReportFormat>>,
    #[serde(default)]
    pub verdict: Option<VerdictThresholds>,
    #[serde(default)]
    pub decay: Option<DecaySection>,
    #[serde(default)]
    pub rank_case: Option<RankCase>,
}

impl ExperimentConfig {
    pub fn wants(&self, format: ReportFormat) -> bool {
        match &self.formats {
            None => true,
            Some(list) => list.contains(&format),
        }
    }
}

pub struct LoadedConfig {
    pub config: ExperimentConfig,
    /// Hex SHA-256 of the raw config file bytes, embedded in every report.
    pub sha256: String,
}

pub fn load_config(path: &Path) -> Result<LoadedConfig, CliError> {
    let bytes = fs::read(path)
        .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
    let config: ExperimentConfig = serde_json::from_slice(&bytes)
        .map_err(|e| CliError::config(format!("config parse error in {}: {e}", path.display())))?;
    if config.schema_version != SCHEMA_VERSION {
        return Err(CliError::config(format!(
            "unsupported schema_version {}, this build reads version {SCHEMA_VERSION}",
            config.schema_version
        )));
    }
    config.experiment.validate()?;
    if let Some(v) = &config.verdict {
        v.validate()?;
    }
    if let Some(d) = &config.decay {
        d.thresholds.validate()?;
    }
    Ok(LoadedConfig { config, sha256: sha256_hex(&bytes) })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Replay block embedded in every JSON report.
#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub schema_version: u32,
    pub artifact_version: &'static str,
    pub config_sha256: String,
    /// Effective base seed (after any --seed override); absent for the
    /// deterministic sigma computation.
    pub seed: Option<u64>,
}

pub fn provenance(config_sha256: String, seed: Option<u64>) -> Provenance {
    Provenance {
        schema_version: SCHEMA_VERSION,
        artifact_version: env!("CARGO_PKG_VERSION"),
        config_sha256,
        seed,
    }
}
