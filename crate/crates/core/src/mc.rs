//! Seeded Monte Carlo harness: replicated experiments over least-squares
//! statistics and condition diagnostics.
//!
//! Asymptotic statements become finite-sample checks: marginal normality
//! via Kolmogorov-Smirnov after standardization, asymptotic independence
//! from past-measurable variables via bucketed two-sample tests,
//! covariance targets via empirical moments, condition decay via
//! quantiles along a horizon grid, and Gram-rank events via frequencies.
//!
//! Determinism contract: a summary is a pure function of its config.
//! Replication r always draws from the substream derived from (seed, r),
//! replications are merged by index, and aggregation is serial, so any
//! worker count (including 1) produces byte-identical JSON.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::ar::{
    clt_statistic, gram, self_normalized_statistic, sigma_series, simulate_driven,
    stationary_initial, ArParams,
};
use crate::diagnostics::{build_ar_row, condition_report, root_n_scaling};
use crate::error::{Error, Result};
use crate::innovations::InnovationSpec;
use crate::matrix::{is_full_rank, is_positive_definite, psd_sqrt, vec_norm, SymMat};
use crate::rng::RngStream;

/// Family-wise level used for the mixing verdict embedded in summaries.
/// Every cell stores its p-value, so a caller can re-derive the verdict
/// at any other level.
pub const DEFAULT_MIXING_ALPHA: f64 = 0.01;

/// Frobenius tail tolerance for the internal limit-covariance series.
const SIGMA_TOL: f64 = 1e-10;

/// Minimum sample size for the one-sample Kolmogorov-Smirnov test.
const KS_MIN_SAMPLES: usize = 8;

/// Minimum bucket size per statistic dimension in the mixing test.
const MIXING_MIN_PER_DIM: usize = 8;

// ---------------------------------------------------------------------------
// Configuration

/// Past-measurable conditioning variable for the mixing test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Conditioning {
    /// Bucket by the sign of the first innovation.
    SignZ1,
    /// Bucket by whether the first coordinate of the initial state is
    /// positive.
    FirstCoordU0Positive,
    /// Bucket by whether the initial state lies in the centered ball of
    /// radius r.
    IndicatorU0InBall { r: f64 },
}

/// Initial-state policy for each replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialState {
    Zero,
    Fixed { u0: Vec<f64> },
    /// Truncated moving-average draw with certified series tail below tol.
    Stationary { tol: f64 },
}

/// Full specification of one replicated experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    pub model: ArParams,
    pub innovation: InnovationSpec,
    /// Strictly increasing horizons; each replication is evaluated on
    /// every prefix length in this grid.
    pub n_grid: Vec<usize>,
    pub replications: usize,
    pub seed: u64,
    pub conditioning: Conditioning,
    pub truncation_a: f64,
    /// Strictly increasing Lindeberg thresholds.
    pub eps_grid: Vec<f64>,
    pub initial: InitialState,
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        self.innovation.validate()?;
        if self.replications < 2 {
            return Err(Error::bad_config("replications must be at least 2"));
        }
        if self.n_grid.is_empty() || self.n_grid[0] == 0 {
            return Err(Error::bad_config("n_grid must be nonempty with positive horizons"));
        }
        if self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::bad_config("n_grid must be strictly increasing"));
        }
        if !(self.truncation_a > 0.0 && self.truncation_a.is_finite()) {
            return Err(Error::bad_config("truncation_a must be positive and finite"));
        }
        if self.eps_grid.is_empty() {
            return Err(Error::bad_config("eps_grid must be nonempty"));
        }
        if self.eps_grid.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
            return Err(Error::bad_config("eps values must be positive and finite"));
        }
        if self.eps_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::bad_config("eps_grid must be strictly increasing"));
        }
        if let Conditioning::IndicatorU0InBall { r } = self.conditioning {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::bad_config("ball radius must be positive and finite"));
            }
        }
        match &self.initial {
            InitialState::Zero => {}
            InitialState::Fixed { u0 } => {
                if u0.len() != self.model.dim() {
                    return Err(Error::bad_config(format!(
                        "fixed initial state has length {}, model dimension is {}",
                        u0.len(),
                        self.model.dim()
                    )));
                }
                if u0.iter().any(|v| !v.is_finite()) {
                    return Err(Error::bad_config("fixed initial state must be finite"));
                }
            }
            InitialState::Stationary { tol } => {
                if !(*tol > 0.0 && tol.is_finite()) {
                    return Err(Error::bad_config("stationary tolerance must be positive"));
                }
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Kolmogorov-Smirnov machinery

/// Standard normal CDF.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Tail probability P(K >= t) of the Kolmogorov distribution via the
/// alternating series 2 sum_{k>=1} (-1)^{k-1} exp(-2 k^2 t^2), truncated
/// once a term drops below 1e-12 and clamped to [0, 1]. For t below 0.05
/// the value is 1 to far beyond double precision, so it is returned
/// directly (the series converges too slowly there to be useful).
pub fn kolmogorov_q(t: f64) -> f64 {
    if !(t > 0.05) {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=100_000u64 {
        let term = (-2.0 * (k * k) as f64 * t * t).exp();
        sum += sign * term;
        if term < 1e-12 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// One-sample Kolmogorov-Smirnov result. `statistic` is the sqrt(m)-scaled
/// sup distance; for the two-sample case the scale is sqrt(mn/(m+n)).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub sample_size: usize,
}

/// Two-sided one-sample Kolmogorov-Smirnov test against a continuous CDF.
pub fn ks_test(sample: &[f64], cdf: impl Fn(f64) -> f64) -> Result<KsResult> {
    let m = sample.len();
    if m < KS_MIN_SAMPLES {
        return Err(Error::TooFewSamples(m));
    }
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mf = m as f64;
    let mut d = 0.0f64;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i + 1) as f64 / mf - f).max(f - i as f64 / mf);
    }
    let statistic = mf.sqrt() * d;
    Ok(KsResult {
        statistic,
        p_value: kolmogorov_q(statistic),
        sample_size: m,
    })
}

/// Two-sample Kolmogorov-Smirnov test with the merge walk, ties advanced
/// jointly. The statistic is D * sqrt(mn/(m+n)); the p-value uses the
/// asymptotic Kolmogorov tail.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    let (m, n) = (a.len(), b.len());
    if m < KS_MIN_SAMPLES || n < KS_MIN_SAMPLES {
        return Err(Error::TooFewSamples(m.min(n)));
    }
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(f64::total_cmp);
    sb.sort_by(f64::total_cmp);
    let (mf, nf) = (m as f64, n as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d = 0.0f64;
    while i < m && j < n {
        let v = sa[i].min(sb[j]);
        while i < m && sa[i] <= v {
            i += 1;
        }
        while j < n && sb[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / mf - j as f64 / nf).abs());
    }
    let statistic = d * (mf * nf / (mf + nf)).sqrt();
    Ok(KsResult {
        statistic,
        p_value: kolmogorov_q(statistic),
        sample_size: m + n,
    })
}

/// Maps each sample v to S^{1/2} v, so that a target law N(0, S^{-1})
/// becomes standard normal.
pub fn standardize(samples: &[Vec<f64>], sigma: &SymMat) -> Result<Vec<Vec<f64>>> {
    if !is_positive_definite(sigma) {
        return Err(Error::NotPd);
    }
    let root = psd_sqrt(sigma)?;
    Ok(samples.iter().map(|v| root.mul_vec(v)).collect())
}

// ---------------------------------------------------------------------------
// Mixing test

/// One cell of the mixing grid: component j of the statistic, one bucket
/// against its pooled complement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixingCell {
    pub component: usize,
    pub bucket: String,
    pub ks: KsResult,
    pub rejected: bool,
}

/// Bucketed two-sample mixing report with a Bonferroni-corrected verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixingGrid {
    pub alpha: f64,
    pub tests: usize,
    pub corrected_alpha: f64,
    pub buckets: Vec<String>,
    pub bucket_sizes: Vec<usize>,
    pub cells: Vec<MixingCell>,
    pub pass: bool,
}

/// Mixing outcome inside a summary: evaluated, or skipped with the reason
/// (small buckets, degenerate conditioning, too few replications).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum MixingOutcome {
    Evaluated { grid: MixingGrid },
    Skipped { reason: String },
}

/// Tests asymptotic independence of the statistic from the bucketed
/// conditioning variable: for every component and every bucket, a
/// two-sample test of the bucket against its pooled complement, with a
/// Bonferroni correction across all cells. Passes iff nothing rejects at
/// the corrected level.
pub fn mixing_test(samples: &[Vec<f64>], w: &[String], alpha: f64) -> Result<MixingGrid> {
    assert_eq!(samples.len(), w.len(), "one conditioning value per sample");
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::bad_param("alpha must lie in (0, 1)"));
    }
    if samples.is_empty() {
        return Err(Error::TooFewSamples(0));
    }
    let d = samples[0].len();
    let min_bucket = MIXING_MIN_PER_DIM * d;
    let mut buckets: Vec<String> = w.to_vec();
    buckets.sort();
    buckets.dedup();
    if buckets.len() < 2 {
        return Err(Error::BucketTooSmall {
            bucket: format!("complement of {}", buckets.first().cloned().unwrap_or_default()),
            size: 0,
            min: min_bucket,
        });
    }
    let bucket_sizes: Vec<usize> = buckets
        .iter()
        .map(|b| w.iter().filter(|l| *l == b).count())
        .collect();
    for (b, &size) in buckets.iter().zip(&bucket_sizes) {
        if size < min_bucket {
            return Err(Error::BucketTooSmall {
                bucket: b.clone(),
                size,
                min: min_bucket,
            });
        }
        let complement = samples.len() - size;
        if complement < min_bucket {
            return Err(Error::BucketTooSmall {
                bucket: format!("complement of {b}"),
                size: complement,
                min: min_bucket,
            });
        }
    }
    let tests = d * buckets.len();
    let corrected_alpha = alpha / tests as f64;
    let mut cells = Vec::with_capacity(tests);
    let mut pass = true;
    for component in 0..d {
        for b in &buckets {
            let inside: Vec<f64> = samples
                .iter()
                .zip(w)
                .filter(|(_, l)| *l == b)
                .map(|(s, _)| s[component])
                .collect();
            let outside: Vec<f64> = samples
                .iter()
                .zip(w)
                .filter(|(_, l)| *l != b)
                .map(|(s, _)| s[component])
                .collect();
            let ks = ks_two_sample(&inside, &outside)?;
            let rejected = ks.p_value < corrected_alpha;
            pass &= !rejected;
            cells.push(MixingCell {
                component,
                bucket: b.clone(),
                ks,
                rejected,
            });
        }
    }
    Ok(MixingGrid {
        alpha,
        tests,
        corrected_alpha,
        buckets,
        bucket_sizes,
        cells,
        pass,
    })
}

// ---------------------------------------------------------------------------
// Quantiles

/// Median and 90th percentile of one statistic across replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantilePair {
    pub median: f64,
    pub q90: f64,
}

/// Linear-interpolation quantile of an unsorted sample.
fn quantile(values: &[f64], q: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&q));
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len();
    if m == 1 {
        return v[0];
    }
    let pos = q * (m - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let w = pos - lo as f64;
    v[lo] * (1.0 - w) + v[hi] * w
}

fn quantile_pair(values: &[f64]) -> QuantilePair {
    QuantilePair {
        median: quantile(values, 0.5),
        q90: quantile(values, 0.9),
    }
}

// ---------------------------------------------------------------------------
// Summary types

/// Replication-level quantiles of the condition statistics at one horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionQuantiles {
    pub eps_grid: Vec<f64>,
    /// Per eps.
    pub clb1: Vec<QuantilePair>,
    /// Per eps.
    pub clb2: Vec<QuantilePair>,
    pub ta_residual_norm: QuantilePair,
    pub tma: QuantilePair,
    /// Frobenius distance of the realized outer-product sum from the
    /// limit covariance.
    pub raikov_gap: QuantilePair,
    /// Same distance for the conditional (norming) sum.
    pub norming_gap: QuantilePair,
    pub max_norm_sq: QuantilePair,
}

/// Moments and marginal normality tests for one statistic family at one
/// horizon. `ks` is present only when the replication count admits the
/// test; it is computed on standardized samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatSummary {
    pub mean: Vec<f64>,
    pub cov: SymMat,
    pub std_cov: SymMat,
    pub ks: Option<Vec<KsResult>>,
}

/// Everything aggregated at one horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonSummary {
    pub n: usize,
    /// sqrt(n) (theta_hat - theta).
    pub clt: StatSummary,
    /// Gram^{1/2} (theta_hat - theta).
    pub self_norm: StatSummary,
    pub mixing: MixingOutcome,
    pub conditions: ConditionQuantiles,
    /// Fraction of replications whose Gram matrix has full rank (the
    /// strict event, no conditioning floor).
    pub omega_frequency: f64,
    /// Replications whose normal equations were numerically singular at
    /// the solver's conditioning floor; their statistics are zeroed.
    pub degenerate_reps: usize,
}

/// One statistic record per (replication, horizon); the raw material for
/// the statistics CSV extract.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatRecord {
    pub replication: usize,
    pub n: usize,
    pub w: String,
    pub omega: bool,
    pub clt: Vec<f64>,
    pub self_norm: Vec<f64>,
}

/// Replay information: the base seed plus the substream derivation rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedsManifest {
    pub base_seed: u64,
    pub replications: usize,
    pub rule: String,
}

fn seeds_manifest(seed: u64, replications: usize) -> SeedsManifest {
    SeedsManifest {
        base_seed: seed,
        replications,
        rule: "replication r uses xoshiro256++ seeded from splitmix64(base_seed xor r); \
               within a replication: initial state first, then innovations z_1..z_max(n)"
            .into(),
    }
}

/// Full experiment output. A pure function of the config; serializes to
/// deterministic JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    pub config: McConfig,
    /// Limit covariance factor of the state (series value).
    pub sigma: SymMat,
    pub noise_variance: f64,
    pub mixing_alpha: f64,
    pub seeds: SeedsManifest,
    pub horizons: Vec<HorizonSummary>,
    pub records: Vec<StatRecord>,
}

impl McSummary {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes")
    }

    /// Statistics table: one row per (replication, horizon).
    pub fn statistics_csv(&self) -> (Vec<String>, Vec<Vec<String>>) {
        let d = self.config.model.dim();
        let mut header: Vec<String> = vec![
            "replication".into(),
            "n".into(),
            "w".into(),
            "omega".into(),
        ];
        for j in 1..=d {
            header.push(format!("clt_{j}"));
        }
        for j in 1..=d {
            header.push(format!("self_norm_{j}"));
        }
        let rows = self
            .records
            .iter()
            .map(|rec| {
                let mut row = vec![
                    rec.replication.to_string(),
                    rec.n.to_string(),
                    rec.w.clone(),
                    (rec.omega as u8).to_string(),
                ];
                row.extend(rec.clt.iter().map(|v| format!("{v}")));
                row.extend(rec.self_norm.iter().map(|v| format!("{v}")));
                row
            })
            .collect();
        (header, rows)
    }

    /// Mixing grid: one row per evaluated cell.
    pub fn mixing_csv(&self) -> (Vec<String>, Vec<Vec<String>>) {
        let header: Vec<String> = vec![
            "n".into(),
            "component".into(),
            "bucket".into(),
            "statistic".into(),
            "p_value".into(),
            "rejected".into(),
        ];
        let mut rows = Vec::new();
        for h in &self.horizons {
            if let MixingOutcome::Evaluated { grid } = &h.mixing {
                for cell in &grid.cells {
                    rows.push(vec![
                        h.n.to_string(),
                        (cell.component + 1).to_string(),
                        cell.bucket.clone(),
                        format!("{}", cell.ks.statistic),
                        format!("{}", cell.ks.p_value),
                        (cell.rejected as u8).to_string(),
                    ]);
                }
            }
        }
        (header, rows)
    }
}

// ---------------------------------------------------------------------------
// The experiment engine

struct RepPerN {
    clt: Vec<f64>,
    self_norm: Vec<f64>,
    omega: bool,
    solved: bool,
    clb1: Vec<f64>,
    clb2: Vec<f64>,
    ta_residual_norm: f64,
    tma: f64,
    raikov_gap: f64,
    norming_gap: f64,
    max_norm_sq: f64,
}

struct RepOutcome {
    w: String,
    per_n: Vec<RepPerN>,
}

fn w_label(cfg: &McConfig, u0: &[f64], z1: f64) -> String {
    match cfg.conditioning {
        Conditioning::SignZ1 => {
            if z1 > 0.0 {
                "z1_pos".into()
            } else if z1 < 0.0 {
                "z1_neg".into()
            } else {
                "z1_zero".into()
            }
        }
        Conditioning::FirstCoordU0Positive => {
            if u0[0] > 0.0 {
                "u0_first_pos".into()
            } else {
                "u0_first_nonpos".into()
            }
        }
        Conditioning::IndicatorU0InBall { r } => {
            if vec_norm(u0) <= r {
                "u0_in_ball".into()
            } else {
                "u0_out_ball".into()
            }
        }
    }
}

fn initial_state(cfg: &McConfig, rng: &mut RngStream) -> Result<Vec<f64>> {
    match &cfg.initial {
        InitialState::Zero => Ok(vec![0.0; cfg.model.dim()]),
        InitialState::Fixed { u0 } => Ok(u0.clone()),
        InitialState::Stationary { tol } => {
            stationary_initial(&cfg.model, &cfg.innovation, *tol, rng)
        }
    }
}

fn run_rep(cfg: &McConfig, r: usize, target: &SymMat) -> Result<RepOutcome> {
    let p = &cfg.model;
    let d = p.dim();
    let max_n = *cfg.n_grid.last().expect("validated nonempty");
    let mut rng = RngStream::substream(cfg.seed, r as u64);
    let u0 = initial_state(cfg, &mut rng)?;
    let z: Vec<f64> = (0..max_n).map(|_| cfg.innovation.sample(&mut rng)).collect();
    let w = w_label(cfg, &u0, z[0]);
    let mut per_n = Vec::with_capacity(cfg.n_grid.len());
    for &n in &cfg.n_grid {
        let path = simulate_driven(p, &u0, &z[..n])?;
        // The rank event is the strict dichotomy; the statistics are
        // gated separately on the solver's conditioning floor and zeroed
        // when the normal equations are numerically singular.
        let omega = is_full_rank(&gram(&path));
        let clt = clt_statistic(&path, p);
        let (self_norm, solved) = match self_normalized_statistic(&path, p) {
            Ok(v) => (v, true),
            Err(Error::GramSingular) => (vec![0.0; d], false),
            Err(e) => return Err(e),
        };
        let row = build_ar_row(&path, p, &cfg.innovation, &root_n_scaling(d, n))?;
        let report = condition_report(&row, &cfg.eps_grid, cfg.truncation_a);
        per_n.push(RepPerN {
            clt,
            self_norm,
            omega,
            solved,
            raikov_gap: report.raikov.sub(target).frobenius_norm(),
            norming_gap: report.norming.sub(target).frobenius_norm(),
            clb1: report.clb1,
            clb2: report.clb2,
            ta_residual_norm: vec_norm(&report.ta_residual),
            tma: report.tma,
            max_norm_sq: report.max_norm_sq,
        });
    }
    Ok(RepOutcome { w, per_n })
}

fn moments(samples: &[Vec<f64>]) -> (Vec<f64>, SymMat) {
    let r = samples.len() as f64;
    let d = samples[0].len();
    let mut mean = vec![0.0; d];
    for s in samples {
        for c in 0..d {
            mean[c] += s[c];
        }
    }
    for m in mean.iter_mut() {
        *m /= r;
    }
    let cov = SymMat::from_upper_fn(d, |i, j| {
        samples
            .iter()
            .map(|s| (s[i] - mean[i]) * (s[j] - mean[j]))
            .sum::<f64>()
            / r
    });
    (mean, cov)
}

fn stat_summary(standardized: &[Vec<f64>], raw: &[Vec<f64>]) -> Result<StatSummary> {
    let d = raw[0].len();
    let (mean, cov) = moments(raw);
    let (_, std_cov) = moments(standardized);
    let ks = if standardized.len() >= KS_MIN_SAMPLES {
        let mut per_component = Vec::with_capacity(d);
        for j in 0..d {
            let column: Vec<f64> = standardized.iter().map(|s| s[j]).collect();
            per_component.push(ks_test(&column, std_normal_cdf)?);
        }
        Some(per_component)
    } else {
        None
    };
    Ok(StatSummary { mean, cov, std_cov, ks })
}

/// Runs the full replicated experiment. Deterministic for a fixed config,
/// independent of worker count; errors carry the replication index.
pub fn run_experiment(cfg: &McConfig) -> Result<McSummary> {
    cfg.validate()?;
    let p = &cfg.model;
    let series = sigma_series(p, SIGMA_TOL)?;
    let sigma = series.sigma;
    let sigma_root = psd_sqrt(&sigma)?;
    let noise_variance = cfg.innovation.variance();
    let noise_sd = noise_variance.sqrt();
    // Limit of both outer-product sums for the row U_{k-1} Z_k / sqrt(n):
    // sigma^2 from the innovation factor times the stationary state
    // covariance sigma^2 * Sigma, so the gap target is sigma^4 * Sigma.
    let target = sigma.scale(noise_variance * noise_variance);
    let r_total = cfg.replications;

    let reps: Vec<RepOutcome> = (0..r_total)
        .into_par_iter()
        .map(|r| {
            run_rep(cfg, r, &target).map_err(|e| Error::Replication {
                r,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut horizons = Vec::with_capacity(cfg.n_grid.len());
    let mut records = Vec::with_capacity(r_total * cfg.n_grid.len());
    for (i, &n) in cfg.n_grid.iter().enumerate() {
        let clt_raw: Vec<Vec<f64>> = reps.iter().map(|rep| rep.per_n[i].clt.clone()).collect();
        let self_raw: Vec<Vec<f64>> =
            reps.iter().map(|rep| rep.per_n[i].self_norm.clone()).collect();
        let clt_std: Vec<Vec<f64>> = clt_raw.iter().map(|v| sigma_root.mul_vec(v)).collect();
        let self_std: Vec<Vec<f64>> = self_raw
            .iter()
            .map(|v| v.iter().map(|t| t / noise_sd).collect())
            .collect();
        let clt = stat_summary(&clt_std, &clt_raw)?;
        let self_norm = stat_summary(&self_std, &self_raw)?;

        let w: Vec<String> = reps.iter().map(|rep| rep.w.clone()).collect();
        let mixing = match mixing_test(&clt_std, &w, DEFAULT_MIXING_ALPHA) {
            Ok(grid) => MixingOutcome::Evaluated { grid },
            Err(e @ (Error::BucketTooSmall { .. } | Error::TooFewSamples(_))) => {
                MixingOutcome::Skipped {
                    reason: e.to_string(),
                }
            }
            Err(e) => return Err(e),
        };

        let collect = |f: &dyn Fn(&RepPerN) -> f64| -> Vec<f64> {
            reps.iter().map(|rep| f(&rep.per_n[i])).collect()
        };
        let conditions = ConditionQuantiles {
            eps_grid: cfg.eps_grid.clone(),
            clb1: (0..cfg.eps_grid.len())
                .map(|e| quantile_pair(&collect(&|rec| rec.clb1[e])))
                .collect(),
            clb2: (0..cfg.eps_grid.len())
                .map(|e| quantile_pair(&collect(&|rec| rec.clb2[e])))
                .collect(),
            ta_residual_norm: quantile_pair(&collect(&|rec| rec.ta_residual_norm)),
            tma: quantile_pair(&collect(&|rec| rec.tma)),
            raikov_gap: quantile_pair(&collect(&|rec| rec.raikov_gap)),
            norming_gap: quantile_pair(&collect(&|rec| rec.norming_gap)),
            max_norm_sq: quantile_pair(&collect(&|rec| rec.max_norm_sq)),
        };

        let rank_count = reps.iter().filter(|rep| rep.per_n[i].omega).count();
        let solved_count = reps.iter().filter(|rep| rep.per_n[i].solved).count();
        horizons.push(HorizonSummary {
            n,
            clt,
            self_norm,
            mixing,
            conditions,
            omega_frequency: rank_count as f64 / r_total as f64,
            degenerate_reps: r_total - solved_count,
        });
        for (r, rep) in reps.iter().enumerate() {
            records.push(StatRecord {
                replication: r,
                n,
                w: rep.w.clone(),
                omega: rep.per_n[i].omega,
                clt: rep.per_n[i].clt.clone(),
                self_norm: rep.per_n[i].self_norm.clone(),
            });
        }
    }
    Ok(McSummary {
        config: cfg.clone(),
        sigma,
        noise_variance,
        mixing_alpha: DEFAULT_MIXING_ALPHA,
        seeds: seeds_manifest(cfg.seed, r_total),
        horizons,
        records,
    })
}

// ---------------------------------------------------------------------------
// Gram-rank demonstrations

/// The three rank scenarios: an atom at zero in both the innovation law
/// and the initial state (singularity has positive probability at every
/// n), a zero start with continuous innovations (full rank from n = d+1
/// on), and a stationary start with continuous innovations (full rank
/// from the first horizons on).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RankCase {
    /// Innovations ThreePoint{c0 = 1, p0 = p_zero}; the initial state is 0
    /// with probability p_u0_zero, otherwise the all-ones vector.
    AtomAtZero { p_zero: f64, p_u0_zero: f64 },
    ZeroStartContinuous,
    StationaryContinuous,
}

/// Lower bound certificate for the singular event in the atom case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OmegaBound {
    pub n: usize,
    /// p_zero^n * p_u0_zero.
    pub target: f64,
    pub empirical_complement: f64,
    pub standard_error: f64,
    pub pass: bool,
}

/// Empirical frequencies of the full-rank event per horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OmegaReport {
    pub case_name: String,
    pub n_grid: Vec<usize>,
    pub frequency: Vec<f64>,
    /// Count of per-path transitions from full rank back to singular
    /// along the grid; zero in exact arithmetic.
    pub monotone_violations: usize,
    pub bound: Option<OmegaBound>,
}

impl OmegaReport {
    pub fn csv_rows(&self) -> (Vec<String>, Vec<Vec<String>>) {
        let header = vec!["case".into(), "n".into(), "frequency".into()];
        let rows = self
            .n_grid
            .iter()
            .zip(&self.frequency)
            .map(|(n, f)| vec![self.case_name.clone(), n.to_string(), format!("{f}")])
            .collect();
        (header, rows)
    }
}

fn is_continuous(spec: &InnovationSpec) -> bool {
    matches!(
        spec,
        InnovationSpec::Normal { .. } | InnovationSpec::Uniform { .. }
    )
}

/// Estimates P(Gram(n) positive definite) per horizon under the given
/// scenario. The atom case additionally reports the closed-form lower
/// bound on the singular event at the largest horizon.
pub fn omega_rank_demo(case: &RankCase, cfg: &McConfig) -> Result<OmegaReport> {
    cfg.validate()?;
    let p = &cfg.model;
    let d = p.dim();
    let max_n = *cfg.n_grid.last().expect("validated nonempty");
    let (case_name, spec) = match case {
        RankCase::AtomAtZero { p_zero, p_u0_zero } => {
            if !(*p_zero > 0.0 && *p_zero < 1.0) {
                return Err(Error::bad_config("p_zero must lie in (0, 1)"));
            }
            if !(*p_u0_zero >= 0.0 && *p_u0_zero <= 1.0) {
                return Err(Error::bad_config("p_u0_zero must lie in [0, 1]"));
            }
            (
                "atom_at_zero".to_string(),
                InnovationSpec::ThreePoint { c0: 1.0, p0: *p_zero },
            )
        }
        RankCase::ZeroStartContinuous => {
            if !is_continuous(&cfg.innovation) {
                return Err(Error::bad_config(
                    "zero_start_continuous needs a continuous innovation law",
                ));
            }
            ("zero_start_continuous".to_string(), cfg.innovation.clone())
        }
        RankCase::StationaryContinuous => {
            if !is_continuous(&cfg.innovation) {
                return Err(Error::bad_config(
                    "stationary_continuous needs a continuous innovation law",
                ));
            }
            ("stationary_continuous".to_string(), cfg.innovation.clone())
        }
    };
    let r_total = cfg.replications;
    let stat_tol = match &cfg.initial {
        InitialState::Stationary { tol } => *tol,
        _ => 1e-10,
    };

    let flags: Vec<Vec<bool>> = (0..r_total)
        .into_par_iter()
        .map(|r| -> Result<Vec<bool>> {
            let mut rng = RngStream::substream(cfg.seed, r as u64);
            let u0 = match case {
                RankCase::AtomAtZero { p_u0_zero, .. } => {
                    if rng.uniform() < *p_u0_zero {
                        vec![0.0; d]
                    } else {
                        vec![1.0; d]
                    }
                }
                RankCase::ZeroStartContinuous => vec![0.0; d],
                RankCase::StationaryContinuous => {
                    stationary_initial(p, &spec, stat_tol, &mut rng)?
                }
            };
            let z: Vec<f64> = (0..max_n).map(|_| spec.sample(&mut rng)).collect();
            cfg.n_grid
                .iter()
                .map(|&n| {
                    let path = simulate_driven(p, &u0, &z[..n])?;
                    Ok(is_full_rank(&gram(&path)))
                })
                .collect()
        })
        .collect::<Result<Vec<_>>>()?;

    let frequency: Vec<f64> = (0..cfg.n_grid.len())
        .map(|i| flags.iter().filter(|f| f[i]).count() as f64 / r_total as f64)
        .collect();
    let monotone_violations = flags
        .iter()
        .map(|f| f.windows(2).filter(|w| w[0] && !w[1]).count())
        .sum();
    let bound = match case {
        RankCase::AtomAtZero { p_zero, p_u0_zero } => {
            let n = max_n;
            let target = p_zero.powi(n as i32) * p_u0_zero;
            let p_hat = 1.0 - frequency[cfg.n_grid.len() - 1];
            let se = (p_hat * (1.0 - p_hat) / r_total as f64).sqrt();
            Some(OmegaBound {
                n,
                target,
                empirical_complement: p_hat,
                standard_error: se,
                pass: p_hat >= target - 3.0 * se,
            })
        }
        _ => None,
    };
    Ok(OmegaReport {
        case_name,
        n_grid: cfg.n_grid.clone(),
        frequency,
        monotone_violations,
        bound,
    })
}

// ---------------------------------------------------------------------------
// Decay report

/// Final-horizon thresholds per condition statistic. A family threshold
/// applies to that statistic at every eps in the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecayThresholds {
    pub clb1: f64,
    pub clb2: f64,
    pub ta_residual_norm: f64,
    pub tma: f64,
    pub raikov_gap: f64,
    pub norming_gap: f64,
    pub max_norm_sq: f64,
}

impl DecayThresholds {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.clb1,
            self.clb2,
            self.ta_residual_norm,
            self.tma,
            self.raikov_gap,
            self.norming_gap,
            self.max_norm_sq,
        ];
        if all.iter().any(|t| !(t > &0.0 && t.is_finite())) {
            return Err(Error::bad_config("decay thresholds must be positive and finite"));
        }
        Ok(())
    }
}

/// Decay verdict for one statistic (at one eps where applicable).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayRow {
    pub statistic: String,
    pub eps: Option<f64>,
    pub threshold: f64,
    pub medians: Vec<f64>,
    pub q90: Vec<f64>,
    pub strictly_decreasing: bool,
    pub final_below: bool,
    pub pass: bool,
}

/// Median/90th-percentile decay table along the horizon grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayReport {
    pub n_grid: Vec<usize>,
    pub rows: Vec<DecayRow>,
    pub all_pass: bool,
}

impl DecayReport {
    pub fn csv_rows(&self) -> (Vec<String>, Vec<Vec<String>>) {
        let header: Vec<String> = vec![
            "statistic".into(),
            "eps".into(),
            "n".into(),
            "median".into(),
            "q90".into(),
            "threshold".into(),
            "strictly_decreasing".into(),
            "final_below".into(),
            "pass".into(),
        ];
        let mut rows = Vec::new();
        for row in &self.rows {
            for (i, &n) in self.n_grid.iter().enumerate() {
                rows.push(vec![
                    row.statistic.clone(),
                    row.eps.map(|e| format!("{e}")).unwrap_or_default(),
                    n.to_string(),
                    format!("{}", row.medians[i]),
                    format!("{}", row.q90[i]),
                    format!("{}", row.threshold),
                    (row.strictly_decreasing as u8).to_string(),
                    (row.final_below as u8).to_string(),
                    (row.pass as u8).to_string(),
                ]);
            }
        }
        (header, rows)
    }
}

fn decay_row(
    statistic: &str,
    eps: Option<f64>,
    threshold: f64,
    medians: Vec<f64>,
    q90: Vec<f64>,
) -> DecayRow {
    let strictly_decreasing = medians.windows(2).all(|w| w[1] < w[0]);
    let final_below = *medians.last().expect("grid nonempty") <= threshold;
    DecayRow {
        statistic: statistic.to_string(),
        eps,
        threshold,
        medians,
        q90,
        strictly_decreasing,
        final_below,
        pass: strictly_decreasing && final_below,
    }
}

/// Runs the experiment and turns the per-horizon condition quantiles into
/// decay verdicts: a row passes iff its medians strictly decrease along
/// the grid and the largest-horizon median is at or below the threshold.
pub fn decay_report(cfg: &McConfig, thresholds: &DecayThresholds) -> Result<DecayReport> {
    if cfg.n_grid.len() < 3 {
        return Err(Error::bad_config("decay grid needs at least 3 horizons"));
    }
    thresholds.validate()?;
    let summary = run_experiment(cfg)?;
    let grid_len = cfg.n_grid.len();
    let pull = |f: &dyn Fn(&ConditionQuantiles) -> QuantilePair| -> (Vec<f64>, Vec<f64>) {
        let mut med = Vec::with_capacity(grid_len);
        let mut q90 = Vec::with_capacity(grid_len);
        for h in &summary.horizons {
            let qp = f(&h.conditions);
            med.push(qp.median);
            q90.push(qp.q90);
        }
        (med, q90)
    };
    let mut rows = Vec::new();
    for (e, &eps) in cfg.eps_grid.iter().enumerate() {
        let (med, q90) = pull(&|c| c.clb1[e].clone());
        rows.push(decay_row("clb1", Some(eps), thresholds.clb1, med, q90));
        let (med, q90) = pull(&|c| c.clb2[e].clone());
        rows.push(decay_row("clb2", Some(eps), thresholds.clb2, med, q90));
    }
    let (med, q90) = pull(&|c| c.ta_residual_norm.clone());
    rows.push(decay_row("ta_residual_norm", None, thresholds.ta_residual_norm, med, q90));
    let (med, q90) = pull(&|c| c.tma.clone());
    rows.push(decay_row("tma", None, thresholds.tma, med, q90));
    let (med, q90) = pull(&|c| c.raikov_gap.clone());
    rows.push(decay_row("raikov_gap", None, thresholds.raikov_gap, med, q90));
    let (med, q90) = pull(&|c| c.norming_gap.clone());
    rows.push(decay_row("norming_gap", None, thresholds.norming_gap, med, q90));
    let (med, q90) = pull(&|c| c.max_norm_sq.clone());
    rows.push(decay_row("max_norm_sq", None, thresholds.max_norm_sq, med, q90));
    let all_pass = rows.iter().all(|r| r.pass);
    Ok(DecayReport {
        n_grid: cfg.n_grid.clone(),
        rows,
        all_pass,
    })
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ContinuousCDF, Normal};

    fn base_cfg() -> McConfig {
        McConfig {
            model: ArParams::new(vec![0.5]).unwrap(),
            innovation: InnovationSpec::Normal { sigma: 1.0 },
            n_grid: vec![50],
            replications: 40,
            seed: 7,
            conditioning: Conditioning::SignZ1,
            truncation_a: 1.0,
            eps_grid: vec![0.25],
            initial: InitialState::Zero,
        }
    }

    #[test]
    fn kolmogorov_series_frozen_values() {
        // P(K <= 1.358) is about 0.95.
        assert!((kolmogorov_q(1.358) - 0.05).abs() < 5e-4);
        // P(K <= 1.628) is about 0.99.
        assert!((kolmogorov_q(1.628) - 0.01).abs() < 2e-4);
        assert_eq!(kolmogorov_q(0.0), 1.0);
        assert!(kolmogorov_q(6.0) < 1e-28);
        // Strictly decreasing once the tail leaves the f64 saturation
        // zone (q(t) = 1 to double precision below t around 0.18).
        let grid: Vec<f64> = (0..57).map(|i| 0.2 + 0.05 * i as f64).collect();
        for w in grid.windows(2) {
            assert!(kolmogorov_q(w[1]) < kolmogorov_q(w[0]));
        }
    }

    #[test]
    fn ks_requires_eight_samples() {
        let err = ks_test(&[0.0; 7], std_normal_cdf).unwrap_err();
        assert!(matches!(err, Error::TooFewSamples(7)));
    }

    #[test]
    fn ks_rejects_constant_sample() {
        let r = ks_test(&[0.3; 1000], std_normal_cdf).unwrap();
        assert!(r.p_value < 1e-6, "p = {}", r.p_value);
    }

    #[test]
    fn ks_accepts_exact_normal_quantiles() {
        let normal = Normal::new(0.0, 1.0).unwrap();
        let m = 1000;
        let sample: Vec<f64> = (0..m)
            .map(|i| normal.inverse_cdf((i as f64 + 0.5) / m as f64))
            .collect();
        let r = ks_test(&sample, std_normal_cdf).unwrap();
        // Empirical CDF of the quantile grid is off by at most 1/(2m).
        assert!(r.statistic <= 0.5 / (m as f64).sqrt() + 1e-9);
        assert!(r.p_value > 0.999);
    }

    #[test]
    fn ks_level_is_controlled() {
        let spec = InnovationSpec::Normal { sigma: 1.0 };
        let mut hits = 0;
        for run in 0..20 {
            let mut rng = RngStream::from_seed(5000 + run);
            let sample: Vec<f64> = (0..1500).map(|_| spec.sample(&mut rng)).collect();
            if ks_test(&sample, std_normal_cdf).unwrap().p_value > 0.01 {
                hits += 1;
            }
        }
        assert!(hits >= 18, "only {hits}/20 runs passed at the 1% level");
    }

    #[test]
    fn two_sample_ks_basics() {
        let a: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let id = ks_two_sample(&a, &a).unwrap();
        assert_eq!(id.statistic, 0.0);
        assert_eq!(id.p_value, 1.0);
        // Disjoint supports: D = 1.
        let b: Vec<f64> = (0..100).map(|i| 1000.0 + i as f64).collect();
        let dj = ks_two_sample(&a, &b).unwrap();
        assert!((dj.statistic - (100.0f64 * 100.0 / 200.0).sqrt()).abs() < 1e-12);
        assert!(dj.p_value < 1e-6);
        // Ties across samples are walked jointly: identical discrete laws.
        let c: Vec<f64> = (0..200).map(|i| (i % 3) as f64).collect();
        let d: Vec<f64> = (0..100).map(|i| (i % 3) as f64).collect();
        let tied = ks_two_sample(&c, &d).unwrap();
        assert!(tied.statistic <= 0.02 * (100.0f64 * 200.0 / 300.0).sqrt() + 1e-12);
    }

    #[test]
    fn standardize_identity_and_scalar() {
        let samples = vec![vec![1.0, -2.0], vec![0.5, 0.25]];
        let out = standardize(&samples, &SymMat::identity(2)).unwrap();
        assert_eq!(out, samples);
        let scaled = standardize(&vec![vec![3.0]], &SymMat::diag(&[4.0])).unwrap();
        assert!((scaled[0][0] - 6.0).abs() < 1e-12);
        let err = standardize(&samples, &SymMat::zeros(2)).unwrap_err();
        assert!(matches!(err, Error::NotPd));
    }

    #[test]
    fn mixing_passes_under_exact_independence() {
        let mut rng = RngStream::from_seed(11);
        let spec = InnovationSpec::Normal { sigma: 1.0 };
        let mut passes = 0;
        for _ in 0..40 {
            let samples: Vec<Vec<f64>> = (0..300).map(|_| vec![spec.sample(&mut rng)]).collect();
            let w: Vec<String> = (0..300)
                .map(|_| {
                    if rng.uniform() < 0.5 {
                        "a".to_string()
                    } else {
                        "b".to_string()
                    }
                })
                .collect();
            if mixing_test(&samples, &w, 0.01).unwrap().pass {
                passes += 1;
            }
        }
        assert!(passes >= 38, "only {passes}/40 independent runs passed");
    }

    #[test]
    fn mixing_rejects_functional_dependence() {
        // The negative control: the statistic is the conditioning variable.
        let mut rng = RngStream::from_seed(12);
        let spec = InnovationSpec::Normal { sigma: 1.0 };
        let samples: Vec<Vec<f64>> = (0..500).map(|_| vec![spec.sample(&mut rng)]).collect();
        let w: Vec<String> = samples
            .iter()
            .map(|s| if s[0] > 0.0 { "pos".into() } else { "neg".into() })
            .collect();
        let grid = mixing_test(&samples, &w, 0.01).unwrap();
        assert!(!grid.pass);
        assert!(grid.cells.iter().all(|c| c.ks.p_value < 1e-6));
    }

    #[test]
    fn mixing_rejects_degenerate_buckets() {
        let samples: Vec<Vec<f64>> = (0..100).map(|i| vec![i as f64]).collect();
        let one: Vec<String> = vec!["only".into(); 100];
        assert!(matches!(
            mixing_test(&samples, &one, 0.01).unwrap_err(),
            Error::BucketTooSmall { .. }
        ));
        let mut tiny: Vec<String> = vec!["big".into(); 97];
        tiny.extend(vec!["small".into(); 3]);
        let err = mixing_test(&samples, &tiny, 0.01).unwrap_err();
        assert!(matches!(err, Error::BucketTooSmall { size: 3, .. }));
    }

    #[test]
    fn quantiles_interpolate() {
        assert_eq!(quantile(&[3.0, 1.0, 2.0, 4.0], 0.5), 2.5);
        let v: Vec<f64> = (1..=10).map(|i| i as f64).collect();
        assert!((quantile(&v, 0.9) - 9.1).abs() < 1e-12);
        assert_eq!(quantile(&[5.0], 0.9), 5.0);
    }

    #[test]
    fn config_validation_catches_bad_grids() {
        let mut cfg = base_cfg();
        cfg.n_grid = vec![50, 50];
        assert!(matches!(cfg.validate(), Err(Error::BadConfig(_))));
        let mut cfg = base_cfg();
        cfg.replications = 1;
        assert!(cfg.validate().is_err());
        let mut cfg = base_cfg();
        cfg.eps_grid = vec![0.5, 0.25];
        assert!(cfg.validate().is_err());
        let mut cfg = base_cfg();
        cfg.initial = InitialState::Fixed { u0: vec![1.0, 2.0] };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn config_serde_roundtrip_and_strictness() {
        let cfg = base_cfg();
        let json = serde_json::to_string(&cfg).unwrap();
        let back: McConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cfg);
        // Unknown fields are rejected.
        let bad = json.replacen('{', "{\"extra\":1,", 1);
        assert!(serde_json::from_str::<McConfig>(&bad).is_err());
    }

    #[test]
    fn experiment_bookkeeping_smallest_case() {
        let mut cfg = base_cfg();
        cfg.replications = 2;
        cfg.n_grid = vec![10];
        let s = run_experiment(&cfg).unwrap();
        assert_eq!(s.records.len(), 2);
        assert_eq!(s.horizons.len(), 1);
        assert!(s.horizons[0].clt.ks.is_none(), "ks needs 8 samples");
        assert!(matches!(s.horizons[0].mixing, MixingOutcome::Skipped { .. }));
    }

    #[test]
    fn experiment_is_deterministic_across_worker_counts() {
        let mut cfg = base_cfg();
        cfg.n_grid = vec![30, 60];
        cfg.replications = 48;
        let pool1 = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let pool3 = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let s1 = pool1.install(|| run_experiment(&cfg)).unwrap();
        let s3 = pool3.install(|| run_experiment(&cfg)).unwrap();
        assert_eq!(s1.to_json(), s3.to_json());
        let again = pool3.install(|| run_experiment(&cfg)).unwrap();
        assert_eq!(s3.to_json(), again.to_json());
    }

    #[test]
    fn experiment_statistics_look_like_the_limit() {
        // Loose in-module sanity; the tight version lives in acceptance.
        let cfg = McConfig {
            model: ArParams::new(vec![0.0]).unwrap(),
            innovation: InnovationSpec::Normal { sigma: 1.0 },
            n_grid: vec![400],
            replications: 400,
            seed: 2024,
            conditioning: Conditioning::SignZ1,
            truncation_a: 1.0,
            eps_grid: vec![0.1],
            initial: InitialState::Zero,
        };
        let s = run_experiment(&cfg).unwrap();
        let h = &s.horizons[0];
        assert_eq!(h.omega_frequency, 1.0);
        assert_eq!(h.degenerate_reps, 0);
        // theta = 0: Sigma = 1, standardized variance near 1.
        let var = h.clt.std_cov.get(0, 0);
        assert!((var - 1.0).abs() < 0.2, "standardized variance {var}");
        let ks = h.clt.ks.as_ref().unwrap();
        assert!(ks[0].p_value > 1e-3, "ks p {}", ks[0].p_value);
        let mean = h.clt.mean[0];
        assert!(mean.abs() < 0.2, "mean {mean}");
    }

    #[test]
    fn statistics_csv_shape() {
        let mut cfg = base_cfg();
        cfg.replications = 3;
        cfg.n_grid = vec![10, 20];
        let s = run_experiment(&cfg).unwrap();
        let (header, rows) = s.statistics_csv();
        assert_eq!(rows.len(), 6);
        assert_eq!(header.len(), 4 + 2 * cfg.model.dim());
        for row in &rows {
            assert_eq!(row.len(), header.len());
        }
    }

    #[test]
    fn omega_zero_start_reaches_full_rank_at_d_plus_one() {
        let cfg = McConfig {
            model: ArParams::new(vec![0.3, 0.1]).unwrap(),
            innovation: InnovationSpec::Normal { sigma: 1.0 },
            n_grid: vec![1, 2, 3],
            replications: 200,
            seed: 31,
            conditioning: Conditioning::SignZ1,
            truncation_a: 1.0,
            eps_grid: vec![0.1],
            initial: InitialState::Zero,
        };
        let rep = omega_rank_demo(&RankCase::ZeroStartContinuous, &cfg).unwrap();
        assert_eq!(rep.frequency[0], 0.0, "Gram(1) = 0 outer product");
        assert_eq!(rep.frequency[2], 1.0, "full rank at n = d+1");
        assert_eq!(rep.monotone_violations, 0);
        assert!(rep.bound.is_none());
    }

    #[test]
    fn omega_stationary_start_is_full_rank_early() {
        let cfg = McConfig {
            model: ArParams::new(vec![0.5]).unwrap(),
            innovation: InnovationSpec::Uniform { b: 1.0 },
            n_grid: vec![1, 2],
            replications: 200,
            seed: 32,
            conditioning: Conditioning::SignZ1,
            truncation_a: 1.0,
            eps_grid: vec![0.1],
            initial: InitialState::Stationary { tol: 1e-10 },
        };
        let rep = omega_rank_demo(&RankCase::StationaryContinuous, &cfg).unwrap();
        assert_eq!(rep.frequency, vec![1.0, 1.0]);
    }

    #[test]
    fn omega_atom_case_hits_the_lower_bound() {
        let cfg = McConfig {
            model: ArParams::new(vec![0.5]).unwrap(),
            innovation: InnovationSpec::Normal { sigma: 1.0 },
            n_grid: vec![1, 2, 3],
            replications: 2000,
            seed: 33,
            conditioning: Conditioning::SignZ1,
            truncation_a: 1.0,
            eps_grid: vec![0.1],
            initial: InitialState::Zero,
        };
        let case = RankCase::AtomAtZero { p_zero: 0.5, p_u0_zero: 1.0 };
        let rep = omega_rank_demo(&case, &cfg).unwrap();
        let bound = rep.bound.unwrap();
        assert_eq!(bound.target, 0.125);
        assert!(bound.pass, "complement {} below target", bound.empirical_complement);
        assert_eq!(rep.monotone_violations, 0);
        // Discrete innovations rejected for the continuous cases.
        let mut disc = cfg;
        disc.innovation = InnovationSpec::Rademacher { c0: 1.0 };
        assert!(omega_rank_demo(&RankCase::ZeroStartContinuous, &disc).is_err());
    }

    #[test]
    fn decay_medians_fall_for_pure_noise() {
        let cfg = McConfig {
            model: ArParams::new(vec![0.0]).unwrap(),
            innovation: InnovationSpec::Normal { sigma: 1.0 },
            n_grid: vec![50, 200, 800],
            replications: 60,
            seed: 41,
            conditioning: Conditioning::SignZ1,
            truncation_a: 1.0,
            eps_grid: vec![0.5],
            initial: InitialState::Zero,
        };
        let thresholds = DecayThresholds {
            clb1: 1.0,
            clb2: 1.0,
            ta_residual_norm: 1.0,
            tma: 2.0,
            raikov_gap: 1.0,
            norming_gap: 1.0,
            max_norm_sq: 1.0,
        };
        let report = decay_report(&cfg, &thresholds).unwrap();
        let clb2_row = report.rows.iter().find(|r| r.statistic == "clb2").unwrap();
        assert!(clb2_row.strictly_decreasing, "medians {:?}", clb2_row.medians);
        let tma_row = report.rows.iter().find(|r| r.statistic == "tma").unwrap();
        // Truncation bound: tma <= 2a always.
        assert!(tma_row.q90.iter().all(|&v| v <= 2.0 * cfg.truncation_a + 1e-12));
        // Grid too short is rejected.
        let mut short = cfg;
        short.n_grid = vec![50, 100];
        assert!(decay_report(&short, &thresholds).is_err());
    }

    #[test]
    fn replication_errors_carry_the_index() {
        // An explosive model is rejected before any replication runs; an
        // overflowing stable model cannot exist, so force the error with a
        // huge fixed start and a long horizon on a near-unstable model.
        let cfg = McConfig {
            model: ArParams::new(vec![1.2]).unwrap(),
            innovation: InnovationSpec::Normal { sigma: 1.0 },
            n_grid: vec![10],
            replications: 2,
            seed: 1,
            conditioning: Conditioning::SignZ1,
            truncation_a: 1.0,
            eps_grid: vec![0.1],
            initial: InitialState::Zero,
        };
        assert!(matches!(run_experiment(&cfg), Err(Error::Unstable { .. })));
    }
}
