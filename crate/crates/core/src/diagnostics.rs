//! Condition statistics for adapted triangular arrays.
//!
//! A row holds the realized vectors X_n1..X_nkn together with an oracle
//! for their exact conditional moments given the past. Every statistic
//! here is computed exactly for the given row: conditional expectations
//! come from closed forms, never from a second Monte Carlo layer, so the
//! only randomness in reported values is the randomness of the path
//! itself. Aggregation across replications lives in the `mc` module.

use crate::error::{Error, Result};
use crate::innovations::InnovationSpec;
use crate::matrix::{vec_norm, Mat, SymMat};
use crate::rng::RngStream;

/// Exact conditional-moment callbacks for one array row. Index k is
/// 1-based and runs over the row; each value is the moment conditional on
/// the row's own past, evaluated in closed form.
pub trait RowOracle: Send + Sync {
    /// E(||X_nk|| 1{||X_nk|| >= eps} | past).
    fn abs1_tail(&self, k: usize, eps: f64) -> f64;
    /// E(||X_nk||^2 1{||X_nk|| >= eps} | past).
    fn m2_tail(&self, k: usize, eps: f64) -> f64;
    /// E(X_nk X_nk^T | past).
    fn outer(&self, k: usize) -> Mat;
    /// E(X_nk 1{||X_nk|| <= a} | past), the box compensator.
    fn box_compensator(&self, k: usize, a: f64) -> Vec<f64>;
    /// E(|X_nk,j|^2 1{|X_nk,j| >= eps} | past) for component j (0-based).
    fn component_m2_tail(&self, k: usize, j: usize, eps: f64) -> f64;
}

/// One row of an adapted triangular array: realized vectors plus the
/// conditional-moment oracle. Any scaling matrix is applied at
/// construction; the stored vectors are final.
pub struct ArrayRow {
    n: usize,
    kn: usize,
    dim: usize,
    x: Vec<Vec<f64>>,
    oracle: Box<dyn RowOracle>,
}

impl ArrayRow {
    /// Wires a row from explicit vectors and an oracle. `n` is the row
    /// index; the row length kn = x.len() must be at least n.
    pub fn from_parts(n: usize, x: Vec<Vec<f64>>, oracle: Box<dyn RowOracle>) -> Result<ArrayRow> {
        let kn = x.len();
        if kn < n || kn == 0 {
            return Err(Error::bad_param(format!(
                "row length {kn} must be positive and at least the row index {n}"
            )));
        }
        let dim = x[0].len();
        if x.iter().any(|v| v.len() != dim) {
            return Err(Error::BadDim(dim));
        }
        if x.iter().any(|v| v.iter().any(|t| !t.is_finite())) {
            return Err(Error::bad_param("row vectors must be finite"));
        }
        Ok(ArrayRow { n, kn, dim, x, oracle })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn kn(&self) -> usize {
        self.kn
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Realized vector X_nk, k = 1..=kn.
    pub fn x(&self, k: usize) -> &[f64] {
        &self.x[k - 1]
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.x
    }

    pub fn oracle(&self) -> &dyn RowOracle {
        self.oracle.as_ref()
    }
}

// ---------------------------------------------------------------------------
// The autoregressive oracle

/// Closed-form oracle for rows of the form X_nk = v_k Z_k with v_k known
/// given the past and Z_k an independent innovation: every conditional
/// moment reduces to a scaled truncated moment of Z. The convention when
/// v_k = 0 (or a component of it is 0) is that the moment is 0: the
/// vector is then almost surely zero.
pub struct FactoredOracle {
    spec: InnovationSpec,
    v: Vec<Vec<f64>>,
    v_norm: Vec<f64>,
}

impl FactoredOracle {
    pub fn new(spec: InnovationSpec, v: Vec<Vec<f64>>) -> FactoredOracle {
        let v_norm = v.iter().map(|w| vec_norm(w)).collect();
        FactoredOracle { spec, v, v_norm }
    }

    /// Loading vector v_k (the conditional direction of X_nk).
    pub fn loading(&self, k: usize) -> &[f64] {
        &self.v[k - 1]
    }
}

impl RowOracle for FactoredOracle {
    fn abs1_tail(&self, k: usize, eps: f64) -> f64 {
        let s = self.v_norm[k - 1];
        if s == 0.0 {
            return 0.0;
        }
        s * self.spec.abs1_tail(eps / s)
    }

    fn m2_tail(&self, k: usize, eps: f64) -> f64 {
        let s = self.v_norm[k - 1];
        if s == 0.0 {
            return 0.0;
        }
        s * s * self.spec.m2_tail(eps / s)
    }

    fn outer(&self, k: usize) -> Mat {
        let w = &self.v[k - 1];
        Mat::outer(w, w).scale(self.spec.variance())
    }

    fn box_compensator(&self, k: usize, a: f64) -> Vec<f64> {
        let s = self.v_norm[k - 1];
        let w = &self.v[k - 1];
        if s == 0.0 {
            return vec![0.0; w.len()];
        }
        let m = self.spec.m1_box(a / s);
        w.iter().map(|c| c * m).collect()
    }

    fn component_m2_tail(&self, k: usize, j: usize, eps: f64) -> f64 {
        let c = self.v[k - 1][j].abs();
        if c == 0.0 {
            return 0.0;
        }
        c * c * self.spec.m2_tail(eps / c)
    }
}

/// Oracle adapter that reindexes k to kn + 1 - k.
struct ReversedOracle {
    inner: Box<dyn RowOracle>,
    kn: usize,
}

impl RowOracle for ReversedOracle {
    fn abs1_tail(&self, k: usize, eps: f64) -> f64 {
        self.inner.abs1_tail(self.kn + 1 - k, eps)
    }

    fn m2_tail(&self, k: usize, eps: f64) -> f64 {
        self.inner.m2_tail(self.kn + 1 - k, eps)
    }

    fn outer(&self, k: usize) -> Mat {
        self.inner.outer(self.kn + 1 - k)
    }

    fn box_compensator(&self, k: usize, a: f64) -> Vec<f64> {
        self.inner.box_compensator(self.kn + 1 - k, a)
    }

    fn component_m2_tail(&self, k: usize, j: usize, eps: f64) -> f64 {
        self.inner.component_m2_tail(self.kn + 1 - k, j, eps)
    }
}

/// Builds the scaled martingale-difference row X_nk = K U_{k-1} Z_k from a
/// simulated path, wiring the closed-form oracle. The loading of step k is
/// v_k = K U_{k-1}, known given the past.
pub fn build_ar_row(
    path: &crate::ar::ArPath,
    p: &crate::ar::ArParams,
    spec: &InnovationSpec,
    scaling: &Mat,
) -> Result<ArrayRow> {
    let d = path.dim();
    if p.dim() != d {
        return Err(Error::BadDim(p.dim()));
    }
    if scaling.dim() != d {
        return Err(Error::BadDim(scaling.dim()));
    }
    let n = path.horizon();
    let mut x = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    for k in 1..=n {
        let vk = scaling.mul_vec(path.state(k - 1));
        let zk = path.innovation(k);
        x.push(vk.iter().map(|c| c * zk).collect());
        v.push(vk);
    }
    let oracle = Box::new(FactoredOracle::new(spec.clone(), v));
    ArrayRow::from_parts(n, x, oracle)
}

/// Convenience scaling n^{-1/2} I_d used by every shipped experiment.
pub fn root_n_scaling(d: usize, n: usize) -> Mat {
    Mat::identity(d).scale(1.0 / (n as f64).sqrt())
}

// ---------------------------------------------------------------------------
// Condition statistics

/// Conditional Lindeberg sums at level `eps`: the L1 form and the L2 form.
pub fn clb_stats(row: &ArrayRow, eps: f64) -> (f64, f64) {
    assert!(eps > 0.0, "eps must be positive");
    let mut clb1 = 0.0;
    let mut clb2 = 0.0;
    for k in 1..=row.kn {
        clb1 += row.oracle.abs1_tail(k, eps);
        clb2 += row.oracle.m2_tail(k, eps);
    }
    (clb1, clb2)
}

/// Realized and conditional second-moment sums: the realized outer-product
/// sum and its conditional-expectation counterpart.
pub fn raikov_and_norming(row: &ArrayRow) -> (SymMat, SymMat) {
    let d = row.dim;
    let mut realized = Mat::zeros(d);
    let mut conditional = Mat::zeros(d);
    for k in 1..=row.kn {
        realized = realized.add(&Mat::outer(&row.x[k - 1], &row.x[k - 1]));
        conditional = conditional.add(&row.oracle.outer(k));
    }
    (
        SymMat::symmetrized(&realized),
        SymMat::symmetrized(&conditional),
    )
}

/// Largest realized vector norm and its square.
pub fn max_stats(row: &ArrayRow) -> (f64, f64) {
    let m = row
        .x
        .iter()
        .map(|v| vec_norm(v))
        .fold(0.0f64, f64::max);
    (m, m * m)
}

/// Per-component conditional Lindeberg sums at level `eps`.
pub fn componentwise_clb(row: &ArrayRow, eps: f64) -> Vec<f64> {
    assert!(eps > 0.0, "eps must be positive");
    (0..row.dim)
        .map(|j| (1..=row.kn).map(|k| row.oracle.component_m2_tail(k, j, eps)).sum())
        .collect()
}

/// Box-truncated, conditionally centered row: y_k = x_k 1{||x_k|| <= a}
/// minus the exact compensator. Uniformly bounded by 2a.
pub struct TruncatedRow {
    a: f64,
    y: Vec<Vec<f64>>,
    compensator: Vec<Vec<f64>>,
}

impl TruncatedRow {
    pub fn level(&self) -> f64 {
        self.a
    }

    /// Truncated vector y_k, k = 1..=kn.
    pub fn y(&self, k: usize) -> &[f64] {
        &self.y[k - 1]
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.y
    }

    /// Subtracted compensator for step k.
    pub fn compensator(&self, k: usize) -> &[f64] {
        &self.compensator[k - 1]
    }
}

/// Applies box truncation at level `a` with exact conditional centering.
pub fn truncate_row(row: &ArrayRow, a: f64) -> TruncatedRow {
    assert!(a > 0.0, "truncation level must be positive");
    let mut y = Vec::with_capacity(row.kn);
    let mut compensator = Vec::with_capacity(row.kn);
    for k in 1..=row.kn {
        let xk = &row.x[k - 1];
        let comp = row.oracle.box_compensator(k, a);
        let keep = vec_norm(xk) <= a;
        let yk: Vec<f64> = xk
            .iter()
            .zip(&comp)
            .map(|(x, c)| if keep { x - c } else { -c })
            .collect();
        y.push(yk);
        compensator.push(comp);
    }
    TruncatedRow { a, y, compensator }
}

/// The truncation-family statistics at level `a`: the residual sum linking
/// the raw and truncated rows, the largest truncated norm, and the
/// truncated outer-product sum.
pub fn truncation_family_stats(row: &ArrayRow, a: f64) -> (Vec<f64>, f64, SymMat) {
    let tr = truncate_row(row, a);
    let d = row.dim;
    let mut residual = vec![0.0; d];
    let mut tra = Mat::zeros(d);
    let mut tma = 0.0f64;
    for k in 1..=row.kn {
        let xk = &row.x[k - 1];
        let keep = vec_norm(xk) <= a;
        let comp = tr.compensator(k);
        for c in 0..d {
            let tail_part = if keep { 0.0 } else { xk[c] };
            residual[c] += tail_part + comp[c];
        }
        let yk = tr.y(k);
        tma = tma.max(vec_norm(yk));
        tra = tra.add(&Mat::outer(yk, yk));
    }
    (residual, tma, SymMat::symmetrized(&tra))
}

/// Row with the time index reversed: x'_k = x_{kn+1-k}, oracle reindexed
/// the same way. All reported statistics are permutation invariant, so
/// reversal must leave them unchanged; tests rely on that.
pub fn reverse_row(row: ArrayRow) -> ArrayRow {
    let ArrayRow { n, kn, dim, mut x, oracle } = row;
    x.reverse();
    ArrayRow {
        n,
        kn,
        dim,
        x,
        oracle: Box::new(ReversedOracle { inner: oracle, kn }),
    }
}

// ---------------------------------------------------------------------------
// Inequality audit

/// Multiplicative slack for comparisons between independently computed
/// floating-point oracle values; the audited statements are exact in real
/// arithmetic.
const AUDIT_SLACK: f64 = 1e-9;

/// Names of the audited inequalities, in evaluation order.
pub const AUDIT_CHECKS: [&str; 6] = [
    "tail_mass_forces_max",
    "l1_tail_below_l2_tail_over_eps",
    "component_vector_sandwich",
    "cauchy_schwarz_projection",
    "truncated_row_bounded_by_2a",
    "compensator_below_tail_mean",
];

/// Audit outcome: the list of checks that passed (all of them, or the
/// audit would have errored).
#[derive(Debug, Clone, PartialEq)]
pub struct AuditReport {
    pub passed: Vec<&'static str>,
}

fn audit_fail(check: &'static str, k: usize, detail: String) -> Error {
    Error::AuditFailure { check, k, detail }
}

/// Verifies, on the realized row, every pointwise inequality the limit
/// arguments lean on:
/// (i) a positive realized tail sum forces the max norm past eps;
/// (ii) the L1 tail sum is at most the L2 tail sum over eps;
/// (iii) each component Lindeberg sum is below the vector sum, and the
///       vector sum at eps is at most 2d times the component sums at
///       eps/sqrt(d);
/// (iv) projections onto a deterministic probe vector respect
///       Cauchy-Schwarz;
/// (v) the truncated row is bounded by 2a;
/// (vi) the summed compensator norm is at most the summed conditional
///      tail means at level a.
/// Oracle-valued comparisons allow 1e-9 relative slack; realized-value
/// comparisons are exact.
pub fn inequality_audit(row: &ArrayRow, eps: f64, a: f64) -> Result<AuditReport> {
    assert!(eps > 0.0 && a > 0.0, "thresholds must be positive");
    let d = row.dim;
    let mut passed = Vec::with_capacity(AUDIT_CHECKS.len());

    // (i) realized tail mass vs realized max.
    let (max_norm, _) = max_stats(row);
    let mut realized_tail = 0.0;
    for k in 1..=row.kn {
        let nk = vec_norm(&row.x[k - 1]);
        if nk >= eps {
            realized_tail += nk * nk;
        }
    }
    if realized_tail > 0.0 && max_norm < eps {
        return Err(audit_fail(
            AUDIT_CHECKS[0],
            0,
            format!("tail sum {realized_tail} positive but max norm {max_norm} < {eps}"),
        ));
    }
    passed.push(AUDIT_CHECKS[0]);

    // (ii) per step: L1 tail <= L2 tail / eps.
    for k in 1..=row.kn {
        let l1 = row.oracle.abs1_tail(k, eps);
        let l2 = row.oracle.m2_tail(k, eps);
        if l1 > (l2 / eps) * (1.0 + AUDIT_SLACK) + f64::MIN_POSITIVE {
            return Err(audit_fail(
                AUDIT_CHECKS[1],
                k,
                format!("abs tail {l1} exceeds {l2}/{eps}"),
            ));
        }
    }
    passed.push(AUDIT_CHECKS[1]);

    // (iii) component sums below the vector sum; vector sum dominated by
    // 2d times the component sums at eps/sqrt(d).
    let (_, clb2) = clb_stats(row, eps);
    let comps = componentwise_clb(row, eps);
    for (j, &cj) in comps.iter().enumerate() {
        if cj > clb2 * (1.0 + AUDIT_SLACK) + f64::MIN_POSITIVE {
            return Err(audit_fail(
                AUDIT_CHECKS[2],
                j + 1,
                format!("component sum {cj} exceeds vector sum {clb2}"),
            ));
        }
    }
    let comps_scaled = componentwise_clb(row, eps / (d as f64).sqrt());
    let sandwich = 2.0 * d as f64 * comps_scaled.iter().sum::<f64>();
    if clb2 > sandwich * (1.0 + AUDIT_SLACK) + f64::MIN_POSITIVE {
        return Err(audit_fail(
            AUDIT_CHECKS[2],
            0,
            format!("vector sum {clb2} exceeds component bound {sandwich}"),
        ));
    }
    passed.push(AUDIT_CHECKS[2]);

    // (iv) Cauchy-Schwarz against a deterministic probe direction.
    let mut probe_rng = RngStream::from_seed(0xAD17 ^ (row.n as u64));
    let u: Vec<f64> = (0..d).map(|_| 2.0 * probe_rng.uniform() - 1.0).collect();
    let u_norm = vec_norm(&u);
    for k in 1..=row.kn {
        let xk = &row.x[k - 1];
        let dot: f64 = u.iter().zip(xk).map(|(a, b)| a * b).sum();
        let bound = u_norm * vec_norm(xk);
        if dot.abs() > bound * (1.0 + AUDIT_SLACK) + f64::MIN_POSITIVE {
            return Err(audit_fail(
                AUDIT_CHECKS[3],
                k,
                format!("projection {} exceeds bound {bound}", dot.abs()),
            ));
        }
    }
    passed.push(AUDIT_CHECKS[3]);

    // (v) truncated row uniformly bounded by 2a.
    let tr = truncate_row(row, a);
    for k in 1..=row.kn {
        let nk = vec_norm(tr.y(k));
        if nk > 2.0 * a * (1.0 + AUDIT_SLACK) {
            return Err(audit_fail(
                AUDIT_CHECKS[4],
                k,
                format!("truncated norm {nk} exceeds 2a = {}", 2.0 * a),
            ));
        }
    }
    passed.push(AUDIT_CHECKS[4]);

    // (vi) the compensator sum is dominated by the conditional tail means.
    let mut comp_sum = vec![0.0; d];
    let mut tail_mean_sum = 0.0;
    for k in 1..=row.kn {
        for (acc, c) in comp_sum.iter_mut().zip(tr.compensator(k)) {
            *acc += c;
        }
        tail_mean_sum += row.oracle.abs1_tail(k, a);
    }
    let lhs = vec_norm(&comp_sum);
    if lhs > tail_mean_sum * (1.0 + AUDIT_SLACK) + f64::MIN_POSITIVE {
        return Err(audit_fail(
            AUDIT_CHECKS[5],
            0,
            format!("compensator norm {lhs} exceeds tail mean sum {tail_mean_sum}"),
        ));
    }
    passed.push(AUDIT_CHECKS[5]);

    Ok(AuditReport { passed })
}

// ---------------------------------------------------------------------------
// Assembled report

/// All condition statistics of one row at a truncation level and a grid of
/// Lindeberg thresholds.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionReport {
    pub n: usize,
    pub kn: usize,
    pub dim: usize,
    pub eps_grid: Vec<f64>,
    pub truncation_a: f64,
    /// L1 Lindeberg sum per eps.
    pub clb1: Vec<f64>,
    /// L2 Lindeberg sum per eps.
    pub clb2: Vec<f64>,
    /// Per-eps, per-component L2 Lindeberg sums.
    pub per_component_clb2: Vec<Vec<f64>>,
    pub raikov: SymMat,
    pub norming: SymMat,
    pub max_norm: f64,
    pub max_norm_sq: f64,
    pub ta_residual: Vec<f64>,
    pub tma: f64,
    pub tra: SymMat,
}

/// Evaluates every condition statistic on one row.
pub fn condition_report(row: &ArrayRow, eps_grid: &[f64], a: f64) -> ConditionReport {
    assert!(!eps_grid.is_empty(), "eps grid must be nonempty");
    let mut clb1 = Vec::with_capacity(eps_grid.len());
    let mut clb2 = Vec::with_capacity(eps_grid.len());
    let mut per_component = Vec::with_capacity(eps_grid.len());
    for &eps in eps_grid {
        let (a1, a2) = clb_stats(row, eps);
        clb1.push(a1);
        clb2.push(a2);
        per_component.push(componentwise_clb(row, eps));
    }
    let (raikov, norming) = raikov_and_norming(row);
    let (max_norm, max_norm_sq) = max_stats(row);
    let (ta_residual, tma, tra) = truncation_family_stats(row, a);
    ConditionReport {
        n: row.n,
        kn: row.kn,
        dim: row.dim,
        eps_grid: eps_grid.to_vec(),
        truncation_a: a,
        clb1,
        clb2,
        per_component_clb2: per_component,
        raikov,
        norming,
        max_norm,
        max_norm_sq,
        ta_residual,
        tma,
        tra,
    }
}

impl ConditionReport {
    /// CSV column names for a given dimension; one record per eps value.
    /// Matrix columns are flattened row-major with 1-based indices.
    pub fn csv_header(dim: usize) -> Vec<String> {
        let mut h = vec![
            "n".into(),
            "kn".into(),
            "dim".into(),
            "eps".into(),
            "a".into(),
            "clb1".into(),
            "clb2".into(),
        ];
        for j in 1..=dim {
            h.push(format!("clb2_c{j}"));
        }
        h.extend([
            "max_norm".into(),
            "max_norm_sq".into(),
            "tma".into(),
            "ta_residual_norm".into(),
        ] as [String; 4]);
        for j in 1..=dim {
            h.push(format!("ta_residual_{j}"));
        }
        for name in ["raikov", "norming", "tra"] {
            for i in 1..=dim {
                for j in 1..=dim {
                    h.push(format!("{name}_{i}_{j}"));
                }
            }
        }
        h
    }

    /// One CSV record per eps value, column order matching `csv_header`.
    pub fn csv_records(&self) -> Vec<Vec<String>> {
        let d = self.dim;
        let fmt = |v: f64| format!("{v}");
        self.eps_grid
            .iter()
            .enumerate()
            .map(|(e, &eps)| {
                let mut rec = vec![
                    self.n.to_string(),
                    self.kn.to_string(),
                    d.to_string(),
                    fmt(eps),
                    fmt(self.truncation_a),
                    fmt(self.clb1[e]),
                    fmt(self.clb2[e]),
                ];
                for j in 0..d {
                    rec.push(fmt(self.per_component_clb2[e][j]));
                }
                rec.push(fmt(self.max_norm));
                rec.push(fmt(self.max_norm_sq));
                rec.push(fmt(self.tma));
                rec.push(fmt(vec_norm(&self.ta_residual)));
                for j in 0..d {
                    rec.push(fmt(self.ta_residual[j]));
                }
                for m in [&self.raikov, &self.norming, &self.tra] {
                    for i in 0..d {
                        for j in 0..d {
                            rec.push(fmt(m.get(i, j)));
                        }
                    }
                }
                rec
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ar::{simulate, ArParams};
    use crate::matrix::sym_eigen;

    fn small_row(seed: u64, theta: &[f64], spec: InnovationSpec, n: usize) -> ArrayRow {
        let p = ArParams::new(theta.to_vec()).unwrap();
        let mut rng = RngStream::from_seed(seed);
        let u0 = vec![0.5; theta.len()];
        let path = simulate(&p, &spec, &u0, n, &mut rng).unwrap();
        build_ar_row(&path, &p, &spec, &root_n_scaling(theta.len(), n)).unwrap()
    }

    #[test]
    fn zero_scaling_kills_everything() {
        let p = ArParams::new(vec![0.5, 0.2]).unwrap();
        let spec = InnovationSpec::Normal { sigma: 1.0 };
        let mut rng = RngStream::from_seed(1);
        let path = simulate(&p, &spec, &[1.0, 1.0], 50, &mut rng).unwrap();
        let row = build_ar_row(&path, &p, &spec, &Mat::zeros(2)).unwrap();
        let (c1, c2) = clb_stats(&row, 0.5);
        assert_eq!((c1, c2), (0.0, 0.0));
        let (r, nmat) = raikov_and_norming(&row);
        assert_eq!(r.frobenius_norm(), 0.0);
        assert_eq!(nmat.frobenius_norm(), 0.0);
        assert_eq!(max_stats(&row), (0.0, 0.0));
        let (residual, tma, tra) = truncation_family_stats(&row, 1.0);
        assert_eq!(vec_norm(&residual), 0.0);
        assert_eq!(tma, 0.0);
        assert_eq!(tra.frobenius_norm(), 0.0);
    }

    #[test]
    fn row_sum_matches_scaled_martingale_sum() {
        let p = ArParams::new(vec![0.5, 0.2]).unwrap();
        let spec = InnovationSpec::Uniform { b: 1.5 };
        let mut rng = RngStream::from_seed(2);
        let n = 200;
        let path = simulate(&p, &spec, &[0.3, -0.2], n, &mut rng).unwrap();
        let row = build_ar_row(&path, &p, &spec, &root_n_scaling(2, n)).unwrap();
        let mut row_sum = vec![0.0; 2];
        for k in 1..=n {
            for c in 0..2 {
                row_sum[c] += row.x(k)[c];
            }
        }
        let mut direct = vec![0.0; 2];
        for k in 1..=n {
            for c in 0..2 {
                direct[c] += path.state(k - 1)[c] * path.innovation(k);
            }
        }
        let root_n = (n as f64).sqrt();
        for c in 0..2 {
            assert!((row_sum[c] - direct[c] / root_n).abs() <= 1e-12 * (1.0 + direct[c].abs()));
        }
    }

    #[test]
    fn bounded_row_has_zero_tail_sums() {
        // Rademacher innovations and a bounded state give a bounded row;
        // above the bound every tail statistic vanishes.
        let spec = InnovationSpec::Rademacher { c0: 1.0 };
        let row = small_row(3, &[0.0], spec, 100);
        let bound = (1..=100).map(|k| vec_norm(row.x(k))).fold(0.0f64, f64::max);
        let (c1, c2) = clb_stats(&row, bound + 0.1);
        assert_eq!((c1, c2), (0.0, 0.0));
        let comps = componentwise_clb(&row, bound + 0.1);
        assert!(comps.iter().all(|&c| c == 0.0));
    }

    #[test]
    fn norming_matches_direct_gram_formula() {
        let p = ArParams::new(vec![0.5, 0.2]).unwrap();
        let spec = InnovationSpec::Normal { sigma: 0.7 };
        let mut rng = RngStream::from_seed(4);
        let n = 100;
        let path = simulate(&p, &spec, &[1.0, 0.0], n, &mut rng).unwrap();
        let row = build_ar_row(&path, &p, &spec, &root_n_scaling(2, n)).unwrap();
        let (_, norming) = raikov_and_norming(&row);
        let g = crate::ar::gram(&path);
        let expect = g.scale(0.49 / n as f64);
        assert!(norming.sub(&expect).frobenius_norm() <= 1e-12 * (1.0 + expect.frobenius_norm()));
    }

    #[test]
    fn raikov_norming_tra_are_psd() {
        let spec = InnovationSpec::AsymTwoPoint { a: 2.0, b: 1.0 };
        let row = small_row(5, &[0.4, 0.1], spec, 150);
        let (r, nm) = raikov_and_norming(&row);
        let (_, _, tra) = truncation_family_stats(&row, 0.7);
        for m in [r, nm, tra] {
            let (vals, _) = sym_eigen(&m, 1e-12).unwrap();
            assert!(vals.iter().all(|&v| v >= -1e-10 * (1.0 + m.frobenius_norm())));
        }
    }

    #[test]
    fn truncation_bound_and_identity() {
        let spec = InnovationSpec::AsymTwoPoint { a: 3.0, b: 1.0 };
        let row = small_row(6, &[0.5], spec, 400);
        for &a in &[0.05, 0.3, 1.0, 5.0] {
            let tr = truncate_row(&row, a);
            for k in 1..=row.kn() {
                assert!(vec_norm(tr.y(k)) <= 2.0 * a * (1.0 + 1e-12));
            }
            let (residual, tma, _) = truncation_family_stats(&row, a);
            assert!(tma <= 2.0 * a * (1.0 + 1e-12));
            // Decomposition: sum x - sum y = residual.
            let mut gap = 0.0f64;
            for c in 0..row.dim() {
                let sx: f64 = (1..=row.kn()).map(|k| row.x(k)[c]).sum();
                let sy: f64 = (1..=row.kn()).map(|k| tr.y(k)[c]).sum();
                gap = gap.max((sx - sy - residual[c]).abs());
            }
            assert!(gap <= 1e-12, "identity gap {gap} at a={a}");
        }
    }

    #[test]
    fn symmetric_truncation_with_huge_level_is_identity() {
        let spec = InnovationSpec::Normal { sigma: 1.0 };
        let row = small_row(7, &[0.3], spec, 200);
        let big = 1e6;
        let tr = truncate_row(&row, big);
        for k in 1..=row.kn() {
            assert_eq!(tr.y(k), row.x(k));
            assert_eq!(tr.compensator(k), &[0.0]);
        }
        let (residual, _, tra) = truncation_family_stats(&row, big);
        assert_eq!(vec_norm(&residual), 0.0);
        let (raikov, _) = raikov_and_norming(&row);
        assert!(tra.sub(&raikov).frobenius_norm() == 0.0);
    }

    #[test]
    fn tiny_level_with_symmetric_innovations_zeroes_row() {
        let spec = InnovationSpec::Rademacher { c0: 1.0 };
        let row = small_row(8, &[0.2], spec, 100);
        let min_norm = (1..=100)
            .map(|k| vec_norm(row.x(k)))
            .filter(|&v| v > 0.0)
            .fold(f64::INFINITY, f64::min);
        let tr = truncate_row(&row, min_norm / 2.0);
        for k in 1..=row.kn() {
            assert_eq!(vec_norm(tr.y(k)), 0.0);
        }
    }

    #[test]
    fn reversal_preserves_statistics_and_involutes() {
        let spec = InnovationSpec::ThreePoint { c0: 1.0, p0: 0.3 };
        let row = small_row(9, &[0.4, -0.2], spec, 120);
        let eps = 0.13;
        let a = 0.9;
        let before = condition_report(&row, &[eps], a);
        let x_before: Vec<Vec<f64>> = row.vectors().to_vec();
        let rev = reverse_row(row);
        assert_eq!(rev.x(1), &x_before[119][..]);
        let after = condition_report(&rev, &[eps], a);
        // Sums run over a permuted multiset, so allow last-ulp drift.
        let close = |x: f64, y: f64| (x - y).abs() <= 1e-12 * (1.0 + x.abs());
        assert!(close(before.clb1[0], after.clb1[0]));
        assert!(close(before.clb2[0], after.clb2[0]));
        assert_eq!(before.max_norm, after.max_norm);
        assert!(before.raikov.sub(&after.raikov).frobenius_norm() <= 1e-12);
        assert!(before.norming.sub(&after.norming).frobenius_norm() <= 1e-12);
        // Sums agree exactly as multisets; residuals may differ only by
        // summation order.
        for c in 0..2 {
            assert!((before.ta_residual[c] - after.ta_residual[c]).abs() <= 1e-12);
        }
        let double = reverse_row(rev);
        assert_eq!(double.vectors(), &x_before[..]);
    }

    #[test]
    fn max_norm_respects_factorized_bound() {
        let p = ArParams::new(vec![0.5, 0.2]).unwrap();
        let spec = InnovationSpec::Normal { sigma: 1.3 };
        let mut rng = RngStream::from_seed(21);
        let n = 300;
        let path = simulate(&p, &spec, &[1.0, -0.5], n, &mut rng).unwrap();
        let row = build_ar_row(&path, &p, &spec, &root_n_scaling(2, n)).unwrap();
        let (max_norm, max_sq) = max_stats(&row);
        assert!((max_sq - max_norm * max_norm).abs() <= 1e-15);
        let max_state = (0..n).map(|k| vec_norm(path.state(k))).fold(0.0f64, f64::max);
        let max_z = (1..=n).map(|k| path.innovation(k).abs()).fold(0.0f64, f64::max);
        let bound = max_state * max_z / (n as f64).sqrt();
        assert!(max_norm <= bound * (1.0 + 1e-12));
    }

    #[test]
    fn component_stats_match_scalar_case() {
        let spec = InnovationSpec::Uniform { b: 2.0 };
        let row = small_row(10, &[0.5], spec, 80);
        let eps = 0.21;
        let (_, clb2) = clb_stats(&row, eps);
        let comps = componentwise_clb(&row, eps);
        assert_eq!(comps.len(), 1);
        assert!((comps[0] - clb2).abs() <= 1e-12 * (1.0 + clb2));
    }

    #[test]
    fn audit_passes_on_simulated_rows() {
        let kinds = [
            InnovationSpec::Normal { sigma: 1.0 },
            InnovationSpec::Rademacher { c0: 1.0 },
            InnovationSpec::Uniform { b: 2.0 },
            InnovationSpec::ThreePoint { c0: 1.0, p0: 0.4 },
            InnovationSpec::AsymTwoPoint { a: 2.0, b: 1.0 },
        ];
        let mut seed = 100;
        for spec in kinds {
            for theta in [&[0.5][..], &[0.5, 0.2][..], &[0.3, 0.1, -0.2][..]] {
                let row = small_row(seed, theta, spec.clone(), 60);
                let report = inequality_audit(&row, 0.17, 0.83).unwrap();
                assert_eq!(report.passed.len(), AUDIT_CHECKS.len());
                seed += 1;
            }
        }
    }

    #[test]
    fn audit_passes_on_zero_and_adversarial_rows() {
        // All-zero row with the zero oracle: vacuous pass.
        let zero_oracle = FactoredOracle::new(
            InnovationSpec::Normal { sigma: 1.0 },
            vec![vec![0.0; 2]; 10],
        );
        let row = ArrayRow::from_parts(10, vec![vec![0.0; 2]; 10], Box::new(zero_oracle)).unwrap();
        assert!(inequality_audit(&row, 0.5, 1.0).is_ok());

        // One huge vector: the realized checks are inequalities, not
        // limits, and must still hold.
        let mut x = vec![vec![0.0; 2]; 10];
        x[3] = vec![1e8, -2e8];
        let mut v = vec![vec![0.0; 2]; 10];
        v[3] = vec![0.5e8, -1e8];
        let oracle = FactoredOracle::new(InnovationSpec::Rademacher { c0: 2.0 }, v);
        let row = ArrayRow::from_parts(10, x, Box::new(oracle)).unwrap();
        assert!(inequality_audit(&row, 0.5, 1.0).is_ok());
    }

    #[test]
    fn audit_catches_inconsistent_oracle() {
        // An oracle whose box compensator is too large to be a conditional
        // mean must trip the compensator check.
        struct BadOracle;
        impl RowOracle for BadOracle {
            fn abs1_tail(&self, _: usize, _: f64) -> f64 {
                0.0
            }
            fn m2_tail(&self, _: usize, _: f64) -> f64 {
                0.0
            }
            fn outer(&self, _: usize) -> Mat {
                Mat::zeros(1)
            }
            fn box_compensator(&self, _: usize, _: f64) -> Vec<f64> {
                vec![1.0]
            }
            fn component_m2_tail(&self, _: usize, _: usize, _: f64) -> f64 {
                0.0
            }
        }
        let row = ArrayRow::from_parts(4, vec![vec![0.1]; 4], Box::new(BadOracle)).unwrap();
        let err = inequality_audit(&row, 0.5, 1.0).unwrap_err();
        assert!(matches!(
            err,
            Error::AuditFailure { check: "compensator_below_tail_mean", .. }
        ));
    }

    #[test]
    fn oracle_matches_resampling_estimates() {
        // Closed-form conditional moments vs brute-force resampling of Z
        // with the loading vector held fixed.
        let kinds = [
            InnovationSpec::Normal { sigma: 0.9 },
            InnovationSpec::Rademacher { c0: 1.0 },
            InnovationSpec::Uniform { b: 1.7 },
            InnovationSpec::ThreePoint { c0: 1.2, p0: 0.35 },
            InnovationSpec::AsymTwoPoint { a: 2.5, b: 1.0 },
        ];
        let m = 20_000usize;
        let mut rng = RngStream::from_seed(0xbeef);
        for spec in kinds {
            for probe in 0..4 {
                let v = vec![2.0 * rng.uniform() - 1.0, 2.0 * rng.uniform() - 1.0];
                let eps = 0.05 + 1.5 * rng.uniform();
                let a = 0.1 + 2.0 * rng.uniform();
                let oracle = FactoredOracle::new(spec.clone(), vec![v.clone()]);
                let vn = vec_norm(&v);
                let mut s_m2 = (0.0, 0.0);
                let mut s_abs = (0.0, 0.0);
                let mut s_comp = (0.0, 0.0);
                for _ in 0..m {
                    let z = spec.sample(&mut rng);
                    let norm_x = vn * z.abs();
                    let m2 = if norm_x >= eps { norm_x * norm_x } else { 0.0 };
                    let ab = if norm_x >= eps { norm_x } else { 0.0 };
                    let comp = if norm_x <= a { v[0] * z } else { 0.0 };
                    s_m2 = (s_m2.0 + m2, s_m2.1 + m2 * m2);
                    s_abs = (s_abs.0 + ab, s_abs.1 + ab * ab);
                    s_comp = (s_comp.0 + comp, s_comp.1 + comp * comp);
                }
                let check = |sum: (f64, f64), exact: f64, what: &str| {
                    let mean = sum.0 / m as f64;
                    let var = (sum.1 / m as f64 - mean * mean).max(0.0);
                    let se = (var / m as f64).sqrt();
                    assert!(
                        (mean - exact).abs() <= 4.0 * se + 1e-9,
                        "{what} probe {probe}: mc {mean} vs exact {exact} (se {se})"
                    );
                };
                check(s_m2, oracle.m2_tail(1, eps), "m2_tail");
                check(s_abs, oracle.abs1_tail(1, eps), "abs1_tail");
                check(s_comp, oracle.box_compensator(1, a)[0], "compensator");
            }
        }
    }

    #[test]
    fn truncated_row_is_conditionally_centered() {
        // Resampling mean of y_k given the loading is 0 within 4 SE for an
        // asymmetric kind where the compensator actually bites.
        let spec = InnovationSpec::AsymTwoPoint { a: 3.0, b: 1.0 };
        let v = vec![0.8, -0.6];
        let a_level = 1.4;
        let oracle = FactoredOracle::new(spec.clone(), vec![v.clone()]);
        let comp = oracle.box_compensator(1, a_level);
        assert!(vec_norm(&comp) > 1e-3, "probe should have a biting compensator");
        let m = 100_000usize;
        let mut rng = RngStream::from_seed(0xcafe);
        let vn = vec_norm(&v);
        let mut sum = [0.0f64; 2];
        let mut sumsq = [0.0f64; 2];
        for _ in 0..m {
            let z = spec.sample(&mut rng);
            let keep = vn * z.abs() <= a_level;
            for c in 0..2 {
                let y = if keep { v[c] * z - comp[c] } else { -comp[c] };
                sum[c] += y;
                sumsq[c] += y * y;
            }
        }
        for c in 0..2 {
            let mean = sum[c] / m as f64;
            let var = (sumsq[c] / m as f64 - mean * mean).max(0.0);
            let se = (var / m as f64).sqrt();
            assert!(mean.abs() <= 4.0 * se, "component {c}: mean {mean}, se {se}");
        }
    }

    #[test]
    fn csv_layout_matches_header() {
        let spec = InnovationSpec::Normal { sigma: 1.0 };
        let row = small_row(11, &[0.5, 0.2], spec, 50);
        let report = condition_report(&row, &[0.1, 0.5], 1.0);
        let header = ConditionReport::csv_header(2);
        let records = report.csv_records();
        assert_eq!(records.len(), 2);
        for rec in &records {
            assert_eq!(rec.len(), header.len());
        }
        assert!(header.contains(&"raikov_1_2".to_string()));
        assert!(header.contains(&"clb2_c2".to_string()));
        // Spot check: the eps column tracks the grid.
        let eps_idx = header.iter().position(|h| h == "eps").unwrap();
        assert_eq!(records[0][eps_idx], "0.1");
        assert_eq!(records[1][eps_idx], "0.5");
    }
}
