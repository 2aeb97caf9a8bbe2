//! Autoregressive processes of fixed order in companion form.
//!
//! A scalar AR(d) recursion is lifted to a first-order vector recursion
//! U_k = B U_{k-1} + W_k with W_k = Z_k e_1. This module simulates paths,
//! draws certified-truncation stationary starts, runs least squares with
//! an explicit singular convention, sums the asymptotic covariance series,
//! and produces coupled path pairs for stationarity experiments.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::innovations::InnovationSpec;
use crate::matrix::{
    certified_power_tail, certified_power_tail_sq, cholesky_pd, psd_sqrt, solve_pd,
    spectral_radius, vec_norm, Mat, SymMat, MAX_DIM,
};
use crate::rng::RngStream;

/// Values beyond this magnitude abort simulation: an exploding path means
/// the coefficient vector is not in the stable regime this crate studies.
const OVERFLOW_GUARD: f64 = 1e300;

/// Coefficient vector of an AR(d) recursion. Stability is deliberately not
/// an invariant; operations that need it check and reject explicitly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawArParams", into = "RawArParams")]
pub struct ArParams {
    d: usize,
    theta: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawArParams {
    theta: Vec<f64>,
}

impl From<ArParams> for RawArParams {
    fn from(p: ArParams) -> RawArParams {
        RawArParams { theta: p.theta }
    }
}

impl TryFrom<RawArParams> for ArParams {
    type Error = Error;

    fn try_from(r: RawArParams) -> Result<ArParams> {
        ArParams::new(r.theta)
    }
}

impl ArParams {
    pub fn new(theta: Vec<f64>) -> Result<ArParams> {
        let d = theta.len();
        if d == 0 || d > MAX_DIM {
            return Err(Error::BadDim(d));
        }
        if let Some(j) = theta.iter().position(|x| !x.is_finite()) {
            return Err(Error::NotFinite(0, j));
        }
        Ok(ArParams { d, theta })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    /// Companion matrix: first row carries the coefficients, the
    /// subdiagonal shifts the state. For d = 1 this is the 1x1 matrix of
    /// the single coefficient.
    pub fn companion(&self) -> Mat {
        let d = self.d;
        Mat::from_fn(d, |i, j| {
            if i == 0 {
                self.theta[j]
            } else if j + 1 == i {
                1.0
            } else {
                0.0
            }
        })
    }

    /// Certified spectral radius of the companion matrix.
    pub fn spectral_radius(&self) -> Result<f64> {
        spectral_radius(&self.companion(), 1e-10)
    }

    fn ensure_stable(&self) -> Result<f64> {
        let rho = self.spectral_radius()?;
        if rho >= 1.0 {
            return Err(Error::Unstable { rho });
        }
        Ok(rho)
    }

    /// Random coefficient vector whose companion roots all have modulus at
    /// most `max_modulus` < 1: draws conjugate-closed root sets and expands
    /// the monic characteristic polynomial with real factors.
    pub fn random_stable(d: usize, max_modulus: f64, rng: &mut RngStream) -> Result<ArParams> {
        if d == 0 || d > MAX_DIM {
            return Err(Error::BadDim(d));
        }
        if !(max_modulus > 0.0 && max_modulus < 1.0) {
            return Err(Error::bad_param("max_modulus must lie in (0, 1)"));
        }
        let mut poly = vec![1.0];
        let mut remaining = d;
        while remaining > 0 {
            if remaining >= 2 && rng.uniform() < 0.5 {
                let r = max_modulus * rng.uniform();
                let phi = std::f64::consts::PI * rng.uniform();
                poly = poly_mul(&poly, &[1.0, -2.0 * r * phi.cos(), r * r]);
                remaining -= 2;
            } else {
                let root = max_modulus * (2.0 * rng.uniform() - 1.0);
                poly = poly_mul(&poly, &[1.0, -root]);
                remaining -= 1;
            }
        }
        let theta: Vec<f64> = poly[1..].iter().map(|c| -c).collect();
        ArParams::new(theta)
    }
}

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        for (j, &y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Paths

/// One simulated trajectory. Stores the scalar series, the stacked state
/// vectors, and the innovations redundantly: the recursion identities that
/// tests rely on are only checkable with all three retained.
#[derive(Debug, Clone, PartialEq)]
pub struct ArPath {
    d: usize,
    n: usize,
    /// Y_{-d+1}..Y_n, flat; Y_k sits at index k + d - 1.
    y: Vec<f64>,
    /// U_0..U_n with U_k = (Y_k, Y_{k-1}, ..., Y_{k-d+1}).
    u: Vec<Vec<f64>>,
    /// Z_1..Z_n.
    z: Vec<f64>,
}

impl ArPath {
    pub fn dim(&self) -> usize {
        self.d
    }

    /// Number of recursion steps n.
    pub fn horizon(&self) -> usize {
        self.n
    }

    /// Y_k for -(d-1) <= k <= n.
    pub fn y_at(&self, k: i64) -> f64 {
        let idx = k + self.d as i64 - 1;
        assert!(idx >= 0 && (idx as usize) < self.y.len(), "index out of path range");
        self.y[idx as usize]
    }

    /// State vector U_k for 0 <= k <= n.
    pub fn state(&self, k: usize) -> &[f64] {
        &self.u[k]
    }

    pub fn states(&self) -> &[Vec<f64>] {
        &self.u
    }

    /// Z_k for 1 <= k <= n.
    pub fn innovation(&self, k: usize) -> f64 {
        self.z[k - 1]
    }

    pub fn innovations(&self) -> &[f64] {
        &self.z
    }
}

/// Deterministic simulation core driven by an explicit innovation slice.
/// This is also the exact-algebra test hook: feeding zeros produces the
/// noise-free recursion U_k = B^k U_0.
pub fn simulate_driven(p: &ArParams, u0: &[f64], z: &[f64]) -> Result<ArPath> {
    let d = p.d;
    if u0.len() != d {
        return Err(Error::BadDim(u0.len()));
    }
    if u0.iter().any(|x| !x.is_finite()) {
        return Err(Error::bad_param("initial state must be finite"));
    }
    let n = z.len();
    if n == 0 {
        return Err(Error::bad_param("horizon must be at least 1"));
    }
    let base = d - 1;
    let mut y = vec![0.0; n + d];
    // u0 = (Y_0, Y_{-1}, ..., Y_{-d+1}); the flat series runs forward.
    for (c, &v) in u0.iter().enumerate() {
        y[base - c] = v;
    }
    for k in 1..=n {
        let mut v = z[k - 1];
        for i in 1..=d {
            v += p.theta[i - 1] * y[base + k - i];
        }
        if !(v.abs() <= OVERFLOW_GUARD) {
            return Err(Error::Overflow { k });
        }
        y[base + k] = v;
    }
    let u: Vec<Vec<f64>> = (0..=n)
        .map(|k| (0..d).map(|c| y[base + k - c]).collect())
        .collect();
    Ok(ArPath { d, n, y, u, z: z.to_vec() })
}

/// Simulates n steps from `u0`, sampling innovations from `spec`.
pub fn simulate(
    p: &ArParams,
    spec: &InnovationSpec,
    u0: &[f64],
    n: usize,
    rng: &mut RngStream,
) -> Result<ArPath> {
    if n == 0 {
        return Err(Error::bad_param("horizon must be at least 1"));
    }
    let z: Vec<f64> = (0..n).map(|_| spec.sample(rng)).collect();
    simulate_driven(p, u0, &z)
}

// ---------------------------------------------------------------------------
// Stationary start

/// Truncation order for the stationary moving-average start: the smallest J
/// whose certified tail sum_{j>J} ||B^j||_F * E|Z| is below `tol`. Returned
/// with the tail bound so callers can report it.
pub fn stationary_order(
    p: &ArParams,
    spec: &InnovationSpec,
    tol: f64,
) -> Result<(usize, f64)> {
    p.ensure_stable()?;
    if !(tol > 0.0) {
        return Err(Error::bad_param("tol must be positive"));
    }
    let mean_abs = spec.abs1_tail(0.0);
    let (j, tail) = certified_power_tail(&p.companion(), tol / mean_abs)?;
    Ok((j, tail * mean_abs))
}

/// Draws a stationary initial state by truncating the moving-average
/// series sum_{j>=0} B^j W_{-j} at the certified order J; consumes exactly
/// J+1 innovations from `rng`, in the order j = 0, 1, ..., J.
pub fn stationary_initial(
    p: &ArParams,
    spec: &InnovationSpec,
    tol: f64,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    let (j_max, _) = stationary_order(p, spec, tol)?;
    let b = p.companion();
    let d = p.d;
    let mut v = vec![0.0; d];
    v[0] = 1.0;
    let mut ubar = vec![0.0; d];
    for j in 0..=j_max {
        if j > 0 {
            v = b.mul_vec(&v);
        }
        let z = spec.sample(rng);
        for c in 0..d {
            ubar[c] += v[c] * z;
        }
    }
    Ok(ubar)
}

// ---------------------------------------------------------------------------
// Least squares

/// Sum of state outer products over the regression range.
pub fn gram(path: &ArPath) -> SymMat {
    let d = path.d;
    SymMat::from_upper_fn(d, |i, j| {
        (1..=path.n)
            .map(|k| path.u[k - 1][i] * path.u[k - 1][j])
            .sum()
    })
}

fn regression_rhs(path: &ArPath) -> Vec<f64> {
    let d = path.d;
    let base = d - 1;
    let mut rhs = vec![0.0; d];
    for k in 1..=path.n {
        let yk = path.y[base + k];
        for c in 0..d {
            rhs[c] += path.u[k - 1][c] * yk;
        }
    }
    rhs
}

/// Least-squares coefficient estimate with the explicit singular
/// convention: when the Gram matrix is not positive definite the estimate
/// is the zero vector and the flag is false. Solved by Cholesky.
pub fn least_squares(path: &ArPath) -> (Vec<f64>, bool) {
    let g = gram(path);
    match cholesky_pd(&g) {
        Some(l) => (solve_pd(&l, &regression_rhs(path)), true),
        None => (vec![0.0; path.d], false),
    }
}

/// sqrt(n) * (estimate - truth); the zero vector when the Gram matrix is
/// singular, propagating the estimator's convention.
pub fn clt_statistic(path: &ArPath, p: &ArParams) -> Vec<f64> {
    let (theta_hat, pd) = least_squares(path);
    if !pd {
        return vec![0.0; path.d];
    }
    let root_n = (path.n as f64).sqrt();
    theta_hat
        .iter()
        .zip(&p.theta)
        .map(|(h, t)| root_n * (h - t))
        .collect()
}

/// Gram^{1/2} * (estimate - truth): the scale-free normalization whose
/// limit law does not depend on the coefficient vector.
pub fn self_normalized_statistic(path: &ArPath, p: &ArParams) -> Result<Vec<f64>> {
    let g = gram(path);
    let l = cholesky_pd(&g).ok_or(Error::GramSingular)?;
    let theta_hat = solve_pd(&l, &regression_rhs(path));
    let root = psd_sqrt(&g)?;
    let diff: Vec<f64> = theta_hat
        .iter()
        .zip(&p.theta)
        .map(|(h, t)| h - t)
        .collect();
    Ok(root.mul_vec(&diff))
}

// ---------------------------------------------------------------------------
// Asymptotic covariance series

/// Output of [`sigma_series`]: the truncated series, the number of terms,
/// the certified tail bound, and the order-d head whose positive
/// definiteness anchors the invertibility argument.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaResult {
    pub sigma: SymMat,
    pub terms_used: usize,
    pub tail_bound: f64,
    pub head: SymMat,
}

/// Sums sigma = sum_{j>=0} (B^j e_1)(B^j e_1)^T to a certified Frobenius
/// tail below `tol`. The head (first d terms) is verified positive
/// definite; it always is for finite coefficients, so a failure indicates
/// numerical breakdown rather than a model property.
pub fn sigma_series(p: &ArParams, tol: f64) -> Result<SigmaResult> {
    p.ensure_stable()?;
    let b = p.companion();
    let d = p.d;
    let (j_max, tail_bound) = certified_power_tail_sq(&b, tol)?;
    let mut v = vec![0.0; d];
    v[0] = 1.0;
    let mut acc = Mat::zeros(d);
    let mut head = Mat::zeros(d);
    for j in 0..=j_max.max(d - 1) {
        if j > 0 {
            v = b.mul_vec(&v);
        }
        let within_series = j <= j_max;
        for i in 0..d {
            for c in 0..d {
                let t = v[i] * v[c];
                if within_series {
                    let cur = acc.get(i, c);
                    acc.set(i, c, cur + t);
                }
                if j < d {
                    let cur = head.get(i, c);
                    head.set(i, c, cur + t);
                }
            }
        }
    }
    let head = SymMat::symmetrized(&head);
    if cholesky_pd(&head).is_none() {
        return Err(Error::AuditFailure {
            check: "sigma_head_positive_definite",
            k: d,
            detail: "order-d head of the covariance series failed the Cholesky test".into(),
        });
    }
    Ok(SigmaResult {
        sigma: SymMat::symmetrized(&acc),
        terms_used: j_max,
        tail_bound,
        head,
    })
}

// ---------------------------------------------------------------------------
// Coupling

/// Simulates two paths driven by one shared innovation stream: the first
/// from `u0`, the second from a freshly drawn stationary start. Draw
/// order: stationary start first (J+1 draws), then the n shared
/// innovations.
pub fn coupled_paths(
    p: &ArParams,
    spec: &InnovationSpec,
    u0: &[f64],
    n: usize,
    tol: f64,
    rng: &mut RngStream,
) -> Result<(ArPath, ArPath)> {
    let ubar = stationary_initial(p, spec, tol, rng)?;
    if n == 0 {
        return Err(Error::bad_param("horizon must be at least 1"));
    }
    let z: Vec<f64> = (0..n).map(|_| spec.sample(rng)).collect();
    let a = simulate_driven(p, u0, &z)?;
    let b = simulate_driven(p, &ubar, &z)?;
    Ok((a, b))
}

/// Divergence measures between two paths sharing one innovation stream:
/// the Frobenius gap of the averaged Gram matrices and the Euclidean gap
/// of the sqrt(n)-scaled martingale sums.
pub fn coupling_gaps(pair: &(ArPath, ArPath)) -> (f64, f64) {
    let (a, b) = pair;
    assert_eq!(a.z, b.z, "coupled paths must share innovations");
    assert_eq!(a.n, b.n);
    let n = a.n as f64;
    let gram_gap = gram(a).sub(&gram(b)).frobenius_norm() / n;
    let d = a.d;
    let mut s = vec![0.0; d];
    for k in 1..=a.n {
        let zk = a.z[k - 1];
        for c in 0..d {
            s[c] += (a.u[k - 1][c] - b.u[k - 1][c]) * zk;
        }
    }
    (gram_gap, vec_norm(&s) / n.sqrt())
}

/// Pathwise majorant for the martingale-sum gap:
/// n^{-1/2} (||U_0|| + ||Ubar_0||) * sum_j ||B^{j-1}||_F |Z_j|.
/// Holds for every realization; tests verify it against coupling_gaps.
pub fn coupling_gap_bound(pair: &(ArPath, ArPath), p: &ArParams) -> f64 {
    let (a, b) = pair;
    let bmat = p.companion();
    let mut pw = Mat::identity(p.d);
    let mut acc = 0.0;
    for k in 1..=a.n {
        if k > 1 {
            pw = pw.mul(&bmat);
        }
        acc += pw.frobenius_norm() * a.z[k - 1].abs();
    }
    (vec_norm(a.state(0)) + vec_norm(b.state(0))) * acc / (a.n as f64).sqrt()
}

/// Time average of the state outer products, (1/n) * Gram.
pub fn ergodic_average_outer(path: &ArPath) -> SymMat {
    gram(path).scale(1.0 / path.n as f64)
}

// ---------------------------------------------------------------------------
