//! Dense linear algebra for small fixed dimensions.
//!
//! Everything is sized for companion and Gram matrices of order at most
//! [`MAX_DIM`]: dense row-major storage and O(d^3) algorithms with
//! certified stopping rules. All values are immutable after construction
//! and safe to share across threads.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported matrix order. The application is fixed small order;
/// dense algorithms suffice and stay exactly reproducible.
pub const MAX_DIM: usize = 16;

/// Symmetry slack for [`SymMat`] construction, relative to entry scale.
const SYM_TOL: f64 = 1e-12;

fn check_dim(d: usize) -> Result<()> {
    if d == 0 || d > MAX_DIM {
        return Err(Error::BadDim(d));
    }
    Ok(())
}

/// Euclidean norm of a vector.
pub fn vec_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Euclidean inner product.
pub fn vec_dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

// ---------------------------------------------------------------------------
// Mat

/// Dense d x d real matrix, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMat", into = "RawMat")]
pub struct Mat {
    d: usize,
    e: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawMat {
    dim: usize,
    rows: Vec<Vec<f64>>,
}

impl From<Mat> for RawMat {
    fn from(m: Mat) -> RawMat {
        let rows = (0..m.d)
            .map(|i| m.e[i * m.d..(i + 1) * m.d].to_vec())
            .collect();
        RawMat { dim: m.d, rows }
    }
}

impl TryFrom<RawMat> for Mat {
    type Error = Error;

    fn try_from(r: RawMat) -> Result<Mat> {
        let rows: Vec<&[f64]> = r.rows.iter().map(|v| v.as_slice()).collect();
        let m = Mat::from_rows(&rows)?;
        if m.d != r.dim {
            return Err(Error::BadDim(r.dim));
        }
        Ok(m)
    }
}

impl Mat {
    pub fn zeros(d: usize) -> Mat {
        check_dim(d).expect("dimension in range");
        Mat {
            d,
            e: vec![0.0; d * d],
        }
    }

    pub fn identity(d: usize) -> Mat {
        let mut m = Mat::zeros(d);
        for i in 0..d {
            m.e[i * d + i] = 1.0;
        }
        m
    }

    /// Matrix with a single 1 in the upper-left corner: the innovation
    /// loading of the vectorized AR recursion.
    pub fn e11(d: usize) -> Mat {
        let mut m = Mat::zeros(d);
        m.e[0] = 1.0;
        m
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Mat> {
        let d = rows.len();
        check_dim(d)?;
        let mut e = Vec::with_capacity(d * d);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != d {
                return Err(Error::BadDim(row.len()));
            }
            for (j, &x) in row.iter().enumerate() {
                if !x.is_finite() {
                    return Err(Error::NotFinite(i, j));
                }
                e.push(x);
            }
        }
        Ok(Mat { d, e })
    }

    pub fn from_fn(d: usize, mut f: impl FnMut(usize, usize) -> f64) -> Mat {
        check_dim(d).expect("dimension in range");
        let mut e = Vec::with_capacity(d * d);
        for i in 0..d {
            for j in 0..d {
                e.push(f(i, j));
            }
        }
        Mat { d, e }
    }

    /// Outer product u v^T.
    pub fn outer(u: &[f64], v: &[f64]) -> Mat {
        assert_eq!(u.len(), v.len());
        Mat::from_fn(u.len(), |i, j| u[i] * v[j])
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.e[i * self.d + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.e[i * self.d + j] = v;
    }

    pub fn transpose(&self) -> Mat {
        Mat::from_fn(self.d, |i, j| self.get(j, i))
    }

    pub fn add(&self, other: &Mat) -> Mat {
        assert_eq!(self.d, other.d);
        Mat::from_fn(self.d, |i, j| self.get(i, j) + other.get(i, j))
    }

    pub fn sub(&self, other: &Mat) -> Mat {
        assert_eq!(self.d, other.d);
        Mat::from_fn(self.d, |i, j| self.get(i, j) - other.get(i, j))
    }

    pub fn scale(&self, c: f64) -> Mat {
        Mat::from_fn(self.d, |i, j| c * self.get(i, j))
    }

    pub fn mul(&self, other: &Mat) -> Mat {
        assert_eq!(self.d, other.d);
        let d = self.d;
        let mut out = Mat::zeros(d);
        for i in 0..d {
            for k in 0..d {
                let aik = self.e[i * d + k];
                if aik == 0.0 {
                    continue;
                }
                for j in 0..d {
                    out.e[i * d + j] += aik * other.e[k * d + j];
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.d);
        let d = self.d;
        (0..d)
            .map(|i| (0..d).map(|j| self.e[i * d + j] * v[j]).sum())
            .collect()
    }

    /// k-th matrix power by repeated multiplication (exact semantics for
    /// small k; used by oracles and tests).
    pub fn pow(&self, k: usize) -> Mat {
        let mut out = Mat::identity(self.d);
        for _ in 0..k {
            out = out.mul(self);
        }
        out
    }

    /// Frobenius norm: entrywise l2 norm, submultiplicative and compatible
    /// with the Euclidean vector norm.
    pub fn frobenius_norm(&self) -> f64 {
        vec_norm(&self.e)
    }

    pub fn max_abs_entry(&self) -> f64 {
        self.e.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }

    fn is_finite(&self) -> bool {
        self.e.iter().all(|x| x.is_finite())
    }
}

// ---------------------------------------------------------------------------
// SymMat

/// Symmetric d x d real matrix. Construction enforces symmetry up to a
/// scale-relative slack; storage keeps the exactly symmetrized entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMat", into = "RawMat")]
pub struct SymMat {
    m: Mat,
}

impl From<SymMat> for RawMat {
    fn from(s: SymMat) -> RawMat {
        s.m.into()
    }
}

impl TryFrom<RawMat> for SymMat {
    type Error = Error;

    fn try_from(r: RawMat) -> Result<SymMat> {
        SymMat::try_from_mat(&Mat::try_from(r)?)
    }
}

impl SymMat {
    /// Validates |m_ij - m_ji| <= 1e-12 * (1 + max|entry|), then stores the
    /// exact symmetrization (averaged off-diagonal pairs).
    pub fn try_from_mat(m: &Mat) -> Result<SymMat> {
        if !m.is_finite() {
            return Err(Error::NotFinite(0, 0));
        }
        let tol = SYM_TOL * (1.0 + m.max_abs_entry());
        for i in 0..m.d {
            for j in (i + 1)..m.d {
                let gap = (m.get(i, j) - m.get(j, i)).abs();
                if gap > tol {
                    return Err(Error::NotSymmetric { i, j, gap });
                }
            }
        }
        Ok(Self::symmetrized(m))
    }

    /// Exact symmetrization (m + m^T)/2 without the closeness check. For
    /// internal use where symmetry holds mathematically and only rounding
    /// separates the triangles.
    pub(crate) fn symmetrized(m: &Mat) -> SymMat {
        let mut out = m.clone();
        for i in 0..m.d {
            for j in (i + 1)..m.d {
                let avg = 0.5 * (m.get(i, j) + m.get(j, i));
                out.set(i, j, avg);
                out.set(j, i, avg);
            }
        }
        SymMat { m: out }
    }

    /// Builds from the upper triangle (i <= j) and mirrors exactly.
    pub fn from_upper_fn(d: usize, mut f: impl FnMut(usize, usize) -> f64) -> SymMat {
        let mut m = Mat::zeros(d);
        for i in 0..d {
            for j in i..d {
                let v = f(i, j);
                m.set(i, j, v);
                m.set(j, i, v);
            }
        }
        SymMat { m }
    }

    pub fn zeros(d: usize) -> SymMat {
        SymMat { m: Mat::zeros(d) }
    }

    pub fn identity(d: usize) -> SymMat {
        SymMat {
            m: Mat::identity(d),
        }
    }

    pub fn diag(entries: &[f64]) -> SymMat {
        let d = entries.len();
        SymMat::from_upper_fn(d, |i, j| if i == j { entries[i] } else { 0.0 })
    }

    pub fn dim(&self) -> usize {
        self.m.d
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.m.get(i, j)
    }

    pub fn mat(&self) -> &Mat {
        &self.m
    }

    pub fn to_mat(&self) -> Mat {
        self.m.clone()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.m.frobenius_norm()
    }

    pub fn add(&self, other: &SymMat) -> SymMat {
        SymMat {
            m: self.m.add(&other.m),
        }
    }

    pub fn sub(&self, other: &SymMat) -> SymMat {
        SymMat {
            m: self.m.sub(&other.m),
        }
    }

    pub fn scale(&self, c: f64) -> SymMat {
        SymMat {
            m: self.m.scale(c),
        }
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        self.m.mul_vec(v)
    }
}

// ---------------------------------------------------------------------------
// Stability constants

/// Truncated power sums of ||B^j||_F with a certified geometric tail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityConstants {
    /// Partial sum of ||B^j||_F over the computed powers.
    pub kappa1: f64,
    /// Partial sum of ||B^j||_F^2.
    pub kappa2: f64,
    /// sup over j of ||B^j||_F (exact: the tail cannot exceed computed terms).
    pub kappa3: f64,
    /// Certified bound on the kappa1 remainder beyond the computed powers.
    pub tail_bound: f64,
}

/// Window certificate: the first power W with ||B^W||_F <= 0.9 makes every
/// tail group shrink by g = ||B^W||_F per W steps (submultiplicativity), so
/// the remainder past j is at most (sum of the last W norms) * g/(1-g).
struct ContractionWindow {
    w: usize,
    g: f64,
}

const CONTRACTION_CEILING: f64 = 0.9;
const WINDOW_BUDGET: usize = 100_000;
const POWER_BUDGET: usize = 2_000_000;
const GROWTH_GUARD: f64 = 1e12;

fn find_contraction_window(b: &Mat, norms: &mut Vec<f64>) -> Result<ContractionWindow> {
    let mut p = Mat::identity(b.dim());
    norms.push(p.frobenius_norm());
    for j in 1..=WINDOW_BUDGET {
        p = p.mul(b);
        let n = p.frobenius_norm();
        if !n.is_finite() || n > GROWTH_GUARD {
            return Err(Error::NonConvergence {
                what: "power norms diverge; spectral radius is not below one",
            });
        }
        norms.push(n);
        if n <= CONTRACTION_CEILING {
            return Ok(ContractionWindow { w: j, g: n });
        }
    }
    Err(Error::NonConvergence {
        what: "no contraction window found; spectral radius is too close to one",
    })
}

/// Accumulates kappa1/kappa2/kappa3 until the certified tails of both power
/// series drop below `tol`.
pub fn stability_constants(b: &Mat, tol: f64) -> Result<StabilityConstants> {
    if tol <= 0.0 {
        return Err(Error::bad_param("tol must be positive"));
    }
    let mut norms = Vec::new();
    let win = find_contraction_window(b, &mut norms)?;
    let mut p = b.pow(win.w);
    let mut j = win.w;
    loop {
        let ring = &norms[j + 1 - win.w..=j];
        let ring_sum: f64 = ring.iter().sum();
        let ring_sq: f64 = ring.iter().map(|x| x * x).sum();
        let tail1 = ring_sum * win.g / (1.0 - win.g);
        let tail2 = ring_sq * win.g * win.g / (1.0 - win.g * win.g);
        if tail1 <= tol && tail2 <= tol {
            let kappa1 = norms.iter().sum();
            let kappa2 = norms.iter().map(|x| x * x).sum();
            let kappa3 = norms.iter().fold(0.0f64, |m, &x| m.max(x));
            return Ok(StabilityConstants {
                kappa1,
                kappa2,
                kappa3,
                tail_bound: tail1,
            });
        }
        if j >= POWER_BUDGET {
            return Err(Error::NonConvergence {
                what: "stability constant tails did not certify within the power budget",
            });
        }
        p = p.mul(b);
        j += 1;
        norms.push(p.frobenius_norm());
    }
}

/// Smallest J such that the certified remainder sum_{j>J} ||B^j||_F is at
/// most `tol`, together with that remainder bound. Drives the truncation of
/// moving-average series.
pub(crate) fn certified_power_tail(b: &Mat, tol: f64) -> Result<(usize, f64)> {
    if tol <= 0.0 {
        return Err(Error::bad_param("tol must be positive"));
    }
    let mut norms = Vec::new();
    let win = find_contraction_window(b, &mut norms)?;
    let mut p = b.pow(norms.len() - 1);
    // Window ending at J covers indices (J-W, J]; valid from J = W-1 using
    // the j = 0 term.
    let mut j = win.w - 1;
    loop {
        while norms.len() <= j {
            p = p.mul(b);
            norms.push(p.frobenius_norm());
        }
        let ring = &norms[j + 1 - win.w..=j];
        let tail = ring.iter().sum::<f64>() * win.g / (1.0 - win.g);
        if tail <= tol {
            return Ok((j, tail));
        }
        if j >= POWER_BUDGET {
            return Err(Error::NonConvergence {
                what: "power series tail did not certify within the power budget",
            });
        }
        j += 1;
    }
}

/// Squared-series analog of [`certified_power_tail`]: smallest J with the
/// certified remainder sum_{j>J} ||B^j||_F^2 at most `tol`. The window
/// shrinks squared groups by g^2 per W steps, giving the g^2/(1-g^2) factor.
pub(crate) fn certified_power_tail_sq(b: &Mat, tol: f64) -> Result<(usize, f64)> {
    if tol <= 0.0 {
        return Err(Error::bad_param("tol must be positive"));
    }
    let mut norms = Vec::new();
    let win = find_contraction_window(b, &mut norms)?;
    let mut p = b.pow(norms.len() - 1);
    let factor = win.g * win.g / (1.0 - win.g * win.g);
    let mut j = win.w - 1;
    loop {
        while norms.len() <= j {
            p = p.mul(b);
            norms.push(p.frobenius_norm());
        }
        let ring = &norms[j + 1 - win.w..=j];
        let tail = ring.iter().map(|x| x * x).sum::<f64>() * factor;
        if tail <= tol {
            return Ok((j, tail));
        }
        if j >= POWER_BUDGET {
            return Err(Error::NonConvergence {
                what: "squared power series tail did not certify within the power budget",
            });
        }
        j += 1;
    }
}

// ---------------------------------------------------------------------------
// Spectral radius

mod cpx {
    /// Minimal complex arithmetic for the internal polynomial root solver.
    #[derive(Debug, Clone, Copy)]
    pub struct Cpx {
        pub re: f64,
        pub im: f64,
    }

    impl Cpx {
        pub fn new(re: f64, im: f64) -> Cpx {
            Cpx { re, im }
        }

        pub fn abs(self) -> f64 {
            self.re.hypot(self.im)
        }

        pub fn add(self, o: Cpx) -> Cpx {
            Cpx::new(self.re + o.re, self.im + o.im)
        }

        pub fn sub(self, o: Cpx) -> Cpx {
            Cpx::new(self.re - o.re, self.im - o.im)
        }

        pub fn mul(self, o: Cpx) -> Cpx {
            Cpx::new(
                self.re * o.re - self.im * o.im,
                self.re * o.im + self.im * o.re,
            )
        }

        pub fn div(self, o: Cpx) -> Cpx {
            let den = o.re * o.re + o.im * o.im;
            Cpx::new(
                (self.re * o.re + self.im * o.im) / den,
                (self.im * o.re - self.re * o.im) / den,
            )
        }
    }
}

use cpx::Cpx;

/// Max root modulus of z^d - theta_1 z^{d-1} - ... - theta_d by
/// simultaneous (Durand-Kerner) iteration. Returns None if the iteration
/// does not settle within its budget.
pub fn companion_radius_via_roots(theta: &[f64]) -> Option<f64> {
    let d = theta.len();
    if d == 0 {
        return None;
    }
    if d == 1 {
        return Some(theta[0].abs());
    }
    // p(z) = z^d + c[0] z^{d-1} + ... + c[d-1], c[i] = -theta[i+1 - 1]
    let coef: Vec<f64> = theta.iter().map(|t| -t).collect();
    let eval = |z: Cpx| -> Cpx {
        let mut acc = Cpx::new(1.0, 0.0);
        for &c in &coef {
            acc = acc.mul(z).add(Cpx::new(c, 0.0));
        }
        acc
    };
    let seed = Cpx::new(0.4, 0.9);
    let mut roots: Vec<Cpx> = Vec::with_capacity(d);
    let mut acc = Cpx::new(1.0, 0.0);
    for _ in 0..d {
        acc = acc.mul(seed);
        roots.push(acc);
    }
    const MAX_ITERS: usize = 1000;
    for _ in 0..MAX_ITERS {
        let mut max_step = 0.0f64;
        let mut max_abs = 0.0f64;
        for i in 0..d {
            let mut den = Cpx::new(1.0, 0.0);
            for j in 0..d {
                if i != j {
                    den = den.mul(roots[i].sub(roots[j]));
                }
            }
            if den.abs() == 0.0 {
                // Coincident iterates: nudge and continue.
                roots[i] = roots[i].add(Cpx::new(1e-8, 1e-8));
                max_step = f64::INFINITY;
                continue;
            }
            let step = eval(roots[i]).div(den);
            roots[i] = roots[i].sub(step);
            max_step = max_step.max(step.abs());
            max_abs = max_abs.max(roots[i].abs());
        }
        if max_step <= 1e-14 * (1.0 + max_abs) {
            return Some(roots.iter().map(|z| z.abs()).fold(0.0, f64::max));
        }
    }
    None
}

/// True when `m` has exact companion shape below the first row: a unit
/// subdiagonal block and zeros elsewhere.
fn is_companion_shape(m: &Mat) -> bool {
    let d = m.dim();
    if d == 1 {
        return true;
    }
    for i in 1..d {
        for j in 0..d {
            let want = if j + 1 == i { 1.0 } else { 0.0 };
            if m.get(i, j) != want {
                return false;
            }
        }
    }
    true
}

/// Upper-bound refinement ||m^{2^k}||_F^{1/2^k} by normalized repeated
/// squaring; monotone nonincreasing in k and convergent to the spectral
/// radius. 64 squarings push the structural gap below rounding level.
pub fn spectral_radius_power(m: &Mat) -> Result<f64> {
    let n0 = m.frobenius_norm();
    if n0 == 0.0 {
        return Ok(0.0);
    }
    if !n0.is_finite() {
        return Err(Error::NonConvergence {
            what: "matrix norm is not finite",
        });
    }
    let mut hat = m.scale(1.0 / n0);
    let mut log_b = n0.ln();
    let mut pow2 = 1.0f64;
    for _ in 0..64 {
        let sq = hat.mul(&hat);
        let n = sq.frobenius_norm();
        if n == 0.0 {
            // Nilpotent: some true power vanishes, so the radius is zero.
            return Ok(0.0);
        }
        pow2 *= 2.0;
        let inc = n.ln() / pow2;
        log_b += inc;
        hat = sq.scale(1.0 / n);
        if inc.abs() < 1e-17 {
            break;
        }
    }
    Ok(log_b.exp())
}

/// Spectral radius within +-tol.
///
/// Always computes the certified squaring bound; for companion-shaped
/// matrices also solves the characteristic polynomial and reports the root
/// value when the two certificates agree, falling back to the squaring
/// bound when root clusters inflate the polynomial estimate.
pub fn spectral_radius(m: &Mat, tol: f64) -> Result<f64> {
    if tol <= 0.0 {
        return Err(Error::bad_param("tol must be positive"));
    }
    let gelfand = spectral_radius_power(m)?;
    if is_companion_shape(m) {
        let theta: Vec<f64> = (0..m.dim()).map(|j| m.get(0, j)).collect();
        if let Some(rho) = companion_radius_via_roots(&theta) {
            if (rho - gelfand).abs() <= tol {
                // Equal certificates up to tol; the squaring value is a
                // true upper bound, so the smaller of the two is tighter.
                return Ok(rho.min(gelfand).max(0.0));
            }
            // The squaring value is an upper bound on the radius; a root
            // estimate above it is cluster inflation.
            return Ok(gelfand.min(rho.max(0.0)).max(0.0));
        }
    }
    Ok(gelfand)
}

// ---------------------------------------------------------------------------
// Symmetric eigendecomposition (cyclic Jacobi)

const JACOBI_MAX_SWEEPS: usize = 40;

/// Cyclic Jacobi diagonalization of a symmetric matrix.
///
/// Returns eigenvalues sorted descending and the orthogonal matrix whose
/// columns are the matching eigenvectors; ||Q L Q^T - s||_F <= tol * (1 +
/// ||s||_F) and ||Q^T Q - I||_F <= tol.
pub fn sym_eigen(s: &SymMat, tol: f64) -> Result<(Vec<f64>, Mat)> {
    if tol <= 0.0 {
        return Err(Error::bad_param("tol must be positive"));
    }
    let d = s.dim();
    let mut a = s.to_mat();
    let mut v = Mat::identity(d);
    let scale = 1.0 + s.frobenius_norm();
    // The dropped off-diagonal mass is exactly the reconstruction residual.
    let target = (0.25 * tol * scale).max(f64::MIN_POSITIVE);
    let mut converged = false;
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut off2 = 0.0;
        for p in 0..d {
            for q in (p + 1)..d {
                off2 += a.get(p, q) * a.get(p, q);
            }
        }
        if (2.0 * off2).sqrt() <= target {
            converged = true;
            break;
        }
        for p in 0..d {
            for q in (p + 1)..d {
                let apq = a.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let theta = (a.get(q, q) - a.get(p, p)) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                for i in 0..d {
                    let aip = a.get(i, p);
                    let aiq = a.get(i, q);
                    a.set(i, p, c * aip - sn * aiq);
                    a.set(i, q, sn * aip + c * aiq);
                }
                for j in 0..d {
                    let apj = a.get(p, j);
                    let aqj = a.get(q, j);
                    a.set(p, j, c * apj - sn * aqj);
                    a.set(q, j, sn * apj + c * aqj);
                }
                a.set(p, q, 0.0);
                a.set(q, p, 0.0);
                for i in 0..d {
                    let vip = v.get(i, p);
                    let viq = v.get(i, q);
                    v.set(i, p, c * vip - sn * viq);
                    v.set(i, q, sn * vip + c * viq);
                }
            }
        }
    }
    if !converged {
        let mut off2 = 0.0;
        for p in 0..d {
            for q in (p + 1)..d {
                off2 += a.get(p, q) * a.get(p, q);
            }
        }
        if (2.0 * off2).sqrt() > target {
            return Err(Error::NonConvergence {
                what: "Jacobi sweeps did not reduce the off-diagonal mass to tolerance",
            });
        }
    }
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| a.get(j, j).total_cmp(&a.get(i, i)));
    let values: Vec<f64> = order.iter().map(|&i| a.get(i, i)).collect();
    let vectors = Mat::from_fn(d, |i, j| v.get(i, order[j]));
    Ok((values, vectors))
}

// ---------------------------------------------------------------------------
// PSD square root, Cholesky, inverse

/// Eigenvalue floor: spectra of sampled Gram-type matrices may dip this far
/// below zero from rounding; anything lower is treated as genuinely
/// indefinite.
const PSD_CLAMP: f64 = 1e-10;

/// Symmetric PSD square root R with ||R R - s||_F <= 1e-10 (1 + ||s||_F).
/// Eigenvalues in [-1e-10, 0) are clamped to zero; anything below errors.
pub fn psd_sqrt(s: &SymMat) -> Result<SymMat> {
    let (values, q) = sym_eigen(s, 1e-13)?;
    let d = s.dim();
    let mut roots = Vec::with_capacity(d);
    for &lam in &values {
        if lam < -PSD_CLAMP {
            return Err(Error::NotPsd(lam));
        }
        roots.push(lam.max(0.0).sqrt());
    }
    Ok(SymMat::from_upper_fn(d, |i, j| {
        (0..d).map(|k| q.get(i, k) * roots[k] * q.get(j, k)).sum()
    }))
}

/// Cholesky factor of a positive definite matrix, or None. Pivots must
/// exceed 1e-12 * (1 + max diagonal); failure is a value, not an error.
pub fn cholesky_pd(s: &SymMat) -> Option<Mat> {
    let d = s.dim();
    let max_diag = (0..d).fold(0.0f64, |m, i| m.max(s.get(i, i)));
    let threshold = 1e-12 * (1.0 + max_diag);
    let mut l = Mat::zeros(d);
    for j in 0..d {
        let mut pivot = s.get(j, j);
        for k in 0..j {
            pivot -= l.get(j, k) * l.get(j, k);
        }
        if !(pivot > threshold) {
            return None;
        }
        let ljj = pivot.sqrt();
        l.set(j, j, ljj);
        for i in (j + 1)..d {
            let mut x = s.get(i, j);
            for k in 0..j {
                x -= l.get(i, k) * l.get(j, k);
            }
            l.set(i, j, x / ljj);
        }
    }
    Some(l)
}

pub fn is_positive_definite(s: &SymMat) -> bool {
    cholesky_pd(s).is_some()
}

/// Rank dichotomy probe: Cholesky elimination with strictly positive
/// pivots and no conditioning floor. Intended for state Gram matrices,
/// where exactly dependent states cancel to zero pivots while continuous
/// laws keep every pivot positive almost surely; `is_positive_definite`
/// would misclassify full-rank but ill-conditioned draws.
pub fn is_full_rank(s: &SymMat) -> bool {
    let d = s.dim();
    let mut l = Mat::zeros(d);
    for j in 0..d {
        let mut pivot = s.get(j, j);
        for k in 0..j {
            pivot -= l.get(j, k) * l.get(j, k);
        }
        if !(pivot > 0.0) {
            return false;
        }
        let ljj = pivot.sqrt();
        l.set(j, j, ljj);
        for i in (j + 1)..d {
            let mut x = s.get(i, j);
            for k in 0..j {
                x -= l.get(i, k) * l.get(j, k);
            }
            l.set(i, j, x / ljj);
        }
    }
    true
}

/// Solves L y = b with L lower triangular.
pub(crate) fn forward_solve(l: &Mat, b: &[f64]) -> Vec<f64> {
    let d = l.dim();
    let mut y = vec![0.0; d];
    for i in 0..d {
        let mut acc = b[i];
        for k in 0..i {
            acc -= l.get(i, k) * y[k];
        }
        y[i] = acc / l.get(i, i);
    }
    y
}

/// Solves L^T x = y with L lower triangular.
pub(crate) fn back_solve_transposed(l: &Mat, y: &[f64]) -> Vec<f64> {
    let d = l.dim();
    let mut x = vec![0.0; d];
    for i in (0..d).rev() {
        let mut acc = y[i];
        for k in (i + 1)..d {
            acc -= l.get(k, i) * x[k];
        }
        x[i] = acc / l.get(i, i);
    }
    x
}

/// Solves s x = b for positive definite s via its Cholesky factor.
pub fn solve_pd(l: &Mat, b: &[f64]) -> Vec<f64> {
    back_solve_transposed(l, &forward_solve(l, b))
}

/// Inverse of a positive definite matrix via Cholesky column solves;
/// ||s s^{-1} - I||_F <= 1e-10 d.
pub fn inverse(s: &SymMat) -> Result<SymMat> {
    let d = s.dim();
    let l = cholesky_pd(s).ok_or(Error::NotPd)?;
    let mut cols = Vec::with_capacity(d);
    for j in 0..d {
        let mut e = vec![0.0; d];
        e[j] = 1.0;
        cols.push(solve_pd(&l, &e));
    }
    let raw = Mat::from_fn(d, |i, j| cols[j][i]);
    Ok(SymMat::symmetrized(&raw))
}

// ---------------------------------------------------------------------------
// Discrete Lyapunov oracle

/// Fixed-point solve of S = c + b S b^T, iterating S <- c + b S b^T from
/// S = c. Converges geometrically with ratio rho(b)^2; kept independent of
/// the eigensolver so it can act as a cross-check oracle for series sums.
pub fn solve_lyapunov(b: &Mat, c: &SymMat, tol: f64) -> Result<SymMat> {
    if tol <= 0.0 {
        return Err(Error::bad_param("tol must be positive"));
    }
    assert_eq!(b.dim(), c.dim());
    let guard = GROWTH_GUARD * (1.0 + c.frobenius_norm());
    let mut s = c.clone();
    const MAX_ITERS: usize = 2_000_000;
    for _ in 0..MAX_ITERS {
        let bsbt = b.mul(s.mat()).mul(&b.transpose());
        let next = SymMat::symmetrized(&c.mat().add(&bsbt));
        // next - s is exactly the defect of the current iterate.
        let delta = next.sub(&s).frobenius_norm();
        if delta <= tol {
            return Ok(s);
        }
        if !delta.is_finite() || next.frobenius_norm() > guard {
            return Err(Error::NonConvergence {
                what: "Lyapunov iteration diverges; spectral radius is not below one",
            });
        }
        s = next;
    }
    Err(Error::NonConvergence {
        what: "Lyapunov iteration exhausted its budget",
    })
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    fn random_mat(d: usize, rng: &mut RngStream) -> Mat {
        Mat::from_fn(d, |_, _| 2.0 * rng.uniform() - 1.0)
    }

    fn random_sym(d: usize, rng: &mut RngStream) -> SymMat {
        SymMat::from_upper_fn(d, |_, _| 2.0 * rng.uniform() - 1.0)
    }

    #[test]
    fn frobenius_identity_and_corner() {
        assert_eq!(Mat::identity(2).frobenius_norm(), 2.0f64.sqrt());
        assert_eq!(Mat::e11(2).frobenius_norm(), 1.0);
    }

    #[test]
    fn frobenius_submultiplicative() {
        let mut rng = RngStream::from_seed(11);
        for _ in 0..10_000 {
            let m = random_mat(3, &mut rng);
            let prod = m.mul(&m).frobenius_norm();
            let bound = m.frobenius_norm().powi(2);
            assert!(prod <= bound * (1.0 + 1e-12));
        }
    }

    #[test]
    fn frobenius_equals_transpose_norm() {
        let mut rng = RngStream::from_seed(12);
        let m = random_mat(4, &mut rng);
        assert!((m.frobenius_norm() - m.transpose().frobenius_norm()).abs() < 1e-15);
    }

    #[test]
    fn constructors_reject_bad_input() {
        assert!(Mat::from_rows(&[&[1.0, f64::NAN][..], &[0.0, 1.0][..]]).is_err());
        let skew = Mat::from_rows(&[&[0.0, 1.0][..], &[-1.0, 0.0][..]]).unwrap();
        assert!(SymMat::try_from_mat(&skew).is_err());
    }

    #[test]
    fn spectral_radius_scalar() {
        let m = Mat::from_rows(&[&[0.9][..]]).unwrap();
        assert!((spectral_radius(&m, 1e-10).unwrap() - 0.9).abs() <= 1e-10);
    }

    #[test]
    fn spectral_radius_quadratic_oracle() {
        // Companion of z^2 - 0.5 z - 0.2: largest root (0.5 + sqrt(1.05))/2.
        let m = Mat::from_rows(&[&[0.5, 0.2][..], &[1.0, 0.0][..]]).unwrap();
        let expect = (0.5 + 1.05f64.sqrt()) / 2.0;
        assert!((spectral_radius(&m, 1e-10).unwrap() - expect).abs() <= 1e-10);
    }

    #[test]
    fn spectral_radius_unstable_triangular() {
        let m = Mat::from_rows(&[&[1.5, 0.0][..], &[1.0, 0.0][..]]).unwrap();
        let rho = spectral_radius(&m, 1e-9).unwrap();
        assert!((rho - 1.5).abs() <= 1e-9);
        assert!(rho >= 1.0);
    }

    #[test]
    fn spectral_radius_nilpotent_is_zero() {
        let m = Mat::from_rows(&[&[0.0, 0.0][..], &[1.0, 0.0][..]]).unwrap();
        assert_eq!(spectral_radius(&m, 1e-10).unwrap(), 0.0);
    }

    #[test]
    fn eigen_diagonal_sorted() {
        let (vals, _) = sym_eigen(&SymMat::diag(&[4.0, 9.0]), 1e-12).unwrap();
        assert_eq!(vals, vec![9.0, 4.0]);
    }

    #[test]
    fn eigen_identity() {
        let (vals, _) = sym_eigen(&SymMat::identity(3), 1e-12).unwrap();
        assert_eq!(vals, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn eigen_reconstructs() {
        let mut rng = RngStream::from_seed(5);
        for _ in 0..1000 {
            let s = random_sym(4, &mut rng);
            let (vals, q) = sym_eigen(&s, 1e-12).unwrap();
            let lam = SymMat::diag(&vals);
            let recon = q.mul(lam.mat()).mul(&q.transpose());
            assert!(recon.sub(s.mat()).frobenius_norm() <= 1e-10 * (1.0 + s.frobenius_norm()));
            let orth = q.transpose().mul(&q).sub(&Mat::identity(4));
            assert!(orth.frobenius_norm() <= 1e-12);
        }
    }

    #[test]
    fn psd_sqrt_diagonal() {
        let r = psd_sqrt(&SymMat::diag(&[4.0, 9.0])).unwrap();
        assert!((r.get(0, 0) - 2.0).abs() <= 1e-12);
        assert!((r.get(1, 1) - 3.0).abs() <= 1e-12);
        assert!(r.get(0, 1).abs() <= 1e-12);
        let id = psd_sqrt(&SymMat::identity(3)).unwrap();
        assert!(id.sub(&SymMat::identity(3)).frobenius_norm() <= 1e-12);
    }

    #[test]
    fn psd_sqrt_squares_back() {
        let mut rng = RngStream::from_seed(6);
        for _ in 0..200 {
            let m = random_mat(3, &mut rng);
            let a = SymMat::symmetrized(&m.transpose().mul(&m));
            let r = psd_sqrt(&a).unwrap();
            let back = r.mat().mul(r.mat());
            assert!(back.sub(a.mat()).frobenius_norm() <= 1e-10 * (1.0 + a.frobenius_norm()));
        }
    }

    #[test]
    fn psd_sqrt_rejects_indefinite() {
        let s = SymMat::diag(&[1.0, -0.5]);
        assert!(matches!(psd_sqrt(&s), Err(Error::NotPsd(_))));
    }

    #[test]
    fn cholesky_identity_and_zero() {
        let l = cholesky_pd(&SymMat::identity(2)).unwrap();
        assert!(l.sub(&Mat::identity(2)).frobenius_norm() == 0.0);
        assert!(cholesky_pd(&SymMat::zeros(2)).is_none());
    }

    #[test]
    fn cholesky_matches_eigen_sign() {
        let mut rng = RngStream::from_seed(7);
        for _ in 0..1000 {
            let s = random_sym(3, &mut rng);
            let (vals, _) = sym_eigen(&s, 1e-12).unwrap();
            let min = vals.last().copied().unwrap();
            let max_diag = (0..3).fold(0.0f64, |m, i| m.max(s.get(i, i)));
            let thr = 1e-12 * (1.0 + max_diag);
            let pd = cholesky_pd(&s).is_some();
            // Away from the pivot threshold the two classifications agree.
            if min > thr + 1e-9 {
                assert!(pd);
            }
            if min <= thr - 1e-9 || min < 0.0 {
                assert!(!pd);
            }
            if let Some(l) = cholesky_pd(&s) {
                let back = l.mul(&l.transpose());
                assert!(back.sub(s.mat()).frobenius_norm() <= 1e-10 * (1.0 + s.frobenius_norm()));
            }
        }
    }

    #[test]
    fn inverse_diagonal_and_scalar() {
        let inv = inverse(&SymMat::diag(&[2.0, 4.0])).unwrap();
        assert!((inv.get(0, 0) - 0.5).abs() <= 1e-14);
        assert!((inv.get(1, 1) - 0.25).abs() <= 1e-14);
        let sigma = SymMat::diag(&[1.0 / (1.0 - 0.81)]);
        let inv = inverse(&sigma).unwrap();
        assert!((inv.get(0, 0) - 0.19).abs() <= 1e-12);
        let id3 = inverse(&SymMat::identity(3)).unwrap();
        assert!(id3.sub(&SymMat::identity(3)).frobenius_norm() == 0.0);
    }

    #[test]
    fn inverse_residual_contract() {
        let mut rng = RngStream::from_seed(8);
        for _ in 0..200 {
            let m = random_mat(4, &mut rng);
            let s = SymMat::symmetrized(&m.transpose().mul(&m).add(&Mat::identity(4)));
            let inv = inverse(&s).unwrap();
            let resid = s.mat().mul(inv.mat()).sub(&Mat::identity(4));
            assert!(resid.frobenius_norm() <= 1e-10 * 4.0);
        }
    }

    #[test]
    fn lyapunov_zero_matrix_returns_rhs() {
        let c = SymMat::diag(&[1.0, 2.0]);
        let s = solve_lyapunov(&Mat::zeros(2), &c, 1e-12).unwrap();
        assert!(s.sub(&c).frobenius_norm() == 0.0);
    }

    #[test]
    fn lyapunov_scalar_geometric() {
        let b = Mat::from_rows(&[&[0.9][..]]).unwrap();
        let c = SymMat::diag(&[1.0]);
        let s = solve_lyapunov(&b, &c, 1e-12).unwrap();
        assert!((s.get(0, 0) - 1.0 / 0.19).abs() <= 1e-9);
    }

    #[test]
    fn lyapunov_detects_divergence() {
        let b = Mat::from_rows(&[&[1.1][..]]).unwrap();
        let c = SymMat::diag(&[1.0]);
        assert!(matches!(
            solve_lyapunov(&b, &c, 1e-10),
            Err(Error::NonConvergence { .. })
        ));
    }

    #[test]
    fn stability_constants_zero_matrix() {
        let k = stability_constants(&Mat::zeros(1), 1e-12).unwrap();
        assert_eq!(k.kappa1, 1.0);
        assert_eq!(k.kappa2, 1.0);
        assert_eq!(k.kappa3, 1.0);
        assert_eq!(k.tail_bound, 0.0);
    }

    #[test]
    fn stability_constants_scalar_geometric() {
        let b = Mat::from_rows(&[&[0.5][..]]).unwrap();
        let k = stability_constants(&b, 1e-12).unwrap();
        assert!((k.kappa1 - 2.0).abs() <= 1e-9);
        assert!((k.kappa2 - 4.0 / 3.0).abs() <= 1e-9);
        assert_eq!(k.kappa3, 1.0);
        assert!(k.tail_bound <= 1e-12);
    }

    #[test]
    fn stability_constants_invariants() {
        let mut rng = RngStream::from_seed(9);
        for _ in 0..100 {
            let d = 1 + (rng.next_u64() % 3) as usize;
            let m = random_mat(d, &mut rng).scale(0.4);
            if spectral_radius(&m, 1e-9).unwrap() >= 0.99 {
                continue;
            }
            let k = stability_constants(&m, 1e-10).unwrap();
            let floor = (d as f64).sqrt();
            assert!(k.kappa3 <= k.kappa1 * (1.0 + 1e-12));
            assert!(k.kappa2 <= k.kappa1 * k.kappa1 * (1.0 + 1e-12));
            assert!(k.kappa1 >= floor && k.kappa2 >= floor && k.kappa3 >= floor);
        }
    }

    #[test]
    fn stability_constants_reject_unstable() {
        let b = Mat::from_rows(&[&[1.01][..]]).unwrap();
        assert!(matches!(
            stability_constants(&b, 1e-10),
            Err(Error::NonConvergence { .. })
        ));
    }

    #[test]
    fn mat_serde_roundtrip() {
        let m = Mat::from_rows(&[&[1.0, 2.0][..], &[3.0, 4.0][..]]).unwrap();
        let js = serde_json::to_string(&m).unwrap();
        let back: Mat = serde_json::from_str(&js).unwrap();
        assert_eq!(m, back);
        let s = SymMat::diag(&[1.0, 2.0]);
        let js = serde_json::to_string(&s).unwrap();
        let back: SymMat = serde_json::from_str(&js).unwrap();
        assert_eq!(s, back);
    }
}
