//! Matrix helpers shared by every other module.
//!
//! Covariances live in [`SymMatrix`], which symmetrizes on construction so
//! that long recursions cannot drift away from symmetry. Orderings between
//! covariances are decided by [`loewner_compare`], which looks at the extreme
//! eigenvalues of the symmetrized difference.
//!
//! The `check_*` functions evaluate both sides of a matrix identity and return
//! the Frobenius norm of their difference; they exist so the identities the
//! analysis relies on can be exercised directly on random inputs.

use std::ops::{Add, Deref, Sub};

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Relative rank threshold used when deciding whether a matrix is singular.
const SINGULAR_RCOND: f64 = 1e-14;

/// A square real matrix kept exactly symmetric.
#[derive(Clone, Debug, PartialEq)]
pub struct SymMatrix(Matrix);

impl SymMatrix {
    /// Symmetrizes `m` as `(m + mᵀ)/2`. Fails if `m` is not square.
    pub fn new(m: Matrix) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::DimensionMismatch {
                op: "SymMatrix::new",
                expected: (m.nrows(), m.nrows()),
                found: m.shape(),
            });
        }
        Ok(SymMatrix(symmetrize(&m)))
    }

    pub(crate) fn from_square(m: Matrix) -> Self {
        debug_assert!(m.is_square());
        SymMatrix(symmetrize(&m))
    }

    pub fn identity(n: usize) -> Self {
        SymMatrix(Matrix::identity(n, n))
    }

    pub fn zeros(n: usize) -> Self {
        SymMatrix(Matrix::zeros(n, n))
    }

    pub fn scalar(v: f64) -> Self {
        SymMatrix(Matrix::from_element(1, 1, v))
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        SymMatrix(Matrix::from_diagonal(&Vector::from_column_slice(d)))
    }

    /// Builds from nested rows, as found in scenario files.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        SymMatrix::new(matrix_from_rows(rows)?)
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn frobenius(&self) -> f64 {
        self.0.norm()
    }

    pub fn eigenvalues(&self) -> Vector {
        if self.dim() == 0 {
            return Vector::zeros(0);
        }
        self.0.clone().symmetric_eigenvalues()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues().min()
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigenvalues().max()
    }

    pub fn is_positive_definite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite()) && self.0.clone().cholesky().is_some()
    }

    /// Errors with `what` in the message unless the matrix is positive definite.
    pub fn require_positive_definite(&self, what: impl Into<String>) -> Result<()> {
        if self.is_positive_definite() {
            Ok(())
        } else {
            Err(Error::NotPositiveDefinite {
                what: what.into(),
                min_eigenvalue: self.min_eigenvalue(),
            })
        }
    }

    /// Inverse through a factorization solve against the identity.
    pub fn inverse(&self, what: &'static str) -> Result<SymMatrix> {
        if let Some(chol) = self.0.clone().cholesky() {
            return Ok(SymMatrix::from_square(chol.inverse()));
        }
        Ok(SymMatrix::from_square(inverse(&self.0, what)?))
    }

    /// Solves `self · x = b`, by Cholesky when possible.
    pub fn solve(&self, b: &Matrix, what: &'static str) -> Result<Matrix> {
        if let Some(chol) = self.0.clone().cholesky() {
            if b.nrows() != self.dim() {
                return Err(Error::DimensionMismatch {
                    op: what,
                    expected: (self.dim(), b.ncols()),
                    found: b.shape(),
                });
            }
            return Ok(chol.solve(b));
        }
        solve(&self.0, b, what)
    }

    /// `a · self · aᵀ`.
    pub fn congruence(&self, a: &Matrix) -> SymMatrix {
        SymMatrix::from_square(a * &self.0 * a.transpose())
    }

    pub fn scale(&self, s: f64) -> SymMatrix {
        SymMatrix(&self.0 * s)
    }
}

impl Deref for SymMatrix {
    type Target = Matrix;

    fn deref(&self) -> &Matrix {
        &self.0
    }
}

impl Add for &SymMatrix {
    type Output = SymMatrix;

    fn add(self, rhs: &SymMatrix) -> SymMatrix {
        SymMatrix(&self.0 + &rhs.0)
    }
}

impl Sub for &SymMatrix {
    type Output = SymMatrix;

    fn sub(self, rhs: &SymMatrix) -> SymMatrix {
        SymMatrix(&self.0 - &rhs.0)
    }
}

pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<Matrix> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if let Some(bad) = rows.iter().find(|r| r.len() != ncols) {
        return Err(Error::DimensionMismatch {
            op: "matrix_from_rows",
            expected: (nrows, ncols),
            found: (nrows, bad.len()),
        });
    }
    Ok(Matrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn matrix_to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Column-stacking vectorization.
pub fn vec(m: &Matrix) -> Vector {
    Vector::from_column_slice(m.as_slice())
}

pub fn unvec(v: &Vector, nrows: usize, ncols: usize) -> Matrix {
    Matrix::from_column_slice(nrows, ncols, v.as_slice())
}

/// Frobenius inner product `Tr(aᵀ b)`.
pub fn frobenius_inner(a: &Matrix, b: &Matrix) -> f64 {
    a.dot(b)
}

/// `‖a − b‖_F / max(‖a‖_F, ‖b‖_F)`, zero when both vanish.
pub fn rel_diff(a: &Matrix, b: &Matrix) -> f64 {
    let d = (a - b).norm();
    let scale = a.norm().max(b.norm());
    if scale == 0.0 {
        d
    } else {
        d / scale
    }
}

pub fn is_singular(m: &Matrix) -> bool {
    if !m.is_square() || m.nrows() == 0 {
        return true;
    }
    let sv = m.clone().singular_values();
    let max = sv.max();
    !(max.is_finite() && max > 0.0 && sv.min() > SINGULAR_RCOND * max)
}

/// Solves `a x = b` by LU factorization.
pub fn solve(a: &Matrix, b: &Matrix, what: &'static str) -> Result<Matrix> {
    if !a.is_square() || a.nrows() != b.nrows() {
        return Err(Error::DimensionMismatch {
            op: what,
            expected: (a.nrows(), b.ncols()),
            found: b.shape(),
        });
    }
    let x = a.clone().lu().solve(b).ok_or(Error::Singular(what))?;
    if x.iter().all(|v| v.is_finite()) {
        Ok(x)
    } else {
        Err(Error::Singular(what))
    }
}

pub fn inverse(a: &Matrix, what: &'static str) -> Result<Matrix> {
    solve(a, &Matrix::identity(a.nrows(), a.nrows()), what)
}

/// Inverse that first rejects numerically rank-deficient inputs.
pub fn checked_inverse(a: &Matrix, what: &'static str) -> Result<Matrix> {
    if is_singular(a) {
        return Err(Error::Singular(what));
    }
    inverse(a, what)
}

pub fn spectral_radius(m: &Matrix) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.complex_eigenvalues().iter().map(|c| c.norm()).fold(0.0, f64::max)
}

pub fn max_singular_value(m: &Matrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().singular_values().max()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum LoewnerOrdering {
    #[serde(rename = "GEQ")]
    Geq,
    #[serde(rename = "LEQ")]
    Leq,
    #[serde(rename = "EQ")]
    Eq,
    #[serde(rename = "INDEFINITE")]
    Indefinite,
}

impl std::fmt::Display for LoewnerOrdering {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            LoewnerOrdering::Geq => "GEQ",
            LoewnerOrdering::Leq => "LEQ",
            LoewnerOrdering::Eq => "EQ",
            LoewnerOrdering::Indefinite => "INDEFINITE",
        };
        f.write_str(s)
    }
}

/// Result of comparing `a` against `b` in the Loewner order.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LoewnerVerdict {
    pub ordering: LoewnerOrdering,
    /// Smallest eigenvalue of `a − b`.
    pub min_eig_of_difference: f64,
    /// Largest eigenvalue of `a − b`.
    pub max_eig_of_difference: f64,
    pub tolerance: f64,
}

impl LoewnerVerdict {
    /// `a ⪰ b` within tolerance.
    pub fn is_geq(&self) -> bool {
        matches!(self.ordering, LoewnerOrdering::Geq | LoewnerOrdering::Eq)
    }

    /// `a ⪯ b` within tolerance.
    pub fn is_leq(&self) -> bool {
        matches!(self.ordering, LoewnerOrdering::Leq | LoewnerOrdering::Eq)
    }

    pub fn is_eq(&self) -> bool {
        self.ordering == LoewnerOrdering::Eq
    }

    /// `a ≻ b` with margin `tol_strict`.
    pub fn is_strictly_greater(&self, tol_strict: f64) -> bool {
        self.min_eig_of_difference > tol_strict
    }

    pub fn is_strictly_less(&self, tol_strict: f64) -> bool {
        self.max_eig_of_difference < -tol_strict
    }
}

/// Default comparison tolerance `1e-9 · (1 + max(‖a‖_F, ‖b‖_F))`.
pub fn default_tolerance(a: &Matrix, b: &Matrix) -> f64 {
    1e-9 * (1.0 + a.norm().max(b.norm()))
}

pub fn loewner_compare(a: &Matrix, b: &Matrix, tol: f64) -> Result<LoewnerVerdict> {
    if a.shape() != b.shape() || !a.is_square() {
        return Err(Error::DimensionMismatch {
            op: "loewner_compare",
            expected: a.shape(),
            found: b.shape(),
        });
    }
    if !(tol >= 0.0) {
        return Err(Error::InvalidArgument(format!("negative tolerance {tol}")));
    }
    let diff = SymMatrix::from_square(a - b);
    let eig = diff.eigenvalues();
    let (min, max) = if eig.is_empty() { (0.0, 0.0) } else { (eig.min(), eig.max()) };
    let geq = min >= -tol;
    let leq = max <= tol;
    let ordering = match (geq, leq) {
        (true, true) => LoewnerOrdering::Eq,
        (true, false) => LoewnerOrdering::Geq,
        (false, true) => LoewnerOrdering::Leq,
        (false, false) => LoewnerOrdering::Indefinite,
    };
    Ok(LoewnerVerdict {
        ordering,
        min_eig_of_difference: min,
        max_eig_of_difference: max,
        tolerance: tol,
    })
}

fn check_conformable(op: &'static str, rows: usize, m: &Matrix, cols: usize) -> Result<()> {
    if m.shape() != (rows, cols) {
        return Err(Error::DimensionMismatch {
            op,
            expected: (rows, cols),
            found: m.shape(),
        });
    }
    Ok(())
}

/// Residual of `(A + BCD)⁻¹ = A⁻¹ − A⁻¹B(C⁻¹ + DA⁻¹B)⁻¹DA⁻¹`.
pub fn check_matrix_inversion_lemma(a: &Matrix, b: &Matrix, c: &Matrix, d: &Matrix) -> Result<f64> {
    let n = a.nrows();
    let p = c.nrows();
    check_conformable("matrix inversion lemma (A)", n, a, n)?;
    check_conformable("matrix inversion lemma (B)", n, b, p)?;
    check_conformable("matrix inversion lemma (C)", p, c, p)?;
    check_conformable("matrix inversion lemma (D)", p, d, n)?;
    let a_inv = checked_inverse(a, "matrix inversion lemma: A")?;
    let c_inv = checked_inverse(c, "matrix inversion lemma: C")?;
    let lhs = checked_inverse(&(a + b * c * d), "matrix inversion lemma: A + BCD")?;
    let inner = checked_inverse(&(c_inv + d * &a_inv * b), "matrix inversion lemma: C⁻¹ + DA⁻¹B")?;
    let rhs = &a_inv - &a_inv * b * inner * d * &a_inv;
    Ok((lhs - rhs).norm())
}

/// Residual of `a(A+B)⁻¹A(A+B)⁻¹ − (A+B)⁻¹ = (A+B)⁻¹((a−1)I − aB(A+B)⁻¹)`.
pub fn check_lemma_a_plus_b(a_mat: &Matrix, b_mat: &Matrix, a: f64) -> Result<f64> {
    let n = a_mat.nrows();
    check_conformable("lemma a+b (A)", n, a_mat, n)?;
    check_conformable("lemma a+b (B)", n, b_mat, n)?;
    checked_inverse(a_mat, "lemma a+b: A")?;
    checked_inverse(b_mat, "lemma a+b: B")?;
    let s = checked_inverse(&(a_mat + b_mat), "lemma a+b: A + B")?;
    let id = Matrix::identity(n, n);
    let lhs = &s * a_mat * &s * a - &s;
    let rhs = &s * (id * (a - 1.0) - b_mat * &s * a);
    Ok((lhs - rhs).norm())
}

/// Residual of `(A+B)⁻¹ − A⁻¹ = −A⁻¹B(A+B)⁻¹`.
pub fn check_lemma_inverse_difference(a: &Matrix, b: &Matrix) -> Result<f64> {
    let n = a.nrows();
    check_conformable("inverse difference (A)", n, a, n)?;
    check_conformable("inverse difference (B)", n, b, n)?;
    let a_inv = checked_inverse(a, "inverse difference: A")?;
    checked_inverse(b, "inverse difference: B")?;
    let s = checked_inverse(&(a + b), "inverse difference: A + B")?;
    let lhs = &s - &a_inv;
    let rhs = -(&a_inv * b * &s);
    Ok((lhs - rhs).norm())
}

/// `(I − KH)Σ(I − KH)ᵀ + KRKᵀ`.
pub fn joseph_form(sigma: &Matrix, h: &Matrix, r: &Matrix, k: &Matrix) -> SymMatrix {
    let n = sigma.nrows();
    let ikh = Matrix::identity(n, n) - k * h;
    SymMatrix::from_square(&ikh * sigma * ikh.transpose() + k * r * k.transpose())
}

/// `ΣHᵀ(HΣHᵀ + R)⁻¹`, computed by a solve on the innovation covariance.
pub fn optimal_gain(sigma: &Matrix, h: &Matrix, r: &Matrix) -> Result<Matrix> {
    let s = h * sigma * h.transpose() + r;
    let pht = sigma * h.transpose();
    // K S = PHᵀ  ⇔  Sᵀ Kᵀ = (PHᵀ)ᵀ
    Ok(solve(&s.transpose(), &pht.transpose(), "optimal gain: HΣHᵀ + R")?.transpose())
}

/// Compares the Joseph-form covariance at `k_alt` against the one at the
/// optimal gain; the verdict is `GEQ` or `EQ` whenever the optimum is global.
pub fn check_optimal_gain(sigma: &SymMatrix, h: &Matrix, r: &SymMatrix, k_alt: &Matrix) -> Result<LoewnerVerdict> {
    let n = sigma.dim();
    let m = r.dim();
    check_conformable("optimal gain (H)", m, h, n)?;
    check_conformable("optimal gain (K)", n, k_alt, m)?;
    let s = h * sigma.matrix() * h.transpose() + r.matrix();
    if is_singular(&s) {
        return Err(Error::Singular("optimal gain: HΣHᵀ + R"));
    }
    let k_min = optimal_gain(sigma, h, r)?;
    let psi_min = joseph_form(sigma, h, r, &k_min);
    let psi_alt = joseph_form(sigma, h, r, k_alt);
    let tol = default_tolerance(&psi_alt, &psi_min);
    loewner_compare(&psi_alt, &psi_min, tol)
}

/// Which discrete Lyapunov equation to solve.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LyapunovSide {
    /// `X = F X Fᵀ + G`
    Direct,
    /// `X = Fᵀ X F + G`
    Transposed,
}

/// Unique fixed point of the discrete Lyapunov equation, by solving
/// `(I − F⊗F) vec(X) = vec(G)` (or with `Fᵀ` for the transposed side).
pub fn solve_discrete_lyapunov(fbar: &Matrix, g: &SymMatrix, side: LyapunovSide) -> Result<SymMatrix> {
    let n = fbar.nrows();
    check_conformable("discrete Lyapunov (F)", n, fbar, n)?;
    check_conformable("discrete Lyapunov (G)", n, g, n)?;
    let rho = spectral_radius(fbar);
    if !(rho < 1.0) {
        return Err(Error::NotSchurStable { spectral_radius: rho });
    }
    let f = match side {
        LyapunovSide::Direct => fbar.clone(),
        LyapunovSide::Transposed => fbar.transpose(),
    };
    let t = Matrix::identity(n * n, n * n) - f.kronecker(&f);
    let rhs = Matrix::from_column_slice(n * n, 1, g.as_slice());
    let x = solve(&t, &rhs, "discrete Lyapunov: I − F⊗F")?;
    Ok(SymMatrix::from_square(Matrix::from_column_slice(n, n, x.as_slice())))
}

/// Frobenius residual `‖X − (F X Fᵀ + G)‖` for the chosen side.
pub fn lyapunov_residual(fbar: &Matrix, g: &SymMatrix, x: &SymMatrix, side: LyapunovSide) -> f64 {
    let mapped = match side {
        LyapunovSide::Direct => fbar * x.matrix() * fbar.transpose(),
        LyapunovSide::Transposed => fbar.transpose() * x.matrix() * fbar,
    };
    (x.matrix() - mapped - g.matrix()).norm()
}
