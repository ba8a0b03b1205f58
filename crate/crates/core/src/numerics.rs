//! Dense complex matrix substrate.
//!
//! Every predicate that compares a floating point quantity against zero goes
//! through a [`Tolerance`]: the effective threshold at scale `s` is
//! `atol + rtol * s`. Hermitian operators are stored symmetrized, with the
//! defect of the input recorded.

use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{DMatrix, DVector, Schur, SymmetricEigen};
use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;

/// Dense complex matrix, column-major storage, finite entries.
pub type ComplexMatrix = DMatrix<C64>;

/// Relative defect `||M - M*||_F / ||M||_F` above which construction of a
/// [`HermitianOperator`] fails.
pub const HERMITIAN_DEFECT_LIMIT: f64 = 1e-8;

#[inline]
pub fn c64(re: f64, im: f64) -> C64 {
    Complex::new(re, im)
}

/// Absolute/relative tolerance pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerance {
    pub atol: f64,
    pub rtol: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance {
            atol: 1e-10,
            rtol: 1e-10,
        }
    }
}

impl Tolerance {
    pub fn new(atol: f64, rtol: f64) -> Result<Self> {
        if !(atol >= 0.0 && rtol >= 0.0 && atol.is_finite() && rtol.is_finite()) {
            return Err(Error::MalformedInput(format!(
                "tolerances must be finite and nonnegative (atol={atol}, rtol={rtol})"
            )));
        }
        Ok(Tolerance { atol, rtol })
    }

    /// Effective threshold for a comparison at scale `scale`.
    #[inline]
    pub fn threshold(&self, scale: f64) -> f64 {
        self.atol + self.rtol * scale.abs()
    }
}

/// Iteration budget and tolerance for the iterative routines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationOptions {
    pub max_iter: usize,
    pub tol: Tolerance,
}

impl Default for IterationOptions {
    fn default() -> Self {
        IterationOptions {
            max_iter: 10_000,
            tol: Tolerance::default(),
        }
    }
}

pub fn is_finite(m: &ComplexMatrix) -> bool {
    m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

pub fn check_finite(m: &ComplexMatrix, what: &str) -> Result<()> {
    if is_finite(m) {
        Ok(())
    } else {
        Err(Error::MalformedInput(format!("{what} has non-finite entries")))
    }
}

pub fn check_square(m: &ComplexMatrix, what: &str) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(Error::MalformedInput(format!(
            "{what} must be square, found {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(m.nrows())
}

/// Eigen-decomposition of a Hermitian matrix with eigenvalues ascending.
#[derive(Debug, Clone)]
pub struct HermitianEigen {
    pub values: Vec<f64>,
    /// Orthonormal eigenvectors, column `j` belongs to `values[j]`.
    pub vectors: ComplexMatrix,
}

impl HermitianEigen {
    pub fn min(&self) -> f64 {
        self.values.first().copied().unwrap_or(0.0)
    }

    pub fn max(&self) -> f64 {
        self.values.last().copied().unwrap_or(0.0)
    }

    /// Rebuild `V f(Λ) V*`.
    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> ComplexMatrix {
        let d = self.vectors.nrows();
        let mut out = ComplexMatrix::zeros(d, d);
        for (j, &lambda) in self.values.iter().enumerate() {
            let w = f(lambda);
            if w == 0.0 {
                continue;
            }
            let v = self.vectors.column(j);
            out += (&v * v.adjoint()) * c64(w, 0.0);
        }
        out
    }

    /// Columns of the eigenvectors whose eigenvalue satisfies `keep`.
    pub fn select(&self, keep: impl Fn(f64) -> bool) -> ComplexMatrix {
        let d = self.vectors.nrows();
        let idx: Vec<usize> = (0..self.values.len())
            .filter(|&j| keep(self.values[j]))
            .collect();
        let mut out = ComplexMatrix::zeros(d, idx.len());
        for (k, &j) in idx.iter().enumerate() {
            out.set_column(k, &self.vectors.column(j));
        }
        out
    }
}

pub fn hermitian_eigen(m: &ComplexMatrix) -> HermitianEigen {
    let d = m.nrows();
    if d == 0 {
        return HermitianEigen {
            values: vec![],
            vectors: ComplexMatrix::zeros(0, 0),
        };
    }
    let zero = C64::new(0.0, 0.0);
    let diagonal = (0..d).all(|j| (0..d).all(|i| i == j || m[(i, j)] == zero));
    if diagonal {
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| m[(a, a)].re.total_cmp(&m[(b, b)].re));
        let mut vectors = ComplexMatrix::zeros(d, d);
        for (k, &j) in order.iter().enumerate() {
            vectors[(j, k)] = C64::new(1.0, 0.0);
        }
        let values = order.iter().map(|&j| m[(j, j)].re).collect();
        return HermitianEigen { values, vectors };
    }
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&j| eig.eigenvalues[j]).collect();
    let mut vectors = ComplexMatrix::zeros(d, d);
    for (k, &j) in order.iter().enumerate() {
        vectors.set_column(k, &eig.eigenvectors.column(j));
    }
    HermitianEigen { values, vectors }
}

/// A selfadjoint `dim x dim` operator.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianOperator {
    matrix: ComplexMatrix,
    symmetry_defect: f64,
}

impl HermitianOperator {
    /// Validates and symmetrizes `m`, recording `||M - M*||_F`.
    pub fn new(m: ComplexMatrix) -> Result<Self> {
        check_square(&m, "Hermitian operator")?;
        check_finite(&m, "Hermitian operator")?;
        let defect = (&m - m.adjoint()).norm();
        let scale = m.norm();
        if defect > HERMITIAN_DEFECT_LIMIT * scale {
            return Err(Error::MalformedInput(format!(
                "matrix is not Hermitian: ||M - M*|| = {defect:e} exceeds {:e}",
                HERMITIAN_DEFECT_LIMIT * scale
            )));
        }
        Ok(Self::symmetrized(m))
    }

    /// Symmetrizes without the defect check; for results of operations that
    /// are selfadjoint up to rounding.
    pub fn symmetrized(m: ComplexMatrix) -> Self {
        let adj = m.adjoint();
        let symmetry_defect = (&m - &adj).norm();
        let matrix = (m + adj) * c64(0.5, 0.0);
        HermitianOperator {
            matrix,
            symmetry_defect,
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::symmetrized(ComplexMatrix::identity(dim, dim))
    }

    pub fn zeros(dim: usize) -> Self {
        Self::symmetrized(ComplexMatrix::zeros(dim, dim))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let v = DVector::from_iterator(diag.len(), diag.iter().map(|&x| c64(x, 0.0)));
        Self::symmetrized(ComplexMatrix::from_diagonal(&v))
    }

    /// Orthogonal projection onto the span of the orthonormal columns of `basis`.
    pub fn projector(basis: &ComplexMatrix) -> Self {
        Self::symmetrized(basis * basis.adjoint())
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> ComplexMatrix {
        self.matrix
    }

    pub fn symmetry_defect(&self) -> f64 {
        self.symmetry_defect
    }

    pub fn eigen(&self) -> HermitianEigen {
        hermitian_eigen(&self.matrix)
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        self.eigen().values
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigen().min()
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigen().max()
    }

    /// Operator norm (largest eigenvalue modulus).
    pub fn norm(&self) -> f64 {
        let e = self.eigen();
        e.min().abs().max(e.max().abs())
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace().re
    }

    pub fn scale(&self, c: f64) -> Self {
        Self::symmetrized(&self.matrix * c64(c, 0.0))
    }

    /// `T X T*` for an arbitrary square `T`.
    pub fn congruence(&self, t: &ComplexMatrix) -> Self {
        Self::symmetrized(t * &self.matrix * t.adjoint())
    }

    /// Direct sum `self ⊕ other`.
    pub fn direct_sum(&self, other: &Self) -> Self {
        Self::symmetrized(block_diag(&self.matrix, &other.matrix))
    }
}

impl<'a> Add<&'a HermitianOperator> for &'a HermitianOperator {
    type Output = HermitianOperator;
    fn add(self, rhs: &HermitianOperator) -> HermitianOperator {
        HermitianOperator::symmetrized(&self.matrix + &rhs.matrix)
    }
}

impl<'a> Sub<&'a HermitianOperator> for &'a HermitianOperator {
    type Output = HermitianOperator;
    fn sub(self, rhs: &HermitianOperator) -> HermitianOperator {
        HermitianOperator::symmetrized(&self.matrix - &rhs.matrix)
    }
}

impl Add for HermitianOperator {
    type Output = HermitianOperator;
    fn add(self, rhs: HermitianOperator) -> HermitianOperator {
        &self + &rhs
    }
}

impl Sub for HermitianOperator {
    type Output = HermitianOperator;
    fn sub(self, rhs: HermitianOperator) -> HermitianOperator {
        &self - &rhs
    }
}

impl Mul<f64> for &HermitianOperator {
    type Output = HermitianOperator;
    fn mul(self, c: f64) -> HermitianOperator {
        self.scale(c)
    }
}

impl Neg for &HermitianOperator {
    type Output = HermitianOperator;
    fn neg(self) -> HermitianOperator {
        self.scale(-1.0)
    }
}

/// `min eig(H) >= -(atol + rtol ||H||)`.
pub fn is_psd(h: &HermitianOperator, tol: Tolerance) -> bool {
    let e = h.eigen();
    let norm = e.min().abs().max(e.max().abs());
    e.min() >= -tol.threshold(norm)
}

/// Loewner order `a <= b` at tolerance, scale taken as `max(||a||, ||b||)`.
pub fn loewner_le(a: &HermitianOperator, b: &HermitianOperator, tol: Tolerance) -> bool {
    let scale = a.norm().max(b.norm());
    (b - a).min_eigenvalue() >= -tol.threshold(scale)
}

/// Positive square root. Eigenvalues of modulus at most the tolerance
/// threshold are treated as zero, so the root has the numerical kernel of `h`.
pub fn psd_sqrt(h: &HermitianOperator, tol: Tolerance) -> Result<HermitianOperator> {
    let e = h.eigen();
    let norm = e.min().abs().max(e.max().abs());
    let thr = tol.threshold(norm);
    if e.min() < -thr {
        return Err(Error::NotPsd {
            min_eigenvalue: e.min(),
        });
    }
    Ok(HermitianOperator::symmetrized(
        e.map_values(|l| if l <= thr { 0.0 } else { l.sqrt() }),
    ))
}

/// Singular values in descending order; wide matrices are padded so that the
/// count always equals `ncols`.
pub fn singular_values(m: &ComplexMatrix) -> Vec<f64> {
    if m.is_empty() {
        return vec![0.0; m.ncols()];
    }
    let mut sv: Vec<f64> = m.clone().singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv.resize(m.ncols().max(sv.len()), 0.0);
    sv
}

/// Spectral norm.
pub fn op_norm(m: &ComplexMatrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    singular_values(m).first().copied().unwrap_or(0.0)
}

pub fn trace(m: &ComplexMatrix) -> C64 {
    m.trace()
}

/// Numerical rank: singular values above `atol + rtol * sigma_max`.
pub fn rank(m: &ComplexMatrix, tol: Tolerance) -> usize {
    let sv = singular_values(m);
    let smax = sv.first().copied().unwrap_or(0.0);
    let thr = tol.threshold(smax);
    sv.iter().filter(|&&s| s > thr).count()
}

/// Orthonormal basis (as columns) of the numerical null space of `m`.
pub fn kernel_basis(m: &ComplexMatrix, tol: Tolerance) -> ComplexMatrix {
    let (r, c) = m.shape();
    if c == 0 {
        return ComplexMatrix::zeros(0, 0);
    }
    if r == 0 {
        return ComplexMatrix::identity(c, c);
    }
    let work = if r < c {
        let mut padded = ComplexMatrix::zeros(c, c);
        padded.view_mut((0, 0), (r, c)).copy_from(m);
        padded
    } else {
        m.clone()
    };
    let svd = work.svd(false, true);
    let v_t = svd.v_t.expect("requested V");
    let sv = &svd.singular_values;
    let smax = sv.iter().copied().fold(0.0_f64, f64::max);
    let thr = tol.threshold(smax);
    let idx: Vec<usize> = (0..sv.len()).filter(|&j| sv[j] <= thr).collect();
    let mut out = ComplexMatrix::zeros(c, idx.len());
    for (k, &j) in idx.iter().enumerate() {
        out.set_column(k, &v_t.row(j).adjoint());
    }
    out
}

/// Orthonormal basis of the numerical range (column space) of `m`.
pub fn range_basis(m: &ComplexMatrix, tol: Tolerance) -> ComplexMatrix {
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return ComplexMatrix::zeros(r, 0);
    }
    let work = if c < r {
        let mut padded = ComplexMatrix::zeros(r, r);
        padded.view_mut((0, 0), (r, c)).copy_from(m);
        padded
    } else {
        m.clone()
    };
    let svd = work.svd(true, false);
    let u = svd.u.expect("requested U");
    let sv = &svd.singular_values;
    let smax = sv.iter().copied().fold(0.0_f64, f64::max);
    let thr = tol.threshold(smax);
    let idx: Vec<usize> = (0..sv.len()).filter(|&j| sv[j] > thr).collect();
    let mut out = ComplexMatrix::zeros(r, idx.len());
    for (k, &j) in idx.iter().enumerate() {
        out.set_column(k, &u.column(j));
    }
    out
}

/// Orthonormal basis of the orthogonal complement of the span of `basis`
/// (whose columns are orthonormal) in `C^dim`.
pub fn complement_basis(basis: &ComplexMatrix, dim: usize) -> ComplexMatrix {
    if basis.ncols() == 0 {
        return ComplexMatrix::identity(dim, dim);
    }
    let proj = ComplexMatrix::identity(dim, dim) - basis * basis.adjoint();
    range_basis(&proj, Tolerance::new(1e-8, 0.0).expect("static"))
}

/// Moore-Penrose pseudo-inverse, singular values at or below the tolerance
/// threshold are treated as zero.
pub fn pinv(m: &ComplexMatrix, tol: Tolerance) -> ComplexMatrix {
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return ComplexMatrix::zeros(c, r);
    }
    let svd = m.clone().svd(true, true);
    let u = svd.u.as_ref().expect("requested U");
    let v_t = svd.v_t.as_ref().expect("requested V");
    let smax = svd.singular_values.iter().copied().fold(0.0_f64, f64::max);
    let thr = tol.threshold(smax);
    let mut out = ComplexMatrix::zeros(c, r);
    for (j, &s) in svd.singular_values.iter().enumerate() {
        if s > thr {
            out += (v_t.row(j).adjoint() * u.column(j).adjoint()) * c64(1.0 / s, 0.0);
        }
    }
    out
}

/// Inverse of a positive definite operator; fails unless the smallest
/// eigenvalue exceeds the tolerance threshold.
pub fn inverse_psd(h: &HermitianOperator, tol: Tolerance) -> Result<HermitianOperator> {
    let e = h.eigen();
    let norm = e.min().abs().max(e.max().abs());
    if e.min() <= tol.threshold(norm) {
        return Err(Error::NotInvertible { smallest: e.min() });
    }
    Ok(HermitianOperator::symmetrized(e.map_values(|l| 1.0 / l)))
}

/// Inverse of a general square matrix via LU, guarded by the smallest
/// singular value.
pub fn inverse(m: &ComplexMatrix, tol: Tolerance) -> Result<ComplexMatrix> {
    check_square(m, "matrix")?;
    let sv = singular_values(m);
    let smax = sv.first().copied().unwrap_or(0.0);
    let smin = sv.last().copied().unwrap_or(0.0);
    if smin <= tol.threshold(smax) {
        return Err(Error::NotInvertible { smallest: smin });
    }
    m.clone()
        .try_inverse()
        .ok_or(Error::NotInvertible { smallest: smin })
}

/// All eigenvalues of a general square matrix (complex Schur form).
pub fn spectrum(m: &ComplexMatrix) -> Vec<C64> {
    if m.nrows() == 0 {
        return vec![];
    }
    // shifted QR can stall at machine epsilon on spectra with many equal
    // moduli (e.g. conj(A) ⊗ A), so the deflation threshold is relaxed in steps
    let budget = 30 * m.nrows().max(10);
    let schur = [4.0, 64.0, 1024.0, 1e5]
        .iter()
        .find_map(|&k| Schur::try_new(m.clone(), k * f64::EPSILON, budget))
        .unwrap_or_else(|| Schur::try_new(m.clone(), 1e-11, 0).expect("unbounded iteration"));
    let (_, t) = schur.unpack();
    t.diagonal().iter().copied().collect()
}

/// Kronecker product.
pub fn kron(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    a.kronecker(b)
}

/// Column-stacking vectorization.
pub fn vec_of(m: &ComplexMatrix) -> DVector<C64> {
    DVector::from_column_slice(m.as_slice())
}

/// Inverse of [`vec_of`] for a `d x d` matrix.
pub fn unvec(v: &DVector<C64>, d: usize) -> ComplexMatrix {
    ComplexMatrix::from_column_slice(d, d, v.as_slice())
}

pub fn block_diag(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    let (ra, ca) = a.shape();
    let (rb, cb) = b.shape();
    let mut out = ComplexMatrix::zeros(ra + rb, ca + cb);
    out.view_mut((0, 0), (ra, ca)).copy_from(a);
    out.view_mut((ra, ca), (rb, cb)).copy_from(b);
    out
}

/// `||(I - P) T P||` where `P` projects onto the span of the orthonormal
/// columns of `basis`; zero iff the subspace is invariant under `T`.
pub fn invariance_residual(t: &ComplexMatrix, basis: &ComplexMatrix) -> f64 {
    if basis.ncols() == 0 {
        return 0.0;
    }
    let tb = t * basis;
    let leak = &tb - basis * (basis.adjoint() * &tb);
    op_norm(&leak)
}

/// Real-linear orthonormalization of a family of Hermitian matrices under the
/// Hilbert-Schmidt inner product `Re tr(X* Y)`.
pub fn orthonormalize_hermitian(family: &[ComplexMatrix], tol: Tolerance) -> Vec<ComplexMatrix> {
    let Some(first) = family.first() else {
        return vec![];
    };
    let d = first.nrows();
    let len = 2 * d * d;
    let mut stacked = DMatrix::<f64>::zeros(len, family.len());
    for (j, m) in family.iter().enumerate() {
        for (k, z) in m.iter().enumerate() {
            stacked[(2 * k, j)] = z.re;
            stacked[(2 * k + 1, j)] = z.im;
        }
    }
    let svd = stacked.svd(true, false);
    let u = svd.u.expect("requested U");
    let smax = svd.singular_values.iter().copied().fold(0.0_f64, f64::max);
    let thr = tol.threshold(smax);
    let mut out = Vec::new();
    for (j, &s) in svd.singular_values.iter().enumerate() {
        if s > thr {
            let col = u.column(j);
            let m = ComplexMatrix::from_fn(d, d, |r, c| {
                let k = c * d + r;
                c64(col[2 * k], col[2 * k + 1])
            });
            out.push(HermitianOperator::symmetrized(m).into_matrix());
        }
    }
    out
}
