//! Completely positive maps given by a finite Kraus family.
//!
//! `phi(X) = Σ A_i X A_i*` and `phi*(X) = Σ A_i* X A_i`. The vectorized form
//! [`Superoperator`] acts on column-stacked matrices and is used both as an
//! oracle and for the spectral computations (spectral radius, peripheral
//! Jordan structure, spectral projections).

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::{
    c64, check_finite, check_square, kernel_basis, loewner_le, op_norm, spectrum, unvec, vec_of,
    ComplexMatrix, HermitianOperator, Tolerance, C64,
};

/// Distance from the unit circle within which an eigenvalue is peripheral.
pub const PERIPHERAL_TOL: f64 = 1e-9;

/// Eigenvalues closer than this (relative to `max(1, |λ|)`) are grouped into
/// one cluster when counting algebraic multiplicity.
pub const CLUSTER_TOL: f64 = 1e-5;

/// Singular value threshold used for geometric multiplicities.
const GEOMETRIC_RANK_TOL: f64 = 1e-7;

/// An ordered family of `n` complex `d x d` matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct KrausFamily {
    dim: usize,
    ops: Vec<ComplexMatrix>,
    /// Nonzero entries `(row, col, value)` of operators sparse enough to be
    /// applied entrywise.
    sparse: Vec<Option<Vec<(usize, usize, C64)>>>,
}

/// Operators of dimension at least this with at most `d²/16` nonzeros are
/// applied through their nonzero entries.
const SPARSE_MIN_DIM: usize = 32;

fn sparse_entries(a: &ComplexMatrix) -> Option<Vec<(usize, usize, C64)>> {
    let d = a.nrows();
    if d < SPARSE_MIN_DIM {
        return None;
    }
    let mut out = Vec::new();
    for j in 0..d {
        for i in 0..d {
            let v = a[(i, j)];
            if v != C64::new(0.0, 0.0) {
                out.push((i, j, v));
                if out.len() > d * d / 16 {
                    return None;
                }
            }
        }
    }
    Some(out)
}

/// `A X A*` from the nonzero entries of `A`.
fn sparse_congruence(entries: &[(usize, usize, C64)], x: &ComplexMatrix, out: &mut ComplexMatrix) {
    let d = x.nrows();
    let xs = x.as_slice();
    let mut ax = vec![C64::new(0.0, 0.0); d * d];
    for c in 0..d {
        let xc = &xs[c * d..(c + 1) * d];
        let yc = &mut ax[c * d..(c + 1) * d];
        for &(i, j, a) in entries {
            yc[i] += a * xc[j];
        }
    }
    // (AX)A*: column i of the result gains conj(a) times column j of AX
    let os = out.as_mut_slice();
    for &(i, j, a) in entries {
        let a = a.conj();
        let src = &ax[j * d..(j + 1) * d];
        for (o, s) in os[i * d..(i + 1) * d].iter_mut().zip(src) {
            *o += s * a;
        }
    }
}

impl KrausFamily {
    pub fn new(ops: Vec<ComplexMatrix>) -> Result<Self> {
        let first = ops
            .first()
            .ok_or_else(|| Error::MalformedInput("Kraus family must be nonempty".into()))?;
        let dim = check_square(first, "Kraus operator")?;
        if dim == 0 {
            return Err(Error::MalformedInput("dimension must be at least 1".into()));
        }
        for (i, a) in ops.iter().enumerate() {
            if a.shape() != (dim, dim) {
                return Err(Error::MalformedInput(format!(
                    "Kraus operator {i} has shape {}x{}, expected {dim}x{dim}",
                    a.nrows(),
                    a.ncols()
                )));
            }
            check_finite(a, "Kraus operator")?;
        }
        Ok(Self::from_parts(dim, ops))
    }

    fn from_parts(dim: usize, ops: Vec<ComplexMatrix>) -> Self {
        let sparse = ops.iter().map(sparse_entries).collect();
        KrausFamily { dim, ops, sparse }
    }

    pub fn single(a: ComplexMatrix) -> Result<Self> {
        Self::new(vec![a])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of Kraus operators.
    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn operators(&self) -> &[ComplexMatrix] {
        &self.ops
    }

    pub fn operator(&self, i: usize) -> &ComplexMatrix {
        &self.ops[i]
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        if d != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: d,
            });
        }
        Ok(())
    }

    /// `Σ A_i X A_i*` for an arbitrary square matrix.
    pub fn apply_matrix(&self, x: &ComplexMatrix) -> ComplexMatrix {
        let mut out = ComplexMatrix::zeros(self.dim, self.dim);
        for (a, sparse) in self.ops.iter().zip(&self.sparse) {
            match sparse {
                Some(entries) => sparse_congruence(entries, x, &mut out),
                None => out += a * x * a.adjoint(),
            }
        }
        out
    }

    /// `Σ A_i* X A_i` for an arbitrary square matrix.
    pub fn apply_adjoint_matrix(&self, x: &ComplexMatrix) -> ComplexMatrix {
        let mut out = ComplexMatrix::zeros(self.dim, self.dim);
        for (a, sparse) in self.ops.iter().zip(&self.sparse) {
            match sparse {
                Some(entries) => {
                    let adjoint: Vec<_> = entries.iter().map(|&(i, j, v)| (j, i, v.conj())).collect();
                    sparse_congruence(&adjoint, x, &mut out)
                }
                None => out += a.adjoint() * x * a,
            }
        }
        out
    }

    pub fn apply(&self, x: &HermitianOperator) -> Result<HermitianOperator> {
        self.check_dim(x.dim())?;
        Ok(HermitianOperator::symmetrized(self.apply_matrix(x.matrix())))
    }

    pub fn apply_adjoint(&self, x: &HermitianOperator) -> Result<HermitianOperator> {
        self.check_dim(x.dim())?;
        Ok(HermitianOperator::symmetrized(
            self.apply_adjoint_matrix(x.matrix()),
        ))
    }

    /// `phi^k(X)`, with `phi^0(X) = X`.
    pub fn power_apply(&self, x: &HermitianOperator, k: usize) -> Result<HermitianOperator> {
        self.check_dim(x.dim())?;
        let mut m = x.matrix().clone();
        for _ in 0..k {
            m = self.apply_matrix(&m);
        }
        Ok(HermitianOperator::symmetrized(m))
    }

    /// The orbit `X, phi(X), ..., phi^k(X)`.
    pub fn orbit(&self, x: &HermitianOperator, k: usize) -> Result<Vec<HermitianOperator>> {
        self.check_dim(x.dim())?;
        let mut out = Vec::with_capacity(k + 1);
        out.push(x.clone());
        for j in 0..k {
            let next = HermitianOperator::symmetrized(self.apply_matrix(out[j].matrix()));
            out.push(next);
        }
        Ok(out)
    }

    /// `phi(I) = Σ A_i A_i*`.
    pub fn phi_identity(&self) -> HermitianOperator {
        HermitianOperator::symmetrized(self.apply_matrix(&ComplexMatrix::identity(self.dim, self.dim)))
    }

    /// `phi*(I) = Σ A_i* A_i`.
    pub fn adjoint_identity(&self) -> HermitianOperator {
        HermitianOperator::symmetrized(
            self.apply_adjoint_matrix(&ComplexMatrix::identity(self.dim, self.dim)),
        )
    }

    /// `||phi^k||`, computed as `||phi^k(I)||`; the two agree for positive maps.
    pub fn map_norm_power(&self, k: usize) -> f64 {
        let id = HermitianOperator::identity(self.dim);
        self.power_apply(&id, k).expect("dims match").norm()
    }

    pub fn superoperator(&self) -> Superoperator {
        Superoperator::from_family(self)
    }

    /// Spectral radius of `phi` as the spectral radius of its superoperator;
    /// eigenvalues are clustered first so that a defective eigenvalue is
    /// reported at its cluster center.
    pub fn spectral_radius(&self) -> f64 {
        self.superoperator().spectral_radius()
    }

    /// Every operator multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self::from_parts(self.dim, self.ops.iter().map(|a| a * c64(c, 0.0)).collect())
    }

    /// Block-diagonal family `(A_i ⊕ B_i)`; the shorter family is padded
    /// with zero operators.
    pub fn direct_sum(&self, other: &KrausFamily) -> KrausFamily {
        let n = self.len().max(other.len());
        let zero_a = ComplexMatrix::zeros(self.dim, self.dim);
        let zero_b = ComplexMatrix::zeros(other.dim, other.dim);
        let ops = (0..n)
            .map(|i| {
                crate::numerics::block_diag(
                    self.ops.get(i).unwrap_or(&zero_a),
                    other.ops.get(i).unwrap_or(&zero_b),
                )
            })
            .collect();
        Self::from_parts(self.dim + other.dim, ops)
    }

    /// Whether `phi(I) <= I` at tolerance.
    pub fn is_contractive(&self, tol: Tolerance) -> bool {
        loewner_le(&self.phi_identity(), &HermitianOperator::identity(self.dim), tol)
    }

    /// `||phi(I) - I||`.
    pub fn unital_defect(&self) -> f64 {
        (&self.phi_identity() - &HermitianOperator::identity(self.dim)).norm()
    }

    pub fn is_unital(&self, tol: Tolerance) -> bool {
        self.unital_defect() <= tol.threshold(1.0)
    }

    /// Largest commutator norm `max_{i<j} ||A_i A_j - A_j A_i||`.
    pub fn max_commutator(&self) -> f64 {
        let mut worst = 0.0_f64;
        for i in 0..self.len() {
            for j in (i + 1)..self.len() {
                let c = &self.ops[i] * &self.ops[j] - &self.ops[j] * &self.ops[i];
                worst = worst.max(op_norm(&c));
            }
        }
        worst
    }

    /// Classification of the map: spectral radius, unital/contractive/pure
    /// flags and power-boundedness.
    pub fn classify(&self, tol: Tolerance) -> MapClassification {
        let sup = self.superoperator();
        let peripheral = sup.peripheral();
        let spectral_radius = peripheral.radius;
        let contractive = self.is_contractive(tol);
        let unital = self.is_unital(tol);
        let power_bounded = peripheral.power_bounded();
        // in finite dimensions phi^k(I) -> 0 iff ||phi^k|| -> 0 iff r(phi) < 1
        let pure = spectral_radius < 1.0 - PERIPHERAL_TOL;
        MapClassification {
            dim: self.dim,
            kraus_count: self.len(),
            spectral_radius,
            is_unital: unital,
            is_contractive: contractive,
            is_pure: pure,
            is_power_bounded: power_bounded,
            peripheral_semisimple: peripheral.semisimple(),
            phi_identity_norm: self.phi_identity().norm(),
            adjoint_identity_norm: self.adjoint_identity().norm(),
            peripheral_eigenvalues: peripheral
                .clusters
                .iter()
                .filter(|c| c.center.norm() >= 1.0 - CLUSTER_TOL && spectral_radius >= 1.0 - PERIPHERAL_TOL)
                .map(|c| PeripheralEntry {
                    re: c.center.re,
                    im: c.center.im,
                    algebraic: c.algebraic,
                    geometric: c.geometric,
                })
                .collect(),
        }
    }
}

/// One peripheral eigenvalue cluster, serialized in classification reports.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PeripheralEntry {
    pub re: f64,
    pub im: f64,
    pub algebraic: usize,
    pub geometric: usize,
}

/// Outcome of [`KrausFamily::classify`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MapClassification {
    pub dim: usize,
    pub kraus_count: usize,
    pub spectral_radius: f64,
    pub is_unital: bool,
    pub is_contractive: bool,
    pub is_pure: bool,
    pub is_power_bounded: bool,
    pub peripheral_semisimple: bool,
    pub phi_identity_norm: f64,
    pub adjoint_identity_norm: f64,
    pub peripheral_eigenvalues: Vec<PeripheralEntry>,
}

/// The `d² x d²` matrix of `phi` acting on column-stacked matrices:
/// `vec(phi(X)) = (Σ conj(A_i) ⊗ A_i) vec(X)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Superoperator {
    dim: usize,
    matrix: ComplexMatrix,
}

/// Eigenvalue cluster of a superoperator.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenCluster {
    pub center: C64,
    pub algebraic: usize,
    pub geometric: usize,
}

/// Spectral data on and near the spectral circle.
#[derive(Debug, Clone, PartialEq)]
pub struct PeripheralSpectrum {
    pub radius: f64,
    pub eigenvalues: Vec<C64>,
    /// Clusters whose center has modulus within [`CLUSTER_TOL`] of the radius.
    pub clusters: Vec<EigenCluster>,
}

impl PeripheralSpectrum {
    /// Every peripheral cluster has equal algebraic and geometric multiplicity.
    pub fn semisimple(&self) -> bool {
        self.clusters.iter().all(|c| c.algebraic == c.geometric)
    }

    /// `r < 1`, or `r = 1` with semisimple peripheral spectrum.
    pub fn power_bounded(&self) -> bool {
        if self.radius < 1.0 - PERIPHERAL_TOL {
            return true;
        }
        if self.radius > 1.0 + PERIPHERAL_TOL {
            return false;
        }
        self.semisimple()
    }

    /// Clusters with `|λ - 1| <= CLUSTER_TOL` whose multiplicities differ.
    pub fn jordan_defects(&self) -> Vec<EigenCluster> {
        self.clusters
            .iter()
            .filter(|c| c.algebraic != c.geometric)
            .cloned()
            .collect()
    }
}

impl Superoperator {
    pub fn from_family(phi: &KrausFamily) -> Self {
        let d = phi.dim();
        let mut matrix = ComplexMatrix::zeros(d * d, d * d);
        for a in phi.operators() {
            matrix += a.conjugate().kronecker(a);
        }
        Superoperator { dim: d, matrix }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    pub fn apply(&self, x: &ComplexMatrix) -> ComplexMatrix {
        unvec(&(&self.matrix * vec_of(x)), self.dim)
    }

    /// `unvec(Φ^k vec X)`.
    pub fn power_apply(&self, x: &ComplexMatrix, k: usize) -> ComplexMatrix {
        let mut v: DVector<C64> = vec_of(x);
        for _ in 0..k {
            v = &self.matrix * v;
        }
        unvec(&v, self.dim)
    }

    pub fn eigenvalues(&self) -> Vec<C64> {
        spectrum(&self.matrix)
    }

    pub fn spectral_radius(&self) -> f64 {
        let eig = self.eigenvalues();
        cluster(&eig)
            .iter()
            .map(|(c, _)| c.norm())
            .fold(0.0, f64::max)
    }

    /// Dimension of `ker(Φ - λ I)` at the geometric-multiplicity threshold.
    pub fn geometric_multiplicity(&self, lambda: C64) -> usize {
        let shifted = self.shifted(lambda);
        let tol = Tolerance::new(GEOMETRIC_RANK_TOL * op_norm(&self.matrix).max(1.0), 0.0)
            .expect("static");
        kernel_basis(&shifted, tol).ncols()
    }

    fn shifted(&self, lambda: C64) -> ComplexMatrix {
        let n = self.matrix.nrows();
        &self.matrix - ComplexMatrix::identity(n, n) * lambda
    }

    pub fn peripheral(&self) -> PeripheralSpectrum {
        let eigenvalues = self.eigenvalues();
        let clusters_raw = cluster(&eigenvalues);
        let radius = clusters_raw.iter().map(|(c, _)| c.norm()).fold(0.0, f64::max);
        let clusters = clusters_raw
            .into_iter()
            .filter(|(c, _)| radius > 0.0 && c.norm() >= radius - CLUSTER_TOL * radius.max(1.0))
            .map(|(center, algebraic)| EigenCluster {
                center,
                algebraic,
                geometric: self.geometric_multiplicity(center),
            })
            .collect();
        PeripheralSpectrum {
            radius,
            eigenvalues,
            clusters,
        }
    }

    /// Spectral projection onto `ker(Φ - λ I)` along `ran(Φ - λ I)`, valid
    /// when `λ` is a semisimple eigenvalue. Returns `None` when `λ` is not an
    /// eigenvalue at tolerance, or when the left and right eigenspaces do not
    /// pair (a Jordan defect).
    pub fn spectral_projection(&self, lambda: C64, tol: Tolerance) -> Option<ComplexMatrix> {
        let shifted = self.shifted(lambda);
        let scale = op_norm(&self.matrix).max(1.0);
        let ktol = Tolerance::new(tol.threshold(scale), 0.0).ok()?;
        let right = kernel_basis(&shifted, ktol);
        let left = kernel_basis(&shifted.adjoint(), ktol);
        if right.ncols() == 0 || right.ncols() != left.ncols() {
            return None;
        }
        let pairing = left.adjoint() * &right;
        let smin = crate::numerics::singular_values(&pairing)
            .last()
            .copied()
            .unwrap_or(0.0);
        if smin < 1e-6 {
            return None;
        }
        let inv = pairing.try_inverse()?;
        Some(&right * inv * left.adjoint())
    }
}

/// Groups eigenvalues within `CLUSTER_TOL * max(1, |λ|)` of each other
/// (single linkage) and returns `(mean, size)` per cluster, largest modulus
/// first.
pub fn cluster(eigs: &[C64]) -> Vec<(C64, usize)> {
    let n = eigs.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let scale = eigs[i].norm().max(eigs[j].norm()).max(1.0);
            if (eigs[i] - eigs[j]).norm() <= CLUSTER_TOL * scale {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a] = b;
                }
            }
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<C64>> = Default::default();
    for i in 0..n {
        let root = find(&mut parent, i);
        groups.entry(root).or_default().push(eigs[i]);
    }
    let mut out: Vec<(C64, usize)> = groups
        .into_values()
        .map(|g| {
            let sum: C64 = g.iter().sum();
            (sum / c64(g.len() as f64, 0.0), g.len())
        })
        .collect();
    out.sort_by(|a, b| b.0.norm().total_cmp(&a.0.norm()));
    out
}

/// Cross-check of the spectral radius: `||phi^k(I)||^{1/k}`.
pub fn spectral_radius_power_estimate(phi: &KrausFamily, k: usize) -> f64 {
    assert!(k >= 1);
    // log-norms of φ^j(I), renormalized each step; the ratio of the k-th to the
    // (k/2)-th norm cancels the constant in ‖φᵏ(I)‖ ≈ C rᵏ
    let half = k / 2;
    let mut x = ComplexMatrix::identity(phi.dim(), phi.dim());
    let mut log_norm = 0.0;
    let mut log_half = 0.0;
    for j in 1..=k {
        x = phi.apply_matrix(&x);
        let norm = x.norm();
        if norm <= 0.0 || !norm.is_finite() {
            return 0.0;
        }
        log_norm += norm.ln();
        x /= c64(norm, 0.0);
        if j == half {
            log_half = log_norm;
        }
    }
    ((log_norm - log_half) / (k - half) as f64).exp()
}
