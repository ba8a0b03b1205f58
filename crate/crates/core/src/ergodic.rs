//! Canonical decompositions `A = B + C` of subinvariant operators, Cesàro
//! limits, the Wold-type splitting driven by `phi^∞(I)`, classification of
//! solutions of `phi(X) <= X`, row-contraction extraction and invariant
//! subspaces read off from solutions.

use serde::Serialize;

use crate::cpmap::{KrausFamily, PERIPHERAL_TOL};
use crate::error::{Error, Result};
use crate::numerics::{
    c64, invariance_residual, is_psd, kernel_basis, loewner_le, op_norm, orthonormalize_hermitian,
    pinv, psd_sqrt, unvec, vec_of, ComplexMatrix, HermitianOperator, IterationOptions, Tolerance,
};
use crate::poisson::{build_kernel, intertwining_residual, kernel_gram, KernelLevel, PoissonKernel};

/// Eigenvalues of `phi^∞(I)` within this distance of 0 or 1 are assigned to
/// the null or unit part of the Wold splitting.
pub const WOLD_EIGEN_TOL: f64 = 1e-7;

/// A subspace counts as invariant when `||(I - P) T P|| <= 1e-8 (1 + max ||A_i||)`.
pub const SUBSPACE_TOL: f64 = 1e-8;

fn subspace_threshold(phi: &KrausFamily) -> f64 {
    let amax = phi.operators().iter().map(op_norm).fold(0.0, f64::max);
    SUBSPACE_TOL * (1.0 + amax)
}

/// `min eig(X - phi(X))`, the subinvariance margin.
pub fn subinvariance_margin(phi: &KrausFamily, x: &HermitianOperator) -> Result<f64> {
    Ok((x - &phi.apply(x)?).min_eigenvalue())
}

fn require_subinvariant(phi: &KrausFamily, a: &HermitianOperator, tol: Tolerance) -> Result<()> {
    let image = phi.apply(a)?;
    if !loewner_le(&image, a, tol) {
        return Err(Error::NotSubinvariant {
            min_eigenvalue: (a - &image).min_eigenvalue(),
        });
    }
    Ok(())
}

/// How a `phi^∞` value was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LimitMethod {
    /// Monotone iteration `phi^k(A)` for subinvariant `A`.
    Monotone,
    /// `unvec(E_1 vec A)` with `E_1` the spectral projection of the
    /// superoperator at eigenvalue 1.
    Spectral,
}

#[derive(Debug, Clone)]
pub struct PhiInfinity {
    pub value: HermitianOperator,
    pub method: LimitMethod,
    pub iterations: usize,
    /// `||phi^k(A) - phi^{k+1}(A)||` per step (empty for the spectral route).
    pub residuals: Vec<f64>,
}

/// Projection of the superoperator onto its eigenvalue-1 eigenspace, `None`
/// when 1 is not an eigenvalue. Errors when the map is not power bounded.
pub fn ergodic_projection(phi: &KrausFamily) -> Result<Option<ComplexMatrix>> {
    let sup = phi.superoperator();
    let peripheral = sup.peripheral();
    if peripheral.radius > 1.0 + PERIPHERAL_TOL {
        return Err(Error::NotPowerBounded(format!(
            "spectral radius {} exceeds 1",
            peripheral.radius
        )));
    }
    if peripheral.radius < 1.0 - PERIPHERAL_TOL {
        return Ok(None);
    }
    if !peripheral.power_bounded() {
        return Err(Error::NotPowerBounded(
            "peripheral eigenvalue with a Jordan block".into(),
        ));
    }
    let at_one = peripheral
        .clusters
        .iter()
        .any(|c| (c.center - c64(1.0, 0.0)).norm() <= crate::cpmap::CLUSTER_TOL);
    if !at_one {
        return Ok(None);
    }
    let tol = Tolerance::new(1e-9, 1e-9).expect("static");
    sup.spectral_projection(c64(1.0, 0.0), tol)
        .map(Some)
        .ok_or_else(|| Error::NotPowerBounded("eigenvalue 1 is not semisimple".into()))
}

/// `unvec(E_1 vec A)`: the Cesàro limit of `phi^k(A)`.
pub fn spectral_limit(phi: &KrausFamily, a: &HermitianOperator) -> Result<HermitianOperator> {
    let d = phi.dim();
    Ok(match ergodic_projection(phi)? {
        None => HermitianOperator::zeros(d),
        Some(e1) => HermitianOperator::symmetrized(unvec(&(e1 * vec_of(a.matrix())), d)),
    })
}

/// `phi^∞(A) = lim phi^k(A)`. Subinvariant inputs are iterated until three
/// consecutive steps fall below `atol + rtol ||A||`; other inputs fall back to
/// the spectral value, labelled as such.
pub fn phi_infinity(
    phi: &KrausFamily,
    a: &HermitianOperator,
    opts: IterationOptions,
) -> Result<PhiInfinity> {
    if a.dim() != phi.dim() {
        return Err(Error::DimensionMismatch {
            expected: phi.dim(),
            found: a.dim(),
        });
    }
    let image = phi.apply(a)?;
    if !loewner_le(&image, a, opts.tol) {
        return Ok(PhiInfinity {
            value: spectral_limit(phi, a)?,
            method: LimitMethod::Spectral,
            iterations: 0,
            residuals: vec![],
        });
    }
    let thr = opts.tol.threshold(a.norm());
    let mut current = a.clone();
    let mut next = image;
    let mut residuals = Vec::new();
    let mut streak = 0;
    for k in 0..opts.max_iter {
        let step = (&current - &next).norm();
        residuals.push(step);
        streak = if step <= thr { streak + 1 } else { 0 };
        current = next;
        if streak >= 3 {
            return Ok(PhiInfinity {
                value: current,
                method: LimitMethod::Monotone,
                iterations: k + 1,
                residuals,
            });
        }
        next = phi.apply(&current)?;
    }
    Err(Error::Diverged {
        iterations: opts.max_iter,
        last_residual: residuals.last().copied().unwrap_or(f64::NAN),
        residuals,
    })
}

/// `A = B + C` with `B = phi^∞(A)` fixed and `C = A - B` pure.
#[derive(Debug, Clone)]
pub struct CanonicalDecomposition {
    pub b: HermitianOperator,
    pub c: HermitianOperator,
    pub iterations: usize,
    pub residuals: Vec<f64>,
    /// `||phi(B) - B||`.
    pub fixed_residual: f64,
    /// `||phi^K(C)||` at the final iterate `K`.
    pub purity_residual: f64,
}

pub fn canonical_decomposition(
    phi: &KrausFamily,
    a: &HermitianOperator,
    opts: IterationOptions,
) -> Result<CanonicalDecomposition> {
    require_subinvariant(phi, a, opts.tol)?;
    let lim = phi_infinity(phi, a, opts)?;
    let b = lim.value;
    let c = a - &b;
    let fixed_residual = (&phi.apply(&b)? - &b).norm();
    let purity_residual = (&phi.power_apply(a, lim.iterations)? - &b).norm();
    Ok(CanonicalDecomposition {
        b,
        c,
        iterations: lim.iterations,
        residuals: lim.residuals,
        fixed_residual,
        purity_residual,
    })
}

/// `(A + phi(A) + ... + phi^{k-1}(A)) / k`.
pub fn cesaro_mean(phi: &KrausFamily, a: &HermitianOperator, k: usize) -> Result<HermitianOperator> {
    if k == 0 {
        return Err(Error::MalformedInput("Cesàro mean needs k >= 1".into()));
    }
    let mut sum = a.clone();
    let mut term = a.clone();
    for _ in 1..k {
        term = phi.apply(&term)?;
        sum = &sum + &term;
    }
    Ok(sum.scale(1.0 / k as f64))
}

#[derive(Debug, Clone)]
pub struct CesaroLimit {
    pub value: HermitianOperator,
    /// Cesàro mean at `k` used as a cross-check.
    pub mean: HermitianOperator,
    pub k: usize,
    /// `||mean - value||`; decays like `1/k`.
    pub gap: f64,
}

/// Limit of the Cesàro means, computed exactly from the spectral projection
/// and cross-checked against the mean at `k = min(max_iter, 2000)`.
pub fn cesaro_limit(
    phi: &KrausFamily,
    a: &HermitianOperator,
    opts: IterationOptions,
) -> Result<CesaroLimit> {
    let value = spectral_limit(phi, a)?;
    let k = opts.max_iter.clamp(1, 2000);
    let mean = cesaro_mean(phi, a, k)?;
    let gap = (&mean - &value).norm();
    Ok(CesaroLimit {
        value,
        mean,
        k,
        gap,
    })
}

/// `H = M ⊕ ker(I - phi^∞(I)) ⊕ ker phi^∞(I)`.
#[derive(Debug, Clone)]
pub struct WoldDecomposition {
    pub basis_m: ComplexMatrix,
    pub basis_unit: ComplexMatrix,
    pub basis_null: ComplexMatrix,
    pub phi_infinity_i: HermitianOperator,
    /// Largest `||(I - P) A_i* P||` over the unit and null parts.
    pub adjoint_invariance_residual: f64,
    /// Largest `||(I - P) A_i P||` over the unit and null parts.
    pub direct_invariance_residual: f64,
    /// `phi^∞(I)` is a projection (equivalently `M = {0}`).
    pub is_projection: bool,
    /// Unit and null parts reduce every `A_i`.
    pub reducing: bool,
}

impl WoldDecomposition {
    pub fn dims(&self) -> (usize, usize, usize) {
        (
            self.basis_m.ncols(),
            self.basis_unit.ncols(),
            self.basis_null.ncols(),
        )
    }
}

pub fn wold_decomposition(phi: &KrausFamily, opts: IterationOptions) -> Result<WoldDecomposition> {
    let d = phi.dim();
    let phi_i = phi.phi_identity();
    if !phi.is_contractive(opts.tol) {
        return Err(Error::NotContractive {
            max_eigenvalue: phi_i.max_eigenvalue(),
        });
    }
    let lim = phi_infinity(phi, &HermitianOperator::identity(d), opts)?;
    let eig = lim.value.eigen();
    let basis_unit = eig.select(|l| (l - 1.0).abs() <= WOLD_EIGEN_TOL);
    let basis_null = eig.select(|l| l.abs() <= WOLD_EIGEN_TOL);
    let basis_m = eig.select(|l| l.abs() > WOLD_EIGEN_TOL && (l - 1.0).abs() > WOLD_EIGEN_TOL);
    let mut adjoint_res = 0.0_f64;
    let mut direct_res = 0.0_f64;
    for a in phi.operators() {
        let a_adj = a.adjoint();
        for basis in [&basis_unit, &basis_null] {
            adjoint_res = adjoint_res.max(invariance_residual(&a_adj, basis));
            direct_res = direct_res.max(invariance_residual(a, basis));
        }
    }
    let thr = subspace_threshold(phi);
    let is_projection = basis_m.ncols() == 0;
    Ok(WoldDecomposition {
        basis_m,
        basis_unit,
        basis_null,
        phi_infinity_i: lim.value,
        adjoint_invariance_residual: adjoint_res,
        direct_invariance_residual: direct_res,
        is_projection,
        reducing: is_projection && direct_res <= thr && adjoint_res <= thr,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolutionKind {
    Fixed,
    SubinvariantStrict,
    Pure,
    NotASolution,
}

#[derive(Debug, Clone)]
pub struct SolutionClass {
    pub kind: SolutionKind,
    /// Row contraction `B_i` with `A_i C^{1/2} = C^{1/2} B_i`, when extraction
    /// succeeded.
    pub witnesses: Option<RowContraction>,
    pub fixed_residual: f64,
    pub min_eigenvalue: f64,
    /// `min eig(X - phi(X))`.
    pub subinvariance_margin: f64,
    /// `||phi^K(X)||` at the last tested `K`, for subinvariant inputs.
    pub purity_residual: Option<f64>,
    pub purity_iterations: Option<usize>,
}

/// Iterates `phi^k(X)` for PSD subinvariant `X` until its norm falls below
/// the threshold or the sequence stalls at a nonzero limit. Returns the last
/// norm, the iteration count and whether the orbit vanished.
fn purity_iteration(phi: &KrausFamily, x: &HermitianOperator, opts: IterationOptions) -> Result<(f64, usize, bool)> {
    let thr = opts.tol.threshold(x.norm());
    let mut current = x.clone();
    let mut streak = 0;
    for k in 0..=opts.max_iter {
        let norm = current.norm();
        if norm <= thr {
            return Ok((norm, k, true));
        }
        let next = phi.apply(&current)?;
        let step = (&current - &next).norm();
        streak = if step <= thr { streak + 1 } else { 0 };
        current = next;
        if streak >= 3 {
            let norm = current.norm();
            return Ok((norm, k + 1, norm <= thr));
        }
    }
    Ok((current.norm(), opts.max_iter, false))
}

pub fn classify_solution(
    phi: &KrausFamily,
    x: &HermitianOperator,
    opts: IterationOptions,
) -> Result<SolutionClass> {
    let image = phi.apply(x)?;
    let scale = x.norm().max(image.norm());
    let fixed_residual = (&image - x).norm();
    let margin = (x - &image).min_eigenvalue();
    let min_eigenvalue = x.min_eigenvalue();
    let psd = is_psd(x, opts.tol);
    let subinvariant = psd && margin >= -opts.tol.threshold(scale);
    let mut out = SolutionClass {
        kind: SolutionKind::NotASolution,
        witnesses: None,
        fixed_residual,
        min_eigenvalue,
        subinvariance_margin: margin,
        purity_residual: None,
        purity_iterations: None,
    };
    if fixed_residual <= opts.tol.threshold(scale) {
        out.kind = SolutionKind::Fixed;
        if psd {
            out.witnesses = extract_row_contraction(phi, x, ExtractionMode::Equality, opts).ok();
        }
        return Ok(out);
    }
    if !subinvariant {
        return Ok(out);
    }
    let (residual, iterations, vanished) = purity_iteration(phi, x, opts)?;
    out.purity_residual = Some(residual);
    out.purity_iterations = Some(iterations);
    let mode = if vanished {
        out.kind = SolutionKind::Pure;
        ExtractionMode::Pure
    } else {
        out.kind = SolutionKind::SubinvariantStrict;
        ExtractionMode::Inequality
    };
    out.witnesses = extract_row_contraction(phi, x, mode, opts).ok();
    Ok(out)
}

/// Real-linear basis of the Hermitian fixed points `{X = X*: phi(X) = X}`,
/// orthonormal for `Re tr(X* Y)`.
pub fn fixed_point_space(phi: &KrausFamily, tol: Tolerance) -> Vec<HermitianOperator> {
    let d = phi.dim();
    let sup = phi.superoperator();
    let shifted = sup.matrix() - ComplexMatrix::identity(d * d, d * d);
    let scale = op_norm(sup.matrix()).max(1.0);
    let ktol = Tolerance::new(tol.threshold(scale).max(1e-9 * scale), 0.0).expect("finite");
    let kernel = kernel_basis(&shifted, ktol);
    let mut family = Vec::with_capacity(2 * kernel.ncols());
    for j in 0..kernel.ncols() {
        let x = unvec(&kernel.column(j).into_owned(), d);
        let xa = x.adjoint();
        family.push((&x + &xa) * c64(0.5, 0.0));
        family.push((&x - &xa) * c64(0.0, -0.5));
    }
    orthonormalize_hermitian(&family, Tolerance::new(1e-8, 0.0).expect("static"))
        .into_iter()
        .map(HermitianOperator::symmetrized)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExtractionMode {
    /// `Σ B_i B_i* <= I`, zero on `ker C`.
    Inequality,
    /// `Σ B_i B_i* = I`; `B_1` is the identity on `ker C`.
    Equality,
    /// As `Inequality`, and additionally `Σ_{|α|=k} B_α B_α* -> 0`.
    Pure,
}

#[derive(Debug, Clone)]
pub struct RowContraction {
    pub ops: Vec<ComplexMatrix>,
    /// `max_i ||A_i C^{1/2} - C^{1/2} B_i||`.
    pub intertwining_residual: f64,
    /// `Σ B_i B_i*`.
    pub row_sum: HermitianOperator,
    /// `||Σ_{|α|=k} B_α B_α*||` at the last `k` (pure mode).
    pub c0_residual: Option<f64>,
    pub c0_iterations: Option<usize>,
}

/// Row contraction `B_i = (C^{1/2})^+ A_i C^{1/2} + Q_i` intertwined with
/// the family through `C^{1/2}`.
pub fn extract_row_contraction(
    phi: &KrausFamily,
    c: &HermitianOperator,
    mode: ExtractionMode,
    opts: IterationOptions,
) -> Result<RowContraction> {
    let d = phi.dim();
    if c.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: c.dim(),
        });
    }
    let tol = opts.tol;
    let image = phi.apply(c)?;
    let scale = c.norm().max(image.norm());
    if !is_psd(c, tol) {
        return Err(Error::Precondition(format!(
            "C is not positive (min eigenvalue {:e})",
            c.min_eigenvalue()
        )));
    }
    match mode {
        ExtractionMode::Equality => {
            let defect = (&image - c).norm();
            if defect > tol.threshold(scale) {
                return Err(Error::Precondition(format!(
                    "equality mode needs phi(C) = C (defect {defect:e})"
                )));
            }
        }
        _ => {
            if !loewner_le(&image, c, tol) {
                return Err(Error::NotSubinvariant {
                    min_eigenvalue: (c - &image).min_eigenvalue(),
                });
            }
        }
    }
    let s = psd_sqrt(c, tol)?;
    let s_pinv = pinv(s.matrix(), tol);
    let ker = kernel_basis(s.matrix(), tol);
    let p_ker = &ker * ker.adjoint();
    let mut ops: Vec<ComplexMatrix> = phi
        .operators()
        .iter()
        .map(|a| &s_pinv * a * s.matrix())
        .collect();
    if mode == ExtractionMode::Equality {
        ops[0] += &p_ker;
    }
    let mut residual = 0.0_f64;
    for (a, b) in phi.operators().iter().zip(&ops) {
        residual = residual.max(op_norm(&(a * s.matrix() - s.matrix() * b)));
    }
    let amax = phi.operators().iter().map(op_norm).fold(0.0, f64::max);
    let limit = 1e-8 * (1.0 + amax) * (1.0 + s.norm());
    if residual > limit {
        return Err(Error::ExtractionFailed { residual });
    }
    let family = KrausFamily::new(ops.clone())?;
    let row_sum = family.phi_identity();
    let id = HermitianOperator::identity(d);
    let row_ok = match mode {
        ExtractionMode::Equality => (&row_sum - &id).norm() <= 1e-8,
        _ => row_sum.max_eigenvalue() <= 1.0 + 1e-8,
    };
    if !row_ok {
        return Err(Error::ExtractionFailed {
            residual: (&row_sum - &id).norm(),
        });
    }
    let (c0_residual, c0_iterations) = if mode == ExtractionMode::Pure {
        let (norm, k, vanished) = purity_iteration(&family, &id, opts)?;
        if !vanished {
            return Err(Error::NotPure {
                residual: norm,
                iterations: k,
            });
        }
        (Some(norm), Some(k))
    } else {
        (None, None)
    };
    Ok(RowContraction {
        ops,
        intertwining_residual: residual,
        row_sum,
        c0_residual,
        c0_iterations,
    })
}

#[derive(Debug, Clone)]
pub struct PureKernelReport {
    pub kernel: PoissonKernel,
    /// `||K*K - C||`.
    pub gram_residual: f64,
    pub tail_bound: f64,
    pub intertwining_residual: f64,
    pub passed: bool,
}

/// For a pure solution `C`, builds the `r = 1` Poisson kernel and checks
/// `K*K = C` up to the truncation tail and `K A_i* = (S_i* ⊗ I) K`.
pub fn pure_solution_kernel_check(
    phi: &KrausFamily,
    c: &HermitianOperator,
    level: usize,
    opts: IterationOptions,
) -> Result<PureKernelReport> {
    let class = classify_solution(phi, c, opts)?;
    let zero = c.norm() <= opts.tol.atol;
    if class.kind != SolutionKind::Pure && !zero {
        return Err(Error::NotPure {
            residual: class.purity_residual.unwrap_or(f64::NAN),
            iterations: class.purity_iterations.unwrap_or(0),
        });
    }
    let kernel = build_kernel(phi, c, 1.0, KernelLevel::Fixed(level), opts)?;
    let gram = kernel_gram(&kernel);
    let gram_residual = (&gram - c).norm();
    let intertwining = intertwining_residual(&kernel);
    let scale = 1.0 + c.norm();
    let passed = gram_residual <= kernel.tail_bound + 1e-10 * scale
        && intertwining <= 1e-11 * (1.0 + kernel.norm());
    Ok(PureKernelReport {
        tail_bound: kernel.tail_bound,
        kernel,
        gram_residual,
        intertwining_residual: intertwining,
        passed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SubspaceSource {
    KerX,
    KerB,
    KerC,
}

/// A subspace read off a solution: `kernel` is invariant under every `A_i*`
/// and its orthogonal complement `invariant` under every `A_i`.
#[derive(Debug, Clone)]
pub struct CertifiedSubspace {
    pub source: SubspaceSource,
    pub kernel: ComplexMatrix,
    pub invariant: ComplexMatrix,
    /// `max_i ||(I - P) A_i P||` for `P` onto `invariant`.
    pub residual: f64,
}

#[derive(Debug, Clone, Default)]
pub struct InvariantSubspaces {
    pub subspaces: Vec<CertifiedSubspace>,
    /// Nontrivial candidates whose residual exceeded the threshold.
    pub rejected: Vec<(SubspaceSource, f64)>,
}

/// Eigenvectors of `h` split at `|λ| <= thr` into (kernel, range).
fn split_kernel(h: &HermitianOperator, thr: f64) -> (ComplexMatrix, ComplexMatrix) {
    let e = h.eigen();
    (e.select(|l| l.abs() <= thr), e.select(|l| l.abs() > thr))
}

/// Nontrivial invariant subspaces from `ker X` and from the kernels of the
/// canonical parts `B`, `C` of `X`.
pub fn invariant_subspaces_from_solution(
    phi: &KrausFamily,
    x: &HermitianOperator,
    opts: IterationOptions,
) -> Result<InvariantSubspaces> {
    if !is_psd(x, opts.tol) {
        return Err(Error::NotPsd {
            min_eigenvalue: x.min_eigenvalue(),
        });
    }
    let decomposition = canonical_decomposition(phi, x, opts)?;
    let d = phi.dim();
    let thr_eig = 1e-8 * (1.0 + x.norm());
    let thr = subspace_threshold(phi);
    let mut out = InvariantSubspaces::default();
    for (source, h) in [
        (SubspaceSource::KerX, x),
        (SubspaceSource::KerB, &decomposition.b),
        (SubspaceSource::KerC, &decomposition.c),
    ] {
        let (kernel, invariant) = split_kernel(h, thr_eig);
        if kernel.ncols() == 0 || kernel.ncols() == d {
            continue;
        }
        let residual = phi
            .operators()
            .iter()
            .map(|a| invariance_residual(a, &invariant))
            .fold(0.0, f64::max);
        if residual <= thr {
            out.subspaces.push(CertifiedSubspace {
                source,
                kernel,
                invariant,
                residual,
            });
        } else {
            out.rejected.push((source, residual));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProjectionVerdict {
    Reducing,
    Invariant,
    Neither,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProjectionInvariance {
    pub verdict: ProjectionVerdict,
    /// `min eig(P - phi(P))`.
    pub order_margin: f64,
    /// `||phi(P) - P||`.
    pub fixed_defect: f64,
    /// `max_i ||(I - P) A_i P||`.
    pub direct_residual: f64,
    /// `max_i ||(I - P) A_i* P||`.
    pub adjoint_residual: f64,
    /// The verdict from `phi(P)` agrees with the direct subspace test.
    pub agrees: bool,
}

/// For unital `phi`, range `P` is invariant under every `A_i` iff
/// `phi(P) <= P`, and reducing iff `phi(P) = P`.
pub fn projection_invariance_test(
    phi: &KrausFamily,
    p: &HermitianOperator,
    tol: Tolerance,
) -> Result<ProjectionInvariance> {
    if !phi.is_unital(tol) {
        return Err(Error::Precondition(format!(
            "map is not unital (||phi(I) - I|| = {:e})",
            phi.unital_defect()
        )));
    }
    let idem = (p.matrix() * p.matrix() - p.matrix()).norm();
    if idem > 1e-8 * (1.0 + p.norm()) {
        return Err(Error::Precondition(format!(
            "P is not idempotent (||P^2 - P|| = {idem:e})"
        )));
    }
    let image = phi.apply(p)?;
    let diff = p - &image;
    let order_margin = diff.min_eigenvalue();
    let fixed_defect = diff.norm();
    let basis = p.eigen().select(|l| l > 0.5);
    let direct_residual = phi
        .operators()
        .iter()
        .map(|a| invariance_residual(a, &basis))
        .fold(0.0, f64::max);
    let adjoint_residual = phi
        .operators()
        .iter()
        .map(|a| invariance_residual(&a.adjoint(), &basis))
        .fold(0.0, f64::max);
    let t = 1e-8;
    let verdict = if fixed_defect <= t {
        ProjectionVerdict::Reducing
    } else if order_margin >= -t {
        ProjectionVerdict::Invariant
    } else {
        ProjectionVerdict::Neither
    };
    let thr = subspace_threshold(phi);
    let direct = if direct_residual <= thr && adjoint_residual <= thr {
        ProjectionVerdict::Reducing
    } else if direct_residual <= thr {
        ProjectionVerdict::Invariant
    } else {
        ProjectionVerdict::Neither
    };
    Ok(ProjectionInvariance {
        verdict,
        order_margin,
        fixed_defect,
        direct_residual,
        adjoint_residual,
        agrees: verdict == direct,
    })
}

#[derive(Debug, Clone)]
pub struct UnitEigenspaceCheck {
    /// Orthonormal basis of `{h: X h = h}`.
    pub basis: ComplexMatrix,
    /// `max_i ||(I - P) A_i* P||`.
    pub residual: f64,
    pub invariant: bool,
}

/// For `0 <= X <= I` with `||X|| = 1` and `phi(X) >= X`, the eigenspace of
/// `X` at 1 is invariant under every `A_i*`.
pub fn unit_eigenspace_check(
    phi: &KrausFamily,
    x: &HermitianOperator,
    tol: Tolerance,
) -> Result<UnitEigenspaceCheck> {
    let e = x.eigen();
    let t = tol.threshold(1.0).max(1e-9);
    if e.min() < -t || e.max() > 1.0 + t || (e.max() - 1.0).abs() > t {
        return Err(Error::Precondition(
            "X must satisfy 0 <= X <= I with ||X|| = 1".into(),
        ));
    }
    let image = phi.apply(x)?;
    if !loewner_le(x, &image, tol) {
        return Err(Error::Precondition("phi(X) >= X fails".into()));
    }
    let basis = e.select(|l| (l - 1.0).abs() <= 1e-8);
    let residual = phi
        .operators()
        .iter()
        .map(|a| invariance_residual(&a.adjoint(), &basis))
        .fold(0.0, f64::max);
    Ok(UnitEigenspaceCheck {
        invariant: residual <= subspace_threshold(phi),
        basis,
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::{random_family, random_psd, random_unitary};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn diag(v: &[f64]) -> HermitianOperator {
        HermitianOperator::from_diagonal(v)
    }

    fn m2(a: [[f64; 2]; 2]) -> ComplexMatrix {
        ComplexMatrix::from_row_slice(
            2,
            2,
            &[c64(a[0][0], 0.0), c64(a[0][1], 0.0), c64(a[1][0], 0.0), c64(a[1][1], 0.0)],
        )
    }

    fn half_diag() -> KrausFamily {
        KrausFamily::single(diag(&[1.0, 0.5]).into_matrix()).unwrap()
    }

    fn pauli_x() -> KrausFamily {
        KrausFamily::single(m2([[0.0, 1.0], [1.0, 0.0]])).unwrap()
    }

    fn close(a: &HermitianOperator, b: &HermitianOperator, eps: f64) -> bool {
        (a - b).norm() <= eps
    }

    #[test]
    fn phi_infinity_examples() {
        let opts = IterationOptions::default();
        let lim = phi_infinity(&half_diag(), &HermitianOperator::identity(2), opts).unwrap();
        assert_eq!(lim.method, LimitMethod::Monotone);
        assert!(close(&lim.value, &diag(&[1.0, 0.0]), 1e-9));
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let u = KrausFamily::single(random_unitary(&mut rng, 3)).unwrap();
        let lim = phi_infinity(&u, &HermitianOperator::identity(3), opts).unwrap();
        assert!(close(&lim.value, &HermitianOperator::identity(3), 1e-12));
    }

    #[test]
    fn phi_infinity_matches_spectral_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            // unitary block plus a strict contraction
            let u = random_unitary(&mut rng, 2);
            let t = random_family(&mut rng, 2, 1, 0.5).operator(0).clone();
            let a = crate::numerics::block_diag(&u, &t);
            let phi = KrausFamily::single(a).unwrap();
            let lim = phi_infinity(&phi, &HermitianOperator::identity(4), IterationOptions::default()).unwrap();
            let oracle = spectral_limit(&phi, &HermitianOperator::identity(4)).unwrap();
            assert!(close(&lim.value, &oracle, 1e-8));
        }
    }

    #[test]
    fn spectral_fallback_for_non_subinvariant_input() {
        let x = diag(&[1.0, -1.0]);
        let lim = phi_infinity(&pauli_x(), &x, IterationOptions::default()).unwrap();
        assert_eq!(lim.method, LimitMethod::Spectral);
        assert!(lim.value.norm() < 1e-9);
    }

    #[test]
    fn phi_infinity_reports_divergence() {
        let phi = KrausFamily::single(diag(&[1.0, 0.9999]).into_matrix()).unwrap();
        let opts = IterationOptions {
            max_iter: 50,
            tol: Tolerance::default(),
        };
        let err = phi_infinity(&phi, &HermitianOperator::identity(2), opts).unwrap_err();
        match err {
            Error::Diverged { residuals, .. } => assert_eq!(residuals.len(), 50),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn canonical_decomposition_examples() {
        let opts = IterationOptions::default();
        let dec = canonical_decomposition(&half_diag(), &HermitianOperator::identity(2), opts).unwrap();
        assert!(close(&dec.b, &diag(&[1.0, 0.0]), 1e-9));
        assert!(close(&dec.c, &diag(&[0.0, 1.0]), 1e-9));
        let fixed = canonical_decomposition(&pauli_x(), &diag(&[2.0, 2.0]), opts).unwrap();
        assert!(fixed.c.norm() < 1e-12);
        let pure = KrausFamily::single(diag(&[0.5, 0.5]).into_matrix()).unwrap();
        let a = diag(&[1.0, 3.0]);
        let dec = canonical_decomposition(&pure, &a, opts).unwrap();
        assert!(dec.b.norm() < 1e-9);
        assert!(close(&dec.c, &a, 1e-9));
        assert!(canonical_decomposition(&pauli_x(), &diag(&[1.0, 0.0]), opts).is_err());
    }

    #[test]
    fn canonical_decomposition_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let opts = IterationOptions::default();
        for _ in 0..5 {
            let u = random_unitary(&mut rng, 2);
            let t = random_family(&mut rng, 2, 1, 0.6).operator(0).clone();
            let phi = KrausFamily::single(crate::numerics::block_diag(&u, &t)).unwrap();
            let a = HermitianOperator::identity(4);
            let dec = canonical_decomposition(&phi, &a, opts).unwrap();
            let again_b = canonical_decomposition(&phi, &dec.b, opts).unwrap();
            assert!(close(&again_b.b, &dec.b, 1e-9) && again_b.c.norm() < 1e-9);
            let again_c = canonical_decomposition(&phi, &dec.c, opts).unwrap();
            assert!(again_c.b.norm() < 1e-9 && close(&again_c.c, &dec.c, 1e-9));
        }
    }

    #[test]
    fn cesaro_means() {
        let x = diag(&[2.0, 5.0]);
        let m = cesaro_mean(&pauli_x(), &diag(&[3.5, 3.5]), 7).unwrap();
        assert!(close(&m, &diag(&[3.5, 3.5]), 1e-12));
        let lim = cesaro_limit(&half_diag(), &HermitianOperator::identity(2), IterationOptions::default()).unwrap();
        assert!(close(&lim.value, &diag(&[1.0, 0.0]), 1e-10));
        // partial geometric sums: (1 - 4^{-k}) / (k (1 - 1/4))
        let k = 10;
        let m = cesaro_mean(&half_diag(), &HermitianOperator::identity(2), k).unwrap();
        let expect = (1.0 - 0.25f64.powi(k as i32)) / (k as f64 * 0.75);
        assert!(close(&m, &diag(&[1.0, expect]), 1e-12));
        let pure = KrausFamily::single(diag(&[0.5, 0.1]).into_matrix()).unwrap();
        let lim = cesaro_limit(&pure, &x, IterationOptions::default()).unwrap();
        assert!(lim.value.norm() < 1e-12);
    }

    #[test]
    fn wold_examples() {
        let opts = IterationOptions::default();
        let w = wold_decomposition(&half_diag(), opts).unwrap();
        assert_eq!(w.dims(), (0, 1, 1));
        assert!(w.is_projection && w.reducing);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let u = KrausFamily::single(random_unitary(&mut rng, 3)).unwrap();
        assert_eq!(wold_decomposition(&u, opts).unwrap().dims(), (0, 3, 0));
        // phi^∞(I) = diag(1, c^2) has an eigenvalue inside (0, 1)
        let c = 0.6;
        let a1 = m2([[1.0, 0.0], [0.0, 0.0]]);
        let a2 = m2([[0.0, 0.0], [c, 0.0]]);
        let phi = KrausFamily::new(vec![a1, a2]).unwrap();
        let w = wold_decomposition(&phi, opts).unwrap();
        assert_eq!(w.dims(), (1, 1, 0));
        assert!(!w.is_projection);
        let three = KrausFamily::single(diag(&[1.0, 0.9, 0.5]).into_matrix()).unwrap();
        assert_eq!(wold_decomposition(&three, opts).unwrap().dims(), (0, 1, 2));
        let big = KrausFamily::single(diag(&[2.0, 1.0]).into_matrix()).unwrap();
        assert!(matches!(wold_decomposition(&big, opts), Err(Error::NotContractive { .. })));
    }

    #[test]
    fn solution_classes() {
        let opts = IterationOptions::default();
        let phi = half_diag();
        let b = phi_infinity(&phi, &HermitianOperator::identity(2), opts).unwrap().value;
        assert_eq!(classify_solution(&phi, &b, opts).unwrap().kind, SolutionKind::Fixed);
        let pure = KrausFamily::single(diag(&[0.5, 0.3]).into_matrix()).unwrap();
        let c = classify_solution(&pure, &HermitianOperator::identity(2), opts).unwrap();
        assert_eq!(c.kind, SolutionKind::Pure);
        assert!(c.witnesses.is_some());
        let c = classify_solution(&phi, &HermitianOperator::identity(2), opts).unwrap();
        assert_eq!(c.kind, SolutionKind::SubinvariantStrict);
        let c = classify_solution(&pauli_x(), &HermitianOperator::identity(2), opts).unwrap();
        assert_eq!(c.kind, SolutionKind::Fixed);
        let c = classify_solution(&pauli_x(), &diag(&[1.0, 0.0]), opts).unwrap();
        assert_eq!(c.kind, SolutionKind::NotASolution);
    }

    #[test]
    fn fixed_point_spaces() {
        let tol = Tolerance::default();
        let fp = fixed_point_space(&pauli_x(), tol);
        assert_eq!(fp.len(), 2);
        let x = m2([[0.0, 1.0], [1.0, 0.0]]);
        let basis: Vec<ComplexMatrix> = fp.iter().map(|h| h.matrix().clone()).collect();
        // I and X lie in the span
        for target in [ComplexMatrix::identity(2, 2), x] {
            let mut rest = target.clone();
            for b in &basis {
                let coeff = (b.adjoint() * &target).trace().re;
                rest -= b * c64(coeff, 0.0);
            }
            assert!(rest.norm() < 1e-10);
        }
        let half = KrausFamily::single(diag(&[0.5, 0.5]).into_matrix()).unwrap();
        assert!(fixed_point_space(&half, tol).is_empty());
        let u = KrausFamily::single(
            HermitianOperator::from_diagonal(&[1.0, 1.0, 1.0]).into_matrix()
                * ComplexMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
                    c64(1.0, 0.0),
                    c64(0.0, 1.0),
                    c64(-0.6, 0.8),
                ])),
        )
        .unwrap();
        let fp = fixed_point_space(&u, tol);
        assert_eq!(fp.len(), 3);
        for h in &fp {
            let m = h.matrix();
            assert!((m - ComplexMatrix::from_diagonal(&m.diagonal())).norm() < 1e-10);
        }
    }

    #[test]
    fn row_contraction_extraction() {
        let opts = IterationOptions::default();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let phi = random_family(&mut rng, 3, 2, 0.9);
        let rc = extract_row_contraction(&phi, &HermitianOperator::identity(3), ExtractionMode::Inequality, opts).unwrap();
        for (a, b) in phi.operators().iter().zip(&rc.ops) {
            assert!((a - b).norm() < 1e-12);
        }
        // C = diag(1, 0) with A_i upper triangular, so A_i* e_2 ∈ span e_2
        let a1 = m2([[0.5, 0.3], [0.0, 0.2]]);
        let a2 = m2([[0.4, -0.1], [0.0, 0.6]]);
        let phi = KrausFamily::new(vec![a1.clone(), a2.clone()]).unwrap();
        let c = diag(&[1.0, 0.0]);
        for mode in [ExtractionMode::Inequality, ExtractionMode::Pure] {
            let rc = extract_row_contraction(&phi, &c, mode, opts).unwrap();
            assert!((&rc.ops[0] - m2([[0.5, 0.0], [0.0, 0.0]])).norm() < 1e-12);
            assert!((&rc.ops[1] - m2([[0.4, 0.0], [0.0, 0.0]])).norm() < 1e-12);
        }
        // equality for fixed C of a unital map
        let w = crate::random::random_unital_family(&mut rng, 3, 2);
        let rc = extract_row_contraction(&w, &HermitianOperator::identity(3), ExtractionMode::Equality, opts).unwrap();
        assert!((&rc.row_sum - &HermitianOperator::identity(3)).norm() < 1e-10);
        let p = diag(&[1.0, 0.0]);
        let phi = KrausFamily::single(diag(&[1.0, 0.5]).into_matrix()).unwrap();
        let rc = extract_row_contraction(&phi, &p, ExtractionMode::Equality, opts).unwrap();
        assert!((&rc.row_sum - &HermitianOperator::identity(2)).norm() < 1e-12);
    }

    #[test]
    fn extraction_round_trip() {
        let opts = IterationOptions::default();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..5 {
            let phi = random_family(&mut rng, 3, 2, 0.7);
            // C = Σ_k phi^k(R) is subinvariant
            let r = random_psd(&mut rng, 3);
            let mut c = r.clone();
            let mut term = r;
            for _ in 0..200 {
                term = phi.apply(&term).unwrap();
                c = &c + &term;
            }
            let rc = extract_row_contraction(&phi, &c, ExtractionMode::Pure, opts).unwrap();
            let s = psd_sqrt(&c, opts.tol).unwrap();
            let back = s.matrix() * rc.row_sum.matrix() * s.matrix();
            assert!((back - phi.apply(&c).unwrap().into_matrix()).norm() < 1e-10 * (1.0 + c.norm()));
        }
    }

    #[test]
    fn pure_kernel_checks() {
        let opts = IterationOptions::default();
        let a = 0.6;
        let phi = KrausFamily::single(diag(&[a]).into_matrix()).unwrap();
        let rep = pure_solution_kernel_check(&phi, &HermitianOperator::identity(1), 10, opts).unwrap();
        let expect = 1.0 - a.powi(22);
        assert!((kernel_gram(&rep.kernel).matrix()[(0, 0)].re - expect).abs() < 1e-14);
        assert!(rep.passed);
        let rep = pure_solution_kernel_check(&phi, &HermitianOperator::zeros(1), 4, opts).unwrap();
        assert!(rep.passed && rep.kernel.norm() == 0.0);
        assert!(pure_solution_kernel_check(&pauli_x(), &HermitianOperator::identity(2), 3, opts).is_err());
    }

    #[test]
    fn invariant_subspace_examples() {
        let opts = IterationOptions::default();
        let subs = invariant_subspaces_from_solution(&half_diag(), &HermitianOperator::identity(2), opts).unwrap();
        assert!(subs.rejected.is_empty());
        let sources: Vec<SubspaceSource> = subs.subspaces.iter().map(|s| s.source).collect();
        assert_eq!(sources, vec![SubspaceSource::KerB, SubspaceSource::KerC]);
        let ker_b = &subs.subspaces[0].kernel;
        assert!((ker_b.column(0).map(|z| z.norm()) - nalgebra::DVector::from_vec(vec![0.0, 1.0])).norm() < 1e-9);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let u = KrausFamily::single(random_unitary(&mut rng, 3)).unwrap();
        let subs = invariant_subspaces_from_solution(&u, &HermitianOperator::identity(3), opts).unwrap();
        assert!(subs.subspaces.is_empty());
        // ker X for X = diag(1, 0) under a family with A_i* e_2 ∈ span e_2
        let a = m2([[0.5, 0.3], [0.0, 0.2]]);
        let phi = KrausFamily::single(a).unwrap();
        let subs = invariant_subspaces_from_solution(&phi, &diag(&[1.0, 0.0]), opts).unwrap();
        assert_eq!(subs.subspaces[0].source, SubspaceSource::KerX);
    }

    #[test]
    fn projection_invariance_examples() {
        let tol = Tolerance::default();
        let x = pauli_x();
        let id = projection_invariance_test(&x, &HermitianOperator::identity(2), tol).unwrap();
        assert_eq!(id.verdict, ProjectionVerdict::Reducing);
        let s = 0.5f64.sqrt();
        let v = ComplexMatrix::from_column_slice(2, 1, &[c64(s, 0.0), c64(s, 0.0)]);
        let plus = HermitianOperator::projector(&v);
        let r = projection_invariance_test(&x, &plus, tol).unwrap();
        assert_eq!(r.verdict, ProjectionVerdict::Reducing);
        assert!(r.agrees);
        let r = projection_invariance_test(&x, &diag(&[1.0, 0.0]), tol).unwrap();
        assert_eq!(r.verdict, ProjectionVerdict::Neither);
        assert!(r.agrees);
        assert!(projection_invariance_test(&half_diag(), &diag(&[1.0, 0.0]), tol).is_err());
    }

    #[test]
    fn unit_eigenspace_examples() {
        let tol = Tolerance::default();
        let a = m2([[1.0, 0.0], [0.0, 0.5]]);
        let phi = KrausFamily::single(a).unwrap();
        let rep = unit_eigenspace_check(&phi, &diag(&[1.0, 0.0]), tol).unwrap();
        assert!(rep.invariant);
        assert_eq!(rep.basis.ncols(), 1);
    }
}
