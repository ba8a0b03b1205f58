//! *-curvature, α-curvatures, Euler characteristic and the pair
//! `F(phi, D) = (||phi*(I)||, curv_*(phi, D))`.
//!
//! Limits are detected by a plateau that persists for three consecutive
//! indices. On truncated Fock models the sequences are exact only up to the
//! truncation level, so callers that know the level pass it as
//! `exact_level` and the value at that index is reported instead.

use serde::Serialize;

use crate::cpmap::KrausFamily;
use crate::error::{Error, Result};
use crate::numerics::{ComplexMatrix, HermitianOperator, IterationOptions, Tolerance};
use crate::poisson::{build_kernel, kernel_level_gram, subinvariance_check, KernelLevel};

/// `|α - 1| <= BRANCH_TOL` selects the `α = 1` formula.
pub const BRANCH_TOL: f64 = 1e-9;

/// Largest `(d, n)` for which the Poisson-kernel cross-check is run.
const CROSSCHECK_DIM: usize = 8;
const CROSSCHECK_GENERATORS: usize = 3;
const CROSSCHECK_LEVEL: usize = 5;

#[derive(Debug, Clone, Copy)]
pub struct CurvatureOptions {
    pub k_max: usize,
    pub tol: Tolerance,
    /// Report the sequence value at this index instead of searching for a
    /// plateau.
    pub exact_level: Option<usize>,
    pub kernel_crosscheck: bool,
    /// Defect traces above this are reported as infinite curvature.
    pub trace_budget: f64,
}

impl Default for CurvatureOptions {
    fn default() -> Self {
        CurvatureOptions {
            k_max: 2000,
            tol: Tolerance::default(),
            exact_level: None,
            kernel_crosscheck: true,
            trace_budget: 1e12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Gt1,
    Eq1,
    Lt1,
}

impl Branch {
    pub fn of(alpha: f64) -> Branch {
        if (alpha - 1.0).abs() <= BRANCH_TOL {
            Branch::Eq1
        } else if alpha > 1.0 {
            Branch::Gt1
        } else {
            Branch::Lt1
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CurvatureReport {
    pub star_curvature: f64,
    pub infinite: bool,
    pub alpha: f64,
    pub branch: Branch,
    pub sequence: Vec<(usize, f64)>,
    pub converged: bool,
    pub converged_at: Option<usize>,
    pub defect_trace: f64,
    pub defect_rank: usize,
    pub defect_norm: f64,
    /// `max_k |trace K*(P_{<=k} ⊗ I)K - trace(D - phi^{k+1}(D))|` for an
    /// explicit kernel at `r = 1`.
    pub kernel_crosscheck: Option<f64>,
}

impl CurvatureReport {
    /// `curv <= trace(D - phi(D)) <= ||D - phi(D)|| rank(D - phi(D))`.
    pub fn bound_chain_holds(&self, slack: f64) -> bool {
        self.infinite
            || (self.star_curvature <= self.defect_trace + slack
                && self.defect_trace <= self.defect_norm * self.defect_rank as f64 + slack)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EulerReport {
    pub chi: f64,
    pub infinite: bool,
    pub rank_sequence: Vec<(usize, usize)>,
    pub ratios: Vec<(usize, f64)>,
    pub converged: bool,
    pub converged_at: Option<usize>,
    /// `n = 1`: ratios use the denominator `1 + n + ... + n^{k-1} = k`.
    pub single_generator_extension: bool,
    /// `dim M_k = rank K*(P_{<=k} ⊗ I)K` agrees with `rank(D - phi^{k+1}(D))`.
    pub kernel_crosscheck: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FInvariant {
    pub norm_part: f64,
    pub curvature_part: f64,
}

fn require_subinvariant(phi: &KrausFamily, d: &HermitianOperator, tol: Tolerance) -> Result<()> {
    if d.dim() != phi.dim() {
        return Err(Error::DimensionMismatch {
            expected: phi.dim(),
            found: d.dim(),
        });
    }
    if subinvariance_check(phi, d, tol) {
        Ok(())
    } else {
        Err(Error::NotSubinvariant {
            min_eigenvalue: (d - &phi.apply(d)?).min_eigenvalue(),
        })
    }
}

/// Numerical rank of a Hermitian operator from its eigenvalues.
fn hermitian_rank(h: &HermitianOperator, tol: Tolerance) -> usize {
    let values = h.eigen().values;
    let top = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let thr = tol.threshold(top);
    values.iter().filter(|v| v.abs() > thr).count()
}

/// First index ending three consecutive small increments.
fn plateau(seq: &[(usize, f64)], tol: Tolerance) -> Option<usize> {
    let mut streak = 0;
    for w in seq.windows(2) {
        let (_, prev) = w[0];
        let (k, v) = w[1];
        if (v - prev).abs() <= tol.threshold(v.abs()) {
            streak += 1;
            if streak >= 3 {
                return Some(k);
            }
        } else {
            streak = 0;
        }
    }
    None
}

fn settle(seq: &[(usize, f64)], opts: &CurvatureOptions) -> (f64, bool, Option<usize>) {
    if let Some(level) = opts.exact_level {
        if let Some(&(k, v)) = seq.iter().find(|(k, _)| *k == level) {
            return (v, true, Some(k));
        }
    }
    match plateau(seq, opts.tol) {
        Some(k) => {
            let v = seq.iter().find(|(j, _)| *j == k).expect("index in sequence").1;
            (v, true, Some(k))
        }
        None => (seq.last().map(|p| p.1).unwrap_or(0.0), false, None),
    }
}

/// Counts consecutive small increments; the sequence may stop once three
/// have been seen past `min_k`.
struct PlateauWatch {
    tol: Tolerance,
    min_k: usize,
    prev: Option<f64>,
    streak: usize,
}

impl PlateauWatch {
    fn new(tol: Tolerance, min_k: usize) -> Self {
        PlateauWatch {
            tol,
            min_k,
            prev: None,
            streak: 0,
        }
    }

    fn done(&mut self, k: usize, v: f64) -> bool {
        if let Some(p) = self.prev {
            if (v - p).abs() <= self.tol.threshold(v.abs()) {
                self.streak += 1;
            } else {
                self.streak = 0;
            }
        }
        self.prev = Some(v);
        self.streak >= 3 && k >= self.min_k
    }
}

/// Curvature sequence with normalization `alpha`:
/// `gt1`: `(α-1) tr(D - phi^k(D)) / α^k`, `eq1`: `tr phi^k(D - phi(D))`,
/// `lt1`: `(1-α) tr(D - phi^k(D))`, for `k = 1, 2, ...` until a plateau
/// past `min_k` or `k_max`.
fn curvature_sequence(
    phi: &KrausFamily,
    d: &HermitianOperator,
    alpha: f64,
    k_max: usize,
    mut watch: PlateauWatch,
) -> Result<Vec<(usize, f64)>> {
    let trace_d = d.trace();
    let mut seq = Vec::new();
    // Gt1 iterates φ^k(D)/α^k, which stays bounded in trace; Eq1 iterates
    // φ^k(D - φ(D)); Lt1 iterates φ^k(D)
    let branch = Branch::of(alpha);
    let mut current = match branch {
        Branch::Eq1 => d - &phi.apply(d)?,
        _ => d.clone(),
    };
    let mut inv_power = 1.0;
    for k in 1..=k_max {
        current = phi.apply(&current)?;
        let v = match branch {
            Branch::Gt1 => {
                current = current.scale(1.0 / alpha);
                inv_power /= alpha;
                (alpha - 1.0) * (trace_d * inv_power - current.trace())
            }
            Branch::Eq1 => current.trace(),
            Branch::Lt1 => (1.0 - alpha) * (trace_d - current.trace()),
        };
        seq.push((k, v));
        if watch.done(k, v) {
            break;
        }
    }
    Ok(seq)
}

fn small_for_crosscheck(phi: &KrausFamily) -> bool {
    phi.dim() <= CROSSCHECK_DIM && phi.len() <= CROSSCHECK_GENERATORS
}

fn kernel_trace_crosscheck(phi: &KrausFamily, d: &HermitianOperator, tol: Tolerance) -> Option<f64> {
    let opts = IterationOptions { max_iter: 10_000, tol };
    let kernel = build_kernel(phi, d, 1.0, KernelLevel::Fixed(CROSSCHECK_LEVEL), opts).ok()?;
    let mut worst: f64 = 0.0;
    let mut power = phi.apply(d).ok()?;
    for k in 0..=CROSSCHECK_LEVEL {
        let gram = kernel_level_gram(&kernel, k).ok()?;
        worst = worst.max((gram.trace() - (d - &power).trace()).abs());
        power = phi.apply(&power).ok()?;
    }
    Some(worst)
}

fn curvature_with_alpha(
    phi: &KrausFamily,
    d: &HermitianOperator,
    alpha: f64,
    opts: &CurvatureOptions,
) -> Result<CurvatureReport> {
    require_subinvariant(phi, d, opts.tol)?;
    let defect = d - &phi.apply(d)?;
    let defect_trace = defect.trace();
    let defect_rank = hermitian_rank(&defect, opts.tol);
    let defect_norm = defect.norm();
    let branch = Branch::of(alpha);
    if !(defect_trace <= opts.trace_budget) {
        return Ok(CurvatureReport {
            star_curvature: f64::INFINITY,
            infinite: true,
            alpha,
            branch,
            sequence: vec![],
            converged: false,
            converged_at: None,
            defect_trace,
            defect_rank,
            defect_norm,
            kernel_crosscheck: None,
        });
    }
    let k_max = opts.k_max.max(opts.exact_level.unwrap_or(0)).max(1);
    let watch = PlateauWatch::new(opts.tol, opts.exact_level.unwrap_or(0));
    let sequence = curvature_sequence(phi, d, alpha, k_max, watch)?;
    let (value, converged, converged_at) = settle(&sequence, opts);
    let infinite = !value.is_finite();
    let kernel_crosscheck = (opts.kernel_crosscheck && small_for_crosscheck(phi))
        .then(|| kernel_trace_crosscheck(phi, d, opts.tol))
        .flatten();
    Ok(CurvatureReport {
        star_curvature: if infinite { f64::INFINITY } else { value },
        infinite,
        alpha,
        branch,
        sequence,
        converged,
        converged_at,
        defect_trace,
        defect_rank,
        defect_norm,
        kernel_crosscheck,
    })
}

/// `curv_*(phi, D)` with `α = ||phi*(I)||`.
pub fn star_curvature(
    phi: &KrausFamily,
    d: &HermitianOperator,
    opts: &CurvatureOptions,
) -> Result<CurvatureReport> {
    curvature_with_alpha(phi, d, phi.adjoint_identity().norm(), opts)
}

/// `α` is admissible when `trace phi(X) <= α trace X` for every `X >= 0`.
/// Since `trace phi(X) = trace(X phi*(I))`, the extreme case is the top
/// eigenvector of `phi*(I)`.
pub fn alpha_admissible(phi: &KrausFamily, alpha: f64, tol: Tolerance) -> bool {
    phi.adjoint_identity().max_eigenvalue() <= alpha + tol.threshold(alpha)
}

pub fn alpha_curvature(
    phi: &KrausFamily,
    d: &HermitianOperator,
    alpha: f64,
    opts: &CurvatureOptions,
) -> Result<CurvatureReport> {
    if !(alpha > 0.0) || !alpha_admissible(phi, alpha, opts.tol) {
        return Err(Error::Precondition(format!(
            "alpha = {alpha} is not admissible: ||phi*(I)|| = {}",
            phi.adjoint_identity().norm()
        )));
    }
    curvature_with_alpha(phi, d, alpha, opts)
}

/// `max ||phi(X) - psi(X)|| / ||X||` over seeded random probes `X`.
fn map_gap(phi: &KrausFamily, psi: &KrausFamily) -> f64 {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5eed);
    (0..4)
        .map(|_| {
            let x = crate::random::ginibre(&mut rng, phi.dim(), phi.dim());
            crate::numerics::op_norm(&(phi.apply_matrix(&x) - psi.apply_matrix(&x))) / crate::numerics::op_norm(&x)
        })
        .fold(0.0, f64::max)
}

/// `||Σ T_i* T_i||` for each alternative Kraus representation of `phi`; every
/// alternate must define the same map.
pub fn lambda_candidates(phi: &KrausFamily, alternates: &[KrausFamily], tol: Tolerance) -> Result<Vec<f64>> {
    let scale = phi.phi_identity().norm();
    let mut out = vec![phi.adjoint_identity().norm()];
    for t in alternates {
        if t.dim() != phi.dim() {
            return Err(Error::DimensionMismatch {
                expected: phi.dim(),
                found: t.dim(),
            });
        }
        let gap = map_gap(phi, t);
        if gap > tol.threshold(scale) {
            return Err(Error::Precondition(format!(
                "alternate Kraus family defines a different map (gap {gap:e})"
            )));
        }
        out.push(t.adjoint_identity().norm());
    }
    Ok(out)
}

/// `χ(phi, D) = lim (n-1) rank(D - phi^k(D)) / n^k`.
pub fn euler_characteristic(
    phi: &KrausFamily,
    d: &HermitianOperator,
    opts: &CurvatureOptions,
) -> Result<EulerReport> {
    require_subinvariant(phi, d, opts.tol)?;
    let n = phi.len();
    let k_max = opts.k_max.max(opts.exact_level.unwrap_or(0)).max(1);
    let mut rank_sequence = Vec::new();
    let mut ratios = Vec::new();
    let mut power = d.clone();
    let nf = n as f64;
    let mut watch = PlateauWatch::new(opts.tol, opts.exact_level.unwrap_or(0));
    for k in 1..=k_max {
        power = phi.apply(&power)?;
        let r = hermitian_rank(&(d - &power), opts.tol);
        rank_sequence.push((k, r));
        let ratio = if n == 1 {
            r as f64 / k as f64
        } else {
            (nf - 1.0) * r as f64 / nf.powi(k as i32)
        };
        ratios.push((k, ratio));
        if watch.done(k, ratio) {
            break;
        }
    }
    let (chi, converged, converged_at) = settle(&ratios, opts);
    let kernel_crosscheck = (opts.kernel_crosscheck && small_for_crosscheck(phi))
        .then(|| kernel_rank_crosscheck(phi, d, opts.tol))
        .flatten();
    Ok(EulerReport {
        chi,
        infinite: false,
        rank_sequence,
        ratios,
        converged,
        converged_at,
        single_generator_extension: n == 1,
        kernel_crosscheck,
    })
}

fn kernel_rank_crosscheck(phi: &KrausFamily, d: &HermitianOperator, tol: Tolerance) -> Option<bool> {
    let opts = IterationOptions { max_iter: 10_000, tol };
    let kernel = build_kernel(phi, d, 1.0, KernelLevel::Fixed(CROSSCHECK_LEVEL), opts).ok()?;
    let mut power = phi.apply(d).ok()?;
    let mut agree = true;
    for k in 0..=CROSSCHECK_LEVEL {
        let gram = kernel_level_gram(&kernel, k).ok()?;
        agree &= hermitian_rank(&gram, tol) == hermitian_rank(&(d - &power), tol);
        power = phi.apply(&power).ok()?;
    }
    Some(agree)
}

pub fn f_invariant(phi: &KrausFamily, d: &HermitianOperator, opts: &CurvatureOptions) -> Result<FInvariant> {
    let report = star_curvature(phi, d, opts)?;
    Ok(FInvariant {
        norm_part: report.alpha,
        curvature_part: report.star_curvature,
    })
}

/// `rank(I - phi(I))` for a contractive `phi`.
pub fn module_rank(phi: &KrausFamily, tol: Tolerance) -> Result<usize> {
    let defect = &HermitianOperator::identity(phi.dim()) - &phi.phi_identity();
    if defect.min_eigenvalue() < -tol.threshold(1.0) {
        return Err(Error::NotContractive {
            max_eigenvalue: phi.phi_identity().max_eigenvalue(),
        });
    }
    Ok(hermitian_rank(&defect, tol))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModuleVerdict {
    Consistent,
    Inconsistent,
}

#[derive(Debug, Clone, Serialize)]
pub struct FreeModuleReport {
    pub verdict: ModuleVerdict,
    pub generators: usize,
    pub rank: usize,
    pub f_invariant: FInvariant,
    /// Largest gap between the curvature sequence and the free-module
    /// values `rank (1 - n^{-k})` over the compared indices.
    pub sequence_gap: f64,
    /// `trace(I - phi^k(I)) / n^k`, which tends to 0 when
    /// `||phi*(I)|| < n`.
    pub n_normalized: Vec<(usize, f64)>,
}

/// Compares `F(phi, I)` with `(n, rank)`. On truncations the comparison is
/// made index by index up to `exact_level`.
pub fn free_module_check(phi: &KrausFamily, opts: &CurvatureOptions) -> Result<FreeModuleReport> {
    let tol = opts.tol;
    let m = module_rank(phi, tol)?;
    let d = phi.dim();
    let id = HermitianOperator::identity(d);
    let mut power = id.clone();
    let mut pure = false;
    for _ in 0..opts.k_max.max(1) {
        power = phi.apply(&power)?;
        if power.norm() <= tol.threshold(1.0) {
            pure = true;
            break;
        }
    }
    if !pure {
        return Err(Error::NotPure {
            residual: power.norm(),
            iterations: opts.k_max,
        });
    }
    let n = phi.len();
    let report = star_curvature(phi, &id, opts)?;
    let nf = n as f64;
    let expected = |k: usize| {
        if n == 1 {
            m as f64
        } else {
            m as f64 * (1.0 - nf.powi(-(k as i32)))
        }
    };
    let upto = opts.exact_level.or(report.converged_at).unwrap_or(0);
    let sequence_gap = report
        .sequence
        .iter()
        .filter(|(k, _)| *k <= upto)
        .map(|&(k, v)| (v - expected(k)).abs())
        .fold(0.0, f64::max);
    let mut power = id.clone();
    let mut n_normalized = Vec::new();
    for k in 1..=upto.max(1) {
        power = phi.apply(&power)?;
        n_normalized.push((k, (d as f64 - power.trace()) / nf.powi(k as i32)));
    }
    let alpha = report.alpha;
    let slack = 1e-9 * (1.0 + m as f64);
    let norm_ok = (alpha - nf).abs() <= 1e-9 * nf;
    let limit_ok = if opts.exact_level.is_some() {
        sequence_gap <= slack
    } else {
        report.converged && (report.star_curvature - m as f64).abs() <= 1e-6 * (1.0 + m as f64)
    };
    Ok(FreeModuleReport {
        verdict: if norm_ok && limit_ok {
            ModuleVerdict::Consistent
        } else {
            ModuleVerdict::Inconsistent
        },
        generators: n,
        rank: m,
        f_invariant: FInvariant {
            norm_part: alpha,
            curvature_part: report.star_curvature,
        },
        sequence_gap,
        n_normalized,
    })
}

#[derive(Debug, Clone)]
pub struct ScaledFamily {
    pub family: KrausFamily,
    /// `max ||phi_new(X) - phi_T(X)|| / ||X||` over random probes.
    pub map_residual: f64,
    /// `||phi_new*(I) - phi_T*(I)||`.
    pub adjoint_residual: f64,
    pub f_base: FInvariant,
    pub f_scaled: FInvariant,
}

/// `(T_1, ..., T_{m-1}, c T_m, ..., c T_m)` with `n - m + 1` copies of
/// `c T_m`, `c = (n - m + 1)^{-1/2}`.
pub fn scale_construction(
    base: &KrausFamily,
    n_target: usize,
    d: &HermitianOperator,
    opts: &CurvatureOptions,
) -> Result<ScaledFamily> {
    let m = base.len();
    if m < 2 || m + 1 > n_target {
        return Err(Error::Precondition(format!(
            "need 2 <= m <= n - 1, found m = {m}, n = {n_target}"
        )));
    }
    if !base.is_contractive(opts.tol) {
        return Err(Error::NotContractive {
            max_eigenvalue: base.phi_identity().max_eigenvalue(),
        });
    }
    let copies = n_target - m + 1;
    let c = nalgebra::Complex::new(1.0 / (copies as f64).sqrt(), 0.0);
    let mut ops: Vec<ComplexMatrix> = base.operators()[..m - 1].to_vec();
    let last = base.operator(m - 1) * c;
    ops.extend(std::iter::repeat_n(last, copies));
    let family = KrausFamily::new(ops)?;
    let map_residual = map_gap(&family, base);
    let adjoint_residual = (&family.adjoint_identity() - &base.adjoint_identity()).norm();
    let f_base = f_invariant(base, d, opts)?;
    let f_scaled = f_invariant(&family, d, opts)?;
    Ok(ScaledFamily {
        family,
        map_residual,
        adjoint_residual,
        f_base,
        f_scaled,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct PropertyCheck {
    pub name: &'static str,
    pub lhs: f64,
    pub rhs: f64,
    pub passed: bool,
}

impl PropertyCheck {
    fn eq(name: &'static str, lhs: f64, rhs: f64, rel: f64) -> Self {
        PropertyCheck {
            name,
            lhs,
            rhs,
            passed: (lhs - rhs).abs() <= rel * (1.0 + lhs.abs().max(rhs.abs())),
        }
    }

    fn le(name: &'static str, lhs: f64, rhs: f64, slack: f64) -> Self {
        PropertyCheck {
            name,
            lhs,
            rhs,
            passed: lhs <= rhs + slack,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CurvaturePropertiesReport {
    pub checks: Vec<PropertyCheck>,
}

impl CurvaturePropertiesReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Direct-sum rule, linearity in `D`, the bound chain and invariance under
/// passing to the pure part of `D`.
pub fn curvature_properties_check(
    phi1: &KrausFamily,
    d1: &HermitianOperator,
    phi2: &KrausFamily,
    d2: &HermitianOperator,
    c1: f64,
    c2: f64,
    opts: &CurvatureOptions,
) -> Result<CurvaturePropertiesReport> {
    if c1 < 0.0 || c2 < 0.0 {
        return Err(Error::Precondition("coefficients must be nonnegative".into()));
    }
    let rel = 1e-8;
    let mut checks = Vec::new();
    let k1 = star_curvature(phi1, d1, opts)?;
    let k2 = star_curvature(phi2, d2, opts)?;

    // curv(φ₁⊕φ₂) is the sum of both parts normalized by the larger α
    let sum = phi1.direct_sum(phi2);
    let dsum = d1.direct_sum(d2);
    let ks = star_curvature(&sum, &dsum, opts)?;
    let alpha = k1.alpha.max(k2.alpha);
    let a1 = alpha_curvature(phi1, d1, alpha, opts)?;
    let a2 = alpha_curvature(phi2, d2, alpha, opts)?;
    checks.push(PropertyCheck::eq(
        "direct-sum",
        ks.star_curvature,
        a1.star_curvature + a2.star_curvature,
        rel,
    ));

    if phi1.dim() == d2.dim() && subinvariance_check(phi1, d2, opts.tol) {
        let mix = &d1.scale(c1) + &d2.scale(c2);
        let lhs = star_curvature(phi1, &mix, opts)?.star_curvature;
        let other = star_curvature(phi1, d2, opts)?.star_curvature;
        checks.push(PropertyCheck::eq(
            "linearity",
            lhs,
            c1 * k1.star_curvature + c2 * other,
            rel,
        ));
    }

    for k in [&k1, &k2] {
        checks.push(PropertyCheck::le("curvature-trace", k.star_curvature, k.defect_trace, 1e-9));
        checks.push(PropertyCheck::le(
            "trace-rank",
            k.defect_trace,
            k.defect_norm * k.defect_rank as f64,
            1e-9,
        ));
    }

    let iter = IterationOptions {
        max_iter: opts.k_max.max(10_000),
        tol: opts.tol,
    };
    let canon = crate::ergodic::canonical_decomposition(phi1, d1, iter)?;
    let pure = star_curvature(phi1, &canon.c, opts)?;
    checks.push(PropertyCheck::eq(
        "pure-part",
        k1.star_curvature,
        pure.star_curvature,
        rel,
    ));
    Ok(CurvaturePropertiesReport { checks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::build_fock;
    use crate::numerics::c64;
    use crate::random::random_family;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn free(n: usize, level: usize) -> KrausFamily {
        build_fock(n, level, 1 << 20).unwrap().as_kraus_family()
    }

    fn at_level(level: usize) -> CurvatureOptions {
        CurvatureOptions {
            exact_level: Some(level),
            k_max: level + 4,
            ..Default::default()
        }
    }

    #[test]
    fn free_truncation_closed_forms() {
        let phi = free(2, 8);
        let id = HermitianOperator::identity(phi.dim());
        let rep = star_curvature(&phi, &id, &at_level(8)).unwrap();
        assert_eq!(rep.branch, Branch::Gt1);
        assert_eq!(rep.alpha, 2.0);
        for &(j, v) in rep.sequence.iter().filter(|(j, _)| *j <= 8) {
            assert_eq!(v, ((1u64 << j) - 1) as f64 / (1u64 << j) as f64);
        }
        assert_eq!(rep.star_curvature, 1.0 - 1.0 / 256.0);
        assert!(rep.bound_chain_holds(1e-9));
        let chi = euler_characteristic(&phi, &id, &at_level(8)).unwrap();
        assert_eq!(chi.chi, rep.star_curvature);
        for (&(j, r), &(_, v)) in chi.rank_sequence.iter().zip(&chi.ratios).take(8) {
            assert_eq!(r, (1 << j) - 1);
            assert_eq!(v, rep.sequence[j - 1].1);
        }
        assert_eq!(module_rank(&phi, Tolerance::default()).unwrap(), 1);
        let two = phi.direct_sum(&phi);
        let id2 = HermitianOperator::identity(two.dim());
        assert_eq!(module_rank(&two, Tolerance::default()).unwrap(), 2);
        let opts = CurvatureOptions {
            kernel_crosscheck: false,
            ..at_level(8)
        };
        assert_eq!(euler_characteristic(&two, &id2, &opts).unwrap().chi, 2.0 * chi.chi);
        assert_eq!(star_curvature(&two, &id2, &opts).unwrap().star_curvature, 2.0 * rep.star_curvature);
    }

    #[test]
    fn single_shift() {
        let phi = free(1, 9);
        let id = HermitianOperator::identity(10);
        let rep = star_curvature(&phi, &id, &CurvatureOptions::default()).unwrap();
        assert_eq!(rep.branch, Branch::Eq1);
        assert!(rep.converged);
        assert_eq!(rep.star_curvature, 1.0);
        assert!(rep.sequence.iter().all(|&(_, v)| v == 1.0));
        let chi = euler_characteristic(&phi, &id, &at_level(9)).unwrap();
        assert!(chi.single_generator_extension);
        assert_eq!(chi.chi, 1.0);
    }

    #[test]
    fn fixed_points_have_zero_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let u = KrausFamily::single(crate::random::random_unitary(&mut rng, 3)).unwrap();
        let id = HermitianOperator::identity(3);
        let rep = star_curvature(&u, &id, &CurvatureOptions::default()).unwrap();
        assert!(rep.star_curvature.abs() < 1e-12);
        assert!(rep.converged);
        let chi = euler_characteristic(&u, &id, &CurvatureOptions::default()).unwrap();
        assert_eq!(chi.chi, 0.0);
        let f = f_invariant(&u, &id, &CurvatureOptions::default()).unwrap();
        assert!((f.norm_part - 1.0).abs() < 1e-12 && f.curvature_part.abs() < 1e-12);
    }

    #[test]
    fn alpha_curvatures() {
        let phi = free(2, 8);
        let id = HermitianOperator::identity(phi.dim());
        let opts = CurvatureOptions {
            kernel_crosscheck: false,
            ..at_level(8)
        };
        let star = star_curvature(&phi, &id, &opts).unwrap();
        assert_eq!(alpha_curvature(&phi, &id, 2.0, &opts).unwrap().star_curvature, star.star_curvature);
        let three = alpha_curvature(&phi, &id, 3.0, &CurvatureOptions { kernel_crosscheck: false, ..Default::default() }).unwrap();
        assert!(three.converged && three.star_curvature.abs() < 1e-9);
        for &(j, v) in three.sequence.iter().take(8) {
            let expected = 2.0 * (2f64.powi(j as i32) - 1.0) / 3f64.powi(j as i32);
            assert!((v - expected).abs() < 1e-11);
        }
        assert!(alpha_curvature(&phi, &id, 1.5, &opts).is_err());
        let c = lambda_candidates(&phi, &[phi.clone()], Tolerance::default()).unwrap();
        assert_eq!(c, vec![2.0, 2.0]);
    }

    #[test]
    fn free_module_signatures() {
        let phi = free(2, 6);
        let rep = free_module_check(&phi, &at_level(6)).unwrap();
        assert_eq!(rep.verdict, ModuleVerdict::Consistent);
        assert_eq!(rep.rank, 1);
        let three = phi.direct_sum(&phi).direct_sum(&phi);
        let rep = free_module_check(&three, &CurvatureOptions { kernel_crosscheck: false, ..at_level(6) }).unwrap();
        assert_eq!(rep.verdict, ModuleVerdict::Consistent);
        assert_eq!(rep.rank, 3);
        let half = KrausFamily::single(free(1, 6).operator(0) * c64(0.5, 0.0)).unwrap();
        let rep = free_module_check(&half, &at_level(6)).unwrap();
        assert_eq!(rep.verdict, ModuleVerdict::Inconsistent);
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let u = KrausFamily::single(crate::random::random_unitary(&mut rng, 2)).unwrap();
        assert!(matches!(free_module_check(&u, &CurvatureOptions::default()), Err(Error::NotPure { .. })));
    }

    #[test]
    fn scaling() {
        let base = free(2, 5);
        let id = HermitianOperator::identity(base.dim());
        let opts = at_level(5);
        let s = scale_construction(&base, 3, &id, &opts).unwrap();
        assert_eq!(s.family.len(), 3);
        assert!(s.map_residual < 1e-12 && s.adjoint_residual < 1e-12);
        assert_eq!(s.f_scaled.norm_part, 2.0);
        assert_eq!(s.f_scaled.norm_part, s.f_base.norm_part);
        assert!((s.f_scaled.curvature_part - s.f_base.curvature_part).abs() < 1e-12);
        assert!((s.f_scaled.curvature_part - (1.0 - 1.0 / 32.0)).abs() < 1e-12);
        assert!((s.family.phi_identity().trace() - base.phi_identity().trace()).abs() < 1e-12);
        assert!(scale_construction(&base, 2, &id, &opts).is_err());
    }

    #[test]
    fn properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let opts = CurvatureOptions::default();
        for _ in 0..5 {
            let phi1 = random_family(&mut rng, 3, 2, 0.8);
            let phi2 = random_family(&mut rng, 3, 2, 0.6);
            let d1 = HermitianOperator::identity(3);
            let d2 = crate::ergodic::phi_infinity(&phi1, &d1, IterationOptions::default()).unwrap().value;
            let d2 = &d1 - &d2.scale(0.5);
            let rep = curvature_properties_check(&phi1, &d1, &phi2, &HermitianOperator::identity(3), 0.7, 1.3, &opts).unwrap();
            assert!(rep.all_passed(), "{rep:?}");
            let rep = curvature_properties_check(&phi1, &d1, &phi1, &d2, 0.3, 2.0, &opts).unwrap();
            assert!(rep.all_passed(), "{rep:?}");
        }
        // A = diag(1, 1/2): the pure part of I is diag(0, 1)
        let a = HermitianOperator::from_diagonal(&[1.0, 0.5]).into_matrix();
        let phi = KrausFamily::single(a).unwrap();
        let id = HermitianOperator::identity(2);
        let rep = curvature_properties_check(&phi, &id, &phi, &id, 1.0, 1.0, &opts).unwrap();
        assert!(rep.all_passed());
        let q = star_curvature(&phi, &HermitianOperator::from_diagonal(&[0.0, 1.0]), &opts).unwrap();
        assert_eq!(q.branch, Branch::Eq1);
        assert!(q.star_curvature.abs() < 1e-12);
    }

    #[test]
    fn kernel_crosschecks() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        for n in 1..=3 {
            let phi = random_family(&mut rng, 4, n, 0.7);
            let id = HermitianOperator::identity(4);
            let rep = star_curvature(&phi, &id, &CurvatureOptions::default()).unwrap();
            assert!(rep.kernel_crosscheck.unwrap() < 1e-10);
            let chi = euler_characteristic(&phi, &id, &CurvatureOptions::default()).unwrap();
            assert_eq!(chi.kernel_crosscheck, Some(true));
        }
    }
}
