//! Similarity of `phi` to unital, contractive, strictly contractive and
//! pure contractive maps, the Stein equation `X - phi(X) = R`, and the
//! spectral radius as an infimum of conjugated map norms.
//!
//! Every search returns a [`SimilarityCertificate`] with a ternary verdict.
//! A `yes` carries a witness `Q` (the similarity is `R = Q^{1/2}`), a `no`
//! carries an obstruction that can be rechecked independently.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::cpmap::{KrausFamily, Superoperator, CLUSTER_TOL, PERIPHERAL_TOL};
use crate::ergodic::{ergodic_projection, spectral_limit};
use crate::error::{Error, Result};
use crate::fock::{analytic_poly_norm, eval_analytic, AnalyticPolynomial, TruncatedFock};
use crate::numerics::{
    c64, inverse, is_psd, loewner_le, op_norm, psd_sqrt, unvec, vec_of, ComplexMatrix,
    HermitianOperator, IterationOptions, Tolerance, C64,
};
use crate::random::random_invertible;

/// `r < 1` means `r < 1 - STRICT_MARGIN`; a positive operator is invertible
/// when its smallest eigenvalue is at least `STRICT_MARGIN (1 + ||Q||)`.
pub const STRICT_MARGIN: f64 = 1e-8;

/// Largest dimension for which the Stein series is summed by doubling with
/// the superoperator, and for which the vectorized linear solve is formed.
const DENSE_SUPEROPERATOR_DIM: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Target {
    Unital,
    Contractive,
    StrictContraction,
    PureContractive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Yes,
    No,
    Undetermined,
}

/// A reason why no similarity of the requested kind exists.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Obstruction {
    /// `r(phi) > 1`, so `phi` is not power bounded.
    SpectralRadiusAboveOne { radius: f64 },
    /// A peripheral eigenvalue of the superoperator has a Jordan block.
    JordanDefect {
        re: f64,
        im: f64,
        algebraic: usize,
        geometric: usize,
    },
    /// `phi^k(I) -> 0`, so the means of `phi^k(I)` have no positive lower
    /// bound; records `(k, min eig σ_k(I))`.
    VanishingMeans {
        radius: f64,
        min_eigenvalues: Vec<(usize, f64)>,
    },
    /// The Cesàro limit of `phi^k(I)` is singular.
    SingularCesaroLimit { min_eigenvalue: f64 },
    /// `r(phi) = 1` at tolerance, so `phi` has no strictly contractive
    /// similarity.
    PeripheralSpectrum { radius: f64 },
    /// A positive `X != 0` with `phi(X) = r X`, `r >= 1`: every invertible
    /// `D >= 0` has `phi^k(D) >= c r^k X`, so no invertible pure solution.
    PerronEigenvector { eigenvalue: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Route {
    CesaroProjection,
    SteinSeries,
    Identity,
    Perron,
    Abel,
}

/// Numerical von Neumann check `||p(A)|| <= sqrt(b/a) ||p(S)||`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolynomialBoundCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub converged: bool,
    pub holds: bool,
}

#[derive(Debug, Clone)]
pub struct SimilarityCertificate {
    pub target: Target,
    pub verdict: Verdict,
    pub spectral_radius: f64,
    pub witness_q: Option<HermitianOperator>,
    /// `(a, b)` with `a I <= Q <= b I`.
    pub bounds: Option<(f64, f64)>,
    /// Residual of the defining relation for the witness.
    pub residual: Option<f64>,
    pub route: Option<Route>,
    pub obstruction: Option<Obstruction>,
    /// Best positive candidate for undetermined verdicts.
    pub candidate: Option<HermitianOperator>,
    pub polynomial_checks: Vec<PolynomialBoundCheck>,
    pub notes: Vec<String>,
}

impl SimilarityCertificate {
    fn new(target: Target, verdict: Verdict, spectral_radius: f64) -> Self {
        SimilarityCertificate {
            target,
            verdict,
            spectral_radius,
            witness_q: None,
            bounds: None,
            residual: None,
            route: None,
            obstruction: None,
            candidate: None,
            polynomial_checks: vec![],
            notes: vec![],
        }
    }

    fn with_witness(mut self, q: HermitianOperator, residual: f64, route: Route) -> Self {
        let e = q.eigen();
        self.bounds = Some((e.min(), e.max()));
        self.witness_q = Some(q);
        self.residual = Some(residual);
        self.route = Some(route);
        self
    }

    fn with_obstruction(mut self, o: Obstruction) -> Self {
        self.obstruction = Some(o);
        self
    }

    /// `R = Q^{1/2}`, the similarity realizing the certificate.
    pub fn similarity(&self) -> Option<ComplexMatrix> {
        let q = self.witness_q.as_ref()?;
        psd_sqrt(q, Tolerance::default()).ok().map(HermitianOperator::into_matrix)
    }
}

fn is_invertible_positive(q: &HermitianOperator) -> bool {
    q.min_eigenvalue() >= STRICT_MARGIN * (1.0 + q.norm())
}

/// Kraus family `{R^{-1} A_i R}` of `X ↦ R^{-1} phi(R X R*) R^{-*}`.
pub fn conjugate_map(phi: &KrausFamily, r: &ComplexMatrix, tol: Tolerance) -> Result<KrausFamily> {
    if r.shape() != (phi.dim(), phi.dim()) {
        return Err(Error::DimensionMismatch {
            expected: phi.dim(),
            found: r.nrows(),
        });
    }
    let r_inv = inverse(r, tol)?;
    KrausFamily::new(phi.operators().iter().map(|a| &r_inv * a * r).collect())
}

/// Minimum eigenvalues of the Cesàro means `σ_k(I)` at `k = 1, 2, 4, ...`.
fn mean_trace(phi: &KrausFamily, max_k: usize) -> Vec<(usize, f64)> {
    let d = phi.dim();
    let mut out = Vec::new();
    let mut term = HermitianOperator::identity(d);
    let mut sum = HermitianOperator::zeros(d);
    let mut next_report = 1;
    for k in 1..=max_k {
        sum = &sum + &term;
        if k == next_report {
            out.push((k, sum.scale(1.0 / k as f64).min_eigenvalue()));
            next_report *= 2;
        }
        term = phi.apply(&term).expect("dims match");
    }
    out
}

fn jordan_obstruction(sup: &Superoperator) -> Option<Obstruction> {
    let peripheral = sup.peripheral();
    if peripheral.radius < 1.0 - PERIPHERAL_TOL {
        return None;
    }
    peripheral.jordan_defects().first().map(|c| Obstruction::JordanDefect {
        re: c.center.re,
        im: c.center.im,
        algebraic: c.algebraic,
        geometric: c.geometric,
    })
}

/// Similarity to a unital map: `Q` is the Cesàro limit of `phi^k(I)`, which
/// satisfies `phi(Q) = Q` and is invertible exactly when the means are
/// bounded below.
pub fn find_unital_similarity(phi: &KrausFamily, tol: Tolerance) -> SimilarityCertificate {
    let sup = phi.superoperator();
    let radius = sup.spectral_radius();
    let cert = SimilarityCertificate::new(Target::Unital, Verdict::No, radius);
    if radius > 1.0 + STRICT_MARGIN {
        return cert.with_obstruction(Obstruction::SpectralRadiusAboveOne { radius });
    }
    if radius < 1.0 - STRICT_MARGIN {
        return cert.with_obstruction(Obstruction::VanishingMeans {
            radius,
            min_eigenvalues: mean_trace(phi, 256),
        });
    }
    if let Some(o) = jordan_obstruction(&sup) {
        return cert.with_obstruction(o);
    }
    let q = match spectral_limit(phi, &HermitianOperator::identity(phi.dim())) {
        Ok(q) => q,
        Err(e) => {
            let mut c = SimilarityCertificate::new(Target::Unital, Verdict::Undetermined, radius);
            c.notes.push(e.to_string());
            return c;
        }
    };
    if !is_invertible_positive(&q) {
        let min = q.min_eigenvalue();
        let mut c = cert.with_obstruction(Obstruction::SingularCesaroLimit { min_eigenvalue: min });
        c.candidate = Some(q);
        return c;
    }
    let residual = (&phi.apply(&q).expect("dims match") - &q).norm();
    let verdict = if residual <= tol.threshold(q.norm()).max(1e-9 * q.norm()) {
        Verdict::Yes
    } else {
        Verdict::Undetermined
    };
    let mut c = SimilarityCertificate::new(Target::Unital, verdict, radius).with_witness(
        q,
        residual,
        Route::CesaroProjection,
    );
    if verdict == Verdict::Yes {
        c.polynomial_checks = polynomial_bound_checks(phi, c.bounds.expect("witness"), 0);
    }
    c
}

#[derive(Debug, Clone)]
pub struct SteinSolution {
    pub x: HermitianOperator,
    /// Number of series terms summed.
    pub terms: usize,
    /// Bound on the norm of the neglected tail.
    pub tail_bound: f64,
    /// `||X - phi(X) - R||`.
    pub residual: f64,
    /// Relative gap to the vectorized solve of `(I - Φ) vec X = vec R`.
    pub linear_solve_gap: Option<f64>,
}

/// `X = Σ_k phi^k(R)`, the unique solution of `X - phi(X) = R` when
/// `r(phi) < 1`. Writing `X = X_m + phi^m(X)` gives the tail bound
/// `||phi^m(X)|| <= q ||X_m|| / (1 - q)` with `q = ||phi^m(I)|| < 1`.
pub fn solve_stein(
    phi: &KrausFamily,
    r: &HermitianOperator,
    opts: IterationOptions,
) -> Result<SteinSolution> {
    let radius = phi.spectral_radius();
    if radius >= 1.0 - STRICT_MARGIN {
        return Err(Error::NotApplicable(format!(
            "Stein series needs r(phi) < 1, found {radius}"
        )));
    }
    if r.dim() != phi.dim() {
        return Err(Error::DimensionMismatch {
            expected: phi.dim(),
            found: r.dim(),
        });
    }
    if !is_psd(r, opts.tol) {
        return Err(Error::NotPsd {
            min_eigenvalue: r.min_eigenvalue(),
        });
    }
    let d = phi.dim();
    let (x, terms, tail_bound) = if d <= DENSE_SUPEROPERATOR_DIM {
        stein_doubling(phi, r, opts)?
    } else {
        stein_series(phi, r, opts)?
    };
    let residual = (&(&x - &phi.apply(&x)?) - r).norm();
    let linear_solve_gap = if d <= 2 * DENSE_SUPEROPERATOR_DIM {
        stein_linear_solve(phi, r)
            .ok()
            .map(|lin| (&lin - &x).norm() / x.norm().max(f64::MIN_POSITIVE))
    } else {
        None
    };
    Ok(SteinSolution {
        x,
        terms,
        tail_bound,
        residual,
        linear_solve_gap,
    })
}

fn tail_estimate(q: f64, partial: f64) -> Option<f64> {
    (q < 1.0).then(|| q * partial / (1.0 - q))
}

fn stein_series(
    phi: &KrausFamily,
    r: &HermitianOperator,
    opts: IterationOptions,
) -> Result<(HermitianOperator, usize, f64)> {
    let d = phi.dim();
    let mut sum = r.clone();
    let mut term = r.clone();
    let mut power_i = HermitianOperator::identity(d);
    let mut last = f64::INFINITY;
    for m in 1..=opts.max_iter {
        term = phi.apply(&term)?;
        power_i = phi.apply(&power_i)?;
        if let Some(tail) = tail_estimate(power_i.norm(), sum.norm()) {
            last = tail;
            if tail <= opts.tol.threshold(sum.norm()) {
                return Ok((sum, m, tail));
            }
        }
        sum = &sum + &term;
    }
    Err(Error::Diverged {
        iterations: opts.max_iter,
        last_residual: last,
        residuals: vec![last],
    })
}

/// Partial sums `X_{2m} = X_m + phi^m(X_m)` with `phi^m` held as a power of
/// the superoperator.
fn stein_doubling(
    phi: &KrausFamily,
    r: &HermitianOperator,
    opts: IterationOptions,
) -> Result<(HermitianOperator, usize, f64)> {
    let d = phi.dim();
    let mut power = phi.superoperator().matrix().clone();
    let mut sum = vec_of(r.matrix());
    let vec_id = vec_of(&ComplexMatrix::identity(d, d));
    let mut m = 1usize;
    let mut trace = Vec::new();
    loop {
        let q = HermitianOperator::symmetrized(unvec(&(&power * &vec_id), d)).norm();
        let x = HermitianOperator::symmetrized(unvec(&sum, d));
        if let Some(tail) = tail_estimate(q, x.norm()) {
            trace.push(tail);
            if tail <= opts.tol.threshold(x.norm()) {
                return Ok((x, m, tail));
            }
        }
        if m > opts.max_iter.max(1) << 20 || !q.is_finite() {
            let last = trace.last().copied().unwrap_or(f64::INFINITY);
            return Err(Error::Diverged {
                iterations: m,
                last_residual: last,
                residuals: trace,
            });
        }
        sum = &sum + &power * &sum;
        power = &power * &power;
        m *= 2;
    }
}

/// `unvec((I - Φ)^{-1} vec R)`.
pub fn stein_linear_solve(phi: &KrausFamily, r: &HermitianOperator) -> Result<HermitianOperator> {
    let d = phi.dim();
    let sup = phi.superoperator();
    let a = ComplexMatrix::identity(d * d, d * d) - sup.matrix();
    let b: DVector<C64> = vec_of(r.matrix());
    let x = a
        .lu()
        .solve(&b)
        .ok_or(Error::NotInvertible { smallest: 0.0 })?;
    Ok(HermitianOperator::symmetrized(unvec(&x, d)))
}

/// Similarity to a map of norm `< 1`: possible iff `r(phi) < 1`, with
/// witness `Q = Σ phi^k(I)`, so that `Q - phi(Q) = I`.
pub fn find_strict_contraction_similarity(
    phi: &KrausFamily,
    opts: IterationOptions,
) -> SimilarityCertificate {
    let radius = phi.spectral_radius();
    let target = Target::StrictContraction;
    if radius > 1.0 + PERIPHERAL_TOL {
        return SimilarityCertificate::new(target, Verdict::No, radius)
            .with_obstruction(Obstruction::SpectralRadiusAboveOne { radius });
    }
    if radius >= 1.0 - PERIPHERAL_TOL {
        return SimilarityCertificate::new(target, Verdict::No, radius)
            .with_obstruction(Obstruction::PeripheralSpectrum { radius });
    }
    if radius >= 1.0 - STRICT_MARGIN {
        let mut c = SimilarityCertificate::new(target, Verdict::Undetermined, radius);
        c.notes.push("spectral radius within the strictness margin of 1".into());
        return c;
    }
    stein_certificate(phi, target, radius, opts)
}

fn stein_certificate(
    phi: &KrausFamily,
    target: Target,
    radius: f64,
    opts: IterationOptions,
) -> SimilarityCertificate {
    let id = HermitianOperator::identity(phi.dim());
    match solve_stein(phi, &id, opts) {
        Ok(sol) => {
            let q = sol.x;
            let verdict = if is_invertible_positive(&q) {
                Verdict::Yes
            } else {
                Verdict::Undetermined
            };
            let mut c = SimilarityCertificate::new(target, verdict, radius).with_witness(
                q,
                sol.residual,
                Route::SteinSeries,
            );
            c.notes.push(format!("Stein series summed over {} terms", sol.terms));
            c
        }
        Err(e) => {
            let mut c = SimilarityCertificate::new(target, Verdict::Undetermined, radius);
            c.notes.push(e.to_string());
            c
        }
    }
}

/// Positive `X != 0` with `phi(X) = r X` at `r = r(phi)`, taken as the
/// spectral projection of `I` at `r` when that eigenvalue is semisimple and
/// otherwise searched for among the Hermitian parts of eigenvectors.
pub fn perron_candidate(phi: &KrausFamily) -> Option<(f64, HermitianOperator)> {
    let d = phi.dim();
    let sup = phi.superoperator();
    let radius = sup.spectral_radius();
    if radius <= 0.0 {
        return None;
    }
    let lambda = c64(radius, 0.0);
    let tol = Tolerance::new(1e-9, 1e-9).expect("static");
    let id = vec_of(&ComplexMatrix::identity(d, d));
    if let Some(e) = sup.spectral_projection(lambda, tol) {
        let x = HermitianOperator::symmetrized(unvec(&(e * &id), d));
        if x.norm() > 1e-12 && is_psd(&x, Tolerance::new(1e-9, 1e-9).expect("static")) {
            return Some((radius, x.scale(1.0 / x.norm())));
        }
    }
    let shifted = sup.matrix() - ComplexMatrix::identity(d * d, d * d) * lambda;
    let scale = op_norm(sup.matrix()).max(1.0);
    let kernel = crate::numerics::kernel_basis(
        &shifted,
        Tolerance::new(CLUSTER_TOL.sqrt() * 1e-2 * scale, 0.0).expect("finite"),
    );
    for j in 0..kernel.ncols() {
        let v = unvec(&kernel.column(j).into_owned(), d);
        for h in [(&v + v.adjoint()) * c64(0.5, 0.0), (&v - v.adjoint()) * c64(0.0, -0.5)] {
            let h = HermitianOperator::symmetrized(h);
            if h.norm() < 1e-12 {
                continue;
            }
            for sign in [1.0, -1.0] {
                let cand = h.scale(sign / h.norm());
                if cand.min_eigenvalue() >= -1e-8 {
                    return Some((radius, cand));
                }
            }
        }
    }
    None
}

/// Similarity to a pure contractive map, i.e. an invertible `D >= 0` with
/// `phi(D) <= D` and `phi^k(D) -> 0`. In finite dimensions such a `D` forces
/// `||phi^k|| -> 0`, so this coincides with strict-contraction similarity;
/// the certificate records the decay of `phi^k(D)`.
pub fn find_pure_contractive_similarity(
    phi: &KrausFamily,
    opts: IterationOptions,
) -> SimilarityCertificate {
    let radius = phi.spectral_radius();
    let target = Target::PureContractive;
    if radius >= 1.0 - PERIPHERAL_TOL {
        let mut c = SimilarityCertificate::new(target, Verdict::No, radius);
        c = match perron_candidate(phi) {
            Some((eigenvalue, x)) => {
                c.candidate = Some(x);
                c.with_obstruction(Obstruction::PerronEigenvector { eigenvalue })
            }
            None => c.with_obstruction(Obstruction::SpectralRadiusAboveOne { radius }),
        };
        c.notes.push(
            "an invertible pure solution forces r(phi) < 1 in finite dimensions".into(),
        );
        return c;
    }
    if radius >= 1.0 - STRICT_MARGIN {
        let mut c = SimilarityCertificate::new(target, Verdict::Undetermined, radius);
        c.notes.push("spectral radius within the strictness margin of 1".into());
        return c;
    }
    let mut c = stein_certificate(phi, target, radius, opts);
    if let Some(d) = c.witness_q.clone() {
        let thr = 1e-8 * d.norm();
        let mut term = d;
        let mut k = 0;
        while term.norm() > thr && k < opts.max_iter {
            term = phi.apply(&term).expect("dims match");
            k += 1;
        }
        let decayed = term.norm() <= thr;
        c.notes.push(format!("||phi^{k}(D)|| = {:e}", term.norm()));
        if !decayed {
            c.verdict = Verdict::Undetermined;
        }
    }
    c.notes
        .push("pure-contractive similarity coincides with strict-contraction similarity in finite dimensions".into());
    c
}

/// Similarity to a contractive map: an invertible `R >= 0` with
/// `phi(R) <= R`.
pub fn find_contractive_similarity(
    phi: &KrausFamily,
    opts: IterationOptions,
) -> SimilarityCertificate {
    let sup = phi.superoperator();
    let radius = sup.spectral_radius();
    let target = Target::Contractive;
    let mut cert = if radius > 1.0 + STRICT_MARGIN {
        SimilarityCertificate::new(target, Verdict::No, radius)
            .with_obstruction(Obstruction::SpectralRadiusAboveOne { radius })
    } else if radius < 1.0 - STRICT_MARGIN {
        stein_certificate(phi, target, radius, opts)
    } else if let Some(o) = jordan_obstruction(&sup) {
        let mut c = SimilarityCertificate::new(target, Verdict::No, radius).with_obstruction(o);
        c.notes.push("not power bounded".into());
        c
    } else {
        peripheral_contractive_search(phi, radius, opts.tol)
    };
    if cert.verdict == Verdict::Yes {
        cert.polynomial_checks = polynomial_bound_checks(phi, cert.bounds.expect("witness"), 0);
    }
    cert
}

fn subinvariant_witness(phi: &KrausFamily, q: &HermitianOperator, tol: Tolerance) -> Option<f64> {
    let image = phi.apply(q).ok()?;
    (is_invertible_positive(q) && loewner_le(&image, q, tol))
        .then(|| (q - &image).min_eigenvalue().min(0.0).abs())
}

/// `r(phi) = 1` and peripheral spectrum semisimple: tries the Perron
/// candidate, `I`, and the Abel sums `Σ t^k phi^k(I)` for `t` near 1.
fn peripheral_contractive_search(
    phi: &KrausFamily,
    radius: f64,
    tol: Tolerance,
) -> SimilarityCertificate {
    let target = Target::Contractive;
    let d = phi.dim();
    let perron = perron_candidate(phi);
    let mut candidates: Vec<(Route, HermitianOperator)> = Vec::new();
    if let Some((_, x)) = &perron {
        candidates.push((Route::Perron, x.clone()));
    }
    candidates.push((Route::Identity, HermitianOperator::identity(d)));
    for t in [0.9, 0.99, 0.999] {
        if let Ok(q) = stein_linear_solve(&phi.scaled(f64::sqrt(t)), &HermitianOperator::identity(d)) {
            candidates.push((Route::Abel, q));
        }
    }
    for (route, q) in candidates {
        if let Some(residual) = subinvariant_witness(phi, &q, tol) {
            return SimilarityCertificate::new(target, Verdict::Yes, radius).with_witness(q, residual, route);
        }
    }
    let mut c = SimilarityCertificate::new(target, Verdict::Undetermined, radius);
    c.candidate = perron.map(|(_, x)| x);
    c.notes
        .push("only singular or non-subinvariant positive candidates were found".into());
    c
}

/// Sample analytic polynomials of degree at most 2 and check
/// `||p(A)|| <= sqrt(b/a) ||p(S)||`; a failure at a non-converged truncation
/// is not counted as a violation.
pub fn polynomial_bound_checks(
    phi: &KrausFamily,
    bounds: (f64, f64),
    seed: u64,
) -> Vec<PolynomialBoundCheck> {
    let (a, b) = bounds;
    if a <= 0.0 {
        return vec![];
    }
    let factor = (b / a).sqrt();
    let n = phi.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let words: Vec<_> = TruncatedFock::new(n, 2, usize::MAX)
        .expect("small truncation")
        .words()
        .collect();
    let level = if n <= 2 { 8 } else { 5 };
    (0..3)
        .filter_map(|_| {
            let p: AnalyticPolynomial = words
                .iter()
                .map(|w| (w.clone(), c64(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)))
                .collect();
            let lhs = op_norm(&eval_analytic(&p, phi.operators()).ok()?);
            let est = analytic_poly_norm(&p, n, level, 1e-6).ok()?;
            let rhs = factor * est.lower_bound;
            let holds = lhs <= rhs * (1.0 + 1e-9) + 1e-12 || !est.converged;
            Some(PolynomialBoundCheck {
                lhs,
                rhs,
                converged: est.converged,
                holds,
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct RadiusInfimum {
    pub spectral_radius: f64,
    /// `||ψ_R^{-1} ∘ phi ∘ ψ_R||` for the constructed `R`.
    pub achieved: f64,
    pub witness_r: ComplexMatrix,
    /// Conjugated norms for random invertible similarities; all must be at
    /// least the spectral radius.
    pub sampled_norms: Vec<f64>,
    pub lower_bound_holds: bool,
}

/// Conjugated norm `||R^{-1} phi(R R*) R^{-*}||`.
pub fn conjugated_norm(phi: &KrausFamily, r: &ComplexMatrix, tol: Tolerance) -> Result<f64> {
    Ok(conjugate_map(phi, r, tol)?.phi_identity().norm())
}

/// Builds `R_ε` with `||ψ_{R_ε}^{-1} ∘ phi ∘ ψ_{R_ε}|| <= r(phi) + ε` from the
/// Stein solution of `phi / (r + ε)`, and samples random similarities to
/// confirm that none goes below `r(phi)`.
pub fn spectral_radius_infimum(
    phi: &KrausFamily,
    eps: f64,
    samples: usize,
    seed: u64,
    opts: IterationOptions,
) -> Result<RadiusInfimum> {
    if !(eps > 0.0) {
        return Err(Error::MalformedInput("epsilon must be positive".into()));
    }
    let radius = phi.spectral_radius();
    let scaled = phi.scaled(1.0 / (radius + eps).sqrt());
    let q = solve_stein(&scaled, &HermitianOperator::identity(phi.dim()), opts)?.x;
    let witness_r = psd_sqrt(&q, opts.tol)?.into_matrix();
    let achieved = conjugated_norm(phi, &witness_r, opts.tol)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sampled_norms: Vec<f64> = (0..samples)
        .map(|_| {
            let r = random_invertible(&mut rng, phi.dim(), 0.2, 2.0);
            conjugated_norm(phi, &r, opts.tol).expect("invertible sample")
        })
        .collect();
    let floor = radius - 1e-9 * (1.0 + radius);
    let lower_bound_holds = sampled_norms.iter().all(|&v| v >= floor) && achieved >= floor;
    Ok(RadiusInfimum {
        spectral_radius: radius,
        achieved,
        witness_r,
        sampled_norms,
        lower_bound_holds,
    })
}

#[derive(Debug, Clone)]
pub struct InjectiveFixedPoint {
    pub z: HermitianOperator,
    /// Orthonormal basis of `ker Z`.
    pub kernel: ComplexMatrix,
    pub injective: bool,
    /// `||phi(Z) - Z||`.
    pub fixed_residual: f64,
    /// `max <phi^K(I) h, h>` over the kernel basis at `K = 2000`; tends to 0.
    pub kernel_decay: f64,
}

/// `Z` = Cesàro limit of `phi^k(I)`, a positive fixed point whose kernel is
/// `{h: <phi^k(I) h, h> -> 0}`.
pub fn injective_fixed_point(phi: &KrausFamily, tol: Tolerance) -> Result<InjectiveFixedPoint> {
    ergodic_projection(phi)?;
    let sup = phi.superoperator();
    if !sup.peripheral().power_bounded() {
        return Err(Error::NotPowerBounded("peripheral Jordan block".into()));
    }
    let d = phi.dim();
    let z = spectral_limit(phi, &HermitianOperator::identity(d))?;
    let thr = 1e-8 * (1.0 + z.norm()) + tol.atol;
    let kernel = z.eigen().select(|l| l.abs() <= thr);
    let fixed_residual = (&phi.apply(&z)? - &z).norm();
    let kernel_decay = if kernel.ncols() == 0 {
        0.0
    } else {
        let p = phi.power_apply(&HermitianOperator::identity(d), 2000)?;
        (0..kernel.ncols())
            .map(|j| {
                let h = kernel.column(j);
                (h.adjoint() * p.matrix() * h)[(0, 0)].re
            })
            .fold(0.0, f64::max)
    };
    Ok(InjectiveFixedPoint {
        injective: kernel.ncols() == 0,
        z,
        kernel,
        fixed_residual,
        kernel_decay,
    })
}

#[derive(Debug, Clone)]
pub struct PowerLift {
    pub p: HermitianOperator,
    /// `min eig(P - phi(P))`.
    pub margin: f64,
    /// `P - phi(P)` is invertible.
    pub strict: bool,
    /// `||(P - phi(P)) - (Q - phi^m(Q))||`.
    pub identity_residual: f64,
}

/// `P = Q + phi(Q) + ... + phi^{m-1}(Q)` for a witness `Q` of `phi^m(Q) <= Q`;
/// then `P - phi(P) = Q - phi^m(Q)`.
pub fn power_similarity_lift(
    phi: &KrausFamily,
    m: usize,
    q: &HermitianOperator,
    tol: Tolerance,
) -> Result<PowerLift> {
    if m == 0 {
        return Err(Error::Precondition("m must be at least 1".into()));
    }
    if !is_invertible_positive(q) {
        return Err(Error::Precondition(format!(
            "Q must be invertible and positive (min eigenvalue {:e})",
            q.min_eigenvalue()
        )));
    }
    let qm = phi.power_apply(q, m)?;
    if !loewner_le(&qm, q, tol) {
        return Err(Error::Precondition(format!(
            "phi^m(Q) <= Q fails (min eigenvalue of Q - phi^m(Q) is {:e})",
            (q - &qm).min_eigenvalue()
        )));
    }
    let mut p = q.clone();
    let mut term = q.clone();
    for _ in 1..m {
        term = phi.apply(&term)?;
        p = &p + &term;
    }
    let defect = &p - &phi.apply(&p)?;
    let identity_residual = (&defect - &(q - &qm)).norm();
    let margin = defect.min_eigenvalue();
    Ok(PowerLift {
        strict: margin >= STRICT_MARGIN * (1.0 + defect.norm()),
        p,
        margin,
        identity_residual,
    })
}

#[derive(Debug, Clone)]
pub struct NeumannReport {
    pub converged: bool,
    pub q: Option<HermitianOperator>,
    pub bounds: Option<(f64, f64)>,
    /// `||Q - phi(Q) - P||`.
    pub identity_residual: Option<f64>,
    pub iterations: usize,
}

/// Partial sums of `Σ phi^k(P)`, stopped after three consecutive terms below
/// the threshold; reports `(a, b)` with `a I <= Q <= b I`.
pub fn neumann_bound_check(
    phi: &KrausFamily,
    p: &HermitianOperator,
    opts: IterationOptions,
) -> Result<NeumannReport> {
    if !is_psd(p, opts.tol) {
        return Err(Error::NotPsd {
            min_eigenvalue: p.min_eigenvalue(),
        });
    }
    let mut sum = p.clone();
    let mut term = p.clone();
    let mut streak = 0;
    for k in 1..=opts.max_iter {
        term = phi.apply(&term)?;
        let small = term.norm() <= opts.tol.threshold(sum.norm());
        streak = if small { streak + 1 } else { 0 };
        sum = &sum + &term;
        if streak >= 3 || sum.norm() == 0.0 {
            let e = sum.eigen();
            let identity_residual = (&(&sum - &phi.apply(&sum)?) - p).norm();
            return Ok(NeumannReport {
                converged: true,
                bounds: Some((e.min(), e.max())),
                q: Some(sum),
                identity_residual: Some(identity_residual),
                iterations: k,
            });
        }
    }
    Ok(NeumannReport {
        converged: false,
        q: None,
        bounds: None,
        identity_residual: None,
        iterations: opts.max_iter,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::{random_family, random_psd, random_unital_family, random_unitary};

    fn m2(a: [[f64; 2]; 2]) -> ComplexMatrix {
        ComplexMatrix::from_row_slice(
            2,
            2,
            &[c64(a[0][0], 0.0), c64(a[0][1], 0.0), c64(a[1][0], 0.0), c64(a[1][1], 0.0)],
        )
    }

    fn diag(v: &[f64]) -> HermitianOperator {
        HermitianOperator::from_diagonal(v)
    }

    fn half() -> KrausFamily {
        KrausFamily::single(diag(&[0.5, 0.5]).into_matrix()).unwrap()
    }

    fn nilpotent() -> KrausFamily {
        KrausFamily::single(m2([[0.0, 1.0], [0.0, 0.0]])).unwrap()
    }

    fn opts() -> IterationOptions {
        IterationOptions::default()
    }

    #[test]
    fn conjugation() {
        let tol = Tolerance::default();
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let phi = random_family(&mut rng, 3, 2, 0.8);
        let same = conjugate_map(&phi, &ComplexMatrix::identity(3, 3), tol).unwrap();
        assert_eq!(same, phi);
        let scaled = conjugate_map(&phi, &(ComplexMatrix::identity(3, 3) * c64(3.0, 0.0)), tol).unwrap();
        let x = random_psd(&mut rng, 3);
        assert!((&scaled.apply(&x).unwrap() - &phi.apply(&x).unwrap()).norm() < 1e-12);
        let lam = conjugate_map(&nilpotent(), &diag(&[2.0, 1.0]).into_matrix(), tol).unwrap();
        assert!((lam.operator(0) - m2([[0.0, 0.5], [0.0, 0.0]])).norm() < 1e-15);
        let r = random_invertible(&mut rng, 3, 0.5, 2.0);
        let lam = conjugate_map(&phi, &r, tol).unwrap();
        let x = random_psd(&mut rng, 3).into_matrix();
        let r_inv = r.clone().try_inverse().unwrap();
        let direct = &r_inv * phi.apply_matrix(&(&r * &x * r.adjoint())) * r_inv.adjoint();
        assert!((lam.apply_matrix(&x) - direct).norm() < 1e-10);
        assert!(conjugate_map(&phi, &ComplexMatrix::zeros(3, 3), tol).is_err());
    }

    #[test]
    fn unital_similarity_examples() {
        let tol = Tolerance::default();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let u = KrausFamily::single(random_unitary(&mut rng, 3)).unwrap();
        let c = find_unital_similarity(&u, tol);
        assert_eq!(c.verdict, Verdict::Yes);
        let (a, b) = c.bounds.unwrap();
        assert!((a - 1.0).abs() < 1e-9 && (b - 1.0).abs() < 1e-9);
        let c = find_unital_similarity(&half(), tol);
        assert_eq!(c.verdict, Verdict::No);
        assert!(matches!(c.obstruction, Some(Obstruction::VanishingMeans { .. })));
        let r = diag(&[2.0, 1.0]).into_matrix();
        let un = random_unitary(&mut rng, 2);
        let a = &r * un * r.clone().try_inverse().unwrap();
        let phi = KrausFamily::single(a).unwrap();
        let c = find_unital_similarity(&phi, tol);
        assert_eq!(c.verdict, Verdict::Yes);
        let q = c.witness_q.unwrap();
        assert!((&phi.apply(&q).unwrap() - &q).norm() < 1e-9);
        // the recovered similarity conjugates phi to a unital map
        let lam = conjugate_map(&phi, &psd_sqrt(&q, tol).unwrap().into_matrix(), tol).unwrap();
        assert!(lam.unital_defect() < 1e-9);
        let jordan = KrausFamily::single(m2([[1.0, 1.0], [0.0, 1.0]])).unwrap();
        let c = find_unital_similarity(&jordan, tol);
        assert_eq!(c.verdict, Verdict::No);
        assert!(matches!(c.obstruction, Some(Obstruction::JordanDefect { .. })));
    }

    #[test]
    fn stein_examples() {
        let sol = solve_stein(&half(), &HermitianOperator::identity(2), opts()).unwrap();
        assert!((&sol.x - &diag(&[4.0 / 3.0, 4.0 / 3.0])).norm() < 1e-12);
        let zero = solve_stein(&half(), &HermitianOperator::zeros(2), opts()).unwrap();
        assert_eq!(zero.x.norm(), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        for _ in 0..5 {
            let phi = random_family(&mut rng, 4, 2, 0.95);
            let r = random_psd(&mut rng, 4);
            let sol = solve_stein(&phi, &r, opts()).unwrap();
            assert!(sol.linear_solve_gap.unwrap() < 1e-9);
            assert!(sol.residual < 1e-9 * sol.x.norm());
        }
        let big = random_family(&mut rng, 20, 1, 0.7);
        let sol = solve_stein(&big, &HermitianOperator::identity(20), opts()).unwrap();
        assert!(sol.residual < 1e-9 * sol.x.norm());
        assert!(matches!(
            solve_stein(&KrausFamily::single(random_unitary(&mut rng, 2)).unwrap(), &HermitianOperator::identity(2), opts()),
            Err(Error::NotApplicable(_))
        ));
    }

    #[test]
    fn strict_similarity_examples() {
        let c = find_strict_contraction_similarity(&half(), opts());
        assert_eq!(c.verdict, Verdict::Yes);
        assert!((c.witness_q.as_ref().unwrap() - &diag(&[4.0 / 3.0, 4.0 / 3.0])).norm() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let u = KrausFamily::single(random_unitary(&mut rng, 2)).unwrap();
        assert_eq!(find_strict_contraction_similarity(&u, opts()).verdict, Verdict::No);
        let c = find_strict_contraction_similarity(&nilpotent(), opts());
        assert_eq!(c.verdict, Verdict::Yes);
        assert!((c.witness_q.unwrap() - diag(&[2.0, 1.0])).norm() < 1e-14);
    }

    #[test]
    fn pure_similarity_examples() {
        let c = find_pure_contractive_similarity(&half(), opts());
        assert_eq!(c.verdict, Verdict::Yes);
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let u = KrausFamily::single(random_unitary(&mut rng, 2)).unwrap();
        let c = find_pure_contractive_similarity(&u, opts());
        assert_eq!(c.verdict, Verdict::No);
        assert!(matches!(c.obstruction, Some(Obstruction::PerronEigenvector { .. })));
        // A = Y T Y^{-1} with ||Σ T_i T_i*|| < 1
        let t = random_family(&mut rng, 3, 2, 0.7);
        let y = random_invertible(&mut rng, 3, 0.5, 2.0);
        let phi = conjugate_map(&t, &y.clone().try_inverse().unwrap(), Tolerance::default()).unwrap();
        let c = find_pure_contractive_similarity(&phi, opts());
        assert_eq!(c.verdict, Verdict::Yes);
        let d = c.witness_q.unwrap();
        assert!(phi.power_apply(&d, 200).unwrap().norm() < 1e-8 * d.norm());
    }

    #[test]
    fn contractive_similarity_examples() {
        let tol = Tolerance::default();
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        let t = random_unital_family(&mut rng, 2, 2).scaled(0.9);
        let y = diag(&[2.0, 1.0]).into_matrix();
        let phi = conjugate_map(&t, &y.clone().try_inverse().unwrap(), tol).unwrap();
        let c = find_contractive_similarity(&phi, opts());
        assert_eq!(c.verdict, Verdict::Yes);
        let rr = HermitianOperator::symmetrized(&y * y.adjoint());
        assert!(loewner_le(&phi.apply(&rr).unwrap(), &rr, tol));
        assert!(c.polynomial_checks.iter().all(|p| p.holds));
        let jordan = KrausFamily::single(m2([[1.0, 1.0], [0.0, 1.0]])).unwrap();
        let c = find_contractive_similarity(&jordan, opts());
        assert_ne!(c.verdict, Verdict::Yes);
        assert!(matches!(c.obstruction, Some(Obstruction::JordanDefect { .. })));
        let u = KrausFamily::single(random_unitary(&mut rng, 3)).unwrap();
        let c = find_contractive_similarity(&u, opts());
        assert_eq!(c.verdict, Verdict::Yes);
        // unitary ⊕ strict contraction: the Perron candidate is singular but
        // the identity works
        let a = crate::numerics::block_diag(&random_unitary(&mut rng, 2), &(ComplexMatrix::identity(1, 1) * c64(0.5, 0.0)));
        let c = find_contractive_similarity(&KrausFamily::single(a).unwrap(), opts());
        assert_eq!(c.verdict, Verdict::Yes);
    }

    #[test]
    fn radius_infimum() {
        let a = 0.7;
        let phi = KrausFamily::single(ComplexMatrix::identity(2, 2) * c64(a, 0.0)).unwrap();
        let inf = spectral_radius_infimum(&phi, 0.01, 5, 1, opts()).unwrap();
        assert!((inf.spectral_radius - a * a).abs() < 1e-12);
        assert!((inf.achieved - a * a).abs() < 1e-12);
        for v in inf.sampled_norms {
            assert!((v - a * a).abs() < 1e-12);
        }
        let c = 3.0;
        let nil = KrausFamily::single(m2([[0.0, c], [0.0, 0.0]])).unwrap();
        let inf = spectral_radius_infimum(&nil, 0.01, 5, 2, opts()).unwrap();
        assert!(inf.spectral_radius.abs() < 1e-12);
        assert!(inf.achieved <= 0.01 + 1e-9);
        let mut rng = ChaCha8Rng::seed_from_u64(36);
        let phi = random_family(&mut rng, 3, 2, 1.3);
        let inf = spectral_radius_infimum(&phi, 0.01, 10, 3, opts()).unwrap();
        assert!(inf.achieved <= inf.spectral_radius + 0.01 + 1e-6);
        assert!(inf.lower_bound_holds);
    }

    #[test]
    fn injective_fixed_points() {
        let tol = Tolerance::default();
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let u = KrausFamily::single(random_unitary(&mut rng, 3)).unwrap();
        let z = injective_fixed_point(&u, tol).unwrap();
        assert!(z.injective && (&z.z - &HermitianOperator::identity(3)).norm() < 1e-9);
        let dg = KrausFamily::single(diag(&[1.0, 0.5]).into_matrix()).unwrap();
        let z = injective_fixed_point(&dg, tol).unwrap();
        assert!(!z.injective);
        assert!((&z.z - &diag(&[1.0, 0.0])).norm() < 1e-9);
        assert!(z.kernel[(1, 0)].norm() > 1.0 - 1e-9);
        assert!(z.kernel_decay < 1e-12);
        let x = KrausFamily::single(m2([[0.0, 1.0], [1.0, 0.0]])).unwrap();
        let z = injective_fixed_point(&x, tol).unwrap();
        assert!((&z.z - &HermitianOperator::identity(2)).norm() < 1e-9);
        let jordan = KrausFamily::single(m2([[1.0, 1.0], [0.0, 1.0]])).unwrap();
        assert!(injective_fixed_point(&jordan, tol).is_err());
    }

    #[test]
    fn power_lifts() {
        let tol = Tolerance::default();
        let mut rng = ChaCha8Rng::seed_from_u64(38);
        let phi = random_family(&mut rng, 3, 2, 0.9);
        let q = solve_stein(&phi, &HermitianOperator::identity(3), opts()).unwrap().x;
        let lift = power_similarity_lift(&phi, 1, &q, tol).unwrap();
        assert_eq!(lift.p, q);
        // A^2 = I/2
        let a = m2([[0.0, 2.0], [0.25, 0.0]]);
        let phi = KrausFamily::single(a).unwrap();
        let q = HermitianOperator::identity(2);
        assert!(!loewner_le(&phi.apply(&q).unwrap(), &q, tol));
        let lift = power_similarity_lift(&phi, 2, &q, tol).unwrap();
        assert!(lift.margin >= 0.0 && lift.strict);
        assert!((&lift.p - &(&q + &phi.apply(&q).unwrap())).norm() < 1e-15);
        assert!(lift.identity_residual < 1e-14);
        assert!(power_similarity_lift(&phi, 1, &q, tol).is_err());
    }

    #[test]
    fn neumann_checks() {
        let rep = neumann_bound_check(&half(), &HermitianOperator::identity(2), opts()).unwrap();
        let (a, b) = rep.bounds.unwrap();
        assert!((a - 4.0 / 3.0).abs() < 1e-9 && (b - 4.0 / 3.0).abs() < 1e-9);
        let rep = neumann_bound_check(&half(), &HermitianOperator::zeros(2), opts()).unwrap();
        assert_eq!(rep.q.unwrap().norm(), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(39);
        let phi = random_family(&mut rng, 3, 2, 0.8);
        let rep = neumann_bound_check(&phi, &random_psd(&mut rng, 3), opts()).unwrap();
        assert!(rep.identity_residual.unwrap() < 1e-9);
        let u = KrausFamily::single(random_unitary(&mut rng, 2)).unwrap();
        let rep = neumann_bound_check(&u, &HermitianOperator::identity(2), opts()).unwrap();
        assert!(!rep.converged);
    }
}
