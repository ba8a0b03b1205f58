//! Poisson kernels `K_{phi,D,r}` on the truncated Fock space and the
//! associated transforms `S_α S_β* ↦ r^{|α|+|β|} A_α D A_β*`.
//!
//! The kernel is stored as one `d x d` block per word, block `α` being
//! `r^{|α|} Δ_r A_α*` with `Δ_r = (D - r² phi(D))^{1/2}`. Truncated at level
//! `L`, `K*K = D - r^{2(L+1)} phi^{L+1}(D)` exactly, so the tail is known.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::cpmap::KrausFamily;
use crate::ergodic::phi_infinity;
use crate::error::{Error, Result};
use crate::fock::{
    fock_dim, word_operator, word_pair_poly_norm, TruncatedFock, Word, WordPairPolynomial,
    DEFAULT_DIM_CAP,
};
use crate::numerics::{
    c64, hermitian_eigen, is_psd, loewner_le, op_norm, ComplexMatrix, HermitianOperator,
    IterationOptions, Tolerance,
};

/// Accuracy targeted by automatic level selection.
pub const DEFAULT_TAIL_ACCURACY: f64 = 1e-8;

/// Largest level tried by automatic selection for a single generator.
const MAX_AUTO_LEVEL: usize = 5000;

/// `D >= 0` and `phi(D) <= D` at tolerance.
pub fn subinvariance_check(phi: &KrausFamily, d: &HermitianOperator, tol: Tolerance) -> bool {
    if d.dim() != phi.dim() {
        return false;
    }
    let Ok(image) = phi.apply(d) else {
        return false;
    };
    is_psd(d, tol) && loewner_le(&image, d, tol)
}

fn require_subinvariant(phi: &KrausFamily, d: &HermitianOperator, tol: Tolerance) -> Result<()> {
    if d.dim() != phi.dim() {
        return Err(Error::DimensionMismatch {
            expected: phi.dim(),
            found: d.dim(),
        });
    }
    if !is_psd(d, tol) {
        return Err(Error::NotPsd {
            min_eigenvalue: d.min_eigenvalue(),
        });
    }
    let image = phi.apply(d)?;
    if !loewner_le(&image, d, tol) {
        return Err(Error::NotSubinvariant {
            min_eigenvalue: (d - &image).min_eigenvalue(),
        });
    }
    Ok(())
}

/// Truncation level of a kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelLevel {
    Fixed(usize),
    /// Smallest level whose tail bound is at most `accuracy`, subject to the
    /// Fock dimension cap.
    Auto { accuracy: f64, cap: usize },
}

impl Default for KernelLevel {
    fn default() -> Self {
        KernelLevel::Auto {
            accuracy: DEFAULT_TAIL_ACCURACY,
            cap: DEFAULT_DIM_CAP,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PoissonKernel {
    phi: KrausFamily,
    d_op: HermitianOperator,
    delta: HermitianOperator,
    r: f64,
    fock: TruncatedFock,
    blocks: Vec<ComplexMatrix>,
    /// `phi^∞(D)`, only for `r = 1`.
    phi_inf: Option<HermitianOperator>,
    /// Norm of the neglected part of `K*K`.
    pub tail_bound: f64,
}

/// `||r^{2(L+1)} phi^{L+1}(D)||` for `r < 1`, `||phi^{L+1}(D) - phi^∞(D)||`
/// for `r = 1`, given `phi^{L+1}(D)`.
fn tail_value(r: f64, level: usize, power: &HermitianOperator, phi_inf: Option<&HermitianOperator>) -> f64 {
    match phi_inf {
        Some(lim) => (power - lim).norm(),
        None => r.powi(2 * (level as i32 + 1)) * power.norm(),
    }
}

/// Builds the Poisson kernel of `(phi, D)` at radius `r ∈ (0, 1]`.
pub fn build_kernel(
    phi: &KrausFamily,
    d_op: &HermitianOperator,
    r: f64,
    level: KernelLevel,
    opts: IterationOptions,
) -> Result<PoissonKernel> {
    if !(r > 0.0 && r <= 1.0) {
        return Err(Error::MalformedInput(format!("radius {r} outside (0, 1]")));
    }
    require_subinvariant(phi, d_op, opts.tol)?;
    let n = phi.len();
    let phi_inf = if r == 1.0 {
        Some(phi_infinity(phi, d_op, opts)?.value)
    } else {
        None
    };
    let (level, tail_bound) = match level {
        KernelLevel::Fixed(level) => {
            let power = phi.power_apply(d_op, level + 1)?;
            (level, tail_value(r, level, &power, phi_inf.as_ref()))
        }
        KernelLevel::Auto { accuracy, cap } => {
            let mut power = phi.apply(d_op)?;
            let mut level = 0usize;
            loop {
                let tail = tail_value(r, level, &power, phi_inf.as_ref());
                if tail <= accuracy {
                    break (level, tail);
                }
                let next_dim = fock_dim(n, level + 1).unwrap_or(usize::MAX);
                if next_dim > cap || level >= MAX_AUTO_LEVEL {
                    return Err(Error::LevelTooSmall {
                        level,
                        reason: format!(
                            "tail bound {tail:e} above {accuracy:e} at the largest level within the dimension cap {cap}"
                        ),
                    });
                }
                power = phi.apply(&power)?;
                level += 1;
            }
        }
    };
    let fock = TruncatedFock::new(n, level, usize::MAX)?;
    let defect = d_op - &phi.apply(d_op)?.scale(r * r);
    // eigenvalues of the defect within tolerance of zero are clamped
    let e = defect.eigen();
    let thr = opts.tol.threshold(defect.norm().max(d_op.norm()));
    let delta = HermitianOperator::symmetrized(e.map_values(|l| if l <= thr { 0.0 } else { l.sqrt() }));
    let dim = fock.dim();
    let mut blocks = Vec::with_capacity(dim);
    blocks.push(delta.matrix().clone());
    let adjoints: Vec<ComplexMatrix> = phi
        .operators()
        .iter()
        .map(|a| a.adjoint() * c64(r, 0.0))
        .collect();
    // block(g_i α) = r block(α) A_i*; indices are created in increasing order
    for idx in 1..dim {
        let word = fock.word(idx);
        let letters = word.letters();
        let parent = fock
            .index(&Word::from_zero_based(letters[1..].to_vec()))
            .expect("shorter word lies in the truncation");
        blocks.push(&blocks[parent] * &adjoints[letters[0]]);
    }
    Ok(PoissonKernel {
        phi: phi.clone(),
        d_op: d_op.clone(),
        delta,
        r,
        fock,
        blocks,
        phi_inf,
        tail_bound,
    })
}

impl PoissonKernel {
    pub fn family(&self) -> &KrausFamily {
        &self.phi
    }

    pub fn defect_operator(&self) -> &HermitianOperator {
        &self.d_op
    }

    /// `Δ_r`.
    pub fn delta(&self) -> &HermitianOperator {
        &self.delta
    }

    pub fn radius(&self) -> f64 {
        self.r
    }

    pub fn level(&self) -> usize {
        self.fock.level()
    }

    pub fn fock(&self) -> &TruncatedFock {
        &self.fock
    }

    /// The block `r^{|α|} Δ_r A_α*` at a word index.
    pub fn block(&self, index: usize) -> &ComplexMatrix {
        &self.blocks[index]
    }

    pub fn phi_infinity(&self) -> Option<&HermitianOperator> {
        self.phi_inf.as_ref()
    }

    /// Stacked `(fockdim · d) x d` matrix.
    pub fn matrix(&self) -> ComplexMatrix {
        let d = self.phi.dim();
        let mut m = ComplexMatrix::zeros(self.blocks.len() * d, d);
        for (i, b) in self.blocks.iter().enumerate() {
            m.view_mut((i * d, 0), (d, d)).copy_from(b);
        }
        m
    }

    /// Operator norm `||K|| = ||K*K||^{1/2}`.
    pub fn norm(&self) -> f64 {
        kernel_gram(self).max_eigenvalue().max(0.0).sqrt()
    }

    /// What `K*K` approximates: `D` for `r < 1`, `D - phi^∞(D)` for `r = 1`.
    pub fn gram_target(&self) -> HermitianOperator {
        match &self.phi_inf {
            Some(lim) => &self.d_op - lim,
            None => self.d_op.clone(),
        }
    }
}

fn gram_of(blocks: &[ComplexMatrix], d: usize) -> HermitianOperator {
    let mut g = ComplexMatrix::zeros(d, d);
    for b in blocks {
        g += b.adjoint() * b;
    }
    HermitianOperator::symmetrized(g)
}

/// `K*K`.
pub fn kernel_gram(k: &PoissonKernel) -> HermitianOperator {
    gram_of(&k.blocks, k.phi.dim())
}

/// `K*(P_{<=j} ⊗ I)K`, which equals `Σ_{i<=j} phi_r^i(Δ_r²)`.
pub fn kernel_level_gram(k: &PoissonKernel, j: usize) -> Result<HermitianOperator> {
    if j > k.level() {
        return Err(Error::LevelTooSmall {
            level: k.level(),
            reason: format!("level {j} requested"),
        });
    }
    Ok(gram_of(&k.blocks[..k.fock.dim_upto(j)], k.phi.dim()))
}

/// `max_i ||K (r A_i*) - (S_i* ⊗ I) K||` over the words of length below the
/// truncation level, where both sides are exact.
pub fn intertwining_residual(k: &PoissonKernel) -> f64 {
    let level = k.level();
    if level == 0 {
        return 0.0;
    }
    let d = k.phi.dim();
    let below = k.fock.dim_upto(level - 1);
    let mut worst = 0.0_f64;
    for (i, a) in k.phi.operators().iter().enumerate() {
        let ra = a.adjoint() * c64(k.r, 0.0);
        let diffs: Vec<ComplexMatrix> = (0..below)
            .map(|idx| {
                let shifted = k.fock.create(i, idx).expect("below top level");
                &k.blocks[idx] * &ra - &k.blocks[shifted]
            })
            .collect();
        worst = worst.max(gram_of(&diffs, d).max_eigenvalue().max(0.0).sqrt());
    }
    worst
}

/// `max_i ||K_top (r A_i*)||` over top-level blocks: the part of the
/// intertwining relation lost to the truncation.
pub fn intertwining_top_defect(k: &PoissonKernel) -> f64 {
    let d = k.phi.dim();
    let top: Vec<usize> = k.fock.level_range(k.level()).collect();
    k.phi
        .operators()
        .iter()
        .map(|a| {
            let ra = a.adjoint() * c64(k.r, 0.0);
            let prods: Vec<ComplexMatrix> = top.iter().map(|&idx| &k.blocks[idx] * &ra).collect();
            gram_of(&prods, d).max_eigenvalue().max(0.0).sqrt()
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone)]
pub struct TransformResult {
    /// `K*(q(S) ⊗ I)K`.
    pub kernel_side: ComplexMatrix,
    /// `Σ c r^{|α|+|β|} A_α D A_β*`.
    pub closed_form: ComplexMatrix,
    /// `||kernel_side - closed_form||`.
    pub difference: f64,
    /// Truncation bound on the difference plus a rounding allowance.
    pub difference_bound: f64,
}

fn check_words(q: &WordPairPolynomial, n: usize, level: usize) -> Result<()> {
    for (a, b, _) in q {
        for w in [a, b] {
            if w.letters().iter().any(|&l| l >= n) {
                return Err(Error::MalformedInput(format!("word {w} uses a letter beyond g{n}")));
            }
            if w.len() > level {
                return Err(Error::LevelTooSmall {
                    level,
                    reason: format!("word {w} is longer than the truncation"),
                });
            }
        }
    }
    Ok(())
}

/// `Σ c r^{|α|+|β|} A_α D A_β*`.
pub fn closed_form_transform(
    phi: &KrausFamily,
    d_op: &HermitianOperator,
    q: &WordPairPolynomial,
    r: f64,
) -> Result<ComplexMatrix> {
    let d = phi.dim();
    let mut out = ComplexMatrix::zeros(d, d);
    for (alpha, beta, c) in q {
        let aa = word_operator(phi.operators(), alpha)?;
        let ab = word_operator(phi.operators(), beta)?;
        let w = r.powi((alpha.len() + beta.len()) as i32);
        out += aa * d_op.matrix() * ab.adjoint() * (*c * w);
    }
    Ok(out)
}

/// Kernel-side and closed-form Poisson transforms of a word-pair polynomial.
///
/// Truncated at level `L`, the pair `(α, β)` only sees words `γ` with
/// `|γ| <= L - max(|α|, |β|) =: m`, and the exact difference is
/// `c r^{|α|+|β|} A_α r^{2(m+1)} phi^{m+1}(D) A_β*`, whose norm is summed into
/// the reported bound. For `r = 1` this includes `A_α phi^∞(D) A_β*`.
pub fn poisson_transform(k: &PoissonKernel, q: &WordPairPolynomial) -> Result<TransformResult> {
    let n = k.phi.len();
    let level = k.level();
    check_words(q, n, level)?;
    let d = k.phi.dim();
    let r = k.r;
    let mut kernel_side = ComplexMatrix::zeros(d, d);
    let mut bound = 0.0;
    let mut powers: BTreeMap<usize, HermitianOperator> = BTreeMap::new();
    for (alpha, beta, c) in q {
        let m = level - alpha.len().max(beta.len());
        let mut acc = ComplexMatrix::zeros(d, d);
        for gamma in 0..k.fock.dim_upto(m) {
            let ia = k.fock.concat_index(alpha, gamma).expect("within level");
            let ib = k.fock.concat_index(beta, gamma).expect("within level");
            acc += k.blocks[ia].adjoint() * &k.blocks[ib];
        }
        kernel_side += acc * *c;
        let power = match powers.get(&m) {
            Some(p) => p.clone(),
            None => {
                let p = k.phi.power_apply(&k.d_op, m + 1)?;
                powers.insert(m, p.clone());
                p
            }
        };
        let aa = word_operator(k.phi.operators(), alpha)?;
        let ab = word_operator(k.phi.operators(), beta)?;
        let scale = r.powi((alpha.len() + beta.len() + 2 * (m + 1)) as i32);
        bound += c.norm() * scale * op_norm(&(aa * power.matrix() * ab.adjoint()));
    }
    let closed_form = closed_form_transform(&k.phi, &k.d_op, q, r)?;
    let difference = op_norm(&(&kernel_side - &closed_form));
    let allowance = 1e-12 * (1.0 + op_norm(&closed_form) + op_norm(&kernel_side));
    Ok(TransformResult {
        kernel_side,
        closed_form,
        difference,
        difference_bound: bound + allowance,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct CbBoundReport {
    /// `||q^D(A)|| = ||Σ c A_α D A_β*||`.
    pub lhs: f64,
    pub d_norm: f64,
    /// Largest truncated value of `||q(S)||` (a lower bound).
    pub q_norm: f64,
    pub q_norm_converged: bool,
    /// `||D|| q_norm - lhs`.
    pub margin: f64,
    /// Raised only when the truncated norm has converged and the inequality
    /// fails beyond rounding.
    pub violation: bool,
}

/// Checks `||q^D(A)|| <= ||D|| ||q(S)||`.
pub fn cb_bound_check(
    phi: &KrausFamily,
    d_op: &HermitianOperator,
    q: &WordPairPolynomial,
    level: usize,
    tol: Tolerance,
) -> Result<CbBoundReport> {
    require_subinvariant(phi, d_op, tol)?;
    check_words(q, phi.len(), level)?;
    let lhs = op_norm(&closed_form_transform(phi, d_op, q, 1.0)?);
    let est = word_pair_poly_norm(q, phi.len(), level, 1e-9)?;
    let d_norm = d_op.norm();
    let rhs = d_norm * est.lower_bound;
    let margin = rhs - lhs;
    Ok(CbBoundReport {
        lhs,
        d_norm,
        q_norm: est.lower_bound,
        q_norm_converged: est.converged,
        margin,
        violation: est.converged && margin < -tol.threshold(lhs),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct MomentReport {
    pub size: usize,
    pub min_eigenvalue: f64,
    pub psd: bool,
}

/// The block matrix `[A_α D A_β*]` over words of length at most `k`.
pub fn moment_matrix(phi: &KrausFamily, d_op: &HermitianOperator, k: usize) -> Result<ComplexMatrix> {
    let fock = TruncatedFock::new(phi.len(), k, DEFAULT_DIM_CAP)?;
    let d = phi.dim();
    let dim = fock.dim();
    let ops: Vec<ComplexMatrix> = fock
        .words()
        .map(|w| word_operator(phi.operators(), &w))
        .collect::<Result<_>>()?;
    let mut m = ComplexMatrix::zeros(dim * d, dim * d);
    for i in 0..dim {
        let left = &ops[i] * d_op.matrix();
        for j in 0..dim {
            m.view_mut((i * d, j * d), (d, d))
                .copy_from(&(&left * ops[j].adjoint()));
        }
    }
    Ok(m)
}

pub fn moment_matrix_psd(
    phi: &KrausFamily,
    d_op: &HermitianOperator,
    k: usize,
    tol: Tolerance,
) -> Result<MomentReport> {
    require_subinvariant(phi, d_op, tol)?;
    let m = moment_matrix(phi, d_op, k)?;
    let e = hermitian_eigen(&HermitianOperator::symmetrized(m).into_matrix());
    let scale = e.max().abs().max(e.min().abs());
    Ok(MomentReport {
        size: e.values.len(),
        min_eigenvalue: e.min(),
        psd: e.min() >= -tol.threshold(scale),
    })
}

/// `||(I - P_sym ⊗ I) K||` for a commuting family.
pub fn symmetric_range_check(k: &PoissonKernel, tol: Tolerance) -> Result<f64> {
    let comm = k.phi.max_commutator();
    let scale = k.phi.operators().iter().map(op_norm).fold(0.0, f64::max);
    if comm > tol.threshold(scale * scale) {
        return Err(Error::Precondition(format!(
            "Kraus operators do not commute (max commutator norm {comm:e})"
        )));
    }
    let d = k.phi.dim();
    let mut diffs = Vec::with_capacity(k.blocks.len());
    for class in k.fock.symmetric_classes() {
        let mut avg = ComplexMatrix::zeros(d, d);
        for &i in &class {
            avg += &k.blocks[i];
        }
        avg /= c64(class.len() as f64, 0.0);
        for &i in &class {
            diffs.push(&k.blocks[i] - &avg);
        }
    }
    Ok(gram_of(&diffs, d).max_eigenvalue().max(0.0).sqrt())
}
