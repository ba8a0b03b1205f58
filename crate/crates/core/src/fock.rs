//! Truncated full Fock space over `n` generators.
//!
//! Basis vectors `e_α` are indexed by words of length at most `level`, in
//! length-major order and lexicographically within a length, so the vacuum
//! `g_0` has index 0. The left creation operators act by `S_i e_α = e_{g_i α}`
//! and annihilate words of length `level` (compression to the truncation).
//! All identities that only involve lowering operators, or raising operators
//! below the top level, are exact on the truncation.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{c64, op_norm, ComplexMatrix, HermitianOperator, Tolerance, C64};

/// Default cap on the Fock space dimension.
pub const DEFAULT_DIM_CAP: usize = 20_000;

/// Largest Gram matrix formed when estimating polynomial norms.
pub const DEFAULT_GRAM_CAP: usize = 1024;

/// A word in the free semigroup on `n` generators; letters are stored
/// zero-based (`g_1` is letter 0).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub struct Word(Vec<usize>);

impl Word {
    pub fn empty() -> Self {
        Word(Vec::new())
    }

    pub fn from_zero_based(letters: Vec<usize>) -> Self {
        Word(letters)
    }

    /// Letters numbered `1..=n`.
    pub fn from_one_based(letters: &[usize]) -> Result<Self> {
        letters
            .iter()
            .map(|&l| {
                l.checked_sub(1)
                    .ok_or_else(|| Error::MalformedInput("word letters start at 1".into()))
            })
            .collect::<Result<Vec<_>>>()
            .map(Word)
    }

    pub fn letters(&self) -> &[usize] {
        &self.0
    }

    pub fn one_based(&self) -> Vec<usize> {
        self.0.iter().map(|l| l + 1).collect()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `g_i α`.
    pub fn prepend(&self, letter: usize) -> Word {
        let mut v = Vec::with_capacity(self.0.len() + 1);
        v.push(letter);
        v.extend_from_slice(&self.0);
        Word(v)
    }

    /// Concatenation `αβ`.
    pub fn concat(&self, other: &Word) -> Word {
        let mut v = self.0.clone();
        v.extend_from_slice(&other.0);
        Word(v)
    }

    /// `Some(γ)` when `self = prefix γ`.
    pub fn strip_prefix(&self, prefix: &Word) -> Option<Word> {
        self.0.strip_prefix(prefix.0.as_slice()).map(|s| Word(s.to_vec()))
    }

    fn check_letters(&self, n: usize) -> Result<()> {
        if let Some(&bad) = self.0.iter().find(|&&l| l >= n) {
            return Err(Error::MalformedInput(format!(
                "letter g{} out of range for {n} generators",
                bad + 1
            )));
        }
        Ok(())
    }
}

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return write!(f, "g0");
        }
        for l in &self.0 {
            write!(f, "g{}", l + 1)?;
        }
        Ok(())
    }
}

/// Fock space truncated at word length `level`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TruncatedFock {
    n: usize,
    level: usize,
    /// `offsets[j]` = number of words of length `< j`, for `j = 0..=level+1`.
    offsets: Vec<usize>,
}

/// Sum `1 + n + ... + n^level`, or `None` on overflow.
pub fn fock_dim(n: usize, level: usize) -> Option<usize> {
    let mut total: usize = 0;
    let mut pow: usize = 1;
    for j in 0..=level {
        total = total.checked_add(pow)?;
        if j < level {
            pow = pow.checked_mul(n)?;
        }
    }
    Some(total)
}

impl TruncatedFock {
    pub fn new(n: usize, level: usize, cap: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::MalformedInput("at least one generator is required".into()));
        }
        let dim = fock_dim(n, level).unwrap_or(usize::MAX);
        if dim > cap {
            return Err(Error::DimensionCap { dim, cap });
        }
        let mut offsets = Vec::with_capacity(level + 2);
        let mut acc = 0usize;
        let mut pow = 1usize;
        for _ in 0..=level {
            offsets.push(acc);
            acc += pow;
            pow = pow.saturating_mul(n);
        }
        offsets.push(acc);
        Ok(TruncatedFock { n, level, offsets })
    }

    pub fn generators(&self) -> usize {
        self.n
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn dim(&self) -> usize {
        self.offsets[self.level + 1]
    }

    /// Number of words of length at most `k`.
    pub fn dim_upto(&self, k: usize) -> usize {
        self.offsets[k.min(self.level) + 1]
    }

    /// Index range of words of length exactly `k`.
    pub fn level_range(&self, k: usize) -> std::ops::Range<usize> {
        self.offsets[k]..self.offsets[k + 1]
    }

    pub fn index(&self, w: &Word) -> Result<usize> {
        w.check_letters(self.n)?;
        if w.len() > self.level {
            return Err(Error::LevelTooSmall {
                level: self.level,
                reason: format!("word {w} has length {}", w.len()),
            });
        }
        Ok(self.index_unchecked(w.letters()))
    }

    fn index_unchecked(&self, letters: &[usize]) -> usize {
        let within = letters.iter().fold(0usize, |acc, &l| acc * self.n + l);
        self.offsets[letters.len()] + within
    }

    pub fn word(&self, index: usize) -> Word {
        let len = (0..=self.level)
            .find(|&j| index < self.offsets[j + 1])
            .expect("index within dimension");
        let mut within = index - self.offsets[len];
        let mut letters = vec![0; len];
        for slot in letters.iter_mut().rev() {
            *slot = within % self.n;
            within /= self.n;
        }
        Word(letters)
    }

    pub fn length_of(&self, index: usize) -> usize {
        (0..=self.level)
            .find(|&j| index < self.offsets[j + 1])
            .expect("index within dimension")
    }

    /// Index of `g_i α` for the word at `index`, or `None` when it would leave
    /// the truncation.
    pub fn create(&self, letter: usize, index: usize) -> Option<usize> {
        let len = self.length_of(index);
        if len >= self.level {
            return None;
        }
        let within = index - self.offsets[len];
        Some(self.offsets[len + 1] + letter * self.n.pow(len as u32) + within)
    }

    /// `S_i^*`: index of `α` when the word at `index` is `g_i α`.
    pub fn annihilate(&self, letter: usize, index: usize) -> Option<usize> {
        let len = self.length_of(index);
        if len == 0 {
            return None;
        }
        let within = index - self.offsets[len];
        let block = self.n.pow((len - 1) as u32);
        if within / block != letter {
            return None;
        }
        Some(self.offsets[len - 1] + within % block)
    }

    /// Index of `αβ` when it lies in the truncation.
    pub fn concat_index(&self, alpha: &Word, beta_index: usize) -> Option<usize> {
        let blen = self.length_of(beta_index);
        let total = alpha.len() + blen;
        if total > self.level {
            return None;
        }
        let beta_within = beta_index - self.offsets[blen];
        let alpha_within = alpha.letters().iter().fold(0usize, |acc, &l| acc * self.n + l);
        Some(self.offsets[total] + alpha_within * self.n.pow(blen as u32) + beta_within)
    }

    /// Index of `γ` when the word at `index` is `β γ`.
    pub fn strip_index(&self, beta: &Word, index: usize) -> Option<usize> {
        let len = self.length_of(index);
        if beta.len() > len {
            return None;
        }
        let rest = len - beta.len();
        let within = index - self.offsets[len];
        let block = self.n.pow(rest as u32);
        let head = within / block;
        let beta_within = beta.letters().iter().fold(0usize, |acc, &l| acc * self.n + l);
        if head != beta_within {
            return None;
        }
        Some(self.offsets[rest] + within % block)
    }

    pub fn words(&self) -> impl Iterator<Item = Word> + '_ {
        (0..self.dim()).map(move |i| self.word(i))
    }

    /// Equivalence classes of words under permutation of letters, each as a
    /// list of indices.
    pub fn symmetric_classes(&self) -> Vec<Vec<usize>> {
        let mut classes: BTreeMap<(usize, Vec<usize>), Vec<usize>> = BTreeMap::new();
        for i in 0..self.dim() {
            let mut key = self.word(i).0;
            key.sort_unstable();
            classes.entry((key.len(), key)).or_default().push(i);
        }
        classes.into_values().collect()
    }
}

/// The truncated left creation operators `S_1, ..., S_n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CreationFamily {
    fock: TruncatedFock,
}

/// Builds the truncated Fock space and its creation operators.
pub fn build_fock(n: usize, level: usize, cap: usize) -> Result<CreationFamily> {
    Ok(CreationFamily {
        fock: TruncatedFock::new(n, level, cap)?,
    })
}

impl CreationFamily {
    pub fn fock(&self) -> &TruncatedFock {
        &self.fock
    }

    /// Dense matrix of `S_i` (zero-based letter).
    pub fn matrix(&self, letter: usize) -> ComplexMatrix {
        let dim = self.fock.dim();
        let mut m = ComplexMatrix::zeros(dim, dim);
        for j in 0..dim {
            if let Some(i) = self.fock.create(letter, j) {
                m[(i, j)] = c64(1.0, 0.0);
            }
        }
        m
    }

    pub fn matrices(&self) -> Vec<ComplexMatrix> {
        (0..self.fock.n).map(|i| self.matrix(i)).collect()
    }

    /// `S_α` as a dense matrix.
    pub fn word_matrix(&self, alpha: &Word) -> Result<ComplexMatrix> {
        alpha.check_letters(self.fock.n)?;
        let dim = self.fock.dim();
        let mut m = ComplexMatrix::zeros(dim, dim);
        for j in 0..dim {
            if let Some(i) = self.fock.concat_index(alpha, j) {
                m[(i, j)] = c64(1.0, 0.0);
            }
        }
        Ok(m)
    }

    /// The creation operators as a Kraus family on the truncation; the
    /// associated map is `X ↦ Σ S_i X S_i*`.
    pub fn as_kraus_family(&self) -> crate::cpmap::KrausFamily {
        crate::cpmap::KrausFamily::new(self.matrices()).expect("square operators")
    }
}

/// Orthogonal projection onto words of length at most `k`.
pub fn level_projection(fock: &TruncatedFock, k: usize) -> Result<HermitianOperator> {
    if k > fock.level() {
        return Err(Error::LevelTooSmall {
            level: fock.level(),
            reason: format!("projection level {k} requested"),
        });
    }
    let dim = fock.dim();
    let upto = fock.dim_upto(k);
    let diag: Vec<f64> = (0..dim).map(|i| if i < upto { 1.0 } else { 0.0 }).collect();
    Ok(HermitianOperator::from_diagonal(&diag))
}

/// Ordered product `T_α = T_{i_1} ... T_{i_k}`; the empty word gives `I`.
pub fn word_operator(family: &[ComplexMatrix], alpha: &Word) -> Result<ComplexMatrix> {
    let first = family
        .first()
        .ok_or_else(|| Error::MalformedInput("empty operator family".into()))?;
    alpha.check_letters(family.len())?;
    let d = first.nrows();
    let mut out = ComplexMatrix::identity(d, d);
    for &l in alpha.letters() {
        out *= &family[l];
    }
    Ok(out)
}

/// Orthogonal projection onto the span of the symmetrized basis vectors.
pub fn symmetric_projector(fock: &TruncatedFock) -> HermitianOperator {
    let dim = fock.dim();
    let mut m = ComplexMatrix::zeros(dim, dim);
    for class in fock.symmetric_classes() {
        let w = c64(1.0 / class.len() as f64, 0.0);
        for &i in &class {
            for &j in &class {
                m[(i, j)] = w;
            }
        }
    }
    HermitianOperator::symmetrized(m)
}

/// Finite combination `Σ c_α S_α` of creation words.
pub type AnalyticPolynomial = Vec<(Word, C64)>;

/// Finite combination `Σ c_{αβ} S_α S_β*`.
pub type WordPairPolynomial = Vec<(Word, Word, C64)>;

/// Result of a truncated norm estimate: `values[j] = (level, norm)`; each
/// value is a lower bound for the norm on the full Fock space.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormEstimate {
    pub values: Vec<(usize, f64)>,
    pub lower_bound: f64,
    pub converged: bool,
}

fn largest_singular_from_columns(columns: &[Vec<(usize, C64)>]) -> f64 {
    // Gram matrix of sparse columns
    let k = columns.len();
    let mut rows: BTreeMap<usize, Vec<(usize, C64)>> = BTreeMap::new();
    for (j, col) in columns.iter().enumerate() {
        for &(r, v) in col {
            rows.entry(r).or_default().push((j, v));
        }
    }
    let mut gram = ComplexMatrix::zeros(k, k);
    for entries in rows.values() {
        for &(a, va) in entries {
            for &(b, vb) in entries {
                gram[(a, b)] += va.conj() * vb;
            }
        }
    }
    let g = HermitianOperator::symmetrized(gram);
    g.max_eigenvalue().max(0.0).sqrt()
}

fn merge(col: Vec<(usize, C64)>) -> Vec<(usize, C64)> {
    let mut acc: BTreeMap<usize, C64> = BTreeMap::new();
    for (r, v) in col {
        *acc.entry(r).or_insert(c64(0.0, 0.0)) += v;
    }
    acc.into_iter().filter(|(_, v)| v.norm() > 0.0).collect()
}

/// Lower bounds `||p(S) P_{<=k}||` for `k = 0 ..= level_max - deg p`. Each value
/// is exact for the compression because `p(S)` raises word length by at most
/// `deg p`; the sequence is nondecreasing in `k`.
pub fn analytic_poly_norm(
    p: &AnalyticPolynomial,
    n: usize,
    level_max: usize,
    tol: f64,
) -> Result<NormEstimate> {
    let degree = p.iter().map(|(w, _)| w.len()).max().unwrap_or(0);
    if degree > level_max {
        return Err(Error::LevelTooSmall {
            level: level_max,
            reason: format!("polynomial degree {degree} exceeds the level budget"),
        });
    }
    for (w, _) in p {
        w.check_letters(n)?;
    }
    let fock = TruncatedFock::new(n, level_max, usize::MAX)?;
    let mut values = Vec::new();
    for k in 0..=(level_max - degree) {
        let cols = fock.dim_upto(k);
        if cols > DEFAULT_GRAM_CAP {
            break;
        }
        let columns: Vec<Vec<(usize, C64)>> = (0..cols)
            .map(|j| {
                merge(
                    p.iter()
                        .filter_map(|(alpha, c)| fock.concat_index(alpha, j).map(|i| (i, *c)))
                        .collect(),
                )
            })
            .collect();
        values.push((k, largest_singular_from_columns(&columns)));
    }
    Ok(finish_estimate(values, tol))
}

fn finish_estimate(values: Vec<(usize, f64)>, tol: f64) -> NormEstimate {
    let lower_bound = values.iter().map(|v| v.1).fold(0.0, f64::max);
    let converged = values.len() >= 2 && {
        let a = values[values.len() - 1].1;
        let b = values[values.len() - 2].1;
        (a - b).abs() <= tol
    };
    NormEstimate {
        values,
        lower_bound,
        converged,
    }
}

/// Dense matrix of `P_{<=L} q(S) P_{<=L}` on the truncation at level `L`.
pub fn word_pair_matrix(q: &WordPairPolynomial, fock: &TruncatedFock) -> Result<ComplexMatrix> {
    let dim = fock.dim();
    let mut m = ComplexMatrix::zeros(dim, dim);
    for (alpha, beta, c) in q {
        alpha.check_letters(fock.generators())?;
        beta.check_letters(fock.generators())?;
        for j in 0..dim {
            if let Some(gamma) = fock.strip_index(beta, j) {
                if let Some(i) = fock.concat_index(alpha, gamma) {
                    m[(i, j)] += *c;
                }
            }
        }
    }
    Ok(m)
}

/// Lower bounds `||P_{<=L} q(S) P_{<=L}||` for `L = deg q ..= level_max`; the
/// compressions increase with `L`.
pub fn word_pair_poly_norm(
    q: &WordPairPolynomial,
    n: usize,
    level_max: usize,
    tol: f64,
) -> Result<NormEstimate> {
    let degree = q
        .iter()
        .map(|(a, b, _)| a.len().max(b.len()))
        .max()
        .unwrap_or(0);
    if degree > level_max {
        return Err(Error::LevelTooSmall {
            level: level_max,
            reason: format!("polynomial degree {degree} exceeds the level budget"),
        });
    }
    let mut values = Vec::new();
    for level in degree..=level_max {
        let fock = TruncatedFock::new(n, level, usize::MAX)?;
        if fock.dim() > DEFAULT_GRAM_CAP {
            break;
        }
        let m = word_pair_matrix(q, &fock)?;
        values.push((level, op_norm(&m)));
    }
    Ok(finish_estimate(values, tol))
}

/// `Σ c_α T_α`.
pub fn eval_analytic(p: &AnalyticPolynomial, family: &[ComplexMatrix]) -> Result<ComplexMatrix> {
    let d = family
        .first()
        .ok_or_else(|| Error::MalformedInput("empty operator family".into()))?
        .nrows();
    let mut out = ComplexMatrix::zeros(d, d);
    for (alpha, c) in p {
        out += word_operator(family, alpha)? * *c;
    }
    Ok(out)
}

/// Tolerance used to call a norm sweep converged.
pub fn default_norm_tolerance() -> f64 {
    Tolerance::default().atol * 100.0
}
