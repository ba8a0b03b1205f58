//! Seeded random instances for property checks and the CLI's sampling
//! commands.

use rand::Rng;

use crate::cpmap::KrausFamily;
use crate::numerics::{c64, ComplexMatrix, HermitianOperator, C64};

fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    // Box-Muller
    let u1: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    c64(gaussian(rng), gaussian(rng)) * std::f64::consts::FRAC_1_SQRT_2
}

/// Matrix with i.i.d. standard complex Gaussian entries.
pub fn ginibre<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> ComplexMatrix {
    ComplexMatrix::from_fn(rows, cols, |_, _| complex_gaussian(rng))
}

pub fn random_hermitian<R: Rng + ?Sized>(rng: &mut R, d: usize) -> HermitianOperator {
    let g = ginibre(rng, d, d);
    HermitianOperator::symmetrized(&g + g.adjoint())
}

/// `G G*` for a square Ginibre matrix: positive and almost surely invertible.
pub fn random_psd<R: Rng + ?Sized>(rng: &mut R, d: usize) -> HermitianOperator {
    let g = ginibre(rng, d, d);
    HermitianOperator::symmetrized(&g * g.adjoint())
}

/// Positive semidefinite of the given rank.
pub fn random_psd_rank<R: Rng + ?Sized>(rng: &mut R, d: usize, rank: usize) -> HermitianOperator {
    let g = ginibre(rng, d, rank);
    HermitianOperator::symmetrized(&g * g.adjoint())
}

/// Matrix with orthonormal columns, `rows >= cols`.
pub fn random_isometry<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> ComplexMatrix {
    assert!(rows >= cols);
    let g = ginibre(rng, rows, cols);
    let qr = g.qr();
    qr.q()
}

pub fn random_unitary<R: Rng + ?Sized>(rng: &mut R, d: usize) -> ComplexMatrix {
    random_isometry(rng, d, d)
}

/// Invertible matrix with singular values drawn from `[smin, smax]`.
pub fn random_invertible<R: Rng + ?Sized>(
    rng: &mut R,
    d: usize,
    smin: f64,
    smax: f64,
) -> ComplexMatrix {
    let u = random_unitary(rng, d);
    let v = random_unitary(rng, d);
    let s = ComplexMatrix::from_diagonal(&nalgebra::DVector::from_fn(d, |_, _| {
        c64(smin + (smax - smin) * rng.random::<f64>(), 0.0)
    }));
    u * s * v.adjoint()
}

/// Random Kraus family scaled so that `||phi(I)|| = norm`; contractive when
/// `norm <= 1`.
pub fn random_family<R: Rng + ?Sized>(rng: &mut R, d: usize, n: usize, norm: f64) -> KrausFamily {
    let ops: Vec<ComplexMatrix> = (0..n).map(|_| ginibre(rng, d, d)).collect();
    let fam = KrausFamily::new(ops).expect("valid shapes");
    let current = fam.phi_identity().norm();
    fam.scaled((norm / current).sqrt())
}

/// Random unital family: `Σ A_i A_i* = I`, built from an isometry
/// `W: C^d -> C^{nd}` with `A_i* = W_i`.
pub fn random_unital_family<R: Rng + ?Sized>(rng: &mut R, d: usize, n: usize) -> KrausFamily {
    let w = random_isometry(rng, n * d, d);
    let ops = (0..n)
        .map(|i| w.view((i * d, 0), (d, d)).adjoint())
        .collect();
    KrausFamily::new(ops).expect("valid shapes")
}

/// Unital family for which the span of the first `p` coordinates is
/// invariant under every `A_i`; when `reducing` is set the span is also
/// invariant under every `A_i*`.
///
/// Each `A_i = [[X_i, Y_i], [0, Z_i]]`; the rows of `[Z_1 .. Z_n]` and of
/// `[X_1 Y_1 .. X_n Y_n]` are orthonormal and mutually orthogonal, which
/// gives `Σ A_i A_i* = I`.
pub fn random_unital_with_invariant<R: Rng + ?Sized>(
    rng: &mut R,
    d: usize,
    n: usize,
    p: usize,
    reducing: bool,
) -> KrausFamily {
    assert!(p <= d && n >= 1);
    let q = d - p;
    let width = n * d;
    // coordinates of row space: operator i occupies columns [i*d, (i+1)*d)
    let mut rows = ComplexMatrix::zeros(d, width);
    // Z rows (indices p..d) live on the M^perp columns of each block
    let z_cols: Vec<usize> = (0..n).flat_map(|i| (p..d).map(move |c| i * d + c)).collect();
    let xy_cols: Vec<usize> = if reducing {
        (0..n).flat_map(|i| (0..p).map(move |c| i * d + c)).collect()
    } else {
        (0..width).collect()
    };
    if q > 0 {
        let z = random_isometry(rng, z_cols.len(), q);
        for r in 0..q {
            for (k, &col) in z_cols.iter().enumerate() {
                rows[(p + r, col)] = z[(k, r)].conj();
            }
        }
    }
    if p > 0 {
        // random vectors supported on xy_cols, orthogonalized against Z rows
        let mut basis: Vec<nalgebra::DVector<C64>> = (p..d)
            .map(|r| rows.row(r).adjoint())
            .collect();
        for r in 0..p {
            loop {
                let mut v = nalgebra::DVector::<C64>::zeros(width);
                for &col in &xy_cols {
                    v[col] = complex_gaussian(rng);
                }
                for b in &basis {
                    let proj = b.dotc(&v);
                    v -= b * proj;
                }
                let nrm = v.norm();
                if nrm > 1e-6 {
                    v /= c64(nrm, 0.0);
                    rows.set_row(r, &v.adjoint());
                    basis.push(v);
                    break;
                }
            }
        }
    }
    let ops = (0..n)
        .map(|i| rows.view((0, i * d), (d, d)).into_owned())
        .collect();
    KrausFamily::new(ops).expect("valid shapes")
}
