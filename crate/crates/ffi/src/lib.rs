//! C interface to `cpmaps`.
//!
//! Matrices cross the boundary as two row-major `double` arrays of length
//! `dim * dim` holding real and imaginary parts; an imaginary pointer may be
//! NULL for real input. Every fallible call returns a [`CpmStatus`]; the
//! message of the last failure on the calling thread is available from
//! [`cpm_last_error_message`].

#![allow(non_camel_case_types)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use cpmaps::cpmap::KrausFamily;
use cpmaps::error::Error;
use cpmaps::invariants::{euler_characteristic, star_curvature, CurvatureOptions};
use cpmaps::numerics::{c64, ComplexMatrix, HermitianOperator, IterationOptions};
use cpmaps::similarity::{
    find_contractive_similarity, find_pure_contractive_similarity,
    find_strict_contraction_similarity, find_unital_similarity, solve_stein, Verdict,
};

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CpmStatus {
    CPM_OK = 0,
    CPM_NULL_POINTER = 1,
    CPM_MALFORMED_INPUT = 2,
    CPM_DIMENSION_MISMATCH = 3,
    /// A mathematical precondition failed (not PSD, not subinvariant, ...).
    CPM_PRECONDITION = 4,
    CPM_NOT_CONVERGED = 5,
    CPM_INTERNAL = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CpmTarget {
    CPM_TARGET_UNITAL = 0,
    CPM_TARGET_CONTRACTIVE = 1,
    CPM_TARGET_STRICT = 2,
    CPM_TARGET_PURE = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CpmVerdict {
    CPM_VERDICT_YES = 0,
    CPM_VERDICT_NO = 1,
    CPM_VERDICT_UNDETERMINED = 2,
}

/// Opaque Kraus family.
pub struct CpmKrausFamily {
    inner: KrausFamily,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> CpmStatus {
    match e {
        Error::MalformedInput(_) | Error::Io(_) => CpmStatus::CPM_MALFORMED_INPUT,
        Error::DimensionMismatch { .. } | Error::DimensionCap { .. } => CpmStatus::CPM_DIMENSION_MISMATCH,
        Error::Diverged { .. } | Error::NotPure { .. } => CpmStatus::CPM_NOT_CONVERGED,
        _ => CpmStatus::CPM_PRECONDITION,
    }
}

fn guarded<F>(f: F) -> CpmStatus
where
    F: FnOnce() -> Result<(), (CpmStatus, String)>,
{
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CpmStatus::CPM_OK,
        Ok(Err((status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            CpmStatus::CPM_INTERNAL
        }
    }
}

fn fail(e: Error) -> (CpmStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (CpmStatus, String) {
    (CpmStatus::CPM_NULL_POINTER, format!("{what} is NULL"))
}

/// Reads a row-major `dim x dim` complex matrix.
unsafe fn read_matrix(re: *const f64, im: *const f64, dim: usize) -> Result<ComplexMatrix, (CpmStatus, String)> {
    if re.is_null() {
        return Err(null("real part"));
    }
    let len = dim * dim;
    let re = std::slice::from_raw_parts(re, len);
    let im = (!im.is_null()).then(|| std::slice::from_raw_parts(im, len));
    Ok(ComplexMatrix::from_fn(dim, dim, |i, j| {
        let k = i * dim + j;
        c64(re[k], im.map_or(0.0, |v| v[k]))
    }))
}

unsafe fn write_matrix(m: &ComplexMatrix, re: *mut f64, im: *mut f64) -> Result<(), (CpmStatus, String)> {
    if re.is_null() {
        return Err(null("output real part"));
    }
    let dim = m.nrows();
    let re = std::slice::from_raw_parts_mut(re, dim * dim);
    let mut im = (!im.is_null()).then(|| std::slice::from_raw_parts_mut(im, dim * dim));
    for i in 0..dim {
        for j in 0..dim {
            re[i * dim + j] = m[(i, j)].re;
            if let Some(im) = im.as_deref_mut() {
                im[i * dim + j] = m[(i, j)].im;
            }
        }
    }
    Ok(())
}

unsafe fn handle<'a>(f: *const CpmKrausFamily) -> Result<&'a KrausFamily, (CpmStatus, String)> {
    f.as_ref().map(|f| &f.inner).ok_or_else(|| null("family"))
}

unsafe fn hermitian(re: *const f64, im: *const f64, dim: usize) -> Result<HermitianOperator, (CpmStatus, String)> {
    HermitianOperator::new(read_matrix(re, im, dim)?).map_err(fail)
}

/// Message of the last failed call on this thread; valid until the next
/// failing call on the same thread. Never NULL.
#[no_mangle]
pub extern "C" fn cpm_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Creates a family from `n` operators stored consecutively, each a
/// row-major `dim x dim` matrix. Free with [`cpm_family_free`].
///
/// # Safety
/// `re` (and `im` unless NULL) must point to `n * dim * dim` doubles and
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cpm_family_new(
    dim: usize,
    n: usize,
    re: *const f64,
    im: *const f64,
    out: *mut *mut CpmKrausFamily,
) -> CpmStatus {
    guarded(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        if re.is_null() {
            return Err(null("real part"));
        }
        let stride = dim * dim;
        let ops = (0..n)
            .map(|k| {
                let im_k = if im.is_null() { ptr::null() } else { im.add(k * stride) };
                read_matrix(re.add(k * stride), im_k, dim)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let inner = KrausFamily::new(ops).map_err(fail)?;
        *out = Box::into_raw(Box::new(CpmKrausFamily { inner }));
        Ok(())
    })
}

/// # Safety
/// `family` must come from [`cpm_family_new`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn cpm_family_free(family: *mut CpmKrausFamily) {
    if !family.is_null() {
        drop(Box::from_raw(family));
    }
}

/// Dimension of the family, 0 for NULL.
///
/// # Safety
/// `family` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cpm_family_dim(family: *const CpmKrausFamily) -> usize {
    family.as_ref().map_or(0, |f| f.inner.dim())
}

/// Number of Kraus operators, 0 for NULL.
///
/// # Safety
/// `family` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cpm_family_len(family: *const CpmKrausFamily) -> usize {
    family.as_ref().map_or(0, |f| f.inner.len())
}

/// `phi(X)` for a square `X`.
///
/// # Safety
/// Input and output arrays must hold `dim * dim` doubles; imaginary pointers
/// may be NULL.
#[no_mangle]
pub unsafe extern "C" fn cpm_apply(
    family: *const CpmKrausFamily,
    x_re: *const f64,
    x_im: *const f64,
    out_re: *mut f64,
    out_im: *mut f64,
) -> CpmStatus {
    guarded(|| {
        let phi = handle(family)?;
        let x = read_matrix(x_re, x_im, phi.dim())?;
        write_matrix(&phi.apply_matrix(&x), out_re, out_im)
    })
}

/// Spectral radius of `phi`.
///
/// # Safety
/// `family` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cpm_spectral_radius(family: *const CpmKrausFamily, out: *mut f64) -> CpmStatus {
    guarded(|| {
        let phi = handle(family)?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = phi.spectral_radius();
        Ok(())
    })
}

/// Solves `X - phi(X) = R` for positive `R` when `r(phi) < 1`.
///
/// # Safety
/// Arrays must hold `dim * dim` doubles; imaginary pointers may be NULL.
#[no_mangle]
pub unsafe extern "C" fn cpm_solve_stein(
    family: *const CpmKrausFamily,
    r_re: *const f64,
    r_im: *const f64,
    out_re: *mut f64,
    out_im: *mut f64,
) -> CpmStatus {
    guarded(|| {
        let phi = handle(family)?;
        let r = hermitian(r_re, r_im, phi.dim())?;
        let sol = solve_stein(phi, &r, IterationOptions::default()).map_err(fail)?;
        write_matrix(sol.x.matrix(), out_re, out_im)
    })
}

/// Decides similarity to the chosen class. When the verdict is yes and
/// `q_re` is not NULL, the witness `Q` is written there.
///
/// # Safety
/// `verdict` must be writable; `q_re`/`q_im` NULL or `dim * dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn cpm_similarity(
    family: *const CpmKrausFamily,
    target: CpmTarget,
    verdict: *mut CpmVerdict,
    q_re: *mut f64,
    q_im: *mut f64,
) -> CpmStatus {
    guarded(|| {
        let phi = handle(family)?;
        if verdict.is_null() {
            return Err(null("verdict"));
        }
        let opts = IterationOptions::default();
        let cert = match target {
            CpmTarget::CPM_TARGET_UNITAL => find_unital_similarity(phi, opts.tol),
            CpmTarget::CPM_TARGET_CONTRACTIVE => find_contractive_similarity(phi, opts),
            CpmTarget::CPM_TARGET_STRICT => find_strict_contraction_similarity(phi, opts),
            CpmTarget::CPM_TARGET_PURE => find_pure_contractive_similarity(phi, opts),
        };
        *verdict = match cert.verdict {
            Verdict::Yes => CpmVerdict::CPM_VERDICT_YES,
            Verdict::No => CpmVerdict::CPM_VERDICT_NO,
            Verdict::Undetermined => CpmVerdict::CPM_VERDICT_UNDETERMINED,
        };
        if let (Some(q), false) = (&cert.witness_q, q_re.is_null()) {
            write_matrix(q.matrix(), q_re, q_im)?;
        }
        Ok(())
    })
}

fn curvature_options(level: i64) -> CurvatureOptions {
    CurvatureOptions {
        exact_level: usize::try_from(level).ok(),
        ..Default::default()
    }
}

unsafe fn defect_or_identity(
    phi: &KrausFamily,
    d_re: *const f64,
    d_im: *const f64,
) -> Result<HermitianOperator, (CpmStatus, String)> {
    if d_re.is_null() {
        Ok(HermitianOperator::identity(phi.dim()))
    } else {
        hermitian(d_re, d_im, phi.dim())
    }
}

/// *-curvature of `(phi, D)`; `D = I` when `d_re` is NULL. A nonnegative
/// `level` reports the sequence value at that index (truncated models).
///
/// # Safety
/// `out` and `converged` must be writable; `d_re`/`d_im` NULL or
/// `dim * dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn cpm_star_curvature(
    family: *const CpmKrausFamily,
    d_re: *const f64,
    d_im: *const f64,
    level: i64,
    out: *mut f64,
    converged: *mut bool,
) -> CpmStatus {
    guarded(|| {
        let phi = handle(family)?;
        if out.is_null() || converged.is_null() {
            return Err(null("output"));
        }
        let d = defect_or_identity(phi, d_re, d_im)?;
        let r = star_curvature(phi, &d, &curvature_options(level)).map_err(fail)?;
        *out = r.star_curvature;
        *converged = r.converged;
        Ok(())
    })
}

/// Euler characteristic of `(phi, D)`, with the same conventions as
/// [`cpm_star_curvature`].
///
/// # Safety
/// As for [`cpm_star_curvature`].
#[no_mangle]
pub unsafe extern "C" fn cpm_euler_characteristic(
    family: *const CpmKrausFamily,
    d_re: *const f64,
    d_im: *const f64,
    level: i64,
    out: *mut f64,
    converged: *mut bool,
) -> CpmStatus {
    guarded(|| {
        let phi = handle(family)?;
        if out.is_null() || converged.is_null() {
            return Err(null("output"));
        }
        let d = defect_or_identity(phi, d_re, d_im)?;
        let r = euler_characteristic(phi, &d, &curvature_options(level)).map_err(fail)?;
        *out = r.chi;
        *converged = r.converged;
        Ok(())
    })
}

/// Map classification as a JSON string. Free with [`cpm_string_free`].
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cpm_classify_json(family: *const CpmKrausFamily, out: *mut *mut c_char) -> CpmStatus {
    guarded(|| {
        let phi = handle(family)?;
        if out.is_null() {
            return Err(null("out"));
        }
        let c = phi.classify(IterationOptions::default().tol);
        let text = serde_json::to_string(&c).map_err(|e| (CpmStatus::CPM_INTERNAL, e.to_string()))?;
        *out = CString::new(text).map_err(|e| (CpmStatus::CPM_INTERNAL, e.to_string()))?.into_raw();
        Ok(())
    })
}

/// Runs a `cpmaps` command line, e.g. `"similarity --target strict --input
/// f.json --format json"`, and returns its standard output. `exit_code`
/// receives the command's exit status.
///
/// # Safety
/// `args` must be a NUL-terminated string; `out` and `exit_code` writable.
#[no_mangle]
pub unsafe extern "C" fn cpm_run_command(
    args: *const c_char,
    out: *mut *mut c_char,
    exit_code: *mut i32,
) -> CpmStatus {
    guarded(|| {
        if args.is_null() || out.is_null() || exit_code.is_null() {
            return Err(null("argument"));
        }
        let line = CStr::from_ptr(args)
            .to_str()
            .map_err(|e| (CpmStatus::CPM_MALFORMED_INPUT, e.to_string()))?;
        let argv = std::iter::once("cpmaps").chain(line.split_whitespace());
        let cli = <cpmaps::cli::Cli as clap::Parser>::try_parse_from(argv)
            .map_err(|e| (CpmStatus::CPM_MALFORMED_INPUT, e.to_string()))?;
        let outcome = cpmaps::cli::run(&cli).map_err(fail)?;
        let text = match cli.global.format {
            cpmaps::cli::Format::Json => cpmaps::cli::render_json(&outcome.report),
            cpmaps::cli::Format::Text => cpmaps::cli::render_text(&outcome.report),
        };
        *exit_code = outcome.exit_code;
        *out = CString::new(text).map_err(|e| (CpmStatus::CPM_INTERNAL, e.to_string()))?.into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn cpm_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
