//! C ABI over the matrix nearness and field decomposition routines.
//!
//! Objects cross the boundary as opaque handles (`VpMatrix`, `VpField`)
//! created by `vp_*_new` style constructors and released with the matching
//! `vp_*_free`. Every fallible call returns a `VpStatus`; the message of the
//! most recent failure on the calling thread is available through
//! `vp_last_error_message`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};

use volpres::decompose::{divfree_approx, hamiltonian_approx, DecomposeResult};
use volpres::field::{Boundary, Grid, GridField, MapSpec};
use volpres::nearness::{project, verify_sl_sandwich, Target};
use volpres::{Error, Matrix};

/// Square matrix of size at most 8.
pub struct VpMatrix(Matrix);

/// Vector field sampled on a uniform grid.
pub struct VpField(GridField);

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Parse = 3,
    Domain = 4,
    Precondition = 5,
    SizeLimit = 6,
    NonConvergence = 7,
    BufferTooSmall = 8,
    Io = 9,
    Panic = 10,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VpTarget {
    SpecialLinear = 0,
    Traceless = 1,
    Rotation = 2,
    Skew = 3,
    SymplecticLie = 4,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VpBoundary {
    Periodic = 0,
    Clamped = 1,
}

/// Outcome of a projection: distance and the determinant-constraint multiplier.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct VpProjection {
    pub distance: f64,
    pub multiplier: f64,
    pub kkt_residual: f64,
}

/// Outcome of a decomposition: residual, right-hand side and their ratio.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct VpDecomposition {
    pub residual: f64,
    pub rhs: f64,
    pub ratio: f64,
    pub vacuous: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> VpStatus {
    match e {
        Error::Domain(_) => VpStatus::Domain,
        Error::Precondition(_) => VpStatus::Precondition,
        Error::InvalidInput(_) => VpStatus::InvalidInput,
        Error::NonConvergence { .. } | Error::LineSearch { .. } => VpStatus::NonConvergence,
        Error::SizeLimit(_) => VpStatus::SizeLimit,
        Error::Parse { .. } => VpStatus::Parse,
        Error::Io(_) => VpStatus::Io,
    }
}

enum Failure {
    Null(&'static str),
    Lib(Error),
    Buffer(usize),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> VpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => VpStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            VpStatus::NullPointer
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Ok(Err(Failure::Buffer(need))) => {
            set_error(format!("buffer too small: need {need} entries"));
            VpStatus::BufferTooSmall
        }
        Err(_) => {
            set_error("internal panic".into());
            VpStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &'static str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &'static str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::Null(what));
    }
    out.write(value);
    Ok(())
}

unsafe fn copy_out(src: &[f64], out: *mut f64, cap: usize) -> Result<(), Failure> {
    if cap < src.len() {
        return Err(Failure::Buffer(src.len()));
    }
    if out.is_null() {
        return Err(Failure::Null("output buffer"));
    }
    std::ptr::copy_nonoverlapping(src.as_ptr(), out, src.len());
    Ok(())
}

fn target_of(t: VpTarget) -> Target {
    match t {
        VpTarget::SpecialLinear => Target::SpecialLinear,
        VpTarget::Traceless => Target::Traceless,
        VpTarget::Rotation => Target::Rotation,
        VpTarget::Skew => Target::Skew,
        VpTarget::SymplecticLie => Target::SymplecticLie,
    }
}

fn boundary_of(b: VpBoundary) -> Boundary {
    match b {
        VpBoundary::Periodic => Boundary::Periodic,
        VpBoundary::Clamped => Boundary::Clamped,
    }
}

/// Copies the message of the last failure on this thread into `buf`
/// (NUL-terminated, truncated to `cap`). Returns the full message length.
///
/// # Safety
/// `buf` must be null or point to `cap` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn vp_last_error_message(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && cap > 0 {
            let n = msg.len().min(cap - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Creates an `n × n` matrix from `n * n` row-major entries.
///
/// # Safety
/// `entries` must point to `n * n` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vp_matrix_new(n: usize, entries: *const f64, out: *mut *mut VpMatrix) -> VpStatus {
    guard(|| {
        let len = n.checked_mul(n).ok_or_else(|| Error::InvalidInput("size overflow".into()))?;
        let m = Matrix::from_row_major(n, slice(entries, len, "entries")?)?;
        write_out(out, Box::into_raw(Box::new(VpMatrix(m))), "out")
    })
}

/// # Safety
/// `m` must be null or a handle from this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn vp_matrix_free(m: *mut VpMatrix) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Matrix size, or 0 for a null handle.
///
/// # Safety
/// `m` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn vp_matrix_dim(m: *const VpMatrix) -> usize {
    m.as_ref().map_or(0, |m| m.0.n())
}

/// Writes the row-major entries into `buf` of capacity `cap`.
///
/// # Safety
/// `m` must be a live handle; `buf` must point to `cap` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn vp_matrix_entries(m: *const VpMatrix, buf: *mut f64, cap: usize) -> VpStatus {
    guard(|| copy_out(&deref(m, "matrix")?.0.row_major(), buf, cap))
}

/// # Safety
/// `m` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vp_matrix_det(m: *const VpMatrix, out: *mut f64) -> VpStatus {
    guard(|| write_out(out, deref(m, "matrix")?.0.det(), "out"))
}

/// Nearest point of `target` to `m`. The projected matrix is returned as a
/// new handle in `out_matrix` (skipped when null).
///
/// # Safety
/// `m` must be a live handle; `out` must be writable; `out_matrix` may be null.
#[no_mangle]
pub unsafe extern "C" fn vp_project(
    m: *const VpMatrix,
    target: VpTarget,
    out: *mut VpProjection,
    out_matrix: *mut *mut VpMatrix,
) -> VpStatus {
    guard(|| {
        let r = project(&deref(m, "matrix")?.0, target_of(target))?;
        write_out(
            out,
            VpProjection {
                distance: r.distance,
                multiplier: r.multiplier,
                kkt_residual: r.kkt_residual,
            },
            "out",
        )?;
        if !out_matrix.is_null() {
            out_matrix.write(Box::into_raw(Box::new(VpMatrix(r.projected))));
        }
        Ok(())
    })
}

/// Checks the two-sided SL(n) distance bound for `m` at parameter `theta`.
/// `out_satisfied` receives whether both sides hold, `out_ratio` the larger
/// side ratio.
///
/// # Safety
/// `m` must be a live handle; both outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn vp_verify_sl_sandwich(
    m: *const VpMatrix,
    theta: f64,
    out_satisfied: *mut bool,
    out_ratio: *mut f64,
) -> VpStatus {
    guard(|| {
        let r = verify_sl_sandwich(&deref(m, "matrix")?.0, theta)?;
        write_out(out_satisfied, r.satisfied, "out_satisfied")?;
        write_out(out_ratio, r.ratio, "out_ratio")
    })
}

/// Creates a `dim`-component field on the grid with `n` nodes per axis on
/// `[lo, hi]^dim`; `values` holds `dim * n^dim` node-major entries.
///
/// # Safety
/// `values` must point to `len` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vp_field_new(
    dim: usize,
    n: usize,
    lo: f64,
    hi: f64,
    boundary: VpBoundary,
    values: *const f64,
    len: usize,
    out: *mut *mut VpField,
) -> VpStatus {
    guard(|| {
        let grid = Grid::cube(dim, n, lo, hi, boundary_of(boundary))?;
        let field = GridField::new(grid, dim, slice(values, len, "values")?.to_vec(), None)?;
        write_out(out, Box::into_raw(Box::new(VpField(field))), "out")
    })
}

/// Samples a named map family (e.g. `"twist"`, `"compress:0.3"`) on its
/// default domain with `n` nodes per axis.
///
/// # Safety
/// `spec` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vp_field_from_map(
    spec: *const c_char,
    dim: usize,
    n: usize,
    boundary: VpBoundary,
    out: *mut *mut VpField,
) -> VpStatus {
    guard(|| {
        if spec.is_null() {
            return Err(Failure::Null("spec"));
        }
        let text = CStr::from_ptr(spec)
            .to_str()
            .map_err(|_| Error::InvalidInput("spec is not UTF-8".into()))?;
        let map = MapSpec::parse(text)?;
        let (lo, hi) = map.default_domain();
        let grid = Grid::cube(dim, n, lo, hi, boundary_of(boundary))?;
        write_out(out, Box::into_raw(Box::new(VpField(map.sample(&grid)?))), "out")
    })
}

/// # Safety
/// `f` must be null or a handle from this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn vp_field_free(f: *mut VpField) {
    if !f.is_null() {
        drop(Box::from_raw(f));
    }
}

/// Number of stored values (`components × nodes`), or 0 for a null handle.
///
/// # Safety
/// `f` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn vp_field_len(f: *const VpField) -> usize {
    f.as_ref().map_or(0, |f| f.0.values.len())
}

/// # Safety
/// `f` must be a live handle; `buf` must point to `cap` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn vp_field_values(f: *const VpField, buf: *mut f64, cap: usize) -> VpStatus {
    guard(|| copy_out(&deref(f, "field")?.0.values, buf, cap))
}

unsafe fn decompose(
    f: *const VpField,
    p: f64,
    out: *mut VpDecomposition,
    out_field: *mut *mut VpField,
    solve: fn(&GridField, f64) -> volpres::Result<DecomposeResult>,
) -> VpStatus {
    guard(|| {
        let r = solve(&deref(f, "field")?.0, p)?;
        write_out(
            out,
            VpDecomposition {
                residual: r.residual_lp,
                rhs: r.rhs_lp,
                ratio: r.ratio,
                vacuous: r.vacuous,
            },
            "out",
        )?;
        if !out_field.is_null() {
            out_field.write(Box::into_raw(Box::new(VpField(r.corrected_field))));
        }
        Ok(())
    })
}

/// Divergence-free approximation in `L^p`; the corrected field is returned
/// in `out_field` unless it is null.
///
/// # Safety
/// `f` must be a live handle; `out` must be writable; `out_field` may be null.
#[no_mangle]
pub unsafe extern "C" fn vp_field_divfree(
    f: *const VpField,
    p: f64,
    out: *mut VpDecomposition,
    out_field: *mut *mut VpField,
) -> VpStatus {
    decompose(f, p, out, out_field, divfree_approx)
}

/// Hamiltonian approximation in `L^p` of a field of even dimension.
///
/// # Safety
/// Same contract as [`vp_field_divfree`].
#[no_mangle]
pub unsafe extern "C" fn vp_field_hamiltonian(
    f: *const VpField,
    p: f64,
    out: *mut VpDecomposition,
    out_field: *mut *mut VpField,
) -> VpStatus {
    decompose(f, p, out, out_field, hamiltonian_approx)
}
