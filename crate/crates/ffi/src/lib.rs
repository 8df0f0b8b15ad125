//! C ABI over the `gassa` library.
//!
//! Objects cross the boundary as opaque handles owned by the caller and
//! released with the matching `_free` function. Every fallible call returns a
//! [`GassaStatus`]; on failure a description is available from
//! [`gassa_last_error_message`] on the same thread. Matrices are dense,
//! row-major `double` arrays.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use gassa::gassa::{fit, GassaConfig, GassaResult};
use gassa::grassmann::{grassmann_dist, Subspace};
use gassa::io::{read_labeled_set, row_major};
use gassa::optim::OptimizerOptions;
use gassa::spd::{MetricKind, SymPosDef};
use gassa::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GassaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    NotSpd = 3,
    NotSymmetric = 4,
    DimMismatch = 5,
    NoConvergence = 6,
    SingularTransform = 7,
    BadDims = 8,
    RankDeficient = 9,
    InsufficientData = 10,
    DegenerateSegment = 11,
    BadWindow = 12,
    GenerationFailure = 13,
    EmptyClass = 14,
    Schema = 15,
    Config = 16,
    AllRestartsFailed = 17,
    Assertion = 18,
    Io = 19,
    Json = 20,
    Csv = 21,
    BufferTooSmall = 22,
    Panic = 99,
}

impl From<&Error> for GassaStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::NotSpd { .. } => GassaStatus::NotSpd,
            Error::NotSymmetric { .. } => GassaStatus::NotSymmetric,
            Error::DimMismatch { .. } => GassaStatus::DimMismatch,
            Error::NoConvergence { .. } => GassaStatus::NoConvergence,
            Error::SingularTransform { .. } => GassaStatus::SingularTransform,
            Error::BadDims(_) => GassaStatus::BadDims,
            Error::RankDeficient => GassaStatus::RankDeficient,
            Error::InsufficientData(_) => GassaStatus::InsufficientData,
            Error::DegenerateSegment(_) => GassaStatus::DegenerateSegment,
            Error::BadWindow(_) => GassaStatus::BadWindow,
            Error::GenerationFailure(_) => GassaStatus::GenerationFailure,
            Error::EmptyClass(_) => GassaStatus::EmptyClass,
            Error::Schema(_) => GassaStatus::Schema,
            Error::Config(_) => GassaStatus::Config,
            Error::AllRestartsFailed { .. } => GassaStatus::AllRestartsFailed,
            Error::Assertion(_) => GassaStatus::Assertion,
            Error::Io(_) => GassaStatus::Io,
            Error::Json(_) => GassaStatus::Json,
            Error::Csv(_) => GassaStatus::Csv,
        }
    }
}

/// `metric` argument values.
pub const GASSA_METRIC_AIRM: u32 = 0;
pub const GASSA_METRIC_STEIN: u32 = 1;

/// Options for [`gassa_fit`]; obtain defaults from [`gassa_fit_options_default`].
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct GassaFitOptions {
    pub metric: u32,
    pub whiten: bool,
    pub m: usize,
    pub restarts: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub grad_tol: f64,
}

/// A set of same-sized SPD matrices.
pub struct GassaMatrixSet {
    dim: usize,
    covs: Vec<SymPosDef>,
}

/// Outcome of [`gassa_fit`].
pub struct GassaFitResult {
    inner: GassaResult,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

/// Runs `f`, recording any error or panic for [`gassa_last_error_message`].
fn guard(f: impl FnOnce() -> Result<(), (GassaStatus, String)>) -> GassaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error(String::new());
            GassaStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic".into());
            GassaStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (GassaStatus, String) {
    (GassaStatus::from(&e), format!("{}: {e}", e.category()))
}

fn null(what: &str) -> (GassaStatus, String) {
    (GassaStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> (GassaStatus, String) {
    (GassaStatus::InvalidArgument, msg.into())
}

fn metric_of(code: u32) -> Result<MetricKind, (GassaStatus, String)> {
    match code {
        GASSA_METRIC_AIRM => Ok(MetricKind::Airm),
        GASSA_METRIC_STEIN => Ok(MetricKind::Stein),
        other => Err(invalid(format!("unknown metric code {other}"))),
    }
}

/// # Safety
/// `data` must be null or point to `len` readable doubles.
unsafe fn slice<'a>(data: *const f64, len: usize, what: &str) -> Result<&'a [f64], (GassaStatus, String)> {
    if data.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(data, len))
}

/// # Safety
/// `out` must be null or point to `len` writable doubles.
unsafe fn write_out(out: *mut f64, len: usize, values: &[f64]) -> Result<(), (GassaStatus, String)> {
    if out.is_null() {
        return Err(null("output buffer"));
    }
    if len < values.len() {
        return Err((GassaStatus::BufferTooSmall, format!("need {} doubles, buffer holds {len}", values.len())));
    }
    std::slice::from_raw_parts_mut(out, values.len()).copy_from_slice(values);
    Ok(())
}

fn spd_from(dim: usize, data: &[f64]) -> Result<SymPosDef, (GassaStatus, String)> {
    if data.len() != dim * dim {
        return Err(invalid(format!("expected {} entries for a {dim}x{dim} matrix, got {}", dim * dim, data.len())));
    }
    SymPosDef::from_row_major(dim, data).map_err(lib_err)
}

/// Description of the last failure on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn gassa_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gassa_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[no_mangle]
pub extern "C" fn gassa_fit_options_default() -> GassaFitOptions {
    let cfg = GassaConfig::default();
    GassaFitOptions {
        metric: GASSA_METRIC_AIRM,
        whiten: cfg.whiten,
        m: cfg.m,
        restarts: cfg.restarts,
        seed: cfg.seed,
        max_iter: cfg.optimizer.max_iter,
        grad_tol: cfg.optimizer.grad_tol,
    }
}

/// New empty set of `dim×dim` matrices, or null when `dim` is 0.
#[no_mangle]
pub extern "C" fn gassa_matrix_set_new(dim: usize) -> *mut GassaMatrixSet {
    if dim == 0 {
        set_last_error("dimension must be positive".into());
        return ptr::null_mut();
    }
    Box::into_raw(Box::new(GassaMatrixSet { dim, covs: Vec::new() }))
}

/// Load a JSON covariance set (labels are ignored).
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn gassa_matrix_set_read_json(path: *const c_char, out: *mut *mut GassaMatrixSet) -> GassaStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let path = CStr::from_ptr(path).to_str().map_err(|_| invalid("path is not UTF-8"))?;
        let (covs, _) = read_labeled_set(Path::new(path)).map_err(lib_err)?;
        let dim = covs[0].dim();
        if covs.iter().any(|c| c.dim() != dim) {
            return Err(lib_err(Error::Schema("matrices of different sizes".into())));
        }
        *out = Box::into_raw(Box::new(GassaMatrixSet { dim, covs }));
        Ok(())
    })
}

/// Validate and append a row-major `dim×dim` matrix.
///
/// # Safety
/// `set` must come from this library; `data` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn gassa_matrix_set_push(set: *mut GassaMatrixSet, data: *const f64, len: usize) -> GassaStatus {
    guard(|| {
        let set = set.as_mut().ok_or_else(|| null("set"))?;
        let m = spd_from(set.dim, slice(data, len, "data")?)?;
        set.covs.push(m);
        Ok(())
    })
}

/// Number of matrices in the set (0 for null).
///
/// # Safety
/// `set` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn gassa_matrix_set_len(set: *const GassaMatrixSet) -> usize {
    set.as_ref().map_or(0, |s| s.covs.len())
}

/// Matrix dimension of the set (0 for null).
///
/// # Safety
/// `set` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn gassa_matrix_set_dim(set: *const GassaMatrixSet) -> usize {
    set.as_ref().map_or(0, |s| s.dim)
}

/// # Safety
/// `set` must be null or come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn gassa_matrix_set_free(set: *mut GassaMatrixSet) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

/// Squared AIRM distance or Stein divergence between two row-major matrices.
///
/// # Safety
/// `x` and `y` must hold `dim*dim` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gassa_distance2(
    metric: u32,
    dim: usize,
    x: *const f64,
    y: *const f64,
    out: *mut f64,
) -> GassaStatus {
    guard(|| {
        let metric = metric_of(metric)?;
        let x = spd_from(dim, slice(x, dim * dim, "x")?)?;
        let y = spd_from(dim, slice(y, dim * dim, "y")?)?;
        let d = metric.dist2(&x, &y).map_err(lib_err)?;
        *out.as_mut().ok_or_else(|| null("out"))? = d;
        Ok(())
    })
}

/// Metric-matched mean of the set, written row-major into `out`.
///
/// # Safety
/// `set` must come from this library; `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn gassa_mean(metric: u32, set: *const GassaMatrixSet, out: *mut f64, len: usize) -> GassaStatus {
    guard(|| {
        let metric = metric_of(metric)?;
        let set = set.as_ref().ok_or_else(|| null("set"))?;
        let mean = metric.mean(&set.covs).map_err(lib_err)?;
        write_out(out, len, &mean.to_row_major())
    })
}

/// Grassmann distance between the column spans of two row-major `d×k` matrices.
///
/// # Safety
/// `a` and `b` must hold `d*k` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gassa_grassmann_dist(
    d: usize,
    k: usize,
    a: *const f64,
    b: *const f64,
    out: *mut f64,
) -> GassaStatus {
    guard(|| {
        if k == 0 || k > d {
            return Err(invalid(format!("need 1 <= k <= d, got k={k}, d={d}")));
        }
        let span = |p: *const f64, what: &str| -> Result<Subspace, (GassaStatus, String)> {
            let data = slice(p, d * k, what)?;
            Subspace::from_span(&gassa::nalgebra::DMatrix::from_row_slice(d, k, data)).map_err(lib_err)
        };
        let dist = grassmann_dist(&span(a, "a")?, &span(b, "b")?).map_err(lib_err)?;
        *out.as_mut().ok_or_else(|| null("out"))? = dist;
        Ok(())
    })
}

/// Fit gaSSA to the set. On success `*out` receives a result handle.
///
/// # Safety
/// `set` must come from this library, `opts` must be readable and `out`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn gassa_fit(
    set: *const GassaMatrixSet,
    opts: *const GassaFitOptions,
    out: *mut *mut GassaFitResult,
) -> GassaStatus {
    guard(|| {
        let set = set.as_ref().ok_or_else(|| null("set"))?;
        let opts = opts.as_ref().ok_or_else(|| null("opts"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let config = GassaConfig {
            metric: metric_of(opts.metric)?,
            whiten: opts.whiten,
            m: opts.m,
            restarts: opts.restarts,
            seed: opts.seed,
            optimizer: OptimizerOptions { max_iter: opts.max_iter, grad_tol: opts.grad_tol, ..Default::default() },
            ..Default::default()
        };
        let inner = fit(&set.covs, &config).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(GassaFitResult { inner }));
        Ok(())
    })
}

/// Ambient dimension `D` and stationary dimension `m` of a result.
///
/// # Safety
/// `res` must come from this library; `d` and `m` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gassa_fit_result_dims(res: *const GassaFitResult, d: *mut usize, m: *mut usize) -> GassaStatus {
    guard(|| {
        let res = res.as_ref().ok_or_else(|| null("result"))?;
        *d.as_mut().ok_or_else(|| null("d"))? = res.inner.s_basis.ambient_dim();
        *m.as_mut().ok_or_else(|| null("m"))? = res.inner.s_basis.sub_dim();
        Ok(())
    })
}

/// Final cost of the winning restart.
///
/// # Safety
/// `res` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gassa_fit_result_cost(res: *const GassaFitResult, out: *mut f64) -> GassaStatus {
    guard(|| {
        let res = res.as_ref().ok_or_else(|| null("result"))?;
        *out.as_mut().ok_or_else(|| null("out"))? = res.inner.cost;
        Ok(())
    })
}

/// Orthonormal basis of the stationary projection, row-major `D×m`.
///
/// # Safety
/// `res` must come from this library; `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn gassa_fit_result_s_basis(res: *const GassaFitResult, out: *mut f64, len: usize) -> GassaStatus {
    guard(|| {
        let res = res.as_ref().ok_or_else(|| null("result"))?;
        write_out(out, len, &row_major(res.inner.s_basis.basis()))
    })
}

/// Orthonormal basis of the estimated n-space, row-major `D×(D−m)`.
///
/// # Safety
/// `res` must come from this library; `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn gassa_fit_result_n_basis(res: *const GassaFitResult, out: *mut f64, len: usize) -> GassaStatus {
    guard(|| {
        let res = res.as_ref().ok_or_else(|| null("result"))?;
        write_out(out, len, &row_major(res.inner.n_basis.basis()))
    })
}

/// The full result as JSON; release with [`gassa_string_free`]. Null on failure.
///
/// # Safety
/// `res` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn gassa_fit_result_to_json(res: *const GassaFitResult) -> *mut c_char {
    let mut json = ptr::null_mut();
    let status = guard(|| {
        let res = res.as_ref().ok_or_else(|| null("result"))?;
        let text = serde_json::to_string(&res.inner).map_err(|e| lib_err(e.into()))?;
        json = CString::new(text).map_err(|_| invalid("JSON contains NUL"))?.into_raw();
        Ok(())
    });
    if status == GassaStatus::Ok {
        json
    } else {
        ptr::null_mut()
    }
}

/// # Safety
/// `res` must be null or come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn gassa_fit_result_free(res: *mut GassaFitResult) {
    if !res.is_null() {
        drop(Box::from_raw(res));
    }
}

/// # Safety
/// `s` must be null or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn gassa_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
