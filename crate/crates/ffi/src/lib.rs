//! C interface to `cpkl`.
//!
//! Objects are opaque handles created by `cpkl_*` constructors and released
//! with the matching `*_free`. Every fallible call returns a [`CpklStatus`];
//! on failure [`cpkl_last_error_message`] describes the error for the calling
//! thread. Indices passed in are 0-based.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use cpkl::io::{read_coo_file, read_model_file, write_model_file};
use cpkl::{
    fit, generate, score_greedy, Error, FitConfig, FitResult, GenConfig, KruskalModel, Method,
    Shape, SparseCountTensor,
};

/// Sparse count tensor.
pub struct CpklTensor(SparseCountTensor);

/// CP model: weights plus one column-normalized factor matrix per mode.
pub struct CpklModel(KruskalModel);

/// Outcome of [`cpkl_fit`].
pub struct CpklFitResult(FitResult);

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CpklStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    ShapeMismatch = 5,
    InvalidModel = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CpklMethod {
    Pdnr = 0,
    Pqnr = 1,
    Mu = 2,
}

impl From<CpklMethod> for Method {
    fn from(m: CpklMethod) -> Self {
        match m {
            CpklMethod::Pdnr => Method::Pdnr,
            CpklMethod::Pqnr => Method::Pqnr,
            CpklMethod::Mu => Method::Mu,
        }
    }
}

/// Fit settings. Fill with [`cpkl_fit_options_default`] and then adjust.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CpklFitOptions {
    pub method: CpklMethod,
    pub rank: usize,
    pub outer_max: usize,
    pub tau: f64,
    /// Seconds; zero or negative means no limit.
    pub time_limit: f64,
    pub seed: u64,
    /// Row-solve threads; 0 uses all cores.
    pub workers: usize,
    pub mode1_only: bool,
}

impl CpklFitOptions {
    fn to_config(self) -> FitConfig {
        FitConfig {
            outer_max: self.outer_max,
            tau: self.tau,
            time_limit: (self.time_limit > 0.0).then_some(self.time_limit),
            seed: self.seed,
            workers: self.workers,
            mode1_only: self.mode1_only,
            ..FitConfig::new(self.method.into(), self.rank)
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: impl Into<String>) {
    let text = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn clear_last_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(err: &Error) -> CpklStatus {
    match err {
        Error::Io { .. } => CpklStatus::Io,
        Error::Parse { .. } | Error::Json(_) => CpklStatus::Parse,
        Error::ShapeMismatch(_) => CpklStatus::ShapeMismatch,
        Error::InvalidModel(_) => CpklStatus::InvalidModel,
        _ => CpklStatus::InvalidArgument,
    }
}

struct Failure(CpklStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(CpklStatus::NullPointer, format!("{what} is null"))
}

fn invalid(message: impl Into<String>) -> Failure {
    Failure(CpklStatus::InvalidArgument, message.into())
}

/// Runs `f`, catching panics, and records the error message on failure.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CpklStatus {
    clear_last_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CpklStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_last_error(message);
            status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {message}"));
            CpklStatus::Panic
        }
    }
}

unsafe fn reference<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn array<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn path_arg(p: *const c_char) -> Result<String, Failure> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(str::to_owned)
        .map_err(|_| invalid("path is not valid UTF-8"))
}

unsafe fn store<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn copy_out(src: &[f64], out: *mut f64, len: usize) -> Result<(), Failure> {
    if len < src.len() {
        return Err(invalid(format!(
            "buffer holds {len} values, {} needed",
            src.len()
        )));
    }
    if out.is_null() {
        return Err(null("output buffer"));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), out, src.len());
    Ok(())
}

/// Message for the last failed call on this thread, or null. The pointer is
/// valid until the next `cpkl_*` call on the same thread.
#[no_mangle]
pub extern "C" fn cpkl_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Reads a COO text file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cpkl_tensor_read_coo(
    path: *const c_char,
    out: *mut *mut CpklTensor,
) -> CpklStatus {
    guard(|| {
        let path = path_arg(path)?;
        store(out, CpklTensor(read_coo_file(path)?))
    })
}

/// Builds a tensor from `nnz` entries. `indices` holds `nnz * ndims` 0-based
/// subscripts, one entry after another.
///
/// # Safety
/// `dims` must point to `ndims` values, `indices` to `nnz * ndims` values and
/// `counts` to `nnz` values.
#[no_mangle]
pub unsafe extern "C" fn cpkl_tensor_from_coo(
    ndims: usize,
    dims: *const usize,
    nnz: usize,
    indices: *const usize,
    counts: *const u64,
    out: *mut *mut CpklTensor,
) -> CpklStatus {
    guard(|| {
        let dims = array(dims, ndims, "dims")?;
        let total = nnz
            .checked_mul(ndims)
            .ok_or_else(|| invalid("nnz * ndims overflows"))?;
        let indices = array(indices, total, "indices")?;
        let counts = array(counts, nnz, "counts")?;
        let shape = Shape::new(dims.to_vec())?;
        let entries = counts
            .iter()
            .enumerate()
            .map(|(k, &c)| (indices[k * ndims..(k + 1) * ndims].to_vec(), c))
            .collect();
        store(
            out,
            CpklTensor(SparseCountTensor::from_entries(shape, entries)?),
        )
    })
}

/// # Safety
/// `tensor` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cpkl_tensor_nnz(tensor: *const CpklTensor) -> usize {
    tensor.as_ref().map_or(0, |t| t.0.nnz())
}

/// # Safety
/// `tensor` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cpkl_tensor_ndims(tensor: *const CpklTensor) -> usize {
    tensor.as_ref().map_or(0, |t| t.0.ndims())
}

/// Sum of all counts.
///
/// # Safety
/// `tensor` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cpkl_tensor_total_count(tensor: *const CpklTensor) -> u64 {
    tensor.as_ref().map_or(0, |t| t.0.total_count())
}

/// # Safety
/// `tensor` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cpkl_tensor_free(tensor: *mut CpklTensor) {
    if !tensor.is_null() {
        drop(Box::from_raw(tensor));
    }
}

/// Samples a synthetic tensor with the default boost settings and returns
/// it together with the generating model.
///
/// # Safety
/// `dims` must point to `ndims` values; `tensor_out` and `truth_out` must be
/// valid pointers.
#[no_mangle]
pub unsafe extern "C" fn cpkl_generate(
    ndims: usize,
    dims: *const usize,
    rank: usize,
    samples: u64,
    seed: u64,
    tensor_out: *mut *mut CpklTensor,
    truth_out: *mut *mut CpklModel,
) -> CpklStatus {
    guard(|| {
        let dims = array(dims, ndims, "dims")?;
        if tensor_out.is_null() || truth_out.is_null() {
            return Err(null("output pointer"));
        }
        let (tensor, truth) = generate(&GenConfig::new(dims.to_vec(), rank, samples, seed))?;
        store(tensor_out, CpklTensor(tensor))?;
        store(truth_out, CpklModel(truth))
    })
}

/// Default options for `rank` components: PDN-R, tau 1e-4, 200 outer
/// iterations, no time limit, seed 0, all cores.
///
/// # Safety
/// `options` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cpkl_fit_options_default(
    rank: usize,
    options: *mut CpklFitOptions,
) -> CpklStatus {
    guard(|| {
        let options = options.as_mut().ok_or_else(|| null("options"))?;
        let c = FitConfig::new(Method::Pdnr, rank);
        *options = CpklFitOptions {
            method: CpklMethod::Pdnr,
            rank,
            outer_max: c.outer_max,
            tau: c.tau,
            time_limit: 0.0,
            seed: c.seed,
            workers: c.workers,
            mode1_only: c.mode1_only,
        };
        Ok(())
    })
}

/// Fits a model from a random start.
///
/// # Safety
/// `tensor` must be a live handle, `options` a valid pointer and `out` a
/// valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cpkl_fit(
    tensor: *const CpklTensor,
    options: *const CpklFitOptions,
    out: *mut *mut CpklFitResult,
) -> CpklStatus {
    guard(|| {
        let tensor = reference(tensor, "tensor")?;
        let options = reference(options, "options")?;
        store(out, CpklFitResult(fit(&tensor.0, &options.to_config())?))
    })
}

/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cpkl_fit_result_converged(result: *const CpklFitResult) -> bool {
    result.as_ref().is_some_and(|r| r.0.converged)
}

/// KKT violation at the end of the fit; NaN for a null handle.
///
/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cpkl_fit_result_final_kkt(result: *const CpklFitResult) -> f64 {
    result.as_ref().map_or(f64::NAN, |r| r.0.final_kkt)
}

/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cpkl_fit_result_outer_iterations(result: *const CpklFitResult) -> usize {
    result.as_ref().map_or(0, |r| r.0.trace.len())
}

/// Copies the per-iteration objective values into `out`. `len` must be at
/// least [`cpkl_fit_result_outer_iterations`].
///
/// # Safety
/// `result` must be a live handle and `out` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn cpkl_fit_result_objectives(
    result: *const CpklFitResult,
    out: *mut f64,
    len: usize,
) -> CpklStatus {
    guard(|| {
        let result = reference(result, "result")?;
        copy_out(&result.0.trace.objectives(), out, len)
    })
}

/// Copies the fitted model into a new handle.
///
/// # Safety
/// `result` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cpkl_fit_result_model(
    result: *const CpklFitResult,
    out: *mut *mut CpklModel,
) -> CpklStatus {
    guard(|| {
        let result = reference(result, "result")?;
        store(out, CpklModel(result.0.model.clone()))
    })
}

/// # Safety
/// `result` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cpkl_fit_result_free(result: *mut CpklFitResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// Reads a model JSON file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cpkl_model_read(
    path: *const c_char,
    out: *mut *mut CpklModel,
) -> CpklStatus {
    guard(|| {
        let path = path_arg(path)?;
        store(out, CpklModel(read_model_file(path)?))
    })
}

/// Writes a model JSON file.
///
/// # Safety
/// `model` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn cpkl_model_write(
    model: *const CpklModel,
    path: *const c_char,
) -> CpklStatus {
    guard(|| {
        let model = reference(model, "model")?;
        let path = path_arg(path)?;
        Ok(write_model_file(&model.0, path)?)
    })
}

/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cpkl_model_rank(model: *const CpklModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.rank())
}

/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cpkl_model_ndims(model: *const CpklModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.ndims())
}

/// Size of `mode`, or 0 when out of range.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cpkl_model_dim(model: *const CpklModel, mode: usize) -> usize {
    model
        .as_ref()
        .and_then(|m| m.0.dims().get(mode).copied())
        .unwrap_or(0)
}

/// Copies the `rank` weights into `out`.
///
/// # Safety
/// `model` must be a live handle and `out` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn cpkl_model_lambda(
    model: *const CpklModel,
    out: *mut f64,
    len: usize,
) -> CpklStatus {
    guard(|| {
        let model = reference(model, "model")?;
        copy_out(model.0.lambda(), out, len)
    })
}

/// Copies factor `mode` into `out`, row-major, `dim * rank` values.
///
/// # Safety
/// `model` must be a live handle and `out` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn cpkl_model_factor(
    model: *const CpklModel,
    mode: usize,
    out: *mut f64,
    len: usize,
) -> CpklStatus {
    guard(|| {
        let model = reference(model, "model")?;
        if mode >= model.0.ndims() {
            return Err(invalid(format!("mode {mode} out of range")));
        }
        copy_out(model.0.factor(mode).as_slice(), out, len)
    })
}

/// KL objective `sum m - x log m` of `model` on `tensor`.
///
/// # Safety
/// `model` and `tensor` must be live handles and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cpkl_model_kl_objective(
    model: *const CpklModel,
    tensor: *const CpklTensor,
    out: *mut f64,
) -> CpklStatus {
    guard(|| {
        let model = reference(model, "model")?;
        let tensor = reference(tensor, "tensor")?;
        let out = out.as_mut().ok_or_else(|| null("output pointer"))?;
        if model.0.dims() != tensor.0.shape().dims() {
            return Err(Failure(
                CpklStatus::ShapeMismatch,
                format!(
                    "model dims {:?}, tensor dims {:?}",
                    model.0.dims(),
                    tensor.0.shape().dims()
                ),
            ));
        }
        *out = model.0.kl_objective(&tensor.0);
        Ok(())
    })
}

/// Greedy congruence score of `model` against `truth`, in [0, 1].
///
/// # Safety
/// `model` and `truth` must be live handles and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cpkl_score(
    model: *const CpklModel,
    truth: *const CpklModel,
    out: *mut f64,
) -> CpklStatus {
    guard(|| {
        let model = reference(model, "model")?;
        let truth = reference(truth, "truth")?;
        let out = out.as_mut().ok_or_else(|| null("output pointer"))?;
        *out = score_greedy(&model.0, &truth.0)?.score;
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cpkl_model_free(model: *mut CpklModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
