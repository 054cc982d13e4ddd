//! C ABI over `pice-core`.
//!
//! Every function returns a [`PiceStatus`]; on failure the message is kept
//! per thread and read with [`pice_last_error_message`]. Objects cross the
//! boundary as opaque handles that the caller releases with the matching
//! `*_free` function. Matrices are dense row-major `double` arrays.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use pice_core::config::Config;
use pice_core::driver::{offline_train, BufferMode, ReplayBuffer, TrainConfig};
use pice_core::evaluator::{EvalConfig, TransitionSample};
use pice_core::improver::improve_policy;
use pice_core::matspace::{self, BallRadius};
use pice_core::nalgebra::DMatrix;
use pice_core::valuefn::{ActionBox, CostWeights, LinearPolicy, QFunction};
use pice_core::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PiceStatus {
    Ok = 0,
    NullPointer = 1,
    Dimension = 2,
    InvalidInput = 3,
    Numeric = 4,
    InvalidSample = 5,
    DegenerateBatch = 6,
    Divergence = 7,
    Unstable = 8,
    Parse = 9,
    Config = 10,
    Io = 11,
    InvalidUtf8 = 12,
    Panic = 13,
}

/// Q-function handle.
pub struct PiceQFunction(QFunction);

/// Policy handle.
pub struct PicePolicy(LinearPolicy);

/// Replay buffer handle.
pub struct PiceBuffer(ReplayBuffer);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> PiceStatus {
    match err {
        Error::Dimension(_) => PiceStatus::Dimension,
        Error::InvalidInput(_) => PiceStatus::InvalidInput,
        Error::Numeric(_) => PiceStatus::Numeric,
        Error::InvalidSample { .. } => PiceStatus::InvalidSample,
        Error::DegenerateBatch(_) => PiceStatus::DegenerateBatch,
        Error::Divergence { .. } => PiceStatus::Divergence,
        Error::Unstable(_) => PiceStatus::Unstable,
        Error::Parse { .. } => PiceStatus::Parse,
        Error::Config(_) => PiceStatus::Config,
        Error::Io { .. } => PiceStatus::Io,
    }
}

struct Fail(PiceStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> PiceStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PiceStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            PiceStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(PiceStatus::NullPointer, format!("{what} is null"))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(PiceStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn emit<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output handle"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

fn square(data: &[f64], dim: usize) -> DMatrix<f64> {
    DMatrix::from_row_slice(dim, dim, data)
}

fn write_row_major(m: &DMatrix<f64>, out: &mut [f64]) {
    let cols = m.ncols();
    for i in 0..m.nrows() {
        for j in 0..cols {
            out[i * cols + j] = m[(i, j)];
        }
    }
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn pice_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub extern "C" fn pice_clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pice_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Nearest PSD matrix to the symmetric `dim x dim` matrix `h`.
///
/// # Safety
/// `h` and `out` must point to `dim * dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn pice_proj_psd(h: *const f64, dim: usize, out: *mut f64) -> PiceStatus {
    guard(|| {
        let m = square(slice(h, dim * dim, "h")?, dim);
        let p = matspace::proj_psd(&m)?;
        write_row_major(&p, slice_mut(out, dim * dim, "out")?);
        Ok(())
    })
}

/// Projection of `h` onto the PSD matrices of Frobenius norm at most `delta`.
///
/// # Safety
/// `h` and `out` must point to `dim * dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn pice_proj_intersection(h: *const f64, dim: usize, delta: f64, out: *mut f64) -> PiceStatus {
    guard(|| {
        let m = square(slice(h, dim * dim, "h")?, dim);
        let radius = BallRadius::new(delta)?;
        let p = matspace::proj_intersection(&m, radius)?;
        write_row_major(&p, slice_mut(out, dim * dim, "out")?);
        Ok(())
    })
}

/// Q-function from its symmetric `dim x dim` value matrix, state first.
///
/// # Safety
/// `h` must point to `dim * dim` doubles; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pice_qfunction_from_matrix(
    h: *const f64,
    dim: usize,
    state_dim: usize,
    out: *mut *mut PiceQFunction,
) -> PiceStatus {
    guard(|| {
        let m = square(slice(h, dim * dim, "h")?, dim);
        let q = QFunction::from_matrix(&m, state_dim)?;
        emit(out, PiceQFunction(q))
    })
}

/// `Q(x, u)`.
///
/// # Safety
/// `q` must be a live handle, `x` and `u` must hold `nx` and `nu` doubles.
#[no_mangle]
pub unsafe extern "C" fn pice_qfunction_value(
    q: *const PiceQFunction,
    x: *const f64,
    nx: usize,
    u: *const f64,
    nu: usize,
    out: *mut f64,
) -> PiceStatus {
    guard(|| {
        let q = handle(q, "q")?;
        let v = q.0.value(slice(x, nx, "x")?, slice(u, nu, "u")?)?;
        *out.as_mut().ok_or_else(|| null("out"))? = v;
        Ok(())
    })
}

/// # Safety
/// `q` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn pice_qfunction_min_eigenvalue(q: *const PiceQFunction, out: *mut f64) -> PiceStatus {
    guard(|| {
        let v = handle(q, "q")?.0.min_eigenvalue();
        *out.as_mut().ok_or_else(|| null("out"))? = v;
        Ok(())
    })
}

/// # Safety
/// `q` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pice_qfunction_free(q: *mut PiceQFunction) {
    if !q.is_null() {
        drop(Box::from_raw(q));
    }
}

/// Box-clipped linear policy `u = clip(L x)` with `L` given row-major,
/// `action_dim x state_dim`, box `[-1, 1]`.
///
/// # Safety
/// `gain` must point to `action_dim * state_dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn pice_policy_from_gain(
    gain: *const f64,
    action_dim: usize,
    state_dim: usize,
    out: *mut *mut PicePolicy,
) -> PiceStatus {
    guard(|| {
        let g = slice(gain, action_dim * state_dim, "gain")?;
        let l = DMatrix::from_row_slice(action_dim, state_dim, g);
        emit(out, PicePolicy(LinearPolicy::from_gain(l, ActionBox::default())?))
    })
}

/// Greedy policy of `q` over the box `[-1, 1]`.
///
/// # Safety
/// `q` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn pice_policy_greedy(q: *const PiceQFunction, out: *mut *mut PicePolicy) -> PiceStatus {
    guard(|| {
        let q = handle(q, "q")?;
        emit(out, PicePolicy(improve_policy(&q.0, ActionBox::default())?))
    })
}

/// # Safety
/// `p` must be a live handle, `x` must hold `nx` doubles and `u` room for `nu`.
#[no_mangle]
pub unsafe extern "C" fn pice_policy_act(
    p: *const PicePolicy,
    x: *const f64,
    nx: usize,
    u: *mut f64,
    nu: usize,
) -> PiceStatus {
    guard(|| {
        let p = handle(p, "policy")?;
        if nu != p.0.action_dim() {
            return Err(Fail(PiceStatus::Dimension, format!("action buffer must hold {}", p.0.action_dim())));
        }
        let a = p.0.try_act(slice(x, nx, "x")?)?;
        slice_mut(u, nu, "u")?.copy_from_slice(&a);
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pice_policy_load(path: *const c_char, out: *mut *mut PicePolicy) -> PiceStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        emit(out, PicePolicy(pice_core::io::read_policy(&path)?.policy))
    })
}

/// # Safety
/// `p` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn pice_policy_save(p: *const PicePolicy, path: *const c_char) -> PiceStatus {
    guard(|| {
        let p = handle(p, "policy")?;
        let path = path_arg(path, "path")?;
        pice_core::io::write_policy(&path, &p.0, None, None)?;
        Ok(())
    })
}

/// # Safety
/// `p` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pice_policy_free(p: *mut PicePolicy) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Empty offline buffer holding at most `capacity` samples.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pice_buffer_new(capacity: usize, out: *mut *mut PiceBuffer) -> PiceStatus {
    guard(|| emit(out, PiceBuffer(ReplayBuffer::new(capacity, BufferMode::OfflineFixed))))
}

/// Append the four-tuple `(x, u, g, x_next)`.
///
/// # Safety
/// `b` must be a live handle; `x`, `x_next` hold `nx` doubles, `u` holds `nu`.
#[no_mangle]
pub unsafe extern "C" fn pice_buffer_push(
    b: *mut PiceBuffer,
    x: *const f64,
    nx: usize,
    u: *const f64,
    nu: usize,
    g: f64,
    x_next: *const f64,
) -> PiceStatus {
    guard(|| {
        let b = b.as_mut().ok_or_else(|| null("buffer"))?;
        let s = TransitionSample::new(
            slice(x, nx, "x")?.to_vec(),
            slice(u, nu, "u")?.to_vec(),
            g,
            slice(x_next, nx, "x_next")?.to_vec(),
        );
        s.validate(nx, nu)
            .map_err(|reason| Fail(PiceStatus::InvalidSample, reason))?;
        b.0.push(s)?;
        Ok(())
    })
}

/// Load a JSON-lines buffer file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pice_buffer_load(path: *const c_char, out: *mut *mut PiceBuffer) -> PiceStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        emit(out, PiceBuffer(pice_core::io::read_buffer(&path)?))
    })
}

/// # Safety
/// `b` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn pice_buffer_len(b: *const PiceBuffer, out: *mut usize) -> PiceStatus {
    guard(|| {
        let n = handle(b, "buffer")?.0.len();
        *out.as_mut().ok_or_else(|| null("out"))? = n;
        Ok(())
    })
}

/// # Safety
/// `b` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pice_buffer_free(b: *mut PiceBuffer) {
    if !b.is_null() {
        drop(Box::from_raw(b));
    }
}

/// Offline policy iteration from the zero policy with default cost weights
/// and training settings. `policy_updates` and `converged` may be null.
///
/// # Safety
/// `b` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pice_offline_train(
    b: *const PiceBuffer,
    out: *mut *mut PicePolicy,
    policy_updates: *mut usize,
    converged: *mut bool,
) -> PiceStatus {
    guard(|| {
        let b = handle(b, "buffer")?;
        let w = CostWeights::default();
        let first = b.0.samples().first().ok_or_else(|| Error::DegenerateBatch("buffer is empty".into()))?;
        if first.x.len() != w.state_dim() || first.u.len() != w.action_dim() {
            return Err(Error::Dimension("default weights expect 2 states and 3 actions".into()).into());
        }
        let pi0 = LinearPolicy::zero(w.state_dim(), w.action_dim());
        let res = offline_train(&b.0, &w, &TrainConfig::default(), &EvalConfig::default(), &pi0)?;
        if let Some(n) = policy_updates.as_mut() {
            *n = res.policy_updates();
        }
        if let Some(c) = converged.as_mut() {
            *c = res.converged;
        }
        emit(out, PicePolicy(res.policy))
    })
}

/// Run the experiment described by a TOML config file, writing outputs under
/// `out_dir`. `threads` of 0 means one worker.
///
/// # Safety
/// `config_path` and `out_dir` must be NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn pice_run_config(config_path: *const c_char, out_dir: *const c_char, threads: usize) -> PiceStatus {
    guard(|| {
        let cfg = Config::load(&path_arg(config_path, "config_path")?)?;
        let out = path_arg(out_dir, "out_dir")?;
        pice_core::experiment::run(&cfg, &out, threads.max(1))?;
        Ok(())
    })
}
