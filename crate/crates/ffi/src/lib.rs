//! C ABI over the `sphs` library.
//!
//! Handles are opaque and owned by the caller once returned; free them with
//! the matching `_free` function. Every fallible function returns an
//! [`SphsStatus`]; on failure the message is available from
//! [`sphs_last_error_message`] on the same thread. Matrices cross the
//! boundary row-major. Strings returned by the library must be released with
//! [`sphs_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use nalgebra::DMatrix;
use sphs::interconnect::{interconnect, InterconnectSpec};
use sphs::linalg::TolerancePolicy;
use sphs::model::{parse_system, serialize_phs, serialize_sltis, validate_storage};
use sphs::observability::unobservable_subspace;
use sphs::passivity::{certify, compile_phs, extract_phs};
use sphs::simulate::{simulate_paths, SimConfig};
use sphs::storage::{value_iteration, RiccatiConfig};
use sphs::{Error, Model, QuadraticStorage, Sltis};

/// Result code of every fallible call. `SPHS_STATUS_OK` is zero.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SphsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    Shape = 4,
    Structure = 5,
    NotPsd = 6,
    NonFinite = 7,
    PreconditionFailed = 8,
    Infeasible = 9,
    NumericalDivergence = 10,
    Callback = 11,
    ResourceLimit = 12,
    SingularCoupling = 13,
    Io = 14,
    MissingStorage = 15,
    BufferTooSmall = 16,
    Panic = 99,
}

impl From<&Error> for SphsStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Parse(_) => Self::Parse,
            Error::Shape(_) => Self::Shape,
            Error::Structure { .. } => Self::Structure,
            Error::NotPsd { .. } => Self::NotPsd,
            Error::NonFinite(_) => Self::NonFinite,
            Error::PreconditionFailed(_) => Self::PreconditionFailed,
            Error::Infeasible(_) => Self::Infeasible,
            Error::NumericalDivergence(_) => Self::NumericalDivergence,
            Error::Callback(_) => Self::Callback,
            Error::ResourceLimit(_) => Self::ResourceLimit,
            Error::SingularCoupling { .. } => Self::SingularCoupling,
            Error::Io(_) => Self::Io,
        }
    }
}

/// Relative tolerance and absolute floor of every numerical decision.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SphsTolerance {
    pub rel_tol: f64,
    pub abs_floor: f64,
}

/// Outcome of [`sphs_certify`].
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct SphsPassivity {
    pub lmi_ok: bool,
    pub lmi_max_eig: f64,
    pub diffusion_ok: bool,
    pub pathwise_lmi_ok: bool,
    pub passive: bool,
    pub local_supermartingale: bool,
    pub supermartingale: bool,
    pub stochastically_passive: bool,
}

/// Outcome of [`sphs_observability`].
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct SphsObservability {
    pub observable: bool,
    pub rank: usize,
    pub unobservable_dim: usize,
}

/// Scalar diagnostics of [`sphs_storage`]; `Q_min` goes to a caller buffer.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct SphsStorage {
    pub converged: bool,
    pub positive_definite: bool,
    pub riccati_residual: f64,
    pub lmi_margin: f64,
    pub horizon: f64,
    pub last_relative_change: f64,
}

/// A stochastic linear system, optionally with a storage matrix.
pub struct SphsSystem {
    sys: Sltis,
    q: Option<DMatrix<f64>>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_last_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

struct Failure(SphsStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(SphsStatus::from(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(SphsStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, converting errors and panics into a status plus last-error message.
fn guard<F>(f: F) -> SphsStatus
where
    F: FnOnce() -> Result<(), Failure>,
{
    clear_last_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SphsStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_string());
            set_last_error(format!("internal panic: {msg}"));
            SphsStatus::Panic
        }
    }
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Failure(SphsStatus::InvalidUtf8, format!("{what}: {e}")))
}

unsafe fn system_ref<'a>(p: *const SphsSystem, what: &str) -> Result<&'a SphsSystem, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

fn tolerance(t: SphsTolerance) -> Result<TolerancePolicy, Failure> {
    Ok(TolerancePolicy::new(t.rel_tol, t.abs_floor)?)
}

fn storage_of(h: &SphsSystem, tol: TolerancePolicy) -> Result<QuadraticStorage, Failure> {
    let q = h.q.clone().ok_or_else(|| {
        Failure(
            SphsStatus::MissingStorage,
            "system has no storage matrix; call sphs_system_set_q".into(),
        )
    })?;
    Ok(validate_storage(&h.sys, &q, tol)?)
}

unsafe fn emit_string(s: String, out: *mut *mut c_char) -> Result<(), Failure> {
    let c = CString::new(s).map_err(|e| Failure(SphsStatus::Panic, e.to_string()))?;
    *out = c.into_raw();
    Ok(())
}

fn emit_system(sys: Sltis, q: Option<DMatrix<f64>>, out: *mut *mut SphsSystem) {
    // SAFETY: callers check `out` for null before computing.
    unsafe { *out = Box::into_raw(Box::new(SphsSystem { sys, q })) };
}

/// Default tolerance: relative 1e-9, floor 1e-12.
#[no_mangle]
pub extern "C" fn sphs_tolerance_default() -> SphsTolerance {
    let t = TolerancePolicy::default();
    SphsTolerance {
        rel_tol: t.rel_tol,
        abs_floor: t.abs_floor,
    }
}

/// Message of the last failure on this thread, or null. Valid until the next call.
#[no_mangle]
pub extern "C" fn sphs_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn sphs_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses a system document. Port-Hamiltonian documents are compiled and keep their `Q`.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sphs_system_from_json(
    json: *const c_char,
    out: *mut *mut SphsSystem,
) -> SphsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let doc = parse_system(read_str(json, "json")?)?;
        match doc.model {
            Model::Sltis(s) => emit_system(s, doc.q, out),
            Model::Phs(p) => {
                let q = p.parts().q.clone();
                emit_system(compile_phs(&p)?, Some(q), out);
            }
        }
        Ok(())
    })
}

/// Serializes a system (with its `Q`, if set) to JSON.
///
/// # Safety
/// `sys` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sphs_system_to_json(
    sys: *const SphsSystem,
    out: *mut *mut c_char,
) -> SphsStatus {
    guard(|| {
        let h = system_ref(sys, "sys")?;
        if out.is_null() {
            return Err(null("out"));
        }
        emit_string(serialize_sltis(&h.sys, h.q.as_ref()), out)
    })
}

/// Releases a system handle. Null is ignored.
///
/// # Safety
/// `sys` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn sphs_system_free(sys: *mut SphsSystem) {
    if !sys.is_null() {
        drop(Box::from_raw(sys));
    }
}

/// State, input and noise dimensions. Any output pointer may be null.
///
/// # Safety
/// `sys` must be a live handle; non-null outputs must be valid.
#[no_mangle]
pub unsafe extern "C" fn sphs_system_dims(
    sys: *const SphsSystem,
    d: *mut usize,
    n: *mut usize,
    k: *mut usize,
) -> SphsStatus {
    guard(|| {
        let h = system_ref(sys, "sys")?;
        for (p, v) in [
            (d, h.sys.state_dim()),
            (n, h.sys.input_dim()),
            (k, h.sys.noise_dim()),
        ] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Sets the storage matrix from `d*d` row-major values after validating it.
///
/// # Safety
/// `sys` must be a live handle and `q` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sphs_system_set_q(
    sys: *mut SphsSystem,
    q: *const f64,
    len: usize,
    tol: SphsTolerance,
) -> SphsStatus {
    guard(|| {
        let h = sys.as_mut().ok_or_else(|| null("sys"))?;
        if q.is_null() {
            return Err(null("q"));
        }
        let d = h.sys.state_dim();
        if len != d * d {
            return Err(Failure(
                SphsStatus::Shape,
                format!("Q needs {} entries, got {len}", d * d),
            ));
        }
        let m = DMatrix::from_row_slice(d, d, std::slice::from_raw_parts(q, len));
        validate_storage(&h.sys, &m, tolerance(tol)?)?;
        h.q = Some(m);
        Ok(())
    })
}

/// Certifies the four passivity notions for the stored `Q`.
///
/// # Safety
/// `sys` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sphs_certify(
    sys: *const SphsSystem,
    tol: SphsTolerance,
    out: *mut SphsPassivity,
) -> SphsStatus {
    guard(|| {
        let h = system_ref(sys, "sys")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let r = certify(&h.sys, &storage_of(h, tolerance(tol)?)?)?;
        *out = SphsPassivity {
            lmi_ok: r.lmi_ok,
            lmi_max_eig: r.lmi_max_eig,
            diffusion_ok: r.diffusion_ok,
            pathwise_lmi_ok: r.pathwise_lmi_ok,
            passive: r.verdicts.passive.is_certified(),
            local_supermartingale: r.verdicts.local_supermartingale.is_certified(),
            supermartingale: r.verdicts.supermartingale.is_certified(),
            stochastically_passive: r.verdicts.stochastically_passive.is_certified(),
        };
        Ok(())
    })
}

/// Decides observability.
///
/// # Safety
/// `sys` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sphs_observability(
    sys: *const SphsSystem,
    tol: SphsTolerance,
    out: *mut SphsObservability,
) -> SphsStatus {
    guard(|| {
        let h = system_ref(sys, "sys")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let r = unobservable_subspace(&h.sys, &tolerance(tol)?)?;
        *out = SphsObservability {
            observable: r.observable,
            rank: r.rank,
            unobservable_dim: r.unobservable_dim,
        };
        Ok(())
    })
}

/// Port-Hamiltonian parameters for the stored `Q`, as JSON.
///
/// # Safety
/// `sys` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sphs_extract_phs(
    sys: *const SphsSystem,
    tol: SphsTolerance,
    out: *mut *mut c_char,
) -> SphsStatus {
    guard(|| {
        let h = system_ref(sys, "sys")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let phs = extract_phs(&h.sys, &storage_of(h, tolerance(tol)?)?)?;
        emit_string(serialize_phs(&phs), out)
    })
}

/// Minimal storage by value iteration. `q_out` receives `d*d` row-major values.
///
/// # Safety
/// `sys` must be a live handle, `q_out` must hold `q_len` doubles and `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn sphs_storage(
    sys: *const SphsSystem,
    step: f64,
    max_horizon: f64,
    convergence_tol: f64,
    tol: SphsTolerance,
    q_out: *mut f64,
    q_len: usize,
    out: *mut SphsStorage,
) -> SphsStatus {
    guard(|| {
        let h = system_ref(sys, "sys")?;
        if q_out.is_null() || out.is_null() {
            return Err(null("output"));
        }
        let d = h.sys.state_dim();
        if q_len < d * d {
            return Err(Failure(
                SphsStatus::BufferTooSmall,
                format!("q_out needs {} entries, got {q_len}", d * d),
            ));
        }
        let cfg = RiccatiConfig {
            step,
            max_horizon,
            convergence_tol,
            ..RiccatiConfig::default()
        };
        let r = value_iteration(&h.sys, &cfg, &tolerance(tol)?)?;
        let dst = std::slice::from_raw_parts_mut(q_out, d * d);
        let q = r.q_min.matrix();
        for i in 0..d {
            for j in 0..d {
                dst[i * d + j] = q[(i, j)];
            }
        }
        *out = SphsStorage {
            converged: r.converged,
            positive_definite: r.positive_definite,
            riccati_residual: r.riccati_residual,
            lmi_margin: r.lmi_margin,
            horizon: r.horizon,
            last_relative_change: r.last_relative_change,
        };
        Ok(())
    })
}

/// Monte Carlo ensemble under zero control, returned as CSV.
///
/// # Safety
/// `sys` must be a live handle, `x0` must hold `d` doubles and `out` be valid.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn sphs_simulate_csv(
    sys: *const SphsSystem,
    t_end: f64,
    dt: f64,
    n_paths: usize,
    seed: u64,
    x0: *const f64,
    parallel: bool,
    out: *mut *mut c_char,
) -> SphsStatus {
    guard(|| {
        let h = system_ref(sys, "sys")?;
        if x0.is_null() {
            return Err(null("x0"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let storage = storage_of(h, TolerancePolicy::default())?;
        let x0 = std::slice::from_raw_parts(x0, h.sys.state_dim()).to_vec();
        let mut cfg = SimConfig::new(t_end, dt, n_paths, seed, x0);
        cfg.parallel = parallel;
        let ens = simulate_paths(&h.sys, &storage, &cfg)?;
        emit_string(ens.to_csv(), out)
    })
}

/// Couples two systems with `{"K": ..., "n_hat": ...}`. Storage matrices combine block-diagonally.
///
/// # Safety
/// Both handles must be live, `coupling_json` NUL-terminated and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn sphs_interconnect(
    first: *const SphsSystem,
    second: *const SphsSystem,
    coupling_json: *const c_char,
    tol: SphsTolerance,
    out: *mut *mut SphsSystem,
) -> SphsStatus {
    guard(|| {
        let a = system_ref(first, "first")?;
        let b = system_ref(second, "second")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let spec = InterconnectSpec::from_json(read_str(coupling_json, "coupling_json")?)?;
        let sys = interconnect(&a.sys, &b.sys, &spec, &tolerance(tol)?)?;
        let q = match (&a.q, &b.q) {
            (Some(x), Some(y)) => Some(sphs::linalg::block_diag(x, y)),
            _ => None,
        };
        emit_system(sys, q, out);
        Ok(())
    })
}
