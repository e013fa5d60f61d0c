//! C ABI over the iglab library.
//!
//! Objects are opaque handles created by `*_new` functions and released by
//! the matching `*_free`. Every fallible function returns an
//! [`IglabStatus`]; on anything but `IGLAB_STATUS_OK` or
//! `IGLAB_STATUS_FAILS` a message is available from
//! [`iglab_last_error_message`] on the calling thread. Panics never cross
//! the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use iglab::cli::{verify_example, CliError};
use iglab::mechanisms::{CdmKind, CdmSpec, MdmKind, MdmSpec};
use iglab::model::{AffineGaussianFamily, ResponsePattern, ThetaGrid};
use iglab::nalgebra::DVector;
use iglab::numerics::QuadratureSpec;
use iglab::verifiers::{self, CheckConfig, Verdict};
use iglab::{Error, Status};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IglabStatus {
    Ok = 0,
    /// A check ran and its verdict is Fails, or a canned example mismatched.
    Fails = 1,
    InvalidArgument = 2,
    Numerical = 3,
    NullPointer = 4,
    Panic = 5,
}

/// Opaque affine Gaussian family.
pub struct IglabFamily(AffineGaussianFamily);

/// Opaque missing-data mechanism.
pub struct IglabMdm(MdmSpec);

/// Opaque censoring mechanism.
pub struct IglabCdm(CdmSpec);

/// Grid and tolerance settings for the checks. Obtain defaults from
/// [`iglab_check_options_default`] and override fields as needed.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct IglabCheckOptions {
    pub theta_lo: f64,
    pub theta_hi: f64,
    pub theta_per_axis: usize,
    pub probe_points: usize,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub seed: u64,
    pub gh_order: usize,
    /// Single ψ to check at, `psi_len` values; null means the mechanism's
    /// default probe set.
    pub psi: *const f64,
    pub psi_len: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct IglabVerdict {
    pub holds: bool,
    pub deviation: f64,
    pub tolerance: f64,
    pub probes: usize,
    pub skipped: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

struct Failure(IglabStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if e.is_numerical() {
            IglabStatus::Numerical
        } else {
            IglabStatus::InvalidArgument
        };
        Failure(code, e.to_string())
    }
}

impl From<CliError> for Failure {
    fn from(e: CliError) -> Self {
        let code = match e {
            CliError::Usage(_) => IglabStatus::InvalidArgument,
            CliError::Numerical(_) => IglabStatus::Numerical,
        };
        Failure(code, e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(IglabStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<IglabStatus, Failure>) -> IglabStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(status)) => status,
        Ok(Err(Failure(code, msg))) => {
            set_last_error(msg);
            code
        }
        Err(_) => {
            set_last_error("internal panic");
            IglabStatus::Panic
        }
    }
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| Failure(IglabStatus::NullPointer, format!("{what} is null")))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut()
        .ok_or_else(|| Failure(IglabStatus::NullPointer, format!("{what} is null")))
}

unsafe fn array<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure(IglabStatus::NullPointer, format!("{what} is null")));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn string<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(IglabStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not valid UTF-8")))
}

fn boxed<T>(value: T, out: &mut *mut T) -> IglabStatus {
    *out = Box::into_raw(Box::new(value));
    IglabStatus::Ok
}

/// Message of the most recent failure on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn iglab_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn iglab_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr().cast()
}

/// Family `N(Aθ + b, Σ)` with `A` (k×d) and `Σ` (k×k) in row-major order.
///
/// # Safety
/// `a`, `b` and `sigma` must point to `k*d`, `k` and `k*k` doubles.
#[no_mangle]
pub unsafe extern "C" fn iglab_family_new(
    k: usize,
    d: usize,
    a: *const f64,
    b: *const f64,
    sigma: *const f64,
    out: *mut *mut IglabFamily,
) -> IglabStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let a = array(a, k * d, "a")?;
        let b = array(b, k, "b")?;
        let sigma = array(sigma, k * k, "sigma")?;
        let fam = AffineGaussianFamily::from_row_major(k, d, a, b, sigma)?;
        Ok(boxed(IglabFamily(fam), out))
    })
}

/// Built-in family by name: `example_3_1`, `complete_control`, `scalar`,
/// or `iid_<k>` (e.g. `iid_3`).
///
/// # Safety
/// `name` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn iglab_family_builtin(name: *const c_char, out: *mut *mut IglabFamily) -> IglabStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let fam = match string(name, "name")? {
            "example_3_1" => AffineGaussianFamily::example_3_1(),
            "complete_control" => AffineGaussianFamily::complete_control(),
            "scalar" => AffineGaussianFamily::scalar_normal(),
            other => match other.strip_prefix("iid_").and_then(|k| k.parse().ok()) {
                Some(k) => AffineGaussianFamily::iid_normal(k)?,
                None => return Err(invalid(format!("unknown family {other:?}"))),
            },
        };
        Ok(boxed(IglabFamily(fam), out))
    })
}

/// # Safety
/// `family` must come from a family constructor and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn iglab_family_free(family: *mut IglabFamily) {
    if !family.is_null() {
        drop(Box::from_raw(family));
    }
}

/// # Safety
/// `family` must be a live handle; `k` and `d` must be writable.
#[no_mangle]
pub unsafe extern "C" fn iglab_family_dims(family: *const IglabFamily, k: *mut usize, d: *mut usize) -> IglabStatus {
    guard(|| {
        let fam = &handle(family, "family")?.0;
        *out_ptr(k, "k")? = fam.k();
        *out_ptr(d, "d")? = fam.d();
        Ok(IglabStatus::Ok)
    })
}

/// `ln f(y; θ)`.
///
/// # Safety
/// `y` and `theta` must point to `y_len` and `theta_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn iglab_family_log_density(
    family: *const IglabFamily,
    y: *const f64,
    y_len: usize,
    theta: *const f64,
    theta_len: usize,
    out: *mut f64,
) -> IglabStatus {
    guard(|| {
        let fam = &handle(family, "family")?.0;
        let out = out_ptr(out, "out")?;
        let y = DVector::from_column_slice(array(y, y_len, "y")?);
        let theta = DVector::from_column_slice(array(theta, theta_len, "theta")?);
        *out = fam.log_density(&theta, &y)?;
        Ok(IglabStatus::Ok)
    })
}

/// Mechanism by kind name (`mar_logistic`, `mnar_logistic`, `ex32`, `ex33`,
/// `table`) for responses of dimension `k`.
///
/// # Safety
/// `kind` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn iglab_mdm_new(kind: *const c_char, k: usize, out: *mut *mut IglabMdm) -> IglabStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let kind: MdmKind = string(kind, "kind")?.parse()?;
        Ok(boxed(IglabMdm(MdmSpec::new(kind, k)?), out))
    })
}

/// # Safety
/// `mdm` must come from [`iglab_mdm_new`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn iglab_mdm_free(mdm: *mut IglabMdm) {
    if !mdm.is_null() {
        drop(Box::from_raw(mdm));
    }
}

/// `f(r | y; ψ)`; `r` holds `k` bytes, nonzero meaning observed.
///
/// # Safety
/// `r` and `y` must point to `k` elements, `psi` to `psi_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn iglab_mdm_prob(
    mdm: *const IglabMdm,
    r: *const u8,
    y: *const f64,
    k: usize,
    psi: *const f64,
    psi_len: usize,
    out: *mut f64,
) -> IglabStatus {
    guard(|| {
        let mdm = &handle(mdm, "mdm")?.0;
        let out = out_ptr(out, "out")?;
        if r.is_null() {
            return Err(Failure(IglabStatus::NullPointer, "r is null".into()));
        }
        let bits: Vec<bool> = slice::from_raw_parts(r, k).iter().map(|&b| b != 0).collect();
        let y = array(y, k, "y")?;
        let psi = array(psi, psi_len, "psi")?;
        *out = mdm.prob(&ResponsePattern::new(bits), y, psi)?;
        Ok(IglabStatus::Ok)
    })
}

/// Censoring mechanism by kind name (`ex41`, `car_censor`).
///
/// # Safety
/// `kind` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn iglab_cdm_new(kind: *const c_char, out: *mut *mut IglabCdm) -> IglabStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let kind: CdmKind = string(kind, "kind")?.parse()?;
        Ok(boxed(IglabCdm(CdmSpec::new(kind)), out))
    })
}

/// # Safety
/// `cdm` must come from [`iglab_cdm_new`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn iglab_cdm_free(cdm: *mut IglabCdm) {
    if !cdm.is_null() {
        drop(Box::from_raw(cdm));
    }
}

/// Density of the censoring time `g` given `(y1, y2)`.
///
/// # Safety
/// `cdm` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn iglab_cdm_density(
    cdm: *const IglabCdm,
    g: f64,
    y1: f64,
    y2: f64,
    psi: f64,
    out: *mut f64,
) -> IglabStatus {
    guard(|| {
        let cdm = &handle(cdm, "cdm")?.0;
        *out_ptr(out, "out")? = cdm.density(g, &[y1, y2], psi)?;
        Ok(IglabStatus::Ok)
    })
}

#[no_mangle]
pub extern "C" fn iglab_check_options_default() -> IglabCheckOptions {
    IglabCheckOptions {
        theta_lo: verifiers::DEFAULT_THETA_LO,
        theta_hi: verifiers::DEFAULT_THETA_HI,
        theta_per_axis: verifiers::DEFAULT_THETA_PER_AXIS,
        probe_points: verifiers::DEFAULT_PROBE_POINTS,
        rel_tol: verifiers::DEFAULT_REL_TOL,
        abs_tol: verifiers::DEFAULT_ABS_TOL,
        seed: verifiers::DEFAULT_CHECK_SEED,
        gh_order: QuadratureSpec::default().gh_order,
        psi: ptr::null(),
        psi_len: 0,
    }
}

unsafe fn config(options: *const IglabCheckOptions, d: usize) -> Result<CheckConfig, Failure> {
    let o = match options.as_ref() {
        Some(o) => *o,
        None => iglab_check_options_default(),
    };
    let mut cfg = CheckConfig::for_dim(d);
    cfg.theta_grid = ThetaGrid::uniform(d, o.theta_lo, o.theta_hi, o.theta_per_axis)?;
    cfg.probe_points = o.probe_points;
    cfg.rel_tol = o.rel_tol;
    cfg.abs_tol = o.abs_tol;
    cfg.seed = o.seed;
    cfg.quad.gh_order = o.gh_order;
    if !o.psi.is_null() {
        cfg.psi_values = Some(vec![array(o.psi, o.psi_len, "psi")?.to_vec()]);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn finish(verdict: Verdict, out: &mut IglabVerdict) -> IglabStatus {
    *out = IglabVerdict {
        holds: verdict.status == Status::Holds,
        deviation: verdict.deviation,
        tolerance: verdict.tolerance,
        probes: verdict.probes,
        skipped: verdict.skipped,
    };
    if verdict.holds() {
        IglabStatus::Ok
    } else {
        IglabStatus::Fails
    }
}

/// MAR check. Returns `IGLAB_STATUS_OK` for Holds, `IGLAB_STATUS_FAILS`
/// for Fails; `out` is filled in both cases. `options` may be null.
///
/// # Safety
/// Handles must be live; `options` null or valid; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn iglab_check_mar(
    family: *const IglabFamily,
    mdm: *const IglabMdm,
    options: *const IglabCheckOptions,
    out: *mut IglabVerdict,
) -> IglabStatus {
    guard(|| {
        let fam = &handle(family, "family")?.0;
        let mdm = &handle(mdm, "mdm")?.0;
        let out = out_ptr(out, "out")?;
        let cfg = config(options, fam.d())?;
        Ok(finish(verifiers::check_mar(mdm, fam, &cfg)?, out))
    })
}

/// Likelihood-ignorability check for a missing-data mechanism.
///
/// # Safety
/// As [`iglab_check_mar`].
#[no_mangle]
pub unsafe extern "C" fn iglab_check_lig(
    family: *const IglabFamily,
    mdm: *const IglabMdm,
    options: *const IglabCheckOptions,
    out: *mut IglabVerdict,
) -> IglabStatus {
    guard(|| {
        let fam = &handle(family, "family")?.0;
        let mdm = &handle(mdm, "mdm")?.0;
        let out = out_ptr(out, "out")?;
        let cfg = config(options, fam.d())?;
        Ok(finish(verifiers::check_lig(fam, mdm, &cfg)?, out))
    })
}

/// Coarsening-at-random check; uses standard normal probes for `y₁`.
///
/// # Safety
/// As [`iglab_check_mar`].
#[no_mangle]
pub unsafe extern "C" fn iglab_check_car(
    cdm: *const IglabCdm,
    options: *const IglabCheckOptions,
    out: *mut IglabVerdict,
) -> IglabStatus {
    guard(|| {
        let cdm = &handle(cdm, "cdm")?.0;
        let out = out_ptr(out, "out")?;
        let cfg = config(options, 1)?;
        Ok(finish(verifiers::check_car(cdm, &cfg)?, out))
    })
}

/// Coarse-data ignorability check for a bivariate family.
///
/// # Safety
/// As [`iglab_check_mar`].
#[no_mangle]
pub unsafe extern "C" fn iglab_check_cdm_lig(
    family: *const IglabFamily,
    cdm: *const IglabCdm,
    options: *const IglabCheckOptions,
    out: *mut IglabVerdict,
) -> IglabStatus {
    guard(|| {
        let fam = &handle(family, "family")?.0;
        let cdm = &handle(cdm, "cdm")?.0;
        let out = out_ptr(out, "out")?;
        let cfg = config(options, fam.d())?;
        Ok(finish(verifiers::check_cdm_lig(fam, cdm, &cfg)?, out))
    })
}

/// Holds when `E_θ[cᵀ(Y − b)] = 0` over the θ grid.
///
/// # Safety
/// `c` must point to `c_len` doubles; otherwise as [`iglab_check_mar`].
#[no_mangle]
pub unsafe extern "C" fn iglab_check_witness(
    family: *const IglabFamily,
    c: *const f64,
    c_len: usize,
    options: *const IglabCheckOptions,
    out: *mut IglabVerdict,
) -> IglabStatus {
    guard(|| {
        let fam = &handle(family, "family")?.0;
        let c = array(c, c_len, "c")?;
        let out = out_ptr(out, "out")?;
        let cfg = config(options, fam.d())?;
        Ok(finish(verifiers::check_witness(fam, c, &cfg)?, out))
    })
}

/// Run a canned example (`"3.1"`, `"3.2"`, `"3.3"`, `"4.1"`, `"5.4"`) and
/// hand back the JSON report in `*report_json`, to be released with
/// [`iglab_string_free`]. Returns `IGLAB_STATUS_FAILS` when a verdict
/// does not match its expectation.
///
/// # Safety
/// `id` must be a NUL-terminated string; `report_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn iglab_verify_example(id: *const c_char, report_json: *mut *mut c_char) -> IglabStatus {
    guard(|| {
        let out = out_ptr(report_json, "report_json")?;
        let (report, ok) = verify_example(string(id, "id")?, false)?;
        let json = serde_json::to_string_pretty(&report).map_err(|e| invalid(e.to_string()))?;
        *out = CString::new(json).map_err(|e| invalid(e.to_string()))?.into_raw();
        Ok(if ok { IglabStatus::Ok } else { IglabStatus::Fails })
    })
}

/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn iglab_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
