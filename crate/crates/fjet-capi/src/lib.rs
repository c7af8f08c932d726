//! C ABI for the fjet library: opaque handles, integer status codes, and a
//! thread-local last-error message.
//!
//! Conventions:
//! - Every fallible function returns [`FjetStatus`]; out-parameters are
//!   written only when the result is `FJET_STATUS_OK`.
//! - On failure, [`fjet_last_error_message`] returns a description of the
//!   most recent error on the calling thread. The pointer stays valid until
//!   the next failing call on that thread.
//! - Handles (`FjetSystem`, `FjetDataset`, `FjetModel`, `FjetTrajectory`)
//!   are created and destroyed exclusively by this library; each has a
//!   matching `_free` function that accepts null.
//! - Strings returned through `char **` out-parameters are owned by the
//!   caller and must be released with [`fjet_string_free`].
//!
//! The build script generates `include/fjet.h` from this file.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use libc::{c_char, size_t};

use fjet::datagen::sample_dataset;
use fjet::regress::fit;
use fjet::simulate::generate;
use fjet::{
    Dataset, Domains, FJetModel, FeatureSet, Forcing, JetPoint, State, SystemKind, SystemSpec,
    Trajectory,
};

/// Result of a C API call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FjetStatus {
    /// The call succeeded.
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// The request was malformed (bad parameter name, range, or value).
    Config = 3,
    /// A computation produced a non-finite intermediate value.
    Overflow = 4,
    /// The operation is not supported for this input.
    Unsupported = 5,
    /// The regression design matrix is numerically rank-deficient.
    RankDeficient = 6,
    /// A feature string could not be parsed.
    Parse = 7,
    /// A file's contents are malformed or have an unsupported version.
    FileFormat = 8,
    /// An underlying I/O operation failed.
    Io = 9,
    /// An index argument was out of bounds.
    IndexOutOfBounds = 10,
    /// An internal invariant was violated; the library state is unchanged.
    Panic = 11,
}

/// Which row of an update map a query refers to.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FjetResponse {
    /// The position update Δu.
    Du = 0,
    /// The velocity update Δv.
    Dv = 1,
}

/// Cosine drive parameters: `p(t) = A cos(Ω t)`.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct FjetForcing {
    /// Amplitude A.
    pub amplitude: f64,
    /// Angular frequency Ω.
    pub frequency: f64,
}

/// Opaque handle to a reference system.
pub struct FjetSystem(SystemSpec);

/// Opaque handle to a sampled dataset of update records.
pub struct FjetDataset(Dataset);

/// Opaque handle to a fitted update-map model.
pub struct FjetModel(FJetModel);

/// Opaque handle to a generated trajectory.
pub struct FjetTrajectory(Trajectory);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

/// An error raised while servicing a C call, before or after entering the
/// library proper.
enum CallError {
    Null(&'static str),
    Utf8(&'static str),
    OutOfBounds(&'static str),
    Lib(fjet::Error),
}

impl From<fjet::Error> for CallError {
    fn from(e: fjet::Error) -> Self {
        CallError::Lib(e)
    }
}

impl CallError {
    fn status(&self) -> FjetStatus {
        match self {
            CallError::Null(_) => FjetStatus::NullArgument,
            CallError::Utf8(_) => FjetStatus::InvalidUtf8,
            CallError::OutOfBounds(_) => FjetStatus::IndexOutOfBounds,
            CallError::Lib(e) => match e {
                fjet::Error::Config(_) => FjetStatus::Config,
                fjet::Error::Overflow(_) => FjetStatus::Overflow,
                fjet::Error::Unsupported(_) => FjetStatus::Unsupported,
                fjet::Error::RankDeficient(_) => FjetStatus::RankDeficient,
                fjet::Error::FeatureParse { .. } => FjetStatus::Parse,
                fjet::Error::FileFormat { .. } => FjetStatus::FileFormat,
                fjet::Error::Io { .. } => FjetStatus::Io,
            },
        }
    }

    fn message(&self) -> String {
        match self {
            CallError::Null(name) => format!("argument '{name}' must not be null"),
            CallError::Utf8(name) => format!("argument '{name}' is not valid UTF-8"),
            CallError::OutOfBounds(name) => format!("argument '{name}' is out of bounds"),
            CallError::Lib(e) => e.to_string(),
        }
    }
}

fn set_last_error(msg: &str) {
    let sanitized: String = msg.chars().map(|c| if c == '\0' { ' ' } else { c }).collect();
    let cstring = CString::new(sanitized).expect("nul bytes removed");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = cstring);
}

/// Runs a fallible call body, converting panics and errors into status codes
/// and recording the error message.
fn run(body: impl FnOnce() -> Result<(), CallError>) -> FjetStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => FjetStatus::Ok,
        Ok(Err(e)) => {
            set_last_error(&e.message());
            e.status()
        }
        Err(_) => {
            set_last_error("internal panic");
            FjetStatus::Panic
        }
    }
}

unsafe fn ref_arg<'a, T>(ptr: *const T, name: &'static str) -> Result<&'a T, CallError> {
    ptr.as_ref().ok_or(CallError::Null(name))
}

unsafe fn out_arg<'a, T>(ptr: *mut T, name: &'static str) -> Result<&'a mut T, CallError> {
    ptr.as_mut().ok_or(CallError::Null(name))
}

unsafe fn str_arg<'a>(ptr: *const c_char, name: &'static str) -> Result<&'a str, CallError> {
    if ptr.is_null() {
        return Err(CallError::Null(name));
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| CallError::Utf8(name))
}

fn into_handle<T>(value: T) -> *mut T {
    Box::into_raw(Box::new(value))
}

unsafe fn free_handle<T>(ptr: *mut T) {
    if !ptr.is_null() {
        drop(Box::from_raw(ptr));
    }
}

// ---------------------------------------------------------------------------
// Library-level
// ---------------------------------------------------------------------------

/// Returns the library version as a static string.
#[no_mangle]
pub extern "C" fn fjet_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Returns a description of the most recent error on the calling thread, or
/// an empty string if no error has occurred. The pointer stays valid until
/// the next failing call on this thread.
#[no_mangle]
pub extern "C" fn fjet_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Releases a string returned through a `char **` out-parameter.
///
/// # Safety
/// `s` must be null or a pointer previously returned by this library through
/// a `char **` out-parameter, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fjet_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

// ---------------------------------------------------------------------------
// Systems
// ---------------------------------------------------------------------------

/// Creates a reference system.
///
/// `kind` is one of `"ho"`, `"pendulum"`, `"duffing"`. `param_names` /
/// `param_values` are `n_params` parallel entries overriding the system's
/// defaults; recognized names are `omega0`, `gamma` (oscillator, pendulum)
/// and `gamma`, `alpha`, `beta`, `A`, `Omega` (double-well). Pass
/// `n_params = 0` for all defaults.
///
/// # Safety
/// `kind` must be a valid C string; `param_names` must point to `n_params`
/// valid C strings and `param_values` to `n_params` doubles (both may be
/// null when `n_params` is 0); `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fjet_system_new(
    kind: *const c_char,
    param_names: *const *const c_char,
    param_values: *const f64,
    n_params: size_t,
    out: *mut *mut FjetSystem,
) -> FjetStatus {
    run(|| {
        let out = out_arg(out, "out")?;
        let kind: SystemKind = str_arg(kind, "kind")?.parse()?;
        let mut overrides = Vec::with_capacity(n_params);
        if n_params > 0 {
            if param_names.is_null() {
                return Err(CallError::Null("param_names"));
            }
            if param_values.is_null() {
                return Err(CallError::Null("param_values"));
            }
            for i in 0..n_params {
                let name = str_arg(*param_names.add(i), "param_names[i]")?;
                overrides.push((name, *param_values.add(i)));
            }
        }
        let spec = SystemSpec::from_params(kind, overrides)?;
        *out = into_handle(FjetSystem(spec));
        Ok(())
    })
}

/// Destroys a system handle (accepts null).
///
/// # Safety
/// `sys` must be null or an unfreed handle from `fjet_system_new`.
#[no_mangle]
pub unsafe extern "C" fn fjet_system_free(sys: *mut FjetSystem) {
    free_handle(sys);
}

/// Evaluates the system's right-hand side `(du/dt, dv/dt)` at `(t, u, v)`.
///
/// # Safety
/// `sys` must be a valid handle; `out_dudt` and `out_dvdt` must be valid
/// pointers.
#[no_mangle]
pub unsafe extern "C" fn fjet_system_eval_rhs(
    sys: *const FjetSystem,
    t: f64,
    u: f64,
    v: f64,
    out_dudt: *mut f64,
    out_dvdt: *mut f64,
) -> FjetStatus {
    run(|| {
        let sys = ref_arg(sys, "sys")?;
        let out_dudt = out_arg(out_dudt, "out_dudt")?;
        let out_dvdt = out_arg(out_dvdt, "out_dvdt")?;
        let state = State::new(u, v)?;
        let (du, dv) = sys.0.eval_rhs(t, state);
        *out_dudt = du;
        *out_dvdt = dv;
        Ok(())
    })
}

/// Evaluates the system's conserved-form energy at `(u, v)`. Returns
/// `FJET_STATUS_UNSUPPORTED` for systems without a defined energy (the
/// driven double-well).
///
/// # Safety
/// `sys` must be a valid handle; `out_energy` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fjet_system_energy(
    sys: *const FjetSystem,
    u: f64,
    v: f64,
    out_energy: *mut f64,
) -> FjetStatus {
    run(|| {
        let sys = ref_arg(sys, "sys")?;
        let out_energy = out_arg(out_energy, "out_energy")?;
        let state = State::new(u, v)?;
        let e = sys.0.energy(state).ok_or_else(|| {
            fjet::Error::Unsupported(format!(
                "no energy function defined for the {} system",
                sys.0.kind().as_str()
            ))
        })?;
        *out_energy = e;
        Ok(())
    })
}

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

/// Samples `n` update records from `sys` over its default phase-space
/// domains at step size `eps`, noise scale `sigma`, and RNG `seed`.
///
/// # Safety
/// `sys` must be a valid handle; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fjet_dataset_sample(
    sys: *const FjetSystem,
    n: size_t,
    eps: f64,
    sigma: f64,
    seed: u64,
    out: *mut *mut FjetDataset,
) -> FjetStatus {
    run(|| {
        let sys = ref_arg(sys, "sys")?;
        let out = out_arg(out, "out")?;
        let domains = Domains::for_system(&sys.0);
        let ds = sample_dataset(&sys.0, &domains, n, eps, sigma, seed)?;
        *out = into_handle(FjetDataset(ds));
        Ok(())
    })
}

/// Writes a dataset to `path` (CSV plus a metadata sidecar).
///
/// # Safety
/// `ds` must be a valid handle; `path` must be a valid C string.
#[no_mangle]
pub unsafe extern "C" fn fjet_dataset_save(
    ds: *const FjetDataset,
    path: *const c_char,
) -> FjetStatus {
    run(|| {
        let ds = ref_arg(ds, "ds")?;
        let path = str_arg(path, "path")?;
        ds.0.save(Path::new(path))?;
        Ok(())
    })
}

/// Reads a dataset previously written by `fjet_dataset_save`.
///
/// # Safety
/// `path` must be a valid C string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fjet_dataset_load(
    path: *const c_char,
    out: *mut *mut FjetDataset,
) -> FjetStatus {
    run(|| {
        let out = out_arg(out, "out")?;
        let path = str_arg(path, "path")?;
        let ds = Dataset::load(Path::new(path))?;
        *out = into_handle(FjetDataset(ds));
        Ok(())
    })
}

/// Number of records in a dataset (0 for null).
///
/// # Safety
/// `ds` must be null or a valid handle.
#[no_mangle]
pub unsafe extern "C" fn fjet_dataset_len(ds: *const FjetDataset) -> size_t {
    ds.as_ref().map_or(0, |ds| ds.0.len())
}

/// Step size the dataset was sampled at (NaN for null).
///
/// # Safety
/// `ds` must be null or a valid handle.
#[no_mangle]
pub unsafe extern "C" fn fjet_dataset_eps(ds: *const FjetDataset) -> f64 {
    ds.as_ref().map_or(f64::NAN, |ds| ds.0.eps)
}

/// Destroys a dataset handle (accepts null).
///
/// # Safety
/// `ds` must be null or an unfreed dataset handle.
#[no_mangle]
pub unsafe extern "C" fn fjet_dataset_free(ds: *mut FjetDataset) {
    free_handle(ds);
}

// ---------------------------------------------------------------------------
// Models
// ---------------------------------------------------------------------------

/// Fits an update-map model to `ds` by ordinary least squares.
///
/// `features_du` and `features_dv` are comma-separated feature lists (e.g.
/// `"u,v"` or `"v,sin(u),v*cos(u)"`) for the Δu and Δv rows.
///
/// # Safety
/// `ds` must be a valid handle; the feature lists must be valid C strings;
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fjet_model_fit(
    ds: *const FjetDataset,
    features_du: *const c_char,
    features_dv: *const c_char,
    out: *mut *mut FjetModel,
) -> FjetStatus {
    run(|| {
        let ds = ref_arg(ds, "ds")?;
        let out = out_arg(out, "out")?;
        let fdu = FeatureSet::parse_list(str_arg(features_du, "features_du")?)?;
        let fdv = FeatureSet::parse_list(str_arg(features_dv, "features_dv")?)?;
        let model = fit(&ds.0, &fdu, &fdv)?;
        *out = into_handle(FjetModel(model));
        Ok(())
    })
}

/// Writes a model to `path`.
///
/// # Safety
/// `m` must be a valid handle; `path` must be a valid C string.
#[no_mangle]
pub unsafe extern "C" fn fjet_model_save(m: *const FjetModel, path: *const c_char) -> FjetStatus {
    run(|| {
        let m = ref_arg(m, "m")?;
        let path = str_arg(path, "path")?;
        m.0.save(Path::new(path))?;
        Ok(())
    })
}

/// Reads a model previously written by `fjet_model_save`.
///
/// # Safety
/// `path` must be a valid C string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fjet_model_load(
    path: *const c_char,
    out: *mut *mut FjetModel,
) -> FjetStatus {
    run(|| {
        let out = out_arg(out, "out")?;
        let path = str_arg(path, "path")?;
        let model = FJetModel::load(Path::new(path))?;
        *out = into_handle(FjetModel(model));
        Ok(())
    })
}

/// Step size the model was fitted at (NaN for null).
///
/// # Safety
/// `m` must be null or a valid handle.
#[no_mangle]
pub unsafe extern "C" fn fjet_model_eps(m: *const FjetModel) -> f64 {
    m.as_ref().map_or(f64::NAN, |m| m.0.eps())
}

/// Number of features in the requested row (0 for null).
///
/// # Safety
/// `m` must be null or a valid handle.
#[no_mangle]
pub unsafe extern "C" fn fjet_model_feature_count(
    m: *const FjetModel,
    response: FjetResponse,
) -> size_t {
    m.as_ref().map_or(0, |m| match response {
        FjetResponse::Du => m.0.features_du().len(),
        FjetResponse::Dv => m.0.features_dv().len(),
    })
}

/// Returns the canonical string of feature `index` in the requested row
/// through `out_name`; release it with `fjet_string_free`.
///
/// # Safety
/// `m` must be a valid handle; `out_name` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fjet_model_feature_name(
    m: *const FjetModel,
    response: FjetResponse,
    index: size_t,
    out_name: *mut *mut c_char,
) -> FjetStatus {
    run(|| {
        let m = ref_arg(m, "m")?;
        let out_name = out_arg(out_name, "out_name")?;
        let features = match response {
            FjetResponse::Du => m.0.features_du(),
            FjetResponse::Dv => m.0.features_dv(),
        };
        let feature = features
            .iter()
            .nth(index)
            .ok_or(CallError::OutOfBounds("index"))?;
        let name = CString::new(feature.to_string()).expect("feature strings have no nul");
        *out_name = name.into_raw();
        Ok(())
    })
}

/// Returns the raw fitted coefficient of feature `index` in the requested
/// row through `out_coeff`.
///
/// # Safety
/// `m` must be a valid handle; `out_coeff` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fjet_model_coefficient(
    m: *const FjetModel,
    response: FjetResponse,
    index: size_t,
    out_coeff: *mut f64,
) -> FjetStatus {
    run(|| {
        let m = ref_arg(m, "m")?;
        let out_coeff = out_arg(out_coeff, "out_coeff")?;
        let coeffs = match response {
            FjetResponse::Du => m.0.coeffs_du(),
            FjetResponse::Dv => m.0.coeffs_dv(),
        };
        *out_coeff = *coeffs.get(index).ok_or(CallError::OutOfBounds("index"))?;
        Ok(())
    })
}

/// Evaluates the model's predicted updates `(Δu, Δv)` at a jet-space point.
/// `p` and `pdot` are the drive value and its derivative; pass 0 for models
/// that do not use a drive.
///
/// # Safety
/// `m` must be a valid handle; `out_du` and `out_dv` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn fjet_model_predict(
    m: *const FjetModel,
    t: f64,
    u: f64,
    v: f64,
    p: f64,
    pdot: f64,
    out_du: *mut f64,
    out_dv: *mut f64,
) -> FjetStatus {
    run(|| {
        let m = ref_arg(m, "m")?;
        let out_du = out_arg(out_du, "out_du")?;
        let out_dv = out_arg(out_dv, "out_dv")?;
        let (du, dv) = m.0.predict(&JetPoint { t, u, v, p, pdot });
        *out_du = du;
        *out_dv = dv;
        Ok(())
    })
}

/// Destroys a model handle (accepts null).
///
/// # Safety
/// `m` must be null or an unfreed model handle.
#[no_mangle]
pub unsafe extern "C" fn fjet_model_free(m: *mut FjetModel) {
    free_handle(m);
}

// ---------------------------------------------------------------------------
// Trajectories
// ---------------------------------------------------------------------------

/// Iterates the model's update map from `(u0, v0)` at time `t0` for `steps`
/// steps of the model's step size. `forcing` supplies the drive for models
/// that use `p`/`pdot` and may be null otherwise. If the orbit diverges the
/// trajectory is truncated at the last finite point.
///
/// # Safety
/// `m` must be a valid handle; `forcing` must be null or a valid pointer;
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fjet_trajectory_generate(
    m: *const FjetModel,
    u0: f64,
    v0: f64,
    t0: f64,
    steps: size_t,
    forcing: *const FjetForcing,
    out: *mut *mut FjetTrajectory,
) -> FjetStatus {
    run(|| {
        let m = ref_arg(m, "m")?;
        let out = out_arg(out, "out")?;
        let init = State::new(u0, v0)?;
        let forcing = forcing.as_ref().map(|f| Forcing {
            amplitude: f.amplitude,
            frequency: f.frequency,
        });
        let traj = generate(&m.0, init, t0, steps, forcing.as_ref())?;
        *out = into_handle(FjetTrajectory(traj));
        Ok(())
    })
}

/// Number of points in a trajectory, including the initial state (0 for
/// null).
///
/// # Safety
/// `traj` must be null or a valid handle.
#[no_mangle]
pub unsafe extern "C" fn fjet_trajectory_len(traj: *const FjetTrajectory) -> size_t {
    traj.as_ref().map_or(0, |t| t.0.points.len())
}

/// Whether the trajectory was cut short because the orbit diverged (false
/// for null).
///
/// # Safety
/// `traj` must be null or a valid handle.
#[no_mangle]
pub unsafe extern "C" fn fjet_trajectory_truncated(traj: *const FjetTrajectory) -> bool {
    traj.as_ref().is_some_and(|t| t.0.truncated)
}

/// Copies point `index` of the trajectory into `out_t`, `out_u`, `out_v`.
///
/// # Safety
/// `traj` must be a valid handle; the out-pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn fjet_trajectory_point(
    traj: *const FjetTrajectory,
    index: size_t,
    out_t: *mut f64,
    out_u: *mut f64,
    out_v: *mut f64,
) -> FjetStatus {
    run(|| {
        let traj = ref_arg(traj, "traj")?;
        let out_t = out_arg(out_t, "out_t")?;
        let out_u = out_arg(out_u, "out_u")?;
        let out_v = out_arg(out_v, "out_v")?;
        let point = traj
            .0
            .points
            .get(index)
            .ok_or(CallError::OutOfBounds("index"))?;
        *out_t = point.t;
        *out_u = point.u;
        *out_v = point.v;
        Ok(())
    })
}

/// Destroys a trajectory handle (accepts null).
///
/// # Safety
/// `traj` must be null or an unfreed trajectory handle.
#[no_mangle]
pub unsafe extern "C" fn fjet_trajectory_free(traj: *mut FjetTrajectory) {
    free_handle(traj);
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ptr::null_mut;

    unsafe fn make_system(kind: &str, params: &[(&str, f64)]) -> *mut FjetSystem {
        let kind = CString::new(kind).unwrap();
        let names: Vec<CString> = params.iter().map(|(n, _)| CString::new(*n).unwrap()).collect();
        let name_ptrs: Vec<*const c_char> = names.iter().map(|n| n.as_ptr()).collect();
        let values: Vec<f64> = params.iter().map(|&(_, v)| v).collect();
        let mut sys: *mut FjetSystem = null_mut();
        let status = fjet_system_new(
            kind.as_ptr(),
            name_ptrs.as_ptr(),
            values.as_ptr(),
            params.len(),
            &mut sys,
        );
        assert_eq!(status, FjetStatus::Ok);
        assert!(!sys.is_null());
        sys
    }

    #[test]
    fn full_pipeline_through_the_c_surface() {
        unsafe {
            let sys = make_system("ho", &[("omega0", 1.0), ("gamma", 0.0)]);

            let mut rhs = (0.0, 0.0);
            assert_eq!(
                fjet_system_eval_rhs(sys, 0.0, 1.0, 0.5, &mut rhs.0, &mut rhs.1),
                FjetStatus::Ok
            );
            assert_eq!(rhs, (0.5, -1.0));

            let mut ds: *mut FjetDataset = null_mut();
            assert_eq!(
                fjet_dataset_sample(sys, 500, 0.1, 0.0, 0, &mut ds),
                FjetStatus::Ok
            );
            assert_eq!(fjet_dataset_len(ds), 500);
            assert_eq!(fjet_dataset_eps(ds), 0.1);

            let fdu = CString::new("u,v").unwrap();
            let mut model: *mut FjetModel = null_mut();
            assert_eq!(
                fjet_model_fit(ds, fdu.as_ptr(), fdu.as_ptr(), &mut model),
                FjetStatus::Ok
            );
            assert_eq!(fjet_model_eps(model), 0.1);
            assert_eq!(fjet_model_feature_count(model, FjetResponse::Du), 2);

            // Noiseless oscillator data: the du row must carry the rotation
            // coefficients (cos eps - 1, sin eps).
            let mut c = 0.0;
            assert_eq!(
                fjet_model_coefficient(model, FjetResponse::Du, 0, &mut c),
                FjetStatus::Ok
            );
            assert!((c - (0.1f64.cos() - 1.0)).abs() < 1e-9, "{c}");
            assert_eq!(
                fjet_model_coefficient(model, FjetResponse::Du, 1, &mut c),
                FjetStatus::Ok
            );
            assert!((c - 0.1f64.sin()).abs() < 1e-9, "{c}");

            let mut name: *mut c_char = null_mut();
            assert_eq!(
                fjet_model_feature_name(model, FjetResponse::Dv, 1, &mut name),
                FjetStatus::Ok
            );
            assert_eq!(CStr::from_ptr(name).to_str().unwrap(), "v");
            fjet_string_free(name);

            let (mut du, mut dv) = (0.0, 0.0);
            assert_eq!(
                fjet_model_predict(model, 0.0, 1.0, 0.0, 0.0, 0.0, &mut du, &mut dv),
                FjetStatus::Ok
            );
            assert!((du - (0.1f64.cos() - 1.0)).abs() < 1e-9);

            let mut traj: *mut FjetTrajectory = null_mut();
            assert_eq!(
                fjet_trajectory_generate(model, 1.0, 0.0, 0.0, 100, std::ptr::null(), &mut traj),
                FjetStatus::Ok
            );
            assert_eq!(fjet_trajectory_len(traj), 101);
            assert!(!fjet_trajectory_truncated(traj));
            let (mut t, mut u, mut v) = (0.0, 0.0, 0.0);
            assert_eq!(
                fjet_trajectory_point(traj, 100, &mut t, &mut u, &mut v),
                FjetStatus::Ok
            );
            assert!((t - 10.0).abs() < 1e-12);
            assert!((u - 10.0f64.cos()).abs() < 1e-6, "{u}");

            fjet_trajectory_free(traj);
            fjet_model_free(model);
            fjet_dataset_free(ds);
            fjet_system_free(sys);
        }
    }

    #[test]
    fn save_load_round_trip_through_paths() {
        let dir = tempfile::tempdir().unwrap();
        unsafe {
            let sys = make_system("pendulum", &[("gamma", 0.1)]);
            let mut ds: *mut FjetDataset = null_mut();
            assert_eq!(
                fjet_dataset_sample(sys, 200, 0.05, 0.0, 3, &mut ds),
                FjetStatus::Ok
            );

            let ds_path = CString::new(
                dir.path().join("ds.csv").to_str().unwrap().to_string(),
            )
            .unwrap();
            assert_eq!(fjet_dataset_save(ds, ds_path.as_ptr()), FjetStatus::Ok);
            let mut ds2: *mut FjetDataset = null_mut();
            assert_eq!(fjet_dataset_load(ds_path.as_ptr(), &mut ds2), FjetStatus::Ok);
            assert_eq!(fjet_dataset_len(ds2), 200);

            let feats = CString::new("v,sin(u),v*cos(u)").unwrap();
            let mut model: *mut FjetModel = null_mut();
            assert_eq!(
                fjet_model_fit(ds, feats.as_ptr(), feats.as_ptr(), &mut model),
                FjetStatus::Ok
            );
            let m_path = CString::new(
                dir.path().join("m.fjet").to_str().unwrap().to_string(),
            )
            .unwrap();
            assert_eq!(fjet_model_save(model, m_path.as_ptr()), FjetStatus::Ok);
            let mut model2: *mut FjetModel = null_mut();
            assert_eq!(fjet_model_load(m_path.as_ptr(), &mut model2), FjetStatus::Ok);
            assert_eq!(fjet_model_feature_count(model2, FjetResponse::Dv), 3);
            let (mut a, mut b) = (0.0, 0.0);
            for i in 0..3 {
                assert_eq!(
                    fjet_model_coefficient(model, FjetResponse::Dv, i, &mut a),
                    FjetStatus::Ok
                );
                assert_eq!(
                    fjet_model_coefficient(model2, FjetResponse::Dv, i, &mut b),
                    FjetStatus::Ok
                );
                assert_eq!(a.to_bits(), b.to_bits(), "coefficient {i} drifted");
            }

            fjet_model_free(model2);
            fjet_model_free(model);
            fjet_dataset_free(ds2);
            fjet_dataset_free(ds);
            fjet_system_free(sys);
        }
    }

    #[test]
    fn error_paths_set_status_and_message() {
        unsafe {
            // Null out-pointer.
            let kind = CString::new("ho").unwrap();
            assert_eq!(
                fjet_system_new(kind.as_ptr(), std::ptr::null(), std::ptr::null(), 0, null_mut()),
                FjetStatus::NullArgument
            );
            let msg = CStr::from_ptr(fjet_last_error_message()).to_str().unwrap();
            assert!(msg.contains("out"), "{msg}");

            // Unknown system kind.
            let bad = CString::new("lorenz").unwrap();
            let mut sys: *mut FjetSystem = null_mut();
            assert_eq!(
                fjet_system_new(bad.as_ptr(), std::ptr::null(), std::ptr::null(), 0, &mut sys),
                FjetStatus::Config
            );
            let msg = CStr::from_ptr(fjet_last_error_message()).to_str().unwrap();
            assert!(msg.contains("lorenz"), "{msg}");

            // Unknown parameter name.
            let kind = CString::new("ho").unwrap();
            let name = CString::new("mass").unwrap();
            let names = [name.as_ptr()];
            let values = [2.0];
            assert_eq!(
                fjet_system_new(kind.as_ptr(), names.as_ptr(), values.as_ptr(), 1, &mut sys),
                FjetStatus::Config
            );

            // Invalid UTF-8 in a string argument.
            let invalid = [0xffu8, 0xfe, 0x00];
            assert_eq!(
                fjet_system_new(
                    invalid.as_ptr() as *const c_char,
                    std::ptr::null(),
                    std::ptr::null(),
                    0,
                    &mut sys,
                ),
                FjetStatus::InvalidUtf8
            );

            // Energy undefined for the driven double-well.
            let duffing = make_system("duffing", &[]);
            let mut e = 0.0;
            assert_eq!(
                fjet_system_energy(duffing, 1.0, 0.0, &mut e),
                FjetStatus::Unsupported
            );
            fjet_system_free(duffing);

            // Unparseable feature list.
            let ho = make_system("ho", &[]);
            let mut ds: *mut FjetDataset = null_mut();
            assert_eq!(
                fjet_dataset_sample(ho, 50, 0.1, 0.0, 0, &mut ds),
                FjetStatus::Ok
            );
            let bad_feats = CString::new("u,v,w^").unwrap();
            let good_feats = CString::new("u,v").unwrap();
            let mut model: *mut FjetModel = null_mut();
            assert_eq!(
                fjet_model_fit(ds, bad_feats.as_ptr(), good_feats.as_ptr(), &mut model),
                FjetStatus::Parse
            );

            // Out-of-bounds index.
            assert_eq!(
                fjet_model_fit(ds, good_feats.as_ptr(), good_feats.as_ptr(), &mut model),
                FjetStatus::Ok
            );
            let mut c = 0.0;
            assert_eq!(
                fjet_model_coefficient(model, FjetResponse::Du, 99, &mut c),
                FjetStatus::IndexOutOfBounds
            );

            // Missing file.
            let missing = CString::new("/nonexistent/m.fjet").unwrap();
            let mut loaded: *mut FjetModel = null_mut();
            assert_eq!(fjet_model_load(missing.as_ptr(), &mut loaded), FjetStatus::Io);

            // Null-tolerant queries and frees.
            assert_eq!(fjet_dataset_len(std::ptr::null()), 0);
            assert!(fjet_model_eps(std::ptr::null()).is_nan());
            assert!(!fjet_trajectory_truncated(std::ptr::null()));
            fjet_model_free(null_mut());
            fjet_dataset_free(null_mut());
            fjet_system_free(null_mut());
            fjet_trajectory_free(null_mut());
            fjet_string_free(null_mut());

            fjet_model_free(model);
            fjet_dataset_free(ds);
            fjet_system_free(ho);
        }
    }

    #[test]
    fn version_is_a_static_string() {
        unsafe {
            let v = CStr::from_ptr(fjet_version()).to_str().unwrap();
            assert_eq!(v, env!("CARGO_PKG_VERSION"));
        }
    }

    #[test]
    fn generated_header_covers_the_surface() {
        let header = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("include/fjet.h");
        let text = std::fs::read_to_string(&header).expect("build script wrote include/fjet.h");
        for symbol in [
            "#ifndef FJET_H",
            "typedef struct FjetSystem FjetSystem;",
            "typedef struct FjetModel FjetModel;",
            "FJET_STATUS_OK",
            "fjet_system_new",
            "fjet_dataset_sample",
            "fjet_model_fit",
            "fjet_model_predict",
            "fjet_trajectory_generate",
            "fjet_last_error_message",
            "fjet_string_free",
        ] {
            assert!(text.contains(symbol), "header missing {symbol}");
        }
    }
}
