//! C ABI over the pshape library. Objects cross the boundary as opaque
//! handles that the caller frees with the matching `*_free` function.
//! Every fallible call returns a [`PshapeStatus`]; on failure the message
//! is available from [`pshape_last_error_message`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use pshape::blocks::ConditionVector;
use pshape::data::{load_cloud, normalize};
use pshape::models::{Model, Prediction};
use pshape::training::load_checkpoint;
use pshape::transport::{solve, GroundNorm, SolverKind, TransportConfig};
use pshape::{Error, PointCloud};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PshapeStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Data = 4,
    Numeric = 5,
    Corrupt = 6,
    Io = 7,
    Panic = 8,
}

/// Ground metric between points.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PshapeNorm {
    L1 = 0,
    L2 = 1,
}

/// Transport solver selection.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PshapeSolver {
    Auto = 0,
    Exact = 1,
    Approx = 2,
}

/// Opaque point cloud.
pub struct PshapeCloud(PointCloud);

/// Opaque trained model restored from a checkpoint.
pub struct PshapeModel(Model);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(err: &Error) -> PshapeStatus {
    match err {
        Error::Dimension { .. }
        | Error::EmptySet(_)
        | Error::UnequalCardinality(..)
        | Error::Degenerate(_)
        | Error::Label(_)
        | Error::Contract(_) => PshapeStatus::InvalidArgument,
        Error::Config(_) | Error::SolverCap { .. } => PshapeStatus::Config,
        Error::Data(_) | Error::Parse { .. } | Error::UnsupportedFormat(_) => PshapeStatus::Data,
        Error::Numeric(_) => PshapeStatus::Numeric,
        Error::Corrupt { .. } => PshapeStatus::Corrupt,
        Error::Io { .. } => PshapeStatus::Io,
    }
}

enum Failure {
    Null(&'static str),
    Invalid(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

/// Runs `f`, converting errors and panics into a status and message.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PshapeStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            PshapeStatus::Ok
        }
        Ok(Err(Failure::Null(what))) => {
            set_last_error(&format!("{what} is a null pointer"));
            PshapeStatus::NullPointer
        }
        Ok(Err(Failure::Invalid(msg))) => {
            set_last_error(&msg);
            PshapeStatus::InvalidArgument
        }
        Ok(Err(Failure::Lib(e))) => {
            set_last_error(&e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_last_error("internal panic");
            PshapeStatus::Panic
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

unsafe fn path_arg<'a>(p: *const c_char) -> Result<&'a Path, Failure> {
    if p.is_null() {
        return Err(Failure::Null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(Path::new)
        .map_err(|_| Failure::Invalid("path is not valid UTF-8".into()))
}

fn put<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::Null("output handle"));
    }
    unsafe { *out = Box::into_raw(Box::new(value)) };
    Ok(())
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn pshape_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Creates a cloud from `n` points stored as interleaved `x, y, z` values.
///
/// # Safety
/// `xyz` must point to `3 * n` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pshape_cloud_new(
    xyz: *const f64,
    n: usize,
    out: *mut *mut PshapeCloud,
) -> PshapeStatus {
    guard(|| {
        let len = n
            .checked_mul(3)
            .ok_or_else(|| Failure::Invalid("point count overflows".into()))?;
        let data = slice(xyz, len, "xyz")?;
        let points = data.chunks_exact(3).map(|p| [p[0], p[1], p[2]]).collect();
        put(out, PshapeCloud(PointCloud::new(points)))
    })
}

/// Reads an ASCII PLY file or a CSV file with an `x,y,z` header.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pshape_cloud_load(
    path: *const c_char,
    out: *mut *mut PshapeCloud,
) -> PshapeStatus {
    guard(|| {
        let cloud = load_cloud(path_arg(path)?)?;
        put(out, PshapeCloud(cloud))
    })
}

/// Centers the cloud and scales its farthest point onto the unit sphere.
///
/// # Safety
/// `cloud` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pshape_cloud_normalize(
    cloud: *const PshapeCloud,
    out: *mut *mut PshapeCloud,
) -> PshapeStatus {
    guard(|| {
        let c = deref(cloud, "cloud")?;
        put(out, PshapeCloud(normalize(&c.0)?))
    })
}

/// Number of points, or 0 for a null handle.
///
/// # Safety
/// `cloud` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pshape_cloud_len(cloud: *const PshapeCloud) -> usize {
    cloud.as_ref().map_or(0, |c| c.0.len())
}

/// Copies the points as interleaved `x, y, z` into `out`, which holds
/// `capacity` doubles and must have room for `3 * len`.
///
/// # Safety
/// `cloud` must be a live handle; `out` must point to `capacity` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn pshape_cloud_points(
    cloud: *const PshapeCloud,
    out: *mut f64,
    capacity: usize,
) -> PshapeStatus {
    guard(|| {
        let c = deref(cloud, "cloud")?;
        let need = 3 * c.0.len();
        if capacity < need {
            return Err(Failure::Invalid(format!(
                "buffer holds {capacity} values but {need} are needed"
            )));
        }
        if need == 0 {
            return Ok(());
        }
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let dst = std::slice::from_raw_parts_mut(out, need);
        for (d, p) in dst.chunks_exact_mut(3).zip(c.0.points()) {
            d.copy_from_slice(p);
        }
        Ok(())
    })
}

/// Releases a cloud handle; null is ignored.
///
/// # Safety
/// `cloud` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pshape_cloud_free(cloud: *mut PshapeCloud) {
    if !cloud.is_null() {
        drop(Box::from_raw(cloud));
    }
}

/// Total optimal transport cost between two equal-size clouds. The solver
/// that ran is written to `out_solver` when it is not null.
///
/// # Safety
/// `a` and `b` must be live handles; `out_cost` must be writable;
/// `out_solver` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn pshape_emd(
    a: *const PshapeCloud,
    b: *const PshapeCloud,
    norm: PshapeNorm,
    solver: PshapeSolver,
    epsilon: f64,
    out_cost: *mut f64,
    out_solver: *mut PshapeSolver,
) -> PshapeStatus {
    guard(|| {
        let (a, b) = (deref(a, "a")?, deref(b, "b")?);
        if out_cost.is_null() {
            return Err(Failure::Null("out_cost"));
        }
        if !(epsilon > 0.0) {
            return Err(Failure::Invalid(format!("epsilon must be positive, got {epsilon}")));
        }
        if a.0.len() != b.0.len() {
            return Err(Error::UnequalCardinality(a.0.len(), b.0.len()).into());
        }
        let config = TransportConfig {
            norm: match norm {
                PshapeNorm::L1 => GroundNorm::L1,
                PshapeNorm::L2 => GroundNorm::L2,
            },
            solver: match solver {
                PshapeSolver::Auto => SolverKind::Auto,
                PshapeSolver::Exact => SolverKind::Exact,
                PshapeSolver::Approx => SolverKind::Approx,
            },
            epsilon,
            ..TransportConfig::default()
        };
        let plan = solve(a.0.points(), b.0.points(), &config)?;
        *out_cost = plan.cost();
        if !out_solver.is_null() {
            *out_solver = match plan.solver_name() {
                "exact" => PshapeSolver::Exact,
                _ => PshapeSolver::Approx,
            };
        }
        Ok(())
    })
}

/// Restores a model from a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pshape_model_load(
    path: *const c_char,
    out: *mut *mut PshapeModel,
) -> PshapeStatus {
    guard(|| {
        let ckpt = load_checkpoint(path_arg(path)?)?;
        put(out, PshapeModel(ckpt.model))
    })
}

/// Releases a model handle; null is ignored.
///
/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pshape_model_free(model: *mut PshapeModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of structures the model takes, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pshape_model_structures(model: *const PshapeModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.config().structures())
}

/// Points per structure, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pshape_model_points(model: *const PshapeModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.config().points())
}

/// Latent size of a generative model; 0 for discriminative models.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pshape_model_latent_dim(model: *const PshapeModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.latent_dim())
}

/// Condition size of a generative model; 0 otherwise.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pshape_model_condition_dim(model: *const PshapeModel) -> usize {
    model
        .as_ref()
        .and_then(|m| m.0.as_generative().ok())
        .map_or(0, |g| g.config.condition_dim)
}

/// Decodes latent `z` (length `k`) under `condition` (length `m`) into one
/// new cloud handle per structure, written to `out_clouds`, which holds
/// `capacity` handles.
///
/// # Safety
/// `model` must be a live handle; `z` and `condition` must point to `k` and
/// `m` readable doubles; `out_clouds` must point to `capacity` writable handles.
#[no_mangle]
pub unsafe extern "C" fn pshape_model_generate(
    model: *const PshapeModel,
    z: *const f64,
    k: usize,
    condition: *const f64,
    m: usize,
    out_clouds: *mut *mut PshapeCloud,
    capacity: usize,
) -> PshapeStatus {
    guard(|| {
        let g = deref(model, "model")?.0.as_generative()?;
        let z = slice(z, k, "z")?;
        let c = ConditionVector::new(slice(condition, m, "condition")?.to_vec())?;
        let clouds = g.generate(z, &c)?;
        if capacity < clouds.len() {
            return Err(Failure::Invalid(format!(
                "output holds {capacity} handles but the model has {} structures",
                clouds.len()
            )));
        }
        if out_clouds.is_null() {
            return Err(Failure::Null("out_clouds"));
        }
        for (i, cloud) in clouds.into_iter().enumerate() {
            *out_clouds.add(i) = Box::into_raw(Box::new(PshapeCloud(cloud)));
        }
        Ok(())
    })
}

unsafe fn input_clouds(
    clouds: *const *const PshapeCloud,
    count: usize,
) -> Result<Vec<PointCloud>, Failure> {
    if count > 0 && clouds.is_null() {
        return Err(Failure::Null("clouds"));
    }
    (0..count)
        .map(|i| deref(*clouds.add(i), "cloud").map(|c| c.0.clone()))
        .collect()
}

/// Runs a discriminative model on one normalized cloud per structure and
/// writes the predicted class index (classification) or value (regression).
///
/// # Safety
/// `model` must be a live handle; `clouds` must point to `count` live cloud
/// handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pshape_model_predict(
    model: *const PshapeModel,
    clouds: *const *const PshapeCloud,
    count: usize,
    out: *mut f64,
) -> PshapeStatus {
    guard(|| {
        let d = deref(model, "model")?.0.as_discriminative()?;
        let inputs = input_clouds(clouds, count)?;
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let prediction = d.predict(&inputs)?;
        *out = match (&prediction, prediction.class()) {
            (Prediction::Value(v), _) => *v,
            (_, Some(class)) => class as f64,
            (_, None) => return Err(Error::Numeric("prediction has no class".into()).into()),
        };
        Ok(())
    })
}
