//! C ABI over `gated-core`.
//!
//! Conventions:
//! * every fallible call returns a [`GatedStatus`]; `GATED_STATUS_OK` is zero;
//! * on failure a human-readable message is kept per thread, see
//!   [`gated_last_error_message`];
//! * objects are opaque handles created by the `gated_profiles_*` constructors and
//!   `gated_estimate`, and released by the matching `*_free`;
//! * rasters are dense row-major buffers; stacks are slice-major
//!   (`3 * width * height` values, slice 1 first); invalid depth is NaN.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use gated_core::estimate::{estimate_depth, estimate_pixel_lm, LmOptions};
use gated_core::metrics::{depth_metrics, GroundTruth};
use gated_core::profile::{FittedProfiles, ProfileConfig, DEFAULT_DEGREE};
use gated_core::simulate::{add_noise, render_slices, NoiseParams, RenderOptions};
use gated_core::{AlbedoMap, DepthMap, Error, EstimateResult, GatedStack, Mask, ProfileSet, Raster};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GatedStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    OutOfDomain = 4,
    Io = 5,
    Parse = 6,
    NoEvaluatedPoints = 7,
    Panic = 8,
}

impl From<&Error> for GatedStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::DimensionMismatch { .. } | Error::SizeMismatch { .. } => GatedStatus::DimensionMismatch,
            Error::OutOfDomain { .. } => GatedStatus::OutOfDomain,
            Error::Io(_) => GatedStatus::Io,
            Error::Json(_) | Error::MalformedFile { .. } | Error::Manifest(_) => GatedStatus::Parse,
            Error::ZeroEvaluatedPoints | Error::InvalidPrediction { .. } => GatedStatus::NoEvaluatedPoints,
            _ => GatedStatus::InvalidArgument,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn fail(status: GatedStatus, msg: impl Into<String>) -> GatedStatus {
    set_error(msg);
    status
}

fn from_error(e: Error) -> GatedStatus {
    let status = GatedStatus::from(&e);
    fail(status, e.to_string())
}

/// Runs `f`, converting panics into `GATED_STATUS_PANIC` and clearing the error slot
/// on success.
fn guard(f: impl FnOnce() -> GatedStatus) -> GatedStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => {
            if status == GatedStatus::Ok {
                LAST_ERROR.with(|e| *e.borrow_mut() = None);
            }
            status
        }
        Err(_) => fail(GatedStatus::Panic, "internal panic"),
    }
}

macro_rules! try_status {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(e) => return from_error(e),
        }
    };
}

macro_rules! non_null {
    ($($p:ident),+) => {
        $(if $p.is_null() {
            return fail(GatedStatus::NullPointer, concat!(stringify!($p), " is null"));
        })+
    };
}

/// Message of the last failed call on this thread, or NULL. Valid until the next
/// call into this library from the same thread.
#[no_mangle]
pub extern "C" fn gated_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gated_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Opaque set of three fitted slice profiles.
pub struct GatedProfiles {
    set: ProfileSet,
}

unsafe fn c_str<'a>(s: *const c_char) -> Result<&'a str, GatedStatus> {
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| fail(GatedStatus::InvalidArgument, "string is not valid UTF-8"))
}

unsafe fn emit_profiles(set: ProfileSet, out: *mut *mut GatedProfiles) -> GatedStatus {
    *out = Box::into_raw(Box::new(GatedProfiles { set }));
    GatedStatus::Ok
}

/// Fits the built-in default profile configuration at degree 6.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn gated_profiles_default(out: *mut *mut GatedProfiles) -> GatedStatus {
    guard(|| {
        non_null!(out);
        let (set, _) = try_status!(ProfileConfig::default().fit(DEFAULT_DEGREE));
        emit_profiles(set, out)
    })
}

/// Parses fitted profiles JSON (`{"version", "profiles": [...]}`).
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer to writable
/// storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn gated_profiles_from_json(json: *const c_char, out: *mut *mut GatedProfiles) -> GatedStatus {
    guard(|| {
        non_null!(json, out);
        let text = match c_str(json) {
            Ok(t) => t,
            Err(s) => return s,
        };
        let doc: FittedProfiles = try_status!(serde_json::from_str(text).map_err(Error::from));
        emit_profiles(try_status!(doc.to_set()), out)
    })
}

/// Synthesizes and fits a profile configuration JSON at the given degree.
///
/// # Safety
/// As for [`gated_profiles_from_json`].
#[no_mangle]
pub unsafe extern "C" fn gated_profiles_from_config_json(
    json: *const c_char,
    degree: u32,
    out: *mut *mut GatedProfiles,
) -> GatedStatus {
    guard(|| {
        non_null!(json, out);
        let text = match c_str(json) {
            Ok(t) => t,
            Err(s) => return s,
        };
        let cfg: ProfileConfig = try_status!(serde_json::from_str(text).map_err(Error::from));
        let (set, _) = try_status!(cfg.fit(degree as usize));
        emit_profiles(set, out)
    })
}

/// Loads a fitted profiles JSON file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer to writable
/// storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn gated_profiles_load(path: *const c_char, out: *mut *mut GatedProfiles) -> GatedStatus {
    guard(|| {
        non_null!(path, out);
        let path = match c_str(path) {
            Ok(t) => t,
            Err(s) => return s,
        };
        emit_profiles(try_status!(gated_core::io::read_profiles(path)), out)
    })
}

/// Releases a profiles handle. NULL is ignored.
///
/// # Safety
/// `profiles` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gated_profiles_free(profiles: *mut GatedProfiles) {
    if !profiles.is_null() {
        drop(Box::from_raw(profiles));
    }
}

/// Writes the common profile domain in meters.
///
/// # Safety
/// All pointers must be valid; `lo` and `hi` writable.
#[no_mangle]
pub unsafe extern "C" fn gated_profiles_domain(
    profiles: *const GatedProfiles,
    lo: *mut f64,
    hi: *mut f64,
) -> GatedStatus {
    guard(|| {
        non_null!(profiles, lo, hi);
        let (a, b) = (*profiles).set.domain();
        *lo = a;
        *hi = b;
        GatedStatus::Ok
    })
}

/// Evaluates the three profiles at `range_m`; `values` receives 3 doubles.
///
/// # Safety
/// `profiles` must be a live handle and `values` point to 3 writable doubles.
#[no_mangle]
pub unsafe extern "C" fn gated_profiles_eval(
    profiles: *const GatedProfiles,
    range_m: f64,
    values: *mut f64,
) -> GatedStatus {
    guard(|| {
        non_null!(profiles, values);
        let set = &(*profiles).set;
        for (k, p) in set.profiles().iter().enumerate() {
            *values.add(k) = try_status!(p.eval(range_m));
        }
        GatedStatus::Ok
    })
}

/// Levenberg–Marquardt settings; obtain defaults from [`gated_lm_options_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct GatedLmOptions {
    pub init_grid_step_m: f64,
    pub max_iterations: u32,
    pub damping_init: f64,
    pub damping_up: f64,
    pub damping_down: f64,
    pub param_tolerance_m: f64,
    pub residual_tolerance: f64,
    pub albedo_max: f64,
}

impl From<LmOptions> for GatedLmOptions {
    fn from(o: LmOptions) -> Self {
        Self {
            init_grid_step_m: o.init_grid_step_m,
            max_iterations: o.max_iterations,
            damping_init: o.damping_init,
            damping_up: o.damping_up,
            damping_down: o.damping_down,
            param_tolerance_m: o.param_tolerance_m,
            residual_tolerance: o.residual_tolerance,
            albedo_max: o.albedo_max,
        }
    }
}

impl From<GatedLmOptions> for LmOptions {
    fn from(o: GatedLmOptions) -> Self {
        Self {
            init_grid_step_m: o.init_grid_step_m,
            max_iterations: o.max_iterations,
            damping_init: o.damping_init,
            damping_up: o.damping_up,
            damping_down: o.damping_down,
            param_tolerance_m: o.param_tolerance_m,
            residual_tolerance: o.residual_tolerance,
            albedo_max: o.albedo_max,
        }
    }
}

#[no_mangle]
pub extern "C" fn gated_lm_options_default() -> GatedLmOptions {
    LmOptions::default().into()
}

unsafe fn lm_options(opts: *const GatedLmOptions) -> Result<LmOptions, GatedStatus> {
    let o = if opts.is_null() {
        LmOptions::default()
    } else {
        LmOptions::from(*opts)
    };
    o.validate().map_err(from_error)?;
    Ok(o)
}

fn frame_len(width: usize, height: usize) -> Result<usize, GatedStatus> {
    width
        .checked_mul(height)
        .filter(|&n| n > 0)
        .ok_or_else(|| fail(GatedStatus::InvalidArgument, "width and height must be positive"))
}

/// Renders `albedo * C~(depth) + ambient` into `slices_out` (`3 * width * height`
/// doubles, slice-major). NaN depth renders ambient only. With `quantize` the
/// values are clipped to [0, 1023] and rounded.
///
/// # Safety
/// `depth` and `albedo` must hold `width * height` floats, `slices_out` must have
/// room for `3 * width * height` doubles, and `profiles` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn gated_render(
    profiles: *const GatedProfiles,
    depth: *const f32,
    albedo: *const f32,
    width: usize,
    height: usize,
    ambient_level: f64,
    quantize: bool,
    slices_out: *mut f64,
) -> GatedStatus {
    guard(|| {
        non_null!(profiles, depth, albedo, slices_out);
        let n = match frame_len(width, height) {
            Ok(n) => n,
            Err(s) => return s,
        };
        let d = try_status!(DepthMap::new(width, height, std::slice::from_raw_parts(depth, n).to_vec()));
        let a = try_status!(AlbedoMap::new(width, height, std::slice::from_raw_parts(albedo, n).to_vec()));
        let opts = RenderOptions {
            ambient_level,
            quantize,
            clamp_to_domain: false,
        };
        let stack = try_status!(render_slices(&d, &a, &(*profiles).set, opts));
        let out = std::slice::from_raw_parts_mut(slices_out, 3 * n);
        for (k, s) in stack.slices.iter().enumerate() {
            out[k * n..(k + 1) * n].copy_from_slice(s.data());
        }
        GatedStatus::Ok
    })
}

/// Applies `z = a * Poisson(I / a) + N(0, b)`, clipped and rounded to 10-bit DN, to a
/// slice-major stack of `3 * width * height` doubles, writing into `out` (which may
/// alias `slices`).
///
/// # Safety
/// `slices` and `out` must each hold `3 * width * height` doubles.
#[no_mangle]
pub unsafe extern "C" fn gated_add_noise(
    slices: *const f64,
    width: usize,
    height: usize,
    a: f64,
    b: f64,
    seed: u64,
    out: *mut f64,
) -> GatedStatus {
    guard(|| {
        non_null!(slices, out);
        let n = match frame_len(width, height) {
            Ok(n) => n,
            Err(s) => return s,
        };
        let params = NoiseParams { a, b, seed };
        try_status!(params.validate());
        let input = std::slice::from_raw_parts(slices, 3 * n);
        let slice = |k: usize| Raster::new(width, height, input[k * n..(k + 1) * n].to_vec());
        let stack = try_status!(GatedStack::new(
            [try_status!(slice(0)), try_status!(slice(1)), try_status!(slice(2))],
            None,
            [0.0, 1.0, 2.0],
            false,
        ));
        let noisy = try_status!(add_noise(&stack, &params));
        let out = std::slice::from_raw_parts_mut(out, 3 * n);
        for (k, s) in noisy.slices.iter().enumerate() {
            out[k * n..(k + 1) * n].copy_from_slice(s.data());
        }
        GatedStatus::Ok
    })
}

/// Result of fitting one pixel.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct GatedPixelEstimate {
    pub range_m: f64,
    pub albedo: f64,
    pub residual: f64,
    pub iterations: u32,
    pub converged: bool,
}

/// Fits `(range, albedo)` to one ambient-free measurement triple `z[3]`. `opts` may be
/// NULL for defaults.
///
/// # Safety
/// `z` must point to 3 doubles, `out` to writable storage, `profiles` to a live handle.
#[no_mangle]
pub unsafe extern "C" fn gated_estimate_pixel(
    profiles: *const GatedProfiles,
    z: *const f64,
    opts: *const GatedLmOptions,
    out: *mut GatedPixelEstimate,
) -> GatedStatus {
    guard(|| {
        non_null!(profiles, z, out);
        let opts = match lm_options(opts) {
            Ok(o) => o,
            Err(s) => return s,
        };
        let z = [*z, *z.add(1), *z.add(2)];
        if z.iter().any(|v| !v.is_finite()) {
            return fail(GatedStatus::InvalidArgument, "z must be finite");
        }
        let p = estimate_pixel_lm(&z, &(*profiles).set, &opts);
        *out = GatedPixelEstimate {
            range_m: p.range_m,
            albedo: p.albedo,
            residual: p.residual,
            iterations: p.iterations as u32,
            converged: p.converged,
        };
        GatedStatus::Ok
    })
}

/// Opaque per-frame estimation result.
pub struct GatedEstimate {
    result: EstimateResult,
    mask: Vec<u8>,
}

/// Estimates depth and albedo for an ambient-subtracted slice-major stack of
/// `3 * width * height` DN values. `opts` may be NULL for defaults.
///
/// # Safety
/// `slices` must hold `3 * width * height` doubles, `out` must be writable and
/// `profiles` a live handle.
#[no_mangle]
pub unsafe extern "C" fn gated_estimate(
    profiles: *const GatedProfiles,
    slices: *const f64,
    width: usize,
    height: usize,
    opts: *const GatedLmOptions,
    out: *mut *mut GatedEstimate,
) -> GatedStatus {
    guard(|| {
        non_null!(profiles, slices, out);
        let n = match frame_len(width, height) {
            Ok(n) => n,
            Err(s) => return s,
        };
        let opts = match lm_options(opts) {
            Ok(o) => o,
            Err(s) => return s,
        };
        let set = &(*profiles).set;
        let input = std::slice::from_raw_parts(slices, 3 * n);
        let slice = |k: usize| Raster::new(width, height, input[k * n..(k + 1) * n].to_vec());
        let stack = try_status!(GatedStack::new(
            [try_status!(slice(0)), try_status!(slice(1)), try_status!(slice(2))],
            None,
            set.delays_ns(),
            false,
        ));
        let result = try_status!(estimate_depth(&stack, set, &opts));
        let mask = result.illuminated.values().iter().map(|&b| b as u8).collect();
        *out = Box::into_raw(Box::new(GatedEstimate { result, mask }));
        GatedStatus::Ok
    })
}

/// Releases an estimate handle. NULL is ignored.
///
/// # Safety
/// `estimate` must be NULL or a handle from [`gated_estimate`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gated_estimate_free(estimate: *mut GatedEstimate) {
    if !estimate.is_null() {
        drop(Box::from_raw(estimate));
    }
}

/// Depth in meters, `width * height` floats, NaN where not illuminated. Owned by the
/// handle.
///
/// # Safety
/// `estimate` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn gated_estimate_depth(estimate: *const GatedEstimate) -> *const f32 {
    if estimate.is_null() {
        return ptr::null();
    }
    (*estimate).result.depth.values().as_ptr()
}

/// Albedo in [0, 1], `width * height` floats. Owned by the handle.
///
/// # Safety
/// `estimate` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn gated_estimate_albedo(estimate: *const GatedEstimate) -> *const f32 {
    if estimate.is_null() {
        return ptr::null();
    }
    (*estimate).result.albedo.values().as_ptr()
}

/// Final squared residual per pixel, `width * height` doubles. Owned by the handle.
///
/// # Safety
/// `estimate` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn gated_estimate_residual(estimate: *const GatedEstimate) -> *const f64 {
    if estimate.is_null() {
        return ptr::null();
    }
    (*estimate).result.residual.data().as_ptr()
}

/// Illumination mask (1 = illuminated), `width * height` bytes. Owned by the handle.
///
/// # Safety
/// `estimate` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn gated_estimate_mask(estimate: *const GatedEstimate) -> *const u8 {
    if estimate.is_null() {
        return ptr::null();
    }
    (*estimate).mask.as_ptr()
}

/// Number of illuminated pixels.
///
/// # Safety
/// `estimate` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn gated_estimate_illuminated_count(estimate: *const GatedEstimate) -> usize {
    if estimate.is_null() {
        return 0;
    }
    (*estimate).result.illuminated.count()
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct GatedMetrics {
    pub rmse: f64,
    pub mae: f64,
    pub ard: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    pub completeness: f64,
    pub evaluated_points: usize,
    pub total_points: usize,
}

/// Scores `pred` against dense `gt` (NaN = no ground truth) on pixels where `mask` is
/// non-zero (NULL mask = every pixel), restricted to ground truth within `max_range`.
///
/// # Safety
/// `pred` and `gt` must hold `width * height` floats, `mask` (if non-NULL) that many
/// bytes, and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gated_metrics(
    pred: *const f32,
    gt: *const f32,
    mask: *const u8,
    width: usize,
    height: usize,
    max_range: f64,
    out: *mut GatedMetrics,
) -> GatedStatus {
    guard(|| {
        non_null!(pred, gt, out);
        let n = match frame_len(width, height) {
            Ok(n) => n,
            Err(s) => return s,
        };
        let p = try_status!(DepthMap::new(width, height, std::slice::from_raw_parts(pred, n).to_vec()));
        let g = try_status!(DepthMap::new(width, height, std::slice::from_raw_parts(gt, n).to_vec()));
        let m = if mask.is_null() {
            Mask::all(width, height, true)
        } else {
            let bytes = std::slice::from_raw_parts(mask, n);
            try_status!(Mask::new(width, height, bytes.iter().map(|&b| b != 0).collect()))
        };
        let r = try_status!(depth_metrics(&p, GroundTruth::Dense(&g), &m, max_range));
        *out = GatedMetrics {
            rmse: r.rmse,
            mae: r.mae,
            ard: r.ard,
            delta1: r.delta1,
            delta2: r.delta2,
            delta3: r.delta3,
            completeness: r.completeness,
            evaluated_points: r.evaluated_points,
            total_points: r.total_points,
        };
        GatedStatus::Ok
    })
}
