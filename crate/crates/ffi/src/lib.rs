//! C interface to the satdeblur solver.
//!
//! Every object crosses the boundary as an opaque handle owned by the
//! caller and released with the matching `*_free` function. Functions
//! return an [`SdStatus`]; on failure a description is available from
//! [`sd_last_error_message`] on the same thread. Pixel buffers are
//! row-major with channels interleaved per pixel (`HWC`), as `double`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use satdeblur::cli::SolverOptions;
use satdeblur::io::{read_image, read_kernel, write_image};
use satdeblur::metrics::{psnr, ssim, Psnr};
use satdeblur::{solve, Error, Image, Kernel, Shape};

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SdStatus {
    Ok = 0,
    /// Null pointer, bad length or a string that is not UTF-8.
    InvalidArgument = 1,
    /// Rejected configuration, parameter, shape or kernel.
    Config = 2,
    /// File, codec or weights failure.
    Io = 3,
    /// The solver produced a non-finite value.
    Numerical = 4,
    /// A Rust panic was caught at the boundary.
    Internal = 5,
}

pub struct SdImage(Image);

pub struct SdKernel(Kernel);

/// Solver settings; starts from the command-line defaults.
pub struct SdSolverConfig(SolverOptions);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

struct Failure(SdStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e.exit_code() {
            2 => SdStatus::Config,
            3 => SdStatus::Io,
            4 => SdStatus::Numerical,
            _ => SdStatus::Internal,
        };
        Failure(status, e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(SdStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            SdStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            SdStatus::Internal
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(invalid(format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| invalid(format!("{what} is null")))
}

unsafe fn handle_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| invalid(format!("{what} is null")))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(invalid("output pointer is null"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn buffer<'a>(data: *const f64, len: usize) -> Result<&'a [f64], Failure> {
    if data.is_null() {
        return Err(invalid("data is null"));
    }
    Ok(std::slice::from_raw_parts(data, len))
}

/// Description of the last failure on this thread, or null after a
/// successful call. Valid until the next call into this library.
#[no_mangle]
pub extern "C" fn sd_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

// ---------------------------------------------------------------- images

/// Copies `height * width * channels` interleaved samples into a new image.
/// Non-finite samples are rejected.
///
/// # Safety
/// `data` must point to that many readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sd_image_new(
    height: usize,
    width: usize,
    channels: usize,
    data: *const f64,
    out: *mut *mut SdImage,
) -> SdStatus {
    guard(|| {
        let len = height
            .checked_mul(width)
            .and_then(|n| n.checked_mul(channels))
            .ok_or_else(|| invalid("image size overflows"))?;
        let src = buffer(data, len)?;
        if len == 0 {
            return Err(invalid("image has no samples"));
        }
        let shape = Shape::new(height, width, channels);
        let img = Image::from_fn(shape, |y, x, c| src[(y * width + x) * channels + c]);
        img.check_finite("image").map_err(|e| invalid(e.to_string()))?;
        put(out, SdImage(img))
    })
}

/// Reads a PNG or SDBF file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sd_image_read(path: *const c_char, out: *mut *mut SdImage) -> SdStatus {
    guard(|| {
        let path = PathBuf::from(str_arg(path, "path")?);
        put(out, SdImage(read_image(&path)?))
    })
}

/// Writes 16-bit PNG, or SDBF when the path ends in `.sdbf`.
///
/// # Safety
/// `img` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn sd_image_write(img: *const SdImage, path: *const c_char) -> SdStatus {
    guard(|| {
        let img = handle(img, "image")?;
        let path = PathBuf::from(str_arg(path, "path")?);
        Ok(write_image(&img.0, &path)?)
    })
}

/// # Safety
/// `img` must be a live handle; each non-null output must be writable.
#[no_mangle]
pub unsafe extern "C" fn sd_image_dims(
    img: *const SdImage,
    height: *mut usize,
    width: *mut usize,
    channels: *mut usize,
) -> SdStatus {
    guard(|| {
        let s = handle(img, "image")?.0.shape();
        for (p, v) in [(height, s.height), (width, s.width), (channels, s.channels)] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Copies the samples out in interleaved order. `len` must equal
/// `height * width * channels`.
///
/// # Safety
/// `img` must be a live handle and `data` writable for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sd_image_copy_data(img: *const SdImage, data: *mut f64, len: usize) -> SdStatus {
    guard(|| {
        let img = &handle(img, "image")?.0;
        let s = img.shape();
        if len != s.len() {
            return Err(invalid(format!(
                "buffer holds {len} samples, image has {}",
                s.len()
            )));
        }
        if data.is_null() {
            return Err(invalid("data is null"));
        }
        let dst = std::slice::from_raw_parts_mut(data, len);
        for y in 0..s.height {
            for x in 0..s.width {
                for c in 0..s.channels {
                    dst[(y * s.width + x) * s.channels + c] = img.get(y, x, c);
                }
            }
        }
        Ok(())
    })
}

/// # Safety
/// `img` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sd_image_free(img: *mut SdImage) {
    if !img.is_null() {
        drop(Box::from_raw(img));
    }
}

// ---------------------------------------------------------------- kernels

/// Builds a kernel from row-major taps; taps are rescaled to sum to one.
///
/// # Safety
/// `taps` must point to `height * width` readable doubles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sd_kernel_new(
    height: usize,
    width: usize,
    taps: *const f64,
    out: *mut *mut SdKernel,
) -> SdStatus {
    guard(|| {
        let len = height
            .checked_mul(width)
            .ok_or_else(|| invalid("kernel size overflows"))?;
        let taps = buffer(taps, len)?.to_vec();
        let (k, _) = Kernel::normalized(height, width, taps)?;
        put(out, SdKernel(k))
    })
}

/// Reads the text kernel format.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sd_kernel_read(path: *const c_char, out: *mut *mut SdKernel) -> SdStatus {
    guard(|| {
        let path = PathBuf::from(str_arg(path, "path")?);
        put(out, SdKernel(read_kernel(&path)?))
    })
}

/// # Safety
/// `k` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sd_kernel_free(k: *mut SdKernel) {
    if !k.is_null() {
        drop(Box::from_raw(k));
    }
}

// ---------------------------------------------------------------- solver

/// Default settings: naive threshold map, hyper-Laplacian prior, 30 iterations.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sd_solver_config_new(out: *mut *mut SdSolverConfig) -> SdStatus {
    guard(|| put(out, SdSolverConfig(SolverOptions::default())))
}

/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn sd_solver_config_set_iterations(
    cfg: *mut SdSolverConfig,
    iterations: usize,
) -> SdStatus {
    guard(|| {
        handle_mut(cfg, "config")?.0.iterations = iterations;
        Ok(())
    })
}

/// Map estimator spec, for example `unit`, `naive_threshold:0.9`,
/// `smooth_clip:50` or `men_cnn`.
///
/// # Safety
/// `cfg` must be a live handle and `spec` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn sd_solver_config_set_map(cfg: *mut SdSolverConfig, spec: *const c_char) -> SdStatus {
    guard(|| {
        let cfg = handle_mut(cfg, "config")?;
        cfg.0.map = str_arg(spec, "map spec")?.to_owned();
        Ok(())
    })
}

/// Prior spec: `none`, `hyper_laplacian[:LAMBDA[:ALPHA]]` or `pen_cnn`.
///
/// # Safety
/// `cfg` must be a live handle and `spec` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn sd_solver_config_set_prior(
    cfg: *mut SdSolverConfig,
    spec: *const c_char,
) -> SdStatus {
    guard(|| {
        let cfg = handle_mut(cfg, "config")?;
        cfg.0.prior = str_arg(spec, "prior spec")?.to_owned();
        Ok(())
    })
}

/// Weights files for `men_cnn` and `pen_cnn`; either may be null to clear.
///
/// # Safety
/// `cfg` must be a live handle; paths must be null or NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn sd_solver_config_set_weights(
    cfg: *mut SdSolverConfig,
    men_path: *const c_char,
    pen_path: *const c_char,
) -> SdStatus {
    guard(|| {
        let cfg = handle_mut(cfg, "config")?;
        let opt = |p: *const c_char, what| -> Result<Option<PathBuf>, Failure> {
            if p.is_null() {
                Ok(None)
            } else {
                str_arg(p, what).map(|s| Some(PathBuf::from(s)))
            }
        };
        cfg.0.men_weights = opt(men_path, "men path")?;
        cfg.0.pen_weights = opt(pen_path, "pen path")?;
        Ok(())
    })
}

/// Output clamp between iterations; `enabled` of zero disables it.
///
/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn sd_solver_config_set_clamp(
    cfg: *mut SdSolverConfig,
    enabled: i32,
    ceiling: f64,
) -> SdStatus {
    guard(|| {
        let cfg = handle_mut(cfg, "config")?;
        cfg.0.clamp = enabled != 0;
        cfg.0.clamp_ceiling = ceiling;
        Ok(())
    })
}

/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn sd_solver_config_set_prior_cap(cfg: *mut SdSolverConfig, cap: f64) -> SdStatus {
    guard(|| {
        handle_mut(cfg, "config")?.0.prior_cap = cap;
        Ok(())
    })
}

/// # Safety
/// `cfg` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sd_solver_config_free(cfg: *mut SdSolverConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Deblurs `blurry` with kernel `k`. Settings are validated here, and
/// network weights are loaded here when a CNN estimator is selected.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sd_deblur(
    blurry: *const SdImage,
    k: *const SdKernel,
    cfg: *const SdSolverConfig,
    out: *mut *mut SdImage,
) -> SdStatus {
    guard(|| {
        let blurry = handle(blurry, "image")?;
        let k = handle(k, "kernel")?;
        let opts = &handle(cfg, "config")?.0;
        let solver = opts.build(&opts.map, &opts.prior)?;
        let (restored, _) = solve(&blurry.0, &k.0, &solver)?;
        put(out, SdImage(restored))
    })
}

// ---------------------------------------------------------------- metrics

/// PSNR in dB; identical images give positive infinity.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sd_psnr(a: *const SdImage, b: *const SdImage, out: *mut f64) -> SdStatus {
    guard(|| {
        let v = match psnr(&handle(a, "image")?.0, &handle(b, "image")?.0)? {
            Psnr::Identical => f64::INFINITY,
            Psnr::Db(v) => v,
        };
        *out.as_mut().ok_or_else(|| invalid("output pointer is null"))? = v;
        Ok(())
    })
}

/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sd_ssim(a: *const SdImage, b: *const SdImage, out: *mut f64) -> SdStatus {
    guard(|| {
        let v = ssim(&handle(a, "image")?.0, &handle(b, "image")?.0)?;
        *out.as_mut().ok_or_else(|| invalid("output pointer is null"))? = v;
        Ok(())
    })
}
