//! C ABI over `kernelmix`.
//!
//! Images and results are opaque heap handles released with their `_free`
//! function. Every fallible call returns a `KmStatus`; on failure the
//! message is available from `km_last_error` on the same thread until the
//! next failing call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use kernelmix::metrics::quality_report;
use kernelmix::synth::{degrade, find_scenario, pattern, Pattern};
use kernelmix::{
    ColorSpace, DeblurResult, Error, ErrorCategory, ImagePlane, MultiChannelImage, SolverConfig,
    Termination, Variant,
};

/// Outcome of a call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KmStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// Invalid configuration, arguments, or image contents.
    Config = 2,
    Io = 3,
    /// Degenerate kernel, non-finite values, or an ill-posed solve.
    Numeric = 4,
    /// A caller-supplied buffer is too small.
    BufferTooSmall = 5,
    /// An internal panic was caught at the boundary.
    Internal = 6,
}

/// Kernel parameterization.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KmVariant {
    Simple = 0,
    Scale = 1,
    Center = 2,
    Rotation = 3,
}

/// Solver settings. Obtain defaults from `km_config_default`.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct KmConfig {
    pub n_bases: usize,
    pub kernel_size: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3_init: f64,
    pub lambda3_decay: f64,
    pub epsilon: f64,
    pub max_outer_iters: usize,
    pub max_cg_iters: usize,
    pub rng_seed: u64,
    /// One of the `KmVariant` values.
    pub variant: u32,
    /// Nonzero enables the border taper.
    pub edge_taper: u8,
}

/// Image quality of a recovered image against a reference, averaged over
/// channels. PSNR fields are NaN when `undefined` is nonzero.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct KmQuality {
    pub rmse: f64,
    pub psnr_paper: f64,
    pub psnr_db: f64,
    pub undefined: u8,
}

/// Opaque image handle.
pub struct KmImage(MultiChannelImage);

/// Opaque deblurring result handle.
pub struct KmResult(DeblurResult);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(msg));
}

fn fail(e: Error) -> KmStatus {
    let status = match e.category() {
        ErrorCategory::Config => KmStatus::Config,
        ErrorCategory::Io => KmStatus::Io,
        ErrorCategory::Numeric => KmStatus::Numeric,
    };
    set_error(e.to_string());
    status
}

fn guard(f: impl FnOnce() -> Result<(), KmStatus>) -> KmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => KmStatus::Ok,
        Ok(Err(status)) => status,
        Err(_) => {
            set_error("internal panic".into());
            KmStatus::Internal
        }
    }
}

fn null(name: &str) -> KmStatus {
    set_error(format!("{name} is null"));
    KmStatus::NullArgument
}

unsafe fn path_arg<'a>(p: *const c_char, name: &str) -> Result<&'a Path, KmStatus> {
    if p.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(Path::new)
        .map_err(|_| fail(Error::InvalidInput(format!("{name} is not valid UTF-8"))))
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, KmStatus> {
    if p.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(Error::InvalidInput(format!("{name} is not valid UTF-8"))))
}

unsafe fn put<T>(out: *mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

impl From<Variant> for KmVariant {
    fn from(v: Variant) -> Self {
        match v {
            Variant::Simple => KmVariant::Simple,
            Variant::Scale => KmVariant::Scale,
            Variant::Center => KmVariant::Center,
            Variant::Rotation => KmVariant::Rotation,
        }
    }
}

impl From<&SolverConfig> for KmConfig {
    fn from(c: &SolverConfig) -> Self {
        KmConfig {
            n_bases: c.n_bases,
            kernel_size: c.kernel_size,
            lambda1: c.lambda1,
            lambda2: c.lambda2,
            lambda3_init: c.lambda3_init,
            lambda3_decay: c.lambda3_decay,
            epsilon: c.epsilon,
            max_outer_iters: c.max_outer_iters,
            max_cg_iters: c.max_cg_iters,
            rng_seed: c.rng_seed,
            variant: KmVariant::from(c.variant) as u32,
            edge_taper: c.edge_taper as u8,
        }
    }
}

impl TryFrom<&KmConfig> for SolverConfig {
    type Error = Error;

    fn try_from(c: &KmConfig) -> Result<Self, Error> {
        let variant = match c.variant {
            0 => Variant::Simple,
            1 => Variant::Scale,
            2 => Variant::Center,
            3 => Variant::Rotation,
            v => return Err(Error::Config(format!("unknown variant code {v}"))),
        };
        Ok(SolverConfig {
            n_bases: c.n_bases,
            kernel_size: c.kernel_size,
            lambda1: c.lambda1,
            lambda2: c.lambda2,
            lambda3_init: c.lambda3_init,
            lambda3_decay: c.lambda3_decay,
            epsilon: c.epsilon,
            max_outer_iters: c.max_outer_iters,
            max_cg_iters: c.max_cg_iters,
            rng_seed: c.rng_seed,
            variant,
            edge_taper: c.edge_taper != 0,
        })
    }
}

/// Message of the most recent failure on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn km_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Static, NUL-terminated crate version.
#[no_mangle]
pub extern "C" fn km_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Fill `out` with the default solver settings.
///
/// # Safety
/// `out` must be null or point to writable memory for one `KmConfig`.
#[no_mangle]
pub unsafe extern "C" fn km_config_default(out: *mut KmConfig) -> KmStatus {
    if out.is_null() {
        return null("out");
    }
    *out = KmConfig::from(&SolverConfig::default());
    KmStatus::Ok
}

/// Check `config` without running anything.
///
/// # Safety
/// `config` must be null or point to a valid `KmConfig`.
#[no_mangle]
pub unsafe extern "C" fn km_config_validate(config: *const KmConfig) -> KmStatus {
    if config.is_null() {
        return null("config");
    }
    guard(|| {
        SolverConfig::try_from(&*config)
            .and_then(SolverConfig::validated)
            .map(|_| ())
            .map_err(fail)
    })
}

/// Build an image from `channels` planes of `width * height` samples each,
/// stored plane after plane in row-major order. One channel is grayscale,
/// three is RGB. Samples are intensities on the `[0, 1]` scale.
///
/// # Safety
/// `data` must point to `width * height * channels` readable doubles and
/// `out` to writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn km_image_new(
    width: usize,
    height: usize,
    channels: usize,
    data: *const f64,
    out: *mut *mut KmImage,
) -> KmStatus {
    if data.is_null() {
        return null("data");
    }
    if out.is_null() {
        return null("out");
    }
    guard(|| {
        let colorspace = match channels {
            1 => ColorSpace::Gray,
            3 => ColorSpace::Rgb,
            n => {
                return Err(fail(Error::InvalidInput(format!(
                    "{n} channels; expected 1 or 3"
                ))))
            }
        };
        let n = width
            .checked_mul(height)
            .ok_or_else(|| fail(Error::InvalidInput("image dimensions overflow".into())))?;
        let samples = std::slice::from_raw_parts(data, n * channels);
        let planes = samples
            .chunks(n.max(1))
            .take(channels)
            .map(|chunk| ImagePlane::new(width, height, chunk.to_vec()))
            .collect::<kernelmix::Result<Vec<_>>>()
            .map_err(fail)?;
        let img = MultiChannelImage::new(colorspace, planes).map_err(fail)?;
        put(out, KmImage(img));
        Ok(())
    })
}

/// Read a PNG or PNM file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn km_image_read(path: *const c_char, out: *mut *mut KmImage) -> KmStatus {
    if out.is_null() {
        return null("out");
    }
    guard(|| {
        let path = path_arg(path, "path")?;
        let img = kernelmix::codec::read_image(path).map_err(fail)?;
        put(out, KmImage(img));
        Ok(())
    })
}

/// Write an 8-bit PNG, clamping samples to `[0, 1]`.
///
/// # Safety
/// `image` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn km_image_write_png(
    image: *const KmImage,
    path: *const c_char,
) -> KmStatus {
    if image.is_null() {
        return null("image");
    }
    guard(|| {
        let path = path_arg(path, "path")?;
        kernelmix::codec::write_png(path, &(*image).0).map_err(fail)
    })
}

/// # Safety
/// `image` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn km_image_width(image: *const KmImage) -> usize {
    image.as_ref().map_or(0, |i| i.0.width())
}

/// # Safety
/// `image` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn km_image_height(image: *const KmImage) -> usize {
    image.as_ref().map_or(0, |i| i.0.height())
}

/// # Safety
/// `image` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn km_image_channels(image: *const KmImage) -> usize {
    image.as_ref().map_or(0, |i| i.0.channels().len())
}

/// Copy channel `channel` into `out`, which holds `len` doubles.
///
/// # Safety
/// `image` must be a live handle and `out` must hold `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn km_image_copy_channel(
    image: *const KmImage,
    channel: usize,
    out: *mut f64,
    len: usize,
) -> KmStatus {
    if image.is_null() {
        return null("image");
    }
    if out.is_null() {
        return null("out");
    }
    guard(|| {
        let img = &(*image).0;
        let plane = img.channels().get(channel).ok_or_else(|| {
            fail(Error::InvalidInput(format!(
                "channel {channel} out of range for {} channels",
                img.channels().len()
            )))
        })?;
        if len < plane.len() {
            set_error(format!("buffer holds {len} values, need {}", plane.len()));
            return Err(KmStatus::BufferTooSmall);
        }
        std::slice::from_raw_parts_mut(out, plane.len()).copy_from_slice(plane.data());
        Ok(())
    })
}

/// # Safety
/// `image` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn km_image_free(image: *mut KmImage) {
    if !image.is_null() {
        drop(Box::from_raw(image));
    }
}

/// Synthesize a preset degradation of a procedural gray test pattern of side
/// `size`. Either output pointer may be null to skip it.
///
/// # Safety
/// `scenario` must be a NUL-terminated string; outputs null or writable.
#[no_mangle]
pub unsafe extern "C" fn km_synth_preset(
    scenario: *const c_char,
    size: usize,
    clean_out: *mut *mut KmImage,
    blurred_out: *mut *mut KmImage,
) -> KmStatus {
    guard(|| {
        let name = str_arg(scenario, "scenario")?;
        let scenario = find_scenario(name).map_err(fail)?;
        let clean = MultiChannelImage::gray(pattern(Pattern::Composite, size, size));
        let (blurred, _) = degrade(&clean, &scenario.spec).map_err(fail)?;
        if !clean_out.is_null() {
            put(clean_out, KmImage(clean));
        }
        if !blurred_out.is_null() {
            put(blurred_out, KmImage(blurred));
        }
        Ok(())
    })
}

/// Run blind deblurring. A null `config` uses the defaults.
///
/// # Safety
/// `blurred` must be a live handle, `config` null or valid, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn km_deblur(
    blurred: *const KmImage,
    config: *const KmConfig,
    out: *mut *mut KmResult,
) -> KmStatus {
    if blurred.is_null() {
        return null("blurred");
    }
    if out.is_null() {
        return null("out");
    }
    guard(|| {
        let cfg = match config.as_ref() {
            Some(c) => SolverConfig::try_from(c).map_err(fail)?,
            None => SolverConfig::default(),
        };
        let result = kernelmix::deblur(&(*blurred).0, &cfg).map_err(fail)?;
        put(out, KmResult(result));
        Ok(())
    })
}

/// New image handle holding a copy of the recovered image.
///
/// # Safety
/// `result` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn km_result_latent(
    result: *const KmResult,
    out: *mut *mut KmImage,
) -> KmStatus {
    if result.is_null() {
        return null("result");
    }
    if out.is_null() {
        return null("out");
    }
    put(out, KmImage((*result).0.latent.clone()));
    KmStatus::Ok
}

/// Side length of the estimated kernel grid, or 0 for a null handle.
///
/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn km_result_kernel_size(result: *const KmResult) -> usize {
    result.as_ref().map_or(0, |r| r.0.kernel.size())
}

/// Copy the kernel weights, row 0 at the top, into `out`.
///
/// # Safety
/// `result` must be a live handle and `out` must hold `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn km_result_copy_kernel(
    result: *const KmResult,
    out: *mut f64,
    len: usize,
) -> KmStatus {
    if result.is_null() {
        return null("result");
    }
    if out.is_null() {
        return null("out");
    }
    let weights = (*result).0.kernel.weights();
    if len < weights.len() {
        set_error(format!("buffer holds {len} values, need {}", weights.len()));
        return KmStatus::BufferTooSmall;
    }
    std::slice::from_raw_parts_mut(out, weights.len()).copy_from_slice(weights);
    KmStatus::Ok
}

/// Number of outer iterations performed.
///
/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn km_result_iterations(result: *const KmResult) -> usize {
    result.as_ref().map_or(0, |r| r.0.trace.len())
}

/// 1 when the run met the convergence test, 0 when it hit the iteration cap.
///
/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn km_result_converged(result: *const KmResult) -> u8 {
    result
        .as_ref()
        .is_some_and(|r| r.0.termination == Termination::Converged) as u8
}

/// Iteration trace as CSV text. Release with `km_string_free`.
///
/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn km_result_trace_csv(result: *const KmResult) -> *mut c_char {
    match result.as_ref() {
        Some(r) => CString::new(kernelmix::pipeline::trace_to_csv(&r.0.trace))
            .map_or(ptr::null_mut(), CString::into_raw),
        None => ptr::null_mut(),
    }
}

/// # Safety
/// `result` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn km_result_free(result: *mut KmResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// # Safety
/// `s` must be null or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn km_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Compare `recovered` against `reference` on the 8-bit scale.
///
/// # Safety
/// Both images must be live handles and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn km_quality(
    reference: *const KmImage,
    recovered: *const KmImage,
    out: *mut KmQuality,
) -> KmStatus {
    if reference.is_null() {
        return null("reference");
    }
    if recovered.is_null() {
        return null("recovered");
    }
    if out.is_null() {
        return null("out");
    }
    guard(|| {
        let report = quality_report(&(*reference).0, &(*recovered).0).map_err(fail)?;
        *out = KmQuality {
            rmse: report.rmse,
            psnr_paper: report.psnr_paper.unwrap_or(f64::NAN),
            psnr_db: report.psnr_db.unwrap_or(f64::NAN),
            undefined: report.undefined as u8,
        };
        Ok(())
    })
}
