//! C ABI over the colorenh enhancement pipeline.
//!
//! Every function returns a [`ColorenhStatus`]; on failure the message is
//! available from [`colorenh_last_error`] on the same thread. Handles are
//! opaque and must be released with [`colorenh_enhancer_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use colorenh::imaging::{load_image, quantize8, save_image, Image, MetricsRecord};
use colorenh::trainer::{Pipeline, Variant};
use colorenh::Error;

/// Result code of every exported function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColorenhStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Data = 4,
    Image = 5,
    Checkpoint = 6,
    Io = 7,
    Numeric = 8,
    Panic = 9,
}

/// Scores of one image against a reference.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ColorenhMetrics {
    pub lab_l2: f64,
    pub psnr: f64,
    pub ssim: f64,
}

/// A loaded pipeline.
pub struct ColorenhEnhancer {
    pipeline: Pipeline,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> ColorenhStatus {
    match e {
        Error::Config(_) => ColorenhStatus::Config,
        Error::Data(_) => ColorenhStatus::Data,
        Error::Imaging(_) => ColorenhStatus::Image,
        Error::Checkpoint { .. } => ColorenhStatus::Checkpoint,
        Error::Io { .. } => ColorenhStatus::Io,
        _ => ColorenhStatus::Numeric,
    }
}

struct Failure(ColorenhStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

impl From<colorenh::imaging::ImagingError> for Failure {
    fn from(e: colorenh::imaging::ImagingError) -> Self {
        Failure(ColorenhStatus::Image, e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> ColorenhStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            ColorenhStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".to_string());
            ColorenhStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(ColorenhStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        Failure(
            ColorenhStatus::InvalidArgument,
            format!("{what} is not UTF-8"),
        )
    })
}

unsafe fn enhancer<'a>(h: *const ColorenhEnhancer) -> Result<&'a ColorenhEnhancer, Failure> {
    h.as_ref().ok_or_else(|| null("enhancer"))
}

fn rgb8_len(width: usize, height: usize) -> Result<usize, Failure> {
    if width == 0 || height == 0 {
        return Err(Failure(
            ColorenhStatus::InvalidArgument,
            "image has zero size".into(),
        ));
    }
    width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(3))
        .ok_or_else(|| {
            Failure(
                ColorenhStatus::InvalidArgument,
                "image size overflows".into(),
            )
        })
}

unsafe fn image_from_rgb8(data: *const u8, width: usize, height: usize) -> Result<Image, Failure> {
    if data.is_null() {
        return Err(null("pixels"));
    }
    let bytes = std::slice::from_raw_parts(data, rgb8_len(width, height)?);
    let values: Vec<f64> = bytes.iter().map(|&b| f64::from(b) / 255.0).collect();
    Ok(Image::from_interleaved(width, height, &values)?)
}

/// Static, NUL-terminated library version.
#[no_mangle]
pub extern "C" fn colorenh_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call on this thread.
#[no_mangle]
pub extern "C" fn colorenh_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Loads the checkpoints a variant needs (`"CE"`, `"PR"`, `"PRNL"`,
/// `"CE_PR"`, `"CE_PRNL"`) from `checkpoint_dir`.
///
/// # Safety
/// String arguments must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn colorenh_enhancer_open(
    checkpoint_dir: *const c_char,
    variant: *const c_char,
    out: *mut *mut ColorenhEnhancer,
) -> ColorenhStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let dir = PathBuf::from(str_arg(checkpoint_dir, "checkpoint_dir")?);
        let variant: Variant = str_arg(variant, "variant")?
            .parse()
            .map_err(|e: Error| Failure(ColorenhStatus::InvalidArgument, e.to_string()))?;
        let pipeline = Pipeline::from_dir(&dir, variant)?;
        *out = Box::into_raw(Box::new(ColorenhEnhancer { pipeline }));
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `handle` must come from [`colorenh_enhancer_open`] and not be used again.
#[no_mangle]
pub unsafe extern "C" fn colorenh_enhancer_free(handle: *mut ColorenhEnhancer) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Largest accepted width or height.
///
/// # Safety
/// `handle` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn colorenh_enhancer_max_edge(
    handle: *const ColorenhEnhancer,
    out: *mut usize,
) -> ColorenhStatus {
    guard(|| {
        let h = enhancer(handle)?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = h.pipeline.pad_size();
        Ok(())
    })
}

/// Enhances interleaved 8-bit RGB pixels. `input` and `output` each hold
/// `width * height * 3` bytes and may alias.
///
/// # Safety
/// Buffers must be valid for the stated size.
#[no_mangle]
pub unsafe extern "C" fn colorenh_enhance_rgb8(
    handle: *const ColorenhEnhancer,
    input: *const u8,
    width: usize,
    height: usize,
    output: *mut u8,
) -> ColorenhStatus {
    guard(|| {
        let h = enhancer(handle)?;
        if output.is_null() {
            return Err(null("output"));
        }
        let image = image_from_rgb8(input, width, height)?;
        let out = h.pipeline.enhance_image(&image)?;
        let dst = std::slice::from_raw_parts_mut(output, rgb8_len(width, height)?);
        for (d, v) in dst.iter_mut().zip(out.to_interleaved()) {
            *d = quantize8(v);
        }
        Ok(())
    })
}

/// Reads an image file, enhances it and writes the result (format chosen by
/// extension).
///
/// # Safety
/// Paths must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn colorenh_enhance_file(
    handle: *const ColorenhEnhancer,
    input_path: *const c_char,
    output_path: *const c_char,
) -> ColorenhStatus {
    guard(|| {
        let h = enhancer(handle)?;
        let input = str_arg(input_path, "input_path")?;
        let output = str_arg(output_path, "output_path")?;
        let image = load_image(input)?;
        let out = h.pipeline.enhance_image(&image)?;
        save_image(&out, output)?;
        Ok(())
    })
}

/// L2 distance in Lab, PSNR and SSIM between two 8-bit RGB images of equal
/// size, at least 11x11.
///
/// # Safety
/// Buffers must hold `width * height * 3` bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn colorenh_metrics_rgb8(
    a: *const u8,
    b: *const u8,
    width: usize,
    height: usize,
    out: *mut ColorenhMetrics,
) -> ColorenhStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let a = image_from_rgb8(a, width, height)?;
        let b = image_from_rgb8(b, width, height)?;
        let m = MetricsRecord::compute(&a, &b, None)?;
        *out = ColorenhMetrics {
            lab_l2: m.lab_l2,
            psnr: m.psnr,
            ssim: m.ssim,
        };
        Ok(())
    })
}
