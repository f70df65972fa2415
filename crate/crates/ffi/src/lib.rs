//! C interface to the synthesis pipeline.
//!
//! Objects are opaque heap handles created by `hs_*_new`/`hs_*_load` and
//! released with the matching `hs_*_free`. Every fallible call returns an
//! [`HsStatus`]; on failure `hs_last_error` describes it. Panics are caught at
//! the boundary and reported as `HS_STATUS_PANIC`.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use hairsynth::imagecore::{load_mask_png, load_png, save_png, MaskImage, RasterImage};
use hairsynth::pipeline::PipelineState;
use hairsynth::strokes::{extract_guide_strokes, StrokeSet};
use hairsynth::synthdata::AnnotationConfig;
use hairsynth::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Untrained = 5,
    Shape = 6,
    EmptyMask = 7,
    Panic = 8,
    Internal = 9,
}

/// A trained two-stage pipeline.
pub struct HsPipeline(PipelineState);
/// An RGB or RGBA float image, values in `[0, 1]`, row-major interleaved.
pub struct HsImage(RasterImage);
/// A binary mask.
pub struct HsMask(MaskImage);
/// A set of guide strokes.
pub struct HsStrokes(StrokeSet);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> HsStatus {
    match e {
        Error::InvalidArgument(_) | Error::NonFinite(_) | Error::DegenerateKernel { .. } | Error::DegenerateStroke { .. } => {
            HsStatus::InvalidArgument
        }
        Error::Io { .. } => HsStatus::Io,
        Error::Format { .. } | Error::Image(_) | Error::Json(_) => HsStatus::Format,
        Error::Untrained(_) | Error::PhaseViolation(_) => HsStatus::Untrained,
        Error::Shape(_) | Error::ExtentMismatch(_) => HsStatus::Shape,
        Error::EmptyMask(_) | Error::EmptyDataset(_) => HsStatus::EmptyMask,
    }
}

/// Runs `f`, translating errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), HsFail>) -> HsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            HsStatus::Ok
        }
        Ok(Err(HsFail(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(&format!("panic: {msg}"));
            HsStatus::Panic
        }
    }
}

struct HsFail(HsStatus, String);

impl From<Error> for HsFail {
    fn from(e: Error) -> Self {
        HsFail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> HsFail {
    HsFail(HsStatus::NullPointer, format!("{what} is null"))
}

unsafe fn get<'a, T>(p: *const T, what: &str) -> Result<&'a T, HsFail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn path<'a>(p: *const c_char) -> Result<&'a Path, HsFail> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(Path::new)
        .map_err(|_| HsFail(HsStatus::InvalidArgument, "path is not UTF-8".into()))
}

unsafe fn put<T>(out: *mut *mut T, v: T) -> Result<(), HsFail> {
    if out.is_null() {
        return Err(null("output handle"));
    }
    *out = Box::into_raw(Box::new(v));
    Ok(())
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Message for the last failed call on this thread; empty after a success.
/// Valid until the next `hs_*` call on the same thread.
#[no_mangle]
pub extern "C" fn hs_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn hs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

// ---------------------------------------------------------------- pipeline

/// Loads a checkpoint written by `hairsynth train`.
#[no_mangle]
pub unsafe extern "C" fn hs_pipeline_load(checkpoint: *const c_char, out: *mut *mut HsPipeline) -> HsStatus {
    guard(|| put(out, HsPipeline(PipelineState::load(path(checkpoint)?)?)))
}

#[no_mangle]
pub unsafe extern "C" fn hs_pipeline_free(p: *mut HsPipeline) {
    free(p)
}

/// Image resolution the pipeline was trained at.
#[no_mangle]
pub unsafe extern "C" fn hs_pipeline_size(p: *const HsPipeline) -> usize {
    p.as_ref().map_or(0, |p| p.0.cfg.size)
}

/// Synthesizes hair guided by `strokes` inside `mask`, composited into
/// `image`. The result is a new RGB image.
#[no_mangle]
pub unsafe extern "C" fn hs_synthesize(
    p: *const HsPipeline,
    image: *const HsImage,
    mask: *const HsMask,
    strokes: *const HsStrokes,
    out: *mut *mut HsImage,
    elapsed_ms: *mut f64,
) -> HsStatus {
    guard(|| {
        let (p, img, m, s) = (get(p, "pipeline")?, get(image, "image")?, get(mask, "mask")?, get(strokes, "strokes")?);
        let r = p.0.synthesize_timed(&img.0, &m.0, &s.0)?;
        if !elapsed_ms.is_null() {
            *elapsed_ms = r.timings.total_ms;
        }
        put(out, HsImage(r.image))
    })
}

/// Conditional inpainting of `mask` from a single RGB colour (3 floats).
#[no_mangle]
pub unsafe extern "C" fn hs_synthesize_init(
    p: *const HsPipeline,
    image: *const HsImage,
    mask: *const HsMask,
    rgb: *const f32,
    out: *mut *mut HsImage,
) -> HsStatus {
    guard(|| {
        let (p, img, m) = (get(p, "pipeline")?, get(image, "image")?, get(mask, "mask")?);
        if rgb.is_null() {
            return Err(null("rgb"));
        }
        let c = std::slice::from_raw_parts(rgb, 3);
        put(out, HsImage(p.0.synthesize_init(&img.0, &m.0, [c[0], c[1], c[2]])?))
    })
}

// ------------------------------------------------------------------ images

/// Copies `width * height * channels` floats (channels 1, 3 or 4).
#[no_mangle]
pub unsafe extern "C" fn hs_image_new(width: usize, height: usize, channels: usize, data: *const f32, out: *mut *mut HsImage) -> HsStatus {
    guard(|| {
        if data.is_null() {
            return Err(null("data"));
        }
        let n = width
            .checked_mul(height)
            .and_then(|v| v.checked_mul(channels))
            .ok_or_else(|| HsFail(HsStatus::InvalidArgument, "image size overflows".into()))?;
        let v = std::slice::from_raw_parts(data, n).to_vec();
        put(out, HsImage(RasterImage::new(width, height, channels, v)?))
    })
}

#[no_mangle]
pub unsafe extern "C" fn hs_image_load_png(file: *const c_char, out: *mut *mut HsImage) -> HsStatus {
    guard(|| put(out, HsImage(load_png(path(file)?)?)))
}

#[no_mangle]
pub unsafe extern "C" fn hs_image_save_png(image: *const HsImage, file: *const c_char) -> HsStatus {
    guard(|| Ok(save_png(&get(image, "image")?.0, path(file)?)?))
}

#[no_mangle]
pub unsafe extern "C" fn hs_image_width(image: *const HsImage) -> usize {
    image.as_ref().map_or(0, |i| i.0.width())
}

#[no_mangle]
pub unsafe extern "C" fn hs_image_height(image: *const HsImage) -> usize {
    image.as_ref().map_or(0, |i| i.0.height())
}

#[no_mangle]
pub unsafe extern "C" fn hs_image_channels(image: *const HsImage) -> usize {
    image.as_ref().map_or(0, |i| i.0.channels())
}

/// Borrowed pixel data, valid while the handle lives.
#[no_mangle]
pub unsafe extern "C" fn hs_image_data(image: *const HsImage) -> *const f32 {
    image.as_ref().map_or(ptr::null(), |i| i.0.data().as_ptr())
}

#[no_mangle]
pub unsafe extern "C" fn hs_image_free(image: *mut HsImage) {
    free(image)
}

// ------------------------------------------------------------------- masks

/// One byte per pixel, non-zero meaning inside.
#[no_mangle]
pub unsafe extern "C" fn hs_mask_new(width: usize, height: usize, data: *const u8, out: *mut *mut HsMask) -> HsStatus {
    guard(|| {
        if data.is_null() {
            return Err(null("data"));
        }
        let n = width
            .checked_mul(height)
            .ok_or_else(|| HsFail(HsStatus::InvalidArgument, "mask size overflows".into()))?;
        let bits = std::slice::from_raw_parts(data, n).iter().map(|b| *b != 0).collect();
        put(out, HsMask(MaskImage::from_bits(width, height, bits)?))
    })
}

#[no_mangle]
pub unsafe extern "C" fn hs_mask_load_png(file: *const c_char, out: *mut *mut HsMask) -> HsStatus {
    guard(|| put(out, HsMask(load_mask_png(path(file)?)?)))
}

#[no_mangle]
pub unsafe extern "C" fn hs_mask_count(mask: *const HsMask) -> usize {
    mask.as_ref().map_or(0, |m| m.0.count())
}

#[no_mangle]
pub unsafe extern "C" fn hs_mask_free(mask: *mut HsMask) {
    free(mask)
}

// ----------------------------------------------------------------- strokes

/// Parses a stroke set from NUL-terminated JSON.
#[no_mangle]
pub unsafe extern "C" fn hs_strokes_from_json(json: *const c_char, out: *mut *mut HsStrokes) -> HsStatus {
    guard(|| {
        if json.is_null() {
            return Err(null("json"));
        }
        let text = CStr::from_ptr(json)
            .to_str()
            .map_err(|_| HsFail(HsStatus::InvalidArgument, "json is not UTF-8".into()))?;
        put(out, HsStrokes(StrokeSet::from_json(text)?))
    })
}

#[no_mangle]
pub unsafe extern "C" fn hs_strokes_load(file: *const c_char, out: *mut *mut HsStrokes) -> HsStatus {
    guard(|| put(out, HsStrokes(StrokeSet::load(path(file)?)?)))
}

#[no_mangle]
pub unsafe extern "C" fn hs_strokes_save(strokes: *const HsStrokes, file: *const c_char) -> HsStatus {
    guard(|| Ok(get(strokes, "strokes")?.0.save(path(file)?)?))
}

/// Automatic annotation with the default settings.
#[no_mangle]
pub unsafe extern "C" fn hs_strokes_extract(image: *const HsImage, mask: *const HsMask, seed: u64, out: *mut *mut HsStrokes) -> HsStatus {
    guard(|| {
        let a = AnnotationConfig::default();
        let s = extract_guide_strokes(&get(image, "image")?.0, &get(mask, "mask")?.0, &a.strokes, &a.field, seed)?;
        put(out, HsStrokes(s))
    })
}

#[no_mangle]
pub unsafe extern "C" fn hs_strokes_len(strokes: *const HsStrokes) -> usize {
    strokes.as_ref().map_or(0, |s| s.0.len())
}

#[no_mangle]
pub unsafe extern "C" fn hs_strokes_free(strokes: *mut HsStrokes) {
    free(strokes)
}
