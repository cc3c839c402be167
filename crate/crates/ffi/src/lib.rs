//! C ABI for the hyperfield library.
//!
//! Every object crosses the boundary as an opaque handle that the caller
//! releases with the matching `*_free` function. Functions return an
//! [`HfStatus`] code; on failure a message is available from
//! [`hf_last_error`] on the same thread until the next failing call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use hyperfield::cube::{read_cube, HyperCube, Units};
use hyperfield::endmember::EndmemberSet;
use hyperfield::mlp::{read_checkpoint, MlpModel};
use hyperfield::subplot::allocate_yield;
use hyperfield::unmix::{unmix_cube, AbundanceMap, Unmixer};
use hyperfield::Error;

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Config = 5,
    Numeric = 6,
    Panic = 7,
}

pub struct HfCube {
    inner: HyperCube,
}

pub struct HfEndmembers {
    inner: EndmemberSet,
}

pub struct HfAbundance {
    inner: AbundanceMap,
}

pub struct HfModel {
    inner: MlpModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> HfStatus {
    match e {
        Error::Io { .. } => HfStatus::Io,
        Error::Parse { .. } | Error::Csv { .. } | Error::PayloadSize { .. } | Error::InvalidCube(_) => HfStatus::Parse,
        Error::Config(_) | Error::Dependency { .. } => HfStatus::Config,
        Error::DegeneratePanel { .. }
        | Error::DegenerateHistogram
        | Error::DegenerateSimplex(_)
        | Error::Rank { .. }
        | Error::Divergence { .. } => HfStatus::Numeric,
        _ => HfStatus::InvalidArgument,
    }
}

enum Fail {
    Null(&'static str),
    Arg(String),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> HfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HfStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            HfStatus::NullPointer
        }
        Ok(Err(Fail::Arg(msg))) => {
            set_error(msg);
            HfStatus::InvalidArgument
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            HfStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(Fail::Null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail::Arg("path is not valid UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

unsafe fn slice_arg<'a>(p: *const f64, n: usize, what: &'static str) -> Result<&'a [f64], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn out_slice<'a>(p: *mut f64, n: usize, what: &'static str) -> Result<&'a mut [f64], Fail> {
    if n == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, n))
}

unsafe fn handle<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn emit<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail::Null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn hf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failure on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn hf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Reads an ENVI cube (`.hdr` path or its payload path).
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hf_cube_read(path: *const c_char, out: *mut *mut HfCube) -> HfStatus {
    guard(|| {
        let p = path_arg(path)?;
        emit(out, HfCube { inner: read_cube(&p)? })
    })
}

/// Builds a reflectance cube from pixel-interleaved data
/// (`rows * cols * bands` values, band fastest).
///
/// # Safety
/// `wavelengths` must hold `bands` values and `data` `rows * cols * bands`.
#[no_mangle]
pub unsafe extern "C" fn hf_cube_new(
    rows: usize,
    cols: usize,
    bands: usize,
    wavelengths: *const f64,
    data: *const f64,
    out: *mut *mut HfCube,
) -> HfStatus {
    guard(|| {
        let n = rows
            .checked_mul(cols)
            .and_then(|v| v.checked_mul(bands))
            .ok_or_else(|| Fail::Arg("cube size overflows".into()))?;
        let wl = slice_arg(wavelengths, bands, "wavelengths")?.to_vec();
        let d = slice_arg(data, n, "data")?.to_vec();
        emit(out, HfCube { inner: HyperCube::new(rows, cols, wl, d, Units::Reflectance)? })
    })
}

/// # Safety
/// `cube` must be a live handle; the out pointers may be NULL.
#[no_mangle]
pub unsafe extern "C" fn hf_cube_dims(cube: *const HfCube, rows: *mut usize, cols: *mut usize, bands: *mut usize) -> HfStatus {
    guard(|| {
        let c = &handle(cube, "cube")?.inner;
        for (p, v) in [(rows, c.rows()), (cols, c.cols()), (bands, c.bands())] {
            if let Some(p) = p.as_mut() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// # Safety
/// `cube` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hf_cube_free(cube: *mut HfCube) {
    if !cube.is_null() {
        drop(Box::from_raw(cube));
    }
}

/// Reads an endmember CSV (`label,<wavelength>...` header, one row per
/// endmember).
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hf_endmembers_read_csv(path: *const c_char, out: *mut *mut HfEndmembers) -> HfStatus {
    guard(|| {
        let p = path_arg(path)?;
        emit(out, HfEndmembers { inner: EndmemberSet::read_csv(&p)? })
    })
}

/// Builds an endmember set from `count` spectra of `bands` values each,
/// stored one after another. Labels are `em1`, `em2`, ...
///
/// # Safety
/// `wavelengths` must hold `bands` values and `spectra` `count * bands`.
#[no_mangle]
pub unsafe extern "C" fn hf_endmembers_new(
    count: usize,
    bands: usize,
    wavelengths: *const f64,
    spectra: *const f64,
    out: *mut *mut HfEndmembers,
) -> HfStatus {
    guard(|| {
        let n = count.checked_mul(bands).ok_or_else(|| Fail::Arg("size overflows".into()))?;
        let wl = slice_arg(wavelengths, bands, "wavelengths")?.to_vec();
        let s = slice_arg(spectra, n, "spectra")?;
        let spectra = s.chunks(bands.max(1)).map(<[f64]>::to_vec).collect();
        let labels = (1..=count).map(|i| format!("em{i}")).collect();
        emit(out, HfEndmembers { inner: EndmemberSet::new(wl, spectra, labels)? })
    })
}

/// # Safety
/// `em` must be a live handle; the out pointers may be NULL.
#[no_mangle]
pub unsafe extern "C" fn hf_endmembers_dims(em: *const HfEndmembers, count: *mut usize, bands: *mut usize) -> HfStatus {
    guard(|| {
        let e = &handle(em, "endmembers")?.inner;
        if let Some(p) = count.as_mut() {
            *p = e.len();
        }
        if let Some(p) = bands.as_mut() {
            *p = e.bands();
        }
        Ok(())
    })
}

/// # Safety
/// `em` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hf_endmembers_free(em: *mut HfEndmembers) {
    if !em.is_null() {
        drop(Box::from_raw(em));
    }
}

/// Simplex-constrained abundances of one spectrum; writes `count` values.
///
/// # Safety
/// `pixel` must hold `bands` values and `abundances` room for `count`.
#[no_mangle]
pub unsafe extern "C" fn hf_unmix_pixel(
    em: *const HfEndmembers,
    pixel: *const f64,
    bands: usize,
    abundances: *mut f64,
    count: usize,
) -> HfStatus {
    guard(|| {
        let e = &handle(em, "endmembers")?.inner;
        if count != e.len() {
            return Err(Fail::Arg(format!("abundance buffer holds {count}, need {}", e.len())));
        }
        let x = slice_arg(pixel, bands, "pixel")?;
        let out = out_slice(abundances, count, "abundances")?;
        Unmixer::new(e)?.solve_into(x, out)?;
        Ok(())
    })
}

/// Unmixes every pixel of a cube.
///
/// # Safety
/// `cube` and `em` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hf_unmix_cube(cube: *const HfCube, em: *const HfEndmembers, out: *mut *mut HfAbundance) -> HfStatus {
    guard(|| {
        let c = &handle(cube, "cube")?.inner;
        let e = &handle(em, "endmembers")?.inner;
        emit(out, HfAbundance { inner: unmix_cube(c, e)? })
    })
}

/// # Safety
/// `ab` must be a live handle; the out pointers may be NULL.
#[no_mangle]
pub unsafe extern "C" fn hf_abundance_dims(ab: *const HfAbundance, rows: *mut usize, cols: *mut usize, count: *mut usize) -> HfStatus {
    guard(|| {
        let a = &handle(ab, "abundance")?.inner;
        for (p, v) in [(rows, a.rows), (cols, a.cols), (count, a.e())] {
            if let Some(p) = p.as_mut() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Copies the pixel-major abundances (`rows * cols * count` values).
///
/// # Safety
/// `buf` must have room for `len` values.
#[no_mangle]
pub unsafe extern "C" fn hf_abundance_copy(ab: *const HfAbundance, buf: *mut f64, len: usize) -> HfStatus {
    guard(|| {
        let a = &handle(ab, "abundance")?.inner;
        if len != a.values.len() {
            return Err(Fail::Arg(format!("buffer holds {len} values, need {}", a.values.len())));
        }
        out_slice(buf, len, "buf")?.copy_from_slice(&a.values);
        Ok(())
    })
}

/// # Safety
/// `ab` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hf_abundance_free(ab: *mut HfAbundance) {
    if !ab.is_null() {
        drop(Box::from_raw(ab));
    }
}

/// Loads a trained model checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hf_model_read(path: *const c_char, out: *mut *mut HfModel) -> HfStatus {
    guard(|| {
        let p = path_arg(path)?;
        emit(out, HfModel { inner: read_checkpoint(&p)? })
    })
}

/// # Safety
/// `model` must be a live handle; `dim` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hf_model_input_dim(model: *const HfModel, dim: *mut usize) -> HfStatus {
    guard(|| {
        let m = &handle(model, "model")?.inner;
        *dim.as_mut().ok_or(Fail::Null("dim"))? = m.layer_sizes()[0];
        Ok(())
    })
}

/// Predicts `rows` feature vectors of width `dim` (row-major) into
/// `predictions`.
///
/// # Safety
/// `features` must hold `rows * dim` values and `predictions` `rows`.
#[no_mangle]
pub unsafe extern "C" fn hf_model_predict(
    model: *const HfModel,
    features: *const f64,
    rows: usize,
    dim: usize,
    predictions: *mut f64,
) -> HfStatus {
    guard(|| {
        let m = &handle(model, "model")?.inner;
        let want = m.layer_sizes()[0];
        if dim != want {
            return Err(Fail::Arg(format!("model expects {want} features, got {dim}")));
        }
        let n = rows.checked_mul(dim).ok_or_else(|| Fail::Arg("size overflows".into()))?;
        let x = slice_arg(features, n, "features")?;
        let out = out_slice(predictions, rows, "predictions")?;
        for (o, row) in out.iter_mut().zip(x.chunks_exact(dim)) {
            *o = m.predict_row(row);
        }
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hf_model_free(model: *mut HfModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Splits `plot_yield` over windows in proportion to their SL pixel counts.
///
/// # Safety
/// `counts` must hold `n` values and `out` room for `n`.
#[no_mangle]
pub unsafe extern "C" fn hf_allocate_yield(counts: *const usize, n: usize, plot_yield: f64, out: *mut f64) -> HfStatus {
    guard(|| {
        if n > 0 && counts.is_null() {
            return Err(Fail::Null("counts"));
        }
        let c = if n == 0 { &[][..] } else { std::slice::from_raw_parts(counts, n) };
        let y = allocate_yield(c, plot_yield)?;
        out_slice(out, n, "out")?.copy_from_slice(&y);
        Ok(())
    })
}
