//! C ABI over the coverage grid, the oracle interface and the suite metrics.
//!
//! Every function returns a [`CdfStatus`]; results go through out-pointers.
//! On failure the message is kept per thread and read back with
//! [`cdf_last_error_message`]. Handles are opaque and must be released with
//! their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use codofuzz::evaluation::entropy;
use codofuzz::oracle::open_oracle;
use codofuzz::{bin_index, softmax, CoverageMatrix, Error, ImageTensor, Oracle, OutputTuple};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CdfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    BufferTooSmall = 3,
    Io = 4,
    Transport = 5,
    Protocol = 6,
    Panic = 7,
}

/// Co-domain coverage grid.
pub struct CdfCoverage(CoverageMatrix);

/// A loaded classifier.
pub struct CdfOracle(Box<dyn Oracle>);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> CdfStatus {
    match err {
        Error::Io { .. } | Error::Corruption { .. } => CdfStatus::Io,
        Error::Transport { .. } => CdfStatus::Transport,
        Error::Protocol(_) => CdfStatus::Protocol,
        _ => CdfStatus::InvalidArgument,
    }
}

struct Fail(CdfStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(CdfStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, converting errors and panics into a status and a stored message.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> CdfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            CdfStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside codofuzz".into());
            CdfStatus::Panic
        }
    }
}

unsafe fn write<T>(out: *mut T, value: T, what: &str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

unsafe fn slice<'a, T>(data: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if data.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(data, len))
}

unsafe fn copy_out(values: &[f64], out: *mut f64, capacity: usize) -> Result<(), Fail> {
    if capacity < values.len() {
        return Err(Fail(
            CdfStatus::BufferTooSmall,
            format!("need {} slots, got {capacity}", values.len()),
        ));
    }
    if out.is_null() {
        return Err(null("output buffer"));
    }
    ptr::copy_nonoverlapping(values.as_ptr(), out, values.len());
    Ok(())
}

/// Message of the last failed call on this thread, or null. The pointer stays
/// valid until the next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn cdf_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn cdf_bin_index(
    confidence: f64,
    n_bins: usize,
    out: *mut usize,
) -> CdfStatus {
    guard(|| write(out, bin_index(confidence, n_bins)?, "out"))
}

/// # Safety
/// `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn cdf_coverage_new(
    n_classes: usize,
    n_bins: usize,
    cap: u32,
    out: *mut *mut CdfCoverage,
) -> CdfStatus {
    guard(|| {
        let cov = CoverageMatrix::new(n_classes, n_bins, cap)?;
        write(out, Box::into_raw(Box::new(CdfCoverage(cov))), "out")
    })
}

/// # Safety
/// `cov` must come from [`cdf_coverage_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn cdf_coverage_free(cov: *mut CdfCoverage) {
    if !cov.is_null() {
        drop(Box::from_raw(cov));
    }
}

/// Feeds one probability vector; `increased` is set to 1 if a cell count grew.
///
/// # Safety
/// `cov` must be a live handle, `probs` must hold `len` values and
/// `increased` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn cdf_coverage_update(
    cov: *mut CdfCoverage,
    probs: *const f64,
    len: usize,
    increased: *mut u8,
) -> CdfStatus {
    guard(|| {
        let cov = cov.as_mut().ok_or_else(|| null("coverage"))?;
        let tuple = OutputTuple::from_probs(slice(probs, len, "probs")?.to_vec())?;
        let grew = cov.0.update(&tuple)?;
        write(increased, u8::from(grew), "increased")
    })
}

/// # Safety
/// `cov` must be a live handle and `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn cdf_coverage_count(
    cov: *const CdfCoverage,
    row: usize,
    col: usize,
    out: *mut u32,
) -> CdfStatus {
    guard(|| {
        let cov = cov.as_ref().ok_or_else(|| null("coverage"))?;
        if row >= cov.0.n_classes() || col >= cov.0.n_bins() {
            return Err(Fail(
                CdfStatus::InvalidArgument,
                format!("cell ({row}, {col}) outside the grid"),
            ));
        }
        write(out, cov.0.count(row, col), "out")
    })
}

/// # Safety
/// `cov` must be a live handle and `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn cdf_coverage_cdc(
    cov: *const CdfCoverage,
    exclude_infeasible: bool,
    out: *mut f64,
) -> CdfStatus {
    guard(|| {
        let cov = cov.as_ref().ok_or_else(|| null("coverage"))?;
        write(out, cov.0.cdc_score(exclude_infeasible), "out")
    })
}

/// # Safety
/// `cov` must be a live handle and `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn cdf_coverage_kcdc(
    cov: *const CdfCoverage,
    exclude_infeasible: bool,
    out: *mut f64,
) -> CdfStatus {
    guard(|| {
        let cov = cov.as_ref().ok_or_else(|| null("coverage"))?;
        write(out, cov.0.kcdc_score(exclude_infeasible), "out")
    })
}

/// Opens a classifier from a descriptor such as `builtin:desk`,
/// `builtin:<model.json>`, `tcp:<host>:<port>` or `cmd:<command>`.
///
/// # Safety
/// `descriptor` must be a nul-terminated string and `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn cdf_oracle_open(
    descriptor: *const c_char,
    out: *mut *mut CdfOracle,
) -> CdfStatus {
    guard(|| {
        if descriptor.is_null() {
            return Err(null("descriptor"));
        }
        let desc = CStr::from_ptr(descriptor)
            .to_str()
            .map_err(|e| Fail(CdfStatus::InvalidArgument, format!("descriptor: {e}")))?;
        let oracle = open_oracle(desc)?;
        write(out, Box::into_raw(Box::new(CdfOracle(oracle))), "out")
    })
}

/// # Safety
/// `oracle` must come from [`cdf_oracle_open`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn cdf_oracle_free(oracle: *mut CdfOracle) {
    if !oracle.is_null() {
        drop(Box::from_raw(oracle));
    }
}

/// Number of classes and the expected `height x width x channels` input.
///
/// # Safety
/// `oracle` must be a live handle; every out-pointer must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn cdf_oracle_info(
    oracle: *const CdfOracle,
    n_classes: *mut usize,
    height: *mut usize,
    width: *mut usize,
    channels: *mut usize,
) -> CdfStatus {
    guard(|| {
        let o = &oracle.as_ref().ok_or_else(|| null("oracle"))?.0;
        let shape = o.input_shape();
        write(n_classes, o.n_classes(), "n_classes")?;
        write(height, shape.height, "height")?;
        write(width, shape.width, "width")?;
        write(channels, shape.channels, "channels")
    })
}

/// Probability vector for one row-major, channel-last image with pixels in [0, 1].
///
/// # Safety
/// `pixels` must hold `len` values and `probs` room for `capacity` values.
#[no_mangle]
pub unsafe extern "C" fn cdf_oracle_predict(
    oracle: *const CdfOracle,
    pixels: *const f32,
    len: usize,
    probs: *mut f64,
    capacity: usize,
) -> CdfStatus {
    guard(|| {
        let o = &oracle.as_ref().ok_or_else(|| null("oracle"))?.0;
        let image = ImageTensor::new(o.input_shape(), slice(pixels, len, "pixels")?.to_vec())?;
        let p = codofuzz::predict(o.as_ref(), &image)?;
        copy_out(p.prob_vector(), probs, capacity)
    })
}

/// # Safety
/// `logits` must hold `len` values and `probs` room for `len` values.
#[no_mangle]
pub unsafe extern "C" fn cdf_softmax(logits: *const f64, len: usize, probs: *mut f64) -> CdfStatus {
    guard(|| copy_out(&softmax(slice(logits, len, "logits")?)?, probs, len))
}

/// Shannon entropy in nats of a probability vector.
///
/// # Safety
/// `probs` must hold `len` values and `out` be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn cdf_entropy(probs: *const f64, len: usize, out: *mut f64) -> CdfStatus {
    guard(|| {
        let p = slice(probs, len, "probs")?;
        OutputTuple::from_probs(p.to_vec())?;
        write(out, entropy(p), "out")
    })
}
