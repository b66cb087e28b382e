//! C interface to the sepsplit library.
//!
//! Every fallible call returns a status code and writes results through
//! out-pointers. The message of the most recent failure on the calling
//! thread is available from `sepsplit_last_error_message`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use sepsplit::melnikov::{asymptotic_constants, melnikov_coefficient, predict_area, FSource, MelnikovOptions};
use sepsplit::model::{model_from_json, SystemModel};
use sepsplit::separatrix::analyze_separatrix;
use sepsplit::splitting::{measure, MeasureOptions};
use sepsplit::Error;

/// Status codes. Validation and numerical failures match the CLI exit codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SepsplitStatus {
    Ok = 0,
    ErrValidation = 2,
    ErrNumerical = 3,
    ErrNullPointer = 4,
    ErrPanic = 5,
}

/// Opaque model handle.
pub struct SepsplitModel {
    model: SystemModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(err: Error) -> SepsplitStatus {
    let code = err.exit_code();
    set_error(err.to_string());
    if code == 2 {
        SepsplitStatus::ErrValidation
    } else {
        SepsplitStatus::ErrNumerical
    }
}

fn guard(f: impl FnOnce() -> Result<(), SepsplitStatus>) -> SepsplitStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SepsplitStatus::Ok,
        Ok(Err(s)) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal error: {msg}"));
            SepsplitStatus::ErrPanic
        }
    }
}

fn null(what: &str) -> SepsplitStatus {
    set_error(format!("null pointer passed for {what}"));
    SepsplitStatus::ErrNullPointer
}

unsafe fn model_ref<'a>(m: *const SepsplitModel) -> Result<&'a SystemModel, SepsplitStatus> {
    if m.is_null() {
        return Err(null("model"));
    }
    Ok(&(*m).model)
}

unsafe fn write_out<T>(p: *mut T, v: T) {
    if !p.is_null() {
        *p = v;
    }
}

fn bits_or_default(bits: u32) -> u32 {
    if bits == 0 {
        sepsplit::numerics::big::default_bits()
    } else {
        bits
    }
}

/// Parses a model from JSON text.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer. The
/// handle written to `out` must be released with `sepsplit_model_free`.
#[no_mangle]
pub unsafe extern "C" fn sepsplit_model_from_json(json: *const c_char, out: *mut *mut SepsplitModel) -> SepsplitStatus {
    guard(|| {
        if json.is_null() {
            return Err(null("json"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let text = CStr::from_ptr(json)
            .to_str()
            .map_err(|_| fail(Error::Validation("model text is not UTF-8".into())))?;
        let model = model_from_json(text).map_err(fail)?;
        *out = Box::into_raw(Box::new(SepsplitModel { model }));
        Ok(())
    })
}

/// # Safety
/// `m` must be null or a handle from `sepsplit_model_from_json` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sepsplit_model_free(m: *mut SepsplitModel) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Regime, hypotheses, separatrix and constants as a JSON string. `bits`
/// 0 selects the default precision.
///
/// # Safety
/// `m` must be a live handle and `out_json` a valid pointer; the string must
/// be released with `sepsplit_string_free`.
#[no_mangle]
pub unsafe extern "C" fn sepsplit_analyze(m: *const SepsplitModel, bits: u32, out_json: *mut *mut c_char) -> SepsplitStatus {
    guard(|| {
        let model = model_ref(m)?;
        if out_json.is_null() {
            return Err(null("out_json"));
        }
        *out_json = ptr::null_mut();
        let v = sepsplit::cli::analyze_json(model, bits_or_default(bits)).map_err(fail)?;
        let s = CString::new(v.to_string()).map_err(|_| fail(Error::Numerical("NUL in report".into())))?;
        *out_json = s.into_raw();
        Ok(())
    })
}

/// Melnikov coefficient M^[k](ε).
///
/// # Safety
/// `m` must be a live handle; out-pointers may be null.
#[no_mangle]
pub unsafe extern "C" fn sepsplit_melnikov_coefficient(
    m: *const SepsplitModel,
    k: i64,
    eps: f64,
    bits: u32,
    out_re: *mut f64,
    out_im: *mut f64,
    out_err: *mut f64,
) -> SepsplitStatus {
    guard(|| {
        let model = model_ref(m)?;
        let bits = bits_or_default(bits);
        let sep = analyze_separatrix(&model.potential, bits).map_err(fail)?;
        let c = melnikov_coefficient(model, &sep, k, eps, bits, &MelnikovOptions::default()).map_err(fail)?;
        let v = c.value.to_c64();
        write_out(out_re, v.re);
        write_out(out_im, v.im);
        write_out(out_err, c.est_error);
        Ok(())
    })
}

/// Predicted lobe area from the regime's formula with the Melnikov constant.
///
/// # Safety
/// `m` must be a live handle; `out_area` may be null.
#[no_mangle]
pub unsafe extern "C" fn sepsplit_predict_area(m: *const SepsplitModel, eps: f64, bits: u32, out_area: *mut f64) -> SepsplitStatus {
    guard(|| {
        let model = model_ref(m)?;
        let bits = bits_or_default(bits);
        let sep = analyze_separatrix(&model.potential, bits).map_err(fail)?;
        let c = asymptotic_constants(model, &sep, bits).map_err(fail)?;
        let p = predict_area(model, &sep, &c, eps, &FSource::MelnikovF0, bits).map_err(fail)?;
        write_out(out_area, p.area.to_f64());
        Ok(())
    })
}

/// Direct lobe-area measurement. `bits` 0 uses the precision schedule.
///
/// # Safety
/// `m` must be a live handle; out-pointers may be null.
#[no_mangle]
pub unsafe extern "C" fn sepsplit_measure(
    m: *const SepsplitModel,
    eps: f64,
    tau0: f64,
    bits: u32,
    out_area: *mut f64,
    out_est_error: *mut f64,
) -> SepsplitStatus {
    guard(|| {
        let model = model_ref(m)?;
        let opts = MeasureOptions { tau0, bits: (bits != 0).then_some(bits), ..Default::default() };
        let r = measure(model, eps, &opts).map_err(fail)?;
        write_out(out_area, r.area);
        write_out(out_est_error, r.est_error);
        Ok(())
    })
}

/// Message of the last failure on this thread, or null. Free with
/// `sepsplit_string_free`.
#[no_mangle]
pub extern "C" fn sepsplit_last_error_message() -> *mut c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null_mut(), |c| c.clone().into_raw()))
}

/// # Safety
/// `s` must be null or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sepsplit_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn sepsplit_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
