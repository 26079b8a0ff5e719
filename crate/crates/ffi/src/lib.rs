// SPDX-License-Identifier: Apache-2.0

//! C ABI for the shuffle-model summation library.
//!
//! Conventions:
//! * Every fallible entry point returns an `int32_t` status code
//!   (`SHUFFLEDP_OK` on success) and writes results through out-pointers.
//! * Datasets are opaque handles created and released by this library.
//! * Strings returned through out-pointers are heap-allocated and must be
//!   released with `shuffledp_string_free`; `shuffledp_version` and
//!   `shuffledp_last_error` return borrowed pointers that must not be freed.
//! * `shuffledp_last_error` describes the most recent failure on the
//!   calling thread.
//! * All entry points catch panics and convert them to `SHUFFLEDP_ERR_PANIC`;
//!   they never unwind across the boundary.

use shuffledp::baselines::ScalarDataset;
use shuffledp::bench::{self, ExperimentConfig};
use shuffledp::sum_dp::{self, SumParams};
use shuffledp::{Error, PrivacyBudget, StreamSeed};
use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::os::raw::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};

/// Success.
pub const SHUFFLEDP_OK: i32 = 0;
/// A required pointer argument was null.
pub const SHUFFLEDP_ERR_NULL: i32 = 1;
/// Invalid configuration or parameters.
pub const SHUFFLEDP_ERR_CONFIG: i32 = 2;
/// Dataset construction, validation, or I/O failed.
pub const SHUFFLEDP_ERR_DATASET: i32 = 3;
/// An internal panic was caught at the boundary.
pub const SHUFFLEDP_ERR_PANIC: i32 = 4;
/// A string argument was not valid UTF-8.
pub const SHUFFLEDP_ERR_UTF8: i32 = 5;

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_last_error(message: &str) {
    let sanitized = message.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn code_of(err: &Error) -> i32 {
    match err {
        Error::InvalidParameter(_) | Error::ProtocolViolation(_) => SHUFFLEDP_ERR_CONFIG,
        Error::Dataset(_) | Error::Io(_) => SHUFFLEDP_ERR_DATASET,
    }
}

fn fail(err: &Error) -> i32 {
    set_last_error(&err.to_string());
    code_of(err)
}

/// Runs `body` with panic isolation; panics become `SHUFFLEDP_ERR_PANIC`.
fn guarded(body: impl FnOnce() -> i32) -> i32 {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(code) => code,
        Err(_) => {
            set_last_error("internal panic");
            SHUFFLEDP_ERR_PANIC
        }
    }
}

/// # Safety
/// `ptr` must be null or point to a NUL-terminated string.
unsafe fn utf8_arg<'a>(ptr: *const c_char) -> Result<&'a str, i32> {
    if ptr.is_null() {
        set_last_error("null pointer argument");
        return Err(SHUFFLEDP_ERR_NULL);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_last_error("argument is not valid UTF-8");
        SHUFFLEDP_ERR_UTF8
    })
}

/// Opaque handle for a validated scalar dataset.
pub struct ShuffledpDataset {
    inner: ScalarDataset,
}

/// Library version as a static NUL-terminated string; do not free.
#[no_mangle]
pub extern "C" fn shuffledp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message describing the calling thread's most recent error. The pointer
/// stays valid until the next failing call on the same thread; do not free.
#[no_mangle]
pub extern "C" fn shuffledp_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Builds a dataset from `len` values bounded by `domain` and writes the
/// handle to `out`. The values are copied; the caller keeps ownership of
/// the input buffer and must release the handle with
/// `shuffledp_dataset_free`.
///
/// # Safety
/// `values` must point to `len` readable u64 values and `out` must be a
/// valid writable pointer.
#[no_mangle]
pub unsafe extern "C" fn shuffledp_dataset_new(
    values: *const u64,
    len: usize,
    domain: u64,
    out: *mut *mut ShuffledpDataset,
) -> i32 {
    guarded(|| {
        if out.is_null() || (values.is_null() && len > 0) {
            set_last_error("null pointer argument");
            return SHUFFLEDP_ERR_NULL;
        }
        let slice = if len == 0 { &[] } else { std::slice::from_raw_parts(values, len) };
        match ScalarDataset::new(slice.to_vec(), domain) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(ShuffledpDataset { inner }));
                SHUFFLEDP_OK
            }
            Err(e) => fail(&e),
        }
    })
}

/// Reads a scalar dataset from a CSV file. `column` selects a header column
/// by name; pass null for a headerless single-column file. `domain` of 0
/// means "use the observed maximum"; otherwise values are clamped to it.
///
/// # Safety
/// `path` must be a NUL-terminated string, `column` null or NUL-terminated,
/// and `out` a valid writable pointer.
#[no_mangle]
pub unsafe extern "C" fn shuffledp_dataset_from_csv(
    path: *const c_char,
    column: *const c_char,
    domain: u64,
    out: *mut *mut ShuffledpDataset,
) -> i32 {
    guarded(|| {
        if out.is_null() {
            set_last_error("null pointer argument");
            return SHUFFLEDP_ERR_NULL;
        }
        let path = match utf8_arg(path) {
            Ok(s) => s,
            Err(code) => return code,
        };
        let column = if column.is_null() {
            None
        } else {
            match utf8_arg(column) {
                Ok(s) => Some(s),
                Err(code) => return code,
            }
        };
        let bound = if domain == 0 { None } else { Some(domain) };
        match bench::ingest_csv(path, column, bound) {
            Ok((inner, _, _)) => {
                *out = Box::into_raw(Box::new(ShuffledpDataset { inner }));
                SHUFFLEDP_OK
            }
            Err(e) => fail(&e),
        }
    })
}

/// Number of values in the dataset; 0 for a null handle.
///
/// # Safety
/// `dataset` must be null or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn shuffledp_dataset_len(dataset: *const ShuffledpDataset) -> u64 {
    if dataset.is_null() {
        return 0;
    }
    (*dataset).inner.n()
}

/// Exact (non-private) sum of the dataset; 0 for a null handle.
///
/// # Safety
/// `dataset` must be null or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn shuffledp_dataset_sum(dataset: *const ShuffledpDataset) -> u64 {
    if dataset.is_null() {
        return 0;
    }
    (*dataset).inner.sum() as u64
}

/// Releases a dataset handle. Null is ignored.
///
/// # Safety
/// `dataset` must be null or a handle produced by this library, and must
/// not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn shuffledp_dataset_free(dataset: *mut ShuffledpDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Runs one round of the scalar sum protocol with private threshold
/// selection over the dataset and writes the estimate to `out_estimate`
/// and the selected clipping threshold to `out_threshold` (ignored when
/// null). `noiseless` disables noise and rounding for exactness checks.
///
/// # Safety
/// `dataset` must be a live handle and `out_estimate` a valid writable
/// pointer; `out_threshold` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn shuffledp_sum_estimate(
    dataset: *const ShuffledpDataset,
    epsilon: f64,
    delta: f64,
    beta: f64,
    noiseless: bool,
    seed: u64,
    out_estimate: *mut f64,
    out_threshold: *mut u64,
) -> i32 {
    guarded(|| {
        if dataset.is_null() || out_estimate.is_null() {
            set_last_error("null pointer argument");
            return SHUFFLEDP_ERR_NULL;
        }
        let ds = &(*dataset).inner;
        let run = || -> Result<(f64, u64), Error> {
            let budget = PrivacyBudget::new(epsilon, delta, beta)?;
            let params = SumParams::with_tuning(
                budget,
                ds.n(),
                ds.domain(),
                shuffledp::base_sum::DEFAULT_LAMBDA,
                shuffledp::base_sum::default_zeta(epsilon),
                1.0,
                noiseless,
            )?;
            let (estimate, decision, _) =
                sum_dp::run_aggregated(ds.values(), &params, &StreamSeed::new(seed))?;
            Ok((estimate, decision.tau))
        };
        match run() {
            Ok((estimate, tau)) => {
                *out_estimate = estimate;
                if !out_threshold.is_null() {
                    *out_threshold = tau;
                }
                SHUFFLEDP_OK
            }
            Err(e) => fail(&e),
        }
    })
}

/// Runs a full experiment described by a JSON configuration (the same
/// schema the CLI uses) and writes a heap-allocated JSON report document to
/// `out_json`. Release the string with `shuffledp_string_free`.
///
/// # Safety
/// `config_json` must be a NUL-terminated string and `out_json` a valid
/// writable pointer.
#[no_mangle]
pub unsafe extern "C" fn shuffledp_run_experiment_json(
    config_json: *const c_char,
    out_json: *mut *mut c_char,
) -> i32 {
    guarded(|| {
        if out_json.is_null() {
            set_last_error("null pointer argument");
            return SHUFFLEDP_ERR_NULL;
        }
        let text = match utf8_arg(config_json) {
            Ok(s) => s,
            Err(code) => return code,
        };
        let config: ExperimentConfig = match serde_json::from_str(text) {
            Ok(c) => c,
            Err(e) => {
                set_last_error(&format!("invalid experiment config: {e}"));
                return SHUFFLEDP_ERR_CONFIG;
            }
        };
        match bench::run_experiment(&config) {
            Ok(report) => {
                let doc = bench::to_json_document(std::slice::from_ref(&report), None);
                let c = CString::new(doc).unwrap_or_default();
                *out_json = c.into_raw();
                SHUFFLEDP_OK
            }
            Err(e) => fail(&e),
        }
    })
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must be null or a string produced by this library, and must not be
/// used afterwards.
#[no_mangle]
pub unsafe extern "C" fn shuffledp_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ptr;

    fn cstr(s: &str) -> CString {
        CString::new(s).unwrap()
    }

    #[test]
    fn version_is_static_and_non_empty() {
        let v = shuffledp_version();
        assert!(!v.is_null());
        let text = unsafe { CStr::from_ptr(v) }.to_str().unwrap();
        assert!(!text.is_empty());
    }

    #[test]
    fn dataset_round_trip_and_estimate() {
        let values = [5u64, 7, 2, 9];
        let mut handle: *mut ShuffledpDataset = ptr::null_mut();
        let code = unsafe { shuffledp_dataset_new(values.as_ptr(), values.len(), 16, &mut handle) };
        assert_eq!(code, SHUFFLEDP_OK);
        assert_eq!(unsafe { shuffledp_dataset_len(handle) }, 4);
        assert_eq!(unsafe { shuffledp_dataset_sum(handle) }, 23);

        let mut estimate = f64::NAN;
        let mut tau = u64::MAX;
        let code = unsafe {
            shuffledp_sum_estimate(handle, 20.0, 1e-12, 0.1, true, 1, &mut estimate, &mut tau)
        };
        assert_eq!(code, SHUFFLEDP_OK);
        assert_eq!(estimate, 23.0, "noiseless estimate is exact");
        assert!(tau >= 9, "threshold covers the maximum, got {tau}");
        unsafe { shuffledp_dataset_free(handle) };
    }

    #[test]
    fn null_and_invalid_arguments_produce_codes() {
        let mut handle: *mut ShuffledpDataset = ptr::null_mut();
        assert_eq!(
            unsafe { shuffledp_dataset_new(ptr::null(), 3, 10, &mut handle) },
            SHUFFLEDP_ERR_NULL
        );
        let values = [11u64];
        assert_eq!(
            unsafe { shuffledp_dataset_new(values.as_ptr(), 1, 10, ptr::null_mut()) },
            SHUFFLEDP_ERR_NULL
        );
        // Value above the domain bound.
        let code = unsafe { shuffledp_dataset_new(values.as_ptr(), 1, 10, &mut handle) };
        assert_ne!(code, SHUFFLEDP_OK);
        let msg = unsafe { CStr::from_ptr(shuffledp_last_error()) }.to_str().unwrap();
        assert!(!msg.is_empty());

        // Invalid epsilon surfaces as a config error.
        let ok = unsafe { shuffledp_dataset_new(values.as_ptr(), 1, 16, &mut handle) };
        assert_eq!(ok, SHUFFLEDP_OK);
        let mut estimate = 0.0;
        let code = unsafe {
            shuffledp_sum_estimate(handle, -1.0, 1e-12, 0.1, true, 1, &mut estimate, ptr::null_mut())
        };
        assert_eq!(code, SHUFFLEDP_ERR_CONFIG);
        unsafe { shuffledp_dataset_free(handle) };

        let missing = cstr("/nonexistent/data.csv");
        let code = unsafe {
            shuffledp_dataset_from_csv(missing.as_ptr(), ptr::null(), 0, &mut handle)
        };
        assert_eq!(code, SHUFFLEDP_ERR_DATASET);
    }

    #[test]
    fn experiment_json_round_trip() {
        let config = cstr(
            r#"{
                "protocol": "sum",
                "epsilon": 5.0,
                "trials": 6,
                "trim": 1,
                "noiseless": true,
                "dataset": {"generate": {"kind": {"gauss": {"mu": 50.0, "sigma": 10.0}}, "n": 200, "domain": 1000}}
            }"#,
        );
        let mut out: *mut c_char = ptr::null_mut();
        let code = unsafe { shuffledp_run_experiment_json(config.as_ptr(), &mut out) };
        assert_eq!(code, SHUFFLEDP_OK);
        let text = unsafe { CStr::from_ptr(out) }.to_str().unwrap().to_string();
        unsafe { shuffledp_string_free(out) };
        let parsed: serde_json::Value = serde_json::from_str(&text).unwrap();
        let experiment = &parsed["experiments"][0];
        assert_eq!(experiment["trimmed_mean_error"], 0.0);
        assert_eq!(experiment["retained_trials"], 4);

        let bad = cstr("{\"protocol\": \"sum\"}");
        let code = unsafe { shuffledp_run_experiment_json(bad.as_ptr(), &mut out) };
        assert_eq!(code, SHUFFLEDP_ERR_CONFIG, "missing dataset field");
    }

    #[test]
    fn utf8_validation() {
        let bytes = [0xFFu8, 0xFE, 0x00];
        let mut out: *mut c_char = ptr::null_mut();
        let code = unsafe {
            shuffledp_run_experiment_json(bytes.as_ptr() as *const c_char, &mut out)
        };
        assert_eq!(code, SHUFFLEDP_ERR_UTF8);
    }
}
