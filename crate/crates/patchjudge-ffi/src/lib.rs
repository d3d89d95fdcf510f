//! C ABI over the patch classifier: load a saved model directory,
//! score unified diffs, and read error details. All functions are
//! thread-safe as long as each `PjModel` handle is used from one
//! thread at a time; the error string is thread-local.
//!
//! The matching declarations live in `include/patchjudge.h`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use patchjudge::ingest::{parse_unified_diff, Label};
use patchjudge::model::PatchModel;

/// Opaque handle to a loaded model.
#[repr(C)]
pub struct PjModel {
    _private: [u8; 0],
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PjStatus {
    PjOk = 0,
    PjNullArgument = 1,
    PjInvalidUtf8 = 2,
    PjLoadFailed = 3,
    PjMalformedDiff = 4,
    PjPredictFailed = 5,
    PjPanic = 6,
}

/// Classification result. `label` is 0 for correct, 1 for
/// overfitting, matching the class indices used on the Rust side.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct PjPrediction {
    pub label: i32,
    pub p_correct: f64,
    pub p_overfitting: f64,
}

pub const PJ_LABEL_CORRECT: i32 = 0;
pub const PJ_LABEL_OVERFITTING: i32 = 1;

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: &str) {
    let sanitized = message.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn clear_error() {
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::default();
    });
}

/// Message for the most recent failure on this thread, empty when the
/// last call succeeded. The pointer stays valid until the next call
/// into this library from the same thread.
#[no_mangle]
pub extern "C" fn pj_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pj_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Loads a model directory written by the trainer. Returns NULL on
/// failure; `pj_last_error` then has the reason.
///
/// # Safety
/// `dir` must be NULL or a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn pj_model_load(dir: *const c_char) -> *mut PjModel {
    clear_error();
    if dir.is_null() {
        set_error("dir is NULL");
        return std::ptr::null_mut();
    }
    let Ok(dir) = CStr::from_ptr(dir).to_str() else {
        set_error("dir is not valid UTF-8");
        return std::ptr::null_mut();
    };
    let loaded = catch_unwind(|| PatchModel::<f32>::load(Path::new(dir)));
    match loaded {
        Ok(Ok(model)) => Box::into_raw(Box::new(model)) as *mut PjModel,
        Ok(Err(error)) => {
            set_error(&error.to_string());
            std::ptr::null_mut()
        }
        Err(_) => {
            set_error("internal panic while loading the model");
            std::ptr::null_mut()
        }
    }
}

/// Releases a model handle. NULL is a no-op.
///
/// # Safety
/// `model` must be NULL or a pointer returned by `pj_model_load`
/// that has not been freed yet.
#[no_mangle]
pub unsafe extern "C" fn pj_model_free(model: *mut PjModel) {
    if !model.is_null() {
        drop(Box::from_raw(model as *mut PatchModel<f32>));
    }
}

/// Classifies one unified diff, filling `out`.
///
/// # Safety
/// `model` must be a live handle from `pj_model_load`; `diff` must
/// be NULL or NUL-terminated; `out` must be NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn pj_predict(
    model: *const PjModel,
    diff: *const c_char,
    out: *mut PjPrediction,
) -> PjStatus {
    clear_error();
    if model.is_null() || diff.is_null() || out.is_null() {
        set_error("model, diff, and out must be non-NULL");
        return PjStatus::PjNullArgument;
    }
    let Ok(diff) = CStr::from_ptr(diff).to_str() else {
        set_error("diff is not valid UTF-8");
        return PjStatus::PjInvalidUtf8;
    };
    let model = &*(model as *const PatchModel<f32>);

    let pair = match parse_unified_diff(diff) {
        Ok(pair) => pair,
        Err(error) => {
            set_error(&error.to_string());
            return PjStatus::PjMalformedDiff;
        }
    };
    let result = catch_unwind(AssertUnwindSafe(|| model.predict(&pair)));
    match result {
        Ok(Ok(prediction)) => {
            let label = match prediction.label {
                Label::Correct => PJ_LABEL_CORRECT,
                Label::Overfitting => PJ_LABEL_OVERFITTING,
            };
            *out = PjPrediction {
                label,
                p_correct: prediction.p_correct,
                p_overfitting: prediction.p_overfitting,
            };
            PjStatus::PjOk
        }
        Ok(Err(error)) => {
            set_error(&error.to_string());
            PjStatus::PjPredictFailed
        }
        Err(_) => {
            set_error("internal panic while classifying");
            PjStatus::PjPanic
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use patchjudge::commands::{cmd_synth, cmd_train};
    use patchjudge::config::RunConfig;
    use patchjudge::ingest::read_jsonl;
    use std::path::PathBuf;

    fn trained_model_dir(dir: &Path) -> (PathBuf, String) {
        let dataset = dir.join("data.jsonl");
        cmd_synth(4, 3, &dataset).unwrap();
        let mut config = RunConfig::default();
        config.data.dataset = Some(dataset.to_string_lossy().into_owned());
        config.data.vocab_size = 600;
        config.model.layers = 1;
        config.model.heads = 2;
        config.model.model_dim = 8;
        config.model.ffn_dim = 16;
        config.model.max_len = 32;
        config.model.attn_dropout = 0.0;
        config.model.hidden_dropout = 0.0;
        config.train.dropout = 0.0;
        config.train.learning_rate = 1e-3;
        config.train.batch_size = 8;
        config.train.max_epochs = 1;
        config.train.seed = 7;
        let outcome = cmd_train(&config, &dir.join("run")).unwrap();
        let diff = read_jsonl(&dataset).unwrap()[0].diff_text.clone();
        (outcome.model_dir, diff)
    }

    fn c_string(s: &str) -> CString {
        CString::new(s).unwrap()
    }

    #[test]
    fn version_is_non_empty() {
        let version = unsafe { CStr::from_ptr(pj_version()) };
        assert!(!version.to_str().unwrap().is_empty());
    }

    #[test]
    fn load_predict_free_round_trip() {
        let tmp = tempfile::tempdir().unwrap();
        let (model_dir, diff) = trained_model_dir(tmp.path());
        let dir_c = c_string(model_dir.to_str().unwrap());
        let diff_c = c_string(&diff);

        unsafe {
            let handle = pj_model_load(dir_c.as_ptr());
            assert!(
                !handle.is_null(),
                "load failed: {:?}",
                CStr::from_ptr(pj_last_error())
            );
            let mut out = PjPrediction {
                label: -1,
                p_correct: 0.0,
                p_overfitting: 0.0,
            };
            let status = pj_predict(handle, diff_c.as_ptr(), &mut out);
            assert_eq!(status, PjStatus::PjOk);
            assert!(out.label == PJ_LABEL_CORRECT || out.label == PJ_LABEL_OVERFITTING);
            assert!((out.p_correct + out.p_overfitting - 1.0).abs() < 1e-5);

            let mut again = PjPrediction {
                label: -1,
                p_correct: 0.0,
                p_overfitting: 0.0,
            };
            let status = pj_predict(handle, diff_c.as_ptr(), &mut again);
            assert_eq!(status, PjStatus::PjOk);
            assert_eq!(out.p_overfitting, again.p_overfitting);
            pj_model_free(handle);
        }
    }

    #[test]
    fn load_failure_sets_error() {
        let missing = c_string("/nonexistent/model-dir");
        unsafe {
            let handle = pj_model_load(missing.as_ptr());
            assert!(handle.is_null());
            let message = CStr::from_ptr(pj_last_error()).to_str().unwrap();
            assert!(!message.is_empty());
        }
    }

    #[test]
    fn null_arguments_are_rejected() {
        unsafe {
            assert!(pj_model_load(std::ptr::null()).is_null());
            let mut out = PjPrediction {
                label: -1,
                p_correct: 0.0,
                p_overfitting: 0.0,
            };
            let status = pj_predict(std::ptr::null(), std::ptr::null(), &mut out);
            assert_eq!(status, PjStatus::PjNullArgument);
            pj_model_free(std::ptr::null_mut());
        }
    }

    #[test]
    fn malformed_diff_is_reported() {
        let tmp = tempfile::tempdir().unwrap();
        let (model_dir, _) = trained_model_dir(tmp.path());
        let dir_c = c_string(model_dir.to_str().unwrap());
        let bad = c_string("+only an addition, no hunk header\n");
        unsafe {
            let handle = pj_model_load(dir_c.as_ptr());
            assert!(!handle.is_null());
            let mut out = PjPrediction {
                label: -1,
                p_correct: 0.0,
                p_overfitting: 0.0,
            };
            let status = pj_predict(handle, bad.as_ptr(), &mut out);
            assert_eq!(status, PjStatus::PjMalformedDiff);
            pj_model_free(handle);
        }
    }

    #[test]
    fn header_declares_every_export() {
        let header = include_str!("../include/patchjudge.h");
        for symbol in [
            "pj_version",
            "pj_last_error",
            "pj_model_load",
            "pj_model_free",
            "pj_predict",
            "PjModel",
            "PjStatus",
            "PjPrediction",
        ] {
            assert!(header.contains(symbol), "header is missing {symbol}");
        }
    }
}
