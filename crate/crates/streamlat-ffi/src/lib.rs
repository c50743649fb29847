//! C ABI for the streamlat benchmark engine.
//!
//! Conventions:
//! - Handles are opaque pointers created and destroyed by this library.
//! - Every fallible call returns a `SlatStatus`; on failure a human-readable
//!   message is retrievable with `slat_last_error` (thread-local).
//! - Strings returned by the library are NUL-terminated UTF-8 owned by the
//!   library; release them with `slat_string_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use streamlat::compensation::CompensationStrategy;
use streamlat::eval::{streaming_evaluate, PipelineConfig, Provenance};
use streamlat::rng::Rng;
use streamlat::stream::{frames_at_rate, schedule_run, LatencyModel};
use streamlat::worldgen::{generate_scene, NoiseSpec, Scene, SceneConfig};

/// Status codes returned by every fallible entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlatStatus {
    /// Success.
    Ok = 0,
    /// A pointer argument was NULL or otherwise invalid.
    NullArgument = 1,
    /// A string argument was not valid UTF-8 or failed to parse.
    InvalidArgument = 2,
    /// Scene generation or evaluation failed; see `slat_last_error`.
    RuntimeError = 3,
    /// A panic was caught at the boundary; see `slat_last_error`.
    Panic = 4,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg).unwrap_or_else(|_| CString::new("error message had NUL").unwrap());
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard<F: FnOnce() -> SlatStatus>(f: F) -> SlatStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic at ffi boundary".into());
            set_error(msg);
            SlatStatus::Panic
        }
    }
}

/// Opaque scene handle.
pub struct SlatScene {
    scene: Scene,
}

/// Last error message for this thread, or NULL when no error is recorded.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn slat_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string; do not free.
#[no_mangle]
pub extern "C" fn slat_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Release a string returned by this library. NULL is a no-op.
///
/// # Safety
/// `s` must be a pointer previously returned by a slat_* call that documents
/// `slat_string_free` as its deallocator, and must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn slat_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

unsafe fn parse_cstr<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, SlatStatus> {
    if ptr.is_null() {
        set_error(format!("{what} is NULL"));
        return Err(SlatStatus::NullArgument);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error(format!("{what} is not valid UTF-8"));
        SlatStatus::InvalidArgument
    })
}

fn export_string(s: String, out: *mut *mut c_char) -> SlatStatus {
    let c = match CString::new(s) {
        Ok(c) => c,
        Err(_) => {
            set_error("output contained an interior NUL".into());
            return SlatStatus::RuntimeError;
        }
    };
    unsafe { *out = c.into_raw() };
    SlatStatus::Ok
}

/// Generate a scene from a JSON `SceneConfig` document and return an opaque
/// handle through `out`. Release with `slat_scene_free`.
///
/// # Safety
/// `config_json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn slat_scene_generate(
    config_json: *const c_char,
    out: *mut *mut SlatScene,
) -> SlatStatus {
    guard(|| {
        if out.is_null() {
            set_error("out is NULL".into());
            return SlatStatus::NullArgument;
        }
        let text = match parse_cstr(config_json, "config_json") {
            Ok(t) => t,
            Err(s) => return s,
        };
        let cfg: SceneConfig = match serde_json::from_str(text) {
            Ok(c) => c,
            Err(e) => {
                set_error(format!("bad scene config: {e}"));
                return SlatStatus::InvalidArgument;
            }
        };
        match generate_scene(&cfg) {
            Ok(scene) => {
                *out = Box::into_raw(Box::new(SlatScene { scene }));
                SlatStatus::Ok
            }
            Err(e) => {
                set_error(e.to_string());
                SlatStatus::RuntimeError
            }
        }
    })
}

/// Parse a scene previously serialized as JSON (e.g. by the CLI `gen`
/// command) into an opaque handle. Release with `slat_scene_free`.
///
/// # Safety
/// `scene_json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn slat_scene_from_json(
    scene_json: *const c_char,
    out: *mut *mut SlatScene,
) -> SlatStatus {
    guard(|| {
        if out.is_null() {
            set_error("out is NULL".into());
            return SlatStatus::NullArgument;
        }
        let text = match parse_cstr(scene_json, "scene_json") {
            Ok(t) => t,
            Err(s) => return s,
        };
        match serde_json::from_str::<Scene>(text) {
            Ok(scene) => {
                *out = Box::into_raw(Box::new(SlatScene { scene }));
                SlatStatus::Ok
            }
            Err(e) => {
                set_error(format!("bad scene json: {e}"));
                SlatStatus::InvalidArgument
            }
        }
    })
}

/// Serialize a scene handle back to JSON. Release the string with
/// `slat_string_free`.
///
/// # Safety
/// `scene` must come from `slat_scene_generate`/`slat_scene_from_json` and
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn slat_scene_to_json(
    scene: *const SlatScene,
    out: *mut *mut c_char,
) -> SlatStatus {
    guard(|| {
        if scene.is_null() || out.is_null() {
            set_error("scene or out is NULL".into());
            return SlatStatus::NullArgument;
        }
        match serde_json::to_string(&(*scene).scene) {
            Ok(json) => export_string(json, out),
            Err(e) => {
                set_error(e.to_string());
                SlatStatus::RuntimeError
            }
        }
    })
}

/// Release a scene handle. NULL is a no-op.
///
/// # Safety
/// `scene` must come from this library and must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn slat_scene_free(scene: *mut SlatScene) {
    if !scene.is_null() {
        drop(Box::from_raw(scene));
    }
}

#[derive(serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct FfiRunConfig {
    latency: LatencyModel,
    strategy: CompensationStrategy,
    #[serde(default)]
    noise: Option<NoiseSpec>,
    #[serde(default = "default_rate")]
    frame_rate: f64,
    #[serde(default = "default_rate")]
    eval_rate: f64,
    #[serde(default)]
    seed: u64,
}

fn default_rate() -> f64 {
    12.0
}

/// Run the streaming benchmark on one scene. `run_config_json` is a JSON
/// document: `{"latency": {...}, "strategy": {...}, "noise": null,
/// "frame_rate": 12.0, "eval_rate": 12.0, "seed": 0}`. The full metrics
/// report is returned as a JSON string through `out`; release it with
/// `slat_string_free`.
///
/// # Safety
/// `scene` must come from this library, `run_config_json` must be a
/// NUL-terminated string, and `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn slat_run(
    scene: *const SlatScene,
    run_config_json: *const c_char,
    out: *mut *mut c_char,
) -> SlatStatus {
    guard(|| {
        if scene.is_null() || out.is_null() {
            set_error("scene or out is NULL".into());
            return SlatStatus::NullArgument;
        }
        let text = match parse_cstr(run_config_json, "run_config_json") {
            Ok(t) => t,
            Err(s) => return s,
        };
        let cfg: FfiRunConfig = match serde_json::from_str(text) {
            Ok(c) => c,
            Err(e) => {
                set_error(format!("bad run config: {e}"));
                return SlatStatus::InvalidArgument;
            }
        };
        let scene = &(*scene).scene;
        let frames = frames_at_rate(cfg.frame_rate, scene.duration);
        let mut rng = Rng::new(cfg.seed).split(0x5c4e).split(scene.seed);
        let sched = match schedule_run(&frames, &cfg.latency, cfg.eval_rate, &mut rng) {
            Ok(s) => s,
            Err(e) => {
                set_error(e.to_string());
                return SlatStatus::RuntimeError;
            }
        };
        let noise = cfg.noise.unwrap_or_default();
        let pipe = PipelineConfig::baseline(cfg.strategy.clone(), noise, cfg.seed);
        let provenance = Provenance {
            config_hash: String::new(),
            seed: cfg.seed,
            latency_model: String::new(),
            strategy: cfg.strategy.to_string(),
        };
        match streaming_evaluate(scene, &sched, &pipe, provenance) {
            Ok(report) => match serde_json::to_string(&report) {
                Ok(json) => export_string(json, out),
                Err(e) => {
                    set_error(e.to_string());
                    SlatStatus::RuntimeError
                }
            },
            Err(e) => {
                set_error(e.to_string());
                SlatStatus::RuntimeError
            }
        }
    })
}
