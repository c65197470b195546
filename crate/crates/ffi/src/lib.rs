//! C interface to the segsynth pipeline.
//!
//! Every function returns a [`SegsynthStatus`]; on failure a description is
//! available from [`segsynth_last_error`] on the same thread. Objects are
//! opaque handles created by `*_new`/`*_from_*` functions and released with
//! the matching `*_free`. Strings returned to the caller must be released
//! with [`segsynth_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use image::RgbImage;
use segsynth::backend::{Capability, GenerationBackend};
use segsynth::config::{ConfigError, PipelineConfig, Resolution};
use segsynth::dataset_io::load_dataset;
use segsynth::mask_ops::{composite, BinaryMask};
use segsynth::pipeline::{backend_from_spec, run, run_dataset, PipelineError};
use segsynth::prompting::{build_class_aware_prompt, render_weighted_syntax};
use segsynth::visual_prior::{blend, PriorSource, VisualPrior};
use segsynth::{verify_run, RunReport};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegsynthStatus {
    Ok = 0,
    InvalidArgument = 1,
    Config = 2,
    Transport = 3,
    Dataset = 4,
    Generation = 5,
    Io = 6,
    Panic = 99,
}

pub struct SegsynthConfig {
    inner: PipelineConfig,
}

pub struct SegsynthBackend {
    inner: Box<dyn GenerationBackend>,
}

pub struct SegsynthRunReport {
    inner: RunReport,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SegsynthRunCounts {
    pub samples: usize,
    pub d1_ok: usize,
    pub d2_ok: usize,
    pub d2_skipped: usize,
    pub failed: usize,
    pub class_failures: usize,
    pub load_issues: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(SegsynthStatus, String);

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure(SegsynthStatus::Config, e.to_string())
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        let status = match &e {
            PipelineError::Config(_) | PipelineError::MissingCapability(_) => SegsynthStatus::Config,
            PipelineError::Backend(_) => SegsynthStatus::Transport,
            PipelineError::Dataset(_) => SegsynthStatus::Dataset,
            PipelineError::Io { .. } => SegsynthStatus::Io,
            _ => SegsynthStatus::Generation,
        };
        Failure(status, e.to_string())
    }
}

fn invalid(message: impl Into<String>) -> Failure {
    Failure(SegsynthStatus::InvalidArgument, message.into())
}

fn set_last_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SegsynthStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SegsynthStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_last_error(message);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("internal panic: {msg}"));
            SegsynthStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(invalid(format!("{name} is NULL")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{name} is not valid UTF-8")))
}

unsafe fn mut_arg<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| invalid(format!("{name} is NULL")))
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| invalid(format!("{name} is NULL")))
}

fn out_string(s: String, out: *mut *mut c_char) {
    let c = CString::new(s.replace('\0', " ")).expect("interior NULs removed");
    // SAFETY: callers have checked `out` for NULL.
    unsafe { *out = c.into_raw() };
}

/// Message for the last failed call on this thread, or NULL. Valid until the
/// next segsynth call on the same thread.
#[no_mangle]
pub extern "C" fn segsynth_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn segsynth_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `s` must be NULL or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn segsynth_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Default configuration.
#[no_mangle]
pub extern "C" fn segsynth_config_new() -> *mut SegsynthConfig {
    Box::into_raw(Box::new(SegsynthConfig {
        inner: PipelineConfig::default(),
    }))
}

/// Parses TOML configuration text.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn segsynth_config_from_toml(text: *const c_char, out: *mut *mut SegsynthConfig) -> SegsynthStatus {
    guard(|| {
        let text = str_arg(text, "text")?;
        let out = mut_arg(out, "out")?;
        let inner = PipelineConfig::from_toml_str(text)?;
        *out = Box::into_raw(Box::new(SegsynthConfig { inner }));
        Ok(())
    })
}

/// Reads a TOML configuration file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn segsynth_config_from_file(path: *const c_char, out: *mut *mut SegsynthConfig) -> SegsynthStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let out = mut_arg(out, "out")?;
        let inner = PipelineConfig::from_file(path.as_ref())?;
        *out = Box::into_raw(Box::new(SegsynthConfig { inner }));
        Ok(())
    })
}

/// # Safety
/// `cfg` must be NULL or a handle from this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn segsynth_config_free(cfg: *mut SegsynthConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Applies `edit` and rolls back if the result no longer validates.
unsafe fn edit_config(
    cfg: *mut SegsynthConfig,
    edit: impl FnOnce(&mut PipelineConfig) -> Result<(), Failure>,
) -> SegsynthStatus {
    guard(|| {
        let cfg = mut_arg(cfg, "cfg")?;
        let mut next = cfg.inner.clone();
        edit(&mut next)?;
        next.validate()?;
        cfg.inner = next;
        Ok(())
    })
}

/// # Safety
/// `cfg` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn segsynth_config_set_data_root(cfg: *mut SegsynthConfig, path: *const c_char) -> SegsynthStatus {
    edit_config(cfg, |c| {
        c.data_root = Some(PathBuf::from(str_arg(path, "path")?));
        Ok(())
    })
}

/// # Safety
/// `cfg` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn segsynth_config_set_out_root(cfg: *mut SegsynthConfig, path: *const c_char) -> SegsynthStatus {
    edit_config(cfg, |c| {
        c.out_root = Some(PathBuf::from(str_arg(path, "path")?));
        Ok(())
    })
}

/// `"mock"` or a worker base URL.
///
/// # Safety
/// `cfg` must be a live handle; `spec` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn segsynth_config_set_backend(cfg: *mut SegsynthConfig, spec: *const c_char) -> SegsynthStatus {
    edit_config(cfg, |c| {
        c.backend = str_arg(spec, "spec")?.to_string();
        Ok(())
    })
}

/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn segsynth_config_set_run_seed(cfg: *mut SegsynthConfig, seed: u64) -> SegsynthStatus {
    edit_config(cfg, |c| {
        c.run_seed = seed;
        Ok(())
    })
}

/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn segsynth_config_set_alpha(cfg: *mut SegsynthConfig, alpha: f64) -> SegsynthStatus {
    edit_config(cfg, |c| {
        c.alpha = alpha;
        Ok(())
    })
}

/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn segsynth_config_set_gen_resolution(
    cfg: *mut SegsynthConfig,
    width: u32,
    height: u32,
) -> SegsynthStatus {
    edit_config(cfg, |c| {
        c.gen_resolution = Resolution { width, height };
        Ok(())
    })
}

/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn segsynth_config_set_paths(cfg: *mut SegsynthConfig, d1: bool, d2: bool) -> SegsynthStatus {
    edit_config(cfg, |c| {
        c.paths = segsynth::config::Paths { d1, d2 };
        Ok(())
    })
}

/// Effective configuration as TOML.
///
/// # Safety
/// `cfg` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn segsynth_config_to_toml(cfg: *const SegsynthConfig, out: *mut *mut c_char) -> SegsynthStatus {
    guard(|| {
        let cfg = ref_arg(cfg, "cfg")?;
        mut_arg(out, "out")?;
        out_string(cfg.inner.to_toml_string(), out);
        Ok(())
    })
}

/// `"mock"` or a worker base URL.
///
/// # Safety
/// `spec` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn segsynth_backend_new(spec: *const c_char, out: *mut *mut SegsynthBackend) -> SegsynthStatus {
    guard(|| {
        let spec = str_arg(spec, "spec")?;
        let out = mut_arg(out, "out")?;
        let inner = backend_from_spec(spec)?;
        *out = Box::into_raw(Box::new(SegsynthBackend { inner }));
        Ok(())
    })
}

/// # Safety
/// `backend` must be NULL or a handle from this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn segsynth_backend_free(backend: *mut SegsynthBackend) {
    if !backend.is_null() {
        drop(Box::from_raw(backend));
    }
}

/// Queries the backend's health endpoint; `capability` is one of
/// `img2img`, `inpaint`, `caption`, `prior`.
///
/// # Safety
/// `backend` must be a live handle; `capability` a NUL-terminated string;
/// `supported` must be writable.
#[no_mangle]
pub unsafe extern "C" fn segsynth_backend_supports(
    backend: *const SegsynthBackend,
    capability: *const c_char,
    supported: *mut bool,
) -> SegsynthStatus {
    guard(|| {
        let backend = ref_arg(backend, "backend")?;
        let name = str_arg(capability, "capability")?;
        let supported = mut_arg(supported, "supported")?;
        let cap = Capability::ALL
            .into_iter()
            .find(|c| c.to_string() == name)
            .ok_or_else(|| invalid(format!("unknown capability {name:?}")))?;
        let health = backend
            .inner
            .health()
            .map_err(|e| Failure(SegsynthStatus::Transport, e.to_string()))?;
        *supported = health.supports(cap);
        Ok(())
    })
}

/// Runs the pipeline. `backend` may be NULL to build the one named in the
/// configuration. A report is produced even when some samples fail; check
/// its counts.
///
/// # Safety
/// `cfg` must be a live handle; `backend` NULL or a live handle; `out` must
/// be writable.
#[no_mangle]
pub unsafe extern "C" fn segsynth_run(
    cfg: *const SegsynthConfig,
    backend: *const SegsynthBackend,
    out: *mut *mut SegsynthRunReport,
) -> SegsynthStatus {
    guard(|| {
        let cfg = &ref_arg(cfg, "cfg")?.inner;
        let out = mut_arg(out, "out")?;
        let Some(backend) = backend.as_ref() else {
            let inner = run(cfg)?;
            *out = Box::into_raw(Box::new(SegsynthRunReport { inner }));
            return Ok(());
        };
        cfg.validate()?;
        let missing = |field| ConfigError::Invalid {
            field,
            message: "not set".into(),
        };
        let data_root = cfg.data_root.as_deref().ok_or_else(|| missing("data_root"))?;
        let out_root = cfg.out_root.as_deref().ok_or_else(|| missing("out_root"))?;
        let class_map = cfg.dataset.class_map.resolve()?;
        let dataset = load_dataset(data_root, cfg.dataset.layout, &class_map).map_err(PipelineError::from)?;
        let inner = run_dataset(cfg, &dataset, &class_map, backend.inner.as_ref(), out_root)?;
        *out = Box::into_raw(Box::new(SegsynthRunReport { inner }));
        Ok(())
    })
}

/// # Safety
/// `report` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn segsynth_report_counts(
    report: *const SegsynthRunReport,
    out: *mut SegsynthRunCounts,
) -> SegsynthStatus {
    guard(|| {
        let c = &ref_arg(report, "report")?.inner.counts;
        *mut_arg(out, "out")? = SegsynthRunCounts {
            samples: c.samples,
            d1_ok: c.d1_ok,
            d2_ok: c.d2_ok,
            d2_skipped: c.d2_skipped,
            failed: c.failed,
            class_failures: c.class_failures,
            load_issues: c.load_issues,
        };
        Ok(())
    })
}

/// Full report as JSON.
///
/// # Safety
/// `report` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn segsynth_report_to_json(report: *const SegsynthRunReport, out: *mut *mut c_char) -> SegsynthStatus {
    guard(|| {
        let report = ref_arg(report, "report")?;
        mut_arg(out, "out")?;
        let json = serde_json::to_string(&report.inner).map_err(|e| Failure(SegsynthStatus::Io, e.to_string()))?;
        out_string(json, out);
        Ok(())
    })
}

/// # Safety
/// `report` must be NULL or a handle from this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn segsynth_report_free(report: *mut SegsynthRunReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// Re-checks a finished run; the dataset layout and class map come from
/// `cfg`. Writes the number of failing entries to `failures`.
///
/// # Safety
/// Strings must be NUL-terminated; `cfg` a live handle; `failures` writable.
#[no_mangle]
pub unsafe extern "C" fn segsynth_verify(
    out_root: *const c_char,
    data_root: *const c_char,
    cfg: *const SegsynthConfig,
    failures: *mut usize,
) -> SegsynthStatus {
    guard(|| {
        let out_root = str_arg(out_root, "out_root")?;
        let data_root = str_arg(data_root, "data_root")?;
        let cfg = &ref_arg(cfg, "cfg")?.inner;
        let failures = mut_arg(failures, "failures")?;
        let class_map = cfg.dataset.class_map.resolve()?;
        let report = verify_run(out_root.as_ref(), data_root.as_ref(), cfg.dataset.layout, &class_map)
            .map_err(|e| Failure(SegsynthStatus::Dataset, e.to_string()))?;
        *failures = report.aggregate.failures;
        Ok(())
    })
}

/// Pointwise `min(1, alpha * image_prior + label_prior)` over `len` values.
/// Inputs are clamped to `[0, 1]` first.
///
/// # Safety
/// All three buffers must hold `len` floats; `out` may alias neither input.
#[no_mangle]
pub unsafe extern "C" fn segsynth_blend(
    image_prior: *const f32,
    label_prior: *const f32,
    len: usize,
    alpha: f64,
    out: *mut f32,
) -> SegsynthStatus {
    guard(|| {
        if len == 0 {
            return Ok(());
        }
        if image_prior.is_null() || label_prior.is_null() || out.is_null() {
            return Err(invalid("NULL buffer"));
        }
        let w = u32::try_from(len).map_err(|_| invalid("len too large"))?;
        let vi = VisualPrior::new(w, 1, std::slice::from_raw_parts(image_prior, len).to_vec(), PriorSource::Image);
        let vs = VisualPrior::new(w, 1, std::slice::from_raw_parts(label_prior, len).to_vec(), PriorSource::Label);
        let v = blend(&vi, &vs, alpha).map_err(|e| invalid(e.to_string()))?;
        std::slice::from_raw_parts_mut(out, len).copy_from_slice(v.data());
        Ok(())
    })
}

/// Pastes each patch onto `base` where its mask is non-zero. Buffers are
/// row-major: RGB images `width*height*3` bytes, masks `width*height` bytes.
/// Masks must not overlap.
///
/// # Safety
/// `base` and `out` must hold an RGB image; `patches` and `masks` must each
/// point to `count` pointers to buffers of the stated sizes.
#[no_mangle]
pub unsafe extern "C" fn segsynth_composite(
    base: *const u8,
    width: u32,
    height: u32,
    patches: *const *const u8,
    masks: *const *const u8,
    count: usize,
    out: *mut u8,
) -> SegsynthStatus {
    guard(|| {
        if base.is_null() || out.is_null() || (count > 0 && (patches.is_null() || masks.is_null())) {
            return Err(invalid("NULL buffer"));
        }
        let pixels = width as usize * height as usize;
        let rgb = |p: *const u8| -> Result<RgbImage, Failure> {
            if p.is_null() {
                return Err(invalid("NULL patch"));
            }
            let data = std::slice::from_raw_parts(p, pixels * 3).to_vec();
            RgbImage::from_raw(width, height, data).ok_or_else(|| invalid("bad image size"))
        };
        let base_img = rgb(base)?;
        let mut pairs = Vec::with_capacity(count);
        for i in 0..count {
            let m = *masks.add(i);
            if m.is_null() {
                return Err(invalid(format!("mask {i} is NULL")));
            }
            let bits = std::slice::from_raw_parts(m, pixels).to_vec();
            let mask = BinaryMask::from_raw(width, height, bits, i.min(255) as u8).map_err(|e| invalid(e.to_string()))?;
            pairs.push((rgb(*patches.add(i))?, mask));
        }
        let result = composite(&base_img, &pairs).map_err(|e| invalid(e.to_string()))?;
        std::slice::from_raw_parts_mut(out, pixels * 3).copy_from_slice(result.as_raw());
        Ok(())
    })
}

/// Builds the class-aware prompt for `caption` (may be NULL) and returns the
/// weighted rendering and the plain text. Either output pointer may be NULL.
///
/// # Safety
/// `class_names` must point to `count` NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn segsynth_prompt_render(
    caption: *const c_char,
    class_names: *const *const c_char,
    count: usize,
    weight: f64,
    weighted_out: *mut *mut c_char,
    plain_out: *mut *mut c_char,
) -> SegsynthStatus {
    guard(|| {
        if !(weight.is_finite() && weight >= 1.0) {
            return Err(invalid(format!("weight {weight} must be >= 1")));
        }
        let caption = if caption.is_null() { "" } else { str_arg(caption, "caption")? };
        if count > 0 && class_names.is_null() {
            return Err(invalid("class_names is NULL"));
        }
        let names = (0..count)
            .map(|i| str_arg(*class_names.add(i), "class name"))
            .collect::<Result<Vec<_>, _>>()?;
        let spec = build_class_aware_prompt(caption, &names, weight);
        if !weighted_out.is_null() {
            out_string(render_weighted_syntax(&spec), weighted_out);
        }
        if !plain_out.is_null() {
            out_string(spec.plain_text(), plain_out);
        }
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn panics_become_status_and_message() {
        let status = guard(|| panic!("boom"));
        assert_eq!(status, SegsynthStatus::Panic);
        let msg = unsafe { CStr::from_ptr(segsynth_last_error()) }.to_str().unwrap();
        assert_eq!(msg, "internal panic: boom");
        assert_eq!(guard(|| Ok(())), SegsynthStatus::Ok);
        assert!(segsynth_last_error().is_null());
    }

    #[test]
    fn interior_nul_in_message_is_replaced() {
        guard(|| Err(invalid("a\0b")));
        let msg = unsafe { CStr::from_ptr(segsynth_last_error()) }.to_str().unwrap();
        assert_eq!(msg, "a b");
    }

    #[test]
    fn pipeline_errors_map_to_statuses() {
        let f: Failure = PipelineError::NoClasses.into();
        assert_eq!(f.0, SegsynthStatus::Generation);
        let f: Failure = PipelineError::Io {
            path: "x".into(),
            message: "y".into(),
        }
        .into();
        assert_eq!(f.0, SegsynthStatus::Io);
    }
}
