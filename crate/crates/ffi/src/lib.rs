//! C ABI for smoothfoley.
//!
//! Every fallible call returns an [`SfStatus`]; on failure the message is
//! available from [`sf_last_error`] on the same thread. Handles are opaque
//! and must be released with their `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use smoothfoley::diffusion::StageId;
use smoothfoley::harness::{ExperimentConfig, Pipeline};
use smoothfoley::metrics::{self, EmbeddingStats, MetricsReport};
use smoothfoley::Error;

/// Result codes. The numeric values match the CLI exit codes where they overlap.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SfStatus {
    Ok = 0,
    Io = 1,
    Config = 2,
    Contract = 3,
    MissingPrerequisite = 4,
    NullPointer = 5,
    InvalidUtf8 = 6,
    Panic = 7,
}

pub struct SfConfig(ExperimentConfig);
pub struct SfPipeline(Pipeline);
pub struct SfReport(MetricsReport);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).unwrap();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn status_of(e: &Error) -> SfStatus {
    match e.exit_code() {
        2 => SfStatus::Config,
        3 => SfStatus::Contract,
        4 => SfStatus::MissingPrerequisite,
        _ => SfStatus::Io,
    }
}

struct Fail(SfStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SfStatus::Ok,
        Ok(Err(Fail(code, msg))) => {
            set_error(msg);
            code
        }
        Err(_) => {
            set_error("internal panic");
            SfStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(SfStatus::NullPointer, format!("`{what}` is null"))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail(SfStatus::InvalidUtf8, format!("`{what}` is not UTF-8")))
}

unsafe fn slice<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

fn boxed<T>(v: T) -> *mut T {
    Box::into_raw(Box::new(v))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn sf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

#[no_mangle]
pub extern "C" fn sf_config_default() -> *mut SfConfig {
    boxed(SfConfig(ExperimentConfig::default()))
}

/// Parse TOML text (NULL means empty) and apply `n_overrides` `key=value` strings.
///
/// # Safety
/// `toml` must be NULL or a valid C string; `overrides` must point to
/// `n_overrides` valid C strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sf_config_from_toml(
    toml: *const c_char,
    overrides: *const *const c_char,
    n_overrides: usize,
    out_config: *mut *mut SfConfig,
) -> SfStatus {
    guard(|| {
        let src = if toml.is_null() { "" } else { text(toml, "toml")? };
        let ovs = slice(overrides, n_overrides, "overrides")?
            .iter()
            .map(|&p| text(p, "override").map(str::to_string))
            .collect::<Result<Vec<_>, _>>()?;
        let cfg = ExperimentConfig::from_toml_str(src, &ovs)?;
        *out(out_config, "out_config")? = boxed(SfConfig(cfg));
        Ok(())
    })
}

/// # Safety
/// `path` must be a valid C string and `out_config` writable.
#[no_mangle]
pub unsafe extern "C" fn sf_config_load(path: *const c_char, out_config: *mut *mut SfConfig) -> SfStatus {
    guard(|| {
        let cfg = ExperimentConfig::load(Some(Path::new(text(path, "path")?)), &[])?;
        *out(out_config, "out_config")? = boxed(SfConfig(cfg));
        Ok(())
    })
}

/// Apply one `section.key=value` override in place. On failure the config is unchanged.
///
/// # Safety
/// `config` must be a live handle and `assignment` a valid C string.
#[no_mangle]
pub unsafe extern "C" fn sf_config_set(config: *mut SfConfig, assignment: *const c_char) -> SfStatus {
    guard(|| {
        let cfg = out(config, "config")?;
        let next = ExperimentConfig::from_toml_str(&cfg.0.to_toml(), &[text(assignment, "assignment")?.to_string()])?;
        cfg.0 = next;
        Ok(())
    })
}

/// Write the 16-hex-digit config hash plus NUL into `buf` (needs 17 bytes).
///
/// # Safety
/// `config` must be a live handle and `buf` writable for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn sf_config_hash(config: *const SfConfig, buf: *mut c_char, len: usize) -> SfStatus {
    guard(|| {
        let hash = handle(config, "config")?.0.hash();
        if buf.is_null() {
            return Err(null("buf"));
        }
        if len <= hash.len() {
            return Err(Fail(SfStatus::Contract, format!("buffer of {len} bytes cannot hold the hash")));
        }
        ptr::copy_nonoverlapping(hash.as_ptr().cast(), buf, hash.len());
        *buf.add(hash.len()) = 0;
        Ok(())
    })
}

/// # Safety
/// `config` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sf_config_free(config: *mut SfConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// New pipeline over a copy of `config`; NULL if `config` is NULL.
///
/// # Safety
/// `config` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sf_pipeline_new(config: *const SfConfig) -> *mut SfPipeline {
    match config.as_ref() {
        Some(c) => boxed(SfPipeline(Pipeline::new(c.0.clone()))),
        None => {
            set_error("`config` is null");
            ptr::null_mut()
        }
    }
}

/// Run one stage by its CLI name, e.g. `"gen-corpus"` or `"train-backbone"`.
///
/// # Safety
/// `pipeline` must be a live handle and `stage` a valid C string.
#[no_mangle]
pub unsafe extern "C" fn sf_pipeline_run(pipeline: *const SfPipeline, stage: *const c_char) -> SfStatus {
    guard(|| {
        let p = &handle(pipeline, "pipeline")?.0;
        match text(stage, "stage")? {
            "gen-corpus" => p.gen_corpus(None).map(drop)?,
            "filter-continuous" => p.filter_continuous().map(drop)?,
            "train-embedder" => p.train_embedder().map(drop)?,
            "infer" => p.infer().map(drop)?,
            "evaluate" => p.evaluate().map(drop)?,
            "diagnose-detector" => p.diagnose_detector(true).map(drop)?,
            "all-stages" => p.all_stages().map(drop)?,
            other => p.train_stage(StageId::ALL.into_iter().find(|s| s.command() == other).ok_or_else(|| {
                Fail(SfStatus::Config, format!("unknown stage `{other}`"))
            })?).map(drop)?,
        }
        Ok(())
    })
}

/// Run `evaluate` and hand back the report.
///
/// # Safety
/// `pipeline` must be a live handle and `out_report` writable.
#[no_mangle]
pub unsafe extern "C" fn sf_pipeline_evaluate(pipeline: *const SfPipeline, out_report: *mut *mut SfReport) -> SfStatus {
    guard(|| {
        let report = handle(pipeline, "pipeline")?.0.evaluate()?;
        *out(out_report, "out_report")? = boxed(SfReport(report));
        Ok(())
    })
}

/// # Safety
/// `pipeline` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sf_pipeline_free(pipeline: *mut SfPipeline) {
    if !pipeline.is_null() {
        drop(Box::from_raw(pipeline));
    }
}

/// Load a `report.json` written by `evaluate`.
///
/// # Safety
/// `path` must be a valid C string and `out_report` writable.
#[no_mangle]
pub unsafe extern "C" fn sf_report_load(path: *const c_char, out_report: *mut *mut SfReport) -> SfStatus {
    guard(|| {
        let r = MetricsReport::load(Path::new(text(path, "path")?))?;
        *out(out_report, "out_report")? = boxed(SfReport(r));
        Ok(())
    })
}

/// Number of rows; 0 for NULL.
///
/// # Safety
/// `report` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sf_report_len(report: *const SfReport) -> usize {
    report.as_ref().map_or(0, |r| r.0.rows.len())
}

/// Value of `metric`; `SF_STATUS_CONTRACT` if absent.
///
/// # Safety
/// `report` must be a live handle, `metric` a valid C string, `out_value` writable.
#[no_mangle]
pub unsafe extern "C" fn sf_report_value(report: *const SfReport, metric: *const c_char, out_value: *mut f64) -> SfStatus {
    guard(|| {
        let name = text(metric, "metric")?;
        let v = handle(report, "report")?
            .0
            .value(name)
            .ok_or_else(|| Fail(SfStatus::Contract, format!("report has no metric `{name}`")))?;
        *out(out_value, "out_value")? = v;
        Ok(())
    })
}

/// # Safety
/// `report` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sf_report_free(report: *mut SfReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// Fréchet distance between two Gaussians with row-major `dim x dim` covariances.
///
/// # Safety
/// Means must hold `dim` values and covariances `dim * dim`; `out_value` writable.
#[no_mangle]
pub unsafe extern "C" fn sf_frechet_distance(
    dim: usize,
    mean_a: *const f64,
    cov_a: *const f64,
    mean_b: *const f64,
    cov_b: *const f64,
    out_value: *mut f64,
) -> SfStatus {
    guard(|| {
        if dim == 0 {
            return Err(Fail(SfStatus::Contract, "dimension must be positive".into()));
        }
        let stats = |m, c, w| -> Result<EmbeddingStats, Fail> {
            Ok(EmbeddingStats {
                mean: slice(m, dim, w)?.to_vec(),
                covariance: slice(c, dim * dim, w)?.to_vec(),
                count: 0,
            })
        };
        let d = metrics::frechet_distance(&stats(mean_a, cov_a, "a")?, &stats(mean_b, cov_b, "b")?)?;
        *out(out_value, "out_value")? = d;
        Ok(())
    })
}

/// `KL(p || q)` over `n` classes, with the library's probability floor.
///
/// # Safety
/// `p` and `q` must hold `n` values; `out_value` writable.
#[no_mangle]
pub unsafe extern "C" fn sf_kl_divergence(p: *const f64, q: *const f64, n: usize, out_value: *mut f64) -> SfStatus {
    guard(|| {
        if n == 0 {
            return Err(Fail(SfStatus::Contract, "empty distribution".into()));
        }
        *out(out_value, "out_value")? = metrics::kl_divergence(slice(p, n, "p")?, slice(q, n, "q")?);
        Ok(())
    })
}

/// CLIP-score analog in [0, 100] over `n_pairs` row-major `[n_pairs, dim]` embeddings.
///
/// # Safety
/// `video` and `audio` must each hold `n_pairs * dim` values; `out_value` writable.
#[no_mangle]
pub unsafe extern "C" fn sf_clip_score(
    video: *const f64,
    audio: *const f64,
    n_pairs: usize,
    dim: usize,
    out_value: *mut f64,
) -> SfStatus {
    guard(|| {
        let (v, a) = (slice(video, n_pairs * dim, "video")?, slice(audio, n_pairs * dim, "audio")?);
        let pairs: Vec<(Vec<f64>, Vec<f64>)> =
            (0..n_pairs).map(|i| (v[i * dim..(i + 1) * dim].to_vec(), a[i * dim..(i + 1) * dim].to_vec())).collect();
        *out(out_value, "out_value")? = metrics::clip_score(&pairs)?;
        Ok(())
    })
}

/// Onset F1 between two 0/1 masks of `len` frames.
///
/// # Safety
/// `gt` and `pred` must hold `len` bytes; `out_value` writable.
#[no_mangle]
pub unsafe extern "C" fn sf_onset_f1(
    gt: *const u8,
    pred: *const u8,
    len: usize,
    tolerance: usize,
    out_value: *mut f64,
) -> SfStatus {
    guard(|| {
        let (g, p) = (slice(gt, len, "gt")?, slice(pred, len, "pred")?);
        if g.iter().chain(p).any(|&b| b > 1) {
            return Err(Fail(SfStatus::Contract, "masks must be 0/1".into()));
        }
        *out(out_value, "out_value")? = metrics::onset_f1(g, p, tolerance);
        Ok(())
    })
}
