//! C ABI over the simulator.
//!
//! Every fallible call returns an [`SsStatus`]; on failure the message is
//! kept per thread and read back with [`ss_last_error_message`]. Handles are
//! opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use sensorsim::formats::{self, EmbeddingSet};
use sensorsim::imaging::{self, Raster, SensorConfig, Unit};
use sensorsim::optics;
use sensorsim::pipeline::{self, PreprocessMode, SimulationOptions};
use sensorsim::recognition;
use sensorsim::utility::{self, Giqe5Coefficients, SsimParams};
use sensorsim::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidConfig = 3,
    Io = 4,
    Format = 5,
    DimensionMismatch = 6,
    Numeric = 7,
    Panic = 8,
}

/// Preprocessing applied before the sensor chain.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SsMode {
    Crop = 0,
    Resize = 1,
}

/// Sampling and cutoff frequencies of a configuration.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SsFrequencyBudget {
    pub f_number: f64,
    pub q: f64,
    pub gsd_m: f64,
    pub nu_optcut_gnd: f64,
    pub nu_nyquist_gnd: f64,
    pub nu_cutoff_gnd: f64,
    pub oversampled: bool,
}

/// Opaque sensor configuration.
pub struct SsConfig(SensorConfig);

/// Opaque embedding set.
pub struct SsEmbeddings(EmbeddingSet);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn status_of(err: &Error) -> SsStatus {
    match err {
        Error::InvalidArgument(_) => SsStatus::InvalidArgument,
        Error::InvalidConfig(_) => SsStatus::InvalidConfig,
        Error::Io(_) | Error::Load { .. } => SsStatus::Io,
        Error::Format(_) | Error::Json(_) => SsStatus::Format,
        Error::DimensionMismatch(_) | Error::BandCountMismatch { .. } => SsStatus::DimensionMismatch,
        Error::Stage { source, .. } => status_of(source),
        _ => SsStatus::Numeric,
    }
}

fn guard(f: impl FnOnce() -> Result<(), SsStatus>) -> SsStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SsStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic".into());
            SsStatus::Panic
        }
    }
}

fn fail(err: Error) -> SsStatus {
    let s = status_of(&err);
    set_error(err.to_string());
    s
}

fn null(what: &str) -> SsStatus {
    set_error(format!("{what} is null"));
    SsStatus::NullPointer
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, SsStatus> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        set_error(format!("{what} is not UTF-8"));
        SsStatus::InvalidArgument
    })
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, SsStatus> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ss_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Length in bytes of the last error message on this thread, excluding the
/// terminator; 0 when there is none.
#[no_mangle]
pub extern "C" fn ss_last_error_length() -> usize {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(0, |m| m.as_bytes().len()))
}

/// Copies the last error message into `buf` (NUL-terminated, truncated to
/// `len`). Returns the number of bytes written excluding the terminator.
///
/// # Safety
/// `buf` must point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn ss_last_error_message(buf: *mut c_char, len: usize) -> usize {
    if buf.is_null() || len == 0 {
        return 0;
    }
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let bytes = e.as_ref().map_or(&[][..], |m| m.as_bytes());
        let n = bytes.len().min(len - 1);
        std::ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, n);
        *buf.add(n) = 0;
        n
    })
}

/// Reference RGB configuration with the given focal length and aperture.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ss_config_reference(focal_length_m: f64, aperture_diameter_m: f64, out: *mut *mut SsConfig) -> SsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let cfg = SensorConfig::reference(focal_length_m, aperture_diameter_m);
        cfg.validate().map_err(fail)?;
        *out = Box::into_raw(Box::new(SsConfig(cfg)));
        Ok(())
    })
}

/// Parses a configuration from JSON text.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ss_config_from_json(json: *const c_char, out: *mut *mut SsConfig) -> SsStatus {
    guard(|| {
        let text = str_arg(json, "json")?;
        let out = out_arg(out, "out")?;
        let cfg: SensorConfig = serde_json::from_str(text).map_err(|e| fail(e.into()))?;
        cfg.validate().map_err(fail)?;
        *out = Box::into_raw(Box::new(SsConfig(cfg)));
        Ok(())
    })
}

/// Sets one scalar parameter by name (e.g. `focal_length_m`).
///
/// # Safety
/// `config` must be a live handle and `name` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ss_config_set(config: *mut SsConfig, name: *const c_char, value: f64) -> SsStatus {
    guard(|| {
        let cfg = out_arg(config, "config")?;
        let name = str_arg(name, "name")?;
        cfg.0 = cfg.0.with_param(name, value).map_err(fail)?;
        Ok(())
    })
}

/// # Safety
/// `config` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ss_config_free(config: *mut SsConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// # Safety
/// `config` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ss_frequency_budget(config: *const SsConfig, out: *mut SsFrequencyBudget) -> SsStatus {
    guard(|| {
        let cfg = config.as_ref().ok_or_else(|| null("config"))?;
        let out = out_arg(out, "out")?;
        let b = optics::frequency_budget(&cfg.0).map_err(fail)?;
        *out = SsFrequencyBudget {
            f_number: b.fn_,
            q: b.q,
            gsd_m: b.gsd_m,
            nu_optcut_gnd: b.nu_optcut_gnd,
            nu_nyquist_gnd: b.nu_nyquist_gnd,
            nu_cutoff_gnd: b.nu_cutoff_gnd,
            oversampled: b.oversampled,
        };
        Ok(())
    })
}

/// Predicted NIIRS with the bundled GIQE-5 coefficients.
///
/// # Safety
/// `config` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ss_predict_niirs(config: *const SsConfig, out: *mut f64) -> SsStatus {
    guard(|| {
        let cfg = config.as_ref().ok_or_else(|| null("config"))?;
        let out = out_arg(out, "out")?;
        *out = utility::predict_niirs(&cfg.0, &Giqe5Coefficients::bundled()).map_err(fail)?.niirs;
        Ok(())
    })
}

/// Simulates one image file and writes the output reflectance as BIMG.
///
/// # Safety
/// All string arguments must be NUL-terminated; `config` must be live.
#[no_mangle]
pub unsafe extern "C" fn ss_simulate_file(
    config: *const SsConfig,
    image_path: *const c_char,
    metadata_path: *const c_char,
    mode: SsMode,
    seed: u64,
    out_path: *const c_char,
) -> SsStatus {
    guard(|| {
        let cfg = config.as_ref().ok_or_else(|| null("config"))?;
        let image = PathBuf::from(str_arg(image_path, "image_path")?);
        let md = PathBuf::from(str_arg(metadata_path, "metadata_path")?);
        let out = PathBuf::from(str_arg(out_path, "out_path")?);
        let mode = match mode {
            SsMode::Crop => PreprocessMode::Crop,
            SsMode::Resize => PreprocessMode::Resize,
        };
        let (img, metadata) = imaging::load_image(&image, &md).map_err(fail)?;
        let options = SimulationOptions {
            seed,
            ..SimulationOptions::default()
        };
        let products = pipeline::simulate(&img, &metadata, &cfg.0, mode, &options).map_err(fail)?;
        formats::write_bimg(&out, products.output.bands(), Unit::ToaReflectance).map_err(fail)?;
        Ok(())
    })
}

unsafe fn planes(data: *const f64, bands: usize, height: usize, width: usize) -> Result<Vec<Raster>, SsStatus> {
    if data.is_null() {
        return Err(null("image data"));
    }
    let n = height * width;
    let all = std::slice::from_raw_parts(data, bands * n);
    all.chunks(n.max(1))
        .take(bands)
        .map(|c| Raster::new(height, width, c.to_vec()).map_err(fail))
        .collect()
}

/// Mean-over-bands PSNR of two band-sequential `bands`×`height`×`width`
/// arrays. Identical inputs give +inf.
///
/// # Safety
/// Both arrays must hold `bands*height*width` doubles.
#[no_mangle]
pub unsafe extern "C" fn ss_psnr(
    reference: *const f64,
    test: *const f64,
    bands: usize,
    height: usize,
    width: usize,
    data_range: f64,
    out: *mut f64,
) -> SsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let r = planes(reference, bands, height, width)?;
        let t = planes(test, bands, height, width)?;
        *out = utility::psnr(&r, &t, data_range).map_err(fail)?.value;
        Ok(())
    })
}

/// Mean-over-bands SSIM with the default Gaussian window.
///
/// # Safety
/// Both arrays must hold `bands*height*width` doubles.
#[no_mangle]
pub unsafe extern "C" fn ss_ssim(
    reference: *const f64,
    test: *const f64,
    bands: usize,
    height: usize,
    width: usize,
    data_range: f64,
    out: *mut f64,
) -> SsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let r = planes(reference, bands, height, width)?;
        let t = planes(test, bands, height, width)?;
        let params = SsimParams {
            data_range,
            ..SsimParams::default()
        };
        *out = utility::ssim(&r, &t, &params).map_err(fail)?.value;
        Ok(())
    })
}

/// Reads an EMB1 file.
///
/// # Safety
/// `path` must be NUL-terminated and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn ss_embeddings_read(path: *const c_char, out: *mut *mut SsEmbeddings) -> SsStatus {
    guard(|| {
        let path = PathBuf::from(str_arg(path, "path")?);
        let out = out_arg(out, "out")?;
        let set = EmbeddingSet::read(&path).map_err(fail)?;
        *out = Box::into_raw(Box::new(SsEmbeddings(set)));
        Ok(())
    })
}

/// Builds an embedding set from `count` row-major vectors of length `dim`
/// and one label string per row. Ids are the row indices.
///
/// # Safety
/// `vectors` must hold `count*dim` floats and `labels` `count` strings.
#[no_mangle]
pub unsafe extern "C" fn ss_embeddings_new(
    vectors: *const f32,
    count: usize,
    dim: usize,
    labels: *const *const c_char,
    out: *mut *mut SsEmbeddings,
) -> SsStatus {
    guard(|| {
        if vectors.is_null() {
            return Err(null("vectors"));
        }
        if labels.is_null() {
            return Err(null("labels"));
        }
        let out = out_arg(out, "out")?;
        let v = std::slice::from_raw_parts(vectors, count * dim).iter().map(|&x| x as f64).collect();
        let labels = std::slice::from_raw_parts(labels, count)
            .iter()
            .map(|&p| str_arg(p, "label").map(String::from))
            .collect::<Result<Vec<_>, _>>()?;
        let ids = (0..count).map(|i| i.to_string()).collect();
        let set = EmbeddingSet::new(dim, v, ids, labels).map_err(fail)?;
        *out = Box::into_raw(Box::new(SsEmbeddings(set)));
        Ok(())
    })
}

/// # Safety
/// `emb` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ss_embeddings_free(emb: *mut SsEmbeddings) {
    if !emb.is_null() {
        drop(Box::from_raw(emb));
    }
}

/// # Safety
/// `emb` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ss_embeddings_len(emb: *const SsEmbeddings) -> usize {
    emb.as_ref().map_or(0, |e| e.0.len())
}

/// Mean retrieval AP; probes without a same-class partner are excluded.
///
/// # Safety
/// `emb` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn ss_mean_rap(emb: *const SsEmbeddings, out: *mut f64) -> SsStatus {
    guard(|| {
        let emb = emb.as_ref().ok_or_else(|| null("embeddings"))?;
        let out = out_arg(out, "out")?;
        *out = recognition::mean_rap(&emb.0).map_err(fail)?.value;
        Ok(())
    })
}
