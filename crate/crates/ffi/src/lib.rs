//! C ABI over the sphereloc library.
//!
//! Objects are opaque handles created by `sl_*_new` / `sl_*_load` and
//! released with the matching `sl_*_free`. Every fallible call returns an
//! [`SlStatus`]; the message of the most recent failure on the calling
//! thread is available from [`sl_last_error`].
//!
//! Spectra cross the boundary as two `f64` arrays (real, imaginary) of
//! `B(B+1)/2` coefficients, ordered by degree then order `m = 0..=l`.
//! Grid samples are ring-major `2B × 2B` arrays. A feature sphere is three
//! such arrays back to back: photometry, range, intensity.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use num_complex::Complex64;
use sphereloc::config::PipelineConfig;
use sphereloc::map_store::PlaceMap;
use sphereloc::pipeline::Pipeline;
use sphereloc::voting::vote;
use sphereloc::{Channel, Error, FeatureSphere, ShtPlan, Spectrum, SphericalGrid};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    Format = 4,
    UnsupportedVersion = 5,
    Config = 6,
    Io = 7,
    Panic = 8,
}

/// Sampling grid with its transform plan.
pub struct SlGrid {
    grid: SphericalGrid,
    plan: ShtPlan,
}

pub struct SlMap {
    map: PlaceMap,
}

/// Configured pipeline (taper bank, voting rules).
pub struct SlPipeline {
    pipeline: Pipeline,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> SlStatus {
    match e {
        Error::InvalidParameter(_) => SlStatus::InvalidArgument,
        Error::Shape(_) => SlStatus::ShapeMismatch,
        Error::Format { .. } => SlStatus::Format,
        Error::UnsupportedVersion { .. } => SlStatus::UnsupportedVersion,
        Error::Config(_) => SlStatus::Config,
        Error::Io(_) => SlStatus::Io,
    }
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), (SlStatus, String)>) -> SlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SlStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside sphereloc".into());
            SlStatus::Panic
        }
    }
}

fn lib(e: Error) -> (SlStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(name: &str) -> (SlStatus, String) {
    (SlStatus::NullPointer, format!("`{name}` is null"))
}

fn bad(msg: String) -> (SlStatus, String) {
    (SlStatus::InvalidArgument, msg)
}

unsafe fn path_arg<'a>(p: *const c_char, name: &str) -> Result<&'a Path, (SlStatus, String)> {
    if p.is_null() {
        return Err(null(name));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| bad(format!("`{name}` is not UTF-8")))?;
    Ok(Path::new(s))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], (SlStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(name));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut_arg<'a, T>(p: *mut T, len: usize, name: &str) -> Result<&'a mut [T], (SlStatus, String)> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(name));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

/// Static description of a status code.
#[no_mangle]
pub extern "C" fn sl_status_string(status: SlStatus) -> *const c_char {
    let s: &'static CStr = match status {
        SlStatus::Ok => c"ok",
        SlStatus::NullPointer => c"null pointer",
        SlStatus::InvalidArgument => c"invalid argument",
        SlStatus::ShapeMismatch => c"shape mismatch",
        SlStatus::Format => c"format error",
        SlStatus::UnsupportedVersion => c"unsupported version",
        SlStatus::Config => c"config error",
        SlStatus::Io => c"i/o error",
        SlStatus::Panic => c"internal panic",
    };
    s.as_ptr()
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length, 0 if none.
///
/// # Safety
/// `buf` must be writable for `len` bytes or null with `len == 0`.
#[no_mangle]
pub unsafe extern "C" fn sl_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else { return 0 };
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Number of packed coefficients for bandwidth `bandwidth`.
#[no_mangle]
pub extern "C" fn sl_coefficient_count(bandwidth: usize) -> usize {
    bandwidth * (bandwidth + 1) / 2
}

/// # Safety
/// `out` must be a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn sl_grid_new(bandwidth: usize, out: *mut *mut SlGrid) -> SlStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let grid = SphericalGrid::new(bandwidth).map_err(lib)?;
        let plan = ShtPlan::new(&grid);
        *out = Box::into_raw(Box::new(SlGrid { grid, plan }));
        Ok(())
    })
}

/// # Safety
/// `grid` must come from [`sl_grid_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sl_grid_free(grid: *mut SlGrid) {
    if !grid.is_null() {
        drop(Box::from_raw(grid));
    }
}

/// Samples per channel (`4B²`); 0 for a null handle.
///
/// # Safety
/// `grid` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sl_grid_len(grid: *const SlGrid) -> usize {
    grid.as_ref().map_or(0, |g| g.grid.len())
}

/// Forward transform of `4B²` samples into `B(B+1)/2` coefficients.
///
/// # Safety
/// Array arguments must hold the stated number of elements.
#[no_mangle]
pub unsafe extern "C" fn sl_sht_forward(
    grid: *const SlGrid,
    samples: *const f64,
    n_samples: usize,
    out_re: *mut f64,
    out_im: *mut f64,
    n_coeffs: usize,
) -> SlStatus {
    guard(|| {
        let g = grid.as_ref().ok_or_else(|| null("grid"))?;
        let b = g.grid.bandwidth();
        if n_samples != g.grid.len() || n_coeffs != sl_coefficient_count(b) {
            return Err((
                SlStatus::ShapeMismatch,
                format!("expected {} samples and {} coefficients", g.grid.len(), sl_coefficient_count(b)),
            ));
        }
        let samples = slice_arg(samples, n_samples, "samples")?;
        let re = slice_mut_arg(out_re, n_coeffs, "out_re")?;
        let im = slice_mut_arg(out_im, n_coeffs, "out_im")?;
        let channel = Channel::from_vec(b, samples.to_vec()).map_err(lib)?;
        let spec = g.plan.forward(&channel, b).map_err(lib)?;
        for (i, c) in spec.coeffs().iter().enumerate() {
            re[i] = c.re;
            im[i] = c.im;
        }
        Ok(())
    })
}

/// Inverse transform of `B(B+1)/2` coefficients into `4B²` real samples.
///
/// # Safety
/// Array arguments must hold the stated number of elements.
#[no_mangle]
pub unsafe extern "C" fn sl_sht_inverse(
    grid: *const SlGrid,
    re: *const f64,
    im: *const f64,
    n_coeffs: usize,
    out_samples: *mut f64,
    n_samples: usize,
) -> SlStatus {
    guard(|| {
        let g = grid.as_ref().ok_or_else(|| null("grid"))?;
        let b = g.grid.bandwidth();
        if n_samples != g.grid.len() || n_coeffs != sl_coefficient_count(b) {
            return Err((
                SlStatus::ShapeMismatch,
                format!("expected {} coefficients and {} samples", sl_coefficient_count(b), g.grid.len()),
            ));
        }
        let re = slice_arg(re, n_coeffs, "re")?;
        let im = slice_arg(im, n_coeffs, "im")?;
        let out = slice_mut_arg(out_samples, n_samples, "out_samples")?;
        let coeffs = re.iter().zip(im).map(|(r, i)| Complex64::new(*r, *i)).collect();
        let spec = Spectrum::from_coeffs(b, coeffs).map_err(lib)?;
        let channel = g.plan.inverse(&spec).map_err(lib)?;
        out.copy_from_slice(channel.as_slice());
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn sl_map_load(path: *const c_char, out: *mut *mut SlMap) -> SlStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let map = PlaceMap::load(path_arg(path, "path")?).map_err(lib)?;
        *out = Box::into_raw(Box::new(SlMap { map }));
        Ok(())
    })
}

/// # Safety
/// `map` must come from [`sl_map_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sl_map_free(map: *mut SlMap) {
    if !map.is_null() {
        drop(Box::from_raw(map));
    }
}

/// Entry count; 0 for a null handle.
///
/// # Safety
/// `map` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sl_map_len(map: *const SlMap) -> usize {
    map.as_ref().map_or(0, |m| m.map.len())
}

/// Exact k nearest entries to `descriptor`, nearest first. Writes entry ids
/// and Euclidean distances; `*out_count` receives min(k, map size).
///
/// # Safety
/// `descriptor` holds `dim` values; `out_ids` and `out_dist` hold `k`.
#[no_mangle]
pub unsafe extern "C" fn sl_map_query(
    map: *const SlMap,
    descriptor: *const f64,
    dim: usize,
    k: usize,
    out_ids: *mut u32,
    out_dist: *mut f64,
    out_count: *mut usize,
) -> SlStatus {
    guard(|| {
        let m = map.as_ref().ok_or_else(|| null("map"))?;
        if out_count.is_null() {
            return Err(null("out_count"));
        }
        let q = slice_arg(descriptor, dim, "descriptor")?;
        let ids = slice_mut_arg(out_ids, k, "out_ids")?;
        let dist = slice_mut_arg(out_dist, k, "out_dist")?;
        let found = m.map.knn_query(q, k).map_err(lib)?;
        for (i, n) in found.iter().enumerate() {
            ids[i] = m.map.entry(n.index).id;
            dist[i] = n.sq_dist.sqrt();
        }
        *out_count = found.len();
        Ok(())
    })
}

/// Builds a pipeline from TOML text; null selects the defaults.
///
/// # Safety
/// `config_toml` must be null or NUL-terminated; `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn sl_pipeline_new(config_toml: *const c_char, out: *mut *mut SlPipeline) -> SlStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let config = if config_toml.is_null() {
            PipelineConfig::default()
        } else {
            let text = CStr::from_ptr(config_toml).to_str().map_err(|_| bad("config is not UTF-8".into()))?;
            PipelineConfig::from_toml(text).map_err(lib)?
        };
        let pipeline = Pipeline::new(config).map_err(lib)?;
        *out = Box::into_raw(Box::new(SlPipeline { pipeline }));
        Ok(())
    })
}

/// # Safety
/// `pipeline` must come from [`sl_pipeline_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sl_pipeline_free(pipeline: *mut SlPipeline) {
    if !pipeline.is_null() {
        drop(Box::from_raw(pipeline));
    }
}

/// Grid bandwidth of the pipeline; 0 for a null handle.
///
/// # Safety
/// `pipeline` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sl_pipeline_bandwidth(pipeline: *const SlPipeline) -> usize {
    pipeline.as_ref().map_or(0, |p| p.pipeline.grid().bandwidth())
}

fn sphere_from(values: &[f64], bandwidth: usize) -> Result<FeatureSphere, (SlStatus, String)> {
    let n = 4 * bandwidth * bandwidth;
    let mut s = FeatureSphere::zeros(bandwidth);
    for (c, chunk) in s.channels_mut().iter_mut().zip(values.chunks_exact(n)) {
        *c = Channel::from_vec(bandwidth, chunk.to_vec()).map_err(lib)?;
    }
    Ok(s)
}

/// Votes among `n_candidates` feature spheres for the one matching `query`.
/// Each sphere is `3 × 4B²` values. Writes the winning index and, if
/// `out_scores` is non-null, one score per candidate.
///
/// # Safety
/// `query` holds one sphere, `candidates` holds `n_candidates` spheres and
/// `out_scores` is null or holds `n_candidates` values.
#[no_mangle]
pub unsafe extern "C" fn sl_vote(
    pipeline: *const SlPipeline,
    query: *const f64,
    candidates: *const f64,
    n_candidates: usize,
    out_selected: *mut usize,
    out_scores: *mut f64,
) -> SlStatus {
    guard(|| {
        let p = &pipeline.as_ref().ok_or_else(|| null("pipeline"))?.pipeline;
        if out_selected.is_null() {
            return Err(null("out_selected"));
        }
        let b = p.grid().bandwidth();
        let per = 3 * p.grid().len();
        let q = sphere_from(slice_arg(query, per, "query")?, b)?;
        let all = slice_arg(candidates, per * n_candidates, "candidates")?;
        let cands = all.chunks_exact(per).map(|c| sphere_from(c, b)).collect::<Result<Vec<_>, _>>()?;
        let result = vote(&q, &cands, p.analyzer(), p.config().voting.vote_config()).map_err(lib)?;
        *out_selected = result.selected;
        if !out_scores.is_null() {
            std::slice::from_raw_parts_mut(out_scores, n_candidates).copy_from_slice(&result.scores);
        }
        Ok(())
    })
}
