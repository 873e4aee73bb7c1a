//! C ABI over fwilab.
//!
//! Every function returns an [`FwiStatus`]; on failure the message is kept
//! per thread and can be read with [`fwi_last_error`]. Handles are opaque,
//! created by `*_new`/`*_load`/`*_generate` style calls and released with the
//! matching `*_free`. Passing a freed or foreign pointer is undefined.
//! Buffers must be valid for the stated length; null pointers are reported
//! as `FWI_STATUS_NULL_POINTER` rather than dereferenced.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use fwilab::crf::InferOptions;
use fwilab::geomodel::{generate_model, Family, ModelGenSpec, VelocityModel};
use fwilab::metrics::evaluate;
use fwilab::nn::Checkpoint;
use fwilab::pipeline::invert_gather;
use fwilab::wavesim::{forward_model, AcquisitionGeometry, ShotGather, SimConfig};
use fwilab::{Error, Tensor};

/// Status codes. Values 1 to 19 mirror the library's error codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FwiStatus {
    Ok = 0,
    ShapeMismatch = 1,
    SingularMatrix = 2,
    InvalidStd = 3,
    SpecOutOfRange = 4,
    ZeroStd = 5,
    EmptyCorpus = 6,
    CflViolation = 7,
    GeometryOutOfBounds = 8,
    ZeroSignal = 9,
    IncompatibleDims = 10,
    StaleCache = 11,
    NonConvergence = 12,
    NonPositiveTruth = 13,
    NonPositivePred = 14,
    DatasetTooSmall = 15,
    InvalidArgument = 16,
    Format = 17,
    Io = 18,
    Serialization = 19,
    NullPointer = 100,
    InvalidUtf8 = 101,
    Panic = 102,
}

impl FwiStatus {
    fn from_code(code: i32) -> Self {
        use FwiStatus::*;
        const TABLE: [FwiStatus; 19] = [
            ShapeMismatch,
            SingularMatrix,
            InvalidStd,
            SpecOutOfRange,
            ZeroStd,
            EmptyCorpus,
            CflViolation,
            GeometryOutOfBounds,
            ZeroSignal,
            IncompatibleDims,
            StaleCache,
            NonConvergence,
            NonPositiveTruth,
            NonPositivePred,
            DatasetTooSmall,
            InvalidArgument,
            Format,
            Io,
            Serialization,
        ];
        usize::try_from(code - 1).ok().and_then(|i| TABLE.get(i).copied()).unwrap_or(Panic)
    }
}

/// Velocity model, `nz x nx` cells in m/s.
pub struct FwiModel(VelocityModel);

/// Shot gather, `sources x receivers x samples`.
pub struct FwiGather(ShotGather);

/// Trained network with its standardizer and optional CRF settings.
pub struct FwiCheckpoint(Checkpoint);

/// Scalar metrics of a prediction against ground truth.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FwiMetrics {
    pub mae: f64,
    pub rel: f64,
    pub log10: f64,
    /// Percentage of cells within the ratio thresholds 1.01, 1.02, 1.05, 1.10.
    pub acc_101: f64,
    pub acc_102: f64,
    pub acc_105: f64,
    pub acc_110: f64,
}

pub const FWI_FAMILY_FLAT: u32 = 0;
pub const FWI_FAMILY_CURVED: u32 = 1;

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

enum Failure {
    Lib(Error),
    Null(&'static str),
    Utf8,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> FwiStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FwiStatus::Ok,
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            FwiStatus::from_code(e.code())
        }
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            FwiStatus::NullPointer
        }
        Ok(Err(Failure::Utf8)) => {
            set_error("path is not valid UTF-8".into());
            FwiStatus::InvalidUtf8
        }
        Err(_) => {
            set_error("internal panic".into());
            FwiStatus::Panic
        }
    }
}

unsafe fn as_ref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn as_mut<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or(Failure::Null(what))
}

unsafe fn write_out<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::Null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn copy_into(src: &[f64], dst: *mut f64, len: usize) -> Result<(), Failure> {
    if dst.is_null() {
        return Err(Failure::Null("buffer"));
    }
    if len != src.len() {
        return Err(Error::ShapeMismatch(format!("buffer of {len} values for {}", src.len())).into());
    }
    ptr::copy_nonoverlapping(src.as_ptr(), dst, len);
    Ok(())
}

unsafe fn read_slice<'a>(src: *const f64, len: usize) -> Result<&'a [f64], Failure> {
    if src.is_null() {
        return Err(Failure::Null("values"));
    }
    Ok(std::slice::from_raw_parts(src, len))
}

/// Copies the calling thread's last error message into `buf` (NUL
/// terminated, truncated to `len`). Returns the full message length
/// including the terminator, or 0 when no error has been recorded.
#[no_mangle]
pub unsafe extern "C" fn fwi_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| match &*e.borrow() {
        None => 0,
        Some(msg) => {
            let bytes = msg.as_bytes_with_nul();
            if !buf.is_null() && len > 0 {
                let n = bytes.len().min(len);
                ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
                *buf.add(n - 1) = 0;
            }
            bytes.len()
        }
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fwi_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Draws a random model of `family` (`FWI_FAMILY_*`) on an `nz x nx` grid
/// with spacing `dx`.
#[no_mangle]
pub unsafe extern "C" fn fwi_model_generate(family: u32, nz: usize, nx: usize, dx: f64, fault_count: usize, seed: u64, out: *mut *mut FwiModel) -> FwiStatus {
    guard(|| {
        let family = match family {
            FWI_FAMILY_FLAT => Family::Flat,
            FWI_FAMILY_CURVED => Family::Curved,
            other => return Err(Error::InvalidArgument(format!("unknown family {other}")).into()),
        };
        let mut spec = ModelGenSpec::sample(family, (nz, nx), fault_count, seed)?;
        spec.dx = dx;
        write_out(out, FwiModel(generate_model(&spec)?))
    })
}

/// Wraps `nz * nx` row-major velocities (depth-major).
#[no_mangle]
pub unsafe extern "C" fn fwi_model_from_values(values: *const f64, nz: usize, nx: usize, dx: f64, out: *mut *mut FwiModel) -> FwiStatus {
    guard(|| {
        let v = read_slice(values, nz * nx)?;
        let model = VelocityModel::new(Tensor::new(vec![nz, nx], v.to_vec())?, dx)?;
        write_out(out, FwiModel(model))
    })
}

#[no_mangle]
pub unsafe extern "C" fn fwi_model_dims(model: *const FwiModel, nz: *mut usize, nx: *mut usize) -> FwiStatus {
    guard(|| {
        let m = &as_ref(model, "model")?.0;
        *as_mut(nz, "nz")? = m.nz();
        *as_mut(nx, "nx")? = m.nx();
        Ok(())
    })
}

/// Copies the velocities into `buf`, which must hold exactly `nz * nx` values.
#[no_mangle]
pub unsafe extern "C" fn fwi_model_values(model: *const FwiModel, buf: *mut f64, len: usize) -> FwiStatus {
    guard(|| copy_into(as_ref(model, "model")?.0.grid().data(), buf, len))
}

#[no_mangle]
pub unsafe extern "C" fn fwi_model_free(model: *mut FwiModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Simulates a surface acquisition with evenly spaced sources and receivers.
/// The time step follows the stability limit of the model's fastest velocity.
#[no_mangle]
pub unsafe extern "C" fn fwi_simulate(model: *const FwiModel, sources: usize, receivers: usize, nt: usize, out: *mut *mut FwiGather) -> FwiStatus {
    guard(|| {
        let m = &as_ref(model, "model")?.0;
        let sim = SimConfig::for_velocity(m.dx(), m.max_velocity());
        let geom = AcquisitionGeometry::evenly_spaced(m.nx(), sources, receivers, nt, sim.dt);
        write_out(out, FwiGather(forward_model(m, &geom, &sim)?))
    })
}

/// Wraps `sources * receivers * nt` samples, source-major then receiver.
#[no_mangle]
pub unsafe extern "C" fn fwi_gather_from_values(values: *const f64, sources: usize, receivers: usize, nt: usize, dt: f64, out: *mut *mut FwiGather) -> FwiStatus {
    guard(|| {
        let v = read_slice(values, sources * receivers * nt)?;
        let g = ShotGather::new(Tensor::new(vec![sources, receivers, nt], v.to_vec())?, dt)?;
        write_out(out, FwiGather(g))
    })
}

#[no_mangle]
pub unsafe extern "C" fn fwi_gather_dims(gather: *const FwiGather, sources: *mut usize, receivers: *mut usize, nt: *mut usize) -> FwiStatus {
    guard(|| {
        let (s, r, t) = as_ref(gather, "gather")?.0.dims();
        *as_mut(sources, "sources")? = s;
        *as_mut(receivers, "receivers")? = r;
        *as_mut(nt, "nt")? = t;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn fwi_gather_values(gather: *const FwiGather, buf: *mut f64, len: usize) -> FwiStatus {
    guard(|| copy_into(as_ref(gather, "gather")?.0.data().data(), buf, len))
}

#[no_mangle]
pub unsafe extern "C" fn fwi_gather_free(gather: *mut FwiGather) {
    if !gather.is_null() {
        drop(Box::from_raw(gather));
    }
}

/// Loads a checkpoint written by `fwilab train` or `fwilab fit-crf`.
#[no_mangle]
pub unsafe extern "C" fn fwi_checkpoint_load(path: *const c_char, out: *mut *mut FwiCheckpoint) -> FwiStatus {
    guard(|| {
        if path.is_null() {
            return Err(Failure::Null("path"));
        }
        let path = CStr::from_ptr(path).to_str().map_err(|_| Failure::Utf8)?;
        write_out(out, FwiCheckpoint(Checkpoint::load(Path::new(path))?))
    })
}

#[no_mangle]
pub unsafe extern "C" fn fwi_checkpoint_has_crf(ckpt: *const FwiCheckpoint, has_crf: *mut bool) -> FwiStatus {
    guard(|| {
        *as_mut(has_crf, "has_crf")? = as_ref(ckpt, "checkpoint")?.0.crf.is_some();
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn fwi_checkpoint_free(ckpt: *mut FwiCheckpoint) {
    if !ckpt.is_null() {
        drop(Box::from_raw(ckpt));
    }
}

/// Predicts a velocity model with cell size `dx` from `gather`. With
/// `use_crf` the checkpoint's CRF refinement is applied; it is an error if
/// the checkpoint has none.
#[no_mangle]
pub unsafe extern "C" fn fwi_invert(ckpt: *mut FwiCheckpoint, gather: *const FwiGather, dx: f64, use_crf: bool, out: *mut *mut FwiModel) -> FwiStatus {
    guard(|| {
        let c = &mut as_mut(ckpt, "checkpoint")?.0;
        let g = &as_ref(gather, "gather")?.0;
        let infer = InferOptions::default();
        let model = invert_gather(c, g, dx, use_crf.then_some(&infer))?;
        write_out(out, FwiModel(model))
    })
}

#[no_mangle]
pub unsafe extern "C" fn fwi_evaluate(pred: *const FwiModel, truth: *const FwiModel, out: *mut FwiMetrics) -> FwiStatus {
    guard(|| {
        let r = evaluate(&as_ref(pred, "pred")?.0, &as_ref(truth, "truth")?.0)?;
        let acc = |t| r.acc_at(t).unwrap_or(f64::NAN);
        *as_mut(out, "out")? = FwiMetrics {
            mae: r.mae,
            rel: r.rel,
            log10: r.log10,
            acc_101: acc(1.01),
            acc_102: acc(1.02),
            acc_105: acc(1.05),
            acc_110: acc(1.10),
        };
        Ok(())
    })
}
