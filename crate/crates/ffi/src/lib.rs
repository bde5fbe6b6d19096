//! C ABI over the proposal engine.
//!
//! Objects cross the boundary as opaque handles that the caller releases with
//! the matching `*_free` function. Every fallible call returns a
//! [`FarpnStatus`]; on failure `farpn_last_error_message` describes the most
//! recent error on the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use farpn::anchors::{place, AnchorConfig, AnchorSet};
use farpn::geometry::{iou, BBox};
use farpn::nms::{soft_nms, NmsConfig};
use farpn::psroi::{psroi_pool, Branch, PoolConfig};
use farpn::refine::{propose_from_anchors, ImageSize, Proposal, RefineConfig};
use farpn::tensor::{read_tensor, write_tensor, FeatureMap};
use farpn::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FarpnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    OutOfRange = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FarpnBranch {
    Score = 0,
    Regress = 1,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FarpnBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FarpnProposal {
    pub bbox: FarpnBox,
    pub score: f64,
    pub iteration: u32,
}

/// Opaque feature map.
pub struct FarpnFeatureMap(FeatureMap);

/// Opaque anchor set.
pub struct FarpnAnchorSet(AnchorSet);

/// Opaque ranked proposal list.
pub struct FarpnProposals(Vec<Proposal>);

impl From<FarpnBox> for BBox {
    fn from(b: FarpnBox) -> Self {
        BBox::new(b.x1, b.y1, b.x2, b.y2)
    }
}

impl From<BBox> for FarpnBox {
    fn from(b: BBox) -> Self {
        FarpnBox { x1: b.x1, y1: b.y1, x2: b.x2, y2: b.y2 }
    }
}

impl From<Proposal> for FarpnProposal {
    fn from(p: Proposal) -> Self {
        FarpnProposal { bbox: p.bbox.into(), score: p.score, iteration: p.iteration }
    }
}

impl From<FarpnProposal> for Proposal {
    fn from(p: FarpnProposal) -> Self {
        Proposal { bbox: p.bbox.into(), score: p.score, iteration: p.iteration }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

struct Failure(FarpnStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Io(_) => FarpnStatus::Io,
            Error::BadMagic(_)
            | Error::UnsupportedVersion(_)
            | Error::Truncated { .. }
            | Error::DimensionOverflow { .. }
            | Error::Parse { .. } => FarpnStatus::Format,
            Error::InvalidChannel { .. } => FarpnStatus::OutOfRange,
            _ => FarpnStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn fail(status: FarpnStatus, msg: impl Into<String>) -> Failure {
    Failure(status, msg.into())
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> FarpnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FarpnStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            FarpnStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    // SAFETY: caller guarantees `p` is null or valid for reads.
    unsafe { p.as_ref() }.ok_or_else(|| fail(FarpnStatus::NullPointer, format!("{what} is null")))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(FarpnStatus::NullPointer, format!("{what} is null")));
    }
    // SAFETY: caller guarantees `p` points to `len` initialized values.
    Ok(unsafe { std::slice::from_raw_parts(p, len) })
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    // SAFETY: caller guarantees `p` is null or valid for writes.
    unsafe { p.as_mut() }.ok_or_else(|| fail(FarpnStatus::NullPointer, format!("{what} is null")))
}

unsafe fn path<'a>(p: *const c_char) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(fail(FarpnStatus::NullPointer, "path is null"));
    }
    // SAFETY: caller guarantees a NUL-terminated string.
    unsafe { CStr::from_ptr(p) }.to_str().map_err(|_| fail(FarpnStatus::InvalidArgument, "path is not valid UTF-8"))
}

/// Message for the last failed call on this thread, or NULL. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn farpn_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

#[no_mangle]
pub extern "C" fn farpn_iou(a: FarpnBox, b: FarpnBox) -> f64 {
    iou(&a.into(), &b.into())
}

/// Anchor lattice pitch for scale `s`: `max(c, s / d)`.
#[no_mangle]
pub extern "C" fn farpn_scale_stride(s: f64, c: f64, d: f64) -> f64 {
    farpn::anchors::scale_stride(s, c, d)
}

/// Places anchors for every (scale, ratio) pair on an image.
///
/// # Safety
/// `scales` and `ratios` must point to `n_scales` and `n_ratios` doubles;
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn farpn_anchors_place(
    scales: *const f64,
    n_scales: usize,
    ratios: *const f64,
    n_ratios: usize,
    min_stride: f64,
    stride_divisor: f64,
    image_width: f64,
    image_height: f64,
    out: *mut *mut FarpnAnchorSet,
) -> FarpnStatus {
    guard(|| {
        let out = unsafe { out_ptr(out, "out") }?;
        let cfg = AnchorConfig {
            scales: unsafe { slice(scales, n_scales, "scales") }?.to_vec(),
            ratios: unsafe { slice(ratios, n_ratios, "ratios") }?.to_vec(),
            min_stride,
            stride_divisor,
            image_width,
            image_height,
        };
        *out = Box::into_raw(Box::new(FarpnAnchorSet(place(&cfg)?)));
        Ok(())
    })
}

/// # Safety
/// `set` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn farpn_anchors_len(set: *const FarpnAnchorSet) -> usize {
    unsafe { set.as_ref() }.map_or(0, |s| s.0.len())
}

/// # Safety
/// `set` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn farpn_anchors_get(
    set: *const FarpnAnchorSet,
    index: usize,
    out: *mut FarpnBox,
) -> FarpnStatus {
    guard(|| {
        let set = unsafe { deref(set, "anchor set") }?;
        let out = unsafe { out_ptr(out, "out") }?;
        let a = set.0.anchors.get(index).ok_or_else(|| {
            fail(FarpnStatus::OutOfRange, format!("anchor {index} out of range (len {})", set.0.len()))
        })?;
        *out = a.bbox.into();
        Ok(())
    })
}

/// # Safety
/// `set` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn farpn_anchors_free(set: *mut FarpnAnchorSet) {
    if !set.is_null() {
        drop(unsafe { Box::from_raw(set) });
    }
}

/// Creates a `height x width x channels` map, channel fastest. `data` may be
/// NULL for an all-zero map; otherwise it must hold every value.
///
/// # Safety
/// `data` must be NULL or point to `height * width * channels` doubles; `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn farpn_feature_map_new(
    height: usize,
    width: usize,
    channels: usize,
    stride: f64,
    data: *const f64,
    out: *mut *mut FarpnFeatureMap,
) -> FarpnStatus {
    guard(|| {
        let out = unsafe { out_ptr(out, "out") }?;
        let map = if data.is_null() {
            FeatureMap::zeros(height, width, channels, stride)?
        } else {
            let n = height
                .checked_mul(width)
                .and_then(|v| v.checked_mul(channels))
                .ok_or_else(|| fail(FarpnStatus::InvalidArgument, "map dimensions overflow"))?;
            let values = unsafe { slice(data, n, "data") }?.to_vec();
            FeatureMap::from_vec(height, width, channels, stride, values)?
        };
        *out = Box::into_raw(Box::new(FarpnFeatureMap(map)));
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn farpn_feature_map_read(path: *const c_char, out: *mut *mut FarpnFeatureMap) -> FarpnStatus {
    guard(|| {
        let out = unsafe { out_ptr(out, "out") }?;
        let map = read_tensor(unsafe { self::path(path) }?)?;
        *out = Box::into_raw(Box::new(FarpnFeatureMap(map)));
        Ok(())
    })
}

/// # Safety
/// `map` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn farpn_feature_map_write(map: *const FarpnFeatureMap, path: *const c_char) -> FarpnStatus {
    guard(|| {
        let map = unsafe { deref(map, "feature map") }?;
        write_tensor(&map.0, unsafe { self::path(path) }?)?;
        Ok(())
    })
}

/// # Safety
/// `map` must be a live handle; each output pointer may be NULL.
#[no_mangle]
pub unsafe extern "C" fn farpn_feature_map_dims(
    map: *const FarpnFeatureMap,
    height: *mut usize,
    width: *mut usize,
    channels: *mut usize,
) -> FarpnStatus {
    guard(|| {
        let m = &unsafe { deref(map, "feature map") }?.0;
        for (p, v) in [(height, m.height()), (width, m.width()), (channels, m.channels())] {
            if let Some(p) = unsafe { p.as_mut() } {
                *p = v;
            }
        }
        Ok(())
    })
}

/// # Safety
/// `map` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn farpn_feature_map_free(map: *mut FarpnFeatureMap) {
    if !map.is_null() {
        drop(unsafe { Box::from_raw(map) });
    }
}

/// Pools one branch for one RoI. `out` receives `classes` values for the
/// score branch or 4 (`dx, dy, dw, dh`) for the regression branch.
///
/// # Safety
/// `map` must be a live handle and `out` must hold `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn farpn_psroi_pool(
    map: *const FarpnFeatureMap,
    roi: FarpnBox,
    k: usize,
    classes: usize,
    branch: FarpnBranch,
    out: *mut f64,
    out_len: usize,
) -> FarpnStatus {
    guard(|| {
        let map = unsafe { deref(map, "feature map") }?;
        let cfg = PoolConfig { k, classes, ..PoolConfig::default() };
        let branch = match branch {
            FarpnBranch::Score => Branch::Score,
            FarpnBranch::Regress => Branch::Regress,
        };
        let values = psroi_pool(&map.0, &roi.into(), &cfg, branch)?;
        if out_len < values.len() {
            return Err(fail(FarpnStatus::OutOfRange, format!("out holds {out_len}, need {}", values.len())));
        }
        if out.is_null() {
            return Err(fail(FarpnStatus::NullPointer, "out is null"));
        }
        // SAFETY: `out` holds at least `values.len()` doubles.
        unsafe { ptr::copy_nonoverlapping(values.as_ptr(), out, values.len()) };
        Ok(())
    })
}

/// Scores `anchors`, runs `iterations` refinement rounds on the best
/// `top_k`, and returns the best `output_n` proposals.
///
/// # Safety
/// Handles must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn farpn_propose(
    score_map: *const FarpnFeatureMap,
    regress_map: *const FarpnFeatureMap,
    anchors: *const FarpnAnchorSet,
    image_width: f64,
    image_height: f64,
    k: usize,
    iterations: usize,
    top_k: usize,
    output_n: usize,
    out: *mut *mut FarpnProposals,
) -> FarpnStatus {
    guard(|| {
        let score = unsafe { deref(score_map, "score map") }?;
        let regress = unsafe { deref(regress_map, "regression map") }?;
        let anchors = unsafe { deref(anchors, "anchor set") }?;
        let out = unsafe { out_ptr(out, "out") }?;
        let pool = PoolConfig { k, ..PoolConfig::default() };
        let cfg = RefineConfig { iterations, top_k, output_n };
        let image = ImageSize::new(image_width, image_height);
        let props = propose_from_anchors(&score.0, &regress.0, &anchors.0, image, &cfg, &pool)?;
        *out = Box::into_raw(Box::new(FarpnProposals(props)));
        Ok(())
    })
}

/// Gaussian Soft-NMS over `n` proposals.
///
/// # Safety
/// `proposals` must point to `n` values and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn farpn_soft_nms(
    proposals: *const FarpnProposal,
    n: usize,
    sigma: f64,
    score_floor: f64,
    out: *mut *mut FarpnProposals,
) -> FarpnStatus {
    guard(|| {
        let input: Vec<Proposal> = unsafe { slice(proposals, n, "proposals") }?.iter().map(|&p| p.into()).collect();
        let out = unsafe { out_ptr(out, "out") }?;
        let cfg = NmsConfig { sigma, score_floor, ..NmsConfig::default() };
        cfg.validate()?;
        *out = Box::into_raw(Box::new(FarpnProposals(soft_nms(&input, &cfg))));
        Ok(())
    })
}

/// # Safety
/// `list` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn farpn_proposals_len(list: *const FarpnProposals) -> usize {
    unsafe { list.as_ref() }.map_or(0, |l| l.0.len())
}

/// # Safety
/// `list` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn farpn_proposals_get(
    list: *const FarpnProposals,
    index: usize,
    out: *mut FarpnProposal,
) -> FarpnStatus {
    guard(|| {
        let list = unsafe { deref(list, "proposal list") }?;
        let out = unsafe { out_ptr(out, "out") }?;
        let p = list.0.get(index).ok_or_else(|| {
            fail(FarpnStatus::OutOfRange, format!("proposal {index} out of range (len {})", list.0.len()))
        })?;
        *out = (*p).into();
        Ok(())
    })
}

/// # Safety
/// `list` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn farpn_proposals_free(list: *mut FarpnProposals) {
    if !list.is_null() {
        drop(unsafe { Box::from_raw(list) });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_codes_are_stable() {
        assert_eq!(FarpnStatus::Ok as i32, 0);
        assert_eq!(FarpnStatus::Panic as i32, 6);
    }

    #[test]
    fn guard_reports_panics() {
        assert_eq!(guard(|| panic!("boom")), FarpnStatus::Panic);
        let msg = unsafe { CStr::from_ptr(farpn_last_error_message()) };
        assert_eq!(msg.to_str().unwrap(), "internal panic");
    }

    #[test]
    fn error_mapping() {
        assert_eq!(Failure::from(Error::BadMagic(*b"XXXX")).0, FarpnStatus::Format);
        assert_eq!(Failure::from(Error::InvalidConfig("x".into())).0, FarpnStatus::InvalidArgument);
    }
}
