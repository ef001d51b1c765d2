//! C ABI over the cpguard detector, guard classifier and benchmark reader.
//!
//! Every fallible call returns a [`CpgStatus`]; on failure the message is
//! available from [`cpg_last_error_message`] on the same thread. Handles are
//! opaque and must be released with their matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use cpguard::autodiff::Tensor;
use cpguard::benchgen::{read_shards, Dataset};
use cpguard::cpsim::{detections, BBox, DetectorModel, FeatureMap, Perception, Pose, Proposal};
use cpguard::eval::{average_precision_pooled, DetectionSet, ScoredBox};
use cpguard::guard::{defend, detect, GuardModel};
use cpguard::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CpgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    BufferTooSmall = 3,
    Shape = 4,
    Domain = 5,
    Config = 6,
    Format = 7,
    Version = 8,
    Io = 9,
    Panic = 10,
    Other = 11,
}

/// Axis-aligned box in world coordinates with a confidence in [0, 1].
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CpgBox {
    pub cx: f32,
    pub cy: f32,
    pub w: f32,
    pub h: f32,
    pub confidence: f32,
}

/// Metadata of one benchmark record. `attack` is 0 for benign records.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CpgRecordInfo {
    pub scene_id: u32,
    pub ego_id: u32,
    pub collaborator_id: u32,
    pub label: u8,
    pub attack: u8,
    pub budget: f32,
}

pub struct CpgDetector {
    model: DetectorModel,
}

pub struct CpgGuard {
    model: GuardModel,
}

pub struct CpgDataset {
    data: Dataset,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure {
    status: CpgStatus,
    msg: String,
}

impl Failure {
    fn new(status: CpgStatus, msg: impl Into<String>) -> Self {
        Self { status, msg: msg.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Shape(_) => CpgStatus::Shape,
            Error::Domain(_) => CpgStatus::Domain,
            Error::Config(_) => CpgStatus::Config,
            Error::Format { .. } | Error::Record { .. } => CpgStatus::Format,
            Error::Version { .. } => CpgStatus::Version,
            Error::Io { .. } => CpgStatus::Io,
            _ => CpgStatus::Other,
        };
        Failure::new(status, e.to_string())
    }
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guarded(f: impl FnOnce() -> Result<(), Failure>) -> CpgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            CpgStatus::Ok
        }
        Ok(Err(fail)) => {
            set_error(fail.msg);
            fail.status
        }
        Err(_) => {
            set_error("internal panic".into());
            CpgStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure::new(CpgStatus::NullPointer, format!("{name} is null")))
    } else {
        Ok(())
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    non_null(p, "path")?;
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::new(CpgStatus::InvalidArgument, "path is not valid UTF-8"))?;
    Ok(PathBuf::from(s))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    non_null(p, name)?;
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_out<'a, T>(p: *mut T, len: usize, name: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    non_null(p, name)?;
    Ok(std::slice::from_raw_parts_mut(p, len))
}

fn volume(shape: [usize; 3]) -> usize {
    shape.iter().product()
}

/// Ego map plus `count` contiguous collaborator maps, all of `shape`.
unsafe fn maps(
    shape: [usize; 3],
    ego: *const f32,
    pose: Pose,
    collaborators: *const f32,
    count: usize,
    len: usize,
) -> Result<(FeatureMap, Vec<FeatureMap>), Failure> {
    if len != volume(shape) {
        return Err(Failure::new(
            CpgStatus::Shape,
            format!("map length {len} does not match {shape:?} ({} values)", volume(shape)),
        ));
    }
    let ego = slice_arg(ego, len, "ego")?;
    let all = slice_arg(collaborators, count * len, "collaborators")?;
    let make = |data: &[f32], owner: u32| -> Result<FeatureMap, Failure> {
        Ok(FeatureMap { data: Tensor::new(&shape, data.to_vec())?, owner, pose })
    };
    let others = (0..count).map(|i| make(&all[i * len..(i + 1) * len], i as u32 + 1)).collect::<Result<_, _>>()?;
    Ok((make(ego, 0)?, others))
}

unsafe fn write_boxes(found: &[Proposal], out: *mut CpgBox, capacity: usize, out_count: *mut usize) -> Result<(), Failure> {
    non_null(out_count, "out_count")?;
    *out_count = found.len();
    let dst = slice_out(out, capacity.min(found.len()), "out_boxes")?;
    for (d, p) in dst.iter_mut().zip(found) {
        *d = CpgBox { cx: p.bbox.cx, cy: p.bbox.cy, w: p.bbox.w, h: p.bbox.h, confidence: p.object_score() };
    }
    if found.len() > capacity {
        return Err(Failure::new(
            CpgStatus::BufferTooSmall,
            format!("{} detections, capacity {capacity}", found.len()),
        ));
    }
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cpg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn cpg_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Loads a detector checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn cpg_detector_load(path: *const c_char, out: *mut *mut CpgDetector) -> CpgStatus {
    guarded(|| {
        non_null(out, "out")?;
        *out = ptr::null_mut();
        let model = DetectorModel::load(&path_arg(path)?)?;
        *out = Box::into_raw(Box::new(CpgDetector { model }));
        Ok(())
    })
}

/// # Safety
/// `det` must come from [`cpg_detector_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn cpg_detector_free(det: *mut CpgDetector) {
    if !det.is_null() {
        drop(Box::from_raw(det));
    }
}

/// Writes the (C, H, W) feature-map shape into `out_shape[0..3]`.
///
/// # Safety
/// `det` must be a live handle and `out_shape` must hold three values.
#[no_mangle]
pub unsafe extern "C" fn cpg_detector_feature_shape(det: *const CpgDetector, out_shape: *mut usize) -> CpgStatus {
    guarded(|| {
        non_null(det, "det")?;
        let dst = slice_out(out_shape, 3, "out_shape")?;
        dst.copy_from_slice(&(*det).model.config.feature_shape());
        Ok(())
    })
}

/// Fuses the ego map with `count` aligned collaborator maps by mean, decodes
/// and writes detections above the model's score threshold. When more than
/// `capacity` boxes are found the first `capacity` are written,
/// `*out_count` holds the full count and `BUFFER_TOO_SMALL` is returned.
///
/// # Safety
/// Map pointers must hold `len` and `count * len` floats; `out_boxes` must
/// hold `capacity` boxes.
#[no_mangle]
pub unsafe extern "C" fn cpg_detect(
    det: *const CpgDetector,
    ego: *const f32,
    pose_x: f32,
    pose_y: f32,
    collaborators: *const f32,
    count: usize,
    len: usize,
    out_boxes: *mut CpgBox,
    capacity: usize,
    out_count: *mut usize,
) -> CpgStatus {
    guarded(|| {
        non_null(det, "det")?;
        let model = &(*det).model;
        let (ego, others) = maps(model.config.feature_shape(), ego, Pose::new(pose_x, pose_y), collaborators, count, len)?;
        let proposals = Perception::new(model).fuse_decode(&ego, &others)?;
        write_boxes(&detections(&proposals, model.config.score_threshold), out_boxes, capacity, out_count)
    })
}

/// Loads a guard checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn cpg_guard_load(path: *const c_char, out: *mut *mut CpgGuard) -> CpgStatus {
    guarded(|| {
        non_null(out, "out")?;
        *out = ptr::null_mut();
        let model = GuardModel::load(&path_arg(path)?)?;
        *out = Box::into_raw(Box::new(CpgGuard { model }));
        Ok(())
    })
}

/// # Safety
/// `guard` must come from [`cpg_guard_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn cpg_guard_free(guard: *mut CpgGuard) {
    if !guard.is_null() {
        drop(Box::from_raw(guard));
    }
}

/// Writes the (C, H, W) guard input shape into `out_shape[0..3]`.
///
/// # Safety
/// `guard` must be a live handle and `out_shape` must hold three values.
#[no_mangle]
pub unsafe extern "C" fn cpg_guard_input_shape(guard: *const CpgGuard, out_shape: *mut usize) -> CpgStatus {
    guarded(|| {
        non_null(guard, "guard")?;
        slice_out(out_shape, 3, "out_shape")?.copy_from_slice(&(*guard).model.input);
        Ok(())
    })
}

/// Classifies each of `count` collaborators against the ego map. Writes the
/// malicious probability and a 0/1 flag per collaborator; either output may
/// be null.
///
/// # Safety
/// Map pointers must hold `len` and `count * len` floats; non-null outputs
/// must hold `count` values.
#[no_mangle]
pub unsafe extern "C" fn cpg_guard_detect(
    guard: *const CpgGuard,
    ego: *const f32,
    collaborators: *const f32,
    count: usize,
    len: usize,
    threshold: f32,
    out_probabilities: *mut f32,
    out_flags: *mut u8,
) -> CpgStatus {
    guarded(|| {
        non_null(guard, "guard")?;
        let model = &(*guard).model;
        let (ego, others) = maps(model.input, ego, Pose::default(), collaborators, count, len)?;
        let verdicts = detect(&ego, &others, model, threshold)?;
        if !out_probabilities.is_null() {
            for (d, v) in slice_out(out_probabilities, count, "out_probabilities")?.iter_mut().zip(&verdicts) {
                *d = v.malicious_probability;
            }
        }
        if !out_flags.is_null() {
            for (d, v) in slice_out(out_flags, count, "out_flags")?.iter_mut().zip(&verdicts) {
                *d = v.malicious as u8;
            }
        }
        Ok(())
    })
}

/// Drops collaborators the guard flags, then fuses and decodes as
/// [`cpg_detect`]. `out_flags` (nullable) receives one 0/1 flag per
/// collaborator.
///
/// # Safety
/// As for [`cpg_detect`]; non-null `out_flags` must hold `count` bytes.
#[no_mangle]
pub unsafe extern "C" fn cpg_defend(
    det: *const CpgDetector,
    guard: *const CpgGuard,
    ego: *const f32,
    pose_x: f32,
    pose_y: f32,
    collaborators: *const f32,
    count: usize,
    len: usize,
    threshold: f32,
    out_flags: *mut u8,
    out_boxes: *mut CpgBox,
    capacity: usize,
    out_count: *mut usize,
) -> CpgStatus {
    guarded(|| {
        non_null(det, "det")?;
        non_null(guard, "guard")?;
        let (detector, classifier) = (&(*det).model, &(*guard).model);
        let shape = detector.config.feature_shape();
        if shape != classifier.input {
            return Err(Failure::new(
                CpgStatus::Shape,
                format!("detector maps {shape:?} do not match guard input {:?}", classifier.input),
            ));
        }
        let (ego, others) = maps(shape, ego, Pose::new(pose_x, pose_y), collaborators, count, len)?;
        let out = defend(&ego, &others, classifier, &Perception::new(detector), threshold)?;
        if !out_flags.is_null() {
            for (d, v) in slice_out(out_flags, count, "out_flags")?.iter_mut().zip(&out.verdicts) {
                *d = v.malicious as u8;
            }
        }
        write_boxes(&detections(&out.proposals, detector.config.score_threshold), out_boxes, capacity, out_count)
    })
}

/// Opens a benchmark directory (manifest plus shards).
///
/// # Safety
/// `dir` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn cpg_dataset_open(dir: *const c_char, out: *mut *mut CpgDataset) -> CpgStatus {
    guarded(|| {
        non_null(out, "out")?;
        *out = ptr::null_mut();
        let data = read_shards(&path_arg(dir)?)?;
        *out = Box::into_raw(Box::new(CpgDataset { data }));
        Ok(())
    })
}

/// # Safety
/// `ds` must come from [`cpg_dataset_open`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn cpg_dataset_free(ds: *mut CpgDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Writes the record count and the (C, H, W) feature shape. Records are
/// stored train, then validation, then test; `out_splits` (nullable)
/// receives the three split sizes.
///
/// # Safety
/// `out_shape` must hold three values and non-null `out_splits` three more.
#[no_mangle]
pub unsafe extern "C" fn cpg_dataset_info(
    ds: *const CpgDataset,
    out_count: *mut usize,
    out_shape: *mut usize,
    out_splits: *mut usize,
) -> CpgStatus {
    guarded(|| {
        non_null(ds, "ds")?;
        non_null(out_count, "out_count")?;
        let data = &(*ds).data;
        *out_count = data.records.len();
        slice_out(out_shape, 3, "out_shape")?.copy_from_slice(&data.manifest.dims());
        if !out_splits.is_null() {
            let sizes = [data.train().len(), data.val().len(), data.test().len()];
            slice_out(out_splits, 3, "out_splits")?.copy_from_slice(&sizes);
        }
        Ok(())
    })
}

/// Metadata and, for non-null buffers of `len` floats, the ego and
/// collaborator maps of record `index`.
///
/// # Safety
/// `out_info` must be writable; non-null map buffers must hold `len` floats.
#[no_mangle]
pub unsafe extern "C" fn cpg_dataset_record(
    ds: *const CpgDataset,
    index: usize,
    out_info: *mut CpgRecordInfo,
    out_ego: *mut f32,
    out_collaborator: *mut f32,
    len: usize,
) -> CpgStatus {
    guarded(|| {
        non_null(ds, "ds")?;
        non_null(out_info, "out_info")?;
        let data = &(*ds).data;
        let r = data.records.get(index).ok_or_else(|| {
            Failure::new(CpgStatus::InvalidArgument, format!("record {index} out of range ({})", data.records.len()))
        })?;
        *out_info = CpgRecordInfo {
            scene_id: r.scene_id,
            ego_id: r.ego_id,
            collaborator_id: r.collaborator_id,
            label: r.label(),
            attack: r.attack_code(),
            budget: r.budget,
        };
        for (dst, src) in [(out_ego, &r.ego_feature), (out_collaborator, &r.collaborator_feature)] {
            if dst.is_null() {
                continue;
            }
            if len != src.data().len() {
                return Err(Failure::new(CpgStatus::Shape, format!("buffer of {len} for a map of {}", src.data().len())));
            }
            slice_out(dst, len, "map buffer")?.copy_from_slice(src.data());
        }
        Ok(())
    })
}

/// Average precision pooled over frames at an IoU threshold. Predictions
/// and ground truth carry a frame index each; ground-truth confidences are
/// ignored.
///
/// # Safety
/// Each array must hold as many entries as its count.
#[no_mangle]
pub unsafe extern "C" fn cpg_average_precision(
    predictions: *const CpgBox,
    prediction_frames: *const u32,
    prediction_count: usize,
    ground_truth: *const CpgBox,
    ground_truth_frames: *const u32,
    ground_truth_count: usize,
    iou_threshold: f32,
    out_ap: *mut f64,
) -> CpgStatus {
    guarded(|| {
        non_null(out_ap, "out_ap")?;
        if !(iou_threshold > 0.0 && iou_threshold <= 1.0) {
            return Err(Failure::new(CpgStatus::Domain, format!("IoU threshold {iou_threshold} outside (0, 1]")));
        }
        let preds = slice_arg(predictions, prediction_count, "predictions")?;
        let pred_frames = slice_arg(prediction_frames, prediction_count, "prediction_frames")?;
        let gts = slice_arg(ground_truth, ground_truth_count, "ground_truth")?;
        let gt_frames = slice_arg(ground_truth_frames, ground_truth_count, "ground_truth_frames")?;
        let frames = pred_frames.iter().chain(gt_frames).map(|&f| f as usize + 1).max().unwrap_or(0);
        let mut sets: Vec<DetectionSet> =
            (0..frames).map(|_| DetectionSet { predictions: Vec::new(), ground_truth: Vec::new() }).collect();
        let bbox = |b: &CpgBox| BBox::new(b.cx, b.cy, b.w, b.h);
        for (b, &f) in preds.iter().zip(pred_frames) {
            sets[f as usize].predictions.push(ScoredBox { bbox: bbox(b), confidence: b.confidence });
        }
        for (b, &f) in gts.iter().zip(gt_frames) {
            sets[f as usize].ground_truth.push(bbox(b));
        }
        *out_ap = average_precision_pooled(&sets, iou_threshold);
        Ok(())
    })
}
