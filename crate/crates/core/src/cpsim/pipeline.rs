use std::sync::atomic::{AtomicUsize, Ordering};

use super::model::{DetectorModel, OBJECT_CLASS};
use super::scene::BBox;
use super::view::Pose;
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// C×H×W intermediate feature, expressed in the frame of `pose`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub data: Tensor,
    pub owner: u32,
    /// Pose whose local grid this map is aligned to.
    pub pose: Pose,
}

impl FeatureMap {
    pub fn shape(&self) -> &[usize] {
        self.data.shape()
    }

    pub fn with_data(&self, data: Tensor) -> Self {
        Self { data, owner: self.owner, pose: self.pose }
    }
}

/// One dense detection-head output cell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Proposal {
    /// Row-major cell index.
    pub cell: usize,
    /// Probabilities over (object, background).
    pub scores: [f32; 2],
    pub bbox: BBox,
    pub confidence: f32,
}

impl Proposal {
    pub fn object_score(&self) -> f32 {
        self.scores[OBJECT_CLASS]
    }

    /// Class with the highest score (object on ties).
    pub fn class(&self) -> usize {
        if self.scores[1] > self.scores[0] {
            1
        } else {
            0
        }
    }
}

/// Result of aligning a feature map into another agent's frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Transmitted {
    pub feature: FeatureMap,
    /// Set when the offset pushed every cell off the map.
    pub out_of_range: bool,
}

/// Integer feature-cell offset `(rows, cols)` that maps `from` onto `to`.
pub fn cell_offset(from: Pose, to: Pose, feature_cell: f32) -> (isize, isize) {
    (((from.y - to.y) / feature_cell).round() as isize, ((from.x - to.x) / feature_cell).round() as isize)
}

/// Shifts a C×H×W tensor by (dr, dc) cells, zero-filling vacated cells.
pub fn shift_cells(data: &Tensor, dr: isize, dc: isize) -> Result<Tensor> {
    crate::autodiff::shift_chw(data, dr, dc)
}

/// Translates `feature` from its own frame into the frame of `to_pose`.
pub fn transmit(feature: &FeatureMap, to_pose: Pose, feature_cell: f32) -> Result<Transmitted> {
    let (dr, dc) = cell_offset(feature.pose, to_pose, feature_cell);
    let [_, h, w] = feature.data.dims3()?;
    let out_of_range = dr.unsigned_abs() >= h || dc.unsigned_abs() >= w;
    let data = if dr == 0 && dc == 0 { feature.data.clone() } else { shift_cells(&feature.data, dr, dc)? };
    Ok(Transmitted { feature: FeatureMap { data, owner: feature.owner, pose: to_pose }, out_of_range })
}

/// Elementwise mean of the ego map and every other map.
pub fn fuse_mean(ego: &FeatureMap, others: &[FeatureMap]) -> Result<FeatureMap> {
    for o in others {
        if o.shape() != ego.shape() {
            return Err(Error::shape(format!("fusing {:?} with {:?}", o.shape(), ego.shape())));
        }
    }
    if others.is_empty() {
        return Ok(ego.clone());
    }
    // f64 accumulation keeps the result independent of input order.
    let n = (others.len() + 1) as f64;
    let mut acc: Vec<f64> = ego.data.data().iter().map(|&v| v as f64).collect();
    for o in others {
        acc.iter_mut().zip(o.data.data()).for_each(|(a, &b)| *a += b as f64);
    }
    let mean = acc.into_iter().map(|a| (a / n) as f32).collect();
    Ok(ego.with_data(Tensor::new(ego.shape(), mean)?))
}

/// Differentiable mean fusion over tape values.
pub fn fuse_mean_on_tape(tape: &mut Tape, inputs: &[Var]) -> Result<Var> {
    match inputs {
        [] => Err(Error::shape("fusion of an empty input set")),
        [only] => Ok(*only),
        _ => {
            let stacked = tape.stack(inputs)?;
            tape.reduce(crate::autodiff::Reduce::Mean, stacked, Some(0))
        }
    }
}

/// Dense proposals for a fused map (see [`DetectorModel::decode`]).
pub fn decode(fused: &FeatureMap, model: &DetectorModel) -> Result<Vec<Proposal>> {
    model.decode(fused)
}

/// Keeps proposals whose object score reaches `threshold`.
pub fn detections(proposals: &[Proposal], threshold: f32) -> Vec<Proposal> {
    proposals.iter().filter(|p| p.object_score() >= threshold).copied().collect()
}

/// Greedy non-maximum suppression by object score: a proposal is dropped when
/// it overlaps an already kept one with IoU above `iou_threshold`.
pub fn suppress(proposals: &[Proposal], iou_threshold: f32) -> Vec<Proposal> {
    let mut order: Vec<&Proposal> = proposals.iter().collect();
    order.sort_by(|a, b| b.object_score().total_cmp(&a.object_score()).then(a.cell.cmp(&b.cell)));
    let mut kept: Vec<Proposal> = Vec::new();
    for p in order {
        if kept.iter().all(|k| k.bbox.iou(&p.bbox) <= iou_threshold) {
            kept.push(*p);
        }
    }
    kept
}

/// Frozen fuse→decode path with a call counter, so callers can assert how
/// many full perception passes a defense performs.
pub struct Perception<'a> {
    pub model: &'a DetectorModel,
    calls: AtomicUsize,
}

impl<'a> Perception<'a> {
    pub fn new(model: &'a DetectorModel) -> Self {
        Self { model, calls: AtomicUsize::new(0) }
    }

    pub fn fuse_decode(&self, ego: &FeatureMap, others: &[FeatureMap]) -> Result<Vec<Proposal>> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let fused = fuse_mean(ego, others)?;
        self.model.decode(&fused)
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.calls.store(0, Ordering::Relaxed);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fm(data: Vec<f32>, shape: &[usize]) -> FeatureMap {
        FeatureMap { data: Tensor::new(shape, data).unwrap(), owner: 1, pose: Pose::default() }
    }

    #[test]
    fn identity_transmit_is_bit_identical() {
        let f = fm((0..18).map(|i| i as f32 * 0.3).collect(), &[2, 3, 3]);
        let t = transmit(&f, f.pose, 4.0).unwrap();
        assert_eq!(t.feature.data, f.data);
        assert!(!t.out_of_range);
    }

    #[test]
    fn single_cell_moves_by_offset() {
        let mut d = vec![0.0; 25];
        d[7] = 1.0; // (1,2)
        let f = fm(d, &[1, 5, 5]);
        // from (x=8, y=4) to origin: +1 row, +2 cols at cell size 4
        let f = FeatureMap { pose: Pose::new(8.0, 4.0), ..f };
        let t = transmit(&f, Pose::new(0.0, 0.0), 4.0).unwrap();
        let idx = t.feature.data.data().iter().position(|&v| v == 1.0).unwrap();
        assert_eq!(idx, 2 * 5 + 4);
    }

    #[test]
    fn far_offset_is_flagged_and_zero() {
        let f = FeatureMap { pose: Pose::new(100.0, 0.0), ..fm(vec![1.0; 9], &[1, 3, 3]) };
        let t = transmit(&f, Pose::new(0.0, 0.0), 4.0).unwrap();
        assert!(t.out_of_range);
        assert!(t.feature.data.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fuse_mean_examples() {
        let ego = fm(vec![0.0], &[1, 1, 1]);
        assert_eq!(fuse_mean(&ego, &[]).unwrap().data, ego.data);
        let other = fm(vec![2.0], &[1, 1, 1]);
        assert_eq!(fuse_mean(&ego, &[other]).unwrap().data.data(), &[1.0]);
        let bad = fm(vec![0.0; 2], &[1, 1, 2]);
        assert!(fuse_mean(&ego, &[bad]).is_err());
    }

    #[test]
    fn empty_tape_fusion_is_an_error() {
        let mut tape = Tape::new();
        assert!(fuse_mean_on_tape(&mut tape, &[]).is_err());
    }
}
