use serde::{Deserialize, Serialize};

use crate::cpsim::BBox;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

/// Rates derived from a confusion matrix. `None` marks a zero denominator.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub counts: ConfusionCounts,
    pub accuracy: Option<f64>,
    pub tpr: Option<f64>,
    pub fpr: Option<f64>,
    pub precision: Option<f64>,
    pub f1: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn metrics(&self) -> ClassificationMetrics {
        let precision = ratio(self.tp, self.tp + self.fp);
        let tpr = ratio(self.tp, self.tp + self.fn_);
        let f1 = match (precision, tpr) {
            (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
            _ => None,
        };
        ClassificationMetrics {
            counts: *self,
            accuracy: ratio(self.tp + self.tn, self.total()),
            tpr,
            fpr: ratio(self.fp, self.fp + self.tn),
            precision,
            f1,
        }
    }
}

/// Malicious (`true`) is the positive class.
pub fn confusion_counts(verdicts: &[bool], labels: &[bool]) -> Result<ConfusionCounts> {
    if verdicts.len() != labels.len() {
        return Err(Error::shape(format!("{} verdicts for {} labels", verdicts.len(), labels.len())));
    }
    let mut c = ConfusionCounts::default();
    for (&v, &l) in verdicts.iter().zip(labels) {
        match (v, l) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

pub fn classification_metrics(verdicts: &[bool], labels: &[bool]) -> Result<ClassificationMetrics> {
    Ok(confusion_counts(verdicts, labels)?.metrics())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoredBox {
    pub bbox: BBox,
    pub confidence: f32,
}

/// Frame-level detections paired with that frame's ground truth.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DetectionSet {
    pub predictions: Vec<ScoredBox>,
    pub ground_truth: Vec<BBox>,
}

/// AP for a single frame.
pub fn average_precision(predictions: &[ScoredBox], ground_truth: &[BBox], iou_threshold: f32) -> f64 {
    let set = DetectionSet { predictions: predictions.to_vec(), ground_truth: ground_truth.to_vec() };
    average_precision_pooled(std::slice::from_ref(&set), iou_threshold)
}

/// AP with predictions from every frame ranked together. Each frame is
/// matched greedily in descending confidence; a ground-truth box can absorb
/// at most one prediction.
pub fn average_precision_pooled(frames: &[DetectionSet], iou_threshold: f32) -> f64 {
    let total_gt: usize = frames.iter().map(|f| f.ground_truth.len()).sum();
    if total_gt == 0 {
        return 0.0;
    }
    let mut ranked: Vec<(f32, usize, usize)> = frames
        .iter()
        .enumerate()
        .flat_map(|(fi, f)| f.predictions.iter().enumerate().map(move |(pi, p)| (p.confidence, fi, pi)))
        .collect();
    // Stable sort keeps input order among equal confidences.
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut taken: Vec<Vec<bool>> = frames.iter().map(|f| vec![false; f.ground_truth.len()]).collect();
    let mut hits = Vec::with_capacity(ranked.len());
    for &(_, fi, pi) in &ranked {
        let pred = &frames[fi].predictions[pi].bbox;
        let mut best: Option<(usize, f32)> = None;
        for (gi, gt) in frames[fi].ground_truth.iter().enumerate() {
            if taken[fi][gi] {
                continue;
            }
            let iou = pred.iou(gt);
            if iou >= iou_threshold && best.map_or(true, |(_, b)| iou > b) {
                best = Some((gi, iou));
            }
        }
        if let Some((gi, _)) = best {
            taken[fi][gi] = true;
        }
        hits.push(best.is_some());
    }
    ap_from_hits(&hits, total_gt)
}

/// Area under the monotone precision envelope for a ranked hit list.
pub fn ap_from_hits(hits: &[bool], total_gt: usize) -> f64 {
    if total_gt == 0 {
        return 0.0;
    }
    let mut tp = 0usize;
    let mut recall = Vec::with_capacity(hits.len());
    let mut precision = Vec::with_capacity(hits.len());
    for (i, &h) in hits.iter().enumerate() {
        tp += h as usize;
        recall.push(tp as f64 / total_gt as f64);
        precision.push(tp as f64 / (i + 1) as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (r, p) in recall.iter().zip(&precision) {
        ap += (r - prev_recall) * p;
        prev_recall = *r;
    }
    ap
}
