//! Exhaustive PR-curve reference for average precision.

use cpguard::cpsim::BBox;
use cpguard::eval::{average_precision_pooled, DetectionSet, ScoredBox};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Greedy matching plus the interpolated PR area, computed from the
/// explicit PR curve.
pub fn oracle_ap(frames: &[DetectionSet], thr: f32) -> f64 {
    let total: usize = frames.iter().map(|f| f.ground_truth.len()).sum();
    if total == 0 {
        return 0.0;
    }
    let mut all: Vec<(f32, usize, BBox)> = Vec::new();
    for (fi, f) in frames.iter().enumerate() {
        for p in &f.predictions {
            all.push((p.confidence, fi, p.bbox));
        }
    }
    all.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let mut used: Vec<Vec<bool>> = frames.iter().map(|f| vec![false; f.ground_truth.len()]).collect();
    let mut curve = Vec::new();
    let mut tp = 0.0;
    for (k, (_, fi, b)) in all.iter().enumerate() {
        let mut best = -1.0f32;
        let mut arg = None;
        for (gi, g) in frames[*fi].ground_truth.iter().enumerate() {
            let iou = b.iou(g);
            if !used[*fi][gi] && iou >= thr && iou > best {
                best = iou;
                arg = Some(gi);
            }
        }
        if let Some(gi) = arg {
            used[*fi][gi] = true;
            tp += 1.0;
        }
        curve.push((tp / total as f64, tp / (k + 1) as f64));
    }
    let mut ap = 0.0;
    for level in 1..=(tp as usize) {
        let r = level as f64 / total as f64;
        let p = curve.iter().filter(|(rr, _)| *rr >= r - 1e-12).map(|(_, p)| *p).fold(0.0, f64::max);
        ap += p / total as f64;
    }
    ap
}

fn random_box(rng: &mut ChaCha8Rng) -> BBox {
    BBox::new(rng.random_range(0.0..20.0), rng.random_range(0.0..20.0), rng.random_range(2.0..6.0), rng.random_range(2.0..6.0))
}

/// Random frames with jittered true positives and scattered false ones.
pub fn random_frames(rng: &mut ChaCha8Rng) -> Vec<DetectionSet> {
    (0..rng.random_range(1..5))
        .map(|_| {
            let gt: Vec<BBox> = (0..rng.random_range(0..6)).map(|_| random_box(rng)).collect();
            let mut preds = Vec::new();
            for g in &gt {
                if rng.random_bool(0.7) {
                    let (jx, jy): (f32, f32) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                    preds.push(ScoredBox { bbox: BBox::new(g.cx + jx, g.cy + jy, g.w, g.h), confidence: rng.random() });
                }
            }
            for _ in 0..rng.random_range(0..5) {
                preds.push(ScoredBox { bbox: random_box(rng), confidence: rng.random() });
            }
            DetectionSet { predictions: preds, ground_truth: gt }
        })
        .collect()
}

/// Worst |AP − oracle| over `instances` random instances at IoU 0.5 and 0.7.
pub fn sweep(instances: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let frames = random_frames(&mut rng);
        for thr in [0.5, 0.7] {
            let ap = average_precision_pooled(&frames, thr);
            if !(0.0..=1.0).contains(&ap) {
                return f64::INFINITY;
            }
            worst = worst.max((ap - oracle_ap(&frames, thr)).abs());
        }
    }
    worst
}
