use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::baseline::{consensus_baseline, BaselineConfig};
use super::metrics::{average_precision_pooled, DetectionSet, ScoredBox};
use crate::attacks::{attack_agent, AttackConfig, CollabState};
use crate::cpsim::{derive_seed, detections, generate_frame, DetectorModel, FeatureMap, Frame, FrameConfig, Perception, Proposal};
use crate::error::{Error, Result};
use crate::guard::{defend, GuardModel};

/// Frames with `agents` agents each (ego included).
pub fn eval_frames(config: &FrameConfig, count: usize, agents: usize, seed: u64) -> Result<Vec<Frame>> {
    (0..count).map(|i| generate_frame(config, agents, derive_seed(seed, i as u64))).collect()
}

/// Collaborators `1..=attackers` each run `attack` against the clean maps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackScenario {
    pub attack: AttackConfig,
    pub attackers: usize,
}

#[derive(Clone, Copy, Debug)]
pub enum Defense<'a> {
    None,
    Guard { model: &'a GuardModel, threshold: f32 },
    Baseline { config: &'a BaselineConfig },
}

/// Aligned clean maps and the maps actually received by the ego.
#[derive(Clone, Debug)]
pub struct ReceivedFrame {
    pub ego: FeatureMap,
    pub clean: Vec<FeatureMap>,
    pub received: Vec<FeatureMap>,
    pub malicious: Vec<bool>,
}

pub fn receive(detector: &DetectorModel, frame: &Frame, scenario: Option<&AttackScenario>, seed: u64) -> Result<ReceivedFrame> {
    let aligned = frame.encode_aligned(detector)?;
    let ego = aligned[0].clone();
    let clean = aligned[1..].to_vec();
    let mut received = clean.clone();
    let mut malicious = vec![false; clean.len()];
    if let Some(s) = scenario {
        if s.attackers > clean.len() {
            return Err(Error::config(format!("{} attackers among {} collaborators", s.attackers, clean.len())));
        }
        let state = CollabState { model: detector, ego: ego.clone(), collaborators: clean.clone() };
        for i in 0..s.attackers {
            let id = clean[i].owner;
            received[i] = attack_agent(&state, id, Some(&s.attack), derive_seed(seed, id as u64))?.0;
            malicious[i] = true;
        }
    }
    Ok(ReceivedFrame { ego, clean, received, malicious })
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DetectionEval {
    pub ap_050: f64,
    pub ap_070: f64,
    pub sets: Vec<DetectionSet>,
    /// Per-collaborator verdicts of the defense and the true labels.
    pub verdicts: Vec<bool>,
    pub labels: Vec<bool>,
    pub fuse_decode_calls: usize,
}

fn scored(proposals: &[Proposal], threshold: f32) -> Vec<ScoredBox> {
    detections(proposals, threshold).iter().map(|p| ScoredBox { bbox: p.bbox, confidence: p.object_score() }).collect()
}

/// Runs the (possibly attacked, possibly defended) pipeline on every frame
/// and pools AP over frames. Frames are processed in parallel with
/// per-frame seeds.
pub fn evaluate_detection(
    detector: &DetectorModel,
    frames: &[Frame],
    scenario: Option<&AttackScenario>,
    defense: Defense,
    score_threshold: f32,
    seed: u64,
) -> Result<DetectionEval> {
    type FrameOut = (DetectionSet, Vec<bool>, Vec<bool>, usize);
    let per_frame: Vec<FrameOut> = frames
        .par_iter()
        .enumerate()
        .map(|(i, frame)| -> Result<FrameOut> {
            let fs = derive_seed(seed, i as u64);
            let r = receive(detector, frame, scenario, fs)?;
            let perception = Perception::new(detector);
            let (proposals, verdicts) = match defense {
                Defense::None => (perception.fuse_decode(&r.ego, &r.received)?, vec![false; r.received.len()]),
                Defense::Guard { model, threshold } => {
                    let out = defend(&r.ego, &r.received, model, &perception, threshold)?;
                    (out.proposals, out.verdicts.iter().map(|v| v.malicious).collect())
                }
                Defense::Baseline { config } => {
                    let out = consensus_baseline(&r.ego, &r.received, &perception, config, derive_seed(fs, 99))?;
                    (out.proposals, out.verdicts.iter().map(|v| v.malicious).collect())
                }
            };
            let set = DetectionSet {
                predictions: scored(&proposals, score_threshold),
                ground_truth: frame.ground_truth(&detector.config),
            };
            Ok((set, verdicts, r.malicious, perception.calls()))
        })
        .collect::<Result<_>>()?;
    let mut out = DetectionEval::default();
    for (set, v, l, calls) in per_frame {
        out.sets.push(set);
        out.verdicts.extend(v);
        out.labels.extend(l);
        out.fuse_decode_calls += calls;
    }
    out.ap_050 = average_precision_pooled(&out.sets, 0.5);
    out.ap_070 = average_precision_pooled(&out.sets, 0.7);
    Ok(out)
}
