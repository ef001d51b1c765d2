use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cpsim::{detections, FeatureMap, Perception, Proposal};
use crate::error::{Error, Result};

/// Settings of the sampling-consensus baseline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    /// Collaborators per hypothesis; must be below the collaborator count.
    pub subset_size: usize,
    pub max_attempts: usize,
    /// Accept a hypothesis when the mean best-match IoU reaches this.
    pub iou_threshold: f32,
    /// Object score above which a proposal counts as a detection.
    pub score_threshold: f32,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self { subset_size: 3, max_attempts: 10, iou_threshold: 0.5, score_threshold: 0.5 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BaselineVerdict {
    pub collaborator: u32,
    pub malicious: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BaselineOutput {
    pub proposals: Vec<Proposal>,
    pub verdicts: Vec<BaselineVerdict>,
    pub attempts: usize,
    pub accepted: usize,
}

/// Mean over `reference` detections of their best IoU with `candidate`;
/// 1 when the reference is empty.
pub fn consensus_score(reference: &[Proposal], candidate: &[Proposal]) -> f32 {
    if reference.is_empty() {
        return 1.0;
    }
    let total: f32 = reference
        .iter()
        .map(|r| candidate.iter().map(|c| r.bbox.iou(&c.bbox)).fold(0.0, f32::max))
        .sum();
    total / reference.len() as f32
}

/// Hypothesize-and-verify: sample collaborator subsets, fuse and decode
/// each, and trust the members of subsets whose output agrees with the
/// ego-only result. Stops once every collaborator is trusted or attempts
/// run out; untrusted collaborators are flagged and the final output fuses
/// the ego with the trusted set (ego only when nobody was trusted).
pub fn consensus_baseline(
    ego: &FeatureMap,
    collaborators: &[FeatureMap],
    perception: &Perception,
    config: &BaselineConfig,
    seed: u64,
) -> Result<BaselineOutput> {
    if config.subset_size == 0 {
        return Err(Error::config("baseline subset size must be positive"));
    }
    let n = collaborators.len();
    let k = config.subset_size.min(n.saturating_sub(1)).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let reference = detections(&perception.fuse_decode(ego, &[])?, config.score_threshold);
    let mut trusted = vec![false; n];
    let (mut attempts, mut accepted) = (0, 0);
    while n > 0 && attempts < config.max_attempts && !trusted.iter().all(|&t| t) {
        attempts += 1;
        let members = index::sample(&mut rng, n, k.min(n)).into_vec();
        let subset: Vec<FeatureMap> = members.iter().map(|&i| collaborators[i].clone()).collect();
        let out = detections(&perception.fuse_decode(ego, &subset)?, config.score_threshold);
        if consensus_score(&reference, &out) >= config.iou_threshold {
            accepted += 1;
            members.iter().for_each(|&i| trusted[i] = true);
        }
    }
    let kept: Vec<FeatureMap> = collaborators.iter().zip(&trusted).filter(|(_, &t)| t).map(|(c, _)| c.clone()).collect();
    let proposals = perception.fuse_decode(ego, &kept)?;
    let verdicts = collaborators
        .iter()
        .zip(&trusted)
        .map(|(c, &t)| BaselineVerdict { collaborator: c.owner, malicious: !t })
        .collect();
    Ok(BaselineOutput { proposals, verdicts, attempts, accepted })
}
