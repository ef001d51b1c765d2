use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::{index, IndexedRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::record::SampleRecord;
use super::shard::{shard_name, Dataset, Manifest, FORMAT_VERSION};
use super::split::{split, SplitRanges};
use super::stats::compute_stats;
use crate::attacks::{attack_agent, AttackConfig, AttackKind, CollabState};
use crate::cpsim::{derive_seed, generate_frame, DetectorModel, Frame, FrameConfig};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub frames: usize,
    /// Possible collaborator counts (ego excluded) and their weights.
    pub collaborator_counts: Vec<usize>,
    pub collaborator_weights: Vec<f64>,
    /// Weight of having 0, 1, 2, … attackers in a frame.
    pub attacker_weights: Vec<f64>,
    /// Attack types an attacker picks from uniformly.
    pub attack_types: Vec<AttackKind>,
    /// Fixed Δ for every attack; when absent Δ is drawn from `budget_grid`.
    pub budget: Option<f32>,
    pub budget_grid: Vec<f32>,
    pub split_ratios: [u32; 3],
    pub records_per_shard: usize,
    /// Shared attack settings (steps, step size, thresholds); kind and
    /// budget are overridden per attacker.
    pub attack: AttackConfig,
    pub frame: FrameConfig,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            frames: 1000,
            collaborator_counts: vec![3, 4, 5, 6],
            collaborator_weights: vec![4.6, 46.0, 29.9, 19.5],
            attacker_weights: vec![1.0, 1.0, 1.0],
            attack_types: AttackKind::ALL.to_vec(),
            budget: None,
            budget_grid: vec![0.1, 0.25, 0.5, 0.75, 1.0],
            split_ratios: [8, 1, 1],
            records_per_shard: 1024,
            attack: AttackConfig::default(),
            frame: FrameConfig::default(),
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.collaborator_counts.is_empty() || self.collaborator_counts.len() != self.collaborator_weights.len() {
            return Err(Error::config("collaborator counts and weights must be nonempty and of equal length"));
        }
        WeightedIndex::new(&self.collaborator_weights).map_err(|e| Error::config(format!("collaborator weights: {e}")))?;
        WeightedIndex::new(&self.attacker_weights).map_err(|e| Error::config(format!("attacker weights: {e}")))?;
        let min_collab = self.collaborator_counts.iter().zip(&self.collaborator_weights).filter(|(_, w)| **w > 0.0).map(|(c, _)| *c).min();
        let max_attackers = self.attacker_weights.iter().rposition(|&w| w > 0.0).unwrap_or(0);
        if let Some(min_collab) = min_collab {
            if max_attackers > min_collab {
                return Err(Error::config(format!(
                    "up to {max_attackers} attackers but frames may have only {min_collab} collaborators"
                )));
            }
        }
        if max_attackers > 0 && self.attack_types.is_empty() {
            return Err(Error::config("attackers configured but no attack types"));
        }
        match self.budget {
            Some(b) if !(b >= 0.0 && b.is_finite()) => return Err(Error::config(format!("invalid budget {b}"))),
            None if self.budget_grid.is_empty() => return Err(Error::config("empty budget grid")),
            _ => {}
        }
        if self.records_per_shard == 0 {
            return Err(Error::config("records_per_shard must be positive"));
        }
        Ok(())
    }

    /// Hex SHA-256 over this config and the detector parameters.
    pub fn digest(&self, detector: &DetectorModel, seed: u64) -> String {
        let mut h = Sha256::new();
        h.update(toml::to_string(self).unwrap_or_default().as_bytes());
        h.update(seed.to_le_bytes());
        h.update(detector.to_checkpoint().to_bytes());
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// What happened in one frame: its agents and the attack assignment.
#[derive(Clone, Debug, PartialEq)]
pub struct FramePlan {
    pub collaborators: usize,
    /// (collaborator id, attack type, Δ) per attacker.
    pub attackers: Vec<(u32, AttackKind, f32)>,
}

pub fn plan_frame(config: &GenConfig, frame_seed: u64) -> Result<FramePlan> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(frame_seed, 7));
    let cw = WeightedIndex::new(&config.collaborator_weights).map_err(|e| Error::config(e.to_string()))?;
    let collaborators = config.collaborator_counts[cw.sample(&mut rng)];
    let aw = WeightedIndex::new(&config.attacker_weights).map_err(|e| Error::config(e.to_string()))?;
    let count = aw.sample(&mut rng);
    if count > collaborators {
        return Err(Error::config(format!("{count} attackers among {collaborators} collaborators")));
    }
    let mut ids: Vec<usize> = index::sample(&mut rng, collaborators, count).into_vec();
    ids.sort_unstable();
    let mut attackers = Vec::with_capacity(count);
    for i in ids {
        let kind = *config.attack_types.choose(&mut rng).ok_or_else(|| Error::config("no attack types"))?;
        let budget = match config.budget {
            Some(b) => b,
            None => *config.budget_grid.choose(&mut rng).ok_or_else(|| Error::config("empty budget grid"))?,
        };
        attackers.push((i as u32 + 1, kind, budget));
    }
    Ok(FramePlan { collaborators, attackers })
}

/// Seed of the attack run by collaborator `id` in a frame.
pub fn attack_seed(frame_seed: u64, id: u32) -> u64 {
    derive_seed(frame_seed, 1000 + id as u64)
}

/// The simulated frame behind record group `scene_id`.
pub fn regenerate_frame(config: &GenConfig, seed: u64, scene_id: u32) -> Result<(Frame, FramePlan)> {
    let fs = derive_seed(seed, scene_id as u64);
    let plan = plan_frame(config, fs)?;
    let frame = generate_frame(&config.frame, plan.collaborators + 1, derive_seed(fs, 1))?;
    Ok((frame, plan))
}

/// All records of one frame, in collaborator order.
pub fn frame_records(detector: &DetectorModel, config: &GenConfig, seed: u64, scene_id: u32) -> Result<Vec<SampleRecord>> {
    let fs = derive_seed(seed, scene_id as u64);
    let (frame, plan) = regenerate_frame(config, seed, scene_id)?;
    let aligned = frame.encode_aligned(detector)?;
    let state = CollabState { model: detector, ego: aligned[0].clone(), collaborators: aligned[1..].to_vec() };
    let mut sent = state.collaborators.clone();
    let mut kinds = vec![None; sent.len()];
    for &(id, kind, budget) in &plan.attackers {
        let cfg = AttackConfig { kind, budget, ..config.attack.clone() };
        let (map, _) = attack_agent(&state, id, Some(&cfg), attack_seed(fs, id))?;
        sent[id as usize - 1] = map;
        kinds[id as usize - 1] = Some((kind, budget));
    }
    Ok(sent
        .into_iter()
        .zip(kinds)
        .map(|(map, k)| SampleRecord {
            scene_id,
            ego_id: state.ego.owner,
            collaborator_id: map.owner,
            attack: k.map(|(kind, _)| kind),
            budget: k.map_or(0.0, |(_, b)| b),
            ego_feature: state.ego.data.clone(),
            collaborator_feature: map.data,
        })
        .collect())
}

/// Generates every frame (in parallel), splits the records and assembles
/// the manifest. Records are returned in stored order: train, val, test.
pub fn generate_dataset(detector: &DetectorModel, config: &GenConfig, seed: u64) -> Result<Dataset> {
    config.validate()?;
    let per_frame: Vec<Vec<SampleRecord>> = (0..config.frames as u32)
        .into_par_iter()
        .map(|i| frame_records(detector, config, seed, i))
        .collect::<Result<_>>()?;
    let records: Vec<SampleRecord> = per_frame.into_iter().flatten().collect();
    assemble(records, detector.config.feature_shape(), config, seed, config.digest(detector, seed))
}

/// Orders records by a seeded 8:1:1 split and builds the manifest.
pub fn assemble(records: Vec<SampleRecord>, dims: [usize; 3], config: &GenConfig, seed: u64, digest: String) -> Result<Dataset> {
    let count = records.len();
    let (records, splits) = if count == 0 {
        (records, SplitRanges::default())
    } else {
        let plan = split(count, config.split_ratios, derive_seed(seed, u64::MAX))?;
        let mut slots: Vec<Option<SampleRecord>> = records.into_iter().map(Some).collect();
        let ordered = plan.permutation.iter().map(|&i| slots[i].take().expect("permutation")).collect();
        (ordered, plan.ranges)
    };
    let stats = compute_stats(&records);
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        channels: dims[0],
        height: dims[1],
        width: dims[2],
        count,
        records_per_shard: config.records_per_shard,
        shards: (0..count.div_ceil(config.records_per_shard)).map(shard_name).collect(),
        seed,
        config_digest: digest,
        splits,
        stats,
    };
    Ok(Dataset { manifest, records })
}
