use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::record::SampleRecord;

/// Per-frame population statistics of a dataset.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub frames: usize,
    pub records: usize,
    /// Frames per collaborator count (ego excluded).
    pub collaborator_counts: BTreeMap<String, u64>,
    /// Records per attack type, with benign records under `none`.
    pub attack_types: BTreeMap<String, u64>,
    /// Attackers ÷ total agents (ego included), per frame.
    pub attack_ratio_min: f64,
    pub attack_ratio_mean: f64,
    pub attack_ratio_max: f64,
}

impl DatasetStats {
    /// Attacked records only, as fractions of all attacked records.
    pub fn attack_type_shares(&self) -> BTreeMap<String, f64> {
        let attacked: u64 = self.attack_types.iter().filter(|(k, _)| *k != "none").map(|(_, v)| v).sum();
        self.attack_types
            .iter()
            .filter(|(k, _)| *k != "none")
            .map(|(k, &v)| (k.clone(), if attacked == 0 { 0.0 } else { v as f64 / attacked as f64 }))
            .collect()
    }
}

/// Groups records by (scene, ego) and tallies the distributions.
pub fn compute_stats(records: &[SampleRecord]) -> DatasetStats {
    let mut frames: BTreeMap<(u32, u32), (u64, u64)> = BTreeMap::new();
    let mut attack_types = BTreeMap::new();
    for r in records {
        let e = frames.entry((r.scene_id, r.ego_id)).or_default();
        e.0 += 1;
        e.1 += r.is_malicious() as u64;
        let name = r.attack.map_or("none", |k| k.name());
        *attack_types.entry(name.to_string()).or_insert(0) += 1;
    }
    let mut collaborator_counts = BTreeMap::new();
    let (mut lo, mut hi, mut sum) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
    for &(collaborators, attackers) in frames.values() {
        *collaborator_counts.entry(collaborators.to_string()).or_insert(0) += 1;
        let ratio = attackers as f64 / (collaborators + 1) as f64;
        lo = lo.min(ratio);
        hi = hi.max(ratio);
        sum += ratio;
    }
    let n = frames.len();
    DatasetStats {
        frames: n,
        records: records.len(),
        collaborator_counts,
        attack_types,
        attack_ratio_min: if n == 0 { 0.0 } else { lo },
        attack_ratio_mean: if n == 0 { 0.0 } else { sum / n as f64 },
        attack_ratio_max: if n == 0 { 0.0 } else { hi },
    }
}
