use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attacks::{AttackConfig, AttackKind};
use crate::benchgen::GenConfig;
use crate::cpsim::{DetectorTrainConfig, FrameConfig};
use crate::error::{Error, Result};
use crate::eval::BaselineConfig;
use crate::guard::GuardConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorSection {
    pub train_frames: usize,
    pub eval_frames: usize,
    /// Agents per frame, ego included.
    pub agents: usize,
    pub train: DetectorTrainConfig,
}

impl Default for DetectorSection {
    fn default() -> Self {
        Self { train_frames: 200, eval_frames: 100, agents: 4, train: DetectorTrainConfig::default() }
    }
}

/// Attack sweeps and the attacked/defended detection evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackSection {
    pub kinds: Vec<AttackKind>,
    pub budgets: Vec<f32>,
    pub attackers: usize,
    pub frames: usize,
    pub agents: usize,
    /// Object score above which a proposal is a detection.
    pub score_threshold: f32,
    /// Shared settings; kind and budget are set per sweep point.
    pub settings: AttackConfig,
    /// Scenario used by `eval` and `bench-fps`.
    pub eval_kind: AttackKind,
    pub eval_budget: f32,
}

impl Default for AttackSection {
    fn default() -> Self {
        Self {
            kinds: AttackKind::ALL.to_vec(),
            budgets: vec![0.1, 0.25, 0.5, 0.75, 1.0],
            attackers: 1,
            frames: 100,
            agents: 4,
            score_threshold: 0.5,
            settings: AttackConfig::default(),
            eval_kind: AttackKind::Pgd,
            eval_budget: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    pub frames: usize,
    pub warmup: usize,
    pub collaborators: usize,
    pub baseline: BaselineConfig,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self { frames: 30, warmup: 5, collaborators: 5, baseline: BaselineConfig::default() }
    }
}

/// Everything a command may read. Sections a command does not use are
/// ignored by it but still enter the digest.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabConfig {
    pub seed: Option<u64>,
    pub frame: FrameConfig,
    pub detector: DetectorSection,
    pub gen: GenConfig,
    pub attack: AttackSection,
    pub guard: GuardConfig,
    pub bench: BenchSection,
}

impl LabConfig {
    /// Reads `path` (if any), applies `key.path=value` overrides and
    /// validates the result.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                text.parse::<toml::Table>().map_err(|e| Error::format(p, e.to_string()))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: LabConfig =
            toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.frame.scene.validate()?;
        self.frame.pipeline.validate()?;
        self.detector.train.validate()?;
        self.gen.validate()?;
        self.attack.settings.validate()?;
        self.guard.validate()?;
        if self.detector.agents == 0 || self.attack.agents == 0 {
            return Err(Error::config("frames need at least one agent"));
        }
        if self.attack.attackers >= self.attack.agents {
            return Err(Error::config("attackers must be fewer than the agents of a frame"));
        }
        if self.bench.baseline.subset_size >= self.bench.collaborators {
            return Err(Error::config("baseline subset size must be below the collaborator count"));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(e.to_string()))
    }

    /// Hex SHA-256 of the resolved config and seed.
    pub fn digest(&self, seed: u64) -> Result<String> {
        let mut h = Sha256::new();
        h.update(self.to_toml()?.as_bytes());
        h.update(seed.to_le_bytes());
        Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
    }
}

/// Sets `a.b.c=value` in `table`. The value is parsed as a TOML literal
/// and falls back to a plain string.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec.split_once('=').ok_or_else(|| Error::config(format!("override `{spec}` is not key=value")))?;
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::config(format!("bad override key `{key}`")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| Error::config(format!("override `{key}`: `{p}` is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}
