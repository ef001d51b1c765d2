use serde::{Deserialize, Serialize};

use super::metrics::{classification_metrics, ClassificationMetrics};
use crate::attacks::AttackKind;
use crate::benchgen::{Dataset, SampleRecord};
use crate::error::{Error, Result};
use crate::guard::{score_records, train_guard, GuardConfig, GuardModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeldOutResult {
    pub held_out: AttackKind,
    /// Trained without `held_out`, tested on benign + `held_out` records.
    pub metrics: ClassificationMetrics,
    /// The all-types model on the same test records.
    pub upper_bound: ClassificationMetrics,
    pub train_records: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeaveOneOutReport {
    pub folds: Vec<HeldOutResult>,
    /// The all-types model on the whole test split.
    pub upper_bound: ClassificationMetrics,
}

/// Records of `records` that are benign or carry `kind`.
pub fn benign_or(records: &[SampleRecord], kind: AttackKind) -> Vec<SampleRecord> {
    records.iter().filter(|r| r.attack.map_or(true, |k| k == kind)).cloned().collect()
}

/// Records of `records` that do not carry `kind`.
pub fn without(records: &[SampleRecord], kind: AttackKind) -> Vec<SampleRecord> {
    records.iter().filter(|r| r.attack != Some(kind)).cloned().collect()
}

pub fn evaluate_guard(model: &GuardModel, records: &[SampleRecord], threshold: f32) -> Result<ClassificationMetrics> {
    let s = score_records(model, records)?;
    classification_metrics(&s.verdicts(threshold), &s.labels)
}

/// One fold per attack kind plus the all-types upper bound. `kinds`
/// selects the folds; every kind must occur in the training split.
pub fn leave_one_out(dataset: &Dataset, config: &GuardConfig, kinds: &[AttackKind], seed: u64) -> Result<LeaveOneOutReport> {
    for &k in AttackKind::ALL.iter() {
        if !dataset.train().iter().any(|r| r.attack == Some(k)) {
            return Err(Error::config(format!("attack type {k} is missing from the training split")));
        }
    }
    let full = train_guard(dataset.train(), config, seed)?;
    let upper_bound = evaluate_guard(&full, dataset.test(), config.threshold)?;
    let mut folds = Vec::with_capacity(kinds.len());
    for &kind in kinds {
        let train = without(dataset.train(), kind);
        let model = train_guard(&train, config, seed)?;
        let test = benign_or(dataset.test(), kind);
        folds.push(HeldOutResult {
            held_out: kind,
            metrics: evaluate_guard(&model, &test, config.threshold)?,
            upper_bound: evaluate_guard(&full, &test, config.threshold)?,
            train_records: train.len(),
        });
    }
    Ok(LeaveOneOutReport { folds, upper_bound })
}
