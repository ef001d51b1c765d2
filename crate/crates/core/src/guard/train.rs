use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dcc::{centered_rows, centers_on_tape, dcc_loss, mixed_loss, DccParams, DenominatorMode, SelectorMode};
use super::model::{is_flagged, malicious_probability, residual_of, GuardArch, GuardModel};
use crate::autodiff::{OptimState, OptimizerKind, Tape, Tensor};
use crate::benchgen::SampleRecord;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuardConfig {
    /// Weight of the contrastive term.
    pub alpha: f32,
    pub tau: f32,
    pub denominator: DenominatorMode,
    pub selector: SelectorMode,
    /// Malicious-probability threshold for a positive verdict.
    pub threshold: f32,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub optimizer: OptimizerKind,
    pub arch: GuardArch,
}

impl Default for GuardConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            tau: 0.1,
            denominator: DenominatorMode::Standard,
            selector: SelectorMode::Text,
            threshold: 0.5,
            epochs: 50,
            batch_size: 10,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            arch: GuardArch::default(),
        }
    }
}

impl GuardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::config("tau must be positive"));
        }
        if !(self.alpha >= 0.0) {
            return Err(Error::config("alpha must be non-negative"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning rate must be positive"));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::config("threshold must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn dcc(&self) -> DccParams {
        DccParams { tau: self.tau, denominator: self.denominator, selector: self.selector }
    }
}

/// Per-epoch training means.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GuardHistory {
    pub loss: Vec<f32>,
    pub cross_entropy: Vec<f32>,
    pub dcc: Vec<f32>,
    /// Batches per epoch where the contrastive term was skipped.
    pub skipped_dcc_batches: Vec<usize>,
}

pub fn record_residual(r: &SampleRecord) -> Result<Tensor> {
    Ok(residual_of(&r.ego_feature, &r.collaborator_feature)?.data)
}

pub fn train_guard(records: &[SampleRecord], config: &GuardConfig, seed: u64) -> Result<GuardModel> {
    Ok(train_guard_logged(records, config, seed)?.0)
}

pub fn train_guard_logged(records: &[SampleRecord], config: &GuardConfig, seed: u64) -> Result<(GuardModel, GuardHistory)> {
    config.validate()?;
    let first = records.first().ok_or_else(|| Error::config("empty guard training set"))?;
    let malicious = records.iter().filter(|r| r.is_malicious()).count();
    if malicious == 0 || malicious == records.len() {
        return Err(Error::config("guard training data must contain both benign and malicious records"));
    }
    let shape = first.ego_feature.shape();
    let input = [shape[0], shape[1], shape[2]];
    let mut model = GuardModel::init(input, config.arch.clone(), seed)?;
    let residuals = records.iter().map(record_residual).collect::<Result<Vec<_>>>()?;
    let labels: Vec<bool> = records.iter().map(SampleRecord::is_malicious).collect();
    let mut opt = OptimState::new(config.optimizer, config.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6A4D);
    let mut order: Vec<usize> = (0..records.len()).collect();
    let dcc_params = config.dcc();
    let mut hist = GuardHistory::default();

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let (mut total, mut ce_sum, mut dcc_sum, mut skipped) = (0.0f64, 0.0f64, 0.0f64, 0usize);
        for batch in order.chunks(config.batch_size) {
            let mut tape = Tape::new();
            let vars = model.params.bind(&mut tape, true);
            let xs: Vec<_> = batch.iter().map(|&i| tape.constant(residuals[i].clone())).collect();
            let y: Vec<bool> = batch.iter().map(|&i| labels[i]).collect();
            let out = model.forward(&mut tape, &vars, &xs)?;
            let both = y.iter().any(|&l| l) && y.iter().any(|&l| !l);
            let dcc = if config.alpha > 0.0 && both && y.len() >= 2 {
                let centers = centers_on_tape(&mut tape, out.embeddings, &y)?;
                let rows = centered_rows(&mut tape, out.embeddings, &y, &centers)?;
                Some(dcc_loss(&mut tape, &rows, &y, &dcc_params)?)
            } else {
                skipped += 1;
                None
            };
            let loss = mixed_loss(&mut tape, out.logits, &y, dcc, config.alpha)?;
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(Error::Divergence(format!("guard loss became {value} in epoch {epoch}")));
            }
            let w = batch.len() as f64;
            total += value as f64 * w;
            if let Some(d) = dcc {
                let dv = tape.value(d).item() as f64;
                dcc_sum += dv * w;
                ce_sum += (value as f64 - config.alpha as f64 * dv) * w;
            } else {
                ce_sum += value as f64 * w;
            }
            let mut grads = tape.backward(loss)?;
            let g = model.params.collect_grads(&mut grads, &vars)?;
            opt.step(model.params.tensors_mut(), &g)?;
            if !model.params.all_finite() {
                return Err(Error::Divergence(format!("non-finite guard parameters in epoch {epoch}")));
            }
        }
        let n = records.len() as f64;
        hist.loss.push((total / n) as f32);
        hist.cross_entropy.push((ce_sum / n) as f32);
        hist.dcc.push((dcc_sum / n) as f32);
        hist.skipped_dcc_batches.push(skipped);
    }
    Ok((model, hist))
}

/// Model outputs for a set of records.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GuardScores {
    pub embeddings: Vec<Tensor>,
    pub logits: Vec<[f32; 2]>,
    pub labels: Vec<bool>,
}

impl GuardScores {
    pub fn probabilities(&self) -> Vec<f32> {
        self.logits.iter().map(|l| malicious_probability(l)).collect()
    }

    pub fn verdicts(&self, threshold: f32) -> Vec<bool> {
        self.logits.iter().map(|l| is_flagged(l, threshold)).collect()
    }
}

const SCORE_CHUNK: usize = 64;

/// Batched inference over records (no gradients).
pub fn score_records(model: &GuardModel, records: &[SampleRecord]) -> Result<GuardScores> {
    let mut out = GuardScores::default();
    let d = model.arch.embed_dim;
    for chunk in records.chunks(SCORE_CHUNK) {
        let mut tape = Tape::new();
        let vars = model.params.bind(&mut tape, false);
        let xs = chunk.iter().map(|r| Ok(tape.constant(record_residual(r)?))).collect::<Result<Vec<_>>>()?;
        let o = model.forward(&mut tape, &vars, &xs)?;
        let (v, l) = (tape.value(o.embeddings).data(), tape.value(o.logits).data());
        for (i, r) in chunk.iter().enumerate() {
            out.embeddings.push(Tensor::new(&[d], v[i * d..(i + 1) * d].to_vec())?);
            out.logits.push([l[2 * i], l[2 * i + 1]]);
            out.labels.push(r.is_malicious());
        }
    }
    Ok(out)
}
