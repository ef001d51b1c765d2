use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::frame::{CellTargets, Frame};
use super::model::{DetectorModel, HeadVars, PipelineConfig};
use super::pipeline::{cell_offset, fuse_mean_on_tape};
use crate::autodiff::{OptimState, OptimizerKind, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub optimizer: OptimizerKind,
    /// Cross-entropy weight of object cells relative to background cells.
    pub positive_weight: f32,
    /// Weight of the smooth-L1 box term.
    pub box_weight: f32,
    pub seed: u64,
}

impl Default for DetectorTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 8,
            learning_rate: 5e-3,
            optimizer: OptimizerKind::Adam,
            positive_weight: 4.0,
            box_weight: 1.0,
            seed: 0,
        }
    }
}

impl DetectorTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning rate must be positive"));
        }
        if !(self.positive_weight > 0.0) || !(self.box_weight >= 0.0) {
            return Err(Error::config("loss weights must be positive"));
        }
        Ok(())
    }
}

/// Cell cross-entropy plus box regression on object cells.
pub fn detection_loss(
    tape: &mut Tape,
    head: &HeadVars,
    targets: &CellTargets,
    config: &DetectorTrainConfig,
) -> Result<Var> {
    let weights: Vec<f32> = targets
        .positives()
        .iter()
        .map(|&p| if p { config.positive_weight } else { 1.0 })
        .collect();
    let ce = tape.weighted_cross_entropy(head.logits, &targets.labels, &weights)?;
    let reg = tape.smooth_l1(head.boxes, &targets.boxes, &targets.positives())?;
    let reg = tape.scale(reg, config.box_weight)?;
    tape.add(ce, reg)
}

/// Full benign pipeline for one frame on the tape: every agent is encoded,
/// shifted into the ego frame, mean-fused and decoded.
pub fn frame_loss_on_tape(
    tape: &mut Tape,
    model: &DetectorModel,
    vars: &[Var],
    frame: &Frame,
    config: &DetectorTrainConfig,
) -> Result<Var> {
    let pc: &PipelineConfig = &model.config;
    let ego = frame.ego().pose;
    let mut aligned = Vec::with_capacity(frame.agent_count());
    for view in &frame.views {
        let x = tape.constant(view.grid.clone());
        let f = model.encode_on_tape(tape, vars, x)?;
        let (dr, dc) = cell_offset(view.pose, ego, pc.feature_cell());
        aligned.push(if dr == 0 && dc == 0 { f } else { tape.shift2d(f, dr, dc)? });
    }
    let fused = fuse_mean_on_tape(tape, &aligned)?;
    let head = model.head_on_tape(tape, vars, fused)?;
    detection_loss(tape, &head, &frame.targets(pc), config)
}

pub fn train_detector(frames: &[Frame], pipeline: PipelineConfig, config: &DetectorTrainConfig) -> Result<DetectorModel> {
    Ok(train_detector_logged(frames, pipeline, config)?.0)
}

/// Trains from a fresh initialization and also returns the mean loss of
/// every epoch.
pub fn train_detector_logged(
    frames: &[Frame],
    pipeline: PipelineConfig,
    config: &DetectorTrainConfig,
) -> Result<(DetectorModel, Vec<f32>)> {
    config.validate()?;
    if frames.is_empty() {
        return Err(Error::config("detector training needs at least one frame"));
    }
    let mut model = DetectorModel::init(pipeline, config.seed)?;
    let mut opt = OptimState::new(config.optimizer, config.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5EED);
    let mut order: Vec<usize> = (0..frames.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0f64;
        for batch in order.chunks(config.batch_size) {
            let mut tape = Tape::new();
            let vars = model.params.bind(&mut tape, true);
            let losses = batch
                .iter()
                .map(|&i| frame_loss_on_tape(&mut tape, &model, &vars, &frames[i], config))
                .collect::<Result<Vec<_>>>()?;
            let stacked = tape.stack(&losses)?;
            let loss = tape.mean(stacked)?;
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(Error::Divergence(format!("detector loss became {value} in epoch {epoch}")));
            }
            total += value as f64 * batch.len() as f64;
            let mut grads = tape.backward(loss)?;
            let g: Vec<Tensor> = model.params.collect_grads(&mut grads, &vars)?;
            opt.step(model.params.tensors_mut(), &g)?;
            if !model.params.all_finite() {
                return Err(Error::Divergence(format!("non-finite detector parameters in epoch {epoch}")));
            }
        }
        history.push((total / frames.len() as f64) as f32);
    }
    Ok((model, history))
}
