use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::pipeline::{FeatureMap, Proposal};
use super::scene::BBox;
use super::view::{AgentView, Pose, ViewConfig};
use crate::autodiff::{Tape, Tensor, Var};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::nn::{conv_layer, Init, Params};

/// Index of the object class in the two-class head.
pub const OBJECT_CLASS: usize = 0;
/// Index of the background class in the two-class head.
pub const BACKGROUND_CLASS: usize = 1;

const DOWNSAMPLE: usize = 2;
const LOG_SIZE_LIMIT: f32 = 3.0;

/// Shapes shared by every stage of the perception pipeline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub view: ViewConfig,
    /// Feature channels C.
    pub channels: usize,
    /// Hidden width of the decoder.
    pub decoder_width: usize,
    /// Object-score threshold applied before metrics.
    pub score_threshold: f32,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self { view: ViewConfig::default(), channels: 16, decoder_width: 32, score_threshold: 0.5 }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.view.validate()?;
        if self.view.grid < 2 * DOWNSAMPLE {
            return Err(Error::config("grid too small for the encoder"));
        }
        if self.channels == 0 || self.decoder_width == 0 {
            return Err(Error::config("channel counts must be positive"));
        }
        if !(0.0..=1.0).contains(&self.score_threshold) {
            return Err(Error::config("score threshold must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Feature-map height/width (G / downsample).
    pub fn feature_size(&self) -> usize {
        self.view.grid / DOWNSAMPLE
    }

    /// World units per feature cell (the per-cell anchor size).
    pub fn feature_cell(&self) -> f32 {
        self.view.cell_size * DOWNSAMPLE as f32
    }

    pub fn feature_shape(&self) -> [usize; 3] {
        let s = self.feature_size();
        [self.channels, s, s]
    }

    /// World-space center of feature cell (row, col) in the frame of `pose`.
    pub fn feature_cell_center(&self, pose: Pose, row: usize, col: usize) -> (f32, f32) {
        let (x0, y0) = self.view.origin(pose);
        let f = self.feature_cell();
        (x0 + (col as f32 + 0.5) * f, y0 + (row as f32 + 0.5) * f)
    }

    /// Feature cell containing world point (x, y) in the frame of `pose`.
    pub fn feature_cell_of(&self, pose: Pose, x: f32, y: f32) -> Option<(usize, usize)> {
        let (x0, y0) = self.view.origin(pose);
        let f = self.feature_cell();
        let (c, r) = (((x - x0) / f).floor(), ((y - y0) / f).floor());
        let n = self.feature_size() as f32;
        (c >= 0.0 && r >= 0.0 && c < n && r < n).then_some((r as usize, c as usize))
    }

    /// Regression target for an object whose center falls in (row, col):
    /// center offsets in cell units and log-sizes relative to the cell.
    pub fn encode_box(&self, pose: Pose, row: usize, col: usize, bbox: &BBox) -> [f32; 4] {
        let (cx, cy) = self.feature_cell_center(pose, row, col);
        let f = self.feature_cell();
        [(bbox.cx - cx) / f, (bbox.cy - cy) / f, (bbox.w / f).ln(), (bbox.h / f).ln()]
    }

    pub fn decode_box(&self, pose: Pose, row: usize, col: usize, reg: &[f32]) -> BBox {
        let (cx, cy) = self.feature_cell_center(pose, row, col);
        let f = self.feature_cell();
        let size = |v: f32| f * v.clamp(-LOG_SIZE_LIMIT, LOG_SIZE_LIMIT).exp();
        BBox::new(cx + reg[0].clamp(-2.0, 2.0) * f, cy + reg[1].clamp(-2.0, 2.0) * f, size(reg[2]), size(reg[3]))
    }
}

/// Convolutional encoder + decoder + per-cell head.
///
/// Encoder: 3×3 conv → relu → 4×4 stride-2 conv → relu, giving C×G/2×G/2.
/// Decoder: two 3×3 conv+relu layers and a 1×1 head producing, per cell,
/// two class logits (object, background) and four box-regression values.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectorModel {
    pub config: PipelineConfig,
    pub params: Params,
}

/// Number of leading parameters that belong to the encoder.
const ENCODER_PARAMS: usize = 4;

/// Differentiable head outputs for all H·W cells, in row-major cell order.
#[derive(Clone, Copy, Debug)]
pub struct HeadVars {
    pub logits: Var,
    pub probs: Var,
    pub boxes: Var,
}

impl DetectorModel {
    pub fn init(config: PipelineConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let c = config.channels;
        let d = config.decoder_width;
        let mut init = Init::new(seed);
        let params = Params::new(vec![
            ("enc1.weight".into(), init.conv(c, 1, 3)),
            ("enc1.bias".into(), Tensor::zeros(&[c])),
            ("enc2.weight".into(), init.conv(c, c, 4)),
            ("enc2.bias".into(), Tensor::zeros(&[c])),
            ("dec1.weight".into(), init.conv(d, c, 3)),
            ("dec1.bias".into(), Tensor::zeros(&[d])),
            ("dec2.weight".into(), init.conv(c, d, 3)),
            ("dec2.bias".into(), Tensor::zeros(&[c])),
            ("head.weight".into(), init.conv(6, c, 1)),
            ("head.bias".into(), Tensor::zeros(&[6])),
        ]);
        Ok(Self { config, params })
    }

    /// Occupancy (1×G×G) → features (C×H×W). `vars` come from `params.bind`.
    pub fn encode_on_tape(&self, tape: &mut Tape, vars: &[Var], occupancy: Var) -> Result<Var> {
        let g = self.config.view.grid;
        if tape.value(occupancy).shape() != [1, g, g] {
            return Err(Error::shape(format!("occupancy {:?} for grid {g}", tape.value(occupancy).shape())));
        }
        let h = conv_layer(tape, occupancy, vars[0], vars[1], 1, 1, true)?;
        conv_layer(tape, h, vars[2], vars[3], DOWNSAMPLE, 1, true)
    }

    /// Fused features (C×H×W) → per-cell probabilities and box regressions.
    pub fn head_on_tape(&self, tape: &mut Tape, vars: &[Var], fused: Var) -> Result<HeadVars> {
        let shape = self.config.feature_shape();
        if tape.value(fused).shape() != shape {
            return Err(Error::shape(format!("fused feature {:?}, expected {shape:?}", tape.value(fused).shape())));
        }
        let v = &vars[ENCODER_PARAMS..];
        let h = conv_layer(tape, fused, v[0], v[1], 1, 1, true)?;
        let h = conv_layer(tape, h, v[2], v[3], 1, 1, true)?;
        let out = conv_layer(tape, h, v[4], v[5], 1, 0, false)?;
        let cells = shape[1] * shape[2];
        let flat = tape.reshape(out, &[6, cells])?;
        let rows = tape.transpose(flat)?;
        let logits = tape.slice_cols(rows, 0, 2)?;
        let boxes = tape.slice_cols(rows, 2, 6)?;
        let probs = tape.softmax_rows(logits)?;
        Ok(HeadVars { logits, probs, boxes })
    }

    pub fn encode(&self, view: &AgentView) -> Result<FeatureMap> {
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape, false);
        let x = tape.constant(view.grid.clone());
        let f = self.encode_on_tape(&mut tape, &vars, x)?;
        Ok(FeatureMap { data: tape.value(f).clone(), owner: view.agent_id, pose: view.pose })
    }

    /// Dense proposals (one per cell, before thresholding).
    pub fn decode(&self, fused: &FeatureMap) -> Result<Vec<Proposal>> {
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape, false);
        let x = tape.constant(fused.data.clone());
        let head = self.head_on_tape(&mut tape, &vars, x)?;
        Ok(self.proposals_from(tape.value(head.probs), tape.value(head.boxes), fused.pose))
    }

    pub fn proposals_from(&self, probs: &Tensor, boxes: &Tensor, pose: Pose) -> Vec<Proposal> {
        let n = self.config.feature_size();
        let p = probs.data();
        let b = boxes.data();
        (0..n * n)
            .map(|cell| {
                let scores = [p[2 * cell], p[2 * cell + 1]];
                Proposal {
                    cell,
                    scores,
                    bbox: self.config.decode_box(pose, cell / n, cell % n, &b[4 * cell..4 * cell + 4]),
                    confidence: scores[0].max(scores[1]),
                }
            })
            .collect()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let v = &self.config.view;
        let mut config = BTreeMap::new();
        for (k, val) in [
            ("grid", v.grid.to_string()),
            ("cell_size", v.cell_size.to_string()),
            ("fov_radius", v.fov_radius.to_string()),
            ("noise_sigma", v.noise_sigma.to_string()),
            ("channels", self.config.channels.to_string()),
            ("decoder_width", self.config.decoder_width.to_string()),
            ("score_threshold", self.config.score_threshold.to_string()),
        ] {
            config.insert(k.to_string(), val);
        }
        Checkpoint { kind: "detector".into(), config, params: self.params.clone() }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<Self> {
        ckpt.expect_kind("detector", path)?;
        let config = PipelineConfig {
            view: ViewConfig {
                grid: ckpt.config_value("grid", path)?,
                cell_size: ckpt.config_value("cell_size", path)?,
                fov_radius: ckpt.config_value("fov_radius", path)?,
                noise_sigma: ckpt.config_value("noise_sigma", path)?,
            },
            channels: ckpt.config_value("channels", path)?,
            decoder_width: ckpt.config_value("decoder_width", path)?,
            score_threshold: ckpt.config_value("score_threshold", path)?,
        };
        let reference = Self::init(config, 0)?;
        ckpt.params.check_layout(&reference.params)?;
        Ok(Self { config: reference.config, params: ckpt.params.clone() })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?, path)
    }
}
