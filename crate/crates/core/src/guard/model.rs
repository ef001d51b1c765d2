use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::checkpoint::Checkpoint;
use crate::cpsim::FeatureMap;
use crate::error::{Error, Result};
use crate::nn::{conv_layer, dense_layer, Init, Params};

/// ego − collaborator, elementwise.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualFeature {
    pub data: Tensor,
}

pub fn residual(ego: &FeatureMap, collaborator: &FeatureMap) -> Result<ResidualFeature> {
    residual_of(&ego.data, &collaborator.data)
}

pub fn residual_of(ego: &Tensor, collaborator: &Tensor) -> Result<ResidualFeature> {
    Ok(ResidualFeature { data: ego.sub(collaborator)? })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuardArch {
    /// Output channels of the three stride-2 conv blocks.
    pub conv_widths: [usize; 3],
    /// Embedding dimension D.
    pub embed_dim: usize,
}

impl Default for GuardArch {
    fn default() -> Self {
        Self { conv_widths: [16, 32, 32], embed_dim: 64 }
    }
}

/// Three 4×4 stride-2 conv blocks, a fully connected embedding layer and a
/// linear two-logit head (benign, malicious).
#[derive(Clone, Debug, PartialEq)]
pub struct GuardModel {
    /// Input (C, H, W).
    pub input: [usize; 3],
    pub arch: GuardArch,
    pub params: Params,
}

/// Batched forward outputs: N×D embeddings and N×2 logits.
#[derive(Clone, Copy, Debug)]
pub struct GuardVars {
    pub embeddings: Var,
    pub logits: Var,
}

impl GuardModel {
    pub fn init(input: [usize; 3], arch: GuardArch, seed: u64) -> Result<Self> {
        let [c, h, w] = input;
        if input.contains(&0) || h % 8 != 0 || w % 8 != 0 {
            return Err(Error::config(format!("guard input {input:?} needs H, W divisible by 8")));
        }
        if arch.conv_widths.contains(&0) || arch.embed_dim == 0 {
            return Err(Error::config("guard widths must be positive"));
        }
        let [w1, w2, w3] = arch.conv_widths;
        let flat = w3 * (h / 8) * (w / 8);
        let d = arch.embed_dim;
        let mut init = Init::new(seed);
        let params = Params::new(vec![
            ("conv1.weight".into(), init.conv(w1, c, 4)),
            ("conv1.bias".into(), Tensor::zeros(&[w1])),
            ("conv2.weight".into(), init.conv(w2, w1, 4)),
            ("conv2.bias".into(), Tensor::zeros(&[w2])),
            ("conv3.weight".into(), init.conv(w3, w2, 4)),
            ("conv3.bias".into(), Tensor::zeros(&[w3])),
            ("embed.weight".into(), init.dense(flat, d)),
            ("embed.bias".into(), Tensor::zeros(&[d])),
            ("head.weight".into(), init.dense(d, 2)),
            ("head.bias".into(), Tensor::zeros(&[2])),
        ]);
        Ok(Self { input, arch, params })
    }

    fn flat_dim(&self) -> usize {
        self.arch.conv_widths[2] * (self.input[1] / 8) * (self.input[2] / 8)
    }

    pub fn forward(&self, tape: &mut Tape, vars: &[Var], inputs: &[Var]) -> Result<GuardVars> {
        if inputs.is_empty() {
            return Err(Error::shape("guard forward on an empty batch"));
        }
        let flat = self.flat_dim();
        let mut rows = Vec::with_capacity(inputs.len());
        for &x in inputs {
            if tape.value(x).shape() != self.input {
                return Err(Error::shape(format!("residual {:?}, guard expects {:?}", tape.value(x).shape(), self.input)));
            }
            let h = conv_layer(tape, x, vars[0], vars[1], 2, 1, true)?;
            let h = conv_layer(tape, h, vars[2], vars[3], 2, 1, true)?;
            let h = conv_layer(tape, h, vars[4], vars[5], 2, 1, true)?;
            rows.push(tape.reshape(h, &[1, flat])?);
        }
        let batch = if rows.len() == 1 { rows[0] } else { tape.stack(&rows)? };
        let batch = tape.reshape(batch, &[inputs.len(), flat])?;
        let embeddings = dense_layer(tape, batch, vars[6], vars[7], true)?;
        let logits = dense_layer(tape, embeddings, vars[8], vars[9], false)?;
        Ok(GuardVars { embeddings, logits })
    }

    /// Embedding V (length D) and logits (length 2) for one residual.
    pub fn embed_and_classify(&self, res: &ResidualFeature) -> Result<(Tensor, Tensor)> {
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape, false);
        let x = tape.constant(res.data.clone());
        let out = self.forward(&mut tape, &vars, &[x])?;
        let v = tape.value(out.embeddings).reshaped(&[self.arch.embed_dim])?;
        let l = tape.value(out.logits).reshaped(&[2])?;
        Ok((v, l))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut config = BTreeMap::new();
        let [c, h, w] = self.input;
        let [w1, w2, w3] = self.arch.conv_widths;
        for (k, v) in [("channels", c), ("height", h), ("width", w), ("conv1", w1), ("conv2", w2), ("conv3", w3), ("embed_dim", self.arch.embed_dim)] {
            config.insert(k.to_string(), v.to_string());
        }
        Checkpoint { kind: "guard".into(), config, params: self.params.clone() }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<Self> {
        ckpt.expect_kind("guard", path)?;
        let get = |k: &str| ckpt.config_value::<usize>(k, path);
        let input = [get("channels")?, get("height")?, get("width")?];
        let arch = GuardArch { conv_widths: [get("conv1")?, get("conv2")?, get("conv3")?], embed_dim: get("embed_dim")? };
        let reference = Self::init(input, arch, 0)?;
        ckpt.params.check_layout(&reference.params)?;
        Ok(Self { params: ckpt.params.clone(), ..reference })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?, path)
    }
}

/// True when the malicious softmax probability exceeds `threshold`. The
/// comparison is done in logit space so thresholds 0 and 1 behave exactly.
pub fn is_flagged(logits: &[f32], threshold: f32) -> bool {
    let margin = logits[1] - logits[0];
    if threshold <= 0.0 {
        return true;
    }
    if threshold >= 1.0 {
        return false;
    }
    margin > (threshold / (1.0 - threshold)).ln()
}

pub fn malicious_probability(logits: &[f32]) -> f32 {
    1.0 / (1.0 + (logits[0] - logits[1]).exp())
}
