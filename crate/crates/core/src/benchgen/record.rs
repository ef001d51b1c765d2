use crate::attacks::AttackKind;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Bytes of the fixed per-record header.
pub const RECORD_HEADER_BYTES: usize = 20;

/// One (ego, collaborator) feature pair with its ground-truth label.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleRecord {
    pub scene_id: u32,
    pub ego_id: u32,
    pub collaborator_id: u32,
    /// `None` for benign records.
    pub attack: Option<AttackKind>,
    /// Δ used for the attack; 0 when benign.
    pub budget: f32,
    pub ego_feature: Tensor,
    /// Post-transmit collaborator map, possibly perturbed.
    pub collaborator_feature: Tensor,
}

impl SampleRecord {
    pub fn is_malicious(&self) -> bool {
        self.attack.is_some()
    }

    pub fn label(&self) -> u8 {
        self.is_malicious() as u8
    }

    pub fn attack_code(&self) -> u8 {
        self.attack.map_or(0, AttackKind::code)
    }

    /// Checks label/attack/budget consistency and feature shapes.
    pub fn validate(&self, dims: [usize; 3]) -> Result<()> {
        if self.attack.is_none() && self.budget != 0.0 {
            return Err(Error::domain(format!("benign record with budget {}", self.budget)));
        }
        if !(self.budget >= 0.0 && self.budget.is_finite()) {
            return Err(Error::domain(format!("invalid budget {}", self.budget)));
        }
        for t in [&self.ego_feature, &self.collaborator_feature] {
            if t.shape() != dims {
                return Err(Error::shape(format!("feature {:?} in a {dims:?} dataset", t.shape())));
            }
        }
        Ok(())
    }

    pub fn encoded_len(dims: [usize; 3]) -> usize {
        RECORD_HEADER_BYTES + 2 * 4 * dims.iter().product::<usize>()
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.scene_id.to_le_bytes());
        out.extend_from_slice(&self.ego_id.to_le_bytes());
        out.extend_from_slice(&self.collaborator_id.to_le_bytes());
        out.push(self.label());
        out.push(self.attack_code());
        out.extend_from_slice(&0u16.to_le_bytes());
        out.extend_from_slice(&self.budget.to_le_bytes());
        for t in [&self.ego_feature, &self.collaborator_feature] {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }

    /// Decodes one record from exactly [`encoded_len`](Self::encoded_len) bytes.
    pub fn decode(bytes: &[u8], dims: [usize; 3], index: usize) -> Result<Self> {
        let bad = |msg: String| Error::Record { index, msg };
        if bytes.len() != Self::encoded_len(dims) {
            return Err(bad(format!("expected {} bytes, got {}", Self::encoded_len(dims), bytes.len())));
        }
        let u32_at = |o: usize| u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]);
        let (label, code) = (bytes[12], bytes[13]);
        let attack = match code {
            0 => None,
            c => Some(AttackKind::from_code(c).ok_or_else(|| bad(format!("unknown attack code {c}")))?),
        };
        if label > 1 || (label == 1) != attack.is_some() {
            return Err(bad(format!("label {label} inconsistent with attack code {code}")));
        }
        let budget = f32::from_bits(u32_at(16));
        let n: usize = dims.iter().product();
        let block = |start: usize| -> Result<Tensor> {
            let data = bytes[start..start + 4 * n]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            Tensor::new(&dims, data)
        };
        let rec = Self {
            scene_id: u32_at(0),
            ego_id: u32_at(4),
            collaborator_id: u32_at(8),
            attack,
            budget,
            ego_feature: block(RECORD_HEADER_BYTES)?,
            collaborator_feature: block(RECORD_HEADER_BYTES + 4 * n)?,
        };
        rec.validate(dims).map_err(|e| bad(e.to_string()))?;
        Ok(rec)
    }
}
