use crate::cpsim::{FeatureMap, Perception, Proposal};
use crate::error::Result;

use super::model::{is_flagged, malicious_probability, residual, GuardModel};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Verdict {
    pub collaborator: u32,
    pub malicious_probability: f32,
    pub malicious: bool,
}

/// One classifier pass per collaborator on its residual against the ego map.
pub fn detect(ego: &FeatureMap, collaborators: &[FeatureMap], model: &GuardModel, threshold: f32) -> Result<Vec<Verdict>> {
    collaborators
        .iter()
        .map(|c| {
            let (_, logits) = model.embed_and_classify(&residual(ego, c)?)?;
            let l = logits.data();
            Ok(Verdict {
                collaborator: c.owner,
                malicious_probability: malicious_probability(l),
                malicious: is_flagged(l, threshold),
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct DefenseOutput {
    pub proposals: Vec<Proposal>,
    pub verdicts: Vec<Verdict>,
    /// Collaborators that entered the fusion.
    pub kept: Vec<u32>,
}

/// Detects, drops flagged collaborators and runs one fuse→decode pass. The
/// ego map is always kept; with everyone flagged this is ego-only decoding.
pub fn defend(
    ego: &FeatureMap,
    collaborators: &[FeatureMap],
    model: &GuardModel,
    perception: &Perception,
    threshold: f32,
) -> Result<DefenseOutput> {
    let verdicts = detect(ego, collaborators, model, threshold)?;
    let kept_maps: Vec<FeatureMap> =
        collaborators.iter().zip(&verdicts).filter(|(_, v)| !v.malicious).map(|(c, _)| c.clone()).collect();
    let proposals = perception.fuse_decode(ego, &kept_maps)?;
    Ok(DefenseOutput { proposals, verdicts, kept: kept_maps.iter().map(|m| m.owner).collect() })
}
