use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{DetectorModel, PipelineConfig, BACKGROUND_CLASS, OBJECT_CLASS};
use super::pipeline::{transmit, FeatureMap};
use super::scene::{generate_scene, BBox, Scene, SceneConfig};
use super::view::{observe, AgentView, Pose};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Dense head targets: a class per cell and box targets (meaningful only on
/// object cells).
#[derive(Clone, Debug, PartialEq)]
pub struct CellTargets {
    pub labels: Vec<usize>,
    pub boxes: Tensor,
}

impl CellTargets {
    pub fn positives(&self) -> Vec<bool> {
        self.labels.iter().map(|&l| l == OBJECT_CLASS).collect()
    }
}

/// A scene observed by several agents; agent 0 is the ego vehicle.
#[derive(Clone, Debug)]
pub struct Frame {
    pub scene: Scene,
    pub views: Vec<AgentView>,
}

/// Mixes a base seed with a stream index (splitmix64 finalizer), so nearby
/// indices give unrelated streams.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrameConfig {
    pub scene: SceneConfig,
    pub pipeline: PipelineConfig,
}

impl Default for FrameConfig {
    fn default() -> Self {
        Self { scene: SceneConfig::default(), pipeline: PipelineConfig::default() }
    }
}

impl Frame {
    pub fn ego(&self) -> &AgentView {
        &self.views[0]
    }

    pub fn agent_count(&self) -> usize {
        self.views.len()
    }

    /// Objects visible to at least one agent whose center lies on the ego map.
    pub fn ground_truth(&self, config: &PipelineConfig) -> Vec<BBox> {
        let ego = self.ego().pose;
        self.scene
            .objects
            .iter()
            .filter(|o| config.feature_cell_of(ego, o.bbox.cx, o.bbox.cy).is_some())
            .filter(|o| self.views.iter().any(|v| config.view.sees(v.pose, o)))
            .map(|o| o.bbox)
            .collect()
    }

    /// Per-cell training targets on the ego feature grid.
    pub fn targets(&self, config: &PipelineConfig) -> CellTargets {
        let n = config.feature_size();
        let ego = self.ego().pose;
        let mut labels = vec![BACKGROUND_CLASS; n * n];
        let mut boxes = vec![0.0f32; n * n * 4];
        for b in self.ground_truth(config) {
            let Some((r, c)) = config.feature_cell_of(ego, b.cx, b.cy) else { continue };
            let cell = r * n + c;
            if labels[cell] == OBJECT_CLASS {
                continue;
            }
            labels[cell] = OBJECT_CLASS;
            boxes[4 * cell..4 * cell + 4].copy_from_slice(&config.encode_box(ego, r, c, &b));
        }
        CellTargets { labels, boxes: Tensor::from_parts(vec![n * n, 4], boxes) }
    }

    /// Encodes every agent and aligns it to the ego frame. Index 0 is the ego.
    pub fn encode_aligned(&self, model: &DetectorModel) -> Result<Vec<FeatureMap>> {
        let ego = self.ego().pose;
        let f = model.config.feature_cell();
        self.views
            .iter()
            .map(|v| Ok(transmit(&model.encode(v)?, ego, f)?.feature))
            .collect()
    }
}

/// Ego at the world center, collaborators on random feature-cell lattice
/// points inside the world. Poses are lattice-aligned so alignment is an
/// exact integer shift.
pub fn sample_poses(config: &FrameConfig, agents: usize, rng: &mut ChaCha8Rng) -> Vec<Pose> {
    let f = config.pipeline.feature_cell();
    let snap = |v: f32| (v / f).round() * f;
    let (w, h) = (config.scene.world_w, config.scene.world_h);
    let mut poses = vec![Pose::new(snap(w / 2.0), snap(h / 2.0))];
    let (nx, ny) = ((w / f).floor() as i64, (h / f).floor() as i64);
    for _ in 1..agents {
        let cx = rng.random_range(1..nx.max(2)) as f32 * f;
        let cy = rng.random_range(1..ny.max(2)) as f32 * f;
        poses.push(Pose::new(cx, cy));
    }
    poses
}

/// Synthesizes a scene and observes it with `agents` agents.
pub fn generate_frame(config: &FrameConfig, agents: usize, seed: u64) -> Result<Frame> {
    if agents == 0 {
        return Err(Error::config("a frame needs at least one agent"));
    }
    let scene = generate_scene(&config.scene, derive_seed(seed, 0))?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1));
    let poses = sample_poses(config, agents, &mut rng);
    let views = poses
        .iter()
        .enumerate()
        .map(|(i, &pose)| observe(&scene, i as u32, pose, &config.pipeline.view, derive_seed(seed, 100 + i as u64)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Frame { scene, views })
}
