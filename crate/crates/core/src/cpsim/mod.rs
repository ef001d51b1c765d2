//! Collaborative-perception simulator: scenes, agent views, a small
//! convolutional detector and the encode → transmit → fuse → decode path.

mod frame;
mod model;
mod pipeline;
mod scene;
mod train;
mod view;

pub use frame::{derive_seed, generate_frame, sample_poses, CellTargets, Frame, FrameConfig};
pub use model::{DetectorModel, HeadVars, PipelineConfig, BACKGROUND_CLASS, OBJECT_CLASS};
pub use pipeline::{
    cell_offset, decode, detections, fuse_mean, fuse_mean_on_tape, shift_cells, suppress, transmit, FeatureMap, Perception,
    Proposal, Transmitted,
};
pub use scene::{generate_scene, BBox, Scene, SceneConfig, SceneObject};
pub use train::{detection_loss, frame_loss_on_tape, train_detector, train_detector_logged, DetectorTrainConfig};
pub use view::{observe, AgentView, Pose, ViewConfig};
