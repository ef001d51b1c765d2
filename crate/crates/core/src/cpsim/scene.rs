use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box in world units, described by its center and extent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub cx: f32,
    pub cy: f32,
    pub w: f32,
    pub h: f32,
}

impl BBox {
    pub fn new(cx: f32, cy: f32, w: f32, h: f32) -> Self {
        Self { cx, cy, w, h }
    }

    pub fn x0(&self) -> f32 {
        self.cx - self.w / 2.0
    }
    pub fn x1(&self) -> f32 {
        self.cx + self.w / 2.0
    }
    pub fn y0(&self) -> f32 {
        self.cy - self.h / 2.0
    }
    pub fn y1(&self) -> f32 {
        self.cy + self.h / 2.0
    }

    pub fn area(&self) -> f32 {
        self.w.max(0.0) * self.h.max(0.0)
    }

    pub fn intersection(&self, other: &BBox) -> f32 {
        let ix = (self.x1().min(other.x1()) - self.x0().max(other.x0())).max(0.0);
        let iy = (self.y1().min(other.y1()) - self.y0().max(other.y0())).max(0.0);
        ix * iy
    }

    pub fn iou(&self, other: &BBox) -> f32 {
        let inter = self.intersection(other);
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    /// True when the interiors overlap (touching edges do not count).
    pub fn overlaps(&self, other: &BBox) -> bool {
        self.x0() < other.x1() && other.x0() < self.x1() && self.y0() < other.y1() && other.y0() < self.y1()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub bbox: BBox,
    pub class_id: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub world_w: f32,
    pub world_h: f32,
    pub min_objects: usize,
    pub max_objects: usize,
    pub min_box: f32,
    pub max_box: f32,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self { world_w: 64.0, world_h: 64.0, min_objects: 3, max_objects: 8, min_box: 4.0, max_box: 8.0 }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.world_w > 0.0 && self.world_h > 0.0) {
            return Err(Error::config("world size must be positive"));
        }
        if self.min_objects > self.max_objects {
            return Err(Error::config("min_objects exceeds max_objects"));
        }
        if !(self.min_box > 0.0 && self.min_box <= self.max_box) {
            return Err(Error::config("box size range must be positive and ordered"));
        }
        if self.max_box > self.world_w.min(self.world_h) {
            return Err(Error::config("boxes larger than the world"));
        }
        Ok(())
    }
}

/// Ground-truth toy driving scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub world_w: f32,
    pub world_h: f32,
    pub objects: Vec<SceneObject>,
    pub seed: u64,
}

const PLACEMENT_TRIES: usize = 1000;

/// Rejection-samples pairwise non-overlapping boxes inside the world.
pub fn generate_scene(config: &SceneConfig, seed: u64) -> Result<Scene> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = rng.random_range(config.min_objects..=config.max_objects);
    let mut objects: Vec<SceneObject> = Vec::with_capacity(count);
    for n in 0..count {
        let mut placed = false;
        for _ in 0..PLACEMENT_TRIES {
            let w = rng.random_range(config.min_box..=config.max_box);
            let h = rng.random_range(config.min_box..=config.max_box);
            let cx = rng.random_range(w / 2.0..=config.world_w - w / 2.0);
            let cy = rng.random_range(h / 2.0..=config.world_h - h / 2.0);
            let bbox = BBox::new(cx, cy, w, h);
            if objects.iter().all(|o| !o.bbox.overlaps(&bbox)) {
                objects.push(SceneObject { bbox, class_id: 0 });
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Placement(format!(
                "could not place object {} of {count} after {PLACEMENT_TRIES} tries",
                n + 1
            )));
        }
    }
    Ok(Scene { world_w: config.world_w, world_h: config.world_h, objects, seed })
}
