use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::scene::{BBox, Scene, SceneObject};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Agent position in world units. Rotation is fixed to zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct Pose {
    pub x: f32,
    pub y: f32,
}

impl Pose {
    pub fn new(x: f32, y: f32) -> Self {
        Self { x, y }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ViewConfig {
    /// Grid resolution G (power of two).
    pub grid: usize,
    /// World units per grid cell.
    pub cell_size: f32,
    pub fov_radius: f32,
    pub noise_sigma: f32,
}

impl Default for ViewConfig {
    fn default() -> Self {
        Self { grid: 32, cell_size: 2.0, fov_radius: 20.0, noise_sigma: 0.05 }
    }
}

impl ViewConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.grid.is_power_of_two() || self.grid < 2 {
            return Err(Error::config(format!("grid resolution {} is not a power of two", self.grid)));
        }
        if !(self.cell_size > 0.0 && self.fov_radius > 0.0 && self.noise_sigma >= 0.0) {
            return Err(Error::config("cell size and FoV radius must be positive, noise non-negative"));
        }
        Ok(())
    }

    /// World-unit extent covered by one agent's grid.
    pub fn extent(&self) -> f32 {
        self.grid as f32 * self.cell_size
    }

    /// World coordinates of the grid's top-left corner for an agent at `pose`.
    pub fn origin(&self, pose: Pose) -> (f32, f32) {
        let half = self.extent() / 2.0;
        (pose.x - half, pose.y - half)
    }

    /// Axis-aligned world box of cell (row, col).
    pub fn cell_box(&self, pose: Pose, row: usize, col: usize) -> BBox {
        let (x0, y0) = self.origin(pose);
        let cs = self.cell_size;
        BBox::new(x0 + (col as f32 + 0.5) * cs, y0 + (row as f32 + 0.5) * cs, cs, cs)
    }

    pub fn in_fov(&self, pose: Pose, cell: &BBox) -> bool {
        let (dx, dy) = (cell.cx - pose.x, cell.cy - pose.y);
        dx * dx + dy * dy <= self.fov_radius * self.fov_radius
    }

    /// Noise-free visibility: some cell covering the object lies inside the FoV.
    pub fn sees(&self, pose: Pose, object: &SceneObject) -> bool {
        let (x0, y0) = self.origin(pose);
        let cs = self.cell_size;
        let g = self.grid as isize;
        let c0 = ((object.bbox.x0() - x0) / cs).floor() as isize;
        let c1 = ((object.bbox.x1() - x0) / cs).ceil() as isize;
        let r0 = ((object.bbox.y0() - y0) / cs).floor() as isize;
        let r1 = ((object.bbox.y1() - y0) / cs).ceil() as isize;
        for r in r0.max(0)..r1.min(g) {
            for c in c0.max(0)..c1.min(g) {
                let cell = self.cell_box(pose, r as usize, c as usize);
                if cell.overlaps(&object.bbox) && self.in_fov(pose, &cell) {
                    return true;
                }
            }
        }
        false
    }
}

/// One agent's noisy occupancy observation in its own local frame.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentView {
    pub agent_id: u32,
    pub pose: Pose,
    pub fov_radius: f32,
    /// 1×G×G occupancy in `[0, 1]`.
    pub grid: Tensor,
}

/// Rasterizes `scene` around `pose`: a cell is occupied when it intersects an
/// object and its center lies within the FoV radius. Gaussian noise is added
/// inside the FoV only, then clamped to `[0, 1]`.
pub fn observe(scene: &Scene, agent_id: u32, pose: Pose, config: &ViewConfig, agent_seed: u64) -> Result<AgentView> {
    config.validate()?;
    let g = config.grid;
    let mut data = vec![0.0f32; g * g];
    let mut in_fov = vec![false; g * g];
    for r in 0..g {
        for c in 0..g {
            let cell = config.cell_box(pose, r, c);
            if !config.in_fov(pose, &cell) {
                continue;
            }
            in_fov[r * g + c] = true;
            if scene.objects.iter().any(|o| o.bbox.overlaps(&cell)) {
                data[r * g + c] = 1.0;
            }
        }
    }
    if config.noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(agent_seed);
        let normal = Normal::new(0.0f32, config.noise_sigma).map_err(|e| Error::config(e.to_string()))?;
        for (v, inside) in data.iter_mut().zip(&in_fov) {
            if *inside {
                *v = (*v + normal.sample(&mut rng)).clamp(0.0, 1.0);
            }
        }
    }
    Ok(AgentView { agent_id, pose, fov_radius: config.fov_radius, grid: Tensor::new(&[1, g, g], data)? })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cpsim::scene::SceneObject;

    fn scene_with(boxes: &[BBox]) -> Scene {
        Scene {
            world_w: 64.0,
            world_h: 64.0,
            objects: boxes.iter().map(|&bbox| SceneObject { bbox, class_id: 0 }).collect(),
            seed: 0,
        }
    }

    #[test]
    fn object_outside_fov_is_invisible() {
        let cfg = ViewConfig { noise_sigma: 0.0, fov_radius: 10.0, ..Default::default() };
        let s = scene_with(&[BBox::new(60.0, 60.0, 4.0, 4.0)]);
        let v = observe(&s, 0, Pose::new(10.0, 10.0), &cfg, 0).unwrap();
        assert!(v.grid.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn single_cell_box_marks_one_cell() {
        let cfg = ViewConfig { noise_sigma: 0.0, ..Default::default() };
        // pose (32,32): grid origin (0,0), cell (5,7) spans x∈[14,16), y∈[10,12)
        let s = scene_with(&[BBox::new(15.0, 11.0, 2.0, 2.0)]);
        let v = observe(&s, 0, Pose::new(32.0, 32.0), &ViewConfig { fov_radius: 40.0, ..cfg }, 0).unwrap();
        let ones: Vec<usize> = v.grid.data().iter().enumerate().filter(|(_, x)| **x == 1.0).map(|(i, _)| i).collect();
        assert_eq!(ones, vec![5 * 32 + 7]);
        assert_eq!(v.grid.data().iter().filter(|x| **x != 0.0).count(), 1);
    }

    #[test]
    fn cells_outside_fov_stay_zero_under_noise() {
        let cfg = ViewConfig { noise_sigma: 0.3, ..Default::default() };
        let s = scene_with(&[]);
        let pose = Pose::new(20.0, 44.0);
        let v = observe(&s, 0, pose, &cfg, 9).unwrap();
        for r in 0..32 {
            for c in 0..32 {
                let val = v.grid.data()[r * 32 + c];
                assert!((0.0..=1.0).contains(&val));
                if !cfg.in_fov(pose, &cfg.cell_box(pose, r, c)) {
                    assert_eq!(val, 0.0);
                }
            }
        }
        assert!(v.grid.data().iter().any(|&x| x > 0.0), "noise should show up inside the FoV");
    }

    #[test]
    fn rejects_non_power_of_two_grid() {
        let cfg = ViewConfig { grid: 24, ..Default::default() };
        assert!(observe(&scene_with(&[]), 0, Pose::default(), &cfg, 0).is_err());
    }
}
