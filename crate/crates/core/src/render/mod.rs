//! Software rasterizer producing batched RGB observations.
//!
//! The only backend is the data-parallel CPU path in [`raster`]. A different
//! backend would implement the same contract as [`render_scene_into`]: fill
//! one [`FrameSlot`] from a scene, deterministically.

mod camera;
mod math;
mod mesh;
mod raster;

pub use camera::{track_camera, Camera, CameraConfig, View};
pub use math::{add, cross, dot, norm, normalize, scale, sub, Pose, Vec3};
pub use mesh::{tessellate_capsule, tessellate_sphere, Mesh, DEFAULT_RINGS, DEFAULT_SECTORS};
pub use raster::{
    background_sample, default_light_dir, frame_memory_budget, render, render_batch, render_scene_into, shade,
    Frame, FrameSlot, RenderSettings, Scene, SceneItem, AMBIENT, DIFFUSE, FLOOR_COLORS, MIN_SIZE, SKY_COLOR,
};

/// Link colors, cycled by link index.
pub const LINK_PALETTE: [[f64; 3]; 7] = [
    [0.85, 0.45, 0.20],
    [0.25, 0.45, 0.80],
    [0.30, 0.70, 0.35],
    [0.80, 0.75, 0.25],
    [0.60, 0.35, 0.75],
    [0.20, 0.70, 0.70],
    [0.80, 0.30, 0.45],
];
