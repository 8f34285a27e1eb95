use super::math::{add, cross, dot, normalize, sub, Vec3};
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Camera<T> {
    pub eye: Vec3<T>,
    pub target: Vec3<T>,
    pub up: Vec3<T>,
    pub vertical_fov: T,
    pub near: T,
    pub far: T,
}

/// Placement of the tracking camera relative to the root.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraConfig {
    /// Eye offset from the root in world (x, y, z); the default is a side view.
    pub eye_offset: [f64; 3],
    /// Target offset from the root.
    pub target_offset: [f64; 3],
    pub vertical_fov: f64,
    pub near: f64,
    pub far: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        CameraConfig {
            eye_offset: [0.0, -3.0, 1.2],
            target_offset: [0.0, 0.0, 0.0],
            vertical_fov: 45f64.to_radians(),
            near: 0.1,
            far: 50.0,
        }
    }
}

pub fn track_camera<T: Real>(root_x: T, root_z: T, config: &CameraConfig) -> Camera<T> {
    let root = [root_x, T::zero(), root_z];
    Camera {
        eye: add(root, config.eye_offset.map(T::c)),
        target: add(root, config.target_offset.map(T::c)),
        up: [T::zero(), T::zero(), T::one()],
        vertical_fov: T::c(config.vertical_fov),
        near: T::c(config.near),
        far: T::c(config.far),
    }
}

/// World-to-view transform and projection constants for one image size.
///
/// View space: `x` right, `y` up, `z` forward (positive depth).
#[derive(Clone, Copy, Debug)]
pub struct View<T> {
    pub eye: Vec3<T>,
    pub right: Vec3<T>,
    pub up: Vec3<T>,
    pub forward: Vec3<T>,
    /// Pixels per unit of `x/z` (and `y/z`).
    pub focal: T,
    pub cx: T,
    pub cy: T,
    pub near: T,
    pub far: T,
}

impl<T: Real> Camera<T> {
    pub fn validate(&self) -> Result<()> {
        let ok = self.near > T::zero()
            && self.near < self.far
            && self.vertical_fov > T::zero()
            && self.vertical_fov < T::PI();
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("camera needs 0 < near < far and fov in (0, pi)"))
        }
    }

    pub fn view(&self, width: usize, height: usize) -> View<T> {
        let forward = normalize(sub(self.target, self.eye));
        let right = normalize(cross(forward, self.up));
        let up = cross(right, forward);
        let half = T::c(0.5);
        View {
            eye: self.eye,
            right,
            up,
            forward,
            focal: T::c(height as f64) * half / (self.vertical_fov * half).tan(),
            cx: T::c(width as f64) * half,
            cy: T::c(height as f64) * half,
            near: self.near,
            far: self.far,
        }
    }
}

impl<T: Real> View<T> {
    #[inline]
    pub fn to_view(&self, p: Vec3<T>) -> Vec3<T> {
        let d = sub(p, self.eye);
        [dot(d, self.right), dot(d, self.up), dot(d, self.forward)]
    }

    /// World direction of the ray through a pixel position, scaled so its
    /// forward component is 1 (the ray parameter equals view depth).
    #[inline]
    pub fn ray(&self, px: T, py: T) -> Vec3<T> {
        let base = self.row_base(py);
        self.ray_in_row(base, px)
    }

    /// Part of [`View::ray`] that depends only on the pixel row.
    #[inline]
    pub fn row_base(&self, py: T) -> Vec3<T> {
        let y = (self.cy - py) / self.focal;
        [self.up[0] * y + self.forward[0], self.up[1] * y + self.forward[1], self.up[2] * y + self.forward[2]]
    }

    #[inline]
    pub fn ray_in_row(&self, base: Vec3<T>, px: T) -> Vec3<T> {
        let x = (px - self.cx) / self.focal;
        [self.right[0] * x + base[0], self.right[1] * x + base[1], self.right[2] * x + base[2]]
    }
}
