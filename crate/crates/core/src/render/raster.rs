//! Z-buffered triangle rasterization into batched RGB frames.
//!
//! Pixel `(i, j)` samples at `(i + 0.5, j + 0.5)` with `j` growing downward.
//! Coverage uses edge functions with the top-left fill rule; depth is view
//! depth interpolated perspective-correctly (linear in `1/z`). A fragment
//! replaces the stored one only if strictly nearer, so on equal depth the
//! earlier triangle in submission order wins.
//!
//! Before geometry, each pixel is initialized from an analytic background:
//! the checkerboard floor (plane z = 0, 1 m squares) where the pixel's ray
//! meets it in front of the far plane, sky otherwise. Sky pixels are always
//! background; floor pixels are background when `floor_in_background` is set.

use rayon::prelude::*;
use smallvec::SmallVec;

use super::camera::{Camera, View};
use super::math::{cross, dot, normalize, sub, Pose, Vec3};
use super::mesh::Mesh;
use crate::error::{Error, Result};
use crate::scalar::Real;

pub const SKY_COLOR: [u8; 3] = [135, 206, 235];
pub const FLOOR_COLORS: [[u8; 3]; 2] = [[150, 150, 150], [100, 100, 100]];
pub const AMBIENT: f64 = 0.35;
pub const DIFFUSE: f64 = 0.65;
pub const MIN_SIZE: usize = 8;

/// `normalize(0.3, -0.5, 0.8)`, pointing toward the light.
pub fn default_light_dir() -> [f64; 3] {
    let v = [0.3f64, -0.5, 0.8];
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    v.map(|c| c / n)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderSettings {
    pub width: usize,
    pub height: usize,
    pub light_dir: [f64; 3],
    pub floor_in_background: bool,
}

impl RenderSettings {
    pub fn new(width: usize, height: usize) -> Self {
        RenderSettings { width, height, light_dir: default_light_dir(), floor_in_background: true }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < MIN_SIZE || self.height < MIN_SIZE {
            return Err(Error::invalid(format!(
                "frames must be at least {MIN_SIZE}x{MIN_SIZE}, got {}x{}",
                self.width, self.height
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SceneItem<'a, T> {
    pub mesh: &'a Mesh<T>,
    pub pose: Pose<T>,
}

#[derive(Clone, Debug)]
pub struct Scene<'a, T> {
    pub items: Vec<SceneItem<'a, T>>,
    pub camera: Camera<T>,
}

/// Batched render target: `batch × height × width` pixels, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame<T> {
    pub batch: usize,
    pub width: usize,
    pub height: usize,
    /// `batch × height × width × 3` RGB bytes.
    pub pixels: Vec<u8>,
    pub depth: Vec<T>,
    pub background_mask: Vec<bool>,
}

/// Mutable view of one scene's slice of a [`Frame`].
pub struct FrameSlot<'a, T> {
    pub pixels: &'a mut [u8],
    pub depth: &'a mut [T],
    pub mask: &'a mut [bool],
}

impl<T: Real> Frame<T> {
    pub fn new(batch: usize, width: usize, height: usize) -> Self {
        let n = batch * width * height;
        Frame {
            batch,
            width,
            height,
            pixels: vec![0; 3 * n],
            depth: vec![T::zero(); n],
            background_mask: vec![false; n],
        }
    }

    pub fn pixels_per_scene(&self) -> usize {
        self.width * self.height
    }

    pub fn scene_pixels(&self, i: usize) -> &[u8] {
        let n = 3 * self.pixels_per_scene();
        &self.pixels[i * n..(i + 1) * n]
    }

    pub fn scene_mask(&self, i: usize) -> &[bool] {
        let n = self.pixels_per_scene();
        &self.background_mask[i * n..(i + 1) * n]
    }

    pub fn rgb(&self, scene: usize, x: usize, y: usize) -> [u8; 3] {
        let o = 3 * ((scene * self.height + y) * self.width + x);
        [self.pixels[o], self.pixels[o + 1], self.pixels[o + 2]]
    }

    /// Heap bytes held by the buffers.
    pub fn memory_bytes(&self) -> usize {
        self.pixels.len() + self.depth.len() * std::mem::size_of::<T>() + self.background_mask.len()
    }

    /// Per-scene slots in scene order, for parallel filling.
    pub fn par_slots(&mut self) -> impl IndexedParallelIterator<Item = FrameSlot<'_, T>> {
        let n = self.width * self.height;
        self.pixels
            .par_chunks_mut(3 * n)
            .zip(self.depth.par_chunks_mut(n))
            .zip(self.background_mask.par_chunks_mut(n))
            .map(|((pixels, depth), mask)| FrameSlot { pixels, depth, mask })
    }
}

/// Expected buffer bytes for a batch: RGB, depth and mask per pixel.
pub fn frame_memory_budget<T>(batch: usize, width: usize, height: usize) -> usize {
    batch * width * height * (3 + std::mem::size_of::<T>() + 1)
}

#[inline]
fn to_u8<T: Real>(v: T) -> u8 {
    // Saturating cast: clamps to [0, 255] and truncates, i.e. floors.
    (v.max(T::zero()).min(T::one()) * T::c(255.0) + T::c(0.5)).to_f64_lossy() as u8
}

/// Flat Lambertian shade of a triangle with world-space vertices.
#[inline]
pub fn shade<T: Real>(base: [T; 3], a: Vec3<T>, b: Vec3<T>, c: Vec3<T>, light: Vec3<T>) -> [u8; 3] {
    let n = normalize(cross(sub(b, a), sub(c, a)));
    let k = T::c(AMBIENT) + T::c(DIFFUSE) * dot(n, light).max(T::zero());
    base.map(|ch| to_u8(ch * k))
}

/// Floor for finite values in `i64` range; saturates otherwise.
#[inline]
fn floor_i64<T: Real>(v: T) -> i64 {
    let v = v.to_f64_lossy();
    let i = v as i64;
    i - ((i as f64) > v) as i64
}

#[inline]
fn ceil_i64<T: Real>(v: T) -> i64 {
    let v = v.to_f64_lossy();
    let i = v as i64;
    i + ((i as f64) < v) as i64
}

/// Incremental `floor(v) mod 2` for slowly varying `v`: exact, and usually
/// two comparisons per call.
#[derive(Clone, Copy, Default)]
struct CellTracker<T> {
    lo: T,
    parity: u8,
}

impl<T: Real> CellTracker<T> {
    #[inline]
    fn update(&mut self, v: T, init: bool) -> u8 {
        if init || !(v.abs() < T::c(1e6)) {
            let c = floor_i64(v);
            *self = CellTracker { lo: T::c(c as f64), parity: (c & 1) as u8 };
            return self.parity;
        }
        while v >= self.lo + T::one() {
            self.lo = self.lo + T::one();
            self.parity ^= 1;
        }
        while v < self.lo {
            self.lo = self.lo - T::one();
            self.parity ^= 1;
        }
        self.parity
    }
}

#[inline]
fn floor_color<T: Real>(x: T, y: T) -> [u8; 3] {
    FLOOR_COLORS[((floor_i64(x) + floor_i64(y)) & 1) as usize]
}

/// Background sample for one pixel centre: color, depth, is-floor.
#[inline]
pub fn background_sample<T: Real>(view: &View<T>, px: T, py: T) -> ([u8; 3], T, bool) {
    let d = view.ray(px, py);
    match floor_distance(view, d[2]) {
        Some(t) => (floor_color(view.eye[0] + t * d[0], view.eye[1] + t * d[1]), t, true),
        None => (SKY_COLOR, view.far, false),
    }
}

/// Ray parameter where a ray with vertical component `dz` meets the floor
/// in front of the far plane.
#[inline]
fn floor_distance<T: Real>(view: &View<T>, dz: T) -> Option<T> {
    if dz < T::zero() && view.eye[2] > T::zero() {
        let t = -view.eye[2] / dz;
        if t < view.far {
            return Some(t);
        }
    }
    None
}

/// Fills the background. The camera's right vector is horizontal, so a
/// ray's vertical component and floor distance are constant along a row;
/// the per-pixel values equal [`background_sample`] exactly.
fn fill_background<T: Real>(view: &View<T>, settings: &RenderSettings, slot: &mut FrameSlot<'_, T>) {
    let (w, h) = (settings.width, settings.height);
    let half = T::c(0.5);
    let sky_mask = true;
    let floor_mask = settings.floor_in_background;
    for y in 0..h {
        let py = T::c(y as f64) + half;
        let row = y * w;
        let probe = view.ray(half, py);
        let horizontal = view.right[2] == T::zero();
        match floor_distance(view, probe[2]) {
            None if horizontal => {
                for px in slot.pixels[3 * row..3 * (row + w)].chunks_exact_mut(3) {
                    px.copy_from_slice(&SKY_COLOR);
                }
                slot.depth[row..row + w].fill(view.far);
                slot.mask[row..row + w].fill(sky_mask);
            }
            Some(t) if horizontal => {
                let base = view.row_base(py);
                let pixels = &mut slot.pixels[3 * row..3 * (row + w)];
                let mut cells = [CellTracker::default(); 2];
                for (x, px) in pixels.chunks_exact_mut(3).enumerate() {
                    let d = view.ray_in_row(base, T::c(x as f64) + half);
                    let a = cells[0].update(view.eye[0] + t * d[0], x == 0);
                    let b = cells[1].update(view.eye[1] + t * d[1], x == 0);
                    px.copy_from_slice(&FLOOR_COLORS[(a ^ b) as usize]);
                }
                slot.depth[row..row + w].fill(t);
                slot.mask[row..row + w].fill(floor_mask);
            }
            _ => {
                for x in 0..w {
                    let (color, depth, floor) = background_sample(view, T::c(x as f64) + half, py);
                    let i = row + x;
                    slot.pixels[3 * i..3 * i + 3].copy_from_slice(&color);
                    slot.depth[i] = depth;
                    slot.mask[i] = !floor || floor_mask;
                }
            }
        }
    }
}

#[derive(Clone, Copy)]
struct ScreenVertex<T> {
    x: T,
    y: T,
    inv_z: T,
}

#[inline]
fn edge<T: Real>(a: &ScreenVertex<T>, b: &ScreenVertex<T>, px: T, py: T) -> T {
    (b.x - a.x) * (py - a.y) - (b.y - a.y) * (px - a.x)
}

#[inline]
fn is_top_left<T: Real>(a: &ScreenVertex<T>, b: &ScreenVertex<T>) -> bool {
    (a.y == b.y && b.x > a.x) || b.y < a.y
}

/// Renders one scene into `slot`.
pub fn render_scene_into<T: Real>(
    items: &[SceneItem<'_, T>],
    camera: &Camera<T>,
    settings: &RenderSettings,
    mut slot: FrameSlot<'_, T>,
) {
    let (w, h) = (settings.width, settings.height);
    let view = camera.view(w, h);
    fill_background(&view, settings, &mut slot);

    let light = settings.light_dir.map(T::c);
    let mut world: SmallVec<[Vec3<T>; 128]> = SmallVec::new();
    let mut eye: SmallVec<[Vec3<T>; 128]> = SmallVec::new();
    let mut screen: SmallVec<[ScreenVertex<T>; 128]> = SmallVec::new();
    for item in items {
        let mesh = item.mesh;
        world.clear();
        eye.clear();
        screen.clear();
        for &p in &mesh.vertices {
            let q = item.pose.apply(p);
            let v = view.to_view(q);
            world.push(q);
            eye.push(v);
            screen.push(project(&view, v));
        }
        for tri in &mesh.triangles {
            let [a, b, c] = tri.map(|i| i as usize);
            // Shading is deferred until a fragment survives; most triangles
            // of a small, distant body cover no pixel centre at all.
            let color = || shade(mesh.base_color, world[a], world[b], world[c], light);
            if eye[a][2] >= view.near && eye[b][2] >= view.near && eye[c][2] >= view.near {
                raster(&[screen[a], screen[b], screen[c]], color, w, h, &mut slot);
            } else {
                draw_clipped(&view, [eye[a], eye[b], eye[c]], color(), w, h, &mut slot);
            }
        }
    }
}

#[inline]
fn project<T: Real>(view: &View<T>, p: Vec3<T>) -> ScreenVertex<T> {
    ScreenVertex {
        x: view.cx + view.focal * p[0] / p[2],
        y: view.cy - view.focal * p[1] / p[2],
        inv_z: T::one() / p[2],
    }
}

fn draw_clipped<T: Real>(view: &View<T>, v: [Vec3<T>; 3], color: [u8; 3], w: usize, h: usize, slot: &mut FrameSlot<'_, T>) {
    let near = view.near;
    let inside = v.map(|p| p[2] >= near);
    if !inside.iter().any(|&b| b) {
        return;
    }
    let project = |p: Vec3<T>| project(view, p);
    if inside.iter().all(|&b| b) {
        raster(&v.map(project), || color, w, h, slot);
        return;
    }
    // Clip against the near plane; at most four vertices survive.
    let mut poly = [[T::zero(); 3]; 4];
    let mut n = 0;
    for k in 0..3 {
        let (a, b) = (v[k], v[(k + 1) % 3]);
        let (ia, ib) = (inside[k], inside[(k + 1) % 3]);
        if ia {
            poly[n] = a;
            n += 1;
        }
        if ia != ib {
            let t = (near - a[2]) / (b[2] - a[2]);
            poly[n] = [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1]), near];
            n += 1;
        }
    }
    for k in 1..n - 1 {
        raster(&[project(poly[0]), project(poly[k]), project(poly[k + 1])], || color, w, h, slot);
    }
}

#[inline]
fn raster<T: Real>(
    tri: &[ScreenVertex<T>; 3],
    color: impl FnOnce() -> [u8; 3],
    w: usize,
    h: usize,
    slot: &mut FrameSlot<'_, T>,
) {
    let (v0, mut v1, mut v2) = (tri[0], tri[1], tri[2]);
    let mut area = edge(&v0, &v1, v2.x, v2.y);
    if !area.is_finite() || area == T::zero() {
        return;
    }
    if area < T::zero() {
        std::mem::swap(&mut v1, &mut v2);
        area = -area;
    }
    let half = T::c(0.5);
    let min_x = v0.x.min(v1.x).min(v2.x);
    let max_x = v0.x.max(v1.x).max(v2.x);
    let min_y = v0.y.min(v1.y).min(v2.y);
    let max_y = v0.y.max(v1.y).max(v2.y);
    // Pixel centres inside the bounding box, clamped to the image.
    let lo = |v: T| ceil_i64(v - half).max(0);
    let hi = |v: T, n: usize| floor_i64(v - half).min(n as i64 - 1);
    let (x0, x1, y0, y1) = (lo(min_x), hi(max_x, w), lo(min_y), hi(max_y, h));
    if x0 > x1 || y0 > y1 {
        return;
    }
    let (x0, x1, y0, y1) = (x0 as usize, x1 as usize, y0 as usize, y1 as usize);
    let tl0 = is_top_left(&v1, &v2);
    let tl1 = is_top_left(&v2, &v0);
    let tl2 = is_top_left(&v0, &v1);
    let covers = |e: T, top_left: bool| e > T::zero() || (e == T::zero() && top_left);
    let mut color = Some(color);
    let mut rgb = [0u8; 3];

    for y in y0..=y1 {
        let py = T::c(y as f64) + half;
        let row = y * w;
        for x in x0..=x1 {
            let px = T::c(x as f64) + half;
            let e0 = edge(&v1, &v2, px, py);
            let e1 = edge(&v2, &v0, px, py);
            let e2 = edge(&v0, &v1, px, py);
            if !(covers(e0, tl0) && covers(e1, tl1) && covers(e2, tl2)) {
                continue;
            }
            let inv_z = (e0 * v0.inv_z + e1 * v1.inv_z + e2 * v2.inv_z) / area;
            let depth = T::one() / inv_z;
            let i = row + x;
            if depth < slot.depth[i] {
                slot.depth[i] = depth;
                if let Some(f) = color.take() {
                    rgb = f();
                }
                slot.pixels[3 * i..3 * i + 3].copy_from_slice(&rgb);
                slot.mask[i] = false;
            }
        }
    }
}

/// Renders a single scene.
pub fn render<T: Real>(items: &[SceneItem<'_, T>], camera: &Camera<T>, settings: &RenderSettings) -> Result<Frame<T>> {
    settings.validate()?;
    camera.validate()?;
    let mut frame = Frame::new(1, settings.width, settings.height);
    let slot = FrameSlot { pixels: &mut frame.pixels, depth: &mut frame.depth, mask: &mut frame.background_mask };
    render_scene_into(items, camera, settings, slot);
    Ok(frame)
}

/// Renders every scene; scene `i` is bit-identical to `render(scenes[i])`.
pub fn render_batch<T: Real>(scenes: &[Scene<'_, T>], settings: &RenderSettings) -> Result<Frame<T>> {
    settings.validate()?;
    if scenes.is_empty() {
        return Err(Error::invalid("render_batch needs at least one scene"));
    }
    for s in scenes {
        s.camera.validate()?;
    }
    let mut frame = Frame::new(scenes.len(), settings.width, settings.height);
    frame
        .par_slots()
        .zip(scenes.par_iter())
        .for_each(|(slot, scene)| render_scene_into(&scene.items, &scene.camera, settings, slot));
    Ok(frame)
}
