//! Triangle meshes and primitive tessellation.
//!
//! Capsule: `h = ceil(rings / 2)` latitude rings per hemisphere (the last one
//! on the equator) and `sectors` vertices per ring, with one pole vertex at
//! each end. It has `V = 2 + 2·h·sectors` vertices and `F = 4·h·sectors`
//! triangles. With the default `rings = 8, sectors = 12` that is 192
//! triangles per link, 1344 for a 7-link body.
//!
//! Sphere: `rings` latitude bands, `V = 2 + (rings - 1)·sectors` and
//! `F = 2·sectors·(rings - 1)`.
//!
//! Both are closed and wound counter-clockwise seen from outside.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use super::math::{cross, dot, norm, sub, Vec3};
use crate::error::{Error, Result};
use crate::scalar::Real;

pub const DEFAULT_RINGS: usize = 8;
pub const DEFAULT_SECTORS: usize = 12;
const MIN_AREA: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct Mesh<T> {
    pub vertices: Vec<Vec3<T>>,
    pub triangles: Vec<[u32; 3]>,
    pub base_color: [T; 3],
}

impl<T: Real> Mesh<T> {
    pub fn new(vertices: Vec<Vec3<T>>, triangles: Vec<[u32; 3]>, base_color: [T; 3]) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::invalid("a mesh needs at least 3 vertices"));
        }
        if let Some(t) = triangles.iter().find(|t| t.iter().any(|&i| i as usize >= vertices.len())) {
            return Err(Error::invalid(format!("triangle {t:?} indexes past {} vertices", vertices.len())));
        }
        Ok(Mesh { vertices, triangles, base_color })
    }

    pub fn with_color(mut self, color: [T; 3]) -> Self {
        self.base_color = color;
        self
    }

    pub fn triangle_area(&self, t: usize) -> T {
        let [a, b, c] = self.triangles[t].map(|i| self.vertices[i as usize]);
        norm(cross(sub(b, a), sub(c, a))) * T::c(0.5)
    }

    /// Signed volume; positive for a closed mesh wound outward.
    pub fn signed_volume(&self) -> T {
        self.triangles.iter().fold(T::zero(), |acc, t| {
            let [a, b, c] = t.map(|i| self.vertices[i as usize]);
            acc + dot(a, cross(b, c)) / T::c(6.0)
        })
    }
}

fn ring_triangles(rings: &[usize], sectors: usize, north: usize, south: usize) -> Vec<[u32; 3]> {
    let s = sectors;
    let mut tris = Vec::with_capacity(2 * s * rings.len());
    let idx = |ring: usize, k: usize| (rings[ring] + k % s) as u32;
    for k in 0..s {
        tris.push([north as u32, idx(0, k), idx(0, k + 1)]);
    }
    for r in 0..rings.len() - 1 {
        for k in 0..s {
            let (a, b) = (idx(r, k), idx(r, k + 1));
            let (c, d) = (idx(r + 1, k), idx(r + 1, k + 1));
            tris.push([a, c, d]);
            tris.push([a, d, b]);
        }
    }
    let last = rings.len() - 1;
    for k in 0..s {
        tris.push([south as u32, idx(last, k + 1), idx(last, k)]);
    }
    tris
}

/// Capsule along the local x axis, centred at the origin: a cylinder of
/// `length` capped by hemispheres of `radius`.
pub fn tessellate_capsule<T: Real>(radius: f64, length: f64, rings: usize, sectors: usize) -> Result<Mesh<T>> {
    if !(radius > 0.0 && length > 0.0) || rings < 2 || sectors < 3 {
        return Err(Error::invalid(format!(
            "capsule needs radius, length > 0, rings >= 2, sectors >= 3 (got {radius}, {length}, {rings}, {sectors})"
        )));
    }
    let h = rings.div_ceil(2);
    let half = 0.5 * length;
    let mut verts: Vec<Vec3<T>> = Vec::with_capacity(2 + 2 * h * sectors);
    // The pole at +x is the "north" of the ring ordering.
    verts.push([T::c(half + radius), T::zero(), T::zero()]);
    let mut ring_start = Vec::with_capacity(2 * h);
    let mut push_ring = |verts: &mut Vec<Vec3<T>>, x: f64, radial: f64| {
        ring_start.push(verts.len());
        for k in 0..sectors {
            let theta = TAU * k as f64 / sectors as f64;
            verts.push([T::c(x), T::c(radial * theta.cos()), T::c(radial * theta.sin())]);
        }
    };
    for k in 1..=h {
        let phi = FRAC_PI_2 * k as f64 / h as f64;
        push_ring(&mut verts, half + radius * phi.cos(), radius * phi.sin());
    }
    for k in (1..=h).rev() {
        let phi = FRAC_PI_2 * k as f64 / h as f64;
        push_ring(&mut verts, -half - radius * phi.cos(), radius * phi.sin());
    }
    let south = verts.len();
    verts.push([T::c(-half - radius), T::zero(), T::zero()]);
    let tris = ring_triangles(&ring_start, sectors, 0, south);
    finish(verts, tris)
}

pub fn tessellate_sphere<T: Real>(radius: f64, rings: usize, sectors: usize) -> Result<Mesh<T>> {
    if !(radius > 0.0) || rings < 2 || sectors < 3 {
        return Err(Error::invalid("sphere needs radius > 0, rings >= 2, sectors >= 3"));
    }
    let mut verts: Vec<Vec3<T>> = vec![[T::c(radius), T::zero(), T::zero()]];
    let mut ring_start = Vec::with_capacity(rings - 1);
    for r in 1..rings {
        let phi = PI * r as f64 / rings as f64;
        ring_start.push(verts.len());
        for k in 0..sectors {
            let theta = TAU * k as f64 / sectors as f64;
            let radial = radius * phi.sin();
            verts.push([T::c(radius * phi.cos()), T::c(radial * theta.cos()), T::c(radial * theta.sin())]);
        }
    }
    let south = verts.len();
    verts.push([T::c(-radius), T::zero(), T::zero()]);
    let tris = ring_triangles(&ring_start, sectors, 0, south);
    finish(verts, tris)
}

fn finish<T: Real>(verts: Vec<Vec3<T>>, tris: Vec<[u32; 3]>) -> Result<Mesh<T>> {
    let mesh = Mesh::new(verts, tris, [T::c(0.8); 3])?;
    if (0..mesh.triangles.len()).any(|t| mesh.triangle_area(t) <= T::c(MIN_AREA)) {
        return Err(Error::invalid("tessellation produced a degenerate triangle"));
    }
    Ok(mesh)
}
