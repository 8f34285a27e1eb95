//! Batched reduced-coordinate dynamics.
//!
//! Each substep evaluates forward kinematics and velocities, assembles the
//! joint-space mass matrix `M(q)` and generalized forces (actuation, joint
//! damping, joint-limit penalties, gravity, penalty ground contact and the
//! velocity-product terms), solves `M q'' = Q` by Cholesky, and integrates
//! with semi-implicit Euler: velocity first, then position with the new
//! velocity.

use rayon::prelude::*;

use super::model::{ModelSpec, MAX_DOF, MAX_LINKS};
use crate::error::{Error, Result};
use crate::prng::{self, Key};
use crate::scalar::Real;

pub const GRAVITY: f64 = 9.81;
pub const CONTACT_STIFFNESS: f64 = 4000.0;
pub const CONTACT_DAMPING: f64 = 40.0;
pub const FRICTION_MU: f64 = 0.8;
/// Tangential damping coefficient, N·s/m; the result is capped by `mu * normal`.
pub const FRICTION_DAMPING: f64 = 100.0;
/// Penalty stiffness (N·m/rad) and damping (N·m·s/rad) past a joint limit.
pub const LIMIT_STIFFNESS: f64 = 100.0;
pub const LIMIT_DAMPING: f64 = 1.0;
/// Any generalized velocity beyond this is treated as divergence.
pub const VELOCITY_LIMIT: f64 = 1.0e3;

pub const RESET_POS_NOISE: f64 = 0.1;
pub const RESET_VEL_NOISE: f64 = 0.05;

/// Batched generalized state, row-major `batch × dof`.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemState<T> {
    pub dof: usize,
    pub qpos: Vec<T>,
    pub qvel: Vec<T>,
    pub step_count: Vec<u32>,
    pub done: Vec<bool>,
}

impl<T: Real> SystemState<T> {
    pub fn batch(&self) -> usize {
        self.step_count.len()
    }

    pub fn qpos_row(&self, env: usize) -> &[T] {
        &self.qpos[env * self.dof..(env + 1) * self.dof]
    }

    pub fn qvel_row(&self, env: usize) -> &[T] {
        &self.qvel[env * self.dof..(env + 1) * self.dof]
    }

    pub fn root_x(&self, env: usize) -> T {
        self.qpos[env * self.dof]
    }

    pub fn root_z(&self, env: usize) -> T {
        self.qpos[env * self.dof + 1]
    }
}

/// Pose of one link: base point in the x-z plane and absolute pitch.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BodyPose<T> {
    pub x: T,
    pub z: T,
    pub pitch: T,
}

#[derive(Clone, Debug)]
struct LinkConst<T> {
    parent: usize,
    /// Distance along the parent from its base to this link's base.
    anchor_len: T,
    length: T,
    mass: T,
    inertia: T,
    /// Links on the root-to-self path, root first, self last.
    path: [u8; MAX_LINKS],
    path_len: usize,
    // Joint parameters; unused for link 0.
    torque_max: T,
    damping: T,
    limit_lo: T,
    limit_hi: T,
}

/// A [`ModelSpec`] compiled into the constants the stepper needs.
#[derive(Clone, Debug)]
pub struct Model<T> {
    spec: ModelSpec,
    links: Vec<LinkConst<T>>,
    /// (link, fraction along link) of each contact point.
    contacts: Vec<(usize, T)>,
    dof: usize,
    dt_sub: T,
    rest: Vec<f64>,
}

/// Per-substep kinematic quantities for one environment.
struct Frames<T> {
    pitch: [T; MAX_LINKS],
    dir: [[T; 2]; MAX_LINKS],
    base: [[T; 2]; MAX_LINKS],
    omega: [T; MAX_LINKS],
    base_vel: [[T; 2]; MAX_LINKS],
    /// Base acceleration with all q'' = 0 (centripetal terms only).
    base_bias: [[T; 2]; MAX_LINKS],
}

#[inline]
fn perp<T: Real>(v: [T; 2]) -> [T; 2] {
    [-v[1], v[0]]
}

#[inline]
fn cross2<T: Real>(r: [T; 2], f: [T; 2]) -> T {
    r[0] * f[1] - r[1] * f[0]
}

impl<T: Real> Model<T> {
    pub fn new(spec: &ModelSpec) -> Result<Self> {
        spec.validate()?;
        let n = spec.n_links();
        let mut links: Vec<LinkConst<T>> = Vec::with_capacity(n);
        for (i, l) in spec.links.iter().enumerate() {
            let (parent, anchor_len, j) = if i == 0 {
                (usize::MAX, 0.0, None)
            } else {
                let j = &spec.joints[i - 1];
                (j.parent, j.anchor * spec.links[j.parent].length, Some(j))
            };
            let mut path = [0u8; MAX_LINKS];
            let path_len = if i == 0 {
                path[0] = 0;
                1
            } else {
                let p = &links[parent];
                path[..p.path_len].copy_from_slice(&p.path[..p.path_len]);
                path[p.path_len] = i as u8;
                p.path_len + 1
            };
            links.push(LinkConst {
                parent,
                anchor_len: T::c(anchor_len),
                length: T::c(l.length),
                mass: T::c(l.mass),
                inertia: T::c(l.mass * l.length * l.length / 12.0),
                path,
                path_len,
                torque_max: T::c(j.map_or(0.0, |j| j.torque_max)),
                damping: T::c(j.map_or(0.0, |j| j.damping)),
                limit_lo: T::c(j.map_or(0.0, |j| j.limit_lo)),
                limit_hi: T::c(j.map_or(0.0, |j| j.limit_hi)),
            });
        }
        // Root base, every tip, and child bases that sit strictly inside a parent.
        let mut contacts = vec![(0, T::zero())];
        for i in 0..n {
            contacts.push((i, T::one()));
        }
        for j in &spec.joints {
            if j.anchor > 0.0 && j.anchor < 1.0 {
                contacts.push((j.parent, T::c(j.anchor)));
            }
        }
        Ok(Model {
            spec: spec.clone(),
            links,
            contacts,
            dof: spec.dof(),
            dt_sub: T::c(spec.dt / spec.substeps as f64),
            rest: spec.rest_qpos(),
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn dof(&self) -> usize {
        self.dof
    }

    pub fn n_joints(&self) -> usize {
        self.dof - 3
    }

    /// Link poses for one environment's coordinates.
    pub fn link_poses(&self, qpos: &[T], out: &mut [BodyPose<T>]) {
        let mut dir = [[T::zero(); 2]; MAX_LINKS];
        for (i, l) in self.links.iter().enumerate() {
            let pose = if i == 0 {
                BodyPose { x: qpos[0], z: qpos[1], pitch: qpos[2] }
            } else {
                let p = out[l.parent];
                let d = dir[l.parent];
                BodyPose {
                    x: p.x + l.anchor_len * d[0],
                    z: p.z + l.anchor_len * d[1],
                    pitch: p.pitch + qpos[2 + i],
                }
            };
            dir[i] = [pose.pitch.cos(), pose.pitch.sin()];
            out[i] = pose;
        }
    }

    fn frames(&self, q: &[T], qd: &[T]) -> Frames<T> {
        let z = T::zero();
        let mut f = Frames {
            pitch: [z; MAX_LINKS],
            dir: [[z; 2]; MAX_LINKS],
            base: [[z; 2]; MAX_LINKS],
            omega: [z; MAX_LINKS],
            base_vel: [[z; 2]; MAX_LINKS],
            base_bias: [[z; 2]; MAX_LINKS],
        };
        for (i, l) in self.links.iter().enumerate() {
            if i == 0 {
                f.pitch[0] = q[2];
                f.base[0] = [q[0], q[1]];
                f.omega[0] = qd[2];
                f.base_vel[0] = [qd[0], qd[1]];
            } else {
                let p = l.parent;
                let (dp, wp) = (f.dir[p], f.omega[p]);
                f.pitch[i] = f.pitch[p] + q[2 + i];
                f.base[i] = [f.base[p][0] + l.anchor_len * dp[0], f.base[p][1] + l.anchor_len * dp[1]];
                f.omega[i] = wp + qd[2 + i];
                let t = perp(dp);
                f.base_vel[i] = [
                    f.base_vel[p][0] + l.anchor_len * wp * t[0],
                    f.base_vel[p][1] + l.anchor_len * wp * t[1],
                ];
                let c = l.anchor_len * wp * wp;
                f.base_bias[i] = [f.base_bias[p][0] - c * dp[0], f.base_bias[p][1] - c * dp[1]];
            }
            f.dir[i] = [f.pitch[i].cos(), f.pitch[i].sin()];
        }
        f
    }

    /// Adds the generalized force of a point force `force` applied at `point`
    /// on `link`.
    #[inline]
    fn apply_point_force(&self, f: &Frames<T>, link: usize, point: [T; 2], force: [T; 2], gen: &mut [T; MAX_DOF]) {
        gen[0] = gen[0] + force[0];
        gen[1] = gen[1] + force[1];
        let l = &self.links[link];
        for &a in &l.path[..l.path_len] {
            let a = a as usize;
            let r = [point[0] - f.base[a][0], point[1] - f.base[a][1]];
            gen[2 + a] = gen[2 + a] + cross2(r, force);
        }
    }

    #[inline]
    fn point(&self, f: &Frames<T>, link: usize, frac: T) -> ([T; 2], [T; 2]) {
        let s = frac * self.links[link].length;
        let d = f.dir[link];
        let t = perp(d);
        let w = f.omega[link];
        (
            [f.base[link][0] + s * d[0], f.base[link][1] + s * d[1]],
            [f.base_vel[link][0] + s * w * t[0], f.base_vel[link][1] + s * w * t[1]],
        )
    }

    /// Mass matrix (dense, `dof × dof` in the top-left of the array).
    fn mass_matrix(&self, f: &Frames<T>) -> [[T; MAX_DOF]; MAX_DOF] {
        let n = self.dof;
        let mut m = [[T::zero(); MAX_DOF]; MAX_DOF];
        let half = T::c(0.5);
        for (i, l) in self.links.iter().enumerate() {
            let s = half * l.length;
            let com = [f.base[i][0] + s * f.dir[i][0], f.base[i][1] + s * f.dir[i][1]];
            // Sparse COM Jacobian: columns 0, 1 and the pitch dof of each link on the path.
            let mut cols = [0usize; MAX_DOF];
            let mut jac = [[T::zero(); 2]; MAX_DOF];
            cols[0] = 0;
            jac[0] = [T::one(), T::zero()];
            cols[1] = 1;
            jac[1] = [T::zero(), T::one()];
            let mut k = 2;
            for &a in &l.path[..l.path_len] {
                let a = a as usize;
                cols[k] = 2 + a;
                jac[k] = perp([com[0] - f.base[a][0], com[1] - f.base[a][1]]);
                k += 1;
            }
            for r in 0..k {
                for c in 0..k {
                    let lin = l.mass * (jac[r][0] * jac[c][0] + jac[r][1] * jac[c][1]);
                    let rot = if r >= 2 && c >= 2 { l.inertia } else { T::zero() };
                    m[cols[r]][cols[c]] = m[cols[r]][cols[c]] + lin + rot;
                }
            }
        }
        debug_assert!(n <= MAX_DOF);
        m
    }

    /// Generalized forces excluding the mass-matrix term, plus the diagonal
    /// `h*c + h^2*k` of the joint damping and limit springs, which are
    /// integrated implicitly.
    fn generalized_forces(&self, f: &Frames<T>, q: &[T], qd: &[T], actions: &[T]) -> ([T; MAX_DOF], [T; MAX_DOF]) {
        let mut gen = [T::zero(); MAX_DOF];
        let mut implicit = [T::zero(); MAX_DOF];
        let h = self.dt_sub;
        let g = T::c(GRAVITY);
        let half = T::c(0.5);

        // Gravity and velocity-product terms at each centre of mass.
        for (i, l) in self.links.iter().enumerate() {
            let s = half * l.length;
            let d = f.dir[i];
            let com = [f.base[i][0] + s * d[0], f.base[i][1] + s * d[1]];
            let w2 = f.omega[i] * f.omega[i];
            let bias = [f.base_bias[i][0] - s * w2 * d[0], f.base_bias[i][1] - s * w2 * d[1]];
            let force = [-l.mass * bias[0], -l.mass * (g + bias[1])];
            self.apply_point_force(f, i, com, force, &mut gen);
        }

        // Penalty ground contact.
        let (k, c) = (T::c(CONTACT_STIFFNESS), T::c(CONTACT_DAMPING));
        let (mu, ct) = (T::c(FRICTION_MU), T::c(FRICTION_DAMPING));
        for &(link, frac) in &self.contacts {
            let (p, v) = self.point(f, link, frac);
            if p[1] < T::zero() {
                let normal = (-k * p[1] - c * v[1]).max(T::zero());
                let cap = mu * normal;
                let tangent = (-ct * v[0]).max(-cap).min(cap);
                self.apply_point_force(f, link, p, [tangent, normal], &mut gen);
            }
        }

        // Actuation, joint damping and limit penalties.
        let (kl, cl) = (T::c(LIMIT_STIFFNESS), T::c(LIMIT_DAMPING));
        for (i, l) in self.links.iter().enumerate().skip(1) {
            let dof = 2 + i;
            let a = actions[i - 1].max(-T::one()).min(T::one());
            let mut tau = a * l.torque_max - l.damping * qd[dof];
            let mut diag = h * l.damping;
            let angle = q[dof];
            let excess = if angle > l.limit_hi {
                angle - l.limit_hi
            } else if angle < l.limit_lo {
                angle - l.limit_lo
            } else {
                T::zero()
            };
            if excess != T::zero() {
                tau = tau - kl * excess - cl * qd[dof];
                diag = diag + h * cl + h * h * kl;
            }
            gen[dof] = gen[dof] + tau;
            implicit[dof] = diag;
        }
        (gen, implicit)
    }

    /// Generalized accelerations for one environment.
    pub fn accelerations(&self, q: &[T], qd: &[T], actions: &[T]) -> [T; MAX_DOF] {
        let f = self.frames(q, qd);
        let m = self.mass_matrix(&f);
        let (gen, implicit) = self.generalized_forces(&f, q, qd, actions);

        // Free dofs: a pinned root drops x and z.
        let first = if self.spec.root.planar { 0 } else { 2 };
        let n = self.dof - first;
        let mut a = [[T::zero(); MAX_DOF]; MAX_DOF];
        let mut b = [T::zero(); MAX_DOF];
        for r in 0..n {
            b[r] = gen[first + r];
            for c in 0..n {
                a[r][c] = m[first + r][first + c];
            }
            a[r][r] = a[r][r] + implicit[first + r];
        }
        let x = cholesky_solve(&mut a, &mut b, n);
        let mut out = [T::zero(); MAX_DOF];
        out[first..first + n].copy_from_slice(&x[..n]);
        out
    }

    /// One environment step of `substeps` semi-implicit Euler substeps.
    /// Returns true when the divergence guard fired.
    pub fn step_env(&self, q: &mut [T], qd: &mut [T], actions: &[T]) -> bool {
        debug_assert_eq!(q.len(), self.dof);
        let start = {
            let mut s = [T::zero(); MAX_DOF];
            s[..self.dof].copy_from_slice(q);
            s
        };
        let h = self.dt_sub;
        for _ in 0..self.spec.substeps {
            let acc = self.accelerations(q, qd, actions);
            for i in 0..self.dof {
                qd[i] = qd[i] + h * acc[i];
            }
            for i in 0..self.dof {
                q[i] = q[i] + h * qd[i];
            }
        }
        let vmax = T::c(VELOCITY_LIMIT);
        let bad = q.iter().any(|v| !v.is_finite()) || qd.iter().any(|v| !v.is_finite() || v.abs() > vmax);
        if bad {
            for (i, v) in qd.iter_mut().enumerate() {
                *v = if v.is_finite() { v.max(-vmax).min(vmax) } else { T::zero() };
                if !q[i].is_finite() {
                    q[i] = start[i];
                }
            }
        }
        bad
    }

    pub fn mechanical_energy(&self, q: &[T], qd: &[T]) -> T {
        let f = self.frames(q, qd);
        let m = self.mass_matrix(&f);
        let mut kinetic = T::zero();
        for r in 0..self.dof {
            for c in 0..self.dof {
                kinetic = kinetic + qd[r] * m[r][c] * qd[c];
            }
        }
        let mut potential = T::zero();
        for (i, l) in self.links.iter().enumerate() {
            let com_z = f.base[i][1] + T::c(0.5) * l.length * f.dir[i][1];
            potential = potential + l.mass * T::c(GRAVITY) * com_z;
        }
        T::c(0.5) * kinetic + potential
    }

    pub fn terminated(&self, q: &[T]) -> bool {
        match self.spec.termination.min_root_height {
            Some(h) => q[1] < T::c(h),
            None => false,
        }
    }

    /// Steps every environment once. Per-environment work is independent, so
    /// the output does not depend on how rayon schedules it.
    pub fn step_batch(&self, state: &mut SystemState<T>, actions: &[T]) -> Result<()> {
        let n = self.n_joints();
        check_shapes(state, self.dof, actions, n)?;
        let dof = self.dof;
        state
            .qpos
            .par_chunks_mut(dof)
            .zip(state.qvel.par_chunks_mut(dof))
            .zip(state.step_count.par_iter_mut())
            .zip(state.done.par_iter_mut())
            .enumerate()
            .for_each(|(i, (((q, qd), count), done))| {
                *done = self.advance_env(q, qd, count, &actions[i * n..(i + 1) * n]);
            });
        Ok(())
    }

    /// [`Model::step_env`] plus episode bookkeeping; returns the new done flag.
    #[inline]
    pub fn advance_env(&self, q: &mut [T], qd: &mut [T], count: &mut u32, actions: &[T]) -> bool {
        let diverged = self.step_env(q, qd, actions);
        *count = (*count + 1).min(self.spec.episode_length);
        *count >= self.spec.episode_length || diverged || self.terminated(q)
    }

    /// Writes the reset state for one environment drawn from `key`.
    pub fn reset_env(&self, key: Key, q: &mut [T], qd: &mut [T]) {
        let rest = &self.rest;
        let mut noise = [0.0f64; MAX_DOF];
        let mut vel = [0.0f64; MAX_DOF];
        prng::uniform_into(prng::fold_in(key, 0), -RESET_POS_NOISE, RESET_POS_NOISE, &mut noise[..self.dof]);
        prng::normal_into(prng::fold_in(key, 1), &mut vel[..self.dof]);
        let first = if self.spec.root.planar { 0 } else { 2 };
        for i in 0..self.dof {
            if i < first {
                q[i] = T::c(rest[i]);
                qd[i] = T::zero();
            } else {
                q[i] = T::c(rest[i] + noise[i]);
                qd[i] = T::c(vel[i] * RESET_VEL_NOISE);
            }
        }
    }

    pub fn reset(&self, key: Key, batch: usize) -> Result<SystemState<T>> {
        if batch == 0 {
            return Err(Error::invalid("reset needs batch >= 1"));
        }
        let dof = self.dof;
        let mut state = SystemState {
            dof,
            qpos: vec![T::zero(); batch * dof],
            qvel: vec![T::zero(); batch * dof],
            step_count: vec![0; batch],
            done: vec![false; batch],
        };
        state
            .qpos
            .par_chunks_mut(dof)
            .zip(state.qvel.par_chunks_mut(dof))
            .enumerate()
            .for_each(|(i, (q, qd))| self.reset_env(key.child(i as u64), q, qd));
        Ok(state)
    }
}

fn check_shapes<T: Real>(state: &SystemState<T>, dof: usize, actions: &[T], n_joints: usize) -> Result<()> {
    let batch = state.batch();
    if state.dof != dof || state.qpos.len() != batch * dof || state.qvel.len() != batch * dof {
        return Err(Error::invalid(format!("state width {} does not match model dof {dof}", state.dof)));
    }
    if state.done.len() != batch {
        return Err(Error::invalid("state batch fields disagree"));
    }
    if actions.len() != batch * n_joints {
        return Err(Error::invalid(format!(
            "expected {} actions ({batch} envs × {n_joints} joints), got {}",
            batch * n_joints,
            actions.len()
        )));
    }
    Ok(())
}

/// In-place Cholesky solve of the SPD system `a x = b` (top-left `n × n`).
fn cholesky_solve<T: Real>(a: &mut [[T; MAX_DOF]; MAX_DOF], b: &mut [T; MAX_DOF], n: usize) -> [T; MAX_DOF] {
    for j in 0..n {
        let mut d = a[j][j];
        for k in 0..j {
            d = d - a[j][k] * a[j][k];
        }
        let d = d.max(T::c(1e-12)).sqrt();
        a[j][j] = d;
        for i in j + 1..n {
            let mut s = a[i][j];
            for k in 0..j {
                s = s - a[i][k] * a[j][k];
            }
            a[i][j] = s / d;
        }
    }
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s = s - a[i][k] * b[k];
        }
        b[i] = s / a[i][i];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s = s - a[k][i] * b[k];
        }
        b[i] = s / a[i][i];
    }
    *b
}

/// Link poses for every environment in a batch of coordinates.
pub fn forward_kinematics<T: Real>(spec: &ModelSpec, qpos: &[T], batch: usize) -> Result<Vec<Vec<BodyPose<T>>>> {
    let model = Model::<T>::new(spec)?;
    let dof = model.dof();
    if qpos.len() != batch * dof {
        return Err(Error::invalid(format!("qpos has {} values, expected {batch} × {dof}", qpos.len())));
    }
    Ok(qpos
        .chunks(dof)
        .map(|q| {
            let mut poses = vec![BodyPose::default(); spec.n_links()];
            model.link_poses(q, &mut poses);
            poses
        })
        .collect())
}

/// Steps a batch once; `key` is accepted for stochastic dynamics and unused
/// by the current deterministic model.
pub fn step_dynamics<T: Real>(
    spec: &ModelSpec,
    state: &SystemState<T>,
    actions: &[T],
    _key: Key,
) -> Result<SystemState<T>> {
    let model = Model::<T>::new(spec)?;
    let mut next = state.clone();
    model.step_batch(&mut next, actions)?;
    Ok(next)
}

pub fn compute_reward<T: Real>(
    spec: &ModelSpec,
    prev: &SystemState<T>,
    next: &SystemState<T>,
    actions: &[T],
) -> Result<Vec<T>> {
    let batch = prev.batch();
    let n = spec.n_joints();
    if next.batch() != batch || actions.len() != batch * n {
        return Err(Error::invalid("reward inputs disagree on batch size"));
    }
    Ok((0..batch)
        .map(|i| {
            let a = &actions[i * n..(i + 1) * n];
            reward_one(spec, prev.root_x(i), next.root_x(i), a)
        })
        .collect())
}

#[inline]
pub(crate) fn reward_one<T: Real>(spec: &ModelSpec, x_prev: T, x_next: T, actions: &[T]) -> T {
    let ctrl = actions.iter().fold(T::zero(), |acc, &a| {
        let a = a.max(-T::one()).min(T::one());
        acc + a * a
    });
    T::c(spec.reward_weights.forward) * (x_next - x_prev) / T::c(spec.dt) - T::c(spec.reward_weights.ctrl_cost) * ctrl
}

pub fn check_termination<T: Real>(spec: &ModelSpec, state: &SystemState<T>) -> Vec<bool> {
    (0..state.batch())
        .map(|i| match spec.termination.min_root_height {
            Some(h) => state.root_z(i) < T::c(h),
            None => false,
        })
        .collect()
}

pub fn reset_state<T: Real>(spec: &ModelSpec, key: Key, batch: usize) -> Result<SystemState<T>> {
    Model::<T>::new(spec)?.reset(key, batch)
}
