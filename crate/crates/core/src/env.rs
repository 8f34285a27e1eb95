//! Batched pixel-observation environments with in-band auto-reset.
//!
//! One [`Env::step_into`] call steps physics, advances distractors, resets
//! finished environments, renders, applies distractors and post-processes,
//! all in-process. When `done[i]` is set, `obs[i]` is already the first
//! observation of env `i`'s next episode and `info[i]` holds the totals of
//! the episode that just ended.
//!
//! Keys: step `t` uses `key_t = fold_in(master, t)`. Env `i` draws its color
//! bias from `fold_in(key_t, i)` and, on auto-reset, its new episode from
//! [`auto_reset_key`]. No key depends on the batch size, so env `i` of a
//! large batch follows the same trajectory as the same env run alone.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use smallvec::SmallVec;

use crate::distractor::{self, init_distractors, load_video_pack, DistractorMode, DistractorState, VideoPack};
use crate::error::{Error, Result};
use crate::kv::Document;
use crate::physics::{BodyPose, Model, ModelSpec, SystemState, MAX_LINKS};
use crate::prng::{self, key_from_seed, Key};
use crate::render::{
    render_scene_into, tessellate_capsule, track_camera, CameraConfig, Frame, FrameSlot, Mesh, Pose, RenderSettings,
    SceneItem, DEFAULT_RINGS, DEFAULT_SECTORS, LINK_PALETTE,
};
use crate::scalar::Real;

const PHYSICS_DOMAIN: u64 = 0;
const DISTRACTOR_DOMAIN: u64 = 1;
const AUTO_RESET_DOMAIN: u64 = u64::MAX;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ObservationKind {
    #[default]
    Rgb,
    Grayscale,
}

impl ObservationKind {
    pub fn channels(self) -> usize {
        match self {
            ObservationKind::Rgb => 3,
            ObservationKind::Grayscale => 1,
        }
    }
}

impl fmt::Display for ObservationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ObservationKind::Rgb => "rgb",
            ObservationKind::Grayscale => "grayscale",
        })
    }
}

impl FromStr for ObservationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rgb" => Ok(ObservationKind::Rgb),
            "grayscale" | "gray" => Ok(ObservationKind::Grayscale),
            other => Err(Error::invalid(format!("unknown observation kind {other:?} (rgb, grayscale)"))),
        }
    }
}

/// Parses `HxW`, e.g. `84x84`.
pub fn parse_size(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::invalid(format!("expected HxW size, got {s:?}"));
    let (h, w) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    Ok((h.trim().parse().map_err(|_| bad())?, w.trim().parse().map_err(|_| bad())?))
}

fn parse_bool(s: &str) -> Result<bool> {
    match s {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        other => Err(Error::invalid(format!("expected a boolean, got {other:?}"))),
    }
}

/// Environment configuration.
///
/// File format (`key = value`, `#` comments), every key optional:
///
/// ```text
/// model = cheetah_lite        # builtin name or model file path
/// batch = 1
/// resolution = 84x84          # or width = / height =
/// distractor = none           # none | color | video
/// video_pack = assets/synthetic.pxvp
/// action_repeat = 1
/// observation = rgb           # rgb | grayscale
/// floor_in_background = true
/// seed = 0
/// ```
#[derive(Clone, Debug, PartialEq)]
pub struct EnvConfig {
    pub model: String,
    pub batch: usize,
    pub width: usize,
    pub height: usize,
    pub distractor_mode: DistractorMode,
    pub video_pack_path: Option<PathBuf>,
    pub action_repeat: u32,
    pub observation: ObservationKind,
    pub floor_in_background: bool,
    pub seed: u64,
    pub camera: CameraConfig,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            model: "cheetah_lite".into(),
            batch: 1,
            width: 84,
            height: 84,
            distractor_mode: DistractorMode::None,
            video_pack_path: None,
            action_repeat: 1,
            observation: ObservationKind::Rgb,
            floor_in_background: true,
            seed: 0,
            camera: CameraConfig::default(),
        }
    }
}

impl EnvConfig {
    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let num = |v: &str| v.parse::<u64>().map_err(|_| Error::invalid(format!("`{key}` needs an integer, got {v:?}")));
        match key {
            "model" | "env" => self.model = value.to_string(),
            "batch" => self.batch = num(value)? as usize,
            "width" => self.width = num(value)? as usize,
            "height" => self.height = num(value)? as usize,
            "resolution" | "res" => (self.height, self.width) = parse_size(value)?,
            "distractor" | "distractor_mode" => self.distractor_mode = value.parse()?,
            "video_pack" | "video_pack_path" | "pack" => {
                self.video_pack_path = if value.is_empty() { None } else { Some(value.into()) }
            }
            "action_repeat" => self.action_repeat = num(value)? as u32,
            "observation" => self.observation = value.parse()?,
            "floor_in_background" => self.floor_in_background = parse_bool(value)?,
            "seed" => self.seed = num(value)?,
            other => return Err(Error::invalid(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut config = EnvConfig::default();
        for e in Document::parse(text)?.entries {
            config
                .set(&e.key, &e.value)
                .map_err(|err| Error::Parse { line: e.line, message: err.to_string() })?;
        }
        Ok(config)
    }

    /// Reads a config file; a relative `video_pack` is taken relative to it.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_text(&text)?;
        if let (Some(pack), Some(dir)) = (&config.video_pack_path, path.parent()) {
            if pack.is_relative() && !pack.exists() {
                config.video_pack_path = Some(dir.join(pack));
            }
        }
        Ok(config)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "model = {}\nbatch = {}\nresolution = {}x{}\ndistractor = {}\n",
            self.model, self.batch, self.height, self.width, self.distractor_mode
        );
        if let Some(p) = &self.video_pack_path {
            s += &format!("video_pack = {}\n", p.display());
        }
        s += &format!(
            "action_repeat = {}\nobservation = {}\nfloor_in_background = {}\nseed = {}\n",
            self.action_repeat, self.observation, self.floor_in_background, self.seed
        );
        s
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::invalid("batch must be >= 1"));
        }
        if self.action_repeat == 0 {
            return Err(Error::invalid("action_repeat must be >= 1"));
        }
        RenderSettings::new(self.width, self.height).validate()?;
        if self.distractor_mode == DistractorMode::Video && self.video_pack_path.is_none() {
            return Err(Error::invalid("video distractors need video_pack"));
        }
        Ok(())
    }
}

/// Totals of a finished episode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpisodeInfo<T> {
    pub episode_return: T,
    pub episode_length: u32,
}

/// Batched `batch × height × width × channels` observation bytes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Obs {
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

impl Obs {
    pub fn new(batch: usize, height: usize, width: usize, channels: usize) -> Self {
        Obs { batch, height, width, channels, data: vec![0; batch * height * width * channels] }
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.batch, self.height, self.width, self.channels]
    }

    pub fn env_len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn env(&self, i: usize) -> &[u8] {
        let n = self.env_len();
        &self.data[i * n..(i + 1) * n]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvState<T> {
    pub sys: SystemState<T>,
    pub distractor: DistractorState,
    pub master_key: Key,
    pub t: u64,
    /// Running return of the current episode.
    pub episode_return: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutput<T> {
    pub obs: Obs,
    pub reward: Vec<T>,
    pub done: Vec<bool>,
    pub info: Vec<Option<EpisodeInfo<T>>>,
    /// Render target behind `obs`: distracted RGB, depth and background mask.
    pub frame: Frame<T>,
}

/// Key that seeds env `i`'s next episode when it auto-resets at step `t`.
pub fn auto_reset_key(key_t: Key, env: usize) -> Key {
    prng::fold_in(prng::fold_in(key_t, AUTO_RESET_DOMAIN), env as u64)
}

/// Physics and distractor keys for an episode seeded by `key`.
pub fn episode_keys(key: Key) -> (Key, Key) {
    (prng::fold_in(key, PHYSICS_DOMAIN), prng::fold_in(key, DISTRACTOR_DOMAIN))
}

/// An immutable environment description, shareable across threads.
#[derive(Clone, Debug)]
pub struct Env<T> {
    config: EnvConfig,
    model: Model<T>,
    meshes: Vec<Mesh<T>>,
    pack: Option<VideoPack>,
    settings: RenderSettings,
}

impl<T: Real> Env<T> {
    /// Builds an environment, loading the video pack if the mode needs one.
    pub fn new(config: &EnvConfig) -> Result<Self> {
        config.validate()?;
        let pack = match (config.distractor_mode, &config.video_pack_path) {
            (DistractorMode::Video, Some(p)) => Some(load_video_pack(p)?),
            _ => None,
        };
        Self::with_pack(config, pack)
    }

    /// Builds an environment around an already loaded pack.
    pub fn with_pack(config: &EnvConfig, pack: Option<VideoPack>) -> Result<Self> {
        if config.batch == 0 {
            return Err(Error::invalid("batch must be >= 1"));
        }
        if config.action_repeat == 0 {
            return Err(Error::invalid("action_repeat must be >= 1"));
        }
        if config.distractor_mode == DistractorMode::Video && pack.is_none() {
            return Err(Error::invalid("video distractors need a video pack"));
        }
        let mut settings = RenderSettings::new(config.width, config.height);
        settings.floor_in_background = config.floor_in_background;
        settings.validate()?;
        let spec = ModelSpec::resolve(&config.model)?;
        let model = Model::new(&spec)?;
        let meshes = spec
            .links
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let color = LINK_PALETTE[i % LINK_PALETTE.len()].map(T::c);
                Ok(tessellate_capsule::<T>(l.radius, l.length, DEFAULT_RINGS, DEFAULT_SECTORS)?.with_color(color))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Env { config: config.clone(), model, meshes, pack, settings })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn model(&self) -> &Model<T> {
        &self.model
    }

    pub fn spec(&self) -> &ModelSpec {
        self.model.spec()
    }

    pub fn pack(&self) -> Option<&VideoPack> {
        self.pack.as_ref()
    }

    pub fn batch(&self) -> usize {
        self.config.batch
    }

    pub fn n_joints(&self) -> usize {
        self.model.n_joints()
    }

    pub fn obs_shape(&self) -> [usize; 4] {
        [self.config.batch, self.config.height, self.config.width, self.config.observation.channels()]
    }

    /// The state at `t = 0` for `seed`: physics from `reset_state(fold_in(master, 0))`,
    /// distractors from `init_distractors(fold_in(master, 1))`.
    pub fn initial_state(&self, seed: u64) -> Result<EnvState<T>> {
        let master = key_from_seed(seed);
        let (pk, dk) = episode_keys(master);
        let batch = self.config.batch;
        Ok(EnvState {
            sys: self.model.reset(pk, batch)?,
            distractor: init_distractors(self.config.distractor_mode, self.pack.as_ref(), dk, batch)?,
            master_key: master,
            t: 0,
            episode_return: vec![T::zero(); batch],
        })
    }

    /// Resets env `i` of `state` into a new episode seeded by `key`.
    pub fn reset_env(&self, state: &mut EnvState<T>, i: usize, key: Key) {
        let (pk, dk) = episode_keys(key);
        let dof = state.sys.dof;
        let r = i * dof..(i + 1) * dof;
        self.model.reset_env(pk, &mut state.sys.qpos[r.clone()], &mut state.sys.qvel[r]);
        state.sys.step_count[i] = 0;
        state.sys.done[i] = false;
        state.episode_return[i] = T::zero();
        state.distractor.reset_env(i, dk);
    }

    /// Preallocated output buffers for [`Env::step_into`].
    pub fn new_output(&self) -> StepOutput<T> {
        let c = &self.config;
        StepOutput {
            obs: Obs::new(c.batch, c.height, c.width, c.observation.channels()),
            reward: vec![T::zero(); c.batch],
            done: vec![false; c.batch],
            info: vec![None; c.batch],
            frame: Frame::new(c.batch, c.width, c.height),
        }
    }

    fn check_state(&self, state: &EnvState<T>) -> Result<()> {
        let b = self.config.batch;
        if state.sys.batch() != b || state.sys.dof != self.model.dof() || state.episode_return.len() != b {
            return Err(Error::invalid(format!(
                "state has batch {} / dof {}, env expects {b} / {}",
                state.sys.batch(),
                state.sys.dof,
                self.model.dof()
            )));
        }
        if state.distractor.mode != self.config.distractor_mode
            || (state.distractor.mode != DistractorMode::None && state.distractor.batch() != b)
        {
            return Err(Error::invalid("distractor state does not match the env"));
        }
        Ok(())
    }

    /// Steps every environment in place. Reuses `out`; allocates nothing.
    pub fn step_into(&self, state: &mut EnvState<T>, actions: &[T], out: &mut StepOutput<T>) -> Result<()> {
        self.check_state(state)?;
        let n = self.n_joints();
        let batch = self.config.batch;
        if actions.len() != batch * n {
            return Err(Error::invalid(format!(
                "actions have {} values, expected batch {batch} × {n} joints",
                actions.len()
            )));
        }
        if out.obs.shape() != self.obs_shape() || out.reward.len() != batch {
            return Err(Error::invalid("output buffers were made for a different env"));
        }
        let key_t = prng::fold_in(state.master_key, state.t);
        let dof = self.model.dof();
        let repeat = self.config.action_repeat;
        let model = &self.model;

        let sys = &mut state.sys;
        sys.qpos
            .par_chunks_mut(dof)
            .zip(sys.qvel.par_chunks_mut(dof))
            .zip(sys.step_count.par_iter_mut())
            .zip(sys.done.par_iter_mut())
            .zip(state.episode_return.par_iter_mut())
            .zip(out.reward.par_iter_mut())
            .zip(out.info.par_iter_mut())
            .enumerate()
            .for_each(|(i, ((((((q, qd), count), done), ret), reward), info))| {
                let a = &actions[i * n..(i + 1) * n];
                let mut r = T::zero();
                let mut finished = false;
                for _ in 0..repeat {
                    let x0 = q[0];
                    finished = model.advance_env(q, qd, count, a);
                    r = r + crate::physics::reward_one(model.spec(), x0, q[0], a);
                    if finished {
                        break;
                    }
                }
                *reward = r;
                *ret = *ret + r;
                *done = finished;
                *info = None;
                if finished {
                    *info = Some(EpisodeInfo { episode_return: *ret, episode_length: *count });
                    let (pk, _) = episode_keys(auto_reset_key(key_t, i));
                    model.reset_env(pk, q, qd);
                    *count = 0;
                    *ret = T::zero();
                }
            });

        // Distractors: one advance per env step, then fresh draws for resets.
        for i in 0..batch {
            if sys.done[i] {
                let (_, dk) = episode_keys(auto_reset_key(key_t, i));
                state.distractor.reset_env(i, dk);
            } else {
                state.distractor.advance_env(i, key_t);
            }
        }
        out.done.copy_from_slice(&sys.done);
        // Stored done flags describe the live episode, which just started.
        sys.done.fill(false);
        state.t += 1;
        self.observe_into(state, out);
        Ok(())
    }

    /// Functional form of [`Env::step_into`].
    pub fn step(&self, state: &EnvState<T>, actions: &[T]) -> Result<(EnvState<T>, StepOutput<T>)> {
        let mut next = state.clone();
        let mut out = self.new_output();
        self.step_into(&mut next, actions, &mut out)?;
        Ok((next, out))
    }

    /// Renders the observation of `state` into `out.frame` and `out.obs`.
    pub fn observe_into(&self, state: &EnvState<T>, out: &mut StepOutput<T>) {
        let (w, h) = (self.config.width, self.config.height);
        let px = w * h;
        let channels = self.config.observation.channels();
        let dist = &state.distractor;
        let sys = &state.sys;
        out.frame
            .par_slots()
            .zip(out.obs.data.par_chunks_mut(px * channels))
            .enumerate()
            .for_each(|(i, (slot, obs))| {
                let FrameSlot { pixels, depth, mask } = slot;
                let mut poses = [BodyPose::default(); MAX_LINKS];
                let poses = &mut poses[..self.meshes.len()];
                self.model.link_poses(sys.qpos_row(i), poses);
                let items: SmallVec<[SceneItem<'_, T>; MAX_LINKS]> = poses
                    .iter()
                    .zip(&self.meshes)
                    .zip(&self.model.spec().links)
                    .map(|((p, mesh), link)| {
                        let (s, c) = p.pitch.sin_cos();
                        let half = T::c(0.5 * link.length);
                        SceneItem { mesh, pose: Pose::planar(p.x + half * c, p.z + half * s, p.pitch) }
                    })
                    .collect();
                let camera = track_camera(sys.root_x(i), sys.root_z(i), &self.config.camera);
                render_scene_into(&items, &camera, &self.settings, FrameSlot { pixels: &mut *pixels, depth, mask: &mut *mask });
                match dist.mode {
                    DistractorMode::None => {}
                    DistractorMode::Color => distractor::color_env(pixels, dist.color_bias[i]),
                    DistractorMode::Video => {
                        let pack = self.pack.as_ref().expect("video mode has a pack");
                        let frame = pack.frame(dist.video_index[i], dist.frame_cursor[i]);
                        distractor::video_env(pixels, mask, w, h, frame, pack.height, pack.width);
                    }
                }
                match channels {
                    3 => obs.copy_from_slice(pixels),
                    _ => grayscale_into(pixels, obs),
                }
            });
    }

    /// Pure re-render of `state`.
    pub fn observe(&self, state: &EnvState<T>) -> Obs {
        let mut out = self.new_output();
        self.observe_into(state, &mut out);
        out.obs
    }
}

/// `round(0.299 R + 0.587 G + 0.114 B)`, evaluated exactly in integers.
#[inline]
pub fn grayscale(rgb: [u8; 3]) -> u8 {
    ((299 * rgb[0] as u32 + 587 * rgb[1] as u32 + 114 * rgb[2] as u32 + 500) / 1000) as u8
}

fn grayscale_into(rgb: &[u8], out: &mut [u8]) {
    for (p, o) in rgb.chunks_exact(3).zip(out.iter_mut()) {
        *o = grayscale([p[0], p[1], p[2]]);
    }
}

/// Builds the env, its initial state and the first observation.
pub fn make_env<T: Real>(config: &EnvConfig) -> Result<(Env<T>, EnvState<T>, Obs)> {
    let env = Env::new(config)?;
    let state = env.initial_state(config.seed)?;
    let obs = env.observe(&state);
    Ok((env, state, obs))
}
