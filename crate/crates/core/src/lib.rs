//! Batched pixel-observation control environments.
//!
//! Simulation, software rasterization and observation distractors run inside
//! one in-process step over a batch of environments. All randomness flows
//! from explicit [`prng::Key`]s, so a seed and an action sequence determine
//! every observation byte.

pub mod bench;
pub mod distractor;
pub mod env;
pub mod error;
pub mod handle;
pub mod kv;
pub mod physics;
pub mod prng;
pub mod recorder;
pub mod render;
pub mod scalar;
pub mod video_tools;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Env32 = env::Env<f32>;
pub type Env64 = env::Env<f64>;
pub type EnvState32 = env::EnvState<f32>;
pub type EnvState64 = env::EnvState<f64>;
pub type Model32 = physics::Model<f32>;
pub type Model64 = physics::Model<f64>;
pub type Handle32 = handle::EnvHandle<f32>;
pub type Handle64 = handle::EnvHandle<f64>;
