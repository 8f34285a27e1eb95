//! Planar articulated-body simulation.

mod dynamics;
mod model;

pub use dynamics::{
    check_termination, compute_reward, forward_kinematics, reset_state, step_dynamics, BodyPose, Model,
    SystemState, CONTACT_DAMPING, CONTACT_STIFFNESS, FRICTION_DAMPING, FRICTION_MU, GRAVITY, LIMIT_DAMPING,
    LIMIT_STIFFNESS, RESET_POS_NOISE, RESET_VEL_NOISE, VELOCITY_LIMIT,
};
pub(crate) use dynamics::reward_one;
pub use model::{
    builtin_model, JointSpec, LinkSpec, ModelSpec, RewardWeights, RootSpec, Termination, BUILTIN_MODELS, MAX_DOF,
    MAX_LINKS,
};
