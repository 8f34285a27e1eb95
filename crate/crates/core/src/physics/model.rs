//! Articulated model descriptions and their plain-text file format.
//!
//! A model is a tree of capsule links in the x-z plane. Link 0 is the root;
//! every other link `i` is driven by exactly one hinge, `joints[i - 1]`,
//! which attaches it to a point on its parent. Generalized coordinates are
//! `[root x, root z, root pitch, joint angles...]`; a link's absolute pitch is
//! the root pitch plus the joint angles on the path from the root, and a
//! link with pitch `p` extends from its base along `(cos p, sin p)`.
//!
//! ```text
//! name = pendulum
//! dt = 0.01
//! substeps = 5
//! episode_length = 1000
//! root.planar = false          # false pins the root base; pitch stays free
//! root.init_z = 1.0
//! root.init_pitch = 0
//! reward.forward = 1
//! reward.ctrl_cost = 0.1
//! termination.min_root_height = none
//! link = length=1 mass=1 radius=0.05
//! link = length=1 mass=1 radius=0.05
//! joint = parent=0 anchor=1 rest=0 lo=-3 hi=3 torque_max=10 damping=0
//! ```
//!
//! `link` and `joint` lines are positional: the k-th `joint` line drives the
//! (k+1)-th `link`. `anchor` is the attach point as a fraction of the parent's
//! length (0 = parent base, 1 = parent tip); it defaults to 1. `rest` is the
//! joint angle of the reset configuration and `damping` a viscous joint
//! coefficient in N·m·s/rad; both default to 0.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::kv::Document;

/// Upper bound on links per model; keeps per-step scratch on the stack.
pub const MAX_LINKS: usize = 16;
pub const MAX_DOF: usize = MAX_LINKS + 2;

#[derive(Clone, Debug, PartialEq)]
pub struct LinkSpec {
    pub length: f64,
    pub mass: f64,
    pub radius: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct JointSpec {
    pub parent: usize,
    pub anchor: f64,
    pub rest: f64,
    pub limit_lo: f64,
    pub limit_hi: f64,
    pub torque_max: f64,
    pub damping: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RootSpec {
    /// Free planar root (x, z, pitch). When false the root base is pinned and
    /// only its pitch moves.
    pub planar: bool,
    pub init_z: f64,
    pub init_pitch: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RewardWeights {
    pub forward: f64,
    pub ctrl_cost: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Termination {
    pub min_root_height: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub name: String,
    pub links: Vec<LinkSpec>,
    pub joints: Vec<JointSpec>,
    pub root: RootSpec,
    pub dt: f64,
    pub substeps: u32,
    pub reward_weights: RewardWeights,
    pub termination: Termination,
    pub episode_length: u32,
}

pub const BUILTIN_MODELS: [&str; 3] = ["cheetah_lite", "walker_lite", "hopper_lite"];

impl ModelSpec {
    pub fn n_links(&self) -> usize {
        self.links.len()
    }

    pub fn n_joints(&self) -> usize {
        self.joints.len()
    }

    /// Generalized coordinate count: 3 root coordinates plus one per joint.
    pub fn dof(&self) -> usize {
        3 + self.joints.len()
    }

    pub fn rest_qpos(&self) -> Vec<f64> {
        let mut q = vec![0.0, self.root.init_z, self.root.init_pitch];
        q.extend(self.joints.iter().map(|j| j.rest));
        q
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(format!("model `{}`: {m}", self.name)));
        if self.links.is_empty() {
            return bad("needs at least one link".into());
        }
        if self.links.len() > MAX_LINKS {
            return bad(format!("{} links exceeds the limit of {MAX_LINKS}", self.links.len()));
        }
        if self.joints.len() + 1 != self.links.len() {
            return bad(format!(
                "{} links need {} joints, found {}",
                self.links.len(),
                self.links.len() - 1,
                self.joints.len()
            ));
        }
        for (i, l) in self.links.iter().enumerate() {
            if !(l.length > 0.0 && l.mass > 0.0 && l.radius > 0.0) {
                return bad(format!("link {i} needs positive length, mass and radius"));
            }
        }
        for (j, joint) in self.joints.iter().enumerate() {
            let child = j + 1;
            if joint.parent >= child {
                return bad(format!("joint {j}: parent {} must precede link {child}", joint.parent));
            }
            if !(0.0..=1.0).contains(&joint.anchor) {
                return bad(format!("joint {j}: anchor must lie in [0, 1]"));
            }
            if !(joint.limit_lo < joint.limit_hi) {
                return bad(format!("joint {j}: limit_lo must be below limit_hi"));
            }
            if !(joint.torque_max >= 0.0 && joint.damping >= 0.0) {
                return bad(format!("joint {j}: torque_max and damping must be non-negative"));
            }
        }
        if !(self.dt > 0.0) || self.substeps == 0 || self.episode_length == 0 {
            return bad("dt > 0, substeps >= 1 and episode_length >= 1 are required".into());
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let doc = Document::parse(text)?;
        let mut links = Vec::new();
        let mut joints = Vec::new();
        for entry in &doc.entries {
            match entry.key.as_str() {
                "link" => {
                    let mut link = LinkSpec { length: f64::NAN, mass: f64::NAN, radius: 0.05 };
                    for (name, raw) in entry.attributes()? {
                        let v = entry.parse_attr::<f64>(name, raw)?;
                        match name {
                            "length" => link.length = v,
                            "mass" => link.mass = v,
                            "radius" => link.radius = v,
                            _ => return Err(unknown_attr(entry.line, name)),
                        }
                    }
                    links.push(link);
                }
                "joint" => {
                    let mut joint = JointSpec {
                        parent: usize::MAX,
                        anchor: 1.0,
                        rest: 0.0,
                        limit_lo: -PI,
                        limit_hi: PI,
                        torque_max: 0.0,
                        damping: 0.0,
                    };
                    for (name, raw) in entry.attributes()? {
                        match name {
                            "parent" => joint.parent = entry.parse_attr(name, raw)?,
                            "anchor" => joint.anchor = entry.parse_attr(name, raw)?,
                            "rest" => joint.rest = entry.parse_attr(name, raw)?,
                            "lo" => joint.limit_lo = entry.parse_attr(name, raw)?,
                            "hi" => joint.limit_hi = entry.parse_attr(name, raw)?,
                            "torque_max" => joint.torque_max = entry.parse_attr(name, raw)?,
                            "damping" => joint.damping = entry.parse_attr(name, raw)?,
                            _ => return Err(unknown_attr(entry.line, name)),
                        }
                    }
                    joints.push(joint);
                }
                _ => {}
            }
        }
        let min_root_height = match doc.get("termination.min_root_height") {
            None => None,
            Some(e) if e.value == "none" => None,
            Some(e) => Some(e.parse::<f64>()?),
        };
        let spec = ModelSpec {
            name: doc.require("name")?.value.clone(),
            links,
            joints,
            root: RootSpec {
                planar: doc.parse_or("root.planar", true)?,
                init_z: doc.parse_or("root.init_z", 0.0)?,
                init_pitch: doc.parse_or("root.init_pitch", 0.0)?,
            },
            dt: doc.require("dt")?.parse()?,
            substeps: doc.parse_or("substeps", 5)?,
            reward_weights: RewardWeights {
                forward: doc.parse_or("reward.forward", 1.0)?,
                ctrl_cost: doc.parse_or("reward.ctrl_cost", 0.0)?,
            },
            termination: Termination { min_root_height },
            episode_length: doc.parse_or("episode_length", 1000)?,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "name = {}", self.name);
        let _ = writeln!(s, "dt = {}", self.dt);
        let _ = writeln!(s, "substeps = {}", self.substeps);
        let _ = writeln!(s, "episode_length = {}", self.episode_length);
        let _ = writeln!(s, "root.planar = {}", self.root.planar);
        let _ = writeln!(s, "root.init_z = {}", self.root.init_z);
        let _ = writeln!(s, "root.init_pitch = {}", self.root.init_pitch);
        let _ = writeln!(s, "reward.forward = {}", self.reward_weights.forward);
        let _ = writeln!(s, "reward.ctrl_cost = {}", self.reward_weights.ctrl_cost);
        match self.termination.min_root_height {
            Some(h) => {
                let _ = writeln!(s, "termination.min_root_height = {h}");
            }
            None => s.push_str("termination.min_root_height = none\n"),
        }
        for l in &self.links {
            let _ = writeln!(s, "link = length={} mass={} radius={}", l.length, l.mass, l.radius);
        }
        for j in &self.joints {
            let _ = writeln!(
                s,
                "joint = parent={} anchor={} rest={} lo={} hi={} torque_max={} damping={}",
                j.parent, j.anchor, j.rest, j.limit_lo, j.limit_hi, j.torque_max, j.damping
            );
        }
        s
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    /// A builtin name, or else a path to a model file.
    pub fn resolve(name_or_path: &str) -> Result<Self> {
        if BUILTIN_MODELS.contains(&name_or_path) {
            builtin_model(name_or_path)
        } else if Path::new(name_or_path).is_file() {
            Self::load(Path::new(name_or_path))
        } else {
            Err(Error::invalid(format!("unknown model `{name_or_path}`")))
        }
    }
}

fn unknown_attr(line: usize, name: &str) -> Error {
    Error::Parse { line, message: format!("unknown attribute `{name}`") }
}

fn link(length: f64, mass: f64, radius: f64) -> LinkSpec {
    LinkSpec { length, mass, radius }
}

fn joint(parent: usize, anchor: f64, rest: f64, range: (f64, f64), torque_max: f64, damping: f64) -> JointSpec {
    JointSpec {
        parent,
        anchor,
        rest,
        limit_lo: rest + range.0,
        limit_hi: rest + range.1,
        torque_max,
        damping,
    }
}

/// Root height that puts the lowest link endpoint of the rest pose on the floor.
fn standing_height(links: &[LinkSpec], joints: &[JointSpec], pitch: f64, clearance: f64) -> f64 {
    let mut pitches = vec![pitch; links.len()];
    let mut base_z = vec![0.0; links.len()];
    let mut lowest = 0.0f64;
    for i in 0..links.len() {
        if i > 0 {
            let j = &joints[i - 1];
            pitches[i] = pitches[j.parent] + j.rest;
            base_z[i] = base_z[j.parent] + j.anchor * links[j.parent].length * pitches[j.parent].sin();
        }
        let tip = base_z[i] + links[i].length * pitches[i].sin();
        lowest = lowest.min(base_z[i]).min(tip);
    }
    clearance - lowest
}

/// Builtin model roster. Values are fixed; changing them changes every digest.
pub fn builtin_model(name: &str) -> Result<ModelSpec> {
    let spec = match name {
        "cheetah_lite" => {
            let links = vec![
                link(1.0, 6.0, 0.046),  // torso, base at the hip of the back leg
                link(0.29, 1.5, 0.046), // back thigh
                link(0.30, 1.2, 0.046), // back shin
                link(0.19, 0.8, 0.046), // back foot
                link(0.27, 1.4, 0.046), // front thigh
                link(0.21, 1.0, 0.046), // front shin
                link(0.14, 0.7, 0.046), // front foot
            ];
            let joints = vec![
                joint(0, 0.0, -FRAC_PI_2 - 0.5, (-0.5, 0.8), 60.0, 1.0),
                joint(1, 1.0, 0.9, (-0.8, 0.8), 45.0, 1.0),
                joint(2, 1.0, -0.2, (-0.4, 0.8), 30.0, 1.0),
                joint(0, 1.0, -FRAC_PI_2 + 0.5, (-1.0, 0.7), 60.0, 1.0),
                joint(4, 1.0, -0.9, (-1.2, 0.9), 45.0, 1.0),
                joint(5, 1.0, 0.4, (-0.5, 0.5), 30.0, 1.0),
            ];
            let init_z = standing_height(&links, &joints, 0.0, 0.01);
            ModelSpec {
                name: name.into(),
                links,
                joints,
                root: RootSpec { planar: true, init_z, init_pitch: 0.0 },
                dt: 0.01,
                substeps: 5,
                reward_weights: RewardWeights { forward: 1.0, ctrl_cost: 0.1 },
                termination: Termination { min_root_height: None },
                episode_length: 1000,
            }
        }
        "walker_lite" => {
            let links = vec![
                link(0.40, 3.5, 0.05), // torso, base at the hip
                link(0.45, 1.2, 0.05), // right thigh
                link(0.50, 1.0, 0.04), // right shin
                link(0.20, 0.5, 0.06), // right foot
                link(0.45, 1.2, 0.05), // left thigh
                link(0.50, 1.0, 0.04), // left shin
                link(0.20, 0.5, 0.06), // left foot
            ];
            let joints = vec![
                joint(0, 0.0, -PI, (-1.2, 1.2), 40.0, 0.5),
                joint(1, 1.0, 0.0, (-1.5, 0.3), 40.0, 0.5),
                joint(2, 1.0, FRAC_PI_2, (-0.8, 0.8), 20.0, 0.5),
                joint(0, 0.0, -PI, (-1.2, 1.2), 40.0, 0.5),
                joint(4, 1.0, 0.0, (-1.5, 0.3), 40.0, 0.5),
                joint(5, 1.0, FRAC_PI_2, (-0.8, 0.8), 20.0, 0.5),
            ];
            let init_z = standing_height(&links, &joints, FRAC_PI_2, 0.01);
            ModelSpec {
                name: name.into(),
                links,
                joints,
                root: RootSpec { planar: true, init_z, init_pitch: FRAC_PI_2 },
                dt: 0.01,
                substeps: 5,
                reward_weights: RewardWeights { forward: 1.0, ctrl_cost: 0.001 },
                termination: Termination { min_root_height: Some(0.8) },
                episode_length: 1000,
            }
        }
        "hopper_lite" => {
            let links = vec![
                link(0.40, 3.5, 0.05), // torso
                link(0.45, 1.2, 0.05), // thigh
                link(0.50, 1.0, 0.04), // leg
                link(0.39, 0.8, 0.06), // foot
            ];
            let joints = vec![
                joint(0, 0.0, -PI, (-1.2, 1.2), 40.0, 0.5),
                joint(1, 1.0, 0.0, (-1.5, 0.3), 40.0, 0.5),
                joint(2, 1.0, FRAC_PI_2, (-0.8, 0.8), 20.0, 0.5),
            ];
            let init_z = standing_height(&links, &joints, FRAC_PI_2, 0.01);
            ModelSpec {
                name: name.into(),
                links,
                joints,
                root: RootSpec { planar: true, init_z, init_pitch: FRAC_PI_2 },
                dt: 0.01,
                substeps: 5,
                reward_weights: RewardWeights { forward: 1.0, ctrl_cost: 0.001 },
                termination: Termination { min_root_height: Some(0.7) },
                episode_length: 1000,
            }
        }
        other => return Err(Error::invalid(format!("unknown builtin model `{other}`"))),
    };
    spec.validate()?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roster_shapes() {
        let cheetah = builtin_model("cheetah_lite").unwrap();
        assert_eq!((cheetah.n_links(), cheetah.n_joints()), (7, 6));
        assert_eq!(cheetah.termination.min_root_height, None);

        let walker = builtin_model("walker_lite").unwrap();
        assert_eq!((walker.n_links(), walker.n_joints()), (7, 6));
        assert_eq!(walker.termination.min_root_height, Some(0.8));

        let hopper = builtin_model("hopper_lite").unwrap();
        assert_eq!((hopper.n_links(), hopper.n_joints()), (4, 3));
        assert_eq!(hopper.termination.min_root_height, Some(0.7));
        assert_eq!(hopper, builtin_model("hopper_lite").unwrap());

        for spec in [cheetah, walker, hopper] {
            assert_eq!(spec.dt, 0.01);
            assert_eq!(spec.substeps, 5);
            assert_eq!(spec.episode_length, 1000);
        }
    }

    #[test]
    fn unknown_builtin_is_rejected() {
        assert!(matches!(builtin_model("ant"), Err(Error::InvalidArgument(_))));
        assert!(matches!(ModelSpec::resolve("no_such_model"), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn upright_models_start_above_their_termination_height() {
        for name in ["walker_lite", "hopper_lite"] {
            let spec = builtin_model(name).unwrap();
            let min = spec.termination.min_root_height.unwrap();
            assert!(spec.root.init_z > min + 0.1, "{name}: {}", spec.root.init_z);
        }
    }

    #[test]
    fn rest_pose_sits_within_joint_limits() {
        for name in BUILTIN_MODELS {
            let spec = builtin_model(name).unwrap();
            for j in &spec.joints {
                assert!(j.limit_lo + 0.1 <= j.rest && j.rest <= j.limit_hi - 0.1, "{name}");
            }
        }
    }

    #[test]
    fn text_round_trip() {
        for name in BUILTIN_MODELS {
            let spec = builtin_model(name).unwrap();
            assert_eq!(ModelSpec::from_text(&spec.to_text()).unwrap(), spec);
        }
    }

    #[test]
    fn structural_validation() {
        let mut spec = builtin_model("hopper_lite").unwrap();
        spec.joints[2].parent = 3;
        assert!(spec.validate().is_err());

        let mut spec = builtin_model("hopper_lite").unwrap();
        spec.links[1].mass = 0.0;
        assert!(spec.validate().is_err());

        let mut spec = builtin_model("hopper_lite").unwrap();
        spec.joints.pop();
        assert!(spec.validate().is_err());

        let mut spec = builtin_model("hopper_lite").unwrap();
        spec.substeps = 0;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = "name = x\ndt = 0.01\nlink = length=1 mass=1\nlink = length=1 mass=1 colour=red\n";
        match ModelSpec::from_text(text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("unexpected {other:?}"),
        }
    }
}
