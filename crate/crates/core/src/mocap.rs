//! Plain-text motion clips.
//!
//! ```text
//! fps 30
//! # root quaternion (w x y z), root translation, joint exp-coords...
//! 1 0 0 0  0 0 0  0 0 0 ...
//! ```

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kinematics::{Pose, RigidTransform};
use crate::math::{Quat, Vec3};

#[derive(Clone, Debug, PartialEq)]
pub struct MocapSequence {
    pub frame_rate: f64,
    pub frames: Vec<Pose>,
}

impl MocapSequence {
    pub fn new(frame_rate: f64, frames: Vec<Pose>) -> Result<Self> {
        let s = Self { frame_rate, frames };
        s.validate(None)?;
        Ok(s)
    }

    /// A clip holding one pose for `n` frames.
    pub fn constant(pose: Pose, frame_rate: f64, n: usize) -> Result<Self> {
        Self::new(frame_rate, vec![pose; n.max(1)])
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Frame `i`, held at the last frame past the end.
    pub fn frame(&self, i: usize) -> &Pose {
        &self.frames[i.min(self.frames.len() - 1)]
    }

    pub fn validate(&self, n_bones: Option<usize>) -> Result<()> {
        if !(self.frame_rate > 0.0 && self.frame_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!("frame rate {} must be positive", self.frame_rate)));
        }
        if self.frames.is_empty() {
            return Err(Error::InvalidConfig("motion clip has no frames".into()));
        }
        let joints = self.frames[0].joint_rotations.len();
        for (i, f) in self.frames.iter().enumerate() {
            if f.joint_rotations.len() != joints {
                return Err(Error::InvalidConfig(format!("frame {i} has {} joints, expected {joints}", f.joint_rotations.len())));
            }
            let finite = f.root.translation.iter().chain(f.root.rotation.coords.iter()).all(|x| x.is_finite())
                && f.joint_rotations.iter().all(|j| j.iter().all(|x| x.is_finite()));
            if !finite {
                return Err(Error::InvalidConfig(format!("frame {i} has non-finite values")));
            }
        }
        if let Some(n) = n_bones {
            if joints + 1 != n {
                return Err(Error::DimensionMismatch {
                    what: "motion clip bones",
                    expected: n,
                    actual: joints + 1,
                });
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "fps {}", self.frame_rate).unwrap();
        for f in &self.frames {
            let q = f.root.rotation.quaternion();
            let mut vals = vec![q.w, q.i, q.j, q.k];
            vals.extend_from_slice(f.root.translation.as_slice());
            for j in &f.joint_rotations {
                vals.extend_from_slice(j.as_slice());
            }
            let line: Vec<String> = vals.iter().map(|v| format!("{v:?}")).collect();
            writeln!(s, "{}", line.join(" ")).unwrap();
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut frame_rate = None;
        let mut frames = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(rest) = line.strip_prefix("fps") {
                let r: f64 = rest
                    .trim()
                    .parse()
                    .map_err(|_| Error::Format(format!("line {}: bad frame rate", n + 1)))?;
                frame_rate = Some(r);
                continue;
            }
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Format(format!("line {}: not a number", n + 1)))?;
            if vals.len() < 7 || !(vals.len() - 7).is_multiple_of(3) {
                return Err(Error::Format(format!("line {}: {} values is not 7 + 3k", n + 1, vals.len())));
            }
            let q = nalgebra::Quaternion::new(vals[0], vals[1], vals[2], vals[3]);
            if !(q.norm() > 0.0) {
                return Err(Error::Format(format!("line {}: zero root quaternion", n + 1)));
            }
            frames.push(Pose {
                root: RigidTransform::new(Quat::from_quaternion(q), Vec3::new(vals[4], vals[5], vals[6])),
                joint_rotations: vals[7..].chunks(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect(),
            });
        }
        let frame_rate = frame_rate.ok_or_else(|| Error::Format("missing `fps` line".into()))?;
        Self::new(frame_rate, frames)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

/// A smooth synthetic clip: every joint swings about a random axis with
/// its own phase, starting from the rest pose.
pub fn synthetic_motion(n_bones: usize, frames: usize, frame_rate: f64, amplitude: f64, seed: u64) -> Result<MocapSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let joints: Vec<(Vec3, f64, f64)> = (1..n_bones.max(1))
        .map(|_| {
            let axis = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let axis = if axis.norm() > 1e-6 { axis.normalize() } else { Vec3::x() };
            (axis, rng.random_range(0.5..1.5), rng.random_range(0.0..std::f64::consts::TAU))
        })
        .collect();
    let poses = (0..frames.max(1))
        .map(|f| {
            let t = f as f64 / frame_rate;
            let mut p = Pose::identity(n_bones);
            for (j, (axis, freq, phase)) in joints.iter().enumerate() {
                let s = (std::f64::consts::TAU * freq * t + phase).sin() - phase.sin();
                p.joint_rotations[j] = axis * (amplitude * s);
            }
            p
        })
        .collect();
    MocapSequence::new(frame_rate, poses)
}
