use nalgebra::{Rotation3, Vector3};

use crate::error::{Error, Result};
use crate::scene::{Joint, Pose};

/// Kinematic tree with rest-pose bone offsets.
///
/// Offsets live in a person-local frame: `+x` toward the person's left,
/// `+y` down (matching the camera convention), `+z` the facing direction.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonTemplate {
    pub names: Vec<String>,
    pub parents: Vec<Option<usize>>,
    pub offsets: Vec<Joint>,
}

/// Index constants of [`SkeletonTemplate::standard`].
pub mod joints {
    pub const PELVIS: usize = 0;
    pub const NECK: usize = 1;
    pub const HEAD: usize = 2;
    pub const L_SHOULDER: usize = 3;
    pub const L_ELBOW: usize = 4;
    pub const L_WRIST: usize = 5;
    pub const R_SHOULDER: usize = 6;
    pub const R_ELBOW: usize = 7;
    pub const R_WRIST: usize = 8;
    pub const L_HIP: usize = 9;
    pub const L_KNEE: usize = 10;
    pub const L_ANKLE: usize = 11;
    pub const R_HIP: usize = 12;
    pub const R_KNEE: usize = 13;
    pub const R_ANKLE: usize = 14;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

impl SkeletonTemplate {
    /// 15-joint body: pelvis, neck, head, and left/right shoulder, elbow,
    /// wrist, hip, knee, ankle. Adult proportions, about 1.7 m tall.
    pub fn standard() -> Self {
        let spec: [(&str, Option<usize>, Joint); 15] = [
            ("pelvis", None, [0.0, 0.0, 0.0]),
            ("neck", Some(0), [0.0, -0.50, 0.0]),
            ("head", Some(1), [0.0, -0.22, 0.0]),
            ("l_shoulder", Some(1), [0.18, 0.03, 0.0]),
            ("l_elbow", Some(3), [0.0, 0.28, 0.0]),
            ("l_wrist", Some(4), [0.0, 0.25, 0.0]),
            ("r_shoulder", Some(1), [-0.18, 0.03, 0.0]),
            ("r_elbow", Some(6), [0.0, 0.28, 0.0]),
            ("r_wrist", Some(7), [0.0, 0.25, 0.0]),
            ("l_hip", Some(0), [0.10, 0.05, 0.0]),
            ("l_knee", Some(9), [0.0, 0.42, 0.0]),
            ("l_ankle", Some(10), [0.0, 0.40, 0.0]),
            ("r_hip", Some(0), [-0.10, 0.05, 0.0]),
            ("r_knee", Some(12), [0.0, 0.42, 0.0]),
            ("r_ankle", Some(13), [0.0, 0.40, 0.0]),
        ];
        SkeletonTemplate {
            names: spec.iter().map(|s| s.0.to_owned()).collect(),
            parents: spec.iter().map(|s| s.1).collect(),
            offsets: spec.iter().map(|s| s.2).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn bone_length(&self, j: usize) -> f64 {
        Vector3::from(self.offsets[j]).norm()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.names.len();
        if n < 2 || self.parents.len() != n || self.offsets.len() != n {
            return Err(Error::Config("skeleton needs >= 2 joints and matching tables".into()));
        }
        if self.parents.iter().filter(|p| p.is_none()).count() != 1 || self.parents[0].is_some() {
            return Err(Error::Config("skeleton must have exactly one root, at index 0".into()));
        }
        for j in 1..n {
            match self.parents[j] {
                Some(p) if p < j => {}
                _ => {
                    return Err(Error::Config(format!(
                        "joint `{}` must have a parent with a smaller index",
                        self.names[j]
                    )))
                }
            }
            if !(self.bone_length(j) > 0.0) {
                return Err(Error::Config(format!("bone to `{}` has zero length", self.names[j])));
            }
        }
        Ok(())
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Joints treated as legs and feet by truncation corruption.
    pub fn lower_body(&self) -> Vec<usize> {
        self.names
            .iter()
            .enumerate()
            .filter(|(_, n)| n.contains("knee") || n.contains("ankle"))
            .map(|(i, _)| i)
            .collect()
    }

    /// Forward kinematics. `local[j]` rotates the bone entering joint `j`
    /// (and everything below it) relative to its parent; `root_rot` and
    /// `root_pos` place the pelvis in the camera frame.
    pub fn forward_kinematics(
        &self,
        local: &[Rotation3<f64>],
        root_rot: &Rotation3<f64>,
        root_pos: Joint,
    ) -> Pose {
        let n = self.len();
        let mut global = vec![*root_rot; n];
        let mut pos = vec![Vector3::from(root_pos); n];
        for j in 1..n {
            let p = self.parents[j].expect("validated");
            global[j] = global[p] * local[j];
            pos[j] = pos[p] + global[j] * Vector3::from(self.offsets[j]);
        }
        Pose(pos.iter().map(|v| [v.x, v.y, v.z]).collect())
    }
}

/// Sagittal swing: positive angles move a hanging limb forward.
pub fn flex(angle: f64) -> Rotation3<f64> {
    Rotation3::from_axis_angle(&Vector3::x_axis(), angle)
}

/// Lateral swing: positive angles move a limb on `side` away from the body.
pub fn abduct(side: Side, angle: f64) -> Rotation3<f64> {
    let a = match side {
        Side::Left => -angle,
        Side::Right => angle,
    };
    Rotation3::from_axis_angle(&Vector3::z_axis(), a)
}

/// Rotation about the vertical axis; heading 0 faces `+z`.
pub fn heading(angle: f64) -> Rotation3<f64> {
    Rotation3::from_axis_angle(&Vector3::y_axis(), angle)
}
