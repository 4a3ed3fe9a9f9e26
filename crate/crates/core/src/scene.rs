use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;

pub type Joint = [f64; 3];

/// One person's joints in camera coordinates (meters, +z away from the camera).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Pose(pub Vec<Joint>);

impl Pose {
    pub fn joints(&self) -> &[Joint] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn flat(&self) -> impl Iterator<Item = f64> + '_ {
        self.0.iter().flatten().copied()
    }

    pub fn from_flat(values: &[f64]) -> Pose {
        Pose(values.chunks(3).map(|c| [c[0], c[1], c[2]]).collect())
    }

    pub fn translated(&self, t: Joint) -> Pose {
        Pose(
            self.0
                .iter()
                .map(|j| [j[0] + t[0], j[1] + t[1], j[2] + t[2]])
                .collect(),
        )
    }

    pub fn is_finite(&self) -> bool {
        self.flat().all(f64::is_finite)
    }
}

fn is_zero(v: &usize) -> bool {
    *v == 0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub id: String,
    pub persons: Vec<Pose>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt: Option<Vec<Pose>>,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub root_index: usize,
}

impl Scene {
    pub fn new(id: impl Into<String>, persons: Vec<Pose>, gt: Option<Vec<Pose>>) -> Self {
        Scene {
            id: id.into(),
            persons,
            gt,
            root_index: 0,
        }
    }

    pub fn num_persons(&self) -> usize {
        self.persons.len()
    }

    pub fn num_joints(&self) -> usize {
        self.persons.first().map_or(0, Pose::len)
    }

    fn invalid(&self, reason: impl Into<String>) -> Error {
        Error::Scene {
            id: self.id.clone(),
            reason: reason.into(),
        }
    }

    /// Checks N ≥ 1, a uniform joint count (equal to `joints` when given),
    /// finite coordinates, and a ground truth of matching shape.
    pub fn validate(&self, joints: Option<usize>) -> Result<()> {
        if self.persons.is_empty() {
            return Err(self.invalid("a scene needs at least one person"));
        }
        let j = joints.unwrap_or_else(|| self.num_joints());
        if j == 0 {
            return Err(self.invalid("persons have no joints"));
        }
        if self.root_index >= j {
            return Err(self.invalid(format!("root index {} out of {j} joints", self.root_index)));
        }
        let check = |poses: &[Pose], what: &str| -> Result<()> {
            for (n, p) in poses.iter().enumerate() {
                if p.len() != j {
                    return Err(self.invalid(format!(
                        "{what} {n} has {} joints, expected {j}",
                        p.len()
                    )));
                }
                if !p.is_finite() {
                    return Err(self.invalid(format!("{what} {n} has non-finite coordinates")));
                }
            }
            Ok(())
        };
        check(&self.persons, "person")?;
        if let Some(gt) = &self.gt {
            if gt.len() != self.persons.len() {
                return Err(self.invalid(format!(
                    "gt has {} persons, persons has {}",
                    gt.len(),
                    self.persons.len()
                )));
            }
            check(gt, "gt person")?;
        }
        Ok(())
    }

    pub fn gt(&self) -> Result<&[Pose]> {
        self.gt
            .as_deref()
            .ok_or_else(|| Error::MissingGroundTruth(self.id.clone()))
    }

    /// Mean of all persons' root joints.
    pub fn root_centroid(&self) -> Joint {
        root_centroid(&self.persons, self.root_index)
    }

    /// Reorders persons (and gt) so that new position `i` holds old person `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Scene {
        Scene {
            id: self.id.clone(),
            persons: perm.iter().map(|&i| self.persons[i].clone()).collect(),
            gt: self
                .gt
                .as_ref()
                .map(|g| perm.iter().map(|&i| g[i].clone()).collect()),
            root_index: self.root_index,
        }
    }
}

pub fn root_centroid(poses: &[Pose], root: usize) -> Joint {
    let mut c = [0.0; 3];
    for p in poses {
        for k in 0..3 {
            c[k] += p.0[root][k];
        }
    }
    let n = poses.len() as f64;
    c.map(|v| v / n)
}

/// Stacks poses into an `N × 3J` matrix.
pub fn poses_to_matrix(poses: &[Pose]) -> Result<Tensor> {
    let j = poses.first().map_or(0, Pose::len);
    let data: Vec<f64> = poses.iter().flat_map(Pose::flat).collect();
    Tensor::matrix(poses.len(), 3 * j, data)
}

pub fn matrix_to_poses(t: &Tensor) -> Vec<Pose> {
    (0..t.rows()).map(|i| Pose::from_flat(t.row(i))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pose(j: usize, v: f64) -> Pose {
        Pose(vec![[v, v, v]; j])
    }

    #[test]
    fn validation_catches_shape_problems() {
        let ok = Scene::new("a", vec![pose(3, 0.0), pose(3, 1.0)], Some(vec![pose(3, 0.0); 2]));
        ok.validate(Some(3)).unwrap();
        assert!(ok.validate(Some(4)).is_err());

        let empty = Scene::new("e", vec![], None);
        assert!(matches!(empty.validate(None), Err(Error::Scene { id, .. }) if id == "e"));

        let ragged = Scene::new("r", vec![pose(3, 0.0), pose(2, 0.0)], None);
        assert!(ragged.validate(None).is_err());

        let gt_bad = Scene::new("g", vec![pose(3, 0.0)], Some(vec![pose(3, 0.0); 2]));
        assert!(gt_bad.validate(None).is_err());

        let nan = Scene::new("n", vec![pose(3, f64::NAN)], None);
        assert!(nan.validate(None).is_err());
    }

    #[test]
    fn centroid_and_permutation() {
        let s = Scene::new("c", vec![pose(2, 1.0), pose(2, 3.0)], None);
        assert_eq!(s.root_centroid(), [2.0, 2.0, 2.0]);
        let p = s.permuted(&[1, 0]);
        assert_eq!(p.persons[0], s.persons[1]);
        let m = poses_to_matrix(&s.persons).unwrap();
        assert_eq!(m.shape(), &[2, 6]);
        assert_eq!(matrix_to_poses(&m), s.persons);
    }
}
