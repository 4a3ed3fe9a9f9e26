//! Synthetic interacting scenes: ground truth from forward kinematics, and
//! initial estimates from a corruption model covering joint jitter, per-person
//! depth ambiguity, and truncated legs.

use std::f64::consts::PI;

use nalgebra::{Rotation3, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::skeleton::{abduct, flex, heading, joints, Side, SkeletonTemplate};
use crate::error::{Error, Result};
use crate::rng;
use crate::scene::{Joint, Pose, Scene};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interaction {
    /// Two people shaking hands face to face, or (N ≥ 3) a line holding hands.
    Handshake,
    /// Roots inside a 1.5 m disc, everyone facing its center.
    Group,
    /// Roots scattered over a 6 × 6 m floor area.
    Independent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorruptionConfig {
    /// Per-coordinate Gaussian jitter on every joint (m).
    pub joint_noise_sigma: f64,
    /// Per-person rigid shift along camera z (m).
    pub depth_offset_sigma: f64,
    pub truncation_prob: f64,
    /// Per-coordinate jitter on knees and ankles of a truncated person (m).
    pub truncation_noise_sigma: f64,
    /// Mixed into the corruption stream only, so the same ground truth can be
    /// corrupted differently.
    pub seed: u64,
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        CorruptionConfig {
            joint_noise_sigma: 0.05,
            depth_offset_sigma: 0.20,
            truncation_prob: 0.2,
            truncation_noise_sigma: 0.15,
            seed: 0,
        }
    }
}

impl CorruptionConfig {
    pub fn none() -> Self {
        CorruptionConfig {
            joint_noise_sigma: 0.0,
            depth_offset_sigma: 0.0,
            truncation_prob: 0.0,
            truncation_noise_sigma: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sigmas = [
            self.joint_noise_sigma,
            self.depth_offset_sigma,
            self.truncation_noise_sigma,
        ];
        if sigmas.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::Config("corruption sigmas must be finite and >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.truncation_prob) {
            return Err(Error::Config("truncation_prob must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Fractions of handshake / group / independent scenes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InteractionMix {
    pub handshake: f64,
    pub group: f64,
    pub independent: f64,
}

impl Default for InteractionMix {
    fn default() -> Self {
        InteractionMix {
            handshake: 0.4,
            group: 0.4,
            independent: 0.2,
        }
    }
}

impl InteractionMix {
    fn pick(&self, u: f64) -> Interaction {
        let total = self.handshake + self.group + self.independent;
        let u = u * total;
        if u < self.handshake {
            Interaction::Handshake
        } else if u < self.handshake + self.group {
            Interaction::Group
        } else {
            Interaction::Independent
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub scenes: usize,
    pub min_persons: usize,
    pub max_persons: usize,
    pub mix: InteractionMix,
    pub corruption: CorruptionConfig,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            scenes: 15_000,
            min_persons: 2,
            max_persons: 4,
            mix: InteractionMix::default(),
            corruption: CorruptionConfig::default(),
            seed: 0,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scenes == 0 {
            return Err(Error::Config("scene count must be >= 1".into()));
        }
        if self.min_persons == 0 || self.min_persons > self.max_persons {
            return Err(Error::Config(format!(
                "invalid person range {}..={}",
                self.min_persons, self.max_persons
            )));
        }
        let m = self.mix;
        let w = [m.handshake, m.group, m.independent];
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || w.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Config("interaction mix weights must be >= 0 and not all zero".into()));
        }
        self.corruption.validate()
    }
}

/// Scene-level generation output, keeping what was sampled for inspection.
#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub scene: Scene,
    pub interaction: Interaction,
    /// Depth offset applied to each person (m).
    pub depth_offsets: Vec<f64>,
    pub truncated: Vec<bool>,
}

const PELVIS_HEIGHT: f64 = 0.65;

fn random_pose_angles(t: &SkeletonTemplate, r: &mut rng::Rng) -> Vec<Rotation3<f64>> {
    let mut local = vec![Rotation3::identity(); t.len()];
    let side_of = |j: usize| {
        if t.names[j].starts_with("l_") {
            Side::Left
        } else {
            Side::Right
        }
    };
    for j in 1..t.len() {
        let name = t.names[j].as_str();
        local[j] = if name == "neck" {
            flex(r.gen_range(-0.15..0.25)) * abduct(Side::Left, r.gen_range(-0.1..0.1))
        } else if name == "head" {
            flex(r.gen_range(-0.3..0.3)) * abduct(Side::Left, r.gen_range(-0.2..0.2))
        } else if name.ends_with("elbow") {
            flex(r.gen_range(-0.6..1.4)) * abduct(side_of(j), r.gen_range(0.0..0.9))
        } else if name.ends_with("wrist") {
            flex(r.gen_range(0.0..1.8))
        } else if name.ends_with("knee") {
            flex(r.gen_range(-0.3..0.9)) * abduct(side_of(j), r.gen_range(0.0..0.3))
        } else if name.ends_with("ankle") {
            flex(r.gen_range(-1.2..0.0))
        } else {
            flex(r.gen_range(-0.05..0.05))
        };
    }
    local
}

/// Arm pose reaching forward to meet another hand.
fn reach_forward(local: &mut [Rotation3<f64>], side: Side, r: &mut rng::Rng) {
    let (elbow, wrist) = match side {
        Side::Left => (joints::L_ELBOW, joints::L_WRIST),
        Side::Right => (joints::R_ELBOW, joints::R_WRIST),
    };
    local[elbow] = flex(r.gen_range(0.7..1.2)) * abduct(side, r.gen_range(-0.25..0.0));
    local[wrist] = flex(r.gen_range(0.0..0.5));
}

/// Arm hanging outward to hold the hand of a neighbour standing alongside.
fn reach_sideways(local: &mut [Rotation3<f64>], side: Side, r: &mut rng::Rng) {
    let (elbow, wrist) = match side {
        Side::Left => (joints::L_ELBOW, joints::L_WRIST),
        Side::Right => (joints::R_ELBOW, joints::R_WRIST),
    };
    local[elbow] = flex(r.gen_range(-0.1..0.3)) * abduct(side, r.gen_range(0.45..0.8));
    local[wrist] = flex(r.gen_range(0.0..0.3));
}

fn sub(a: Joint, b: Joint) -> Joint {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn jitter(r: &mut rng::Rng, radius: f64) -> Joint {
    // uniform in a ball
    loop {
        let v = [0, 1, 2].map(|_| r.gen_range(-radius..radius));
        if v.iter().map(|x| x * x).sum::<f64>() <= radius * radius {
            return v;
        }
    }
}

fn scatter(
    r: &mut rng::Rng,
    n: usize,
    min_gap: f64,
    mut sample: impl FnMut(&mut rng::Rng) -> (f64, f64),
) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(n);
    while out.len() < n {
        let mut candidate = sample(r);
        for _ in 0..200 {
            if out
                .iter()
                .all(|p| (p.0 - candidate.0).hypot(p.1 - candidate.1) >= min_gap)
            {
                break;
            }
            candidate = sample(r);
        }
        out.push(candidate);
    }
    out
}

fn ground_truth(
    t: &SkeletonTemplate,
    n: usize,
    interaction: Interaction,
    r: &mut rng::Rng,
) -> Vec<Pose> {
    let center = (r.gen_range(-1.0..1.0), r.gen_range(6.0..9.0));
    let root_y = |r: &mut rng::Rng| PELVIS_HEIGHT + r.gen_range(-0.05..0.05);
    match interaction {
        Interaction::Handshake if n == 1 => {
            let local = random_pose_angles(t, r);
            let y = root_y(r);
            vec![t.forward_kinematics(&local, &heading(r.gen_range(-PI..PI)), [center.0, y, center.1])]
        }
        Interaction::Handshake if n == 2 => {
            let h = r.gen_range(-PI..PI);
            let mut la = random_pose_angles(t, r);
            reach_forward(&mut la, Side::Right, r);
            let ya = root_y(r);
            let a = t.forward_kinematics(&la, &heading(h), [center.0, ya, center.1]);
            let mut lb = random_pose_angles(t, r);
            reach_forward(&mut lb, Side::Right, r);
            let hb = h + PI + r.gen_range(-0.3..0.3);
            let b0 = t.forward_kinematics(&lb, &heading(hb), [0.0, 0.0, 0.0]);
            let target = a.0[joints::R_WRIST];
            let shift = sub(target, b0.0[joints::R_WRIST]);
            let j = jitter(r, 0.03);
            let b = b0.translated([shift[0] + j[0], shift[1] + j[1], shift[2] + j[2]]);
            let mid = [0.5 * (a.0[0][0] + b.0[0][0]), 0.0, 0.5 * (a.0[0][2] + b.0[0][2])];
            let recenter = [center.0 - mid[0], 0.0, center.1 - mid[2]];
            vec![a.translated(recenter), b.translated(recenter)]
        }
        Interaction::Handshake => {
            // a line of people holding hands: left wrist of i meets right wrist of i+1
            let h = r.gen_range(-0.6..0.6);
            let mut poses: Vec<Pose> = Vec::with_capacity(n);
            for i in 0..n {
                let mut local = random_pose_angles(t, r);
                if i + 1 < n {
                    reach_sideways(&mut local, Side::Left, r);
                }
                if i > 0 {
                    reach_sideways(&mut local, Side::Right, r);
                }
                let hi = h + r.gen_range(-0.3..0.3);
                let p0 = t.forward_kinematics(&local, &heading(hi), [0.0, root_y(r), 0.0]);
                let p = match poses.last() {
                    None => p0,
                    Some(prev) => {
                        let shift = sub(prev.0[joints::L_WRIST], p0.0[joints::R_WRIST]);
                        let j = jitter(r, 0.03);
                        p0.translated([shift[0] + j[0], shift[1] + j[1], shift[2] + j[2]])
                    }
                };
                poses.push(p);
            }
            let (sx, sz) = poses
                .iter()
                .fold((0.0, 0.0), |acc, p| (acc.0 + p.0[0][0], acc.1 + p.0[0][2]));
            let recenter = [center.0 - sx / n as f64, 0.0, center.1 - sz / n as f64];
            poses.iter().map(|p| p.translated(recenter)).collect()
        }
        Interaction::Group => {
            let roots = scatter(r, n, 0.6, |r| loop {
                let (x, z) = (r.gen_range(-1.5..1.5), r.gen_range(-1.5..1.5));
                if f64::hypot(x, z) <= 1.5 {
                    return (x, z);
                }
            });
            roots
                .iter()
                .map(|&(x, z)| {
                    let face = if x.hypot(z) > 1e-6 {
                        f64::atan2(-x, -z)
                    } else {
                        r.gen_range(-PI..PI)
                    };
                    let local = random_pose_angles(t, r);
                    let rot = heading(face + r.gen_range(-0.25..0.25));
                    t.forward_kinematics(&local, &rot, [center.0 + x, root_y(r), center.1 + z])
                })
                .collect()
        }
        Interaction::Independent => {
            let roots = scatter(r, n, 0.6, |r| (r.gen_range(-3.0..3.0), r.gen_range(-3.0..3.0)));
            roots
                .iter()
                .map(|&(x, z)| {
                    let local = random_pose_angles(t, r);
                    let rot = heading(r.gen_range(-PI..PI));
                    t.forward_kinematics(&local, &rot, [center.0 + x, root_y(r), center.1 + z])
                })
                .collect()
        }
    }
}

fn corrupt(
    t: &SkeletonTemplate,
    gt: &[Pose],
    c: &CorruptionConfig,
    r: &mut rng::Rng,
) -> (Vec<Pose>, Vec<f64>, Vec<bool>) {
    let lower = t.lower_body();
    let gauss = |r: &mut rng::Rng, sigma: f64| -> f64 {
        if sigma > 0.0 {
            Normal::new(0.0, sigma).expect("validated sigma").sample(r)
        } else {
            0.0
        }
    };
    let mut persons = Vec::with_capacity(gt.len());
    let mut offsets = Vec::with_capacity(gt.len());
    let mut truncated = Vec::with_capacity(gt.len());
    for p in gt {
        let offset = gauss(r, c.depth_offset_sigma);
        let trunc = c.truncation_prob > 0.0 && r.gen_bool(c.truncation_prob);
        let mut q = p.clone();
        for (j, joint) in q.0.iter_mut().enumerate() {
            if offset != 0.0 {
                joint[2] += offset;
            }
            if trunc && lower.contains(&j) && c.truncation_noise_sigma > 0.0 {
                for v in joint.iter_mut() {
                    *v += gauss(r, c.truncation_noise_sigma);
                }
            }
            if c.joint_noise_sigma > 0.0 {
                for v in joint.iter_mut() {
                    *v += gauss(r, c.joint_noise_sigma);
                }
            }
        }
        persons.push(q);
        offsets.push(offset);
        truncated.push(trunc);
    }
    (persons, offsets, truncated)
}

/// One scene, fully determined by `(template, n_persons, interaction, corruption, seed)`.
pub fn generate_scene(
    template: &SkeletonTemplate,
    n_persons: usize,
    interaction: Interaction,
    corruption: &CorruptionConfig,
    seed: u64,
) -> Result<Generated> {
    template.validate()?;
    corruption.validate()?;
    if n_persons == 0 {
        return Err(Error::Config("a scene needs at least one person".into()));
    }
    if [joints::L_WRIST, joints::R_WRIST]
        .iter()
        .any(|&j| j >= template.len())
    {
        return Err(Error::Config("template lacks the wrist joints used for hand contact".into()));
    }
    let mut geo = rng::child(seed, 0);
    let gt = ground_truth(template, n_persons, interaction, &mut geo);
    let mut noise = rng::child(rng::derive_seed(seed, corruption.seed), 1);
    let (persons, depth_offsets, truncated) = corrupt(template, &gt, corruption, &mut noise);
    Ok(Generated {
        scene: Scene::new(format!("{interaction:?}-{seed:016x}").to_lowercase(), persons, Some(gt)),
        interaction,
        depth_offsets,
        truncated,
    })
}

pub fn generate_dataset(config: &DatasetConfig) -> Result<Vec<Generated>> {
    config.validate()?;
    let template = SkeletonTemplate::standard();
    let mut out = Vec::with_capacity(config.scenes);
    for i in 0..config.scenes {
        let seed = rng::derive_seed(config.seed, i as u64);
        let mut pick = rng::child(seed, 2);
        let interaction = config.mix.pick(pick.gen::<f64>());
        let n = pick.gen_range(config.min_persons..=config.max_persons);
        let mut g = generate_scene(&template, n, interaction, &config.corruption, seed)?;
        g.scene.id = format!("s{i:06}");
        out.push(g);
    }
    Ok(out)
}

/// Distance between the two designated hand-contact wrists of persons `a` and `b`.
pub fn wrist_gap(a: &Pose, a_wrist: usize, b: &Pose, b_wrist: usize) -> f64 {
    (Vector3::from(a.0[a_wrist]) - Vector3::from(b.0[b_wrist])).norm()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t() -> SkeletonTemplate {
        SkeletonTemplate::standard()
    }

    #[test]
    fn zero_corruption_leaves_gt() {
        for (k, inter) in [Interaction::Handshake, Interaction::Group, Interaction::Independent]
            .into_iter()
            .enumerate()
        {
            let g = generate_scene(&t(), 3, inter, &CorruptionConfig::none(), k as u64).unwrap();
            assert_eq!(&g.scene.persons, g.scene.gt.as_ref().unwrap());
            g.scene.validate(Some(15)).unwrap();
        }
    }

    #[test]
    fn handshake_wrists_meet() {
        for seed in 0..50 {
            let g2 = generate_scene(&t(), 2, Interaction::Handshake, &CorruptionConfig::none(), seed).unwrap();
            let gt = g2.scene.gt.unwrap();
            assert!(wrist_gap(&gt[0], joints::R_WRIST, &gt[1], joints::R_WRIST) <= 0.05);

            let g4 = generate_scene(&t(), 4, Interaction::Handshake, &CorruptionConfig::none(), seed).unwrap();
            let gt = g4.scene.gt.unwrap();
            for i in 0..3 {
                assert!(wrist_gap(&gt[i], joints::L_WRIST, &gt[i + 1], joints::R_WRIST) <= 0.05);
            }
        }
    }

    #[test]
    fn group_roots_lie_in_disc() {
        for seed in 0..30 {
            let g = generate_scene(&t(), 5, Interaction::Group, &CorruptionConfig::none(), seed).unwrap();
            let gt = g.scene.gt.unwrap();
            let cx = gt.iter().map(|p| p.0[0][0]).sum::<f64>() / 5.0;
            let cz = gt.iter().map(|p| p.0[0][2]).sum::<f64>() / 5.0;
            for p in &gt {
                // mean of points in a disc stays in the disc, so pairwise bound is the diameter
                assert!((p.0[0][0] - cx).hypot(p.0[0][2] - cz) <= 3.0);
            }
        }
    }

    #[test]
    fn depth_offset_only_is_rigid() {
        let c = CorruptionConfig {
            depth_offset_sigma: 0.2,
            ..CorruptionConfig::none()
        };
        let g = generate_scene(&t(), 3, Interaction::Group, &c, 9).unwrap();
        let gt = g.scene.gt.as_ref().unwrap();
        for ((p, q), off) in g.scene.persons.iter().zip(gt).zip(&g.depth_offsets) {
            assert!(*off != 0.0);
            for (a, b) in p.0.iter().zip(&q.0) {
                assert_eq!(a[0], b[0]);
                assert_eq!(a[1], b[1]);
                assert!((a[2] - b[2] - off).abs() < 1e-12);
            }
            let root_rel = |pose: &Pose, j: usize| sub(pose.0[j], pose.0[0]);
            for j in 0..15 {
                let (x, y) = (root_rel(p, j), root_rel(q, j));
                assert!((0..3).all(|k| (x[k] - y[k]).abs() < 1e-12));
            }
        }
    }

    #[test]
    fn joint_noise_rms_matches_sigma() {
        let c = CorruptionConfig {
            joint_noise_sigma: 0.05,
            ..CorruptionConfig::none()
        };
        let (mut ss, mut n) = (0.0, 0usize);
        for seed in 0..30 {
            let g = generate_scene(&t(), 3, Interaction::Independent, &c, seed).unwrap();
            for (p, q) in g.scene.persons.iter().zip(g.scene.gt.as_ref().unwrap()) {
                for (a, b) in p.flat().zip(q.flat()) {
                    ss += (a - b) * (a - b);
                    n += 1;
                }
            }
        }
        assert!(n >= 3000);
        let rms = (ss / n as f64).sqrt();
        assert!((rms - 0.05).abs() < 0.005, "{rms}");
    }

    #[test]
    fn truncation_hits_lower_body_only() {
        let c = CorruptionConfig {
            truncation_prob: 1.0,
            truncation_noise_sigma: 0.15,
            ..CorruptionConfig::none()
        };
        let g = generate_scene(&t(), 2, Interaction::Group, &c, 4).unwrap();
        assert!(g.truncated.iter().all(|&b| b));
        let lower = t().lower_body();
        for (p, q) in g.scene.persons.iter().zip(g.scene.gt.as_ref().unwrap()) {
            for j in 0..15 {
                assert_eq!(p.0[j] == q.0[j], !lower.contains(&j));
            }
        }
    }

    #[test]
    fn dataset_is_deterministic_and_mixed() {
        let cfg = DatasetConfig {
            scenes: 200,
            seed: 5,
            ..Default::default()
        };
        let a = generate_dataset(&cfg).unwrap();
        let b = generate_dataset(&cfg).unwrap();
        assert_eq!(a, b);
        let count = |k| a.iter().filter(|g| g.interaction == k).count();
        assert!(count(Interaction::Handshake) > 50);
        assert!(count(Interaction::Group) > 50);
        assert!(count(Interaction::Independent) > 15);
        for g in &a {
            g.scene.validate(Some(15)).unwrap();
            assert!((2..=4).contains(&g.scene.num_persons()));
        }
        assert_eq!(DatasetConfig::default().scenes, 15_000);
    }

    #[test]
    fn invalid_configs_fail() {
        assert!(generate_scene(&t(), 0, Interaction::Group, &CorruptionConfig::default(), 0).is_err());
        let bad = CorruptionConfig {
            truncation_prob: 1.5,
            ..Default::default()
        };
        assert!(generate_scene(&t(), 2, Interaction::Group, &bad, 0).is_err());
        let mut tmpl = t();
        tmpl.parents[4] = Some(9);
        assert!(generate_scene(&tmpl, 2, Interaction::Group, &CorruptionConfig::default(), 0).is_err());
    }
}
