//! Pose accuracy metrics: root-relative MPJPE, Procrustes-aligned MPJPE,
//! 3DPCK, its AUC over a threshold grid, and absolute PCK.
//!
//! Distances are reported in millimeters; poses are in meters. A joint counts
//! as correct at threshold `t` when its error is strictly below `t`, or is
//! exactly zero (so a perfect joint is correct on every grid point, `t = 0`
//! included).

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::RefinerModel;
use crate::scene::{Joint, Pose, Scene};

const MM: f64 = 1000.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricConfig {
    pub pck_threshold_mm: f64,
    pub pck_abs_threshold_mm: f64,
    pub auc_thresholds_mm: Vec<f64>,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            pck_threshold_mm: 150.0,
            pck_abs_threshold_mm: 250.0,
            auc_thresholds_mm: (0..=30).map(|i| 5.0 * i as f64).collect(),
        }
    }
}

pub fn is_correct(err_mm: f64, threshold_mm: f64) -> bool {
    err_mm < threshold_mm || err_mm == 0.0
}

fn check(pred: &Pose, gt: &Pose, root: usize) -> Result<()> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(Error::shape(
            "metric",
            format!("pred has {} joints, gt has {}", pred.len(), gt.len()),
        ));
    }
    if root >= gt.len() {
        return Err(Error::OutOfRange {
            index: root,
            limit: gt.len(),
        });
    }
    Ok(())
}

fn dist(a: Joint, b: Joint) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Per-joint root-relative errors in millimeters.
pub fn root_relative_errors(pred: &Pose, gt: &Pose, root: usize) -> Result<Vec<f64>> {
    check(pred, gt, root)?;
    let (pr, gr) = (pred.0[root], gt.0[root]);
    Ok(pred
        .0
        .iter()
        .zip(&gt.0)
        .map(|(p, g)| {
            let a = [p[0] - pr[0], p[1] - pr[1], p[2] - pr[2]];
            let b = [g[0] - gr[0], g[1] - gr[1], g[2] - gr[2]];
            dist(a, b) * MM
        })
        .collect())
}

/// Per-joint absolute errors in millimeters.
pub fn absolute_errors(pred: &Pose, gt: &Pose) -> Result<Vec<f64>> {
    check(pred, gt, 0)?;
    Ok(pred.0.iter().zip(&gt.0).map(|(p, g)| dist(*p, *g) * MM).collect())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn pct_correct(errs: &[f64], t: f64) -> f64 {
    100.0 * errs.iter().filter(|&&e| is_correct(e, t)).count() as f64 / errs.len() as f64
}

pub fn mpjpe(pred: &Pose, gt: &Pose, root: usize) -> Result<f64> {
    Ok(mean(&root_relative_errors(pred, gt, root)?))
}

pub fn pck(pred: &Pose, gt: &Pose, root: usize, threshold_mm: f64) -> Result<f64> {
    Ok(pct_correct(&root_relative_errors(pred, gt, root)?, threshold_mm))
}

pub fn auc(pred: &Pose, gt: &Pose, root: usize, thresholds_mm: &[f64]) -> Result<f64> {
    let errs = root_relative_errors(pred, gt, root)?;
    Ok(auc_of(&errs, thresholds_mm))
}

fn auc_of(errs: &[f64], thresholds_mm: &[f64]) -> f64 {
    thresholds_mm.iter().map(|&t| pct_correct(errs, t)).sum::<f64>() / thresholds_mm.len() as f64
}

pub fn pck_abs(pred: &Pose, gt: &Pose, threshold_mm: f64) -> Result<f64> {
    Ok(pct_correct(&absolute_errors(pred, gt)?, threshold_mm))
}

/// `x ↦ scale · rotation · x + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub rotation: Matrix3<f64>,
    pub scale: f64,
    pub translation: Vector3<f64>,
}

impl Similarity {
    pub fn apply(&self, p: &Pose) -> Pose {
        Pose(
            p.0.iter()
                .map(|j| {
                    let v = self.scale * (self.rotation * Vector3::from(*j)) + self.translation;
                    [v.x, v.y, v.z]
                })
                .collect(),
        )
    }
}

fn centered(p: &Pose) -> (Vector3<f64>, Vec<Vector3<f64>>) {
    let pts: Vec<Vector3<f64>> = p.0.iter().map(|j| Vector3::from(*j)).collect();
    let mu = pts.iter().sum::<Vector3<f64>>() / pts.len() as f64;
    let c = pts.iter().map(|v| v - mu).collect();
    (mu, c)
}

/// Least-squares similarity transform taking `pred` onto `gt`, with the
/// rotation restricted to det = +1.
pub fn procrustes(pred: &Pose, gt: &Pose) -> Result<Similarity> {
    check(pred, gt, 0)?;
    if gt.len() < 3 {
        return Err(Error::Degenerate(format!(
            "procrustes needs >= 3 joints, got {}",
            gt.len()
        )));
    }
    let (mu_p, p) = centered(pred);
    let (mu_g, g) = centered(gt);
    let n = p.len() as f64;

    let spread = |pts: &[Vector3<f64>]| pts.iter().map(|v| v * v.transpose()).sum::<Matrix3<f64>>();
    let gs = spread(&g).symmetric_eigenvalues();
    let mut ev: Vec<f64> = gs.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    if !(ev[1] > 1e-12 * ev[0].max(f64::MIN_POSITIVE)) {
        return Err(Error::Degenerate("ground-truth joints are collinear".into()));
    }
    let var_p = p.iter().map(|v| v.norm_squared()).sum::<f64>() / n;
    if !(var_p > 0.0) {
        return Err(Error::Degenerate("predicted joints coincide".into()));
    }

    let cov = g
        .iter()
        .zip(&p)
        .map(|(gi, pi)| gi * pi.transpose())
        .sum::<Matrix3<f64>>()
        / n;
    let svd = cov.svd(true, true);
    let (u, vt) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let mut d = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let rotation = u * d * vt;
    let trace: f64 = (0..3).map(|i| svd.singular_values[i] * d[(i, i)]).sum();
    let scale = trace / var_p;
    let translation = mu_g - scale * (rotation * mu_p);
    Ok(Similarity {
        rotation,
        scale,
        translation,
    })
}

pub fn procrustes_align(pred: &Pose, gt: &Pose) -> Result<Pose> {
    Ok(procrustes(pred, gt)?.apply(pred))
}

pub fn mpjpe_pa(pred: &Pose, gt: &Pose) -> Result<f64> {
    let aligned = procrustes_align(pred, gt)?;
    Ok(mean(&absolute_errors(&aligned, gt)?))
}

/// Mean over persons of the absolute error of the person's mean depth (mm):
/// the part of absolute error explained by a rigid shift along camera z.
pub fn depth_offset_error(pred: &[Pose], gt: &[Pose]) -> Result<f64> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(Error::shape("depth_offset_error", "person counts differ"));
    }
    let mut total = 0.0;
    for (p, g) in pred.iter().zip(gt) {
        check(p, g, 0)?;
        let dz: f64 = p.0.iter().zip(&g.0).map(|(a, b)| a[2] - b[2]).sum::<f64>() / p.len() as f64;
        total += dz.abs() * MM;
    }
    Ok(total / pred.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneMetrics {
    pub id: String,
    pub mpjpe_mm: f64,
    pub mpjpe_pa_mm: f64,
    pub pck_pct: f64,
    pub auc_pct: f64,
    pub pck_abs_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mpjpe_mm: f64,
    pub mpjpe_pa_mm: f64,
    pub pck_pct: f64,
    pub auc_pct: f64,
    pub pck_abs_pct: f64,
    /// Joints aggregated over (persons × joints, summed over scenes).
    pub joints: usize,
    pub per_scene: Vec<SceneMetrics>,
}

#[derive(Default)]
struct Accum {
    rel: Vec<f64>,
    pa: Vec<f64>,
    abs: Vec<f64>,
}

impl Accum {
    fn add(&mut self, pred: &Pose, gt: &Pose, root: usize) -> Result<()> {
        self.rel.extend(root_relative_errors(pred, gt, root)?);
        self.pa.extend(absolute_errors(&procrustes_align(pred, gt)?, gt)?);
        self.abs.extend(absolute_errors(pred, gt)?);
        Ok(())
    }

    fn summary(&self, cfg: &MetricConfig) -> [f64; 5] {
        [
            mean(&self.rel),
            mean(&self.pa),
            pct_correct(&self.rel, cfg.pck_threshold_mm),
            auc_of(&self.rel, &cfg.auc_thresholds_mm),
            pct_correct(&self.abs, cfg.pck_abs_threshold_mm),
        ]
    }
}

/// Metrics of `predictions[i]` against the ground truth of `scenes[i]`,
/// aggregated as joint-weighted means over every person of every scene.
pub fn evaluate_predictions(
    scenes: &[Scene],
    predictions: &[Vec<Pose>],
    cfg: &MetricConfig,
) -> Result<MetricReport> {
    if scenes.len() != predictions.len() {
        return Err(Error::shape(
            "evaluate",
            format!("{} scenes, {} predictions", scenes.len(), predictions.len()),
        ));
    }
    if scenes.is_empty() {
        return Err(Error::Config("nothing to evaluate".into()));
    }
    let mut all = Accum::default();
    let mut per_scene = Vec::with_capacity(scenes.len());
    for (scene, pred) in scenes.iter().zip(predictions) {
        let gt = scene.gt()?;
        if gt.len() != pred.len() {
            return Err(Error::Scene {
                id: scene.id.clone(),
                reason: format!("{} predicted persons for {} in gt", pred.len(), gt.len()),
            });
        }
        let mut acc = Accum::default();
        for (p, g) in pred.iter().zip(gt) {
            acc.add(p, g, scene.root_index).map_err(|e| Error::Scene {
                id: scene.id.clone(),
                reason: e.to_string(),
            })?;
        }
        let [mpjpe_mm, mpjpe_pa_mm, pck_pct, auc_pct, pck_abs_pct] = acc.summary(cfg);
        per_scene.push(SceneMetrics {
            id: scene.id.clone(),
            mpjpe_mm,
            mpjpe_pa_mm,
            pck_pct,
            auc_pct,
            pck_abs_pct,
        });
        all.rel.extend(acc.rel);
        all.pa.extend(acc.pa);
        all.abs.extend(acc.abs);
    }
    let [mpjpe_mm, mpjpe_pa_mm, pck_pct, auc_pct, pck_abs_pct] = all.summary(cfg);
    Ok(MetricReport {
        mpjpe_mm,
        mpjpe_pa_mm,
        pck_pct,
        auc_pct,
        pck_abs_pct,
        joints: all.rel.len(),
        per_scene,
    })
}

/// Treats each scene's `persons` as the prediction.
pub fn evaluate(scenes: &[Scene], cfg: &MetricConfig) -> Result<MetricReport> {
    let preds: Vec<Vec<Pose>> = scenes.iter().map(|s| s.persons.clone()).collect();
    evaluate_predictions(scenes, &preds, cfg)
}

pub fn refine_all(model: &RefinerModel, scenes: &[Scene]) -> Result<Vec<Vec<Pose>>> {
    scenes
        .iter()
        .map(|s| model.refine(s).map(|r| r.refined))
        .collect()
}

pub fn evaluate_model(model: &RefinerModel, scenes: &[Scene], cfg: &MetricConfig) -> Result<MetricReport> {
    evaluate_predictions(scenes, &refine_all(model, scenes)?, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;
    use rand::Rng;
    use rand_distr::StandardNormal;

    use crate::rng;

    fn random_pose(r: &mut rng::Rng, j: usize) -> Pose {
        Pose((0..j).map(|_| [0, 1, 2].map(|_| r.gen_range(-0.8..0.8))).collect())
    }

    #[test]
    fn mpjpe_examples() {
        let gt = Pose(vec![[0.0, 0.0, 5.0], [0.2, -0.3, 5.1]]);
        assert_eq!(mpjpe(&gt, &gt, 0).unwrap(), 0.0);
        let shifted = gt.translated([1.0, -2.0, 0.5]);
        assert!(mpjpe(&shifted, &gt, 0).unwrap() < 1e-9);
        let mut off = gt.clone();
        off.0[1][0] += 0.1;
        assert!((mpjpe(&off, &gt, 0).unwrap() - 50.0).abs() < 1e-9);
        assert!(mpjpe(&off, &Pose(vec![[0.0; 3]]), 0).is_err());
    }

    #[test]
    fn pck_and_auc_examples() {
        let gt = Pose(vec![[0.0; 3], [0.0, 0.5, 0.0], [0.3, 0.0, 0.0], [0.0, 0.0, 0.4]]);
        assert_eq!(pck(&gt, &gt, 0, 150.0).unwrap(), 100.0);
        let cfg = MetricConfig::default();
        assert_eq!(cfg.auc_thresholds_mm.len(), 31);
        assert_eq!(auc(&gt, &gt, 0, &cfg.auc_thresholds_mm).unwrap(), 100.0);

        let mut half = gt.clone();
        half.0[1][0] += 0.2;
        half.0[2][1] += 0.2;
        assert_eq!(pck(&half, &gt, 0, 150.0).unwrap(), 50.0);

        // 150 mm exactly is a miss
        assert!(!is_correct(150.0, 150.0));
        assert!(is_correct(149.999, 150.0));

        let mut far = gt.clone();
        for j in 1..4 {
            far.0[j][2] += 0.2;
        }
        // only the root is exact
        assert!((auc(&far, &gt, 0, &cfg.auc_thresholds_mm).unwrap() - 25.0).abs() < 1e-12);

        let errs = [75.0];
        let expect = 100.0 * 15.0 / 31.0;
        assert!((auc_of(&errs, &cfg.auc_thresholds_mm) - expect).abs() < 1e-12);
        assert_eq!(auc_of(&[150.0, 200.0], &cfg.auc_thresholds_mm), 0.0);
    }

    #[test]
    fn pck_abs_examples() {
        let gt = Pose(vec![[0.0, 0.0, 5.0], [0.1, 0.4, 5.0], [0.3, 0.0, 5.2]]);
        assert_eq!(pck_abs(&gt, &gt, 250.0).unwrap(), 100.0);
        assert_eq!(pck_abs(&gt.translated([0.3, 0.0, 0.0]), &gt, 250.0).unwrap(), 0.0);
        assert_eq!(pck_abs(&gt.translated([0.0, 0.0, 0.2]), &gt, 250.0).unwrap(), 100.0);
    }

    #[test]
    fn procrustes_recovers_similarity() {
        let mut r = rng::rng(1);
        for _ in 0..50 {
            let gt = random_pose(&mut r, 15);
            let axis = Vector3::new(r.sample(StandardNormal), r.sample(StandardNormal), r.sample(StandardNormal));
            let rot = Rotation3::new(axis.normalize() * r.gen_range(-3.0..3.0));
            let tf = Similarity {
                rotation: *rot.matrix(),
                scale: r.gen_range(0.3..3.0),
                translation: Vector3::new(r.gen_range(-5.0..5.0), 1.0, r.gen_range(0.0..9.0)),
            };
            let pred = tf.apply(&gt);
            assert!(mpjpe_pa(&pred, &gt).unwrap() < 1e-6);
        }
        let gt = random_pose(&mut r, 6);
        let id = procrustes(&gt, &gt).unwrap();
        assert!((id.rotation - Matrix3::identity()).abs().max() < 1e-9);
        assert!((id.scale - 1.0).abs() < 1e-12);
        assert!(id.translation.norm() < 1e-9);
    }

    #[test]
    fn procrustes_never_reflects() {
        let mut r = rng::rng(2);
        let gt = random_pose(&mut r, 10);
        let mirrored = Pose(gt.0.iter().map(|j| [-j[0], j[1], j[2]]).collect());
        let s = procrustes(&mirrored, &gt).unwrap();
        assert!((s.rotation.determinant() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn procrustes_rejects_degenerate() {
        let line = Pose((0..5).map(|i| [i as f64, 2.0 * i as f64, 0.0]).collect());
        let mut r = rng::rng(3);
        let pred = random_pose(&mut r, 5);
        assert!(matches!(procrustes(&pred, &line), Err(Error::Degenerate(_))));
        let two = Pose(vec![[0.0; 3], [1.0, 0.0, 0.0]]);
        assert!(procrustes(&two, &two).is_err());
        let gt = random_pose(&mut r, 5);
        let point = Pose(vec![[1.0, 1.0, 1.0]; 5]);
        assert!(procrustes(&point, &gt).is_err());
    }

    /// The least-squares objective can only improve on root alignment, which is
    /// one particular similarity transform.
    #[test]
    fn alignment_minimizes_squared_error() {
        let mut r = rng::rng(4);
        for _ in 0..100 {
            let gt = random_pose(&mut r, 15);
            let mut pred = gt.clone();
            for j in pred.0.iter_mut() {
                for v in j.iter_mut() {
                    *v += 0.05 * r.sample::<f64, _>(StandardNormal);
                }
            }
            let sq = |e: Vec<f64>| e.iter().map(|x| x * x).sum::<f64>();
            let pa = sq(absolute_errors(&procrustes_align(&pred, &gt).unwrap(), &gt).unwrap());
            let ra = sq(root_relative_errors(&pred, &gt, 0).unwrap());
            assert!(pa <= ra + 1e-9);
        }
    }

    /// Minimizing squared error does not minimize mean distance: a single
    /// outlier joint makes the aligned mean error exceed the root-aligned one.
    #[test]
    fn aligned_mean_error_can_exceed_root_aligned() {
        let gt = Pose(vec![
            [0.0, 0.0, 0.0],
            [0.3, 0.0, 0.0],
            [0.0, 0.3, 0.0],
            [0.0, 0.0, 0.3],
            [0.3, 0.3, 0.0],
            [0.0, 0.3, 0.3],
        ]);
        let mut pred = gt.clone();
        pred.0[5][0] += 1.0;
        assert!(mpjpe_pa(&pred, &gt).unwrap() > mpjpe(&pred, &gt, 0).unwrap());
    }

    #[test]
    fn depth_offset_error_reads_rigid_shift() {
        let gt = vec![Pose(vec![[0.0, 0.0, 5.0], [0.1, 0.2, 5.3]]); 2];
        let pred = vec![gt[0].translated([0.0, 0.0, 0.1]), gt[1].translated([0.05, 0.0, -0.3])];
        assert!((depth_offset_error(&pred, &gt).unwrap() - 200.0).abs() < 1e-9);
    }

    #[test]
    fn evaluate_gt_is_perfect() {
        let mut r = rng::rng(5);
        let scenes: Vec<Scene> = (0..3)
            .map(|i| {
                let p: Vec<Pose> = (0..2).map(|_| random_pose(&mut r, 15)).collect();
                Scene::new(format!("s{i}"), p.clone(), Some(p))
            })
            .collect();
        let rep = evaluate(&scenes, &MetricConfig::default()).unwrap();
        assert_eq!(rep.mpjpe_mm, 0.0);
        assert!(rep.mpjpe_pa_mm < 1e-9);
        assert_eq!(rep.pck_pct, 100.0);
        assert_eq!(rep.auc_pct, 100.0);
        assert_eq!(rep.pck_abs_pct, 100.0);
        assert_eq!(rep.joints, 90);
        assert_eq!(rep.per_scene.len(), 3);
        let json = serde_json::to_value(&rep).unwrap();
        for k in ["mpjpe_mm", "mpjpe_pa_mm", "pck_pct", "auc_pct", "pck_abs_pct", "per_scene"] {
            assert!(json.get(k).is_some(), "{k}");
        }
        let no_gt = vec![Scene::new("x", scenes[0].persons.clone(), None)];
        assert!(matches!(evaluate(&no_gt, &MetricConfig::default()), Err(Error::MissingGroundTruth(_))));
    }
}
