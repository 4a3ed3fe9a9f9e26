//! Perturbation interaction matrices, the three-mode ablation driver, and
//! parameter/FLOP accounting.

use std::fmt::Write as _;
use std::time::Instant;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{evaluate, evaluate_model, MetricConfig, MetricReport};
use crate::model::{InteractionMode, ModelConfig, RefinerModel};
use crate::nn::{cost, Tape};
use crate::rng;
use crate::scene::{Pose, Scene};
use crate::train::{train, EpochRecord, TrainConfig};

/// How a joint is displaced when probing the refiner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Displacement {
    /// One refinement per joint with `(δ, δ, δ)` added.
    #[default]
    Joint,
    /// Three refinements per joint, one per axis; entries take the max.
    PerAxis,
}

/// `entries[r * size + c]`: the ∞-norm change of affected joint `r` when
/// joint `c` is displaced. Index `p * J + j` is joint `j` of person `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationMatrix {
    pub persons: usize,
    pub joints: usize,
    pub delta: f64,
    pub entries: Vec<f64>,
}

impl PerturbationMatrix {
    pub fn size(&self) -> usize {
        self.persons * self.joints
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.entries[row * self.size() + col]
    }

    pub fn label(&self, index: usize) -> String {
        format!("p{}_j{}", index / self.joints, index % self.joints)
    }

    /// Largest entry whose affected and perturbed joints belong to different persons.
    pub fn max_cross_person(&self) -> f64 {
        let n = self.size();
        let mut best = 0.0f64;
        for r in 0..n {
            for c in 0..n {
                if r / self.joints != c / self.joints {
                    best = best.max(self.get(r, c));
                }
            }
        }
        best
    }

    pub fn to_csv(&self) -> String {
        let n = self.size();
        let mut out = String::new();
        for c in 0..n {
            write!(out, ",{}", self.label(c)).unwrap();
        }
        out.push('\n');
        for r in 0..n {
            out.push_str(&self.label(r));
            for c in 0..n {
                write!(out, ",{}", self.get(r, c)).unwrap();
            }
            out.push('\n');
        }
        out
    }
}

fn displaced(scene: &Scene, index: usize, offset: [f64; 3]) -> Scene {
    let j = scene.num_joints();
    let mut s = scene.clone();
    let joint = &mut s.persons[index / j].0[index % j];
    for k in 0..3 {
        joint[k] += offset[k];
    }
    s
}

fn inf_change(a: &[Pose], b: &[Pose], out: &mut [f64], stride: usize, col: usize) {
    let mut row = 0;
    for (pa, pb) in a.iter().zip(b) {
        for (ja, jb) in pa.0.iter().zip(&pb.0) {
            let m = (0..3).map(|k| (ja[k] - jb[k]).abs()).fold(0.0, f64::max);
            let e = &mut out[row * stride + col];
            *e = e.max(m);
            row += 1;
        }
    }
}

pub fn perturbation_matrix(
    model: &RefinerModel,
    scene: &Scene,
    delta: f64,
    how: Displacement,
) -> Result<PerturbationMatrix> {
    if !delta.is_finite() {
        return Err(Error::Config(format!("delta must be finite, got {delta}")));
    }
    let base = model.refine(scene)?.refined;
    let (persons, joints) = (scene.num_persons(), scene.num_joints());
    let n = persons * joints;
    let offsets: Vec<[f64; 3]> = match how {
        Displacement::Joint => vec![[delta; 3]],
        Displacement::PerAxis => (0..3)
            .map(|k| {
                let mut o = [0.0; 3];
                o[k] = delta;
                o
            })
            .collect(),
    };
    let mut entries = vec![0.0; n * n];
    for c in 0..n {
        for &o in &offsets {
            let out = model.refine(&displaced(scene, c, o))?.refined;
            inf_change(&out, &base, &mut entries, n, c);
        }
    }
    Ok(PerturbationMatrix {
        persons,
        joints,
        delta,
        entries,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeResult {
    pub mode: InteractionMode,
    pub report: MetricReport,
    pub final_train_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub initial: MetricReport,
    pub modes: Vec<ModeResult>,
    /// people ≤ scene ≤ none in MPJPE. Reported, not required.
    pub ordering_holds: bool,
}

impl AblationReport {
    pub fn mode(&self, mode: InteractionMode) -> Option<&ModeResult> {
        self.modes.iter().find(|m| m.mode == mode)
    }
}

/// Trains one model per interaction mode from the same seed, budget and
/// architecture, and evaluates each on `heldout`.
pub fn ablation_run(
    train_set: &[Scene],
    heldout: &[Scene],
    base: &ModelConfig,
    budget: &TrainConfig,
    model_seed: u64,
    metrics: &MetricConfig,
    mut on_epoch: impl FnMut(InteractionMode, &EpochRecord),
) -> Result<AblationReport> {
    let initial = evaluate(heldout, metrics)?;
    let mut modes = Vec::with_capacity(3);
    for mode in InteractionMode::ALL {
        let cfg = ModelConfig { mode, ..*base };
        let mut model = RefinerModel::init(cfg, model_seed)?;
        let log = train(&mut model, train_set, heldout, budget, |r| on_epoch(mode, r))?;
        modes.push(ModeResult {
            mode,
            report: evaluate_model(&model, heldout, metrics)?,
            final_train_loss: log.last().map_or(f64::NAN, |r| r.train_loss),
        });
    }
    let mpjpe = |m: InteractionMode| modes.iter().find(|r| r.mode == m).map(|r| r.report.mpjpe_mm);
    let ordering_holds = matches!(
        (mpjpe(InteractionMode::People), mpjpe(InteractionMode::Scene), mpjpe(InteractionMode::None)),
        (Some(p), Some(s), Some(n)) if p <= s && s <= n
    );
    Ok(AblationReport {
        initial,
        modes,
        ordering_holds,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub parameters: usize,
    pub persons: usize,
    pub joints: usize,
    /// One refine call, counted per op kind.
    pub flops: u64,
    /// Median of several refine calls; hardware dependent.
    pub wall_clock_ms: f64,
}

fn linear_flops(m: usize, fan_in: usize, fan_out: usize) -> u64 {
    cost::matmul(m, fan_in, fan_out) + cost::elementwise(m, fan_out)
}

fn ff_flops(m: usize, d: usize) -> u64 {
    2 * linear_flops(m, d, d) + cost::elementwise(m, d)
}

fn mab_flops(mq: usize, mk: usize, d: usize, heads: usize) -> u64 {
    let dh = d / heads;
    let attention = heads as u64
        * (cost::matmul(mq, dh, mk)
            + cost::elementwise(mq, mk)
            + cost::softmax(mq, mk)
            + cost::matmul(mq, mk, dh));
    linear_flops(mq, d, d)
        + 2 * linear_flops(mk, d, d)
        + attention
        + linear_flops(mq, d, d)
        + 2 * cost::elementwise(mq, d)
        + 2 * cost::layer_norm(mq, d)
        + ff_flops(mq, d)
}

fn embed_flops(c: &ModelConfig, m: usize) -> u64 {
    c.blocks as u64 * mab_flops(m, m, c.dim, c.heads)
        + ff_flops(m, c.dim)
        + mab_flops(1, m, c.dim, c.heads)
}

/// Analytic FLOPs of one refine of `persons` people.
pub fn refine_flops(c: &ModelConfig, persons: usize) -> u64 {
    let (n, d, out) = (persons, c.dim, 3 * c.joints);
    let encoder = match c.mode {
        InteractionMode::People => linear_flops(n, out, d) + embed_flops(c, n),
        InteractionMode::Scene => {
            linear_flops(n, out, d) + linear_flops(n * c.joints, 3, d) + embed_flops(c, n * c.joints)
        }
        InteractionMode::None => n as u64 * (linear_flops(1, out, d) + embed_flops(c, 1)),
    };
    let decoder = linear_flops(n, 2 * d, c.decoder_hidden)
        + cost::elementwise(n, c.decoder_hidden)
        + linear_flops(n, c.decoder_hidden, out);
    encoder + decoder + cost::elementwise(n, out)
}

/// A deterministic stand-in scene of the right shape for timing.
pub fn probe_scene(persons: usize, joints: usize) -> Scene {
    let mut r = rng::child(0x5eed, persons as u64);
    let poses = (0..persons)
        .map(|p| {
            Pose(
                (0..joints)
                    .map(|_| [p as f64 + r.gen_range(-0.5..0.5), r.gen_range(-1.0..1.0), 5.0 + r.gen_range(-0.5..0.5)])
                    .collect(),
            )
        })
        .collect();
    Scene::new("probe", poses, None)
}

/// FLOPs actually recorded on a tape for one refine.
pub fn recorded_flops(model: &RefinerModel, scene: &Scene) -> Result<u64> {
    let mut tape = Tape::new();
    model.forward(&mut tape, scene)?;
    Ok(tape.flops())
}

pub fn count_cost(model: &RefinerModel, persons: usize) -> Result<CostReport> {
    if persons == 0 {
        return Err(Error::Config("persons must be at least 1".into()));
    }
    let c = model.config();
    let scene = probe_scene(persons, c.joints);
    let mut times = Vec::with_capacity(9);
    for _ in 0..9 {
        let t = Instant::now();
        model.refine(&scene)?;
        times.push(t.elapsed().as_secs_f64() * 1e3);
    }
    times.sort_by(f64::total_cmp);
    Ok(CostReport {
        parameters: model.parameter_count(),
        persons,
        joints: c.joints,
        flops: refine_flops(c, persons),
        wall_clock_ms: times[times.len() / 2],
    })
}
