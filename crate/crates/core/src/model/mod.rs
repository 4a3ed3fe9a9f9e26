//! The refiner network: per-person projection, stacked set-attention blocks,
//! single-seed attention pooling into an interaction embedding, and an MLP
//! decoding per-person corrections that are added to the initial poses.

mod config;
mod io;

use rand::Rng as _;

pub use config::{InteractionMode, ModelConfig};
pub use io::{load, read_model, save, write_model, FORMAT_VERSION, MAGIC};

use crate::error::{Error, Result};
use crate::nn::{ParamId, ParamSet, Tape, Tensor, Var};
use crate::rng;
use crate::scene::{matrix_to_poses, poses_to_matrix, Joint, Pose, Scene};

#[derive(Debug, Clone, Copy)]
struct Linear {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct Norm {
    gain: ParamId,
    bias: ParamId,
}

/// Row-wise `d → d → d` block with one ReLU hidden layer.
#[derive(Debug, Clone, Copy)]
struct FeedForward {
    hidden: Linear,
    out: Linear,
}

/// `LayerNorm(H + rFF(H))`, `H = LayerNorm(X + Multihead(X, Y, Y))`.
#[derive(Debug, Clone, Copy)]
struct Mab {
    query: Linear,
    key: Linear,
    value: Linear,
    out: Linear,
    norm1: Norm,
    ff: FeedForward,
    norm2: Norm,
}

#[derive(Debug, Clone, Copy)]
struct Pma {
    seed: ParamId,
    ff: FeedForward,
    mab: Mab,
}

#[derive(Debug, Clone)]
struct Layout {
    person_proj: Linear,
    joint_proj: Option<Linear>,
    sabs: Vec<Mab>,
    pma: Pma,
    decoder_hidden: Linear,
    decoder_out: Linear,
}

/// Parameter declaration callback: (name, shape, initializer) -> id.
trait Declare: FnMut(String, Vec<usize>, Init) -> Result<ParamId> {}
impl<F: FnMut(String, Vec<usize>, Init) -> Result<ParamId>> Declare for F {}

#[derive(Debug, Clone, Copy)]
pub(crate) enum Init {
    Glorot { fan_in: usize, fan_out: usize },
    Zeros,
    Ones,
}

fn linear_decl<F: Declare>(decl: &mut F, name: &str, i: usize, o: usize, zero: bool) -> Result<Linear> {
    let init = if zero {
        Init::Zeros
    } else {
        Init::Glorot {
            fan_in: i,
            fan_out: o,
        }
    };
    Ok(Linear {
        w: decl(format!("{name}.w"), vec![i, o], init)?,
        b: decl(format!("{name}.b"), vec![o], Init::Zeros)?,
    })
}

fn norm_decl<F: Declare>(decl: &mut F, name: &str, d: usize) -> Result<Norm> {
    Ok(Norm {
        gain: decl(format!("{name}.gain"), vec![d], Init::Ones)?,
        bias: decl(format!("{name}.bias"), vec![d], Init::Zeros)?,
    })
}

fn ff_decl<F: Declare>(decl: &mut F, name: &str, d: usize) -> Result<FeedForward> {
    Ok(FeedForward {
        hidden: linear_decl(decl, &format!("{name}.hidden"), d, d, false)?,
        out: linear_decl(decl, &format!("{name}.out"), d, d, false)?,
    })
}

fn mab_decl<F: Declare>(decl: &mut F, name: &str, d: usize) -> Result<Mab> {
    Ok(Mab {
        query: linear_decl(decl, &format!("{name}.query"), d, d, false)?,
        key: linear_decl(decl, &format!("{name}.key"), d, d, false)?,
        value: linear_decl(decl, &format!("{name}.value"), d, d, false)?,
        out: linear_decl(decl, &format!("{name}.out"), d, d, false)?,
        norm1: norm_decl(decl, &format!("{name}.norm1"), d)?,
        ff: ff_decl(decl, &format!("{name}.ff"), d)?,
        norm2: norm_decl(decl, &format!("{name}.norm2"), d)?,
    })
}

impl Layout {
    /// Declares every parameter in canonical order through `decl`.
    fn build<F: Declare>(c: &ModelConfig, decl: &mut F) -> Result<Layout> {
        let d = c.dim;
        let person_proj = linear_decl(decl, "person_proj", 3 * c.joints, d, false)?;
        let joint_proj = match c.mode {
            InteractionMode::Scene => Some(linear_decl(decl, "joint_proj", 3, d, false)?),
            _ => None,
        };
        let sabs = (0..c.blocks)
            .map(|k| mab_decl(decl, &format!("sab{k}"), d))
            .collect::<Result<Vec<_>>>()?;
        let seed = decl(
            "pma.seed".into(),
            vec![1, d],
            Init::Glorot {
                fan_in: 1,
                fan_out: d,
            },
        )?;
        let pma = Pma {
            seed,
            ff: ff_decl(decl, "pma.ff", d)?,
            mab: mab_decl(decl, "pma.mab", d)?,
        };
        let decoder_hidden = linear_decl(decl, "decoder.hidden", 2 * d, c.decoder_hidden, false)?;
        let decoder_out = linear_decl(decl, "decoder.out", c.decoder_hidden, 3 * c.joints, true)?;
        Ok(Layout {
            person_proj,
            joint_proj,
            sabs,
            pma,
            decoder_hidden,
            decoder_out,
        })
    }
}

/// Nodes produced by one forward pass on a tape.
#[derive(Debug, Clone)]
pub struct Forward {
    /// Tape leaf for every parameter, in [`ParamSet`] order.
    pub params: Vec<Var>,
    /// `N × 3J` corrections.
    pub corrections: Var,
    /// `N × 3J` refined poses (initial + corrections).
    pub refined: Var,
    /// `1 × d`, or `N × d` in [`InteractionMode::None`] (one per singleton set).
    pub embedding: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Refinement {
    pub refined: Vec<Pose>,
    pub corrections: Vec<Pose>,
    /// Interaction embedding; one row, or one row per person in mode `none`.
    pub embedding: Tensor,
}

#[derive(Debug, Clone)]
pub struct RefinerModel {
    config: ModelConfig,
    params: ParamSet,
    layout: Layout,
}

impl PartialEq for RefinerModel {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.params == other.params
    }
}

impl RefinerModel {
    /// Glorot-uniform weights, zero biases, unit layer-norm gains, and a zero
    /// decoder output layer (so the untrained model is the identity refiner).
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new();
        let mut counter = 0u64;
        let layout = Layout::build(&config, &mut |name: String, shape: Vec<usize>, init: Init| {
            let n: usize = shape.iter().product();
            let mut r = rng::child(seed, counter);
            counter += 1;
            let data = match init {
                Init::Zeros => vec![0.0; n],
                Init::Ones => vec![1.0; n],
                Init::Glorot { fan_in, fan_out } => {
                    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    (0..n).map(|_| r.gen_range(-limit..limit)).collect()
                }
            };
            Ok(params.push(name, Tensor::new(&shape, data)?))
        })?;
        Ok(RefinerModel {
            config,
            params,
            layout,
        })
    }

    /// Reassembles a model from named tensors, enforcing the canonical layout.
    pub fn from_params(config: ModelConfig, named: Vec<(String, Tensor)>) -> Result<Self> {
        config.validate()?;
        let mut pool: std::collections::HashMap<String, Tensor> = named.into_iter().collect();
        let mut params = ParamSet::new();
        let layout = Layout::build(&config, &mut |name: String, shape: Vec<usize>, _: Init| {
            let t = pool
                .remove(&name)
                .ok_or_else(|| Error::CorruptModel(format!("missing parameter `{name}`")))?;
            if t.shape() != shape.as_slice() {
                return Err(Error::CorruptModel(format!(
                    "parameter `{name}` has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
            if !t.is_finite() {
                return Err(Error::CorruptModel(format!("parameter `{name}` is not finite")));
            }
            Ok(params.push(name, t))
        })?;
        if let Some(extra) = pool.keys().next() {
            return Err(Error::CorruptModel(format!("unexpected parameter `{extra}`")));
        }
        Ok(RefinerModel {
            config,
            params,
            layout,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.scalar_count()
    }

    /// Zeroes the decoder's output layer, turning the model into the identity refiner.
    pub fn zero_output_layer(&mut self) {
        for id in [self.layout.decoder_out.w, self.layout.decoder_out.b] {
            self.params.get_mut(id).data_mut().fill(0.0);
        }
    }

    /// Weight and bias of the decoder output layer.
    pub fn output_layer(&self) -> [ParamId; 2] {
        [self.layout.decoder_out.w, self.layout.decoder_out.b]
    }

    fn check_scene(&self, scene: &Scene) -> Result<()> {
        scene.validate(None)?;
        if scene.num_joints() != self.config.joints {
            return Err(Error::Config(format!(
                "scene `{}` has {} joints per person, model expects {}",
                scene.id,
                scene.num_joints(),
                self.config.joints
            )));
        }
        Ok(())
    }

    /// Joint coordinates after removing the translation the network never sees:
    /// the mean root of the scene, or each person's own root in mode `none`.
    fn centered_inputs(&self, scene: &Scene) -> Vec<Pose> {
        let r = scene.root_index;
        match self.config.mode {
            InteractionMode::None => scene
                .persons
                .iter()
                .map(|p| p.translated(neg(p.0[r])))
                .collect(),
            _ => {
                let c = scene.root_centroid();
                scene.persons.iter().map(|p| p.translated(neg(c))).collect()
            }
        }
    }

    /// Per-person network inputs: root-relative joints, with the root slot
    /// holding the centered root position. A linear bijection of
    /// [`centered_inputs`](Self::centered_inputs), so placement is kept while
    /// the pose itself no longer carries the person's offset.
    fn person_inputs(&self, scene: &Scene) -> Vec<Pose> {
        let r = scene.root_index;
        self.centered_inputs(scene)
            .into_iter()
            .map(|mut p| {
                let root = p.0[r];
                for (j, q) in p.0.iter_mut().enumerate() {
                    if j != r {
                        *q = [q[0] - root[0], q[1] - root[1], q[2] - root[2]];
                    }
                }
                p
            })
            .collect()
    }

    fn bind(&self, tape: &mut Tape) -> Result<Vec<Var>> {
        self.params.iter().map(|p| tape.leaf(p.value.clone())).collect()
    }

    /// Records the full refinement of `scene` on `tape`.
    pub fn forward(&self, tape: &mut Tape, scene: &Scene) -> Result<Forward> {
        let vars = self.bind(tape)?;
        self.forward_with(tape, vars, scene)
    }

    /// As [`forward`](Self::forward), but with caller-provided leaves standing
    /// in for the parameters (one per tensor, in [`ParamSet`] order).
    pub fn forward_with(&self, tape: &mut Tape, vars: Vec<Var>, scene: &Scene) -> Result<Forward> {
        self.check_scene(scene)?;
        if vars.len() != self.params.len() {
            return Err(Error::shape(
                "forward",
                format!("{} parameter leaves for {} parameters", vars.len(), self.params.len()),
            ));
        }
        let inputs = self.person_inputs(scene);
        let (person_feats, embedding, expanded) = match self.config.mode {
            InteractionMode::None => {
                let mut feats = Vec::with_capacity(inputs.len());
                let mut embs = Vec::with_capacity(inputs.len());
                for p in &inputs {
                    let x = tape.leaf(poses_to_matrix(std::slice::from_ref(p))?)?;
                    let f = linear(tape, &vars, self.layout.person_proj, x)?;
                    embs.push(self.embed_on_tape(tape, &vars, f)?);
                    feats.push(f);
                }
                let feats = tape.concat_rows(&feats)?;
                let emb = tape.concat_rows(&embs)?;
                (feats, emb, emb)
            }
            mode => {
                let x = tape.leaf(poses_to_matrix(&inputs)?)?;
                let feats = linear(tape, &vars, self.layout.person_proj, x)?;
                let set = if mode == InteractionMode::Scene {
                    let n = scene.num_persons() * self.config.joints;
                    let joints = tape.leaf(poses_to_matrix(&self.centered_inputs(scene))?.reshape(&[n, 3])?)?;
                    let proj = self.layout.joint_proj.expect("scene mode has a joint projection");
                    linear(tape, &vars, proj, joints)?
                } else {
                    feats
                };
                let emb = self.embed_on_tape(tape, &vars, set)?;
                let expanded = tape.repeat_rows(emb, scene.num_persons())?;
                (feats, emb, expanded)
            }
        };
        let dec_in = tape.concat_cols(&[expanded, person_feats])?;
        let h = linear(tape, &vars, self.layout.decoder_hidden, dec_in)?;
        let h = tape.relu(h)?;
        let corrections = linear(tape, &vars, self.layout.decoder_out, h)?;
        let initial = tape.leaf(poses_to_matrix(&scene.persons)?)?;
        let refined = tape.add(initial, corrections)?;
        Ok(Forward {
            params: vars,
            corrections,
            refined,
            embedding,
        })
    }

    fn embed_on_tape(&self, tape: &mut Tape, vars: &[Var], set: Var) -> Result<Var> {
        let mut z = set;
        for block in &self.layout.sabs {
            z = mab(tape, vars, block, z, z, self.config.heads)?;
        }
        pma(tape, vars, &self.layout.pma, z, self.config.heads)
    }

    pub fn refine(&self, scene: &Scene) -> Result<Refinement> {
        let mut tape = Tape::new();
        let fwd = self.forward(&mut tape, scene)?;
        Ok(Refinement {
            refined: matrix_to_poses(tape.value(fwd.refined)),
            corrections: matrix_to_poses(tape.value(fwd.corrections)),
            embedding: tape.value(fwd.embedding).clone(),
        })
    }

    pub fn embedding(&self, scene: &Scene) -> Result<Tensor> {
        Ok(self.refine(scene)?.embedding)
    }

    /// Set elements after projection: one `M × d` set, or `N` singleton sets in mode `none`.
    pub fn encode_set(&self, scene: &Scene) -> Result<Vec<Tensor>> {
        self.check_scene(scene)?;
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape)?;
        let x = tape.leaf(poses_to_matrix(&self.person_inputs(scene))?)?;
        match self.config.mode {
            InteractionMode::People => {
                let f = linear(&mut tape, &vars, self.layout.person_proj, x)?;
                Ok(vec![tape.value(f).clone()])
            }
            InteractionMode::Scene => {
                let n = scene.num_persons() * self.config.joints;
                let joints = tape.leaf(poses_to_matrix(&self.centered_inputs(scene))?.reshape(&[n, 3])?)?;
                let proj = self.layout.joint_proj.expect("scene mode has a joint projection");
                let f = linear(&mut tape, &vars, proj, joints)?;
                Ok(vec![tape.value(f).clone()])
            }
            InteractionMode::None => {
                let f = linear(&mut tape, &vars, self.layout.person_proj, x)?;
                let t = tape.value(f);
                (0..t.rows())
                    .map(|i| Tensor::matrix(1, t.cols(), t.row(i).to_vec()))
                    .collect()
            }
        }
    }

    /// Applies SAB block `block` to an `M × d` set.
    pub fn sab_forward(&self, block: usize, x: &Tensor) -> Result<Tensor> {
        let b = *self.layout.sabs.get(block).ok_or(Error::OutOfRange {
            index: block,
            limit: self.layout.sabs.len(),
        })?;
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape)?;
        let xv = tape.leaf(x.clone())?;
        let y = mab(&mut tape, &vars, &b, xv, xv, self.config.heads)?;
        Ok(tape.value(y).clone())
    }

    /// Pools an `M × d` set into a single `1 × d` row.
    pub fn pma_forward(&self, z: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape)?;
        let zv = tape.leaf(z.clone())?;
        let y = pma(&mut tape, &vars, &self.layout.pma, zv, self.config.heads)?;
        Ok(tape.value(y).clone())
    }

    /// Loss and gradients (in [`ParamSet`] order) for one scene with ground truth.
    pub fn loss_and_grads(&self, scene: &Scene) -> Result<(f64, Vec<Tensor>)> {
        let gt = scene.gt()?;
        let mut tape = Tape::new();
        let fwd = self.forward(&mut tape, scene)?;
        let gt = tape.leaf(poses_to_matrix(gt)?)?;
        let loss = loss_on_tape(&mut tape, fwd.refined, gt)?;
        let value = tape.value(loss).data()[0];
        let mut grads = tape.backward(loss)?;
        let g = fwd
            .params
            .iter()
            .zip(self.params.iter())
            .map(|(&v, p)| grads.take(v).unwrap_or_else(|| Tensor::zeros(p.value.shape())))
            .collect();
        Ok((value, g))
    }
}

fn neg(j: Joint) -> Joint {
    [-j[0], -j[1], -j[2]]
}

fn linear(tape: &mut Tape, vars: &[Var], l: Linear, x: Var) -> Result<Var> {
    let y = tape.matmul(x, vars[l.w.0])?;
    tape.add_row(y, vars[l.b.0])
}

fn feed_forward(tape: &mut Tape, vars: &[Var], f: &FeedForward, x: Var) -> Result<Var> {
    let h = linear(tape, vars, f.hidden, x)?;
    let h = tape.relu(h)?;
    linear(tape, vars, f.out, h)
}

fn mab(tape: &mut Tape, vars: &[Var], m: &Mab, x: Var, y: Var, heads: usize) -> Result<Var> {
    let q = linear(tape, vars, m.query, x)?;
    let k = linear(tape, vars, m.key, y)?;
    let v = linear(tape, vars, m.value, y)?;
    let d = tape.value(q).cols();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = tape.slice_cols(q, h * dh, dh)?;
        let kh = tape.slice_cols(k, h * dh, dh)?;
        let vh = tape.slice_cols(v, h * dh, dh)?;
        let s = tape.matmul_nt(qh, kh)?;
        let s = tape.scale(s, scale)?;
        let a = tape.softmax_rows(s)?;
        outs.push(tape.matmul(a, vh)?);
    }
    let cat = if heads == 1 {
        outs[0]
    } else {
        tape.concat_cols(&outs)?
    };
    let attn = linear(tape, vars, m.out, cat)?;
    let res = tape.add(x, attn)?;
    let hn = tape.layer_norm(res, vars[m.norm1.gain.0], vars[m.norm1.bias.0])?;
    let ff = feed_forward(tape, vars, &m.ff, hn)?;
    let res2 = tape.add(hn, ff)?;
    tape.layer_norm(res2, vars[m.norm2.gain.0], vars[m.norm2.bias.0])
}

fn pma(tape: &mut Tape, vars: &[Var], p: &Pma, z: Var, heads: usize) -> Result<Var> {
    let zf = feed_forward(tape, vars, &p.ff, z)?;
    mab(tape, vars, &p.mab, vars[p.seed.0], zf, heads)
}

/// Per-scene objective on the tape: mean over persons of the squared
/// Euclidean norm of the 3J-vector error.
pub fn loss_on_tape(tape: &mut Tape, refined: Var, gt: Var) -> Result<Var> {
    let per_person = tape.value(refined).cols() as f64;
    let m = tape.mse(refined, gt)?;
    tape.scale(m, per_person)
}

/// Plain evaluation of the same objective, arithmetic identical to [`loss_on_tape`].
pub fn pose_loss(refined: &[Pose], gt: &[Pose]) -> Result<f64> {
    if refined.len() != gt.len() || refined.iter().zip(gt).any(|(a, b)| a.len() != b.len()) {
        return Err(Error::shape("loss", "refined and gt shapes differ"));
    }
    let (mut s, mut count) = (0.0, 0usize);
    for (a, b) in refined.iter().zip(gt) {
        for (x, y) in a.flat().zip(b.flat()) {
            s += (x - y) * (x - y);
            count += 1;
        }
    }
    let per_person = 3 * refined.first().map_or(0, Pose::len);
    Ok(s / count as f64 * per_person as f64)
}
