//! Mini-batch ADAM training of a [`RefinerModel`] on scenes with ground truth.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::root_relative_errors;
use crate::model::{pose_loss, RefinerModel};
use crate::nn::{AdamConfig, AdamState, Tensor};
use crate::rng;
use crate::scene::Scene;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Drives the per-epoch shuffles only.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 32,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        let a = &self.adam;
        let ok = a.lr > 0.0
            && a.lr.is_finite()
            && (0.0..1.0).contains(&a.beta1)
            && (0.0..1.0).contains(&a.beta2)
            && a.eps > 0.0;
        if !ok {
            return Err(Error::Config(format!("invalid adam settings {a:?}")));
        }
        Ok(())
    }
}

/// One line of the training log. Epoch 0 describes the untrained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-scene loss; for epochs ≥ 1, each batch is scored with the
    /// parameters it was about to update.
    pub train_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub heldout_mpjpe_mm: Option<f64>,
    pub steps: u64,
}

/// Joint-weighted root-relative MPJPE of the model's refinements.
pub fn heldout_mpjpe(model: &RefinerModel, scenes: &[Scene]) -> Result<f64> {
    let (mut sum, mut count) = (0.0, 0usize);
    for scene in scenes {
        let refined = model.refine(scene)?.refined;
        for (p, g) in refined.iter().zip(scene.gt()?) {
            let e = root_relative_errors(p, g, scene.root_index)?;
            sum += e.iter().sum::<f64>();
            count += e.len();
        }
    }
    if count == 0 {
        return Err(Error::Config("empty held-out set".into()));
    }
    Ok(sum / count as f64)
}

fn mean_loss(model: &RefinerModel, scenes: &[Scene]) -> Result<f64> {
    let mut total = 0.0;
    for s in scenes {
        total += pose_loss(&model.refine(s)?.refined, s.gt()?)?;
    }
    Ok(total / scenes.len() as f64)
}

pub struct Trainer {
    pub config: TrainConfig,
    adam: AdamState,
    epoch: usize,
}

impl Trainer {
    pub fn new(config: TrainConfig, model: &RefinerModel) -> Result<Self> {
        config.validate()?;
        Ok(Trainer {
            config,
            adam: AdamState::new(config.adam, model.params()),
            epoch: 0,
        })
    }

    pub fn steps(&self) -> u64 {
        self.adam.steps()
    }

    /// Averages the batch's per-scene gradients in order and takes one step.
    /// Returns the mean batch loss.
    pub fn step(&mut self, model: &mut RefinerModel, batch: &[&Scene]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Config("empty batch".into()));
        }
        let mut acc: Vec<Tensor> = model.params().zeros_like();
        let mut loss = 0.0;
        for scene in batch {
            let (l, g) = model.loss_and_grads(scene)?;
            if !l.is_finite() {
                return Err(Error::Diverged {
                    epoch: self.epoch,
                    step: self.adam.steps() as usize,
                });
            }
            loss += l;
            for (a, g) in acc.iter_mut().zip(&g) {
                a.add_assign(g);
            }
        }
        let inv = 1.0 / batch.len() as f64;
        for a in acc.iter_mut() {
            a.data_mut().iter_mut().for_each(|v| *v *= inv);
        }
        self.adam.step(model.params_mut(), &acc)?;
        Ok(loss * inv)
    }

    /// One pass over `scenes` in a seeded shuffled order.
    pub fn epoch(&mut self, model: &mut RefinerModel, scenes: &[Scene]) -> Result<f64> {
        self.epoch += 1;
        let mut order: Vec<usize> = (0..scenes.len()).collect();
        order.shuffle(&mut rng::child(self.config.seed, self.epoch as u64));
        let mut total = 0.0;
        for chunk in order.chunks(self.config.batch_size) {
            let batch: Vec<&Scene> = chunk.iter().map(|&i| &scenes[i]).collect();
            total += self.step(model, &batch)? * batch.len() as f64;
        }
        Ok(total / scenes.len() as f64)
    }
}

/// Trains for `config.epochs` epochs, reporting an epoch-0 record first.
/// `heldout` may be empty, in which case no held-out MPJPE is logged.
pub fn train(
    model: &mut RefinerModel,
    train_set: &[Scene],
    heldout: &[Scene],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<Vec<EpochRecord>> {
    if train_set.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    for s in train_set.iter().chain(heldout) {
        s.gt()?;
    }
    let mut trainer = Trainer::new(*config, model)?;
    let score = |m: &RefinerModel| -> Result<Option<f64>> {
        if heldout.is_empty() {
            Ok(None)
        } else {
            heldout_mpjpe(m, heldout).map(Some)
        }
    };

    let mut log = Vec::with_capacity(config.epochs + 1);
    let loss0 = mean_loss(model, train_set)?;
    if !loss0.is_finite() {
        return Err(Error::Diverged { epoch: 0, step: 0 });
    }
    log.push(EpochRecord {
        epoch: 0,
        train_loss: loss0,
        heldout_mpjpe_mm: score(model)?,
        steps: 0,
    });
    on_epoch(&log[0]);

    for epoch in 1..=config.epochs {
        let train_loss = trainer.epoch(model, train_set)?;
        let rec = EpochRecord {
            epoch,
            train_loss,
            heldout_mpjpe_mm: score(model)?,
            steps: trainer.steps(),
        };
        on_epoch(&rec);
        log.push(rec);
    }
    Ok(log)
}
