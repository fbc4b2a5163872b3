//! Contrastive pretraining against frozen embedding triplets and zero-shot
//! evaluation through the class prompt features.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::autodiff::{LrSchedule, Optimizer};
use crate::data::{Axis, PointCloud};
use crate::error::{Error, Result};
use crate::geom::{build_voxel_grid, enumerate_test_subclouds};
use crate::model::{ModelInput, PointNeXt};
use crate::scalar::Real;
use crate::seed::stream_seed;
use crate::train::config::{Init, Task, TrainConfig};
use crate::train::eval::subcloud;
use crate::train::loader::{epoch_schedule, for_each_batch, VIEW_STREAM};
use crate::train::select::{metadata_path, parameter_checksum, CheckpointMetadata, History, HistoryRow};
use crate::train::trainer::{config_hash, model_config};
use crate::ulip::{embed, pretrain_step, zero_shot_classify, ClassPrompts, EmbeddingTriplet, ProjectionHead};

/// Embedding triplets matched to clouds by name.
pub fn match_embeddings<'a, T>(clouds: &[PointCloud<T>], triplets: &'a [EmbeddingTriplet]) -> Result<Vec<&'a EmbeddingTriplet>> {
    let by_name: HashMap<&str, &EmbeddingTriplet> = triplets.iter().map(|t| (t.name.as_str(), t)).collect();
    clouds
        .iter()
        .map(|c| by_name.get(c.name.as_str()).copied().ok_or_else(|| Error::invalid(format!("no embedding triplet for {}", c.name))))
        .collect()
}

/// Mean of the normalized embeddings of every test sub-cloud, renormalized.
pub fn cloud_embedding<T: Real>(model: &PointNeXt<T>, head: &ProjectionHead, cloud: &PointCloud<T>, voxel_size: f64, up: Axis) -> Result<Vec<f64>> {
    let grid = build_voxel_grid(&cloud.coords, T::of(voxel_size))?;
    let mut acc = vec![0.0; head.dim];
    for idx in enumerate_test_subclouds(&grid)? {
        let input = ModelInput::prepare(&[subcloud(cloud, &idx, up)], model.config(), None)?;
        let e = embed(model, head, &input)?;
        acc.iter_mut().zip(&e[0]).for_each(|(a, v)| *a += v);
    }
    let n = acc.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
    Ok(acc.into_iter().map(|v| v / n).collect())
}

/// Percentage of clouds whose nearest class prompt matches the type label.
pub fn zero_shot_accuracy<T: Real>(
    model: &PointNeXt<T>,
    head: &ProjectionHead,
    clouds: &[PointCloud<T>],
    prompts: &ClassPrompts,
    voxel_size: f64,
    up: Axis,
) -> Result<f64> {
    if clouds.is_empty() {
        return Err(Error::invalid("zero-shot evaluation on an empty split"));
    }
    let feats = prompts.features()?;
    let hits = clouds
        .par_iter()
        .map(|c| {
            let truth = c.type_label.ok_or_else(|| Error::invalid(format!("{}: no type label", c.name)))?;
            let e = cloud_embedding(model, head, c, voxel_size, up)?;
            let (best, _) = zero_shot_classify(&e, &feats);
            Ok(usize::from(prompts.classes[best].0 == truth))
        })
        .collect::<Result<Vec<usize>>>()?;
    Ok(100.0 * hits.iter().sum::<usize>() as f64 / clouds.len() as f64)
}

pub struct Pretrainer<T: Real> {
    pub cfg: TrainConfig,
    pub model: PointNeXt<T>,
    pub head: ProjectionHead,
    pub opt: Optimizer<T>,
    pub schedule: LrSchedule,
    pub step: usize,
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    /// Loss of every step.
    pub losses: Vec<f64>,
    /// `(step, zero-shot accuracy)` at each evaluation.
    pub zero_shot: Vec<(usize, f64)>,
    /// Per-epoch rows; `val_acc` holds the zero-shot accuracy.
    pub history: History,
    pub best_checkpoint: Option<PathBuf>,
    pub seconds: f64,
}

impl<T: Real> Pretrainer<T> {
    pub fn new(cfg: TrainConfig, embed_dim: usize) -> Result<Self> {
        cfg.validate()?;
        if cfg.task != Task::UlipPretrain {
            return Err(Error::Config(format!("pretraining needs task ulip_pretrain, got {}", cfg.task.name())));
        }
        let mut model = PointNeXt::new(model_config(&cfg)?, cfg.seed)?;
        let width = model.config().level_width(model.config().stages.len());
        let head = ProjectionHead::register(model.store_mut(), cfg.seed, width, embed_dim)?;
        if let Init::Checkpoint { path, strict } = &cfg.init {
            model.load_checkpoint(path, *strict)?;
        }
        let opt = Optimizer::new(cfg.optimizer, T::of(cfg.base_lr), T::of(cfg.momentum), T::of(cfg.weight_decay))?;
        let schedule = LrSchedule::new(cfg.base_lr, cfg.epochs, cfg.schedule, cfg.min_lr)?;
        Ok(Pretrainer { cfg, model, head, opt, schedule, step: 0 })
    }

    pub fn zero_shot(&self, clouds: &[PointCloud<T>], prompts: &ClassPrompts) -> Result<f64> {
        zero_shot_accuracy(&self.model, &self.head, clouds, prompts, self.cfg.voxel_size, self.cfg.augment.up_axis)
    }

    /// Trains for the configured epochs (or `max_steps`), measuring zero-shot
    /// accuracy on `val` before the first step, every `eval_every` steps and
    /// at the end of each epoch.
    pub fn fit(
        &mut self,
        train: &[PointCloud<T>],
        triplets: &[EmbeddingTriplet],
        val: &[PointCloud<T>],
        prompts: &ClassPrompts,
        eval_every: usize,
        out_dir: Option<&Path>,
    ) -> Result<PretrainOutcome> {
        let start = Instant::now();
        if let Some(d) = out_dir {
            std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        }
        let matched = match_embeddings(train, triplets)?;
        let mut losses = Vec::new();
        let mut zero_shot = vec![(0, self.zero_shot(val, prompts)?)];
        let mut history = History::default();
        let mut best: Option<f64> = None;
        let mut best_checkpoint = None;
        let cfg = self.cfg.clone();
        let model_cfg = self.model.config().clone();
        let depth = if cfg.deterministic { 0 } else { 2 };
        let done = |s: usize| cfg.max_steps != 0 && s >= cfg.max_steps;
        for epoch in 0..cfg.epochs {
            if done(self.step) {
                break;
            }
            let lr = self.schedule.lr_at(epoch);
            self.opt.set_lr(T::of(lr));
            let schedule = epoch_schedule(train.len(), &cfg, epoch);
            let first = losses.len();
            for_each_batch(train, &schedule, &cfg, &model_cfg, epoch, depth, |i, batch| {
                let trip: Vec<&EmbeddingTriplet> = schedule[i].iter().map(|it| matched[it.index]).collect();
                let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, &[VIEW_STREAM, self.step as u64]));
                let loss = pretrain_step(&mut self.model, &self.head, &mut self.opt, &batch.input, &trip, &mut rng)
                    .map_err(|e| match e {
                        Error::NonFinite(_) => Error::NanLoss { epoch: epoch + 1, step: self.step },
                        other => other,
                    })?;
                losses.push(loss);
                self.step += 1;
                if eval_every > 0 && self.step % eval_every == 0 {
                    zero_shot.push((self.step, self.zero_shot(val, prompts)?));
                }
                Ok(!done(self.step))
            })?;
            let acc = match zero_shot.last() {
                Some(&(s, a)) if s == self.step => a,
                _ => {
                    let a = self.zero_shot(val, prompts)?;
                    zero_shot.push((self.step, a));
                    a
                }
            };
            let n = (losses.len() - first).max(1);
            history.rows.push(HistoryRow {
                epoch: epoch + 1,
                lr,
                train_loss: losses[first..].iter().sum::<f64>() / n as f64,
                val_acc: Some(acc),
                val_piou: None,
                harmonic: None,
            });
            if let Some(d) = out_dir {
                let meta = CheckpointMetadata {
                    epoch: epoch + 1,
                    accuracy: Some(acc),
                    part_iou: None,
                    harmonic_mean: None,
                    config_hash: config_hash(&cfg),
                    param_checksum: parameter_checksum(self.model.store()),
                };
                if best.is_none_or(|b| acc > b) {
                    best = Some(acc);
                    let p = d.join("best.pfckpt");
                    self.model.save(&p)?;
                    meta.write(&metadata_path(&p))?;
                    best_checkpoint = Some(p);
                }
                let p = d.join("last.pfckpt");
                self.model.save(&p)?;
                meta.write(&metadata_path(&p))?;
                history.write(&d.join("history.csv"))?;
            }
        }
        Ok(PretrainOutcome { losses, zero_shot, history, best_checkpoint, seconds: start.elapsed().as_secs_f64() })
    }
}
