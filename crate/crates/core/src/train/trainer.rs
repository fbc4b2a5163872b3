use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::checkpoint::fnv1a64;
use crate::autodiff::{Graph, LoadReport, LrSchedule, Optimizer};
use crate::data::{label_histogram, LabelKind, LabelVocabulary, PointCloud};
use crate::error::{Error, Result};
use crate::metrics::{inverse_log_frequency_weights, multitask_loss_var, EvalReport};
use crate::model::{Mode, ModelConfig, ModelInput, PointNeXt};
use crate::scalar::Real;
use crate::seed::stream_seed;
use crate::train::config::{Init, Task, TrainConfig};
use crate::train::eval::evaluate;
use crate::train::loader::{epoch_schedule, for_each_batch, DROPOUT_STREAM};
use crate::train::select::{metadata_path, parameter_checksum, CheckpointMetadata, History, HistoryRow, SelectionMetric};

/// Target used for points whose part label is 0.
pub const IGNORE_TARGET: usize = usize::MAX;

/// Part label `l` maps to logit `l - 1`; label 0 is ignored.
pub fn part_targets(labels: &[usize]) -> Vec<usize> {
    labels.iter().map(|&l| if l == 0 { IGNORE_TARGET } else { l - 1 }).collect()
}

pub fn config_hash(cfg: &TrainConfig) -> u64 {
    fnv1a64(format!("{cfg:?}").as_bytes())
}

/// Model layout for a training configuration.
pub fn model_config(cfg: &TrainConfig) -> Result<ModelConfig> {
    ModelConfig::preset(&cfg.preset, cfg.task.head(), cfg.radius)
}

/// Per-logit segmentation weights from the part-label histogram of `clouds`.
pub fn segmentation_weights<T: Real>(clouds: &[PointCloud<T>]) -> Result<Vec<T>> {
    let hist = label_histogram(clouds, &LabelVocabulary::parts(), LabelKind::Segmentation)?;
    let w = inverse_log_frequency_weights(&hist.counts, Some(0))?;
    Ok(w.weights[1..].iter().map(|&v| T::of(v)).collect())
}

pub struct Trainer<T: Real> {
    pub cfg: TrainConfig,
    pub model: PointNeXt<T>,
    pub opt: Optimizer<T>,
    pub schedule: LrSchedule,
    pub seg_weights: Option<Vec<T>>,
    /// Optimizer steps taken so far.
    pub step: usize,
    pub load_report: Option<LoadReport>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub history: History,
    /// 0-based index into the history of the selected epoch.
    pub best: Option<usize>,
    pub best_report: Option<EvalReport>,
    pub best_checkpoint: Option<PathBuf>,
    pub steps: usize,
    pub seconds: f64,
}

impl<T: Real> Trainer<T> {
    /// Builds the model (initialized from the seed or a checkpoint) and
    /// derives class weights from the training clouds.
    pub fn new(cfg: TrainConfig, train: &[PointCloud<T>]) -> Result<Self> {
        cfg.validate()?;
        if cfg.task == Task::UlipPretrain {
            return Err(Error::Config("use the pretraining driver for ulip_pretrain".into()));
        }
        if train.is_empty() {
            return Err(Error::invalid("empty training split"));
        }
        let mut model = PointNeXt::new(model_config(&cfg)?, cfg.seed)?;
        let load_report = match &cfg.init {
            Init::Scratch => None,
            Init::Checkpoint { path, strict } => Some(model.load_checkpoint(path, *strict)?),
        };
        let seg_weights = if cfg.task.uses_part_labels() { Some(segmentation_weights(train)?) } else { None };
        let opt = Optimizer::new(cfg.optimizer, T::of(cfg.base_lr), T::of(cfg.momentum), T::of(cfg.weight_decay))?;
        let schedule = LrSchedule::new(cfg.base_lr, cfg.epochs, cfg.schedule, cfg.min_lr)?;
        Ok(Trainer { cfg, model, opt, schedule, seg_weights, step: 0, load_report })
    }

    /// Task loss of one forward pass.
    fn loss(&self, g: &mut Graph<T>, cls: Option<crate::autodiff::Var>, seg: Option<crate::autodiff::Var>, clouds: &[PointCloud<T>]) -> Result<crate::autodiff::Var> {
        let cls_loss = match (self.cfg.task.uses_type_labels(), cls) {
            (true, Some(logits)) => {
                let targets = clouds
                    .iter()
                    .map(|c| c.type_label.ok_or_else(|| Error::invalid(format!("{}: missing type label", c.name))))
                    .collect::<Result<Vec<_>>>()?;
                Some(g.softmax_cross_entropy(logits, &targets, None, None)?)
            }
            _ => None,
        };
        let seg_loss = match (self.cfg.task.uses_part_labels(), seg) {
            (true, Some(logits)) => {
                let mut targets = Vec::new();
                for c in clouds {
                    let l = c.seg_labels.as_deref().ok_or_else(|| Error::invalid(format!("{}: missing part labels", c.name)))?;
                    targets.extend(part_targets(l));
                }
                Some(g.softmax_cross_entropy(logits, &targets, self.seg_weights.as_deref(), Some(IGNORE_TARGET))?)
            }
            _ => None,
        };
        match (cls_loss, seg_loss) {
            (Some(c), Some(s)) => multitask_loss_var(g, c, s, self.cfg.beta),
            (Some(c), None) => Ok(c),
            (None, Some(s)) => Ok(s),
            (None, None) => Err(Error::invalid("model has no output for the task")),
        }
    }

    /// One optimizer step on a prepared batch; returns the loss before the
    /// update. A non-finite loss aborts with the epoch and step.
    pub fn train_batch(&mut self, input: &ModelInput<T>, clouds: &[PointCloud<T>], epoch: usize) -> Result<f64> {
        let mut drop_rng = ChaCha8Rng::seed_from_u64(stream_seed(self.cfg.seed, &[DROPOUT_STREAM, self.step as u64]));
        let mut g = Graph::new();
        let params = self.model.store().bind(&mut g);
        let out = self.model.forward(&mut g, &params, input, &mut Mode::Train(&mut drop_rng))?;
        let loss = self.loss(&mut g, out.cls_logits, out.seg_logits, clouds)?;
        let value = g.value(loss).item().to_f64_lossy();
        if !value.is_finite() {
            return Err(Error::NanLoss { epoch: epoch + 1, step: self.step });
        }
        let grads = g.backward(loss)?;
        self.model.store_mut().store_grads(&params, &grads);
        self.opt.step(self.model.store_mut());
        self.model.update_running_stats(&out.norm_stats);
        self.step += 1;
        Ok(value)
    }

    fn steps_left(&self) -> bool {
        self.cfg.max_steps == 0 || self.step < self.cfg.max_steps
    }

    /// One epoch of training; returns the mean batch loss.
    pub fn train_epoch(&mut self, train: &[PointCloud<T>], epoch: usize) -> Result<f64> {
        let lr = self.schedule.lr_at(epoch);
        self.opt.set_lr(T::of(lr));
        let schedule = epoch_schedule(train.len(), &self.cfg, epoch);
        let model_cfg = self.model.config().clone();
        let cfg = self.cfg.clone();
        let depth = if cfg.deterministic { 0 } else { 2 };
        let mut total = 0.0;
        let mut count = 0usize;
        for_each_batch(train, &schedule, &cfg, &model_cfg, epoch, depth, |_, batch| {
            if !self.steps_left() {
                return Ok(false);
            }
            total += self.train_batch(&batch.input, &batch.clouds, epoch)?;
            count += 1;
            Ok(self.steps_left())
        })?;
        Ok(if count == 0 { f64::NAN } else { total / count as f64 })
    }

    pub fn evaluate(&self, clouds: &[PointCloud<T>]) -> Result<EvalReport> {
        evaluate(&self.model, clouds, self.cfg.voxel_size, self.cfg.augment.up_axis, self.cfg.part_iou_mode)
    }

    /// Full run: epochs of training with validation after each, history
    /// written to `out_dir/history.csv` and the best and last checkpoints
    /// saved there.
    pub fn fit(&mut self, train: &[PointCloud<T>], val: &[PointCloud<T>], out_dir: Option<&Path>) -> Result<TrainOutcome> {
        let start = Instant::now();
        if let Some(d) = out_dir {
            std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        }
        let metric = SelectionMetric::for_task(self.cfg.task);
        let mut history = History::default();
        let mut best: Option<(usize, f64)> = None;
        let mut best_report = None;
        let mut best_checkpoint = None;
        for epoch in 0..self.cfg.epochs {
            if !self.steps_left() {
                break;
            }
            let lr = self.schedule.lr_at(epoch);
            let train_loss = self.train_epoch(train, epoch)?;
            let report = if val.is_empty() { None } else { Some(self.evaluate(val)?) };
            let row = HistoryRow {
                epoch: epoch + 1,
                lr,
                train_loss,
                val_acc: report.as_ref().and_then(|r| r.overall_accuracy),
                val_piou: report.as_ref().and_then(|r| r.part_iou),
                harmonic: report.as_ref().and_then(|r| r.harmonic_mean),
            };
            let score = metric.of_row(&row);
            history.rows.push(row);
            let improved = match (score, best) {
                (Some(s), Some((_, b))) => s > b,
                (Some(_), None) => true,
                (None, _) => false,
            };
            if improved {
                best = Some((epoch, score.unwrap()));
                best_report = report.clone();
                if let Some(d) = out_dir {
                    let path = d.join("best.pfckpt");
                    self.save_with_metadata(&path, epoch + 1, report.as_ref())?;
                    best_checkpoint = Some(path);
                }
            }
            if let Some(d) = out_dir {
                history.write(&d.join("history.csv"))?;
                self.save_with_metadata(&d.join("last.pfckpt"), epoch + 1, report.as_ref())?;
            }
        }
        Ok(TrainOutcome {
            history,
            best: best.map(|(i, _)| i),
            best_report,
            best_checkpoint,
            steps: self.step,
            seconds: start.elapsed().as_secs_f64(),
        })
    }

    pub fn metadata(&self, epoch: usize, report: Option<&EvalReport>) -> CheckpointMetadata {
        CheckpointMetadata {
            epoch,
            accuracy: report.and_then(|r| r.overall_accuracy),
            part_iou: report.and_then(|r| r.part_iou),
            harmonic_mean: report.and_then(|r| r.harmonic_mean),
            config_hash: config_hash(&self.cfg),
            param_checksum: parameter_checksum(self.model.store()),
        }
    }

    fn save_with_metadata(&self, path: &Path, epoch: usize, report: Option<&EvalReport>) -> Result<()> {
        self.model.save(path)?;
        self.metadata(epoch, report).write(&metadata_path(path))
    }
}
