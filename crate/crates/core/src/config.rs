//! Flat `key = value` run configuration shared by every command.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::autodiff::{OptimizerKind, ScheduleKind};
use crate::data::{Axis, SplitName};
use crate::error::{Error, Result};
use crate::metrics::PartIouMode;
use crate::synth::{DatasetOptions, EmbeddingSpec, GeneratorSpec, SplitCounts};
use crate::train::{Init, Task, TrainConfig};

/// Every recognized key with a one-line description, in emission order.
pub const KEYS: &[(&str, &str)] = &[
    ("seed", "seed for every random stream"),
    ("data_dir", "dataset root holding train.txt, val.txt, test.txt"),
    ("out", "output directory"),
    ("split", "split used by eval and predict"),
    ("task", "classification | segmentation | multitask | ulip_pretrain"),
    ("preset", "model size: tiny | s | xl"),
    ("epochs", "training epochs"),
    ("lr", "base learning rate"),
    ("min_lr", "final learning rate of the cosine schedule"),
    ("schedule", "cosine | constant"),
    ("optimizer", "sgd | adam"),
    ("momentum", "SGD momentum or Adam beta1"),
    ("weight_decay", "weight decay (norm parameters and biases exempt)"),
    ("beta", "classification share of the multitask loss"),
    ("voxel_size", "voxel edge length for sampling"),
    ("sample_size", "points per training sample"),
    ("radius", "first-stage ball query radius"),
    ("batch_size", "clouds per optimizer step"),
    ("loop_factor", "passes over the training split per epoch"),
    ("init", "scratch, or a checkpoint path to start from"),
    ("strict", "require an exact checkpoint match"),
    ("deterministic", "load batches inline instead of prefetching"),
    ("max_steps", "stop after this many optimizer steps (0 = no cap)"),
    ("part_iou_mode", "pooled | per_building"),
    ("eval_every", "pretraining steps between zero-shot evaluations (0 = per epoch)"),
    ("rotation", "random rotation about the up axis"),
    ("up_axis", "x | y | z"),
    ("scale_min", "lower bound of random scaling"),
    ("scale_max", "upper bound of random scaling"),
    ("jitter_sigma", "coordinate jitter standard deviation"),
    ("jitter_clip", "coordinate jitter clip"),
    ("color_drop_prob", "probability of zeroing colors"),
    ("color_contrast_prob", "probability of color auto contrast"),
    ("contrast_blend", "auto contrast blend factor"),
    ("gen_train", "generated training buildings"),
    ("gen_val", "generated validation buildings"),
    ("gen_test", "generated test buildings"),
    ("points_per_building", "points sampled per generated building"),
    ("noise_sigma", "generated coordinate noise"),
    ("unspecified_fraction", "fraction of generated points labeled 0"),
    ("withhold_test_labels", "write generated test clouds without labels"),
    ("embeddings", "generate embedding triplets and class prompts"),
    ("embed_dim", "embedding width"),
    ("separation", "class separation of generated embeddings"),
    ("embed_jitter", "per-row embedding jitter"),
    ("text_rows", "prompt embeddings per building"),
    ("image_rows", "view embeddings per building"),
    ("voxel_sizes", "comma-separated voxel sizes for stats"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub data_dir: PathBuf,
    pub out: PathBuf,
    pub split: SplitName,
    pub eval_every: usize,
    pub generator: GeneratorSpec,
    pub counts: SplitCounts,
    pub dataset: DatasetOptions,
    /// Used when `dataset.embeddings` is on.
    pub embedding: EmbeddingSpec,
    pub voxel_sizes: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::with_train(TrainConfig::default())
    }
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {v:?}"))),
    }
}

fn parse_num<N: std::str::FromStr>(key: &str, v: &str) -> Result<N> {
    v.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn with_key<X>(key: &str, r: Result<X>) -> Result<X> {
    r.map_err(|e| match e {
        Error::Config(m) if m.starts_with(key) => Error::Config(m),
        other => Error::Config(format!("{key}: {other}")),
    })
}

impl RunConfig {
    /// Defaults built around a training profile.
    pub fn with_train(train: TrainConfig) -> Self {
        let seed = train.seed;
        RunConfig {
            train,
            data_dir: PathBuf::from("data"),
            out: PathBuf::from("out"),
            split: SplitName::Val,
            eval_every: 0,
            generator: GeneratorSpec { seed, ..GeneratorSpec::default() },
            counts: SplitCounts { train: 64, val: 16, test: 16 },
            dataset: DatasetOptions::default(),
            embedding: EmbeddingSpec::default(),
            voxel_sizes: vec![0.01, 0.02, 0.05],
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let t = &mut self.train;
        let a = &mut t.augment;
        match key {
            "seed" => {
                t.seed = parse_num(key, v)?;
                self.generator.seed = t.seed;
            }
            "data_dir" => self.data_dir = PathBuf::from(v),
            "out" => self.out = PathBuf::from(v),
            "split" => self.split = with_key(key, SplitName::parse(v))?,
            "task" => t.task = with_key(key, Task::parse(v))?,
            "preset" => t.preset = v.to_string(),
            "epochs" => t.epochs = parse_num(key, v)?,
            "lr" => t.base_lr = parse_num(key, v)?,
            "min_lr" => t.min_lr = parse_num(key, v)?,
            "schedule" => t.schedule = with_key(key, ScheduleKind::parse(v))?,
            "optimizer" => t.optimizer = with_key(key, OptimizerKind::parse(v))?,
            "momentum" => t.momentum = parse_num(key, v)?,
            "weight_decay" => t.weight_decay = parse_num(key, v)?,
            "beta" => t.beta = parse_num(key, v)?,
            "voxel_size" => t.voxel_size = parse_num(key, v)?,
            "sample_size" => t.sample_size = parse_num(key, v)?,
            "radius" => t.radius = parse_num(key, v)?,
            "batch_size" => t.batch_size = parse_num(key, v)?,
            "loop_factor" => a.loop_factor = parse_num(key, v)?,
            "init" => {
                let strict = matches!(t.init, Init::Checkpoint { strict: true, .. });
                t.init = if v == "scratch" { Init::Scratch } else { Init::Checkpoint { path: PathBuf::from(v), strict } };
            }
            "strict" => {
                let s = parse_bool(key, v)?;
                if let Init::Checkpoint { strict, .. } = &mut t.init {
                    *strict = s;
                } else if s {
                    // remembered once an init path arrives
                    t.init = Init::Checkpoint { path: PathBuf::new(), strict: true };
                }
            }
            "deterministic" => t.deterministic = parse_bool(key, v)?,
            "max_steps" => t.max_steps = parse_num(key, v)?,
            "part_iou_mode" => t.part_iou_mode = with_key(key, PartIouMode::parse(v))?,
            "eval_every" => self.eval_every = parse_num(key, v)?,
            "rotation" => a.rotation_enabled = parse_bool(key, v)?,
            "up_axis" => a.up_axis = with_key(key, Axis::parse(v))?,
            "scale_min" => a.scale_range[0] = parse_num(key, v)?,
            "scale_max" => a.scale_range[1] = parse_num(key, v)?,
            "jitter_sigma" => a.jitter_sigma = parse_num(key, v)?,
            "jitter_clip" => a.jitter_clip = parse_num(key, v)?,
            "color_drop_prob" => a.color_drop_prob = parse_num(key, v)?,
            "color_contrast_prob" => a.color_contrast_prob = parse_num(key, v)?,
            "contrast_blend" => a.contrast_blend = parse_num(key, v)?,
            "gen_train" => self.counts.train = parse_num(key, v)?,
            "gen_val" => self.counts.val = parse_num(key, v)?,
            "gen_test" => self.counts.test = parse_num(key, v)?,
            "points_per_building" => self.generator.points_per_building = parse_num(key, v)?,
            "noise_sigma" => self.generator.noise_sigma = parse_num(key, v)?,
            "unspecified_fraction" => self.generator.unspecified_fraction = parse_num(key, v)?,
            "withhold_test_labels" => self.dataset.withhold_test_labels = parse_bool(key, v)?,
            "embeddings" => {
                self.dataset.embeddings = if parse_bool(key, v)? { Some(self.embedding) } else { None };
            }
            "embed_dim" => self.embedding.dim = parse_num(key, v)?,
            "separation" => self.embedding.separation = parse_num(key, v)?,
            "embed_jitter" => self.embedding.jitter = parse_num(key, v)?,
            "text_rows" => self.embedding.text_rows = parse_num(key, v)?,
            "image_rows" => self.embedding.image_rows = parse_num(key, v)?,
            "voxel_sizes" => {
                self.voxel_sizes = v
                    .split(',')
                    .map(|s| parse_num::<f64>(key, s.trim()))
                    .collect::<Result<_>>()?;
                if self.voxel_sizes.is_empty() || self.voxel_sizes.iter().any(|s| !(*s > 0.0)) {
                    return Err(Error::Config(format!("{key}: sizes must be positive")));
                }
            }
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        if self.dataset.embeddings.is_some() {
            self.dataset.embeddings = Some(self.embedding);
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Result<String> {
        let t = &self.train;
        let a = &t.augment;
        let p = |p: &Path| p.display().to_string();
        Ok(match key {
            "seed" => t.seed.to_string(),
            "data_dir" => p(&self.data_dir),
            "out" => p(&self.out),
            "split" => self.split.as_str().into(),
            "task" => t.task.name().into(),
            "preset" => t.preset.clone(),
            "epochs" => t.epochs.to_string(),
            "lr" => t.base_lr.to_string(),
            "min_lr" => t.min_lr.to_string(),
            "schedule" => t.schedule.name().into(),
            "optimizer" => t.optimizer.name().into(),
            "momentum" => t.momentum.to_string(),
            "weight_decay" => t.weight_decay.to_string(),
            "beta" => t.beta.to_string(),
            "voxel_size" => t.voxel_size.to_string(),
            "sample_size" => t.sample_size.to_string(),
            "radius" => t.radius.to_string(),
            "batch_size" => t.batch_size.to_string(),
            "loop_factor" => a.loop_factor.to_string(),
            "init" => match &t.init {
                Init::Checkpoint { path, .. } if !path.as_os_str().is_empty() => p(path),
                _ => "scratch".into(),
            },
            "strict" => matches!(t.init, Init::Checkpoint { strict: true, .. }).to_string(),
            "deterministic" => t.deterministic.to_string(),
            "max_steps" => t.max_steps.to_string(),
            "part_iou_mode" => t.part_iou_mode.name().into(),
            "eval_every" => self.eval_every.to_string(),
            "rotation" => a.rotation_enabled.to_string(),
            "up_axis" => a.up_axis.name().into(),
            "scale_min" => a.scale_range[0].to_string(),
            "scale_max" => a.scale_range[1].to_string(),
            "jitter_sigma" => a.jitter_sigma.to_string(),
            "jitter_clip" => a.jitter_clip.to_string(),
            "color_drop_prob" => a.color_drop_prob.to_string(),
            "color_contrast_prob" => a.color_contrast_prob.to_string(),
            "contrast_blend" => a.contrast_blend.to_string(),
            "gen_train" => self.counts.train.to_string(),
            "gen_val" => self.counts.val.to_string(),
            "gen_test" => self.counts.test.to_string(),
            "points_per_building" => self.generator.points_per_building.to_string(),
            "noise_sigma" => self.generator.noise_sigma.to_string(),
            "unspecified_fraction" => self.generator.unspecified_fraction.to_string(),
            "withhold_test_labels" => self.dataset.withhold_test_labels.to_string(),
            "embeddings" => self.dataset.embeddings.is_some().to_string(),
            "embed_dim" => self.embedding.dim.to_string(),
            "separation" => self.embedding.separation.to_string(),
            "embed_jitter" => self.embedding.jitter.to_string(),
            "text_rows" => self.embedding.text_rows.to_string(),
            "image_rows" => self.embedding.image_rows.to_string(),
            "voxel_sizes" => self.voxel_sizes.iter().map(f64::to_string).collect::<Vec<_>>().join(","),
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        })
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {raw:?}", i + 1)))?;
            self.set(k.trim(), v.trim()).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("line {}: {m}", i + 1)),
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut c = RunConfig::default();
        c.apply_text(&text)?;
        Ok(c)
    }

    /// Every key with its current value, one `key = value` line each.
    pub fn emit(&self) -> String {
        let mut s = String::new();
        for (k, doc) in KEYS {
            let _ = writeln!(s, "# {doc}");
            let _ = writeln!(s, "{k} = {}", self.get(k).expect("every listed key is readable"));
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.generator.validate()?;
        if let Init::Checkpoint { path, .. } = &self.train.init {
            if path.as_os_str().is_empty() {
                return Err(Error::Config("strict is set but init names no checkpoint".into()));
            }
        }
        Ok(())
    }
}
