use std::path::PathBuf;

use crate::augment::AugmentConfig;
use crate::autodiff::{OptimizerKind, ScheduleKind};
use crate::error::{Error, Result};
use crate::metrics::PartIouMode;
use crate::model::{HeadKind, PRESET_NAMES};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Classification,
    Segmentation,
    Multitask,
    UlipPretrain,
}

impl Task {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "classification" | "cls" => Ok(Task::Classification),
            "segmentation" | "seg" => Ok(Task::Segmentation),
            "multitask" => Ok(Task::Multitask),
            "ulip_pretrain" | "ulip" => Ok(Task::UlipPretrain),
            other => Err(Error::Config(format!(
                "unknown task {other:?}; expected classification, segmentation, multitask or ulip_pretrain"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::Classification => "classification",
            Task::Segmentation => "segmentation",
            Task::Multitask => "multitask",
            Task::UlipPretrain => "ulip_pretrain",
        }
    }

    pub fn head(self) -> HeadKind {
        match self {
            Task::Classification => HeadKind::Classification,
            Task::Segmentation => HeadKind::Segmentation,
            Task::Multitask => HeadKind::Multitask,
            Task::UlipPretrain => HeadKind::Backbone,
        }
    }

    pub fn uses_type_labels(self) -> bool {
        matches!(self, Task::Classification | Task::Multitask)
    }

    pub fn uses_part_labels(self) -> bool {
        matches!(self, Task::Segmentation | Task::Multitask)
    }
}

/// Where initial weights come from.
#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    Scratch,
    Checkpoint { path: PathBuf, strict: bool },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub task: Task,
    pub preset: String,
    pub epochs: usize,
    pub base_lr: f64,
    pub min_lr: f64,
    pub schedule: ScheduleKind,
    pub optimizer: OptimizerKind,
    /// SGD momentum, or Adam's first-moment decay.
    pub momentum: f64,
    pub weight_decay: f64,
    /// Classification share of the multitask loss.
    pub beta: f64,
    pub voxel_size: f64,
    pub sample_size: usize,
    pub radius: f64,
    pub batch_size: usize,
    /// Augmentation settings, including the loop factor.
    pub augment: AugmentConfig,
    pub init: Init,
    pub seed: u64,
    pub part_iou_mode: PartIouMode,
    /// Load batches inline instead of on a prefetch thread. Results are
    /// identical either way.
    pub deterministic: bool,
    /// Stop after this many optimizer steps in total (0 = no cap).
    pub max_steps: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            task: Task::Segmentation,
            preset: "s".into(),
            epochs: 100,
            base_lr: 0.01,
            min_lr: 0.0,
            schedule: ScheduleKind::Cosine,
            optimizer: OptimizerKind::Adam,
            momentum: 0.9,
            weight_decay: 1e-4,
            beta: 0.01,
            voxel_size: 0.02,
            sample_size: 12_500,
            radius: 0.05,
            batch_size: 8,
            augment: AugmentConfig::default(),
            init: Init::Scratch,
            seed: 0,
            part_iou_mode: PartIouMode::Pooled,
            deterministic: false,
            max_steps: 0,
        }
    }
}

/// Named training profiles.
pub const PROFILE_NAMES: [&str; 3] = ["default", "xl", "desk"];

impl TrainConfig {
    /// `default` is the standard profile, `xl` the large-model profile and
    /// `desk` the small synthetic-data profile.
    pub fn profile(name: &str) -> Result<Self> {
        let base = TrainConfig::default();
        match name {
            "default" => Ok(base),
            "xl" => Ok(TrainConfig { preset: "xl".into(), voxel_size: 0.01, sample_size: 40_000, radius: 0.025, ..base }),
            "desk" => Ok(TrainConfig {
                preset: "tiny".into(),
                epochs: 30,
                base_lr: 0.01,
                voxel_size: 0.05,
                sample_size: 1024,
                radius: 0.125,
                augment: AugmentConfig { loop_factor: 2, ..AugmentConfig::default() },
                ..base
            }),
            other => Err(Error::Config(format!("unknown profile {other:?}; expected one of {}", PROFILE_NAMES.join(", ")))),
        }
    }

    pub fn loop_factor(&self) -> usize {
        self.augment.loop_factor
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return bad(format!("beta = {} outside [0, 1]", self.beta));
        }
        if !(self.voxel_size > 0.0) || !(self.radius > 0.0) {
            return bad("voxel_size and radius must be positive".into());
        }
        if !(self.base_lr > 0.0) || !(self.min_lr >= 0.0) || self.min_lr > self.base_lr {
            return bad("learning rates must satisfy 0 <= min_lr <= base_lr, base_lr > 0".into());
        }
        if !(0.0..1.0).contains(&self.momentum) || !(self.weight_decay >= 0.0) {
            return bad("momentum must lie in [0, 1) and weight decay must be non-negative".into());
        }
        if self.sample_size == 0 {
            return bad("sample_size must be positive".into());
        }
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2 (batch statistics need two rows)".into());
        }
        if !PRESET_NAMES.contains(&self.preset.as_str()) {
            return bad(format!("unknown preset {:?}", self.preset));
        }
        self.augment.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn task_names_round_trip() {
        for t in [Task::Classification, Task::Segmentation, Task::Multitask, Task::UlipPretrain] {
            assert_eq!(Task::parse(t.name()).unwrap(), t);
        }
        assert!(Task::parse("detection").is_err());
    }

    #[test]
    fn profiles_validate() {
        for p in PROFILE_NAMES {
            TrainConfig::profile(p).unwrap().validate().unwrap();
        }
        let xl = TrainConfig::profile("xl").unwrap();
        assert_eq!((xl.voxel_size, xl.sample_size, xl.radius), (0.01, 40_000, 0.025));
        let d = TrainConfig::default();
        assert_eq!((d.epochs, d.base_lr, d.voxel_size, d.sample_size, d.radius, d.loop_factor()), (100, 0.01, 0.02, 12_500, 0.05, 12));
    }

    #[test]
    fn invariants_enforced() {
        let mut c = TrainConfig { beta: 1.5, ..TrainConfig::default() };
        assert!(c.validate().is_err());
        c.beta = 0.5;
        c.epochs = 0;
        assert!(c.validate().is_err());
        c.epochs = 1;
        c.radius = 0.0;
        assert!(c.validate().is_err());
    }
}
