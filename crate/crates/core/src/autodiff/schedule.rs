use std::f64::consts::PI;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScheduleKind {
    #[default]
    Cosine,
    Constant,
}

impl ScheduleKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cosine" => Ok(ScheduleKind::Cosine),
            "constant" => Ok(ScheduleKind::Constant),
            _ => Err(Error::invalid(format!("unknown schedule {s:?}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ScheduleKind::Cosine => "cosine",
            ScheduleKind::Constant => "constant",
        }
    }
}

/// Per-epoch learning-rate schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub total_epochs: usize,
    pub kind: ScheduleKind,
    pub min_lr: f64,
}

impl LrSchedule {
    pub fn new(base_lr: f64, total_epochs: usize, kind: ScheduleKind, min_lr: f64) -> Result<Self> {
        if !(base_lr > 0.0) || total_epochs == 0 || !(min_lr >= 0.0) || min_lr > base_lr {
            return Err(Error::invalid(format!(
                "bad schedule: base_lr={base_lr}, min_lr={min_lr}, total_epochs={total_epochs}"
            )));
        }
        Ok(LrSchedule { base_lr, total_epochs, kind, min_lr })
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self.kind {
            ScheduleKind::Constant => self.base_lr,
            ScheduleKind::Cosine => cosine_lr(self, epoch),
        }
    }
}

/// `min + (base - min) (1 + cos(pi e / E)) / 2`, with `e` clamped to `E`.
pub fn cosine_lr(s: &LrSchedule, epoch: usize) -> f64 {
    let e = epoch.min(s.total_epochs) as f64;
    s.min_lr + 0.5 * (s.base_lr - s.min_lr) * (1.0 + (PI * e / s.total_epochs as f64).cos())
}
