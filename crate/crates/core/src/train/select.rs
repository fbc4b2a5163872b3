//! Metric history, best-checkpoint selection and checkpoint metadata.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::autodiff::checkpoint::fnv1a64;
use crate::autodiff::ParamStore;
use crate::error::{Error, Result};
use crate::metrics::EvalReport;
use crate::scalar::Real;
use crate::train::config::Task;

pub const HISTORY_HEADER: &str = "epoch,lr,train_loss,val_acc,val_piou,harmonic";

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRow {
    /// 1-based.
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_acc: Option<f64>,
    pub val_piou: Option<f64>,
    pub harmonic: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct History {
    pub rows: Vec<HistoryRow>,
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

fn parse_opt(s: &str) -> std::result::Result<Option<f64>, std::num::ParseFloatError> {
    if s.is_empty() {
        Ok(None)
    } else {
        s.parse().map(Some)
    }
}

impl History {
    pub fn to_csv(&self) -> String {
        let mut s = format!("{HISTORY_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{},{},{}", r.epoch, r.lr, r.train_loss, opt(r.val_acc), opt(r.val_piou), opt(r.harmonic));
        }
        s
    }

    pub fn parse_csv(text: &str, path: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let fmt = |line: usize, msg: String| Error::Format { path: path.into(), line, msg };
        match lines.next() {
            Some((_, h)) if h.trim() == HISTORY_HEADER => {}
            _ => return Err(fmt(1, format!("expected header {HISTORY_HEADER:?}"))),
        }
        let mut rows = Vec::new();
        for (i, l) in lines {
            if l.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = l.split(',').map(str::trim).collect();
            if f.len() != 6 {
                return Err(fmt(i + 1, format!("expected 6 fields, found {}", f.len())));
            }
            let bad = |_| fmt(i + 1, format!("unparsable row {l:?}"));
            rows.push(HistoryRow {
                epoch: f[0].parse().map_err(|_| fmt(i + 1, format!("bad epoch {:?}", f[0])))?,
                lr: f[1].parse().map_err(bad)?,
                train_loss: f[2].parse().map_err(bad)?,
                val_acc: parse_opt(f[3]).map_err(bad)?,
                val_piou: parse_opt(f[4]).map_err(bad)?,
                harmonic: parse_opt(f[5]).map_err(bad)?,
            });
        }
        Ok(History { rows })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_csv(&text, path)
    }
}

/// Metric that picks the best checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionMetric {
    Accuracy,
    PartIou,
    HarmonicMean,
    ZeroShotAccuracy,
}

impl SelectionMetric {
    pub fn for_task(task: Task) -> Self {
        match task {
            Task::Classification => SelectionMetric::Accuracy,
            Task::Segmentation => SelectionMetric::PartIou,
            Task::Multitask => SelectionMetric::HarmonicMean,
            Task::UlipPretrain => SelectionMetric::ZeroShotAccuracy,
        }
    }

    pub fn of_report(self, r: &EvalReport) -> Option<f64> {
        match self {
            SelectionMetric::Accuracy | SelectionMetric::ZeroShotAccuracy => r.overall_accuracy,
            SelectionMetric::PartIou => r.part_iou,
            SelectionMetric::HarmonicMean => r.harmonic_mean,
        }
    }

    pub fn of_row(self, r: &HistoryRow) -> Option<f64> {
        match self {
            SelectionMetric::Accuracy | SelectionMetric::ZeroShotAccuracy => r.val_acc,
            SelectionMetric::PartIou => r.val_piou,
            SelectionMetric::HarmonicMean => r.harmonic,
        }
    }
}

/// Index of the best value; earlier entries win ties and missing values
/// never win.
pub fn best_index(values: &[Option<f64>]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.iter().enumerate() {
        if let Some(v) = *v {
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((i, v));
            }
        }
    }
    best.map(|(i, _)| i)
}

/// Checksum over every parameter and buffer (names and little-endian bytes).
pub fn parameter_checksum<T: Real>(store: &ParamStore<T>) -> u64 {
    let mut bytes = Vec::new();
    for (name, t) in store.named_tensors() {
        bytes.extend_from_slice(name.as_bytes());
        for v in t.data() {
            v.write_le(&mut bytes);
        }
    }
    fnv1a64(&bytes)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointMetadata {
    /// 1-based epoch the checkpoint was taken at.
    pub epoch: usize,
    pub accuracy: Option<f64>,
    pub part_iou: Option<f64>,
    pub harmonic_mean: Option<f64>,
    pub config_hash: u64,
    pub param_checksum: u64,
}

impl CheckpointMetadata {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "epoch={}", self.epoch);
        for (k, v) in [("accuracy", self.accuracy), ("part_iou", self.part_iou), ("harmonic_mean", self.harmonic_mean)] {
            if let Some(v) = v {
                // full precision so a re-evaluation can be compared tightly
                let _ = writeln!(s, "{k}={v:?}");
            }
        }
        let _ = writeln!(s, "config_hash={:016x}", self.config_hash);
        let _ = writeln!(s, "param_checksum={:016x}", self.param_checksum);
        s
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut m = CheckpointMetadata { epoch: 0, accuracy: None, part_iou: None, harmonic_mean: None, config_hash: 0, param_checksum: 0 };
        let mut seen_epoch = false;
        for (i, line) in text.lines().enumerate() {
            let fmt = |msg: String| Error::Format { path: path.into(), line: i + 1, msg };
            if line.trim().is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| fmt(format!("expected key=value, got {line:?}")))?;
            let float = || v.parse::<f64>().map_err(|_| fmt(format!("bad number {v:?}")));
            let hex = || u64::from_str_radix(v, 16).map_err(|_| fmt(format!("bad hex {v:?}")));
            match k {
                "epoch" => {
                    m.epoch = v.parse().map_err(|_| fmt(format!("bad epoch {v:?}")))?;
                    seen_epoch = true;
                }
                "accuracy" => m.accuracy = Some(float()?),
                "part_iou" => m.part_iou = Some(float()?),
                "harmonic_mean" => m.harmonic_mean = Some(float()?),
                "config_hash" => m.config_hash = hex()?,
                "param_checksum" => m.param_checksum = hex()?,
                other => return Err(fmt(format!("unknown key {other:?}"))),
            }
        }
        if !seen_epoch {
            return Err(Error::Format { path: path.into(), line: 0, msg: "missing epoch".into() });
        }
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }
}

/// Metadata file stored next to a checkpoint.
pub fn metadata_path(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".info");
    PathBuf::from(s)
}
