//! Class weighting, task losses and evaluation metrics.

use std::fmt::Write as _;
use std::path::Path;

use crate::autodiff::{Graph, Var};
use crate::data::LabelVocabulary;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Offset inside the inverse-log weighting `1 / ln(lambda + f)`.
pub const WEIGHT_LAMBDA: f64 = 1.2;

#[derive(Debug, Clone, PartialEq)]
pub struct ClassWeights {
    /// One entry per class; the ignored class (if any) gets weight 0.
    pub weights: Vec<f64>,
    pub source_frequencies: Vec<f64>,
}

/// `w_c = 1 / ln(1.2 + f_c)` with `f_c` the class frequency among
/// non-ignored labels. Zero-count classes get the maximum `1 / ln(1.2)`.
pub fn inverse_log_frequency_weights(counts: &[u64], ignore_index: Option<usize>) -> Result<ClassWeights> {
    let kept = |c: usize| Some(c) != ignore_index;
    let total: u64 = counts.iter().enumerate().filter(|&(c, _)| kept(c)).map(|(_, &n)| n).sum();
    if total == 0 {
        return Err(Error::invalid("class weights need at least one labeled point"));
    }
    let mut weights = Vec::with_capacity(counts.len());
    let mut freqs = Vec::with_capacity(counts.len());
    for (c, &n) in counts.iter().enumerate() {
        if !kept(c) {
            weights.push(0.0);
            freqs.push(0.0);
            continue;
        }
        let f = n as f64 / total as f64;
        freqs.push(f);
        weights.push(1.0 / (WEIGHT_LAMBDA + f).ln());
    }
    Ok(ClassWeights { weights, source_frequencies: freqs })
}

/// `beta * cls + (1 - beta) * seg`.
pub fn multitask_loss(cls_loss: f64, seg_loss: f64, beta: f64) -> Result<f64> {
    check_beta(beta)?;
    Ok(beta * cls_loss + (1.0 - beta) * seg_loss)
}

/// Graph form of [`multitask_loss`].
pub fn multitask_loss_var<T: Real>(g: &mut Graph<T>, cls_loss: Var, seg_loss: Var, beta: f64) -> Result<Var> {
    check_beta(beta)?;
    g.lincomb(cls_loss, T::of(beta), seg_loss, T::of(1.0 - beta))
}

fn check_beta(beta: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::invalid(format!("beta must lie in [0, 1], got {beta}")));
    }
    Ok(())
}

/// Percentage of matching entries.
pub fn overall_accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::invalid(format!("{} predictions for {} labels", pred.len(), truth.len())));
    }
    if pred.is_empty() {
        return Err(Error::invalid("accuracy of an empty set"));
    }
    let hits = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(100.0 * hits as f64 / pred.len() as f64)
}

/// `2 / (1/acc + 1/piou)`, or 0 when either input is 0.
pub fn harmonic_mean(accuracy: f64, part_iou: f64) -> f64 {
    if accuracy <= 0.0 || part_iou <= 0.0 {
        return 0.0;
    }
    2.0 / (1.0 / accuracy + 1.0 / part_iou)
}

/// Per-class true positive / false positive / false negative counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Confusion {
    pub tp: Vec<u64>,
    pub fp: Vec<u64>,
    pub fn_: Vec<u64>,
    /// Points that took part (truth not ignored).
    pub counted: u64,
}

impl Confusion {
    pub fn new(num_classes: usize) -> Self {
        Confusion { tp: vec![0; num_classes], fp: vec![0; num_classes], fn_: vec![0; num_classes], counted: 0 }
    }

    /// Adds one cloud. Points whose truth is `ignore_index` are skipped.
    pub fn add(&mut self, pred: &[usize], truth: &[usize], ignore_index: Option<usize>) -> Result<()> {
        if pred.len() != truth.len() {
            return Err(Error::invalid(format!("{} predictions for {} labels", pred.len(), truth.len())));
        }
        let k = self.tp.len();
        for (&p, &t) in pred.iter().zip(truth) {
            if Some(t) == ignore_index {
                continue;
            }
            if p >= k || t >= k {
                return Err(Error::invalid(format!("label {} outside {k} classes", p.max(t))));
            }
            self.counted += 1;
            if p == t {
                self.tp[t] += 1;
            } else {
                // predicting the ignored class is a miss, never a hit for it
                if Some(p) != ignore_index {
                    self.fp[p] += 1;
                }
                self.fn_[t] += 1;
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &Confusion) {
        for (a, b) in self.tp.iter_mut().zip(&other.tp) {
            *a += b;
        }
        for (a, b) in self.fp.iter_mut().zip(&other.fp) {
            *a += b;
        }
        for (a, b) in self.fn_.iter_mut().zip(&other.fn_) {
            *a += b;
        }
        self.counted += other.counted;
    }

    /// IoU in percent per class; `None` for zero-union classes.
    pub fn class_iou(&self) -> Vec<Option<f64>> {
        (0..self.tp.len())
            .map(|c| {
                let union = self.tp[c] + self.fp[c] + self.fn_[c];
                (union > 0).then(|| 100.0 * self.tp[c] as f64 / union as f64)
            })
            .collect()
    }
}

fn mean_present(iou: &[Option<f64>]) -> Option<f64> {
    let present: Vec<f64> = iou.iter().flatten().copied().collect();
    (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
}

fn confusion_of(clouds: &[(&[usize], &[usize])], num_classes: usize, ignore_index: Option<usize>) -> Result<Vec<Confusion>> {
    clouds
        .iter()
        .map(|(p, t)| {
            let mut c = Confusion::new(num_classes);
            c.add(p, t, ignore_index)?;
            Ok(c)
        })
        .collect()
}

/// How per-class IoU is aggregated over buildings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PartIouMode {
    /// Counts pooled over all buildings before dividing.
    #[default]
    Pooled,
    /// Per-building per-class IoU, averaged over buildings where the class
    /// has a non-zero union.
    PerBuildingAverage,
}

impl PartIouMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "pooled" => Ok(PartIouMode::Pooled),
            "per_building" => Ok(PartIouMode::PerBuildingAverage),
            _ => Err(Error::invalid(format!("unknown part IoU mode {s:?}; expected pooled or per_building"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PartIouMode::Pooled => "pooled",
            PartIouMode::PerBuildingAverage => "per_building",
        }
    }
}

/// Per-class IoU and their mean over classes with a non-zero union.
/// `clouds` holds `(predictions, truths)` per building.
pub fn part_iou(
    clouds: &[(&[usize], &[usize])],
    num_classes: usize,
    ignore_index: Option<usize>,
    mode: PartIouMode,
) -> Result<(Vec<Option<f64>>, f64)> {
    let per = confusion_of(clouds, num_classes, ignore_index)?;
    let mut total = Confusion::new(num_classes);
    per.iter().for_each(|c| total.merge(c));
    if total.counted == 0 {
        return Err(Error::invalid("no labeled points to score"));
    }
    let iou = match mode {
        PartIouMode::Pooled => total.class_iou(),
        PartIouMode::PerBuildingAverage => {
            let each: Vec<Vec<Option<f64>>> = per.iter().map(Confusion::class_iou).collect();
            (0..num_classes)
                .map(|c| {
                    let vals: Vec<f64> = each.iter().filter_map(|v| v[c]).collect();
                    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
                })
                .collect()
        }
    };
    let mean = mean_present(&iou).expect("a counted point gives its class a non-zero union");
    Ok((iou, mean))
}

/// Mean over buildings of each building's mean IoU over its present classes.
/// Buildings without labeled points are skipped.
pub fn shape_iou(clouds: &[(&[usize], &[usize])], num_classes: usize, ignore_index: Option<usize>) -> Result<f64> {
    let per = confusion_of(clouds, num_classes, ignore_index)?;
    let scores: Vec<f64> = per.iter().filter(|c| c.counted > 0).filter_map(|c| mean_present(&c.class_iou())).collect();
    if scores.is_empty() {
        return Err(Error::invalid("no labeled points to score"));
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Evaluation summary. Metrics a task does not produce are `None`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub per_class_iou: Vec<Option<f64>>,
    pub part_iou: Option<f64>,
    pub shape_iou: Option<f64>,
    pub overall_accuracy: Option<f64>,
    pub harmonic_mean: Option<f64>,
}

impl EvalReport {
    pub fn from_parts(accuracy: Option<f64>, seg: Option<(Vec<Option<f64>>, f64, f64)>) -> Self {
        let (per_class_iou, part_iou, shape_iou) = match seg {
            Some((c, p, s)) => (c, Some(p), Some(s)),
            None => (Vec::new(), None, None),
        };
        let harmonic = match (accuracy, part_iou) {
            (Some(a), Some(p)) => Some(harmonic_mean(a, p)),
            _ => None,
        };
        EvalReport { per_class_iou, part_iou, shape_iou, overall_accuracy: accuracy, harmonic_mean: harmonic }
    }

    /// `key=value` lines for the scalar metrics that are present.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in [
            ("overall_accuracy", self.overall_accuracy),
            ("part_iou", self.part_iou),
            ("shape_iou", self.shape_iou),
            ("harmonic_mean", self.harmonic_mean),
        ] {
            if let Some(v) = v {
                let _ = writeln!(s, "{k}={v:.6}");
            }
        }
        s
    }

    /// `class,iou` rows in vocabulary order; unseen classes have an empty
    /// IoU field and the ignored class is omitted.
    pub fn to_csv(&self, vocab: &LabelVocabulary) -> String {
        let mut s = String::from("class,iou\n");
        for (c, name) in vocab.names().iter().enumerate() {
            if Some(c) == vocab.ignore_index() {
                continue;
            }
            match self.per_class_iou.get(c).copied().flatten() {
                Some(v) => {
                    let _ = writeln!(s, "{name},{v:.4}");
                }
                None => {
                    let _ = writeln!(s, "{name},");
                }
            }
        }
        s
    }

    pub fn write(&self, text_path: &Path, csv_path: Option<(&Path, &LabelVocabulary)>) -> Result<()> {
        std::fs::write(text_path, self.to_text()).map_err(|e| Error::io(text_path, e))?;
        if let Some((p, vocab)) = csv_path {
            std::fs::write(p, self.to_csv(vocab)).map_err(|e| Error::io(p, e))?;
        }
        Ok(())
    }

    /// Parses the scalar metrics written by [`EvalReport::to_text`].
    pub fn parse_text(text: &str) -> Result<Self> {
        let mut r = EvalReport::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::invalid(format!("report line {}: missing '='", i + 1)))?;
            let v: f64 = v.parse().map_err(|_| Error::invalid(format!("report line {}: bad number {v:?}", i + 1)))?;
            let slot = match k {
                "overall_accuracy" => &mut r.overall_accuracy,
                "part_iou" => &mut r.part_iou,
                "shape_iou" => &mut r.shape_iou,
                "harmonic_mean" => &mut r.harmonic_mean,
                _ => return Err(Error::invalid(format!("report line {}: unknown key {k:?}", i + 1))),
            };
            *slot = Some(v);
        }
        Ok(r)
    }
}
