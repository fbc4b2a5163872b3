//! Test-time inference over voxel sub-clouds with per-point logit averaging.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::autodiff::Graph;
use crate::data::{compute_heights, Axis, PointCloud};
use crate::error::{Error, Result};
use crate::geom::{build_voxel_grid, enumerate_test_subclouds};
use crate::metrics::{overall_accuracy, part_iou, shape_iou, EvalReport, PartIouMode};
use crate::model::{Mode, ModelInput, PointNeXt};
use crate::scalar::Real;

/// Aggregated model output for one cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct CloudPrediction {
    pub name: String,
    pub subclouds: usize,
    /// Mean logits, `n x parts`, row-major.
    pub seg_logits: Option<Vec<f64>>,
    /// Predicted part labels (1-based).
    pub part_labels: Option<Vec<usize>>,
    /// Mean classifier logits over sub-clouds.
    pub cls_logits: Option<Vec<f64>>,
    pub type_label: Option<usize>,
}

/// Index of the largest value; the first one wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Sub-cloud `indices` of `cloud` with heights recomputed on the subset.
pub fn subcloud<T: Real>(cloud: &PointCloud<T>, indices: &[usize], up: Axis) -> PointCloud<T> {
    compute_heights(cloud.subset(indices), up)
}

/// Raw eval-mode logits of one sub-cloud: `(seg rows, cls row)`.
pub fn subcloud_logits<T: Real>(model: &PointNeXt<T>, sub: &PointCloud<T>) -> Result<(Option<Vec<f64>>, Option<Vec<f64>>)> {
    let input = ModelInput::prepare(std::slice::from_ref(sub), model.config(), None)?;
    let mut g = Graph::new();
    let params = model.store().bind(&mut g);
    let out = model.forward(&mut g, &params, &input, &mut Mode::Eval)?;
    let read = |g: &Graph<T>, v| g.value(v).data().iter().map(|x: &T| x.to_f64_lossy()).collect::<Vec<f64>>();
    Ok((out.seg_logits.map(|v| read(&g, v)), out.cls_logits.map(|v| read(&g, v))))
}

/// Runs every test sub-cloud of the voxel grid and averages per-point logits
/// over the sub-clouds containing each point.
pub fn predict_cloud<T: Real>(model: &PointNeXt<T>, cloud: &PointCloud<T>, voxel_size: f64, up: Axis) -> Result<CloudPrediction> {
    let grid = build_voxel_grid(&cloud.coords, T::of(voxel_size))?;
    let subs = enumerate_test_subclouds(&grid)?;
    let n = cloud.len();
    let parts = model.config().num_parts;
    let mut seg_sum: Option<Vec<f64>> = None;
    let mut seen = vec![0usize; n];
    let mut cls_sum: Option<Vec<f64>> = None;
    for idx in &subs {
        let (seg, cls) = subcloud_logits(model, &subcloud(cloud, idx, up))?;
        if let Some(seg) = seg {
            let acc = seg_sum.get_or_insert_with(|| vec![0.0; n * parts]);
            for (r, &p) in idx.iter().enumerate() {
                for (a, &v) in acc[p * parts..(p + 1) * parts].iter_mut().zip(&seg[r * parts..(r + 1) * parts]) {
                    *a += v;
                }
                seen[p] += 1;
            }
        }
        if let Some(cls) = cls {
            let acc = cls_sum.get_or_insert_with(|| vec![0.0; cls.len()]);
            acc.iter_mut().zip(&cls).for_each(|(a, v)| *a += v);
        }
    }
    let seg_logits = match seg_sum {
        Some(mut s) => {
            for (row, &c) in s.chunks_mut(parts).zip(&seen) {
                if c == 0 {
                    return Err(Error::invalid(format!("{}: a point is covered by no sub-cloud", cloud.name)));
                }
                row.iter_mut().for_each(|v| *v /= c as f64);
            }
            Some(s)
        }
        None => None,
    };
    let part_labels = seg_logits.as_ref().map(|s| s.chunks(parts).map(|r| argmax(r) + 1).collect());
    let cls_logits = cls_sum.map(|mut c| {
        c.iter_mut().for_each(|v| *v /= subs.len() as f64);
        c
    });
    let type_label = cls_logits.as_deref().map(argmax);
    Ok(CloudPrediction { name: cloud.name.clone(), subclouds: subs.len(), seg_logits, part_labels, cls_logits, type_label })
}

pub fn predict_clouds<T: Real>(model: &PointNeXt<T>, clouds: &[PointCloud<T>], voxel_size: f64, up: Axis) -> Result<Vec<CloudPrediction>> {
    clouds.par_iter().map(|c| predict_cloud(model, c, voxel_size, up)).collect()
}

/// Metrics of `preds` against the labels stored in `clouds`. Fails when a
/// label needed for a predicted output is missing.
pub fn score<T: Real>(clouds: &[PointCloud<T>], preds: &[CloudPrediction], mode: PartIouMode) -> Result<EvalReport> {
    if clouds.len() != preds.len() || clouds.is_empty() {
        return Err(Error::invalid(format!("{} predictions for {} clouds", preds.len(), clouds.len())));
    }
    let accuracy = if preds[0].type_label.is_some() {
        let mut p = Vec::new();
        let mut t = Vec::new();
        for (c, pr) in clouds.iter().zip(preds) {
            t.push(c.type_label.ok_or_else(|| Error::invalid(format!("{}: no type label to score against", c.name)))?);
            p.push(pr.type_label.ok_or_else(|| Error::invalid("mixed prediction kinds"))?);
        }
        Some(overall_accuracy(&p, &t)?)
    } else {
        None
    };
    let seg = if preds[0].part_labels.is_some() {
        let mut pairs = Vec::new();
        for (c, pr) in clouds.iter().zip(preds) {
            let truth = c.seg_labels.as_deref().ok_or_else(|| Error::invalid(format!("{}: no part labels to score against", c.name)))?;
            let pred = pr.part_labels.as_deref().ok_or_else(|| Error::invalid("mixed prediction kinds"))?;
            pairs.push((pred, truth));
        }
        let (classes, piou) = part_iou(&pairs, 32, Some(0), mode)?;
        let siou = shape_iou(&pairs, 32, Some(0))?;
        Some((classes, piou, siou))
    } else {
        None
    };
    if accuracy.is_none() && seg.is_none() {
        return Err(Error::invalid("model produces no task outputs to score"));
    }
    Ok(EvalReport::from_parts(accuracy, seg))
}

pub fn evaluate<T: Real>(model: &PointNeXt<T>, clouds: &[PointCloud<T>], voxel_size: f64, up: Axis, mode: PartIouMode) -> Result<EvalReport> {
    let preds = predict_clouds(model, clouds, voxel_size, up)?;
    score(clouds, &preds, mode)
}

/// Writes `<name>.txt` per cloud with one predicted part label per line.
pub fn write_label_files(preds: &[CloudPrediction], out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    for p in preds {
        let labels = p.part_labels.as_ref().ok_or_else(|| Error::invalid("model has no segmentation output"))?;
        let mut s = String::with_capacity(labels.len() * 3);
        for l in labels {
            let _ = writeln!(s, "{l}");
        }
        let path = out_dir.join(format!("{}.txt", p.name));
        std::fs::write(&path, s).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

/// Reads a label file written by [`write_label_files`].
pub fn read_label_file(path: &Path) -> Result<Vec<usize>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .map(|(i, l)| {
            l.trim().parse().map_err(|_| Error::Format { path: path.into(), line: i + 1, msg: format!("bad label {l:?}") })
        })
        .collect()
}
