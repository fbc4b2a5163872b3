//! Parameter-free neighborhood structure of one cloud, computed once per
//! forward pass from coordinates alone.

use crate::data::PointCloud;
use crate::error::{Error, Result};
use crate::geom::{ball_query, farthest_point_sampling, interpolation_weights, FpsStart, INTERP_EPS};
use crate::model::config::ModelConfig;
use crate::scalar::{Real, Vec3};

/// One grouping: `k` neighbor rows per center with offsets scaled by `1/radius`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grouping<T> {
    pub k: usize,
    pub neighbors: Vec<usize>,
    /// `centers * k * 3` relative coordinates.
    pub offsets: Vec<T>,
}

fn group<T: Real>(coords: &[Vec3<T>], centers: &[usize], radius: f64, k: usize) -> Result<Grouping<T>> {
    let r = T::of(radius);
    let nb = ball_query(coords, centers, r, k)?;
    let offsets = nb.offsets.iter().flat_map(|o| o.iter().map(move |&v| v / r)).collect();
    Ok(Grouping { k, neighbors: nb.neighbors, offsets })
}

/// Encoder level `t >= 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelGeometry<T> {
    pub coords: Vec<Vec3<T>>,
    /// Indices into the previous level.
    pub sampled: Vec<usize>,
    /// Centers = sampled points, neighbors from the previous level.
    pub down: Grouping<T>,
    /// Stride-1 grouping within this level, for residual blocks.
    pub local: Grouping<T>,
    /// Interpolation from this level onto the previous one:
    /// `interp_neighbors` (index, weight) pairs per previous-level point.
    pub up_idx: Vec<usize>,
    pub up_w: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CloudGeometry<T> {
    pub coords: Vec<Vec3<T>>,
    pub levels: Vec<LevelGeometry<T>>,
}

impl<T: Real> CloudGeometry<T> {
    pub fn num_points(&self) -> usize {
        self.coords.len()
    }

    /// Point count at level `t` (0 = input).
    pub fn level_len(&self, t: usize) -> usize {
        if t == 0 {
            self.coords.len()
        } else {
            self.levels[t - 1].coords.len()
        }
    }

    /// Builds all levels. `starts` supplies the FPS start for each stage given
    /// the number of candidate points.
    pub fn build(coords: &[Vec3<T>], cfg: &ModelConfig, mut starts: impl FnMut(usize) -> FpsStart) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::invalid("cannot build geometry for an empty cloud"));
        }
        let mut levels: Vec<LevelGeometry<T>> = Vec::with_capacity(cfg.stages.len());
        let mut prev: Vec<Vec3<T>> = coords.to_vec();
        for stage in &cfg.stages {
            let sampled = farthest_point_sampling(&prev, stage.stride, starts(prev.len()))?;
            let cur: Vec<Vec3<T>> = sampled.iter().map(|&i| prev[i]).collect();
            let down = group(&prev, &sampled, stage.radius, stage.neighbors)?;
            let all: Vec<usize> = (0..cur.len()).collect();
            let local = group(&cur, &all, stage.radius, stage.neighbors)?;
            let (up_idx, up_w) = interp_padded(&cur, &prev, cfg.interp_neighbors)?;
            levels.push(LevelGeometry { coords: cur.clone(), sampled, down, local, up_idx, up_w });
            prev = cur;
        }
        Ok(CloudGeometry { coords: coords.to_vec(), levels })
    }
}

/// Interpolation weights with exactly `k` slots per target; when the source
/// has fewer than `k` points the spare slots repeat the nearest source with
/// weight zero.
fn interp_padded<T: Real>(source: &[Vec3<T>], target: &[Vec3<T>], k: usize) -> Result<(Vec<usize>, Vec<T>)> {
    let ke = k.min(source.len());
    let (idx, w) = interpolation_weights(source, target, ke, T::of(INTERP_EPS))?;
    if ke == k {
        return Ok((idx, w));
    }
    let mut pi = Vec::with_capacity(target.len() * k);
    let mut pw = Vec::with_capacity(target.len() * k);
    for (ir, wr) in idx.chunks(ke).zip(w.chunks(ke)) {
        pi.extend_from_slice(ir);
        pw.extend_from_slice(wr);
        for _ in ke..k {
            pi.push(ir[0]);
            pw.push(T::zero());
        }
    }
    Ok((pi, pw))
}

/// Row-major `n x 10` input features: normals, colors, height, coordinates.
/// Absent attributes contribute zeros.
pub fn point_features<T: Real>(cloud: &PointCloud<T>) -> Vec<T> {
    let n = cloud.len();
    let mut out = Vec::with_capacity(n * 10);
    let zero3 = [T::zero(); 3];
    for i in 0..n {
        out.extend_from_slice(cloud.normals.as_ref().map_or(&zero3, |v| &v[i]));
        out.extend_from_slice(cloud.colors.as_ref().map_or(&zero3, |v| &v[i]));
        out.push(cloud.heights.as_ref().map_or(T::zero(), |h| h[i]));
        out.extend_from_slice(&cloud.coords[i]);
    }
    out
}
