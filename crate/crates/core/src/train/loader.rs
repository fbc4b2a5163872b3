//! Per-epoch sample schedule and augmented training batches.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::augment::{apply_pipeline, Stage};
use crate::data::{compute_heights, PointCloud};
use crate::error::Result;
use crate::geom::{build_voxel_grid, sample_train_subcloud};
use crate::model::{ModelConfig, ModelInput};
use crate::scalar::Real;
use crate::seed::stream_seed;
use crate::train::config::TrainConfig;

pub(crate) const ORDER_STREAM: u64 = 1;
pub(crate) const SAMPLE_STREAM: u64 = 2;
pub(crate) const FPS_STREAM: u64 = 3;
pub(crate) const DROPOUT_STREAM: u64 = 4;
pub(crate) const VIEW_STREAM: u64 = 5;

/// One training example: cloud `index` in loop pass `pass`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchItem {
    pub pass: usize,
    pub index: usize,
}

/// Batches for one epoch: `loop_factor` shuffled passes over `n` clouds,
/// cut into batches of `batch_size`. A trailing batch of one is merged into
/// its predecessor.
pub fn epoch_schedule(n: usize, cfg: &TrainConfig, epoch: usize) -> Vec<Vec<BatchItem>> {
    let mut items = Vec::with_capacity(n * cfg.loop_factor());
    for pass in 0..cfg.loop_factor() {
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, &[ORDER_STREAM, epoch as u64, pass as u64]));
        order.shuffle(&mut rng);
        items.extend(order.into_iter().map(|index| BatchItem { pass, index }));
    }
    let mut batches: Vec<Vec<BatchItem>> = items.chunks(cfg.batch_size).map(<[_]>::to_vec).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() == 1) {
        let last = batches.pop().unwrap();
        batches.last_mut().unwrap().extend(last);
    }
    batches
}

/// Rotation, voxel subsampling to `sample_size` points, then the
/// post-voxelization augmentations.
pub fn training_sample<T: Real, R: Rng + ?Sized>(cloud: &PointCloud<T>, cfg: &TrainConfig, rng: &mut R) -> Result<PointCloud<T>> {
    let aug = &cfg.augment;
    let base = compute_heights(cloud.clone(), aug.up_axis);
    let rotated = apply_pipeline(base, aug, Stage::PreVoxelize, rng);
    let grid = build_voxel_grid(&rotated.coords, T::of(cfg.voxel_size))?;
    let idx = sample_train_subcloud(&grid, cfg.sample_size, rng)?;
    Ok(apply_pipeline(rotated.subset(&idx), aug, Stage::PostVoxelize, rng))
}

/// Augmented clouds and prepared network input for one batch.
pub struct LoadedBatch<T> {
    pub clouds: Vec<PointCloud<T>>,
    pub input: ModelInput<T>,
}

pub fn load_batch<T: Real>(
    clouds: &[PointCloud<T>],
    items: &[BatchItem],
    cfg: &TrainConfig,
    model_cfg: &ModelConfig,
    epoch: usize,
) -> Result<LoadedBatch<T>> {
    let path = |stream: u64, it: &BatchItem| stream_seed(cfg.seed, &[stream, epoch as u64, it.pass as u64, it.index as u64]);
    let samples = items
        .par_iter()
        .map(|it| {
            let mut rng = ChaCha8Rng::seed_from_u64(path(SAMPLE_STREAM, it));
            training_sample(&clouds[it.index], cfg, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    let fps: Vec<u64> = items.iter().map(|it| path(FPS_STREAM, it)).collect();
    let input = ModelInput::prepare(&samples, model_cfg, Some(&fps))?;
    Ok(LoadedBatch { clouds: samples, input })
}

/// Runs `consume` on every batch of the epoch while a helper thread loads
/// up to `depth` batches ahead. Stops at the first error from either side.
pub fn for_each_batch<T: Real>(
    clouds: &[PointCloud<T>],
    schedule: &[Vec<BatchItem>],
    cfg: &TrainConfig,
    model_cfg: &ModelConfig,
    epoch: usize,
    depth: usize,
    mut consume: impl FnMut(usize, LoadedBatch<T>) -> Result<bool>,
) -> Result<()> {
    if depth == 0 {
        for (i, items) in schedule.iter().enumerate() {
            if !consume(i, load_batch(clouds, items, cfg, model_cfg, epoch)?)? {
                break;
            }
        }
        return Ok(());
    }
    std::thread::scope(|s| {
        let (tx, rx) = std::sync::mpsc::sync_channel(depth);
        s.spawn(move || {
            for items in schedule {
                let b = load_batch(clouds, items, cfg, model_cfg, epoch);
                let failed = b.is_err();
                if tx.send(b).is_err() || failed {
                    break;
                }
            }
        });
        for (i, b) in rx.iter().enumerate() {
            if !consume(i, b?)? {
                break;
            }
        }
        Ok(())
    })
}
