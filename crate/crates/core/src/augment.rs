//! Pre- and post-voxelization data augmentation.
//!
//! Randomized operations draw from the stream they are given and skip their
//! draws entirely when disabled (probability 0, unit scale range, zero noise),
//! so enabling one augmentation never perturbs the draws of another.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{compute_heights, Axis, PointCloud};
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    pub rotation_enabled: bool,
    pub up_axis: Axis,
    pub scale_range: [f64; 2],
    pub jitter_sigma: f64,
    pub jitter_clip: f64,
    pub color_drop_prob: f64,
    pub color_contrast_prob: f64,
    pub contrast_blend: f64,
    /// Passes over the training split per epoch.
    pub loop_factor: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            rotation_enabled: true,
            up_axis: Axis::Y,
            scale_range: [0.9, 1.1],
            jitter_sigma: 0.005,
            jitter_clip: 0.02,
            color_drop_prob: 0.2,
            color_contrast_prob: 0.2,
            contrast_blend: 0.5,
            loop_factor: 12,
        }
    }
}

impl AugmentConfig {
    /// Every augmentation switched off.
    pub fn disabled() -> Self {
        AugmentConfig {
            rotation_enabled: false,
            scale_range: [1.0, 1.0],
            jitter_sigma: 0.0,
            jitter_clip: 0.0,
            color_drop_prob: 0.0,
            color_contrast_prob: 0.0,
            contrast_blend: 0.0,
            loop_factor: 1,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.scale_range;
        if !(lo > 0.0 && lo <= hi) {
            return Err(Error::Config(format!("scale range [{lo}, {hi}] must satisfy 0 < lo <= hi")));
        }
        if !(self.jitter_sigma >= 0.0 && self.jitter_clip >= 0.0) {
            return Err(Error::Config("jitter sigma and clip must be non-negative".into()));
        }
        for (name, p) in [
            ("color_drop_prob", self.color_drop_prob),
            ("color_contrast_prob", self.color_contrast_prob),
            ("contrast_blend", self.contrast_blend),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} = {p} outside [0, 1]")));
            }
        }
        if self.loop_factor == 0 {
            return Err(Error::Config("loop_factor must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    PreVoxelize,
    PostVoxelize,
}

fn bernoulli<R: Rng + ?Sized>(rng: &mut R, p: f64) -> bool {
    if p <= 0.0 {
        false
    } else if p >= 1.0 {
        true
    } else {
        rng.random::<f64>() < p
    }
}

/// Rotates coordinates and normals by `theta` radians about `axis`
/// (right-handed).
pub fn rotate_about<T: Real>(mut cloud: PointCloud<T>, axis: Axis, theta: f64) -> PointCloud<T> {
    let (s, c) = (T::of(theta.sin()), T::of(theta.cos()));
    // (a, b) is the rotated plane ordered so that a -> b is a positive turn
    let (a, b) = match axis {
        Axis::X => (1, 2),
        Axis::Y => (2, 0),
        Axis::Z => (0, 1),
    };
    let rot = |v: &mut [T; 3]| {
        let (va, vb) = (v[a], v[b]);
        v[a] = c * va - s * vb;
        v[b] = s * va + c * vb;
    };
    cloud.coords.iter_mut().for_each(rot);
    if let Some(n) = cloud.normals.as_mut() {
        n.iter_mut().for_each(rot);
    }
    cloud
}

/// Rotation about the up axis by an angle drawn from `[0, 2pi)`.
pub fn random_rotation<T: Real, R: Rng + ?Sized>(cloud: PointCloud<T>, up: Axis, rng: &mut R) -> PointCloud<T> {
    let theta = rng.random::<f64>() * std::f64::consts::TAU;
    rotate_about(cloud, up, theta)
}

pub fn scale<T: Real>(mut cloud: PointCloud<T>, factor: f64) -> PointCloud<T> {
    let f = T::of(factor);
    for p in &mut cloud.coords {
        for v in p.iter_mut() {
            *v *= f;
        }
    }
    cloud
}

/// Multiplies all coordinates by one factor drawn from `[lo, hi]`.
pub fn random_scaling<T: Real, R: Rng + ?Sized>(cloud: PointCloud<T>, range: [f64; 2], rng: &mut R) -> PointCloud<T> {
    let [lo, hi] = range;
    let factor = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    scale(cloud, factor)
}

/// Adds clamped i.i.d. Gaussian noise to every coordinate component.
pub fn jitter<T: Real, R: Rng + ?Sized>(mut cloud: PointCloud<T>, sigma: f64, clip: f64, rng: &mut R) -> PointCloud<T> {
    if sigma <= 0.0 || clip <= 0.0 {
        return cloud;
    }
    let normal = Normal::new(0.0, sigma).expect("sigma is positive and finite");
    for p in &mut cloud.coords {
        for v in p.iter_mut() {
            *v += T::of(normal.sample(rng).clamp(-clip, clip));
        }
    }
    cloud
}

/// Zeroes all colors with probability `prob`.
pub fn color_drop<T: Real, R: Rng + ?Sized>(mut cloud: PointCloud<T>, prob: f64, rng: &mut R) -> PointCloud<T> {
    if cloud.colors.is_none() {
        return cloud;
    }
    if bernoulli(rng, prob) {
        if let Some(c) = cloud.colors.as_mut() {
            c.iter_mut().for_each(|v| *v = [T::zero(); 3]);
        }
    }
    cloud
}

/// With probability `prob`, stretches each color channel to `[0, 1]` and
/// blends the result with the original by `blend`.
pub fn color_auto_contrast<T: Real, R: Rng + ?Sized>(
    mut cloud: PointCloud<T>,
    prob: f64,
    blend: f64,
    rng: &mut R,
) -> PointCloud<T> {
    if cloud.colors.is_none() || !bernoulli(rng, prob) {
        return cloud;
    }
    let colors = cloud.colors.as_mut().unwrap();
    let blend = T::of(blend);
    for ch in 0..3 {
        let lo = colors.iter().map(|c| c[ch]).fold(T::infinity(), T::min);
        let hi = colors.iter().map(|c| c[ch]).fold(T::neg_infinity(), T::max);
        if !(hi > lo) {
            continue;
        }
        let span = hi - lo;
        for c in colors.iter_mut() {
            let stretched = (c[ch] - lo) / span;
            c[ch] = (blend * stretched + (T::one() - blend) * c[ch]).max(T::zero()).min(T::one());
        }
    }
    cloud
}

/// Runs one stage of the pipeline. The pre-voxelization stage only rotates;
/// the post-voxelization stage applies auto contrast, scaling, jitter and
/// color drop in that order. Heights are recomputed afterwards.
pub fn apply_pipeline<T: Real, R: Rng + ?Sized>(
    cloud: PointCloud<T>,
    cfg: &AugmentConfig,
    stage: Stage,
    rng: &mut R,
) -> PointCloud<T> {
    let had_heights = cloud.heights.is_some();
    let out = match stage {
        Stage::PreVoxelize => {
            if cfg.rotation_enabled {
                random_rotation(cloud, cfg.up_axis, rng)
            } else {
                cloud
            }
        }
        Stage::PostVoxelize => {
            let c = color_auto_contrast(cloud, cfg.color_contrast_prob, cfg.contrast_blend, rng);
            let c = random_scaling(c, cfg.scale_range, rng);
            let c = jitter(c, cfg.jitter_sigma, cfg.jitter_clip, rng);
            color_drop(c, cfg.color_drop_prob, rng)
        }
    };
    if had_heights {
        compute_heights(out, cfg.up_axis)
    } else {
        out
    }
}
