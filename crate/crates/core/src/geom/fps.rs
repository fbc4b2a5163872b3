use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::{dist2, Real, Vec3};

/// First-point policy for farthest point sampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FpsStart {
    /// Always start from index 0.
    #[default]
    First,
    At(usize),
}

impl FpsStart {
    /// Uniformly random start among `n` points.
    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        FpsStart::At(if n == 0 { 0 } else { rng.random_range(0..n) })
    }

    fn index(self) -> usize {
        match self {
            FpsStart::First => 0,
            FpsStart::At(i) => i,
        }
    }
}

/// Number of centroids kept for `n` points at `stride`: `max(1, n / stride)`.
pub fn sampled_count(n: usize, stride: usize) -> usize {
    (n / stride.max(1)).max(1)
}

/// Greedy farthest point sampling. Each new index maximizes the minimum
/// distance to the already chosen set; ties go to the lowest index.
pub fn farthest_point_sampling<T: Real>(coords: &[Vec3<T>], stride: usize, start: FpsStart) -> Result<Vec<usize>> {
    let n = coords.len();
    if n == 0 {
        return Err(Error::invalid("farthest point sampling on an empty point set"));
    }
    if stride == 0 {
        return Err(Error::invalid("stride must be positive"));
    }
    let first = start.index();
    if first >= n {
        return Err(Error::invalid(format!("start index {first} out of range for {n} points")));
    }
    let m = sampled_count(n, stride);
    let mut chosen = Vec::with_capacity(m);
    let mut min_d2 = vec![T::infinity(); n];
    let mut last = first;
    chosen.push(first);
    while chosen.len() < m {
        let p = coords[last];
        let mut best = 0usize;
        let mut best_d = T::neg_infinity();
        for (i, (q, d)) in coords.iter().zip(min_d2.iter_mut()).enumerate() {
            let nd = dist2(&p, q);
            if nd < *d {
                *d = nd;
            }
            if *d > best_d {
                best_d = *d;
                best = i;
            }
        }
        chosen.push(best);
        last = best;
    }
    Ok(chosen)
}
