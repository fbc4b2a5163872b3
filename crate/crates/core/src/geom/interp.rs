use crate::error::{Error, Result};
use crate::geom::neighbors::knn;
use crate::scalar::{Real, Vec3};

/// Default guard against the zero-distance singularity.
pub const INTERP_EPS: f64 = 1e-8;

/// Normalized inverse-distance weights `w = 1/(d + eps)` over the `k` nearest
/// sources of each target. Returns flat `(indices, weights)` with `k` per target.
pub fn interpolation_weights<T: Real>(
    source: &[Vec3<T>],
    target: &[Vec3<T>],
    k: usize,
    eps: T,
) -> Result<(Vec<usize>, Vec<T>)> {
    if source.is_empty() {
        return Err(Error::invalid("interpolation from an empty source set"));
    }
    let (idx, dist) = knn(source, target, k)?;
    let mut w: Vec<T> = dist.iter().map(|&d| T::one() / (d + eps)).collect();
    for row in w.chunks_mut(k) {
        let s: T = row.iter().copied().sum();
        for v in row {
            *v /= s;
        }
    }
    Ok((idx, w))
}

/// Inverse-distance weighted k-NN interpolation of row-major `features`
/// (`source.len() x channels`) onto `target`.
pub fn inverse_distance_interpolate<T: Real>(
    source: &[Vec3<T>],
    features: &[T],
    channels: usize,
    target: &[Vec3<T>],
    k: usize,
    eps: T,
) -> Result<Vec<T>> {
    if features.len() != source.len() * channels {
        return Err(Error::Shape(format!(
            "features hold {} values, expected {} x {channels}",
            features.len(),
            source.len()
        )));
    }
    let (idx, w) = interpolation_weights(source, target, k, eps)?;
    let mut out = vec![T::zero(); target.len() * channels];
    for (t, row) in out.chunks_mut(channels).enumerate() {
        for s in 0..k {
            let j = idx[t * k + s];
            let wj = w[t * k + s];
            for (o, &f) in row.iter_mut().zip(&features[j * channels..(j + 1) * channels]) {
                *o += wj * f;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coincident_target_takes_source_feature() {
        let src: Vec<Vec3<f64>> = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        let feats = [1.0, 10.0, 2.0, 20.0, 3.0, 30.0];
        let out = inverse_distance_interpolate(&src, &feats, 2, &[[1.0, 0.0, 0.0]], 3, 1e-8).unwrap();
        assert!((out[0] - 2.0).abs() / 2.0 < 1e-6);
        assert!((out[1] - 20.0).abs() / 20.0 < 1e-6);
    }

    #[test]
    fn midpoint_is_arithmetic_mean() {
        let src: Vec<Vec3<f64>> = vec![[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]];
        let out = inverse_distance_interpolate(&src, &[4.0, 8.0], 1, &[[1.0, 0.0, 0.0]], 2, 1e-8).unwrap();
        assert!((out[0] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn constant_features_stay_constant() {
        let src: Vec<Vec3<f32>> = (0..6).map(|i| [i as f32 * 0.1, (i * i) as f32 * 0.01, 0.0]).collect();
        let feats = vec![0.75f32; 6];
        let tgt: Vec<Vec3<f32>> = vec![[0.05, 0.0, 0.3], [0.33, 0.2, -0.1]];
        let out = inverse_distance_interpolate(&src, &feats, 1, &tgt, 3, 1e-8).unwrap();
        assert!(out.iter().all(|&v| (v - 0.75).abs() < 1e-6));
    }

    #[test]
    fn errors() {
        assert!(inverse_distance_interpolate::<f64>(&[], &[], 1, &[[0.0; 3]], 1, 1e-8).is_err());
        assert!(inverse_distance_interpolate(&[[0.0f64; 3]], &[1.0], 1, &[[0.0; 3]], 2, 1e-8).is_err());
        assert!(inverse_distance_interpolate(&[[0.0f64; 3]], &[1.0, 2.0], 1, &[[0.0; 3]], 1, 1e-8).is_err());
    }
}
