use std::collections::BTreeMap;

use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::{Real, Vec3};

pub type CellKey = [i64; 3];

/// Partition of point indices into cubic cells keyed by `floor(p / voxel_size)`.
/// Cells are kept in key order and members in ascending index order.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid<T> {
    pub voxel_size: T,
    pub cells: Vec<(CellKey, Vec<usize>)>,
    pub max_occupancy: usize,
}

impl<T: Real> VoxelGrid<T> {
    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn num_points(&self) -> usize {
        self.cells.iter().map(|(_, m)| m.len()).sum()
    }
}

/// Cell key of a single point.
pub fn cell_key<T: Real>(p: &Vec3<T>, voxel_size: T) -> CellKey {
    let f = |v: T| (v / voxel_size).floor().to_i64().unwrap_or(i64::MAX);
    [f(p[0]), f(p[1]), f(p[2])]
}

pub fn build_voxel_grid<T: Real>(coords: &[Vec3<T>], voxel_size: T) -> Result<VoxelGrid<T>> {
    if !(voxel_size > T::zero()) || !voxel_size.is_finite() {
        return Err(Error::invalid(format!("voxel size must be positive, got {voxel_size}")));
    }
    let mut map: BTreeMap<CellKey, Vec<usize>> = BTreeMap::new();
    for (i, p) in coords.iter().enumerate() {
        if !p.iter().all(|c| c.is_finite()) {
            return Err(Error::NonFinite(format!("coordinate row {i}")));
        }
        map.entry(cell_key(p, voxel_size)).or_default().push(i);
    }
    let cells: Vec<_> = map.into_iter().collect();
    let max_occupancy = cells.iter().map(|(_, m)| m.len()).max().unwrap_or(0);
    Ok(VoxelGrid { voxel_size, cells, max_occupancy })
}

/// One uniformly chosen member per cell, then resized to exactly
/// `sample_size`: subsampled without replacement when there are more cells,
/// topped up with replacement from the selection when there are fewer.
pub fn sample_train_subcloud<T: Real, R: Rng + ?Sized>(
    grid: &VoxelGrid<T>,
    sample_size: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if grid.cells.is_empty() {
        return Err(Error::invalid("cannot sample from an empty voxel grid"));
    }
    if sample_size == 0 {
        return Err(Error::invalid("sample size must be positive"));
    }
    let picked: Vec<usize> = grid.cells.iter().map(|(_, m)| m[rng.random_range(0..m.len())]).collect();
    let c = picked.len();
    if c >= sample_size {
        if c == sample_size {
            return Ok(picked);
        }
        return Ok(index::sample(rng, c, sample_size).into_iter().map(|i| picked[i]).collect());
    }
    let mut out = picked;
    for _ in c..sample_size {
        out.push(out[rng.random_range(0..c)]);
    }
    Ok(out)
}

/// `max_occupancy` sub-clouds; sub-cloud `t` takes member `t mod occupancy`
/// of every cell, so together they cover every point.
pub fn enumerate_test_subclouds<T: Real>(grid: &VoxelGrid<T>) -> Result<Vec<Vec<usize>>> {
    if grid.cells.is_empty() {
        return Err(Error::invalid("cannot enumerate an empty voxel grid"));
    }
    Ok((0..grid.max_occupancy)
        .map(|t| grid.cells.iter().map(|(_, m)| m[t % m.len()]).collect())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    fn three_points() -> Vec<Vec3<f64>> {
        vec![[0.1, 0.1, 0.1], [0.2, 0.2, 0.2], [0.9, 0.9, 0.9]]
    }

    #[test]
    fn hand_quantization() {
        let g = build_voxel_grid(&three_points(), 0.5).unwrap();
        assert_eq!(g.num_cells(), 2);
        assert_eq!(g.cells[0], ([0, 0, 0], vec![0, 1]));
        assert_eq!(g.cells[1], ([1, 1, 1], vec![2]));
        assert_eq!(g.max_occupancy, 2);
        let one = build_voxel_grid(&[[0.3f32, -0.2, 0.0]], 0.1).unwrap();
        assert_eq!(one.num_cells(), 1);
    }

    #[test]
    fn negative_coordinates_floor_downward() {
        assert_eq!(cell_key(&[-0.01f64, 0.0, 0.49], 0.5), [-1, 0, 0]);
    }

    #[test]
    fn rejects_bad_size_and_nan() {
        assert!(build_voxel_grid(&three_points(), 0.0).is_err());
        assert!(build_voxel_grid(&[[f64::NAN, 0.0, 0.0]], 0.1).is_err());
    }

    #[test]
    fn enumeration_hand_case() {
        let g = build_voxel_grid(&three_points(), 0.5).unwrap();
        let subs = enumerate_test_subclouds(&g).unwrap();
        assert_eq!(subs, vec![vec![0, 2], vec![1, 2]]);
    }

    #[test]
    fn singleton_cells_give_one_subcloud() {
        let pts: Vec<Vec3<f32>> = (0..5).map(|i| [i as f32, 0.0, 0.0]).collect();
        let g = build_voxel_grid(&pts, 0.5).unwrap();
        assert_eq!(enumerate_test_subclouds(&g).unwrap(), vec![vec![0, 1, 2, 3, 4]]);
    }

    #[test]
    fn train_sampling_sizes_and_coverage() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = build_voxel_grid(&three_points(), 0.5).unwrap();
        let two = sample_train_subcloud(&g, 2, &mut rng).unwrap();
        assert_eq!(two.len(), 2);
        assert!(two.contains(&2) && (two.contains(&0) || two.contains(&1)));

        let pts: Vec<Vec3<f64>> = (0..3).map(|i| [i as f64, 0.0, 0.0]).collect();
        let g3 = build_voxel_grid(&pts, 0.5).unwrap();
        for _ in 0..50 {
            let s = sample_train_subcloud(&g3, 5, &mut rng).unwrap();
            assert_eq!(s.len(), 5);
            let distinct: HashSet<_> = s.iter().collect();
            assert_eq!(distinct.len(), 3);
        }

        let pts10: Vec<Vec3<f64>> = (0..10).map(|i| [i as f64, 0.0, 0.0]).collect();
        let g10 = build_voxel_grid(&pts10, 0.5).unwrap();
        for _ in 0..200 {
            let s = sample_train_subcloud(&g10, 4, &mut rng).unwrap();
            let cells: HashSet<_> = s.iter().map(|&i| cell_key(&pts10[i], 0.5)).collect();
            assert_eq!(cells.len(), 4);
        }
    }
}
