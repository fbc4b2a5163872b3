use crate::error::{Error, Result};
use crate::scalar::{dist2, sub3, Real, Vec3};

/// Grouping result: `k` neighbor slots per centroid, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborIndex<T> {
    pub centroid_indices: Vec<usize>,
    pub k: usize,
    /// `centroid_indices.len() * k` source indices.
    pub neighbors: Vec<usize>,
    /// `p_neighbor - p_centroid` for each slot.
    pub offsets: Vec<Vec3<T>>,
}

impl<T> NeighborIndex<T> {
    pub fn row(&self, i: usize) -> &[usize] {
        &self.neighbors[i * self.k..(i + 1) * self.k]
    }

    pub fn len(&self) -> usize {
        self.centroid_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centroid_indices.is_empty()
    }
}

/// Fills `out` (length `k`) with the first `k` source points within `radius`
/// of `center`, scanning in index order and repeating the first hit when
/// fewer are found. Returns the number of genuine hits.
fn scan_ball<T: Real>(coords: &[Vec3<T>], center: &Vec3<T>, r2: T, out: &mut [usize]) -> usize {
    let k = out.len();
    let mut found = 0;
    for (j, p) in coords.iter().enumerate() {
        if dist2(center, p) <= r2 {
            out[found] = j;
            found += 1;
            if found == k {
                break;
            }
        }
    }
    if found > 0 {
        let first = out[0];
        for slot in &mut out[found..] {
            *slot = first;
        }
    }
    found
}

fn check_ball_args<T: Real>(radius: T, k: usize) -> Result<()> {
    if !(radius > T::zero()) {
        return Err(Error::invalid(format!("ball query radius must be positive, got {radius}")));
    }
    if k == 0 {
        return Err(Error::invalid("ball query needs k >= 1"));
    }
    Ok(())
}

/// Ball query around source points used as centroids. The centroid itself is
/// always a candidate, so every row has at least one genuine neighbor.
pub fn ball_query<T: Real>(
    coords: &[Vec3<T>],
    centroid_indices: &[usize],
    radius: T,
    k: usize,
) -> Result<NeighborIndex<T>> {
    check_ball_args(radius, k)?;
    let r2 = radius * radius;
    let m = centroid_indices.len();
    let mut neighbors = vec![0usize; m * k];
    let mut offsets = Vec::with_capacity(m * k);
    for (row, &c) in neighbors.chunks_mut(k).zip(centroid_indices) {
        let center = *coords
            .get(c)
            .ok_or_else(|| Error::invalid(format!("centroid index {c} out of range")))?;
        if scan_ball(coords, &center, r2, row) == 0 {
            // only reachable when the centroid coordinate is non-finite
            row.fill(c);
        }
        offsets.extend(row.iter().map(|&j| sub3(&coords[j], &center)));
    }
    Ok(NeighborIndex { centroid_indices: centroid_indices.to_vec(), k, neighbors, offsets })
}

/// Ball query around arbitrary centers. Fails if some center has no source
/// point within the radius.
pub fn ball_query_at<T: Real>(coords: &[Vec3<T>], centers: &[Vec3<T>], radius: T, k: usize) -> Result<Vec<usize>> {
    check_ball_args(radius, k)?;
    let r2 = radius * radius;
    let mut neighbors = vec![0usize; centers.len() * k];
    for (i, (row, center)) in neighbors.chunks_mut(k).zip(centers).enumerate() {
        if scan_ball(coords, center, r2, row) == 0 {
            return Err(Error::invalid(format!("center {i} has no neighbor within radius {radius}")));
        }
    }
    Ok(neighbors)
}

/// Exact k nearest neighbors per query, ascending distance, ties broken by
/// lower source index. Returns flat index rows and Euclidean distances.
pub fn knn<T: Real>(coords: &[Vec3<T>], queries: &[Vec3<T>], k: usize) -> Result<(Vec<usize>, Vec<T>)> {
    let n = coords.len();
    if n == 0 {
        return Err(Error::invalid("knn on an empty source set"));
    }
    if k == 0 || k > n {
        return Err(Error::invalid(format!("knn requires 1 <= k <= {n}, got {k}")));
    }
    let mut idx = Vec::with_capacity(queries.len() * k);
    let mut dist = Vec::with_capacity(queries.len() * k);
    let mut best: Vec<(T, usize)> = Vec::with_capacity(k + 1);
    for q in queries {
        best.clear();
        for (j, p) in coords.iter().enumerate() {
            let d = dist2(q, p);
            if best.len() == k && !(d < best[k - 1].0) {
                continue;
            }
            // strict comparison keeps the earlier index ahead on ties
            let pos = best.iter().position(|&(bd, _)| d < bd).unwrap_or(best.len());
            best.insert(pos, (d, j));
            best.truncate(k);
        }
        for &(d, j) in &best {
            idx.push(j);
            dist.push(d.sqrt());
        }
    }
    Ok((idx, dist))
}
