use crate::error::{Error, Result};
use crate::scalar::{Real, Vec3};

/// Coordinate axis selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Axis {
    X,
    #[default]
    Y,
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "x" => Ok(Axis::X),
            "y" => Ok(Axis::Y),
            "z" => Ok(Axis::Z),
            other => Err(Error::invalid(format!("unknown axis {other:?}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        }
    }
}

/// Labeled point cloud. All present per-point columns share the length of `coords`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud<T> {
    pub name: String,
    pub coords: Vec<Vec3<T>>,
    pub normals: Option<Vec<Vec3<T>>>,
    pub colors: Option<Vec<Vec3<T>>>,
    pub heights: Option<Vec<T>>,
    /// Part labels, 0 = unspecified.
    pub seg_labels: Option<Vec<usize>>,
    pub type_label: Option<usize>,
}

pub const MAX_SEG_LABEL: usize = 31;
pub const MAX_TYPE_LABEL: usize = 14;

impl<T: Real> PointCloud<T> {
    pub fn from_coords(name: impl Into<String>, coords: Vec<Vec3<T>>) -> Self {
        PointCloud {
            name: name.into(),
            coords,
            normals: None,
            colors: None,
            heights: None,
            seg_labels: None,
            type_label: None,
        }
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// Checks the structural invariants: equal column lengths, finite
    /// coordinates, colors in the unit cube, non-negative heights, labels in range.
    pub fn validate(&self) -> Result<()> {
        let n = self.coords.len();
        if n == 0 {
            return Err(Error::invalid(format!("{}: empty point cloud", self.name)));
        }
        let check_len = |what: &str, len: usize| -> Result<()> {
            if len != n {
                Err(Error::Shape(format!("{}: {what} has {len} rows, coords have {n}", self.name)))
            } else {
                Ok(())
            }
        };
        if let Some(v) = &self.normals {
            check_len("normals", v.len())?;
        }
        if let Some(v) = &self.colors {
            check_len("colors", v.len())?;
        }
        if let Some(v) = &self.heights {
            check_len("heights", v.len())?;
        }
        if let Some(v) = &self.seg_labels {
            check_len("seg_labels", v.len())?;
        }
        for (i, p) in self.coords.iter().enumerate() {
            if !p.iter().all(|c| c.is_finite()) {
                return Err(Error::NonFinite(format!("{}: coordinate row {i}", self.name)));
            }
        }
        if let Some(colors) = &self.colors {
            for (i, c) in colors.iter().enumerate() {
                if !c.iter().all(|&v| v >= T::zero() && v <= T::one()) {
                    return Err(Error::invalid(format!("{}: color row {i} outside [0,1]", self.name)));
                }
            }
        }
        if let Some(h) = &self.heights {
            if let Some(i) = h.iter().position(|&v| !(v >= T::zero())) {
                return Err(Error::invalid(format!("{}: negative height at row {i}", self.name)));
            }
        }
        if let Some(labels) = &self.seg_labels {
            if let Some(&l) = labels.iter().find(|&&l| l > MAX_SEG_LABEL) {
                return Err(Error::LabelOutOfRange { entry: self.name.clone(), label: l, size: MAX_SEG_LABEL + 1 });
            }
        }
        if let Some(t) = self.type_label {
            if t > MAX_TYPE_LABEL {
                return Err(Error::LabelOutOfRange { entry: self.name.clone(), label: t, size: MAX_TYPE_LABEL + 1 });
            }
        }
        Ok(())
    }

    /// Copy of the cloud restricted to `indices` (repeats allowed).
    pub fn subset(&self, indices: &[usize]) -> Self {
        fn pick<V: Clone>(src: &[V], idx: &[usize]) -> Vec<V> {
            idx.iter().map(|&i| src[i].clone()).collect()
        }
        PointCloud {
            name: self.name.clone(),
            coords: pick(&self.coords, indices),
            normals: self.normals.as_deref().map(|v| pick(v, indices)),
            colors: self.colors.as_deref().map(|v| pick(v, indices)),
            heights: self.heights.as_deref().map(|v| pick(v, indices)),
            seg_labels: self.seg_labels.as_deref().map(|v| pick(v, indices)),
            type_label: self.type_label,
        }
    }

    /// Converts the scalar type of every real-valued column.
    pub fn cast<U: Real>(&self) -> PointCloud<U> {
        let c3 = |v: &Vec3<T>| [U::of(v[0].to_f64_lossy()), U::of(v[1].to_f64_lossy()), U::of(v[2].to_f64_lossy())];
        PointCloud {
            name: self.name.clone(),
            coords: self.coords.iter().map(c3).collect(),
            normals: self.normals.as_ref().map(|v| v.iter().map(c3).collect()),
            colors: self.colors.as_ref().map(|v| v.iter().map(c3).collect()),
            heights: self.heights.as_ref().map(|v| v.iter().map(|h| U::of(h.to_f64_lossy())).collect()),
            seg_labels: self.seg_labels.clone(),
            type_label: self.type_label,
        }
    }
}

/// Elevation above the cloud minimum along `up`: `h_i = p_i[up] - min_j p_j[up]`.
pub fn compute_heights<T: Real>(mut cloud: PointCloud<T>, up: Axis) -> PointCloud<T> {
    let a = up.index();
    let min = cloud.coords.iter().map(|p| p[a]).fold(T::infinity(), T::min);
    cloud.heights = Some(cloud.coords.iter().map(|p| p[a] - min).collect());
    cloud
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heights_subtract_minimum() {
        let c = PointCloud::from_coords("t", vec![[0.0f64, 2.0, 0.0], [1.0, 3.0, 0.0], [0.0, 5.0, 1.0]]);
        let c = compute_heights(c, Axis::Y);
        assert_eq!(c.heights.unwrap(), vec![0.0, 1.0, 3.0]);
    }

    #[test]
    fn heights_degenerate_all_equal() {
        let c = PointCloud::from_coords("t", vec![[0.3f32, 0.1, 0.0]; 4]);
        let c = compute_heights(c, Axis::Y);
        assert!(c.heights.unwrap().iter().all(|&h| h == 0.0));
    }

    #[test]
    fn validate_rejects_length_mismatch() {
        let mut c = PointCloud::from_coords("t", vec![[0.0f32; 3]; 3]);
        c.seg_labels = Some(vec![1, 2]);
        assert!(matches!(c.validate(), Err(Error::Shape(_))));
    }

    #[test]
    fn validate_rejects_out_of_range_labels() {
        let mut c = PointCloud::from_coords("t", vec![[0.0f32; 3]; 2]);
        c.seg_labels = Some(vec![1, 32]);
        assert!(matches!(c.validate(), Err(Error::LabelOutOfRange { label: 32, .. })));
        c.seg_labels = None;
        c.type_label = Some(15);
        assert!(c.validate().is_err());
    }

    #[test]
    fn validate_rejects_nan_and_bad_colors() {
        let mut c = PointCloud::from_coords("t", vec![[0.0f32, f32::NAN, 0.0]]);
        assert!(matches!(c.validate(), Err(Error::NonFinite(_))));
        c.coords[0][1] = 0.0;
        c.colors = Some(vec![[1.5, 0.0, 0.0]]);
        assert!(c.validate().is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn cloud() -> impl Strategy<Value = PointCloud<f64>> {
            prop::collection::vec(prop::array::uniform3(-0.5f64..0.5), 1..64)
                .prop_map(|c| PointCloud::from_coords("p", c))
        }

        proptest! {
            #[test]
            fn heights_idempotent(c in cloud()) {
                let once = compute_heights(c, Axis::Y);
                let twice = compute_heights(once.clone(), Axis::Y);
                prop_assert_eq!(once, twice);
            }

            #[test]
            fn heights_argmin_matches_coordinate(c in cloud()) {
                let h = compute_heights(c.clone(), Axis::Y).heights.unwrap();
                let min_h = h.iter().cloned().fold(f64::INFINITY, f64::min);
                prop_assert_eq!(min_h, 0.0);
                let argmin = |v: &[f64]| v.iter().enumerate().fold(0, |b, (i, &x)| if x < v[b] { i } else { b });
                let ys: Vec<f64> = c.coords.iter().map(|p| p[1]).collect();
                prop_assert_eq!(argmin(&h), argmin(&ys));
            }
        }
    }
}
