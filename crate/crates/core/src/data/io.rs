//! Text point-cloud files (`PCLOUD v1`), `.meta` sidecars and split manifests.
//!
//! ```text
//! PCLOUD v1 n=3 cols=x,y,z,nx,ny,nz,r,g,b,seg
//! 0.1 0.2 0.3 0 1 0 0.5 0.5 0.5 4
//! ...
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::data::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::scalar::Real;

const MAGIC: &str = "PCLOUD v1";
const COLUMNS: [&str; 10] = ["x", "y", "z", "nx", "ny", "nz", "r", "g", "b", "seg"];

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn format_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Format { path: path.to_path_buf(), line, msg: msg.into() }
}

/// Sidecar path: same stem, `.meta` extension.
pub fn meta_path(path: &Path) -> PathBuf {
    path.with_extension("meta")
}

/// Loads a point cloud and, when present, its `.meta` sidecar. Coordinates are
/// returned exactly as stored.
pub fn load_point_cloud<T: Real>(path: &Path) -> Result<PointCloud<T>> {
    let text = read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| format_err(path, 1, "empty file"))?;
    let rest = header
        .strip_prefix(MAGIC)
        .ok_or_else(|| format_err(path, 1, format!("expected header starting with {MAGIC:?}")))?;

    let mut n: Option<usize> = None;
    let mut cols: Option<Vec<String>> = None;
    for tok in rest.split_whitespace() {
        if let Some(v) = tok.strip_prefix("n=") {
            n = Some(v.parse().map_err(|_| format_err(path, 1, format!("bad point count {v:?}")))?);
        } else if let Some(v) = tok.strip_prefix("cols=") {
            cols = Some(v.split(',').map(str::to_string).collect());
        } else {
            return Err(format_err(path, 1, format!("unexpected header token {tok:?}")));
        }
    }
    let n = n.ok_or_else(|| format_err(path, 1, "missing n="))?;
    let cols = cols.ok_or_else(|| format_err(path, 1, "missing cols="))?;

    let mut slot = [usize::MAX; 10];
    for (i, c) in cols.iter().enumerate() {
        let k = COLUMNS
            .iter()
            .position(|k| k == c)
            .ok_or_else(|| format_err(path, 1, format!("unknown column {c:?}")))?;
        if slot[k] != usize::MAX {
            return Err(format_err(path, 1, format!("duplicate column {c:?}")));
        }
        slot[k] = i;
    }
    let has = |range: std::ops::Range<usize>| -> Result<bool> {
        let present = range.clone().filter(|&k| slot[k] != usize::MAX).count();
        match present {
            0 => Ok(false),
            p if p == range.len() => Ok(true),
            _ => Err(format_err(path, 1, format!("partial column group {:?}", &COLUMNS[range]))),
        }
    };
    if !has(0..3)? {
        return Err(format_err(path, 1, "coordinates x,y,z are required"));
    }
    let has_normals = has(3..6)?;
    let has_colors = has(6..9)?;
    let has_seg = slot[9] != usize::MAX;

    let mut cloud = PointCloud::from_coords(
        path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
        Vec::with_capacity(n),
    );
    let mut normals = Vec::with_capacity(if has_normals { n } else { 0 });
    let mut colors = Vec::with_capacity(if has_colors { n } else { 0 });
    let mut seg = Vec::with_capacity(if has_seg { n } else { 0 });

    let mut values = vec![T::zero(); cols.len()];
    let mut seg_value = 0usize;
    let mut rows = 0usize;
    for (li, line) in lines.enumerate() {
        let lineno = li + 2;
        if line.trim().is_empty() {
            continue;
        }
        if rows == n {
            return Err(format_err(path, lineno, format!("more rows than header n={n}")));
        }
        let mut count = 0;
        for (j, tok) in line.split_whitespace().enumerate() {
            if j >= cols.len() {
                return Err(format_err(path, lineno, format!("expected {} columns", cols.len())));
            }
            if j == slot[9] {
                seg_value = tok.parse().map_err(|_| {
                    format_err(path, lineno, format!("seg label {tok:?} is not a non-negative integer"))
                })?;
            } else {
                let v: T = tok.parse().map_err(|_| format_err(path, lineno, format!("bad number {tok:?}")))?;
                if !v.is_finite() {
                    return Err(format_err(path, lineno, format!("non-finite value {tok:?}")));
                }
                values[j] = v;
            }
            count += 1;
        }
        if count != cols.len() {
            return Err(format_err(path, lineno, format!("expected {} columns, found {count}", cols.len())));
        }
        let get3 = |a: usize| [values[slot[a]], values[slot[a + 1]], values[slot[a + 2]]];
        cloud.coords.push(get3(0));
        if has_normals {
            normals.push(get3(3));
        }
        if has_colors {
            colors.push(get3(6));
        }
        if has_seg {
            seg.push(seg_value);
        }
        rows += 1;
    }
    if rows != n {
        return Err(format_err(path, 1, format!("header declares n={n} but file has {rows} rows")));
    }
    cloud.normals = has_normals.then_some(normals);
    cloud.colors = has_colors.then_some(colors);
    cloud.seg_labels = has_seg.then_some(seg);

    let meta = meta_path(path);
    if meta.exists() {
        let text = read_to_string(&meta)?;
        for (li, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| format_err(&meta, li + 1, "expected key=value"))?;
            match k.trim() {
                "name" => cloud.name = v.trim().to_string(),
                "type_label" => {
                    cloud.type_label =
                        Some(v.trim().parse().map_err(|_| format_err(&meta, li + 1, format!("bad type_label {v:?}")))?)
                }
                other => return Err(format_err(&meta, li + 1, format!("unknown meta key {other:?}"))),
            }
        }
    }
    cloud.validate()?;
    Ok(cloud)
}

/// Writes the cloud (without heights, which are derived) and its `.meta` sidecar.
pub fn save_point_cloud<T: Real>(cloud: &PointCloud<T>, path: &Path) -> Result<()> {
    cloud.validate()?;
    let mut cols: Vec<&str> = vec!["x", "y", "z"];
    if cloud.normals.is_some() {
        cols.extend(["nx", "ny", "nz"]);
    }
    if cloud.colors.is_some() {
        cols.extend(["r", "g", "b"]);
    }
    if cloud.seg_labels.is_some() {
        cols.push("seg");
    }
    let mut out = String::with_capacity(cloud.len() * 64);
    let _ = writeln!(out, "{MAGIC} n={} cols={}", cloud.len(), cols.join(","));
    for i in 0..cloud.len() {
        let p = cloud.coords[i];
        let _ = write!(out, "{} {} {}", p[0], p[1], p[2]);
        if let Some(nrm) = &cloud.normals {
            let v = nrm[i];
            let _ = write!(out, " {} {} {}", v[0], v[1], v[2]);
        }
        if let Some(col) = &cloud.colors {
            let v = col[i];
            let _ = write!(out, " {} {} {}", v[0], v[1], v[2]);
        }
        if let Some(seg) = &cloud.seg_labels {
            let _ = write!(out, " {}", seg[i]);
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))?;

    let mut meta = format!("name={}\n", cloud.name);
    if let Some(t) = cloud.type_label {
        let _ = writeln!(meta, "type_label={t}");
    }
    let mp = meta_path(path);
    fs::write(&mp, meta).map_err(|e| Error::io(mp, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::cloud::PointCloud;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn loads_full_ten_column_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "a.pcloud",
            "PCLOUD v1 n=3 cols=x,y,z,nx,ny,nz,r,g,b,seg\n\
             0.1 0.2 0.3 0 1 0 0.5 0.5 0.5 4\n\
             -0.1 0 0.25 1 0 0 0 0 1 1\n\
             0 -0.5 0.5 0 0 1 1 1 1 0\n",
        );
        let c: PointCloud<f32> = load_point_cloud(&p).unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(c.name, "a");
        assert_eq!(c.coords[1], [-0.1, 0.0, 0.25]);
        assert_eq!(c.normals.as_ref().unwrap()[2], [0.0, 0.0, 1.0]);
        assert_eq!(c.colors.as_ref().unwrap()[0], [0.5, 0.5, 0.5]);
        assert_eq!(c.seg_labels.unwrap(), vec![4, 1, 0]);
    }

    #[test]
    fn coords_only_file_leaves_optionals_absent() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "b.pcloud", "PCLOUD v1 n=2 cols=z,x,y\n1 2 3\n4 5 6\n");
        let c: PointCloud<f64> = load_point_cloud(&p).unwrap();
        assert_eq!(c.coords, vec![[2.0, 3.0, 1.0], [5.0, 6.0, 4.0]]);
        assert!(c.normals.is_none() && c.colors.is_none() && c.seg_labels.is_none());
    }

    #[test]
    fn rejects_row_count_mismatch_and_nan() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "c.pcloud", "PCLOUD v1 n=3 cols=x,y,z\n1 2 3\n");
        assert!(matches!(load_point_cloud::<f32>(&p), Err(Error::Format { .. })));
        let p = write(dir.path(), "d.pcloud", "PCLOUD v1 n=2 cols=x,y,z\n1 2 3\n1 nan 3\n");
        match load_point_cloud::<f32>(&p) {
            Err(Error::Format { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected format error, got {other:?}"),
        }
        let p = write(dir.path(), "e.pcloud", "PCLOUD v1 n=1 cols=x,y,z\n1 2\n");
        assert!(load_point_cloud::<f32>(&p).is_err());
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(load_point_cloud::<f32>(Path::new("/nonexistent/x.pcloud")), Err(Error::Io { .. })));
    }

    #[test]
    fn meta_sidecar_supplies_name_and_type() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "f.pcloud", "PCLOUD v1 n=1 cols=x,y,z\n0 0 0\n");
        write(dir.path(), "f.meta", "name=RELIGIOUSchurch_mesh0001\ntype_label=2\n");
        let c: PointCloud<f32> = load_point_cloud(&p).unwrap();
        assert_eq!(c.name, "RELIGIOUSchurch_mesh0001");
        assert_eq!(c.type_label, Some(2));
    }

    #[test]
    fn save_load_round_trip_is_exact_for_f32() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = PointCloud::from_coords("COMMERCIALcastle_mesh0365", vec![[0.1f32, -0.33333334, 0.5], [1e-7, 0.0, -0.5]]);
        c.normals = Some(vec![[0.0, 1.0, 0.0], [0.6, 0.8, 0.0]]);
        c.colors = Some(vec![[0.25, 0.1, 0.9], [0.0, 1.0, 0.3]]);
        c.seg_labels = Some(vec![1, 31]);
        c.type_label = Some(0);
        let p = dir.path().join("g.pcloud");
        save_point_cloud(&c, &p).unwrap();
        let back: PointCloud<f32> = load_point_cloud(&p).unwrap();
        assert_eq!(back, c);
    }
}
