//! Procedural toy buildings with part and type labels, plus matching
//! synthetic embedding triplets.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;

use crate::data::{compute_heights, format_building_name, save_point_cloud, Axis, DatasetSplit, PointCloud, SplitName, BUILDING_TYPES};
use crate::error::{Error, Result};
use crate::scalar::{Real, Vec3};
use crate::ulip::{write_embedding, ClassPrompts, EmbeddingTriplet, PROMPT_TEMPLATE};

pub const WALL: usize = 1;
pub const WINDOW: usize = 2;
pub const ROOF: usize = 4;
pub const DOOR: usize = 6;
pub const TOWER: usize = 7;
pub const GROUND: usize = 9;
/// Part labels the generator can emit.
pub const GENERATED_PARTS: [usize; 6] = [WALL, WINDOW, ROOF, DOOR, TOWER, GROUND];

pub use crate::seed::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoofKind {
    Flat,
    Gable,
}

/// Structural parameters of one building type (ranges are sampled uniformly).
#[derive(Debug, Clone, PartialEq)]
pub struct TypeRule {
    pub building_class: String,
    /// Vocabulary form, e.g. "office building".
    pub subclass: String,
    pub roof: RoofKind,
    pub tower: bool,
    pub width: [f64; 2],
    pub depth: [f64; 2],
    pub height: [f64; 2],
    pub roof_rise: [f64; 2],
    /// Window columns per unit of wall length.
    pub window_density: f64,
}

impl TypeRule {
    pub fn type_index(&self) -> Result<usize> {
        BUILDING_TYPES
            .iter()
            .position(|t| *t == self.subclass)
            .ok_or_else(|| Error::invalid(format!("unknown building type {:?}", self.subclass)))
    }
}

fn rule(class: &str, sub: &str, roof: RoofKind, tower: bool, w: [f64; 2], d: [f64; 2], h: [f64; 2], rise: [f64; 2], win: f64) -> TypeRule {
    TypeRule {
        building_class: class.into(),
        subclass: sub.into(),
        roof,
        tower,
        width: w,
        depth: d,
        height: h,
        roof_rise: rise,
        window_density: win,
    }
}

/// The four default types: low gabled house, tall flat office, elongated
/// gabled church with a tower, wide low flat factory.
pub fn default_types() -> Vec<TypeRule> {
    use RoofKind::*;
    vec![
        rule("RESIDENTIAL", "house", Gable, false, [0.8, 1.2], [0.6, 0.9], [0.5, 0.7], [0.3, 0.45], 3.0),
        rule("COMMERCIAL", "office building", Flat, false, [0.8, 1.0], [0.8, 1.0], [1.8, 2.4], [0.0, 0.0], 4.0),
        rule("RELIGIOUS", "church", Gable, true, [1.4, 1.8], [0.6, 0.8], [0.7, 0.9], [0.45, 0.55], 2.0),
        rule("INDUSTRIAL", "factory", Flat, false, [1.8, 2.4], [1.2, 1.6], [0.5, 0.7], [0.0, 0.0], 1.5),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorSpec {
    pub types: Vec<TypeRule>,
    pub points_per_building: usize,
    /// Coordinate noise (clipped at 3 sigma) in normalized units.
    pub noise_sigma: f64,
    /// Fraction of points relabeled as unspecified (0).
    pub unspecified_fraction: f64,
    pub seed: u64,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        GeneratorSpec { types: default_types(), points_per_building: 4096, noise_sigma: 0.002, unspecified_fraction: 0.0, seed: 0 }
    }
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.types.is_empty() || self.points_per_building == 0 {
            return Err(Error::invalid("generator needs at least one type and one point per building"));
        }
        if !(0.0..=1.0).contains(&self.unspecified_fraction) || !(self.noise_sigma >= 0.0) {
            return Err(Error::invalid("unspecified fraction must lie in [0, 1] and noise must be non-negative"));
        }
        for t in &self.types {
            t.type_index()?;
            for r in [t.width, t.depth, t.height] {
                if !(r[0] > 0.0 && r[1] >= r[0]) {
                    return Err(Error::invalid(format!("{}: degenerate extent range {r:?}", t.subclass)));
                }
            }
            if t.roof == RoofKind::Gable && !(t.roof_rise[0] > 0.0 && t.roof_rise[1] >= t.roof_rise[0]) {
                return Err(Error::invalid(format!("{}: gable roof needs a positive rise", t.subclass)));
            }
        }
        Ok(())
    }

    /// Type indices into the 15-entry building vocabulary.
    pub fn type_indices(&self) -> Result<Vec<usize>> {
        self.types.iter().map(TypeRule::type_index).collect()
    }
}

/// Generator-side facts about one building, in normalized coordinates
/// before noise.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRecord {
    pub name: String,
    pub type_label: usize,
    /// Points per part label (0..=31).
    pub counts: Vec<u64>,
    /// Up-coordinate where walls meet the roof.
    pub eave_height: f64,
    pub ground_height: f64,
    pub top_height: f64,
    pub noise_clip: f64,
}

#[derive(Debug, Clone, Copy)]
enum Shape {
    Rect { origin: Vec3<f64>, u: Vec3<f64>, v: Vec3<f64> },
    Tri { a: Vec3<f64>, b: Vec3<f64>, c: Vec3<f64> },
}

#[derive(Debug, Clone)]
struct Face {
    shape: Shape,
    normal: Vec3<f64>,
    label: usize,
    /// `(s0, s1, t0, t1, label)` patches in rectangle parameter space.
    patches: Vec<(f64, f64, f64, f64, usize)>,
}

fn cross(a: Vec3<f64>, b: Vec3<f64>) -> Vec3<f64> {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn sub(a: Vec3<f64>, b: Vec3<f64>) -> Vec3<f64> {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn norm(a: Vec3<f64>) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

fn unit(a: Vec3<f64>) -> Vec3<f64> {
    let n = norm(a);
    [a[0] / n, a[1] / n, a[2] / n]
}

impl Face {
    fn rect(origin: Vec3<f64>, u: Vec3<f64>, v: Vec3<f64>, label: usize) -> Self {
        Face { shape: Shape::Rect { origin, u, v }, normal: unit(cross(u, v)), label, patches: Vec::new() }
    }

    fn tri(a: Vec3<f64>, b: Vec3<f64>, c: Vec3<f64>, normal: Vec3<f64>, label: usize) -> Self {
        Face { shape: Shape::Tri { a, b, c }, normal, label, patches: Vec::new() }
    }

    fn area(&self) -> f64 {
        match self.shape {
            Shape::Rect { u, v, .. } => norm(cross(u, v)),
            Shape::Tri { a, b, c } => 0.5 * norm(cross(sub(b, a), sub(c, a))),
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vec3<f64>, usize) {
        match self.shape {
            Shape::Rect { origin, u, v } => {
                let (s, t): (f64, f64) = (rng.random(), rng.random());
                let p = [0, 1, 2].map(|i| origin[i] + s * u[i] + t * v[i]);
                let label = self
                    .patches
                    .iter()
                    .find(|&&(s0, s1, t0, t1, _)| s >= s0 && s < s1 && t >= t0 && t < t1)
                    .map_or(self.label, |p| p.4);
                (p, label)
            }
            Shape::Tri { a, b, c } => {
                let (mut r1, mut r2): (f64, f64) = (rng.random(), rng.random());
                if r1 + r2 > 1.0 {
                    r1 = 1.0 - r1;
                    r2 = 1.0 - r2;
                }
                ([0, 1, 2].map(|i| a[i] + r1 * (b[i] - a[i]) + r2 * (c[i] - a[i])), self.label)
            }
        }
    }
}

/// Four walls of an axis-aligned box `[x0,x1] x [0,h] x [z0,z1]`, outward
/// normals, front wall (max z) first.
fn box_walls(x0: f64, x1: f64, z0: f64, z1: f64, y0: f64, h: f64, label: usize) -> Vec<Face> {
    let (w, d) = (x1 - x0, z1 - z0);
    vec![
        Face::rect([x0, y0, z1], [w, 0.0, 0.0], [0.0, h, 0.0], label),
        Face::rect([x1, y0, z0], [-w, 0.0, 0.0], [0.0, h, 0.0], label),
        Face::rect([x0, y0, z0], [0.0, 0.0, d], [0.0, h, 0.0], label),
        Face::rect([x1, y0, z1], [0.0, 0.0, -d], [0.0, h, 0.0], label),
    ]
}

/// Window grid in parameter space of a wall of the given size.
fn window_patches(length: f64, height: f64, density: f64) -> Vec<(f64, f64, f64, f64, usize)> {
    let cols = ((length * density).round() as usize).max(1);
    let floors = ((height / 0.35).round() as usize).max(1);
    let mut out = Vec::new();
    for f in 0..floors {
        for c in 0..cols {
            let (cs, ft) = (1.0 / cols as f64, 1.0 / floors as f64);
            out.push((
                (c as f64 + 0.25) * cs,
                (c as f64 + 0.75) * cs,
                (f as f64 + 0.35) * ft,
                (f as f64 + 0.75) * ft,
                WINDOW,
            ));
        }
    }
    out
}

fn palette(label: usize) -> Vec3<f64> {
    match label {
        WALL => [0.78, 0.72, 0.60],
        WINDOW => [0.25, 0.45, 0.70],
        ROOF => [0.60, 0.20, 0.15],
        DOOR => [0.40, 0.24, 0.10],
        TOWER => [0.62, 0.62, 0.66],
        GROUND => [0.30, 0.52, 0.22],
        _ => [0.5, 0.5, 0.5],
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, r: [f64; 2]) -> f64 {
    if r[1] > r[0] {
        rng.random_range(r[0]..=r[1])
    } else {
        r[0]
    }
}

/// One labeled building. Up axis is y; coordinates are centered and scaled
/// by the largest extent into `[-0.5, 0.5]`.
pub fn generate_building<T: Real, R: Rng + ?Sized>(
    spec: &GeneratorSpec,
    type_pos: usize,
    mesh: usize,
    rng: &mut R,
) -> Result<(PointCloud<T>, GenerationRecord)> {
    let rule = spec.types.get(type_pos).ok_or_else(|| Error::invalid(format!("type position {type_pos} outside generator types")))?;
    let type_label = rule.type_index()?;
    let (w, d, h) = (uniform(rng, rule.width), uniform(rng, rule.depth), uniform(rng, rule.height));
    let rise = match rule.roof {
        RoofKind::Gable => uniform(rng, rule.roof_rise),
        RoofKind::Flat => 0.0,
    };
    if !(w > 0.0 && d > 0.0 && h > 0.0) {
        return Err(Error::invalid("degenerate building extents"));
    }
    let (x0, x1, z0, z1) = (-w / 2.0, w / 2.0, -d / 2.0, d / 2.0);

    let mut faces = box_walls(x0, x1, z0, z1, 0.0, h, WALL);
    for (i, f) in faces.iter_mut().enumerate() {
        let length = if i < 2 { w } else { d };
        f.patches = window_patches(length, h, rule.window_density);
        if i == 0 {
            // door at the lower part of the front wall, off center
            let dw = (0.18 / w).min(0.3);
            let dh = (0.3 / h).min(0.6);
            f.patches.retain(|p| p.2 >= dh || p.1 <= 0.2 || p.0 >= 0.2 + dw);
            f.patches.insert(0, (0.2, 0.2 + dw, 0.0, dh, DOOR));
        }
    }
    match rule.roof {
        RoofKind::Flat => faces.push(Face::rect([x0, h, z1], [w, 0.0, 0.0], [0.0, 0.0, -d], ROOF)),
        RoofKind::Gable => {
            faces.push(Face::rect([x0, h, z1], [w, 0.0, 0.0], [0.0, rise, -d / 2.0], ROOF));
            faces.push(Face::rect([x1, h, z0], [-w, 0.0, 0.0], [0.0, rise, d / 2.0], ROOF));
            faces.push(Face::tri([x0, h, z0], [x0, h, z1], [x0, h + rise, 0.0], [-1.0, 0.0, 0.0], WALL));
            faces.push(Face::tri([x1, h, z1], [x1, h, z0], [x1, h + rise, 0.0], [1.0, 0.0, 0.0], WALL));
        }
    }
    let mut top = h + rise;
    if rule.tower {
        let t = 0.3;
        let th = h + rise + 0.5;
        faces.extend(box_walls(-t / 2.0, t / 2.0, z1, z1 + t, 0.0, th, TOWER));
        faces.push(Face::rect([-t / 2.0, th, z1 + t], [t, 0.0, 0.0], [0.0, 0.0, -t], ROOF));
        top = th;
    }
    let margin = 0.3 * w.max(d);
    let gz1 = if rule.tower { z1 + 0.3 } else { z1 };
    faces.push(Face::rect([x0 - margin, 0.0, gz1 + margin], [w + 2.0 * margin, 0.0, 0.0], [0.0, 0.0, -(gz1 - z0) - 2.0 * margin], GROUND));

    let areas: Vec<f64> = faces.iter().map(Face::area).collect();
    let total: f64 = areas.iter().sum();
    let mut cdf = Vec::with_capacity(areas.len());
    let mut acc = 0.0;
    for a in &areas {
        acc += a / total;
        cdf.push(acc);
    }
    let n = spec.points_per_building;
    let mut raw = Vec::with_capacity(n);
    let mut normals = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let u: f64 = rng.random();
        let fi = cdf.partition_point(|&c| c < u).min(faces.len() - 1);
        let (p, l) = faces[fi].sample(rng);
        raw.push(p);
        normals.push(faces[fi].normal);
        labels.push(l);
    }

    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in &raw {
        for i in 0..3 {
            lo[i] = lo[i].min(p[i]);
            hi[i] = hi[i].max(p[i]);
        }
    }
    let center = [0, 1, 2].map(|i| 0.5 * (lo[i] + hi[i]));
    let scale = (0..3).map(|i| hi[i] - lo[i]).fold(0.0, f64::max);
    if !(scale > 0.0) {
        return Err(Error::invalid("degenerate building: zero extent"));
    }
    let to_norm = |y: f64| (y - center[1]) / scale;
    let noise = Normal::new(0.0, spec.noise_sigma.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let clip = 3.0 * spec.noise_sigma;
    let coords: Vec<Vec3<f64>> = raw
        .iter()
        .map(|p| {
            [0, 1, 2].map(|i| {
                let e = if spec.noise_sigma > 0.0 { noise.sample(rng).clamp(-clip, clip) } else { 0.0 };
                ((p[i] - center[i]) / scale + e).clamp(-0.5, 0.5)
            })
        })
        .collect();

    let tint = [0, 1, 2].map(|_| rng.random_range(-0.05..0.05));
    let color_noise = Normal::new(0.0, 0.03).expect("valid sigma");
    let colors: Vec<Vec3<f64>> = labels
        .iter()
        .map(|&l| {
            let base = palette(l);
            [0, 1, 2].map(|i| (base[i] + tint[i] + color_noise.sample(rng)).clamp(0.0, 1.0))
        })
        .collect();
    for l in labels.iter_mut() {
        if spec.unspecified_fraction > 0.0 && rng.random::<f64>() < spec.unspecified_fraction {
            *l = 0;
        }
    }
    let mut counts = vec![0u64; 32];
    for &l in &labels {
        counts[l] += 1;
    }

    let name = format_building_name(&rule.building_class, &rule.subclass, mesh);
    let mut cloud = PointCloud::from_coords(name.clone(), coords);
    cloud.normals = Some(normals);
    cloud.colors = Some(colors);
    cloud.seg_labels = Some(labels);
    cloud.type_label = Some(type_label);
    let cloud = compute_heights(cloud.cast::<T>(), Axis::Y);
    cloud.validate()?;
    let record = GenerationRecord {
        name,
        type_label,
        counts,
        eave_height: to_norm(h),
        ground_height: to_norm(0.0),
        top_height: to_norm(top),
        noise_clip: clip,
    };
    Ok((cloud, record))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn get(&self, s: SplitName) -> usize {
        match s {
            SplitName::Train => self.train,
            SplitName::Val => self.val,
            SplitName::Test => self.test,
        }
    }
}

/// Synthetic embedding parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmbeddingSpec {
    pub dim: usize,
    /// Angular separation of class means; 0 makes classes identical.
    pub separation: f64,
    /// Per-row Gaussian jitter (relative to unit-norm means).
    pub jitter: f64,
    pub text_rows: usize,
    pub image_rows: usize,
}

impl Default for EmbeddingSpec {
    fn default() -> Self {
        EmbeddingSpec { dim: 32, separation: 4.0, jitter: 0.3, text_rows: 64, image_rows: 16 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetOptions {
    /// Write test clouds without seg or type labels.
    pub withhold_test_labels: bool,
    pub embeddings: Option<EmbeddingSpec>,
}

impl Default for DatasetOptions {
    fn default() -> Self {
        DatasetOptions { withhold_test_labels: true, embeddings: Some(EmbeddingSpec::default()) }
    }
}

/// What [`generate_dataset`] wrote.
#[derive(Debug, Clone)]
pub struct DatasetSummary {
    pub splits: Vec<DatasetSplit>,
    pub records: Vec<(SplitName, GenerationRecord)>,
}

pub const CLOUD_DIR: &str = "clouds";
pub const EMBEDDING_DIR: &str = "embeddings";
pub const PROMPTS_FILE: &str = "class_prompts.txt";

pub fn manifest_path(root: &Path, split: SplitName) -> PathBuf {
    root.join(format!("{}.txt", split.as_str()))
}

pub fn embedding_path(root: &Path, name: &str) -> PathBuf {
    root.join(EMBEDDING_DIR).join(format!("{name}.pfemb"))
}

/// Writes clouds, sidecars, split manifests and (optionally) embeddings
/// under `root`. Types are assigned round-robin within each split.
pub fn generate_dataset(spec: &GeneratorSpec, counts: SplitCounts, root: &Path, opts: &DatasetOptions) -> Result<DatasetSummary> {
    spec.validate()?;
    if counts.train == 0 || counts.val == 0 || counts.test == 0 {
        return Err(Error::invalid("every split needs at least one building"));
    }
    let cloud_dir = root.join(CLOUD_DIR);
    std::fs::create_dir_all(&cloud_dir).map_err(|e| Error::io(&cloud_dir, e))?;

    let mut jobs = Vec::new();
    for split in SplitName::ALL {
        for i in 0..counts.get(split) {
            jobs.push((split, i % spec.types.len(), jobs.len()));
        }
    }
    let built: Vec<(SplitName, PointCloud<f32>, GenerationRecord)> = jobs
        .par_iter()
        .map(|&(split, ty, mesh)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, mesh as u64));
            let (cloud, rec) = generate_building::<f32, _>(spec, ty, mesh, &mut rng)?;
            Ok((split, cloud, rec))
        })
        .collect::<Result<_>>()?;

    let mut splits: Vec<DatasetSplit> = Vec::new();
    let mut records = Vec::new();
    for split in SplitName::ALL {
        let mut entries = Vec::new();
        for (s, cloud, rec) in built.iter().filter(|(s, _, _)| *s == split) {
            let path = cloud_dir.join(format!("{}.pcloud", cloud.name));
            let mut out = cloud.clone();
            if *s == SplitName::Test && opts.withhold_test_labels {
                out.seg_labels = None;
                out.type_label = None;
            }
            save_point_cloud(&out, &path)?;
            entries.push(path);
            records.push((split, rec.clone()));
        }
        let ds = DatasetSplit::new(split, entries)?;
        ds.write_manifest(&manifest_path(root, split), root)?;
        splits.push(ds);
    }

    if let Some(es) = opts.embeddings {
        let items: Vec<(String, usize)> = records.iter().map(|(_, r)| (r.name.clone(), r.type_label)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, u64::MAX));
        let (triplets, prompts) = generate_embeddings(&spec.type_indices()?, &items, &es, &mut rng)?;
        let dir = root.join(EMBEDDING_DIR);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for t in &triplets {
            write_embedding(t, &embedding_path(root, &t.name))?;
        }
        prompts.write(&root.join(PROMPTS_FILE))?;
    }
    Ok(DatasetSummary { splits, records })
}

fn random_unit<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-9 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn normalize(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.into_iter().map(|x| x / n).collect()
}

/// Class means `normalize(shared + separation * own_c)`; each building's
/// prompt and view rows are its class mean plus Gaussian jitter, normalized.
/// Returns per-building triplets (in `items` order) and the class prompts.
pub fn generate_embeddings<R: Rng + ?Sized>(
    type_indices: &[usize],
    items: &[(String, usize)],
    es: &EmbeddingSpec,
    rng: &mut R,
) -> Result<(Vec<EmbeddingTriplet>, ClassPrompts)> {
    if es.dim < 2 || !(es.separation >= 0.0) || es.text_rows == 0 || es.image_rows == 0 {
        return Err(Error::invalid("embedding spec needs dim >= 2, separation >= 0 and at least one row of each kind"));
    }
    let shared = random_unit(es.dim, rng);
    let means: Vec<Vec<f64>> = type_indices
        .iter()
        .map(|_| {
            let own = random_unit(es.dim, rng);
            normalize(shared.iter().zip(&own).map(|(s, o)| s + es.separation * o).collect())
        })
        .collect();
    let jitter = Normal::new(0.0, es.jitter / (es.dim as f64).sqrt()).map_err(|_| Error::invalid("bad jitter"))?;
    let rows = |mean: &[f64], n: usize, rng: &mut R| -> Vec<f32> {
        (0..n).flat_map(|_| normalize(mean.iter().map(|m| m + jitter.sample(rng)).collect()).into_iter().map(|x| x as f32)).collect()
    };
    let mut triplets = Vec::with_capacity(items.len());
    for (name, ty) in items {
        let c = type_indices.iter().position(|t| t == ty).ok_or_else(|| Error::invalid(format!("{name}: type {ty} not generated")))?;
        let text = rows(&means[c], es.text_rows, rng);
        let image = rows(&means[c], es.image_rows, rng);
        triplets.push(EmbeddingTriplet { name: name.clone(), dim: es.dim, text, image });
    }
    let classes = type_indices
        .iter()
        .zip(&means)
        .map(|(&t, m)| (t, BUILDING_TYPES[t].to_string(), m.iter().map(|&x| x as f32).collect()))
        .collect();
    Ok((triplets, ClassPrompts { template: PROMPT_TEMPLATE.into(), dim: es.dim, classes }))
}
