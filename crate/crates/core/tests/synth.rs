use std::collections::BTreeMap;
use std::path::Path;

use pf_core::data::{compute_heights, Axis, check_disjoint, label_histogram, load_point_cloud, parse_building_name, DatasetSplit, LabelKind, LabelVocabulary, PointCloud, SplitName};
use pf_core::synth::*;
use pf_core::ulip::{average_text_embedding, read_embedding, zero_shot_classify, ClassPrompts};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_spec() -> GeneratorSpec {
    GeneratorSpec { points_per_building: 1024, ..GeneratorSpec::default() }
}

fn build(spec: &GeneratorSpec, ty: usize, seed: u64) -> (PointCloud<f64>, GenerationRecord) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    generate_building(spec, ty, 3, &mut rng).unwrap()
}

#[test]
fn labels_stay_in_the_generated_part_set() {
    let spec = small_spec();
    for ty in 0..spec.types.len() {
        let (c, rec) = build(&spec, ty, ty as u64);
        let labels = c.seg_labels.as_ref().unwrap();
        assert_eq!(labels.len(), 1024);
        assert!(labels.iter().all(|l| GENERATED_PARTS.contains(l)));
        assert_eq!(rec.counts.iter().sum::<u64>(), 1024);
        for p in [WALL, ROOF, GROUND] {
            assert!(rec.counts[p] > 0, "type {ty} lacks part {p}");
        }
        assert_eq!(c.type_label, Some(rec.type_label));
    }
}

#[test]
fn unspecified_fraction_is_respected() {
    let spec = GeneratorSpec { unspecified_fraction: 0.25, ..small_spec() };
    let (c, _) = build(&spec, 0, 1);
    let zeros = c.seg_labels.unwrap().iter().filter(|&&l| l == 0).count() as f64 / 1024.0;
    assert!((zeros - 0.25).abs() < 0.06, "{zeros}");
}

#[test]
fn coordinates_normals_and_colors_are_well_formed() {
    let spec = small_spec();
    for ty in 0..4 {
        let (c, _) = build(&spec, ty, 10 + ty as u64);
        assert!(c.coords.iter().flatten().all(|v| (-0.5..=0.5).contains(v)));
        let extent = (0..3)
            .map(|i| {
                let (lo, hi) = c.coords.iter().fold((f64::MAX, f64::MIN), |(l, h), p| (l.min(p[i]), h.max(p[i])));
                hi - lo
            })
            .fold(0.0, f64::max);
        assert!(extent > 0.98, "largest extent {extent}");
        for n in c.normals.as_ref().unwrap() {
            assert!(((n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt() - 1.0).abs() < 1e-9);
        }
        assert!(c.colors.as_ref().unwrap().iter().flatten().all(|v| (0.0..=1.0).contains(v)));
        let heights = c.heights.as_ref().unwrap();
        let min_y = c.coords.iter().map(|p| p[1]).fold(f64::MAX, f64::min);
        for (h, p) in heights.iter().zip(&c.coords) {
            assert!((h - (p[1] - min_y)).abs() < 1e-12);
        }
    }
}

#[test]
fn name_parses_back() {
    let (c, _) = build(&small_spec(), 1, 0);
    assert_eq!(c.name, "COMMERCIALoffice_building_mesh0003");
    let parsed = parse_building_name(&c.name).unwrap();
    assert_eq!((parsed.building_class.as_str(), parsed.subclass.as_str()), ("COMMERCIAL", "office building"));
}

#[test]
fn same_seed_gives_identical_cloud() {
    let spec = small_spec();
    let (a, _) = build(&spec, 2, 99);
    let (b, _) = build(&spec, 2, 99);
    assert_eq!(a, b);
    let (c, _) = build(&spec, 2, 100);
    assert_ne!(a.coords, c.coords);
}

#[test]
fn gable_roof_sits_above_the_eave() {
    let spec = small_spec();
    for (ty, seed) in [(0usize, 3u64), (2, 4), (0, 5)] {
        let (c, rec) = build(&spec, ty, seed);
        let labels = c.seg_labels.as_ref().unwrap();
        for (p, &l) in c.coords.iter().zip(labels) {
            if l == ROOF {
                assert!(p[1] >= rec.eave_height - rec.noise_clip - 1e-12, "roof point at {} below eave {}", p[1], rec.eave_height);
            }
            if l == WALL && !spec.types[ty].tower {
                assert!(p[1] <= rec.top_height + rec.noise_clip + 1e-12);
            }
        }
    }
}

#[test]
fn ground_is_the_lowest_band_and_roof_the_highest() {
    let spec = small_spec();
    for ty in 0..4 {
        let (c, rec) = build(&spec, ty, 40 + ty as u64);
        let labels = c.seg_labels.as_ref().unwrap();
        let mut max_by: BTreeMap<usize, f64> = BTreeMap::new();
        for (p, &l) in c.coords.iter().zip(labels) {
            let e = max_by.entry(l).or_insert(f64::MIN);
            *e = e.max(p[1]);
            if l == GROUND {
                assert!((p[1] - rec.ground_height).abs() <= rec.noise_clip + 1e-12);
            } else {
                assert!(p[1] >= rec.ground_height - rec.noise_clip - 1e-12);
            }
        }
        let roof_top = max_by[&ROOF];
        assert!(max_by.values().all(|&v| v <= roof_top), "type {ty}: {max_by:?}");
        assert!((roof_top - rec.top_height).abs() < 0.05);
    }
}

#[test]
fn sampling_follows_face_area() {
    // unit-less check on the flat factory: roof area w*d, ground (w+2m)(d+2m)
    let spec = GeneratorSpec { points_per_building: 20000, noise_sigma: 0.0, ..GeneratorSpec::default() };
    let (c, _) = build(&spec, 3, 8);
    let labels = c.seg_labels.unwrap();
    let roof = labels.iter().filter(|&&l| l == ROOF).count() as f64;
    let ground = labels.iter().filter(|&&l| l == GROUND).count() as f64;
    // extents recovered from the points themselves
    let xs: Vec<f64> = c.coords.iter().zip(labels.iter()).filter(|(_, &l)| l == ROOF).map(|(p, _)| p[0]).collect();
    let zs: Vec<f64> = c.coords.iter().zip(labels.iter()).filter(|(_, &l)| l == ROOF).map(|(p, _)| p[2]).collect();
    let gx: Vec<f64> = c.coords.iter().zip(labels.iter()).filter(|(_, &l)| l == GROUND).map(|(p, _)| p[0]).collect();
    let gz: Vec<f64> = c.coords.iter().zip(labels.iter()).filter(|(_, &l)| l == GROUND).map(|(p, _)| p[2]).collect();
    let span = |v: &[f64]| v.iter().cloned().fold(f64::MIN, f64::max) - v.iter().cloned().fold(f64::MAX, f64::min);
    let expected = (span(&xs) * span(&zs)) / (span(&gx) * span(&gz));
    assert!((roof / ground - expected).abs() / expected < 0.08, "{} vs {expected}", roof / ground);
}

#[test]
fn degenerate_extents_are_rejected() {
    let mut spec = small_spec();
    spec.types[0].width = [0.0, 0.0];
    assert!(spec.validate().is_err());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(generate_building::<f64, _>(&spec, 0, 0, &mut rng).is_err());
    assert!(generate_building::<f64, _>(&small_spec(), 9, 0, &mut rng).is_err());
}

fn fit_stump(xs: &[[f64; 2]], ys: &[usize]) -> (usize, f64, bool) {
    let mut best = (0, 0.0, true, 0usize);
    for f in 0..2 {
        for x in xs {
            for dir in [true, false] {
                let t = x[f];
                let ok = xs.iter().zip(ys).filter(|(v, &y)| ((v[f] > t) == dir) == (y == 1)).count();
                if ok > best.3 {
                    best = (f, t, dir, ok);
                }
            }
        }
    }
    (best.0, best.1, best.2)
}

fn stump_features(c: &PointCloud<f64>) -> [f64; 2] {
    let labels = c.seg_labels.as_ref().unwrap();
    let body: Vec<_> = c.coords.iter().zip(labels).filter(|(_, &l)| l != GROUND).map(|(p, _)| *p).collect();
    let hs = c.heights.as_ref().unwrap();
    let mean_h = hs.iter().sum::<f64>() / hs.len() as f64;
    let span = |i: usize| body.iter().map(|p| p[i]).fold(f64::MIN, f64::max) - body.iter().map(|p| p[i]).fold(f64::MAX, f64::min);
    [mean_h, span(0) / span(2)]
}

#[test]
fn house_and_office_separate_with_a_stump() {
    let spec = small_spec();
    let sample = |seed_base: u64| {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in 0..30u64 {
            for (label, ty) in [(0usize, 0usize), (1, 1)] {
                let (c, _) = build(&spec, ty, seed_base + i * 2 + label as u64);
                xs.push(stump_features(&c));
                ys.push(label);
            }
        }
        (xs, ys)
    };
    let (tx, ty) = sample(1000);
    let (f, t, dir) = fit_stump(&tx, &ty);
    let (vx, vy) = sample(5000);
    let acc = vx.iter().zip(&vy).filter(|(v, &y)| ((v[f] > t) == dir) == (y == 1)).count() as f64 / vy.len() as f64;
    assert!(acc > 0.9, "stump accuracy {acc}");
}

fn gen(root: &Path, seed: u64, opts: &DatasetOptions) -> DatasetSummary {
    let spec = GeneratorSpec { points_per_building: 512, seed, ..GeneratorSpec::default() };
    generate_dataset(&spec, SplitCounts { train: 8, val: 2, test: 2 }, root, opts).unwrap()
}

#[test]
fn dataset_layout_and_disjointness() {
    let dir = tempfile::tempdir().unwrap();
    let summary = gen(dir.path(), 7, &DatasetOptions::default());
    let clouds: Vec<_> = std::fs::read_dir(dir.path().join(CLOUD_DIR))
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().is_some_and(|x| x == "pcloud"))
        .collect();
    assert_eq!(clouds.len(), 12);
    let splits: Vec<_> = SplitName::ALL
        .iter()
        .map(|&s| DatasetSplit::read_manifest(s, &manifest_path(dir.path(), s)).unwrap())
        .collect();
    assert_eq!(splits.iter().map(|s| s.entries.len()).collect::<Vec<_>>(), vec![8, 2, 2]);
    check_disjoint(&splits).unwrap();
    assert_eq!(splits, summary.splits);

    let train: Vec<PointCloud<f32>> = splits[0].load().unwrap();
    let hist = label_histogram(&train, &LabelVocabulary::building_types(), LabelKind::Classification).unwrap();
    assert_eq!((hist.counts[6], hist.counts[10], hist.counts[2], hist.counts[4]), (2, 2, 2, 2));
    let seg = label_histogram(&train, &LabelVocabulary::parts(), LabelKind::Segmentation).unwrap();
    let mut expected = vec![0u64; 32];
    for (s, r) in &summary.records {
        if *s == SplitName::Train {
            for (e, c) in expected.iter_mut().zip(&r.counts) {
                *e += c;
            }
        }
    }
    assert_eq!(seg.counts[1..], expected[1..]);

    let test: Vec<PointCloud<f32>> = splits[2].load().unwrap();
    assert!(test.iter().all(|c| c.seg_labels.is_none() && c.type_label.is_none()));
}

#[test]
fn reload_matches_generation_in_f32() {
    let dir = tempfile::tempdir().unwrap();
    let opts = DatasetOptions { withhold_test_labels: false, embeddings: None };
    let summary = gen(dir.path(), 3, &opts);
    let spec = GeneratorSpec { points_per_building: 512, seed: 3, ..GeneratorSpec::default() };
    // val entry 0 is the ninth building overall, type 0
    let path = &summary.splits[1].entries[0];
    let loaded: PointCloud<f32> = load_point_cloud(path).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(3, 8));
    let (fresh, _) = generate_building::<f32, _>(&spec, 0, 8, &mut rng).unwrap();
    assert_eq!(loaded.coords, fresh.coords);
    assert_eq!(loaded.normals, fresh.normals);
    assert_eq!(loaded.colors, fresh.colors);
    assert_eq!(loaded.seg_labels, fresh.seg_labels);
    assert_eq!(loaded.heights, None);
    assert_eq!(compute_heights(loaded, Axis::Y), fresh);
    assert!(!dir.path().join(EMBEDDING_DIR).exists());
}

#[test]
fn generation_is_deterministic_on_disk() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    gen(a.path(), 11, &DatasetOptions::default());
    gen(b.path(), 11, &DatasetOptions::default());
    let mut files = Vec::new();
    let mut stack = vec![a.path().to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.push(p.strip_prefix(a.path()).unwrap().to_path_buf());
            }
        }
    }
    assert!(files.len() > 12 * 2 + 3);
    for f in files {
        assert_eq!(std::fs::read(a.path().join(&f)).unwrap(), std::fs::read(b.path().join(&f)).unwrap(), "{}", f.display());
    }
}

fn zero_shot_accuracy(separation: f64, jitter: f64, seed: u64) -> f64 {
    let types = GeneratorSpec::default().type_indices().unwrap();
    let items: Vec<(String, usize)> = (0..40).map(|i| (format!("b{i}"), types[i % 4])).collect();
    let es = EmbeddingSpec { dim: 16, separation, jitter, text_rows: 8, image_rows: 4 };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (triplets, prompts) = generate_embeddings(&types, &items, &es, &mut rng).unwrap();
    let feats = prompts.features().unwrap();
    let hits = triplets
        .iter()
        .zip(&items)
        .filter(|(t, (_, ty))| {
            let avg = average_text_embedding(t).unwrap();
            let (best, _) = zero_shot_classify(&avg, &feats);
            prompts.classes[best].0 == *ty
        })
        .count();
    hits as f64 / items.len() as f64
}

#[test]
fn separated_embeddings_are_zero_shot_separable() {
    assert_eq!(zero_shot_accuracy(5.0, 0.1, 1), 1.0);
}

#[test]
fn zero_separation_is_chance() {
    let acc = zero_shot_accuracy(0.0, 0.1, 2);
    assert!((acc - 0.25).abs() <= 0.1, "{acc}");
}

#[test]
fn embedding_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let summary = gen(dir.path(), 5, &DatasetOptions::default());
    let prompts = ClassPrompts::read(&dir.path().join(PROMPTS_FILE)).unwrap();
    assert_eq!(prompts.classes.iter().map(|c| c.0).collect::<Vec<_>>(), vec![6, 10, 2, 4]);
    for (_, r) in &summary.records {
        let t = read_embedding(&embedding_path(dir.path(), &r.name)).unwrap();
        assert_eq!(t.name, r.name);
        assert_eq!(t.n_text(), 64);
        assert_eq!(t.n_image(), 16);
        let again = pf_core::ulip::EmbeddingTriplet::from_bytes(&t.to_bytes()).unwrap();
        assert_eq!(again, t);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(generate_embeddings(&[6], &[("x".into(), 6)], &EmbeddingSpec { dim: 1, ..EmbeddingSpec::default() }, &mut rng).is_err());
}
