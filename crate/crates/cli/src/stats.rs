//! Per-cloud voxel occupancy and label histograms of a dataset.

use std::fmt::Write as _;
use std::path::Path;

use pf_core::config::RunConfig;
use pf_core::data::{label_histogram, LabelKind, LabelVocabulary, SplitName};
use pf_core::geom::build_voxel_grid;

use crate::{create_dir, load_split, runtime, write_file, Outcome};

const BINS: usize = 10;

/// Equal-width histogram over `[min, max]`; a constant input gets one bin.
pub fn histogram(values: &[usize]) -> Vec<(f64, f64, usize)> {
    let lo = values.iter().copied().min().unwrap_or(0) as f64;
    let hi = values.iter().copied().max().unwrap_or(0) as f64;
    if hi <= lo {
        return vec![(lo, hi, values.len())];
    }
    let w = (hi - lo) / BINS as f64;
    let mut counts = vec![0; BINS];
    for &v in values {
        let b = (((v as f64 - lo) / w) as usize).min(BINS - 1);
        counts[b] += 1;
    }
    counts.into_iter().enumerate().map(|(i, c)| (lo + w * i as f64, lo + w * (i + 1) as f64, c)).collect()
}

fn size_tag(s: f64) -> String {
    s.to_string()
}

fn label_csv(counts: &[u64], vocab: &LabelVocabulary) -> String {
    let mut s = String::from("label,name,count\n");
    for (i, c) in counts.iter().enumerate() {
        let _ = writeln!(s, "{i},{},{c}", vocab.name(i).unwrap_or("?"));
    }
    s
}

fn reread_rows(path: &Path) -> Result<usize, crate::Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| runtime(format!("cannot read {}: {e}", path.display())))?;
    Ok(text.lines().count().saturating_sub(1))
}

pub fn run(cfg: &RunConfig) -> Outcome {
    let mut clouds = Vec::new();
    for split in SplitName::ALL {
        clouds.extend(load_split(cfg, split)?.into_iter().map(|c| (split, c)));
    }
    create_dir(&cfg.out)?;

    let mut table = String::from("split,name,points");
    for s in &cfg.voxel_sizes {
        let _ = write!(table, ",voxels_{}", size_tag(*s));
    }
    table.push('\n');
    let mut per_size: Vec<Vec<usize>> = vec![Vec::new(); cfg.voxel_sizes.len()];
    for (split, c) in &clouds {
        let _ = write!(table, "{},{},{}", split.as_str(), c.name, c.len());
        for (k, &s) in cfg.voxel_sizes.iter().enumerate() {
            let n = build_voxel_grid(&c.coords, s as f32)?.num_cells();
            per_size[k].push(n);
            let _ = write!(table, ",{n}");
        }
        table.push('\n');
    }
    let counts_path = cfg.out.join("voxel_counts.csv");
    write_file(&counts_path, &table)?;
    if reread_rows(&counts_path)? != clouds.len() {
        return Err(runtime(format!("{} is incomplete", counts_path.display())));
    }

    for (k, &s) in cfg.voxel_sizes.iter().enumerate() {
        let mut csv = String::from("bin_lo,bin_hi,count\n");
        for (lo, hi, c) in histogram(&per_size[k]) {
            let _ = writeln!(csv, "{lo},{hi},{c}");
        }
        let path = cfg.out.join(format!("voxel_hist_{}.csv", size_tag(s)));
        write_file(&path, &csv)?;
        if reread_rows(&path)? == 0 {
            return Err(runtime(format!("{} is empty", path.display())));
        }
        let mean = per_size[k].iter().sum::<usize>() as f64 / per_size[k].len() as f64;
        println!("voxel size {s}: mean {mean:.1} occupied voxels per cloud");
    }

    let labeled: Vec<_> = clouds.iter().filter(|(_, c)| c.seg_labels.is_some()).map(|(_, c)| c.clone()).collect();
    let parts = LabelVocabulary::parts();
    let mut h = label_histogram(&labeled, &parts, LabelKind::Segmentation)?;
    h.counts[0] = h.ignored;
    let typed: Vec<_> = clouds.iter().filter(|(_, c)| c.type_label.is_some()).map(|(_, c)| c.clone()).collect();
    let types = LabelVocabulary::building_types();
    let t = label_histogram(&typed, &types, LabelKind::Classification)?;
    for (name, text, rows) in [
        ("part_labels.csv", label_csv(&h.counts, &parts), parts.len()),
        ("type_labels.csv", label_csv(&t.counts, &types), types.len()),
    ] {
        let path = cfg.out.join(name);
        write_file(&path, &text)?;
        if reread_rows(&path)? != rows {
            return Err(runtime(format!("{} is incomplete", path.display())));
        }
    }
    println!("{} clouds, stats in {}", clouds.len(), cfg.out.display());
    Ok(())
}
