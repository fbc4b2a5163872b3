use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::data::cloud::PointCloud;
use crate::data::io::load_point_cloud;
use crate::data::vocab::LabelVocabulary;
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl SplitName {
    pub const ALL: [SplitName; 3] = [SplitName::Train, SplitName::Val, SplitName::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Val => "val",
            SplitName::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitName::Train),
            "val" => Ok(SplitName::Val),
            "test" => Ok(SplitName::Test),
            other => Err(Error::invalid(format!("unknown split {other:?}"))),
        }
    }
}

/// Named list of point-cloud files.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub name: SplitName,
    pub entries: Vec<PathBuf>,
}

impl DatasetSplit {
    pub fn new(name: SplitName, entries: Vec<PathBuf>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::invalid(format!("split {} has no entries", name.as_str())));
        }
        Ok(DatasetSplit { name, entries })
    }

    /// Reads a manifest (one path per line, relative paths resolved against the
    /// manifest's directory).
    pub fn read_manifest(name: SplitName, manifest: &Path) -> Result<Self> {
        let text = fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
        let base = manifest.parent().unwrap_or(Path::new("."));
        let entries = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(|l| {
                let p = PathBuf::from(l);
                if p.is_absolute() { p } else { base.join(p) }
            })
            .collect();
        Self::new(name, entries)
    }

    /// Writes entries relative to `base` when possible.
    pub fn write_manifest(&self, manifest: &Path, base: &Path) -> Result<()> {
        let mut out = String::new();
        for e in &self.entries {
            let rel = e.strip_prefix(base).unwrap_or(e);
            let _ = writeln!(out, "{}", rel.display());
        }
        fs::write(manifest, out).map_err(|e| Error::io(manifest, e))
    }

    pub fn load<T: Real>(&self) -> Result<Vec<PointCloud<T>>> {
        self.entries.iter().map(|p| load_point_cloud(p)).collect()
    }
}

/// Checks that no entry appears in more than one split.
pub fn check_disjoint(splits: &[DatasetSplit]) -> Result<()> {
    for (i, a) in splits.iter().enumerate() {
        for b in &splits[i + 1..] {
            if a.name == b.name {
                return Err(Error::invalid(format!("split {} listed twice", a.name.as_str())));
            }
            if let Some(dup) = a.entries.iter().find(|e| b.entries.contains(e)) {
                return Err(Error::invalid(format!(
                    "{} appears in both {} and {}",
                    dup.display(),
                    a.name.as_str(),
                    b.name.as_str()
                )));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelKind {
    /// Per-point part labels.
    Segmentation,
    /// One building-type label per cloud.
    Classification,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelHistogram {
    /// One count per vocabulary entry; the ignored class stays at zero here.
    pub counts: Vec<u64>,
    /// Occurrences of the ignored class.
    pub ignored: u64,
}

impl LabelHistogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.ignored
    }
}

/// Per-class label counts over `clouds`.
pub fn label_histogram<T: Real>(
    clouds: &[PointCloud<T>],
    vocab: &LabelVocabulary,
    kind: LabelKind,
) -> Result<LabelHistogram> {
    let mut hist = LabelHistogram { counts: vec![0; vocab.len()], ignored: 0 };
    let mut add = |entry: &str, label: usize| -> Result<()> {
        if label >= vocab.len() {
            return Err(Error::LabelOutOfRange { entry: entry.to_string(), label, size: vocab.len() });
        }
        if Some(label) == vocab.ignore_index() {
            hist.ignored += 1;
        } else {
            hist.counts[label] += 1;
        }
        Ok(())
    };
    for c in clouds {
        match kind {
            LabelKind::Segmentation => {
                let labels = c
                    .seg_labels
                    .as_ref()
                    .ok_or_else(|| Error::invalid(format!("{}: no segmentation labels", c.name)))?;
                for &l in labels {
                    add(&c.name, l)?;
                }
            }
            LabelKind::Classification => {
                let l = c.type_label.ok_or_else(|| Error::invalid(format!("{}: no type label", c.name)))?;
                add(&c.name, l)?;
            }
        }
    }
    Ok(hist)
}
