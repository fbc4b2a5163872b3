//! Labeled point clouds, vocabularies, dataset splits and their file formats.

mod cloud;
mod io;
mod name;
mod split;
mod vocab;

pub use cloud::{compute_heights, Axis, PointCloud, MAX_SEG_LABEL, MAX_TYPE_LABEL};
pub use io::{load_point_cloud, meta_path, save_point_cloud};
pub use name::{format_building_name, parse_building_name, BuildingName};
pub use split::{check_disjoint, label_histogram, DatasetSplit, LabelHistogram, LabelKind, SplitName};
pub use vocab::{LabelVocabulary, BUILDING_TYPES, PART_NAMES};
