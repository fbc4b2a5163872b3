//! Point-cloud network and its configuration.

pub mod config;
pub mod geometry;
pub mod network;

pub use config::{HeadKind, ModelConfig, RadiusPolicy, StageConfig, StrideProfile, INPUT_CHANNELS, NUM_BUILDING_TYPES, NUM_PART_CLASSES, PRESET_NAMES};
pub use geometry::{point_features, CloudGeometry, Grouping, LevelGeometry};
pub use network::{ForwardOutput, Mode, ModelInput, PointNeXt};
