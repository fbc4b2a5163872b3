//! Point-set geometry: sampling, neighbor search, voxelization and interpolation.

mod fps;
mod interp;
mod neighbors;
mod voxel;

pub use fps::{farthest_point_sampling, sampled_count, FpsStart};
pub use interp::{interpolation_weights, inverse_distance_interpolate, INTERP_EPS};
pub use neighbors::{ball_query, ball_query_at, knn, NeighborIndex};
pub use voxel::{build_voxel_grid, cell_key, enumerate_test_subclouds, sample_train_subcloud, CellKey, VoxelGrid};
