pub mod augment;
pub mod autodiff;
pub mod config;
pub mod data;
pub mod error;
pub mod geom;
pub mod metrics;
pub mod model;
pub mod scalar;
pub mod seed;
pub mod synth;
pub mod train;
pub mod ulip;

pub use error::{Error, Result};
pub use scalar::{Real, Vec3};

pub type Tensor32 = autodiff::Tensor<f32>;
pub type Tensor64 = autodiff::Tensor<f64>;
pub type Graph32 = autodiff::Graph<f32>;
pub type Graph64 = autodiff::Graph<f64>;
pub type ParamStore32 = autodiff::ParamStore<f32>;
pub type ParamStore64 = autodiff::ParamStore<f64>;
pub type PointCloud32 = data::PointCloud<f32>;
pub type PointCloud64 = data::PointCloud<f64>;
pub type PointNeXt32 = model::PointNeXt<f32>;
pub type PointNeXt64 = model::PointNeXt<f64>;
pub type Trainer32 = train::Trainer<f32>;
pub type Trainer64 = train::Trainer<f64>;
