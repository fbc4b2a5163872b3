//! Reverse-mode automatic differentiation, parameters, optimizers,
//! schedules and checkpoints.

pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod optim;
pub mod params;
pub mod schedule;
pub mod tensor;

pub use checkpoint::{apply_checkpoint, read_checkpoint, save_checkpoint, LoadReport, StoredTensor};
pub use gradcheck::{compare_gradients, gradient_check, relative_error, value_and_grads};
pub use graph::{BatchStats, Gradients, Graph, Var};
pub use optim::{adam_step, sgd_momentum_step, AdamHyper, AdamState, Optimizer, OptimizerKind};
pub use params::{he_uniform, normal_init, param_rng, BufferId, ParamId, ParamStore, Parameter};
pub use schedule::{cosine_lr, LrSchedule, ScheduleKind};
pub use tensor::Tensor;
