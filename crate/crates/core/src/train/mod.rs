//! Training driver: configuration, data loading, the epoch loop with
//! checkpoint selection, test-time evaluation and contrastive pretraining.

pub mod config;
pub mod eval;
pub mod loader;
pub mod pretrain;
pub mod select;
pub mod trainer;

pub use config::{Init, Task, TrainConfig, PROFILE_NAMES};
pub use eval::{argmax, evaluate, predict_cloud, predict_clouds, read_label_file, score, subcloud, subcloud_logits, write_label_files, CloudPrediction};
pub use loader::{epoch_schedule, for_each_batch, load_batch, training_sample, BatchItem, LoadedBatch};
pub use pretrain::{cloud_embedding, match_embeddings, zero_shot_accuracy, PretrainOutcome, Pretrainer};
pub use select::{best_index, metadata_path, parameter_checksum, CheckpointMetadata, History, HistoryRow, SelectionMetric, HISTORY_HEADER};
pub use trainer::{config_hash, model_config, part_targets, segmentation_weights, TrainOutcome, Trainer, IGNORE_TARGET};
