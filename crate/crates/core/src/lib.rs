//! Metric learning on precomputed image features: a BN-Dropout-FC embedding
//! head trained with SubCenter ArcFace and class-count dependent margins,
//! reduction of the embedding to 64 dimensions, and exact kNN retrieval
//! evaluation with per-vertical mAP.

pub mod container;
pub mod datastore;
pub mod error;
pub mod metric_model;
pub mod numkit;
pub mod reduce;
pub mod retrieval;
pub mod trainer;

pub use datastore::{DatasetManifest, FeatureBank, Split};
pub use error::{Error, Result};
pub use metric_model::{MetricModel, ModelConfig};
pub use numkit::{Matrix, RngStream};
pub use reduce::{PcaModel, ReduceConfig, ReduceMethod};
pub use retrieval::{EvalConfig, EvalReport, Index};
pub use trainer::{TrainConfig, TrainReport};
