//! Cognitive network and slice management: a wbCQI regression pipeline and a
//! proactive slice control loop over a simulated multi-slice RAN.

pub mod anomaly;
pub mod channel;
pub mod error;
pub mod eval;
pub mod features;
pub mod ingest;
pub mod kb;
pub mod models;
pub mod pcs;
pub mod pipeline;
pub mod preprocess;
pub mod table;

pub use error::{Error, Result};
pub use features::{FeatureMatrix, FeatureSet};
pub use ingest::MonitoringRecord;
pub use models::{ModelArtifact, ModelKind, TrainedModel};
pub use table::DataTable;
