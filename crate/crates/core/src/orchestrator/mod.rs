//! Self-training loop: manifests, the segmenter protocol, expansion
//! scheduling and the per-cycle filter/prompt/correct pipeline.

pub mod client;
pub mod config;
pub mod corpus;
pub mod cycle;
pub mod eval;
pub mod manifest;
pub mod mock;
pub mod policy;
pub mod protocol;
pub mod selftrain;

pub use client::{InProcessSegmenter, LineClient, Segmenter};
pub use config::Config;
pub use cycle::{run_cycle, CycleReport, CycleSettings, Outcome};
pub use manifest::{split_dataset, LabelKind, Manifest, Provenance, SampleRecord, Split};
pub use policy::{expansion_count, ExpansionKind, ExpansionPolicy};
pub use protocol::{RequestHandler, SegmenterRequest, SegmenterResponse, Status};
pub use selftrain::{run_self_training, FinalReport, SelfTrainConfig};
