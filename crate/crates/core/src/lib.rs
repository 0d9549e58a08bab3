//! Two-stage dynamic token pruning for multimodal transformer inputs.
//!
//! Stage one ranks visual tokens by their softmax similarity to the CLS
//! token, locates the head/tail split of the sorted long-tail curve and keeps
//! the head. Stage two concatenates the surviving (projected) visual tokens
//! with the text tokens and streams them through a heavy/recent budget
//! eviction policy driven by accumulated causal attention.
//!
//! Supporting modules cover matrix and mask I/O, a prefill cost model and
//! PGM rendering of patch masks.

pub mod config;
pub mod cost_model;
pub mod error;
pub mod eviction;
pub mod pipeline;
pub mod segmentation;
pub mod similarity;
pub mod tensor_io;
pub mod viz;

pub use error::{Error, Result};
pub use eviction::{run_stream, Eviction, EvictionConfig, EvictionState, Evictor, StreamResult};
pub use pipeline::{run_pipeline, EvictionBudget, PipelineConfig, PipelineCounts, PipelineReport};
pub use segmentation::{SmoothingMode, SplitResult};
pub use similarity::SimilarityCurve;
pub use tensor_io::{EmbeddingMatrix, IndexMask, RoleTag};
