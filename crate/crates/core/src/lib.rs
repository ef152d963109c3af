//! Unsupervised structure extraction for noisy, multi-line log files.

pub mod corpus;
pub mod error;
pub mod evalharness;
pub mod extraction;
pub mod generation;
pub mod pipeline;
pub mod pruning;
pub mod refinement;
pub mod scoring;
pub mod template;

pub use corpus::{Corpus, SampleView};
pub use error::{Error, Result};
pub use evalharness::{
    generate, verify_success, GroundTruth, RelOp, SynthSpec, Synthetic, Verdict,
};
pub use extraction::{
    extract_all, read_output, write_output, OutputFormat, RelationalOutput, Table,
};
pub use generation::{GenerationConfig, SearchMode};
pub use pipeline::{discover, ExtractionPlan, PipelineConfig, SamplingConfig, Status};
pub use scoring::{FieldType, ScoredTemplate};
pub use template::{CharSet, CompiledTemplate, Node, RecordTemplate, StructureTemplate};
