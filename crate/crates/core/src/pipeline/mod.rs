//! End-to-end orchestration: configuration, the three-stage funnel, flat baseline and
//! contrast experiments.

pub mod config;
pub mod contrast;
pub mod funnel;

pub use config::{FunnelConfig, StageDepth};
pub use contrast::{contrast_mode, AnswerOracle, ContrastArm, ContrastMode, ContrastReport, ContrastSettings};
pub use funnel::{
    post_rank_stage, pre_rank_stage, retrieve_stage, run_batch, run_batch_with, run_flat, run_funnel,
    BatchOutcome, DocumentStore, FlatResources, FunnelResources, FunnelScorers, FunnelTrace, QueryFailure,
    Stage, StageResult, ALL_PASSAGE_SCORES,
};
