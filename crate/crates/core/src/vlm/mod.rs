//! Phase decomposition through a vision-language model: prompt rendering,
//! response validation and a chat-completion client.

mod client;
mod parse;
mod prompt;

pub use client::{call_chat_endpoint, EndpointConfig};
pub use parse::{parse_response, to_response_json, to_stage_records, validate_records, StageRecord};
pub use prompt::{render_prompt, PromptDocument, SensorRecord, TaskType, TimestepRecord, CYCLE_STRING};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VlmError {
    #[error("cannot render a prompt for an empty trajectory")]
    EmptyTrajectory,
    #[error("malformed JSON: {0}")]
    MalformedJson(String),
    #[error("record {index}: unknown stage name `{name}`")]
    UnknownStageName { index: usize, name: String },
    #[error("record {0} overlaps the previous phase")]
    Overlap(usize),
    #[error("record {0} leaves a gap after the previous phase")]
    Gap(usize),
    #[error("record {0} breaks the pre-contact, grasping, post-contact cycle")]
    CycleOrder(usize),
    #[error("record {0} has start > end")]
    InvertedRange(usize),
    #[error("phases do not cover the trajectory exactly")]
    RangeMismatch,
    #[error("{0} phases do not form whole cycles")]
    IncompleteCycle(usize),
    #[error("credential environment variable `{0}` is not set")]
    MissingCredential(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("request timed out")]
    Timeout,
}
