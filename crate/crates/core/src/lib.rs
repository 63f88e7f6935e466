//! Privacy-preserving abstraction of keyboard logs into dictionary
//! categories, sessionization into text inputs, input-motive
//! classification, and the analyses built on top of them.

pub mod abstractor;
pub mod agreement;
pub mod analytics;
pub mod classifier;
pub mod corpusgen;
pub mod dictionary;
mod diff;
pub mod error;
pub mod io;
pub mod model;
pub mod par;
pub mod pipeline;
pub mod sessionizer;
pub mod special;

pub use abstractor::{process_partitioned, process_stream, AbstractOutput, AbstractorConfig, StreamAbstractor};
pub use classifier::{KeywordRuleSet, MotiveMapping};
pub use dictionary::{Dictionary, Whitelist};
pub use diff::{diff_tokens, WordDelta};
pub use error::{IoError, ParseError};
pub use model::{
    AppCategoryMap, CategorySet, FieldSnapshotEvent, Motive, Prompt, TextInputRecord, Timestamp, WordEvent, WordKind,
};
pub use par::Exec;
pub use pipeline::{PipelineContext, PipelineOutput, StatsReport};
