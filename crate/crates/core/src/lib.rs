//! Bug localization engine: BM25 shortlisting over source snapshots, a
//! boosted-tree rankability gate, and a reranking policy trained with
//! advantage actor-critic on a ranking-shaped reward.

pub mod config;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod filtergate;
pub mod metrics;
pub mod pipeline;
pub mod policy;
pub mod rankenv;
pub mod retrieval;
pub mod textproc;
pub mod trainer;

pub use config::RunConfig;
pub use corpus::{BugReport, Corpus, Snapshot, SourceFile, Split, SynthParams};
pub use encoder::{ConcatRow, Embedding, Encoder};
pub use error::{Error, Result};
pub use filtergate::{GateConfig, GateFeatures, GateModel};
pub use metrics::{EvalReport, RankedResult};
pub use policy::{PolicyHyper, PolicyModel, PolicyOutput};
pub use rankenv::{EpisodeRecord, RankState, RewardParams};
pub use retrieval::{CandidateSet, InvertedIndex};
pub use textproc::TokenStream;
pub use trainer::{A2cConfig, TrainLog};
