//! Step-level speculative reasoning.
//!
//! A small draft model proposes reasoning steps, a large target model checks
//! each one with a contrastive positive/negative probe, and a scheduler
//! overlaps drafting, verification and target generation. The crate also
//! carries the reward math used to train drafters toward verifiable steps and
//! a deterministic latency simulator for the scheduler.

pub mod backends;
pub mod config;
pub mod cpn;
pub mod latsim;
pub mod orchestrator;
pub mod sapo;
pub mod schema;
pub mod trace;
pub mod transcript;

pub use config::EngineConfig;
pub use cpn::{KeywordSpec, Verdict};
pub use orchestrator::{Engine, EpisodeResult, Policy};
pub use transcript::{ReasoningStep, StepSource, Transcript};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../README.md")]
    mod readme {}
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/verification.md")]
    mod verification {}
    #[doc = include_str!("../../../book/src/scheduling.md")]
    mod scheduling {}
    #[doc = include_str!("../../../book/src/simulator.md")]
    mod simulator {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
