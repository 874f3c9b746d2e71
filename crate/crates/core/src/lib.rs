//! Recover the hidden prompt behind black-box language-model outputs.
//!
//! The crate is organised bottom-up:
//!
//! * [`text_metrics`]: tokenization, ROUGE-1, cosine similarity, candidate scoring;
//! * [`gateway`]: live, scripted and synthetic model backends behind a response cache;
//! * [`templates`]: the natural-language queries sent during recovery;
//! * [`engine`]: the recovery methods, including the genetic refinement loop;
//! * [`eval`]: recovered-versus-original evaluation and benchmark runs;
//! * [`corpus`]: prompt-set loading and seeded sampling;
//! * [`cli`]: the `revprompt` command line.

pub mod cli;
pub mod config;
pub mod corpus;
pub mod engine;
mod error;
pub mod eval;
pub mod gateway;
pub mod templates;
pub mod text_metrics;

pub use error::{Error, Result};
