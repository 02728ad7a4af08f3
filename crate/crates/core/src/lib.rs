//! Entropy-based analysis of retweet debates.
//!
//! The pipeline builds a bipartite network of verified and unverified users,
//! fits the Bipartite Configuration Model to it, keeps only the verified-user
//! co-retweet links that are significant under that null model, detects
//! communities on the validated network and propagates their labels over the
//! full retweet network. The [`pipeline`] module then classifies tweets by
//! state, news-source reliability and bot status and aggregates the report
//! tables; [`stats`] holds the hypothesis tests applied to them.

pub mod bicm;
pub mod community;
pub mod error;
pub mod graph;
pub mod pipeline;
pub mod projection;
pub mod stats;
pub mod workflow;

pub use error::{Error, Result};
