//! Seedable simulator for randomized gossiping in the random phone call
//! model on Erdős–Rényi and configuration-model graphs.

pub mod config;
pub mod engine;
pub mod experiment;
pub mod failure;
pub mod graph;
pub mod metrics;
pub mod protocols;
pub mod rng;
