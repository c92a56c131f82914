//! Deterministic federated-learning backdoor laboratory.
//!
//! Simulates rounds of federated training on a small CNN, with benign
//! participants, label-flipping and distributed-trigger adversaries, and
//! adversaries that distil from the current global model while poisoning.
//! The server side offers FedAvg, Multi-Krum, norm clipping with weak DP
//! noise, and FLAME-style cluster filtering. Every run is reproducible from
//! its config and seed.

pub mod aggregation;
pub mod attacks;
pub mod cli;
pub mod data;
pub mod error;
pub mod federation;
pub mod metrics;
pub mod nn;
pub mod rng;

pub use error::{Error, Result};
