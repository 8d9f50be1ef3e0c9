//! Risk-adaptive local differential privacy for terminal/edge sensing.
//!
//! The terminal side scores its operating risk (channel anomalies from a
//! block-scalable autoencoder, field sensitivity, context entropy, resource
//! pressure), fuses the four dimensions into one scalar, asks a TD3 policy for
//! a privacy budget and perturbs each sensing record with the bounded Laplace
//! mechanism. The edge side attacks the released data, measures downstream
//! utility and feeds the result back into the reward weights.
//!
//! Module map:
//! - [`fusion`]: ANP weighting and fuzzy comprehensive evaluation.
//! - [`lightae`]: teacher autoencoder, distilled block library, selection.
//! - [`tracegen`]: synthetic channel traces and the sensing task.
//! - [`decision`]: MDP, reward, TD3 agent and the closed-form optimum.
//! - [`blp`]: bounded Laplace sampling and the budget ledger.
//! - [`verify`]: attacks, utility evaluation and the feedback controller.
//! - [`harness`]: config, transport, terminal/edge actors, reports.

pub mod blp;
pub mod codec;
pub mod decision;
pub mod error;
pub mod fusion;
pub mod harness;
pub mod lightae;
pub mod nn;
pub mod stats;
pub mod tracegen;
pub mod verify;

pub use error::{Error, Result};
