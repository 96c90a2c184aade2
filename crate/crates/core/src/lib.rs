//! A laboratory for post-training generative models when every observed
//! reward is zero. The centerpiece learns from failures only: each round it
//! fits a density model to its rejected samples, filters its proposal by a
//! likelihood-ratio test against that model, and distills the survivor
//! distribution back into the proposal. Classical baselines (policy
//! gradients, flow matching on terminal rewards, novelty bonuses), metered
//! reward oracles with hard budgets, and reproducible experiment harnesses
//! round out the lab.

pub mod banel;
pub mod baselines;
pub mod blob;
pub mod config;
pub mod error;
pub mod eval;
pub mod harness;
pub mod model;
pub mod neural;
pub mod oracle;
pub mod seq;
pub mod tabular;
pub mod tasks;

pub use error::{Error, Result};
