//! Concept erasure for conditional flow-matching generative models via
//! group-relative policy optimization, with a dual-path reward scheduler,
//! training-free and fine-tuning baselines, and a quantitative evaluation
//! harness — all on synthetic low-dimensional concept datasets.
//!
//! Start with the `examples/` directory for runnable tours of each layer:
//! data and flow training, stochastic sampling, the policy update, the
//! scheduler, baselines and evaluation. The `pipeline` module wires the
//! same pieces into the end-to-end commands exposed by the thin CLI.

pub mod baselines;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod flow;
pub mod graph;
pub mod grpo;
pub mod optim;
pub mod perception;
pub mod pipeline;
pub mod rewards;
pub mod rng;
pub mod scheduler;
pub mod tensor;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use tensor::RealArray;
