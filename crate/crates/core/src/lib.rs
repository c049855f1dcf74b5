//! Outcome-weighted multi-label learning for individualized combination
//! therapies.
//!
//! A treatment combination over `K` drugs is a vector in `{-1,+1}^K`. The
//! decision rule is a small feed-forward network whose `K` output scores are
//! thresholded at zero; it is trained by minimizing an inverse-propensity
//! weighted Hamming surrogate loss with mini-batch SGD.
//!
//! Besides the learner the crate ships:
//!
//! - a simulation harness with the additive (and quadratically mis-specified)
//!   data-generating process, Bayes oracle and the one-vs-one label-powerset
//!   baseline,
//! - evaluation scores (MCR, AMCR, adjusted variants, average benefit, and the
//!   weighted value statistic for observational data),
//! - a brute-force lab that checks the Fisher-consistency results for the
//!   Hamming loss and its convex surrogates on finite-support instances.

pub mod bench;
pub mod cli;
pub mod combo;
pub mod consistency;
pub mod error;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod network;
pub mod propensity;
pub mod rng;
pub mod simulator;
pub mod trainer;

pub use combo::{Combo, LabeledSample};
pub use error::{Error, Result};
pub use losses::{LossSpec, PenaltyKind, SurrogateKind};
pub use network::{NetConfig, NetParams};
pub use propensity::PropensityModel;
pub use trainer::{FitResult, TrainConfig};
