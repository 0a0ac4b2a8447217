//! Rank-based probability/entropy calibration for token-level loss reweighting.
//!
//! The crate is organised bottom-up:
//!
//! - [`stats`]: per-token statistics (probability, rank, entropy, expected rank,
//!   support term, CMVT coefficient, Relative Rank Indicator, Relative Scale).
//! - [`bounds`]: executable validators for the rank/probability and
//!   expected-rank/entropy bounds, plus gap statistics over random sweeps.
//! - [`weighting`]: the token-weight registry (SFT, OverTone, DFT, EAFT, TALR,
//!   RankTuner) and the weighted NLL objective.
//! - [`trainer`]: a tabular n-gram language model trained with manual gradients.
//! - [`diagnostics`]: noise-insertion sensitivity protocol and Pass@k.
//! - [`io`]: logit dumps, CSV schemas and model snapshots.

// `!(x > 0.0)` style checks are deliberate: they reject NaN along with the bad range.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod diagnostics;
mod error;
pub mod io;
pub mod stats;
pub mod trainer;
pub mod weighting;

pub use bounds::GapReport;
pub use diagnostics::{CorrectnessMatrix, NoiseExperiment, ScoreMethod};
pub use error::{Error, Result};
pub use stats::{ScaleConfig, TokenDistribution, TokenStats, XiMode};
pub use trainer::{CorpusRecord, ToyLM, TrainConfig};
pub use weighting::{BatchContext, InitialWeight, WeightScheme};
