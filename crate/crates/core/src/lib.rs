//! Repair-then-contrast signal construction for sparse-hit group RL.
//!
//! The crate is `no_std` (it needs `alloc`) and holds every algorithmic piece
//! of the testbed:
//!
//! - [`sid`]: three-level semantic IDs, their textual grammar and the parser.
//! - [`scoring`]: task reward and structural score of a response.
//! - [`signals`]: GRPO normalization, rollout repair, boundary pair selection
//!   and the contrastive advantage vector, plus the four ablation modes.
//! - [`env`]: synthetic prompt dataset and the tabular hierarchical policy.
//! - [`trainer`]: KL-regularized policy-gradient steps with exact gradients
//!   and the search/update cost model.
//! - [`eval`]: Pass@K, Recall@K, group composition and matched-budget ratios.
//!
//! IO, file formats and the CLI live in the `recast-lab` crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod env;
pub mod error;
pub mod eval;
mod math;
pub mod rng;
pub mod scoring;
pub mod sid;
pub mod signals;
pub mod trainer;

pub use env::{Dataset, PromptSpec, SampledResponse, TabularPolicy};
pub use error::{Error, Result};
pub use eval::{EvalConfig, LearningCurve};
pub use scoring::{PhiWeights, ResponseScore};
pub use sid::{CatalogShape, IdSet, ResponseText, SemanticId};
pub use signals::{AdvantageVector, ScoredGroup, SignalConfig, SignalMode};
pub use trainer::{GradientRecord, StepReport, TrainConfig, TrainState};
