//! Sensitivity-guided reinforcement-learning search for critical bit-flip sets
//! in int8 models, with the baselines, protection analysis and testbench
//! generation around it.

// `!(x >= 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod campaign;
pub mod candidate;
pub mod dse;
pub mod dut;
pub mod error;
pub mod fault;
pub mod rl;
pub mod search;
pub mod sensitivity;
pub mod stats;
pub mod uvm;

pub use baselines::Method;
pub use campaign::{run_campaign, CampaignConfig, CampaignReport};
pub use candidate::CandidateSet;
pub use dse::DseReport;
pub use dut::{build_dut, evaluate, gradients, thread_evaluations, ArchConfig, Dut, DutConfig, EvalResult, GroupRole, QuantizedModel, RepDataset};
pub use error::{Error, Result};
pub use fault::{FaultSet, FaultSite};
pub use rl::RlConfig;
pub use search::SearchResult;
pub use sensitivity::SensitivityProfile;
