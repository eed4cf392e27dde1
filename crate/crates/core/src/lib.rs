//! Resource allocation for multiuser OFDM uplink and downlink channels.
//!
//! The crate computes optimal power and rate allocations for three problems
//! over a set of parallel scalar Gaussian subcarriers: weighted sum rate
//! maximization under a power budget, sum power minimization under rate
//! requirements, and weighted sum rate maximization under both. Uplink and
//! downlink allocations are related by an exact duality transform.

pub mod capacity;
pub mod channel;
pub mod error;
pub mod matrix;
pub mod minpower;
pub mod minrates;
pub mod oracle;
pub mod report;
pub mod wsr;

pub use capacity::{DecodingOrder, KktResiduals, PowerAllocation, RateAllocation, Side};
pub use channel::{ChannelGains, ChannelTaps};
pub use error::{Error, Result};
pub use matrix::Matrix;
pub use report::SolverReport;
