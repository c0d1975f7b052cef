//! Estimating counterfactual revenue and welfare of rank-by-bid position
//! auctions from equilibrium bids of a different auction.

pub mod abtest;
pub mod alloc;
pub mod bounds;
pub mod dist;
pub mod equil;
pub mod error;
pub mod estim;
pub mod harness;

pub use error::{Error, Result};
