//! Truthful spectrum auctions on edge-weighted conflict graphs.
//!
//! The crate covers the conflict-graph model, bidder valuations, the packing
//! LPs and their randomized roundings, convex decompositions used for
//! truthful payments, the MIDR pipeline for matroid-rank-sum bidders and the
//! single-channel greedy algorithms.

pub mod decomposition;
pub mod error;
pub mod exhaustive;
pub mod fixtures;
pub mod generators;
pub mod graph;
pub mod greedy;
pub mod instance;
pub mod lp;
pub mod mechanism;
pub mod midr;
pub mod rng;
pub mod rounding;
pub mod valuations;

pub use error::{Error, Result};
pub use graph::{ConflictGraph, Ordering};
pub use instance::{Allocation, Instance};
pub use valuations::Valuation;
