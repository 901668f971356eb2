//! Batch engine for prediction-market arbitrage analysis.
//!
//! The pipeline runs in stages: ingest event logs and market descriptors,
//! build per-token VWAP series, discover dependent market pairs through a
//! validated semantic oracle, detect rebalancing and combinatorial
//! opportunities, and attribute realized arbitrage profit to accounts.

pub mod attribution;
pub mod dependency;
pub mod detect;
pub mod ingest;
pub mod market_model;
pub mod pricing;
