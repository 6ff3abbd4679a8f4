//! Population-stock estimation from geotagged event streams.
//!
//! The engine turns geotagged user events into daily per-region counts of
//! distinct active users, classified as residents, non-residents, or unknown
//! against each user's modal home region inferred over a study window. On top
//! of the stock series it provides the anomaly analytics (daily shares,
//! z-scores, divergent bands, influx ratios) and the validation statistics
//! (sample sizing, labeled-home accuracy, threshold sweeps, OLS fits) used to
//! establish the method, plus a deterministic synthetic-world generator with
//! a naive oracle classifier for end-to-end verification.

pub mod analytics;
pub mod ingest;
pub mod inference;
pub mod pipeline;
pub mod regions;
pub mod stocks;
pub mod synth;
pub mod validation;
