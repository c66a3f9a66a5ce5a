//! Membership inference on aggregate location time-series.
//!
//! The crate is organised along the pipeline it implements:
//!
//! - [`data`]: event ingestion, binary ROI x timeslot trace matrices and a
//!   synthetic population generator.
//! - [`aggregate`]: group aggregates and windowing.
//! - [`attack`]: the distinguishability game and the PCA + logistic
//!   regression distinguisher.
//! - [`defense`]: eleven sanitization mechanisms over traces or aggregates.
//! - [`profiling`]: per-user mobility features, unicity and component
//!   loading heatmaps.
//! - [`evaluation`]: privacy gain and utility metrics.
//! - [`harness`]: experiment configuration, sweeps and report emission.

pub mod aggregate;
pub mod attack;
pub mod data;
pub mod defense;
pub mod error;
pub mod evaluation;
pub mod harness;
pub mod linalg;
pub mod profiling;
pub mod rng;

pub use aggregate::{aggregate, remove_user, AggregateSeries, Series, SlotRange};
pub use attack::{
    auc, build_samples, fit_lr, fit_pca, pca_transform, predict_scores, run_mia, AttackResult,
    GameConfig, LrModel, LrParams, PcaModel, PriorSpec, SampleSet,
};
pub use data::{Dataset, Discretization, GridSpec, RoiMode, SynthConfig, TraceMatrix};
pub use defense::{DefenseConfig, Noise};
pub use error::{Error, Result};
pub use evaluation::{privacy_gain, Metric, TradeoffRecord, UtilityReport};
