//! What-if scenario engine for multivariate weekly freight-rate forecasting.
//!
//! The crate fits four model families (multiple linear regression, ARIMAX,
//! a rank-one VECM and a single-layer LSTM) on a [`TimeSeriesFrame`], lets a
//! caller perturb future exogenous values, and reports per-model differences
//! between the perturbed and baseline forecasts. It also ranks models by
//! walk-forward backtests and aggregates vessel positions into supply series.

pub mod eval;
pub mod linalg;
pub mod models;
pub mod optim;
pub mod scenario;
pub mod spatial;
pub mod synth;
pub mod timeseries;
pub mod wire;

#[cfg(test)]
mod testutil;

pub use models::{fit, Forecast, FittedModel, ModelError, ModelKind, ModelSpec};
pub use timeseries::{Cell, TimeSeriesFrame};
