//! Probabilistic day-ahead load forecasting for low-voltage network
//! hierarchies.
//!
//! The crate covers the full experiment pipeline: smart-meter ingestion and
//! hierarchy synthesis, GAMLSS density forecasting (Gaussian and Generalised
//! Beta Prime families with penalized-spline predictors), daily peak
//! intensity and timing models, fusion of half-hourly and peak forecasts,
//! benchmark estimators, and a probabilistic verification suite (CRPS, RPS,
//! PIT, skill scores, bootstrap significance).

pub mod dataset;
pub mod dist;
pub mod error;
pub mod forecast;
pub mod fusion;
pub mod gamlss;
pub mod hazard;
pub mod kde;
pub mod num;
pub mod smooth;
pub mod synthetic;
pub mod verify;

pub mod config;
pub mod pipeline;

pub use error::{Error, Result};
