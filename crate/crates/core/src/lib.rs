//! Counterfactual forecasting for panels of time series with a single intervention.

pub mod eval;
pub mod global;
pub mod local;
pub mod numerics;
pub mod panel;
pub mod params;
pub mod synth;
