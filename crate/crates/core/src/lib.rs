//! Short-term traffic flow forecasting with a Location-GCN spatial layer
//! (learnable absolute-value influence mask) feeding a stacked LSTM.

pub mod baselines;
pub mod data;
pub mod encoding;
pub mod error;
pub mod graph;
pub mod io;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod temporal;
pub mod training;

pub use error::{Error, Result};
