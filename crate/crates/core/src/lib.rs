//! Neural-ODE generative models for continuous medical time series.
//!
//! The crate is layered bottom-up:
//!
//! - [`autodiff`]: tape-based reverse-mode differentiation over `f64` tensors.
//! - [`odesolve`]: fixed-step Euler / RK4 integration recorded on the tape.
//! - [`cells`]: continuous GRU and LSTM vector fields and the ODE-RNN pass.
//! - [`interpolation`]: natural cubic spline paths and controlled ODEs.
//! - [`models`]: generators and discriminators built from the above.
//! - [`training`]: Adam, gradient noise, dataset splits, training loops.
//! - [`data`]: CSV ingestion, windowing, synthetic sine and ECG signals.
//! - [`eval`]: RMSE, RBF-kernel MMD, and CSV/SVG export.

pub mod autodiff;
pub mod cells;
pub mod data;
pub mod eval;
pub mod interpolation;
pub mod models;
pub mod odesolve;
pub mod rng;
pub mod training;

mod error;

pub use error::{Error, Result};
