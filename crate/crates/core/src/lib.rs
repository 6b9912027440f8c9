//! Remaining-useful-life forecasting for wind-turbine SCADA logs.
//!
//! Pipeline: [`ingest`] splits SCADA streams into run-to-failure datasets,
//! [`preprocess`] turns each into `(window, RUL)` pairs, [`models`] builds
//! ForeNet-2d, ForeNet-3d and their ablations on [`tensor`], [`training`]
//! runs leave-one-failure-out experiments and [`evaluation`] measures the
//! disparity D_k between forecast and actual failure. [`synth`] generates
//! test fixtures.

pub mod evaluation;
pub mod ingest;
pub mod io_util;
pub mod models;
pub mod preprocess;
pub mod synth;
pub mod tensor;
pub mod training;
