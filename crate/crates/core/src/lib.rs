//! Learning-to-optimize benchmark library.
//!
//! Layers, bottom up:
//!
//! * [`numerics`]: dense column-major linear algebra, seeded random streams.
//! * [`autodiff`]: a reverse-mode tape used to train every learned model.
//! * [`problems`]: generators and objectives for the sparse recovery, LASSO,
//!   Rastrigin-family and MLP testbeds.
//! * [`analytic`]: hand-designed optimizers (GD, NAG, Adam, RMSProp, ISTA,
//!   FISTA, PnP-ADMM, safeguarding).
//! * [`unrolled`]: LISTA-family unrolled networks and their progressive training.
//! * [`meta`]: the coordinatewise LSTM optimizer and its truncated-BPTT
//!   meta-training.
//! * [`bench`]: experiment configuration, runs, CSV records, checkpoints and
//!   reports.

pub mod analytic;
pub mod autodiff;
pub mod bench;
pub mod error;
pub mod meta;
pub mod numerics;
pub mod problems;
pub mod unrolled;

pub use error::{Error, Result};
