//! Sub-optimal Riccati feedback for nonlinear interacting-agent systems and
//! moment-driven predictive control (MdPC).
//!
//! The crate is organised bottom-up:
//!
//! - [`kernels`]: interaction kernels `P(v, w)`, their bounds `[-a, b]` and the
//!   linearization coefficient `p̄ = P(v̄, v̄)`.
//! - [`riccati`]: the reduced scalar Riccati systems for the diagonal and
//!   off-diagonal gains, plus a dense matrix oracle.
//! - [`ensemble`]: particle states, initial samplers, the mean-field Monte
//!   Carlo stepper and an exact all-pairs stepper.
//! - [`control`]: closed-loop, open-loop and inexact open-loop feedback and
//!   the discretized cost.
//! - [`bounds`]: analytic mean decay laws, variance envelopes and the trigger
//!   quantities used by MdPC.
//! - [`mdpc`]: the event-triggered run loop and non-adaptive baselines.

pub mod bounds;
pub mod control;
pub mod ensemble;
pub mod error;
pub mod kernels;
pub mod mdpc;
pub mod riccati;
pub mod stats;

pub use error::{Error, Result};
