//! Variable-length block coding over discrete memoryless channels with
//! feedback.
//!
//! - [`dmc`]: channels, capacity, `C1`, `lambda`, posterior updates.
//! - [`exponents`]: Burnashev's exponent, lower bounds on `E[tau]` and `E[T]`,
//!   and the classical no-feedback exponent curves.
//! - [`seqtest`]: binary hypothesis tests with feedback as labeled
//!   observation trees, exact evaluation and exhaustive enumeration.
//! - [`yischeme`]: the two-phase communication/confirmation protocol.
//! - [`harness`]: Monte Carlo checks of the stochastic-process claims.
//! - [`cli`]: the `vlfb` command-line front end.

pub mod cli;
pub mod dmc;
pub mod exponents;
pub mod harness;
pub mod seqtest;
pub mod yischeme;

pub use dmc::{channel_constants, Channel, ChannelConstants, ChannelError};
