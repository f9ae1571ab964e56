//! Tiered simulator and verifier for the Skelet #17 counter process.
//!
//! | tier | unit of work                         | module      |
//! |------|--------------------------------------|-------------|
//! | T0   | one rewrite rule                     | [`machine`] |
//! | T1   | one Increment run / one empty transit| [`accel`]   |
//! | T2   | one `N'` cascade on a rooted cursor  | [`accel`]   |
//! | T3   | one odd-valuation segment `m -> m'`  | [`epoch`]   |
//!
//! Every tier is checked against the one below it by [`verify`].

pub mod accel;
pub mod epoch;
pub mod error;
pub mod machine;
pub mod numerics;
pub mod verify;

pub use error::{Error, Result};
pub use machine::{RuleKind, State, StateVars};
