//! Brute-force reference implementations used to cross-check
//! `coreset-core`. Not part of the library surface; nothing here is shared
//! with the production code paths it checks.

#![allow(clippy::needless_range_loop)]

pub mod check;
pub mod fuzz;
pub mod score;
pub mod select;

pub use check::{run_check, CheckReport};
pub use score::oracle_score;
pub use select::{oracle_select, OracleEntry, OracleError, OracleSelection};
