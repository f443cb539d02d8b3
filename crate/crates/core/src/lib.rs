//! Degradation-robust audio fingerprinting and catalog search.

pub mod audio;
mod binio;
pub mod catalog;
pub mod degrade;
pub mod error;
pub mod evaluate;
pub mod fingerprint;
pub mod hashing;
pub mod onset;
pub mod print;
pub mod reduction;
pub mod search;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
