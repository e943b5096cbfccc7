//! Brute-force geometry oracles shared by the integration tests.
#![allow(unused_imports)]

pub use binpack_core::oracle::*;
