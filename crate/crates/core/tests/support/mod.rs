//! Checks shared by the integration tests and the acceptance target.
#![allow(dead_code)]

pub mod gradients;
pub mod oracles;
