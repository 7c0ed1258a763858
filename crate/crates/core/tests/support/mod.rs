//! Checks shared by the integration tests and the acceptance suite.
#![allow(dead_code)]

pub mod cost;
pub mod solvers;
pub mod training;
