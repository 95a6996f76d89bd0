// SPDX-License-Identifier: MIT OR Apache-2.0

#![deny(unsafe_code)]

pub mod analysis;
pub mod cli;
pub mod error;
pub mod experiment;
pub mod intervention;
pub mod model;
pub mod numeric;
pub mod rng;
pub mod tasks;
pub mod train;

pub use error::{LabError, Result};
