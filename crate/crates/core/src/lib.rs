// SPDX-License-Identifier: MIT OR Apache-2.0

pub mod attribution;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod lm;
pub mod model;
pub mod patching;
pub mod report;
pub mod uncertainty;
pub mod util;

pub use error::{LabError, Result};
