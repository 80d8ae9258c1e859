// Range checks are written `!(x >= 0.0)` on purpose so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod federation;
pub mod fft;
pub mod losses;
pub mod model;
pub mod spectrum;
pub mod timing;

pub use error::{Error, Result};
