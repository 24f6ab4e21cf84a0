//! Constellation design and link simulation for DC-informative optical
//! OFDM, where the DC bin of an intensity-modulated OFDM frame carries
//! information jointly with a set of subcarriers.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod cli;
pub mod dco;
pub mod error;
pub mod fileio;
pub mod harness;
pub mod labeling;
pub mod model;
pub mod optimizer;
pub mod qfunc;
pub mod solver;
pub mod transform;

pub use error::{Error, Result};
