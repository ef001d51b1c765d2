//! A desk-scale laboratory for collaborative-perception security.

pub mod attacks;
pub mod autodiff;
pub mod benchgen;
pub mod checkpoint;
pub mod cli;
pub mod cpsim;
pub mod error;
pub mod eval;
pub mod guard;
pub mod nn;

pub use error::{Error, Result};
