//! Sign-changing solutions of `−Δu = f(u)` on the unit disk with critical
//! exponential growth, built from mountain-pass solutions on angular sectors
//! and odd reflection across the sector sides.

pub mod assembly;
pub mod config;
pub mod error;
pub mod export;
pub mod fem;
pub mod geometry;
pub mod moser;
pub mod mpa;
pub mod nonlinearity;
pub mod pipeline;
pub mod quadrature;

pub use error::{Error, Result};
