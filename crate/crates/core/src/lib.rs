//! Batch analysis of market-wide price and liquidity responses.
//!
//! The crate replays an order-flow event stream into per-stock books,
//! classifies trades by whether they share their bracketing quotes,
//! assembles generalized response matrices across the stock universe,
//! decomposes them with a one-sided Jacobi SVD, fits normal and
//! t location-scale densities to the singular-vector entries, and
//! compares factor-overlap structure against seeded random null models.
//!
//! Data-parallel stages run on rayon by default; building with
//! `--no-default-features` swaps in a sequential fallback with identical
//! output bytes.

pub mod classify;
pub mod error;
pub mod io;
pub mod linalg;
pub mod lob;
pub mod matrix;
pub mod overlap;
pub mod par;
pub mod response;
pub mod statfit;
pub mod symbols;
pub mod synth;

pub use error::{Error, Result};
pub use matrix::Matrix;
pub use symbols::{SymbolId, SymbolTable};
