//! Numerical laboratory for effective stability near Diophantine invariant tori.

pub mod birkhoff;
pub mod diophantine;
pub mod dynamics;
pub mod lab;
pub mod series;
pub mod steepness;

pub use series::{ActionPolynomial, FourierTaylorSeries, MultiIndexPair, SeriesError};
