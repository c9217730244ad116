//! Semiclassical numerics near glancing: a factored complex Airy engine, a
//! pseudodifferential calculus on the circle, Airy and WKB parametrices for
//! the model boundary problem, a collocation oracle, and disk spectra.

pub mod complex_airy;
pub mod config;
pub mod disk_spectra;
pub mod error;
pub mod glancing_parametrix;
pub mod model_oracle;
pub mod symbol_calculus;
pub mod wkb_parametrix;

pub use num_complex::Complex64 as C64;
