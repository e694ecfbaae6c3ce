//! Core library for the incbench CSS4 pipeline.
//!
//! The crate is organised around the stages of the benchmark:
//!
//! - [`bitio`] — packed bit and trit strings, the ternary-to-binary
//!   morphism, the Champernowne baseline, base-(n-1) digit extraction,
//!   and the `.rbf`/`.rtf` file formats.
//! - [`numth`] — Jacobi symbol, modular exponentiation, the
//!   Solovay-Strassen witness predicate, Euler-liar enumeration,
//!   Carmichael detection, and the probabilistic primality test.
//! - [`sources`] — deterministic reference bit sources (MT19937,
//!   SHA3-256 hash counter, Champernowne, recorded files, and the
//!   qutrit simulator).
//! - [`qsim`] — simulation of the qutrit measurement protocols: state
//!   vectors, the S_x measurement unitary and its decomposition,
//!   Born-rule sampling, readout confusion, and the generation loop.
//! - [`csstest`] — the CSS4 test itself: per-composite geometry, the
//!   Z-predicate, and the sliding-offset Z-liar scanner.
//! - [`stats`] — two-sample Kolmogorov-Smirnov testing and report
//!   aggregation.

pub mod bitio;
pub mod csstest;
pub mod numth;
pub mod qsim;
pub mod sources;
pub mod stats;
