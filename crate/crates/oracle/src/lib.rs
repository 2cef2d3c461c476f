//! Slow, obviously-correct reference computations.
//!
//! Nothing here shares code with `gnhmm-core`; the test suites compare the
//! fast implementations against these.

pub mod dft;
pub mod grid;
pub mod hmm;
pub mod quad;
pub mod stats;
