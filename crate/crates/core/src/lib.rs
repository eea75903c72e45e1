//! Greedy expansions with prescribed coefficients in real Hilbert spaces.
//!
//! Elements are finitely supported vectors over a canonical orthonormal
//! basis ([`vector`]). A [`dictionary::Dictionary`] answers sup queries and
//! validates selections; [`greedy::run`] drives the weak greedy rule with a
//! prescribed coefficient schedule ([`sequences`]) and records a trace that
//! [`analysis`] can audit. [`counterexample`] builds the divergent expansion
//! for weakening parameters below one.
//!
//! All numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the scalar to `f64`.
//!
//! ```
//! use greedy_core::dictionary::Dictionary;
//! use greedy_core::greedy::{run, RunOptions, SelectionPolicy};
//! use greedy_core::sequences::{CoefficientSequence, Schedule, WeakeningSequence};
//! use greedy_core::vector::SparseVector;
//!
//! let f = SparseVector::from_dense(&[0.5, 0.25, 0.125]);
//! let schedule = Schedule::new(CoefficientSequence::harmonic(), WeakeningSequence::Constant(1.0));
//! let trace = run(&f, &Dictionary::symmetrized_onb(), &schedule, &SelectionPolicy::MaxGreedy, RunOptions::steps(10_000));
//! assert!(trace.final_residual_norm().unwrap() < 0.05);
//! ```

pub mod analysis;
pub mod counterexample;
pub mod dictionary;
pub mod greedy;
pub mod io;
pub mod scalar;
pub mod sequences;
pub mod vector;

pub use scalar::Scalar;

pub type Vector = vector::SparseVector<f64>;
pub type Dict = dictionary::Dictionary<f64>;
pub type Atom = dictionary::Atom<f64>;
pub type Matrix = dictionary::SquareMatrix<f64>;
pub type Coefficients = sequences::CoefficientSequence<f64>;
pub type Weakening = sequences::WeakeningSequence<f64>;
pub type Schedule = sequences::Schedule<f64>;
pub type Trace = greedy::Trace<f64>;
pub type StepRecord = greedy::StepRecord<f64>;
pub type Coherence = dictionary::CoherenceEstimate<f64>;
pub type Counterexample = counterexample::CounterexampleConfig<f64>;
