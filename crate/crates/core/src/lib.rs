//! Learning continuous time Bayesian networks (CTBNs) from fully observed
//! trajectories.
//!
//! A CTBN is a set of discrete variables, each evolving as a Markov process
//! whose intensity matrix is selected by the current values of its parents
//! in a (possibly cyclic) graph. This crate provides:
//!
//! - domain types and validation ([`model`], [`trajectory`]),
//! - sufficient statistics and parameter estimation ([`stats`], [`estimate`]),
//! - Bayesian and BIC structure scores ([`score`]),
//! - exhaustive and greedy structure search ([`search`]),
//! - amalgamation into a joint intensity matrix and S-map checks ([`amalgam`]),
//! - forward sampling and benchmark networks ([`sampler`]),
//! - a time-sliced DBN baseline ([`dbn`]) and the comparison experiments
//!   ([`experiment`]).
//!
//! Data-parallel loops (trajectory sampling, per-variable search, experiment
//! grids) run on rayon when the default `parallel` feature is enabled and
//! fall back to plain iterators otherwise. Results are identical either way.

pub mod amalgam;
pub mod dbn;
pub mod error;
pub mod estimate;
pub mod experiment;
pub mod model;
pub mod par;
pub mod sampler;
pub mod score;
pub mod search;
pub mod stats;
pub mod trajectory;

pub use error::{CtbnError, Result};
pub use model::{Cim, CtbnModel, Graph, VariableSpec};
pub use trajectory::{Dataset, Event, Trajectory};
