//! Exact-arithmetic core for simulating networks of bioelectric cells.
//!
//! Cells sit on the vertices of an undirected graph and hold a rational
//! membrane potential. Execution proceeds in synchronous rounds: cells
//! probabilistically fire signalling events, ligands released by firing
//! cells bind to neighboring membranes, membrane functions and a gradient
//! force adjust each potential, and cells whose potential crosses an
//! expression threshold irreversibly express and go quiescent.
//!
//! All simulation arithmetic is exact: potentials, offsets, and firing
//! probabilities are arbitrary-precision rationals, and the randomized
//! engine draws dyadic uniforms so that every trajectory is replayable
//! bit for bit from a seed.

#![cfg_attr(not(test), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod cell;
pub mod cm;
pub mod engine;
pub mod enumerate;
pub mod library;
pub mod rational;
pub mod topology;

pub use cell::{
    apply_membrane, evaluate_firing, gradient_delta, validate_cell, BioelectricEvent,
    CellDefinition, CountPredicate, Direction, ExpressionRule, FiringFunction, GradientMode,
    LigandId, LigandTable, MembraneCondition, MembraneFunction, MembraneRule,
};
pub use engine::{
    replay, run, step, CellRound, CellStatus, ExecutionMode, ExpressionRecord, FiringDecider,
    RoundReport, SeededDecider, StopCondition, StopReason, SystemConfig, SystemState, Trace,
    RNG_ALGORITHM,
};
pub use enumerate::{enumerate, Enumeration};
pub use rational::Rational;
pub use topology::Topology;
