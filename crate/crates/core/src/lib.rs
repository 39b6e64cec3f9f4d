//! Once-reinforced biased random walks on trees.
//!
//! A MAD walk ("maximum acts differently") steps from a vertex to its parent
//! with weight 1, to a previously crossed child edge with weight `u1` and to
//! a fresh child edge with weight `u0`. This crate provides:
//!
//! * [`tree`]: lazily generated regular and Galton-Watson trees,
//! * [`walk`]: the transition kernel and reinforcement parameterizations,
//! * [`formulas`]: closed-form hitting probabilities, the phase criterion,
//!   one-dimensional speeds and coupling probabilities,
//! * [`oracle`]: exact linear-solve and enumeration ground truth,
//! * [`rubin`]: the exponential-clock construction, extension walks and
//!   the green branching process,
//! * [`coupling`]: the three-walk coupling used to compare speeds,
//! * [`stats`]: single-walk estimators,
//! * [`cli`]: the experiment runner behind the `madwalk` binary.

pub mod cli;
pub mod coupling;
pub mod error;
pub mod estimate;
mod explored;
pub mod formulas;
pub mod oracle;
pub mod par;
pub mod rng;
pub mod rubin;
pub mod stats;
pub mod tree;
pub mod walk;

pub use error::{Error, Result};
pub use tree::{LazyTree, OffspringLaw, VertexId};
pub use walk::{Configuration, Walk, WalkParams};
