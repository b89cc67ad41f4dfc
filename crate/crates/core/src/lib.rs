//! Scheduling engine and Monte Carlo simulator for large-scale EV charging
//! posed as a restless multi-armed bandit.
//!
//! * [`model`]: the facility MDP (charger states, costs, arrivals, rewards).
//! * [`index`]: Whittle indexes, by closed form, by an exact piecewise-linear
//!   recursion and by a value-iteration/bisection oracle.
//! * [`policies`]: Whittle (with optional LLLP interchange), EDF, LLF and
//!   valley filling.
//! * [`bound`]: the relaxed constrained-MDP upper bound.
//! * [`costfit`]: fitting a Markov cost chain to a price trace.
//! * [`sim`]: seeded episodes, paired comparisons and a brute-force joint DP.
//! * [`config`]: the JSON run configuration used by the command-line tool.

pub mod error;
pub mod model;
pub mod pwl;
pub mod index;
pub mod flow;
pub mod policies;
pub mod bound;
pub mod costfit;
pub mod sim;
pub mod config;

pub use error::{Error, Result};
