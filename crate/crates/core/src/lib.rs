//! Adaptive logit learning in finite normal-form games.
//!
//! Players keep per-action payoff perceptions, choose actions through a logit
//! (softmax) rule, and average each received payoff into the perception of the
//! action just played. The crate simulates that process and its baseline
//! variant, solves and integrates the associated mean dynamics, and analyses
//! the spectrum of their Jacobians at rest points.

pub mod builtin;
pub mod dynamics;
pub mod error;
pub mod game;
pub mod io;
pub mod linalg;
pub mod markov;
pub mod ode;
pub mod rules;
pub mod simulate;
pub mod traffic;

pub use error::{Error, Result};
pub use game::{Game, MixedProfile, PureProfile};
pub use rules::{DecisionRule, LogitRule};
