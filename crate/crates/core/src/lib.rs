//! Compositional recursive learner for modular arithmetic.
//!
//! A controller repeatedly picks a module (a reducer that collapses a
//! three-token window, or a translator that re-represents every token) and
//! where to apply it, until it halts with a single answer token. The
//! controller is trained with a clipped policy-gradient objective; the
//! modules are trained by backpropagating the answer likelihood through the
//! chain of modules the controller executed.

pub mod cli;
pub mod controller;
pub mod error;
pub mod mdp;
pub mod modules;
pub mod numeric;
pub mod problem;
pub mod training;

pub use error::{Error, Result};
