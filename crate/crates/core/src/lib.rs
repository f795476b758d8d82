//! Sparse adversarial action attacks on cooperative multi-agent Q-learning
//! policies.
//!
//! The crate trains base team policies (tabular, VDN, QMIX-style), turns an
//! environment plus a frozen base policy into the attacker's regularized MDP,
//! learns optimal sparse attackers, and checks them against exact
//! dynamic-programming oracles and rule-based baselines.

pub mod approx;
pub mod attack;
pub mod baselines;
pub mod env;
pub mod error;
pub mod harness;
pub mod learners;
pub mod mmdp;
pub mod seeding;

pub use error::{Error, Result};
pub use mmdp::{EnvState, Environment, JointAction, MmdpSpec, Trajectory, Transition};
