//! Two-stage stochastic programming with Benders decomposition and a
//! reinforcement-learned cut-selection policy.
//!
//! The crate is self-contained: it ships its own LP ([`lp`]) and MILP
//! ([`milp`]) solvers, the EV charging-station benchmark model ([`model`]),
//! the Benders loop ([`benders`]), the cut features fed to the policy
//! ([`features`]), the policy network ([`policy`]) and the REINFORCE trainer
//! ([`train`]).

pub mod linalg;
pub mod lp;
pub mod milp;
pub mod model;
pub mod benders;
pub mod features;
pub mod policy;
pub mod train;
