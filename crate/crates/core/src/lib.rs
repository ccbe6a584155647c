//! Distributed stochastic approximation driven by broadcast gossip on digraphs.
//!
//! * [`graph`]: communication digraphs and strong connectivity.
//! * [`gossip`]: the random gossip matrices, their mean and stationary vector.
//! * [`models`]: per-agent observation models and step-size policies.
//! * [`engine`]: the AUC and ACU recursions and replicated simulation.
//! * [`ode`]: the limit ODE and its equilibrium.
//! * [`design`]: choosing clock probabilities or mixing weights for a target.
//! * [`rate`]: asymptotic covariance of the normalized error.
//! * [`cli`]: configuration files and the command-line front end.
//!
//! Nodes are 0-based in the API and 1-based in files, reports and messages.

pub mod cli;
pub mod design;
pub mod engine;
pub mod gossip;
pub mod graph;
pub mod linalg;
pub mod models;
pub mod ode;
pub mod rate;
pub mod streams;

pub use gossip::{GossipEvent, GossipParams, Variant};
pub use graph::Digraph;
