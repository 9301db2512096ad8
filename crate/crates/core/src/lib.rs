//! Online trajectory planning over a spatial-temporal graph.
//!
//! Each planning step builds a graph from the ego, nearby actors and a set of
//! reachable virtual nodes, runs a graph attention network over it and reads
//! the next Frenet position as a convex combination of the virtual nodes. The
//! network parameters are trained online by descending a potential-field cost
//! through the whole rollout.

pub mod baseline;
pub mod batch;
pub mod behavior;
pub mod config;
pub mod diff;
pub mod frenet;
pub mod gat;
pub mod graph;
pub mod metrics;
pub mod planner;
pub mod potential;
pub mod scenario;
