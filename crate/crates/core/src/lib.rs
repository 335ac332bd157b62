//! Simulator for adaptive resource materialization of serverless
//! applications on a disaggregated-memory cluster.

pub mod cluster;
pub mod experiment;
pub mod graph;
pub mod history;
pub mod scheduler;
pub mod sim;
pub mod sizing;
pub mod units;
pub mod workload;
