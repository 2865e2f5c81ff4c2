//! Cooperative DQN agents with private local layers and one shared global
//! layer, kept in sync through encrypted weight deltas relayed by a keyless
//! forwarder.

pub mod blackboard;
pub mod dqn;
pub mod envs;
pub mod experiment;
pub mod federation;
pub mod nn;
