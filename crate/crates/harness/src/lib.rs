//! Scenario runner, plaintext oracle, audits and benchmark for the ppls
//! roles.

pub mod audit;
pub mod bench;
pub mod config;
pub mod fixtures;
pub mod godview;
pub mod sim;
