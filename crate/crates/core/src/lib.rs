//! Semi-centralized resource allocation for multi-hop IAB networks.

pub mod batch;
pub mod bench;
pub mod config;
pub mod controller;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod mac;
pub mod phy;
pub mod policies;
pub mod sim;
pub mod tmwm;
pub mod topology;
