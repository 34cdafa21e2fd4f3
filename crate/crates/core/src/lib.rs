//! Core of the breathwatch monitoring pipeline: fixed-point values, the
//! domain model, the telemetry wire format, severity rules and alerting,
//! hourly analytics, and the virtual sensor node.

pub mod analytics;
pub mod corpus;
pub mod domain;
pub mod fixed;
pub mod rules;
pub mod sim;
pub mod wire;
