//! Telemetry gateway: decodes node byte streams, stamps and classifies
//! samples, keeps the append-only store and alert book, and serves the HTTP
//! API and live event stream.

pub mod clock;
pub mod config;
pub mod http;
pub mod hub;
pub mod server;
pub mod service;
pub mod store;

pub use clock::{Clock, ManualClock, Stamping, SystemClock};
pub use config::GatewayConfig;
pub use hub::{EventHub, StreamEvent, Subscription, SUBSCRIBER_BUFFER};
pub use server::{start, start_with, RunningGateway, ServeError};
pub use service::{
    AlertFilter, AlertStateFilter, Connection, Counters, Diagnostics, FeedReport, Gateway, GatewayError,
    GatewayOptions, History, HistoryBucket,
};
pub use store::{AlertLogEntry, Store, StoreError};
