//! Live event fan-out. Each subscriber owns a bounded queue; a subscriber
//! whose queue is full is dropped instead of slowing the publisher.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use breathwatch_core::domain::NodeId;
use breathwatch_core::rules::{AlertEvent, SampleRecord, ThresholdProfile};
use serde::{Deserialize, Serialize};
use tokio::sync::mpsc;

/// Events a subscriber may buffer before it is disconnected.
pub const SUBSCRIBER_BUFFER: usize = 1000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum StreamEvent {
    Sample { record: SampleRecord },
    AlertRaised { alert: AlertEvent },
    AlertCleared { alert: AlertEvent },
    ProfileChanged { node_id: NodeId, profile: ThresholdProfile },
}

impl StreamEvent {
    pub fn node_id(&self) -> NodeId {
        match self {
            StreamEvent::Sample { record } => record.sample.node_id,
            StreamEvent::AlertRaised { alert } | StreamEvent::AlertCleared { alert } => alert.node_id,
            StreamEvent::ProfileChanged { node_id, .. } => *node_id,
        }
    }
}

struct Subscriber {
    id: u64,
    filter: Option<NodeId>,
    tx: mpsc::Sender<StreamEvent>,
}

#[derive(Default)]
pub struct EventHub {
    subscribers: Mutex<Vec<Subscriber>>,
    next_id: AtomicU64,
    dropped_slow: AtomicU64,
    published: AtomicU64,
}

pub struct Subscription {
    pub id: u64,
    pub events: mpsc::Receiver<StreamEvent>,
}

impl EventHub {
    pub fn new() -> EventHub {
        EventHub::default()
    }

    pub fn subscribe(&self, filter: Option<NodeId>) -> Subscription {
        self.subscribe_with_capacity(filter, SUBSCRIBER_BUFFER)
    }

    pub fn subscribe_with_capacity(&self, filter: Option<NodeId>, capacity: usize) -> Subscription {
        let (tx, rx) = mpsc::channel(capacity.max(1));
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        self.subscribers
            .lock()
            .expect("hub lock")
            .push(Subscriber { id, filter, tx });
        Subscription { id, events: rx }
    }

    /// Never blocks. Full or closed subscribers are removed.
    pub fn publish(&self, event: StreamEvent) {
        self.published.fetch_add(1, Ordering::Relaxed);
        let node = event.node_id();
        let mut subs = self.subscribers.lock().expect("hub lock");
        subs.retain(|s| {
            if s.filter.is_some_and(|f| f != node) {
                return !s.tx.is_closed();
            }
            match s.tx.try_send(event.clone()) {
                Ok(()) => true,
                Err(mpsc::error::TrySendError::Full(_)) => {
                    self.dropped_slow.fetch_add(1, Ordering::Relaxed);
                    tracing::warn!(subscriber = s.id, "stream subscriber fell behind, disconnecting");
                    false
                }
                Err(mpsc::error::TrySendError::Closed(_)) => false,
            }
        });
    }

    /// Ends every subscription, e.g. on shutdown.
    pub fn close_all(&self) {
        self.subscribers.lock().expect("hub lock").clear();
    }

    pub fn subscriber_count(&self) -> usize {
        let mut subs = self.subscribers.lock().expect("hub lock");
        subs.retain(|s| !s.tx.is_closed());
        subs.len()
    }

    /// Subscribers disconnected for falling behind.
    pub fn slow_disconnects(&self) -> u64 {
        self.dropped_slow.load(Ordering::Relaxed)
    }

    pub fn published(&self) -> u64 {
        self.published.load(Ordering::Relaxed)
    }
}
