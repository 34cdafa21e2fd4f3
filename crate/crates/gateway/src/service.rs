//! Node sessions, ingestion, the alert book and the query surface shared by
//! the TCP listener and the HTTP API.
//!
//! Every frame for a node is processed under that node's session lock, in
//! this order: validate, stamp, classify, append record, step alert state,
//! append alert transitions, publish. A crash can therefore lose at most the
//! alert-log lines of the last record, and [`Gateway::open`] rebuilds those
//! by replaying the record log.

use std::collections::{BTreeMap, HashSet, VecDeque};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use breathwatch_core::analytics::{aggregate_hourly, present, HourBuckets};
use breathwatch_core::domain::{validate_sample, Millis, NodeId, Parameter, Violation};
use breathwatch_core::fixed::Centi;
use breathwatch_core::rules::{
    default_profile, Acknowledgement, AlertEvent, AlertTransition, HysteresisConfig, NodeAlertState,
    ProfileError, SampleRecord, ThresholdProfile, ADULT_DEFAULT_AGE,
};
use breathwatch_core::wire::{DecodeFault, Decoder};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::{Clock, Stamping};
use crate::hub::{EventHub, StreamEvent, Subscription};
use crate::store::{AlertLogEntry, RecoveryReport, Store, StoreError};

/// Diagnostic messages kept for the diagnostics endpoint.
const MESSAGE_HISTORY: usize = 256;

#[derive(Debug, Clone)]
pub struct GatewayOptions {
    pub store_dir: PathBuf,
    pub hysteresis: HysteresisConfig,
    pub stamping: Stamping,
}

impl GatewayOptions {
    pub fn new(store_dir: impl Into<PathBuf>) -> GatewayOptions {
        GatewayOptions {
            store_dir: store_dir.into(),
            hysteresis: HysteresisConfig::default(),
            stamping: Stamping::Arrival,
        }
    }
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("invalid hysteresis configuration")]
    Hysteresis,
}

#[derive(Debug, Error)]
pub enum QueryError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("range start {from} is after end {to}")]
    BadRange { from: Millis, to: Millis },
    #[error("step must be positive")]
    BadStep,
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Error)]
pub enum ThresholdError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error(transparent)]
    Invalid(#[from] ProfileError),
    #[error("profile version is {current}, expected {expected}")]
    VersionConflict { current: u64, expected: u64 },
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Error)]
pub enum AckError {
    #[error("unknown alert {0}")]
    UnknownAlert(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct DiagnosticMessage {
    pub at: Millis,
    pub node_id: Option<NodeId>,
    pub connection: Option<u64>,
    pub message: String,
}

#[derive(Default)]
struct Totals {
    bytes_received: AtomicU64,
    frames_decoded: AtomicU64,
    records_persisted: AtomicU64,
    validation_failures: AtomicU64,
    decode_faults: AtomicU64,
    crc_failures: AtomicU64,
    discarded_bytes: AtomicU64,
    frames_after_close: AtomicU64,
}

fn bump(counter: &AtomicU64, by: u64) {
    counter.fetch_add(by, Ordering::Relaxed);
}

struct NodeSession {
    node_id: NodeId,
    owner: Option<(u64, Arc<AtomicBool>)>,
    /// The owning connection has not delivered a frame for this node yet.
    fresh: bool,
    last_seq: Option<u16>,
    last_received_at: Option<Millis>,
    gaps: u64,
    out_of_order: u64,
    restarts: u64,
    validation_failures: u64,
    decode_faults: u64,
    records: u64,
    profile: ThresholdProfile,
    alerts: NodeAlertState,
}

impl NodeSession {
    fn new(node_id: NodeId, profile: ThresholdProfile) -> NodeSession {
        NodeSession {
            node_id,
            owner: None,
            fresh: true,
            last_seq: None,
            last_received_at: None,
            gaps: 0,
            out_of_order: 0,
            restarts: 0,
            validation_failures: 0,
            decode_faults: 0,
            records: 0,
            profile,
            alerts: NodeAlertState::new(node_id),
        }
    }
}

/// How a frame's sequence number relates to the session's last one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SeqStep {
    First,
    Forward(u16),
    Restart,
    OutOfOrder,
}

fn seq_step(last: Option<u16>, seq: u16, fresh_connection: bool) -> SeqStep {
    let Some(last) = last else {
        return SeqStep::First;
    };
    let delta = seq.wrapping_sub(last);
    if delta != 0 && delta < 0x8000 {
        SeqStep::Forward(delta)
    } else if fresh_connection {
        SeqStep::Restart
    } else {
        SeqStep::OutOfOrder
    }
}

impl NodeSession {
    /// Updates sequence bookkeeping shared by live ingestion and recovery.
    fn track_seq(&mut self, step: SeqStep, seq: u16) {
        match step {
            SeqStep::First => self.last_seq = Some(seq),
            SeqStep::Forward(d) => {
                self.gaps += u64::from(d) - 1;
                self.last_seq = Some(seq);
            }
            SeqStep::Restart => {
                self.restarts += 1;
                self.alerts.reset_sequence();
                self.last_seq = Some(seq);
            }
            SeqStep::OutOfOrder => self.out_of_order += 1,
        }
    }
}

#[derive(Default)]
struct AlertBook {
    order: Vec<String>,
    by_id: BTreeMap<String, AlertEvent>,
}

impl AlertBook {
    fn apply(&mut self, entry: &AlertLogEntry) {
        match entry {
            AlertLogEntry::Raised { alert } => {
                if !self.by_id.contains_key(&alert.alert_id) {
                    self.order.push(alert.alert_id.clone());
                }
                self.by_id.insert(alert.alert_id.clone(), alert.clone());
            }
            AlertLogEntry::Cleared { alert } => {
                if let Some(existing) = self.by_id.get_mut(&alert.alert_id) {
                    existing.cleared_at = alert.cleared_at;
                } else {
                    self.order.push(alert.alert_id.clone());
                    self.by_id.insert(alert.alert_id.clone(), alert.clone());
                }
            }
            AlertLogEntry::Acked { alert_id, ack } => {
                if let Some(existing) = self.by_id.get_mut(alert_id) {
                    existing.acknowledged.get_or_insert_with(|| ack.clone());
                }
            }
        }
    }

    /// Log entry for a transition, carrying any acknowledgement already held.
    fn entry_for(&self, transition: &AlertTransition) -> AlertLogEntry {
        match transition {
            AlertTransition::Raised(alert) => AlertLogEntry::Raised { alert: alert.clone() },
            AlertTransition::Cleared(alert) => {
                let mut alert = alert.clone();
                if let Some(existing) = self.by_id.get(&alert.alert_id) {
                    alert.acknowledged = existing.acknowledged.clone();
                }
                AlertLogEntry::Cleared { alert }
            }
        }
    }

    fn is_recorded(&self, transition: &AlertTransition) -> bool {
        match transition {
            AlertTransition::Raised(a) => self.by_id.contains_key(&a.alert_id),
            AlertTransition::Cleared(a) => self.by_id.get(&a.alert_id).is_some_and(|e| e.cleared_at.is_some()),
        }
    }
}

struct ConnectionStats {
    id: u64,
    peer: Option<String>,
    opened_at: Millis,
    open: AtomicBool,
    bytes: AtomicU64,
    frames: AtomicU64,
    decode_faults: AtomicU64,
    nodes: Mutex<Vec<NodeId>>,
}

struct Inner {
    options: GatewayOptions,
    clock: Arc<dyn Clock>,
    store: Store,
    hub: EventHub,
    sessions: Mutex<BTreeMap<NodeId, Arc<Mutex<NodeSession>>>>,
    alerts: Mutex<AlertBook>,
    connections: Mutex<BTreeMap<u64, Arc<ConnectionStats>>>,
    messages: Mutex<VecDeque<DiagnosticMessage>>,
    next_connection: AtomicU64,
    totals: Totals,
    recovery: RecoveryView,
}

/// Handle to a running gateway. Cheap to clone.
#[derive(Clone)]
pub struct Gateway {
    inner: Arc<Inner>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct RecoveryView {
    #[serde(flatten)]
    pub store: RecoveryReport,
    /// Alert-log lines rebuilt from the record log.
    pub alert_entries_rebuilt: u64,
}

/// Outcome of one [`Connection::feed`] call.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FeedReport {
    pub records: usize,
    pub validation_failures: usize,
    pub decode_faults: usize,
    /// A newer connection took over one of this connection's nodes.
    pub closed: bool,
}

/// One ingest connection: owns a decoder and claims the nodes it carries.
pub struct Connection {
    gateway: Gateway,
    stats: Arc<ConnectionStats>,
    decoder: Decoder,
    closed: Arc<AtomicBool>,
    claimed: Vec<NodeId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlertStateFilter {
    Open,
    Cleared,
    Acked,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AlertFilter {
    pub state: Option<AlertStateFilter>,
    pub node: Option<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeSummary {
    pub node_id: NodeId,
    pub connected: bool,
    pub connection: Option<u64>,
    pub last_seq: Option<u16>,
    pub last_received_at: Option<Millis>,
    /// Milliseconds since the last record, on the gateway clock.
    pub age_ms: Option<Millis>,
    pub records: u64,
    pub profile_version: u64,
    pub open_alerts: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeDiagnostics {
    pub node_id: NodeId,
    pub records: u64,
    pub sequence_gaps: u64,
    pub out_of_order: u64,
    pub restarts: u64,
    pub validation_failures: u64,
    pub decode_faults: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConnectionDiagnostics {
    pub id: u64,
    pub peer: Option<String>,
    pub opened_at: Millis,
    pub open: bool,
    pub bytes: u64,
    pub frames: u64,
    pub decode_faults: u64,
    pub nodes: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub bytes_received: u64,
    pub frames_decoded: u64,
    pub records_persisted: u64,
    pub validation_failures: u64,
    pub decode_faults: u64,
    pub crc_failures: u64,
    pub discarded_bytes: u64,
    /// Frames decoded on a connection after it lost its node to a newer one.
    pub frames_after_close: u64,
    pub stream_subscribers: usize,
    pub stream_slow_disconnects: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostics {
    pub counters: Counters,
    pub nodes: Vec<NodeDiagnostics>,
    pub connections: Vec<ConnectionDiagnostics>,
    pub messages: Vec<DiagnosticMessage>,
    pub recovery: RecoveryView,
}

/// Down-sampled history bucket. Means are presented with the same rounding
/// as the report tables.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryBucket {
    pub index: i64,
    pub start: Millis,
    pub count: u64,
    pub body_temp: Centi,
    pub ambient_temp: Centi,
    pub humidity: Centi,
    pub air_quality: Centi,
    pub heart_rate: Centi,
}

impl HistoryBucket {
    pub fn value(&self, parameter: Parameter) -> Centi {
        match parameter {
            Parameter::BodyTemp => self.body_temp,
            Parameter::AmbientTemp => self.ambient_temp,
            Parameter::Humidity => self.humidity,
            Parameter::AirQuality => self.air_quality,
            Parameter::HeartRate => self.heart_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(untagged)]
pub enum History {
    Records(Vec<SampleRecord>),
    Buckets(Vec<HistoryBucket>),
}

fn violations_text(violations: &[Violation]) -> String {
    violations.iter().map(|v| v.message.as_str()).collect::<Vec<_>>().join(", ")
}

impl Gateway {
    /// Opens the store, recovers sessions and alert state, and returns a
    /// gateway ready for connections.
    pub fn open(options: GatewayOptions, clock: Arc<dyn Clock>) -> Result<Gateway, GatewayError> {
        options.hysteresis.validate().map_err(|_| GatewayError::Hysteresis)?;
        let store = Store::open(&options.store_dir)?;
        let mut book = AlertBook::default();
        for entry in store.alert_log()? {
            book.apply(&entry);
        }
        let mut sessions = BTreeMap::new();
        let mut rebuilt = 0u64;
        for node in store.node_ids() {
            let profile = match store.profiles(node)?.pop() {
                Some(p) => p,
                None => {
                    let p = default_profile(ADULT_DEFAULT_AGE);
                    store.append_profile(node, &p)?;
                    p
                }
            };
            let mut session = NodeSession::new(node, profile);
            let restarts: HashSet<Millis> = store.restarts(node)?.into_iter().collect();
            for record in store.all_records(node)? {
                let at = record.sample.received_at;
                let step = if restarts.contains(&at) {
                    SeqStep::Restart
                } else {
                    seq_step(session.last_seq, record.sample.seq, false)
                };
                session.track_seq(step, record.sample.seq);
                session.last_received_at = Some(at);
                session.records += 1;
                for t in session.alerts.step(&record, options.hysteresis, at).transitions {
                    if !book.is_recorded(&t) {
                        let entry = book.entry_for(&t);
                        store.append_alert(&entry)?;
                        book.apply(&entry);
                        rebuilt += 1;
                    }
                }
            }
            sessions.insert(node, Arc::new(Mutex::new(session)));
        }
        let recovery = RecoveryView {
            store: store.recovery().clone(),
            alert_entries_rebuilt: rebuilt,
        };
        if recovery.store.records > 0 || recovery.store.truncated_bytes > 0 {
            tracing::info!(
                nodes = recovery.store.nodes,
                records = recovery.store.records,
                truncated_bytes = recovery.store.truncated_bytes,
                alert_entries_rebuilt = rebuilt,
                "recovered store"
            );
        }
        Ok(Gateway {
            inner: Arc::new(Inner {
                options,
                clock,
                store,
                hub: EventHub::new(),
                sessions: Mutex::new(sessions),
                alerts: Mutex::new(book),
                connections: Mutex::new(BTreeMap::new()),
                messages: Mutex::new(VecDeque::new()),
                next_connection: AtomicU64::new(1),
                totals: Totals::default(),
                recovery,
            }),
        })
    }

    pub fn options(&self) -> &GatewayOptions {
        &self.inner.options
    }

    pub fn now(&self) -> Millis {
        self.inner.clock.now_ms()
    }

    pub fn store(&self) -> &Store {
        &self.inner.store
    }

    pub fn hub(&self) -> &EventHub {
        &self.inner.hub
    }

    pub fn subscribe(&self, node: Option<NodeId>) -> Subscription {
        self.inner.hub.subscribe(node)
    }

    pub fn connect(&self, peer: Option<String>) -> Connection {
        let id = self.inner.next_connection.fetch_add(1, Ordering::Relaxed);
        let stats = Arc::new(ConnectionStats {
            id,
            peer,
            opened_at: self.now(),
            open: AtomicBool::new(true),
            bytes: AtomicU64::new(0),
            frames: AtomicU64::new(0),
            decode_faults: AtomicU64::new(0),
            nodes: Mutex::new(Vec::new()),
        });
        self.inner
            .connections
            .lock()
            .expect("connections lock")
            .insert(id, stats.clone());
        Connection {
            gateway: self.clone(),
            stats,
            decoder: Decoder::new(),
            closed: Arc::new(AtomicBool::new(false)),
            claimed: Vec::new(),
        }
    }

    fn note(&self, node_id: Option<NodeId>, connection: Option<u64>, message: String) {
        tracing::info!(node = ?node_id, connection, "{message}");
        let mut messages = self.inner.messages.lock().expect("messages lock");
        if messages.len() == MESSAGE_HISTORY {
            messages.pop_front();
        }
        messages.push_back(DiagnosticMessage {
            at: self.now(),
            node_id,
            connection,
            message,
        });
    }

    fn session(&self, node: NodeId) -> Option<Arc<Mutex<NodeSession>>> {
        self.inner.sessions.lock().expect("sessions lock").get(&node).cloned()
    }

    fn session_or_register(&self, node: NodeId) -> Result<Arc<Mutex<NodeSession>>, StoreError> {
        let mut sessions = self.inner.sessions.lock().expect("sessions lock");
        if let Some(s) = sessions.get(&node) {
            return Ok(s.clone());
        }
        let profile = default_profile(ADULT_DEFAULT_AGE);
        self.inner.store.append_profile(node, &profile)?;
        let session = Arc::new(Mutex::new(NodeSession::new(node, profile)));
        sessions.insert(node, session.clone());
        drop(sessions);
        self.note(Some(node), None, format!("node {node} registered with adult default thresholds"));
        Ok(session)
    }

    pub fn node_ids(&self) -> Vec<NodeId> {
        self.inner.sessions.lock().expect("sessions lock").keys().copied().collect()
    }

    pub fn nodes(&self) -> Vec<NodeSummary> {
        let now = self.now();
        let sessions: Vec<_> = self.inner.sessions.lock().expect("sessions lock").values().cloned().collect();
        sessions
            .iter()
            .map(|s| {
                let s = s.lock().expect("session lock");
                let owner = s.owner.as_ref().filter(|(_, closed)| !closed.load(Ordering::SeqCst));
                NodeSummary {
                    node_id: s.node_id,
                    connected: owner.is_some(),
                    connection: owner.map(|(id, _)| *id),
                    last_seq: s.last_seq,
                    last_received_at: s.last_received_at,
                    age_ms: s.last_received_at.map(|t| now - t),
                    records: s.records,
                    profile_version: s.profile.profile_version,
                    open_alerts: s.alerts.open_alerts().count(),
                }
            })
            .collect()
    }

    pub fn latest(&self, node: NodeId) -> Result<Option<SampleRecord>, QueryError> {
        if self.session(node).is_none() {
            return Err(QueryError::UnknownNode(node));
        }
        Ok(self.inner.store.latest(node))
    }

    /// Records with `from <= received_at < to`, or their means per `step`
    /// milliseconds counted from `from`.
    pub fn history(&self, node: NodeId, from: Millis, to: Millis, step: Option<i64>) -> Result<History, QueryError> {
        if self.session(node).is_none() {
            return Err(QueryError::UnknownNode(node));
        }
        if from > to {
            return Err(QueryError::BadRange { from, to });
        }
        let records = self.inner.store.range(node, from, to)?;
        let Some(step) = step else {
            return Ok(History::Records(records));
        };
        if step <= 0 {
            return Err(QueryError::BadStep);
        }
        let buckets = HourBuckets {
            origin: from,
            width_ms: step,
        };
        let aggregates = aggregate_hourly(records.iter().map(|r| &r.sample), buckets)
            .expect("store returns records in time order");
        Ok(History::Buckets(
            aggregates
                .into_iter()
                .map(|a| {
                    let v = |p| present(p, a.mean(p));
                    HistoryBucket {
                        index: a.hour,
                        start: buckets.start(a.hour),
                        count: a.count,
                        body_temp: v(Parameter::BodyTemp),
                        ambient_temp: v(Parameter::AmbientTemp),
                        humidity: v(Parameter::Humidity),
                        air_quality: v(Parameter::AirQuality),
                        heart_rate: v(Parameter::HeartRate),
                    }
                })
                .collect(),
        ))
    }

    pub fn thresholds(&self, node: NodeId) -> Option<ThresholdProfile> {
        self.session(node).map(|s| s.lock().expect("session lock").profile.clone())
    }

    /// Stores a new profile version for the node. It applies from the next
    /// sample onward.
    pub fn put_thresholds(
        &self,
        node: NodeId,
        mut profile: ThresholdProfile,
        expected_version: Option<u64>,
    ) -> Result<ThresholdProfile, ThresholdError> {
        let session = self.session(node).ok_or(ThresholdError::UnknownNode(node))?;
        profile.validate()?;
        let mut s = session.lock().expect("session lock");
        let current = s.profile.profile_version;
        if let Some(expected) = expected_version {
            if expected != current {
                return Err(ThresholdError::VersionConflict { current, expected });
            }
        }
        profile.profile_version = current + 1;
        self.inner.store.append_profile(node, &profile)?;
        s.profile = profile.clone();
        self.inner.hub.publish(StreamEvent::ProfileChanged {
            node_id: node,
            profile: profile.clone(),
        });
        Ok(profile)
    }

    pub fn alerts(&self, filter: AlertFilter) -> Vec<AlertEvent> {
        let book = self.inner.alerts.lock().expect("alert book lock");
        book.order
            .iter()
            .map(|id| &book.by_id[id])
            .filter(|a| filter.node.is_none_or(|n| a.node_id == n))
            .filter(|a| match filter.state {
                None => true,
                Some(AlertStateFilter::Open) => a.cleared_at.is_none(),
                Some(AlertStateFilter::Cleared) => a.cleared_at.is_some(),
                Some(AlertStateFilter::Acked) => a.acknowledged.is_some(),
            })
            .cloned()
            .collect()
    }

    /// Records the first acknowledgement; later calls return it unchanged.
    pub fn acknowledge(&self, alert_id: &str, actor: &str) -> Result<AlertEvent, AckError> {
        let mut book = self.inner.alerts.lock().expect("alert book lock");
        let alert = book
            .by_id
            .get(alert_id)
            .ok_or_else(|| AckError::UnknownAlert(alert_id.to_string()))?;
        if alert.acknowledged.is_some() {
            return Ok(alert.clone());
        }
        let entry = AlertLogEntry::Acked {
            alert_id: alert_id.to_string(),
            ack: Acknowledgement {
                actor: actor.to_string(),
                at: self.now(),
            },
        };
        self.inner.store.append_alert(&entry)?;
        book.apply(&entry);
        Ok(book.by_id[alert_id].clone())
    }

    pub fn counters(&self) -> Counters {
        let t = &self.inner.totals;
        let get = |c: &AtomicU64| c.load(Ordering::Relaxed);
        Counters {
            bytes_received: get(&t.bytes_received),
            frames_decoded: get(&t.frames_decoded),
            records_persisted: get(&t.records_persisted),
            validation_failures: get(&t.validation_failures),
            decode_faults: get(&t.decode_faults),
            crc_failures: get(&t.crc_failures),
            discarded_bytes: get(&t.discarded_bytes),
            frames_after_close: get(&t.frames_after_close),
            stream_subscribers: self.inner.hub.subscriber_count(),
            stream_slow_disconnects: self.inner.hub.slow_disconnects(),
        }
    }

    pub fn diagnostics(&self) -> Diagnostics {
        let sessions: Vec<_> = self.inner.sessions.lock().expect("sessions lock").values().cloned().collect();
        let nodes = sessions
            .iter()
            .map(|s| {
                let s = s.lock().expect("session lock");
                NodeDiagnostics {
                    node_id: s.node_id,
                    records: s.records,
                    sequence_gaps: s.gaps,
                    out_of_order: s.out_of_order,
                    restarts: s.restarts,
                    validation_failures: s.validation_failures,
                    decode_faults: s.decode_faults,
                }
            })
            .collect();
        let connections = self
            .inner
            .connections
            .lock()
            .expect("connections lock")
            .values()
            .map(|c| ConnectionDiagnostics {
                id: c.id,
                peer: c.peer.clone(),
                opened_at: c.opened_at,
                open: c.open.load(Ordering::SeqCst),
                bytes: c.bytes.load(Ordering::Relaxed),
                frames: c.frames.load(Ordering::Relaxed),
                decode_faults: c.decode_faults.load(Ordering::Relaxed),
                nodes: c.nodes.lock().expect("connection nodes lock").clone(),
            })
            .collect();
        Diagnostics {
            counters: self.counters(),
            nodes,
            connections,
            messages: self.inner.messages.lock().expect("messages lock").iter().cloned().collect(),
            recovery: self.inner.recovery.clone(),
        }
    }
}

impl Connection {
    pub fn id(&self) -> u64 {
        self.stats.id
    }

    pub fn is_closed(&self) -> bool {
        self.closed.load(Ordering::SeqCst)
    }

    /// Decodes and ingests one chunk of the byte stream.
    pub fn feed(&mut self, bytes: &[u8]) -> Result<FeedReport, StoreError> {
        let gw = self.gateway.clone();
        let totals = &gw.inner.totals;
        bump(&totals.bytes_received, bytes.len() as u64);
        self.stats.bytes.fetch_add(bytes.len() as u64, Ordering::Relaxed);

        let (crc_before, discarded_before) = (self.decoder.crc_failures(), self.decoder.discarded_bytes());
        let out = self.decoder.feed(bytes);
        bump(&totals.crc_failures, self.decoder.crc_failures() - crc_before);
        bump(&totals.discarded_bytes, self.decoder.discarded_bytes() - discarded_before);
        bump(&totals.frames_decoded, out.frames.len() as u64);
        self.stats.frames.fetch_add(out.frames.len() as u64, Ordering::Relaxed);

        let mut report = FeedReport {
            decode_faults: out.faults.len(),
            ..FeedReport::default()
        };
        if !out.faults.is_empty() {
            self.record_faults(&out.faults);
        }
        for (i, frame) in out.frames.iter().enumerate() {
            if self.is_closed() {
                bump(&totals.frames_after_close, (out.frames.len() - i) as u64);
                break;
            }
            match self.ingest(frame.reading)? {
                Ingested::Record => report.records += 1,
                Ingested::Invalid => report.validation_failures += 1,
                Ingested::Closed => {
                    bump(&totals.frames_after_close, (out.frames.len() - i) as u64);
                    break;
                }
            }
        }
        report.closed = self.is_closed();
        Ok(report)
    }

    fn record_faults(&self, faults: &[DecodeFault]) {
        let n = faults.len() as u64;
        bump(&self.gateway.inner.totals.decode_faults, n);
        self.stats.decode_faults.fetch_add(n, Ordering::Relaxed);
        // Faults carry no trustworthy node id; charge the node this
        // connection carried most recently.
        if let Some(node) = self.claimed.last() {
            if let Some(session) = self.gateway.session(*node) {
                session.lock().expect("session lock").decode_faults += n;
            }
        }
    }

    fn ingest(&mut self, raw: breathwatch_core::domain::RawReading) -> Result<Ingested, StoreError> {
        let gw = &self.gateway;
        let inner = &gw.inner;
        let node = raw.node_id;
        let session = gw.session_or_register(node)?;
        let mut s = session.lock().expect("session lock");
        // Checked under the session lock: a takeover sets the flag while
        // holding it, so a replaced connection can never win the node back.
        if self.is_closed() {
            return Ok(Ingested::Closed);
        }
        let own = s.owner.as_ref().is_some_and(|(id, _)| *id == self.stats.id);
        if !own {
            if let Some((previous, flag)) = s.owner.take() {
                if !flag.swap(true, Ordering::SeqCst) {
                    gw.note(
                        Some(node),
                        Some(previous),
                        format!("node {node}: connection {previous} replaced by connection {}", self.stats.id),
                    );
                }
            }
            s.owner = Some((self.stats.id, self.closed.clone()));
            s.fresh = true;
            if !self.claimed.contains(&node) {
                self.claimed.push(node);
                self.stats.nodes.lock().expect("connection nodes lock").push(node);
            }
        }

        let fresh = s.fresh;
        let step = seq_step(s.last_seq, raw.seq, fresh);
        let now = gw.now();
        let received_at = match (inner.options.stamping, s.last_received_at) {
            (_, None) => now,
            (Stamping::Arrival, Some(last)) => now.max(last + 1),
            (Stamping::Paced { cadence_ms }, Some(last)) => match step {
                _ if fresh => now.max(last + cadence_ms),
                SeqStep::Forward(d) => last + i64::from(d) * cadence_ms,
                _ => last + 1,
            },
        };

        let sample = match validate_sample(&raw, received_at) {
            Ok(sample) => sample,
            Err(violations) => {
                s.validation_failures += 1;
                bump(&inner.totals.validation_failures, 1);
                drop(s);
                gw.note(
                    Some(node),
                    Some(self.stats.id),
                    format!("node {node} seq {}: rejected ({})", raw.seq, violations_text(&violations)),
                );
                return Ok(Ingested::Invalid);
            }
        };
        s.fresh = false;
        if step == SeqStep::Restart {
            inner.store.append_restart(node, received_at)?;
            gw.note(
                Some(node),
                Some(self.stats.id),
                format!("node {node}: sequence restarted at {} after {:?}", raw.seq, s.last_seq),
            );
        }
        s.track_seq(step, raw.seq);

        let record = SampleRecord::new(sample, &s.profile);
        inner.store.append_record(&record)?;
        s.last_received_at = Some(received_at);
        s.records += 1;
        bump(&inner.totals.records_persisted, 1);

        let outcome = s.alerts.step(&record, inner.options.hysteresis, received_at);
        let mut events = Vec::with_capacity(outcome.transitions.len());
        if !outcome.transitions.is_empty() {
            let mut book = inner.alerts.lock().expect("alert book lock");
            for t in &outcome.transitions {
                let entry = book.entry_for(t);
                inner.store.append_alert(&entry)?;
                book.apply(&entry);
                events.push(match entry {
                    AlertLogEntry::Raised { alert } => StreamEvent::AlertRaised { alert },
                    AlertLogEntry::Cleared { alert } => StreamEvent::AlertCleared { alert },
                    AlertLogEntry::Acked { .. } => unreachable!("transitions never produce acks"),
                });
            }
        }
        inner.hub.publish(StreamEvent::Sample { record });
        for event in events {
            inner.hub.publish(event);
        }
        Ok(Ingested::Record)
    }
}

enum Ingested {
    Record,
    Invalid,
    Closed,
}

impl Drop for Connection {
    fn drop(&mut self) {
        self.stats.open.store(false, Ordering::SeqCst);
        for node in &self.claimed {
            if let Some(session) = self.gateway.session(*node) {
                let mut s = session.lock().expect("session lock");
                if s.owner.as_ref().is_some_and(|(id, _)| *id == self.stats.id) {
                    s.owner = None;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seq_steps_wrap() {
        assert_eq!(seq_step(None, 7, false), SeqStep::First);
        assert_eq!(seq_step(Some(5), 9, false), SeqStep::Forward(4));
        assert_eq!(seq_step(Some(65535), 2, false), SeqStep::Forward(3));
        assert_eq!(seq_step(Some(5), 5, false), SeqStep::OutOfOrder);
        assert_eq!(seq_step(Some(5), 4, false), SeqStep::OutOfOrder);
        assert_eq!(seq_step(Some(9000), 0, true), SeqStep::Restart);
        assert_eq!(seq_step(Some(0), 0x8000, false), SeqStep::OutOfOrder);
    }
}
