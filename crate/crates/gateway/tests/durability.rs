mod common;

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;

use breathwatch_core::domain::{NodeId, RawReading};
use breathwatch_core::rules::{AlertEvent, Bound, HysteresisConfig, SampleRecord, Side};
use breathwatch_gateway::{AlertFilter, Gateway, ManualClock, Stamping};
use common::*;

const NODES: [u16; 3] = [1, 2, 3];

/// Heart rate for node `n` at step `i`: bursts of high readings of varying
/// length so that some runs raise under 3/5 hysteresis and some do not.
fn reading(n: u16, i: u16) -> RawReading {
    let period = 11 + n * 3;
    let phase = i % period;
    let burst = 2 + (i / period + n) % 3;
    let mut r = normal(n, i);
    if phase < burst {
        r.heart_rate = 140;
    }
    if n == 2 && i.is_multiple_of(29) {
        r.humidity = c("91.00");
    }
    r
}

const STEPS: u16 = 400;
const PUT_AT: u16 = 120;
const ACK_AT: u16 = 250;

#[derive(Debug, PartialEq)]
struct Snapshot {
    records: Vec<Vec<SampleRecord>>,
    open: Vec<AlertEvent>,
    all: Vec<AlertEvent>,
    versions: Vec<u64>,
}

fn snapshot(gw: &Gateway) -> Snapshot {
    Snapshot {
        records: NODES.iter().map(|n| gw.store().all_records(NodeId(*n)).unwrap()).collect(),
        open: gw.alerts(AlertFilter {
            state: Some(breathwatch_gateway::AlertStateFilter::Open),
            node: None,
        }),
        all: gw.alerts(AlertFilter::default()),
        versions: NODES.iter().map(|n| gw.thresholds(NodeId(*n)).unwrap().profile_version).collect(),
    }
}

fn open_gw(dir: &Path, clock: &ManualClock) -> Gateway {
    open(dir, clock, HysteresisConfig::default(), Stamping::Arrival)
}

/// Runs steps `range`, with one connection per node.
fn drive(gw: &Gateway, clock: &ManualClock, range: std::ops::Range<u16>) {
    let mut conns: Vec<_> = NODES.iter().map(|_| gw.connect(None)).collect();
    for i in range {
        for (k, n) in NODES.iter().enumerate() {
            clock.set(T0 + i as i64 * 2000 + k as i64);
            conns[k].feed(&frame(&reading(*n, i))).unwrap();
        }
        if i == PUT_AT {
            let mut p = gw.thresholds(NodeId(3)).unwrap();
            p.heart_rate.high = Some(Side {
                moderate: Some(Bound::above(c("90"))),
                emergency: Some(Bound::above(c("130"))),
            });
            gw.put_thresholds(NodeId(3), p, None).unwrap();
        }
        if i == ACK_AT {
            for a in gw.alerts(AlertFilter::default()).iter().take(3) {
                gw.acknowledge(&a.alert_id, "nurse").unwrap();
            }
        }
    }
}

fn append(path: &Path, bytes: &[u8]) {
    OpenOptions::new().append(true).open(path).unwrap().write_all(bytes).unwrap();
}

/// Index of the first step at or after `from` whose frame raises an alert
/// in an uninterrupted run.
fn next_raise(control: &Snapshot, from: u16) -> u16 {
    let at = control
        .all
        .iter()
        .map(|a| a.raised_at)
        .filter(|t| *t >= T0 + from as i64 * 2000)
        .min()
        .unwrap();
    ((at - T0) / 2000) as u16
}

#[test]
fn kill_and_restart_matches_an_uninterrupted_run() {
    let clock = ManualClock::new(T0);
    let control_dir = tempfile::tempdir().unwrap();
    let control_gw = open_gw(control_dir.path(), &clock);
    drive(&control_gw, &clock, 0..STEPS);
    let control = snapshot(&control_gw);
    assert!(control.all.len() > 20, "{} alerts", control.all.len());
    assert!(!control.open.is_empty());
    assert!(control.all.iter().any(|a| a.acknowledged.is_some()));
    assert_eq!(control.versions, vec![0, 0, 1]);
    assert_counters_balance(&control_gw);

    let dir = tempfile::tempdir().unwrap();
    // First kill in the middle of a high-reading run, between two frames.
    let kill_1 = 61;
    {
        let gw = open_gw(dir.path(), &clock);
        drive(&gw, &clock, 0..kill_1);
    }
    // Torn partial record line as left by a crash mid-write.
    let day = fs::read_dir(dir.path().join("nodes/1"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.to_string_lossy().ends_with(".ndjson") && p.to_string_lossy().contains("records-"))
        .unwrap();
    append(&day, br#"{"node_id":1,"seq":61,"body_temp":36.6,"ambi"#);

    // Second kill right after a raising frame, losing that alert-log line.
    let kill_2 = next_raise(&control, 200) + 1;
    {
        let gw = open_gw(dir.path(), &clock);
        assert!(gw.diagnostics().recovery.store.truncated_bytes > 0);
        drive(&gw, &clock, kill_1..kill_2);
    }
    let log = dir.path().join("alerts.ndjson");
    let text = fs::read_to_string(&log).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    let last = lines.pop().unwrap();
    assert!(last.contains(r#""kind":"raised""#), "{last}");
    let mut torn = lines.join("\n");
    torn.push('\n');
    torn.push_str(&last[..last.len() / 2]);
    fs::write(&log, torn).unwrap();

    let gw = open_gw(dir.path(), &clock);
    assert_eq!(gw.diagnostics().recovery.alert_entries_rebuilt, 1);
    drive(&gw, &clock, kill_2..STEPS);
    let resumed = snapshot(&gw);

    for k in 0..NODES.len() {
        assert_eq!(resumed.records[k].len(), control.records[k].len());
    }
    assert_eq!(resumed.open, control.open);
    assert_eq!(resumed.versions, control.versions);
    assert_eq!(resumed, control);
    assert_counters_balance(&gw);

    // and once more from cold, with nothing torn
    drop(gw);
    let gw = open_gw(dir.path(), &clock);
    assert_eq!(snapshot(&gw), control);
    assert_eq!(gw.diagnostics().recovery.alert_entries_rebuilt, 0);
}
