//! Deterministic virtual sensor node.

pub mod firmware;
pub mod ppg;
pub mod scenario;
pub mod sensors;
pub mod transport;

use serde::Serialize;
use thiserror::Error;

use crate::domain::{Millis, NodeId, Parameter};
use crate::rules::ThresholdProfile;
use crate::wire::WirePrecision;

pub use firmware::{firmware_tick, Display, Emission, NodeState, TickOutputs};
pub use scenario::{parse_scenario, parse_with_corpus, FaultSpec, Scenario, ScenarioError, SignalSource, Track};
pub use sensors::Mq135Model;
pub use transport::{FileSink, RetryPolicy, TcpSink, TransportError, TransportSink};

/// Which local outputs each parameter's emergency drives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlertMap {
    pub buzzer: Vec<Parameter>,
    pub led: Vec<Parameter>,
    /// Parameters whose emergency also puts a message on the display.
    pub message: Vec<Parameter>,
}

impl Default for AlertMap {
    fn default() -> Self {
        AlertMap {
            buzzer: vec![Parameter::BodyTemp, Parameter::AmbientTemp, Parameter::HeartRate],
            led: vec![Parameter::Humidity, Parameter::AirQuality, Parameter::HeartRate],
            message: vec![Parameter::HeartRate],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeConfig {
    pub node_id: NodeId,
    pub sample_period_ms: u64,
    pub transmit_period_ms: u64,
    pub rng_seed: u64,
    pub local_alert_thresholds: ThresholdProfile,
    pub alert_map: AlertMap,
    /// Sensor quantization on.
    pub realistic: bool,
    pub wire: WirePrecision,
    pub mq135: Mq135Model,
    pub scenario: Scenario,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("transmit_period_ms must be a positive multiple of sample_period_ms")]
pub struct CadenceError;

impl NodeConfig {
    /// Defaults: 1 s sampling, 2 s transmit, adult local thresholds.
    pub fn new(node_id: NodeId, scenario: Scenario) -> NodeConfig {
        NodeConfig {
            node_id,
            sample_period_ms: 1000,
            transmit_period_ms: 2000,
            rng_seed: 0,
            local_alert_thresholds: crate::rules::default_profile(crate::rules::ADULT_DEFAULT_AGE),
            alert_map: AlertMap::default(),
            realistic: false,
            wire: WirePrecision::Extended,
            mq135: Mq135Model::default(),
            scenario,
        }
    }

    pub fn validate(&self) -> Result<(), CadenceError> {
        if self.sample_period_ms == 0
            || self.transmit_period_ms == 0
            || !self.transmit_period_ms.is_multiple_of(self.sample_period_ms)
        {
            return Err(CadenceError);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct RunReport {
    pub node_id: u16,
    /// Frames written to the sink, including corrupted and end-of-run frames.
    pub frames_sent: u64,
    /// Frames carrying a live sample.
    pub data_frames: u64,
    /// End-of-scenario frames flagged SENSOR_FAULT.
    pub fault_frames: u64,
    pub frames_dropped: u64,
    pub frames_corrupted: u64,
    pub faults_injected: u64,
    pub bytes_sent: u64,
    /// Virtual time covered.
    pub duration_ms: Millis,
    pub completed: bool,
}

#[derive(Debug, Error)]
#[error("node run aborted after {} frames: {error}", report.frames_sent)]
pub struct RunAborted {
    pub report: RunReport,
    #[source]
    pub error: TransportError,
}

/// Runs the node loop to completion, writing every emitted frame to `sink`.
pub fn run_node<S: TransportSink>(config: NodeConfig, mut sink: S) -> Result<RunReport, RunAborted> {
    let mut report = RunReport {
        node_id: config.node_id.0,
        ..RunReport::default()
    };
    let sensor_windows = config
        .scenario
        .faults
        .iter()
        .filter(|f| matches!(f, FaultSpec::SensorFault { .. }))
        .count() as u64;
    let mut state = NodeState::new(config);
    while let Some(out) = state.tick() {
        report.duration_ms = out.at_ms;
        match out.emission {
            Some(Emission::Dropped { .. }) => {
                report.frames_dropped += 1;
                report.faults_injected += 1;
            }
            Some(Emission::Frame { bytes, corrupted, .. }) => {
                if let Err(error) = sink.send(out.at_ms, &bytes) {
                    return Err(RunAborted { report, error });
                }
                report.frames_sent += 1;
                report.bytes_sent += bytes.len() as u64;
                if out.halted {
                    report.fault_frames += 1;
                } else {
                    report.data_frames += 1;
                }
                if corrupted {
                    report.frames_corrupted += 1;
                    report.faults_injected += 1;
                }
            }
            None => {}
        }
    }
    report.faults_injected += sensor_windows;
    if let Err(error) = sink.flush() {
        return Err(RunAborted { report, error });
    }
    report.completed = true;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Corpus;
    use crate::domain::DeviceFlags;
    use crate::wire::{decode_all, DecodeFault};

    fn replay_config(participant: u8) -> NodeConfig {
        let corpus = Corpus::bundled();
        let rows = corpus
            .hours(participant)
            .into_iter()
            .map(|h| *corpus.row(participant, h).unwrap())
            .collect();
        NodeConfig::new(NodeId(participant as u16), Scenario::replay(participant, rows, 1.0))
    }

    #[test]
    fn six_hour_replay_frame_count() {
        let mut bytes = Vec::new();
        let report = run_node(replay_config(1), &mut bytes).unwrap();
        assert_eq!(report.data_frames, 10_800);
        assert_eq!(report.fault_frames, 1);
        assert_eq!(bytes.len(), 10_801 * 20);
    }

    #[test]
    fn first_frame_matches_first_corpus_hour() {
        let mut bytes = Vec::new();
        run_node(replay_config(1), &mut bytes).unwrap();
        let first = decode_all(&bytes[..20]).frames[0].reading;
        let row = Corpus::bundled().row(1, 1).copied().unwrap();
        assert_eq!(first.body_temp, row.body_temp);
        assert_eq!(first.ambient_temp, row.ambient_temp);
        assert_eq!(first.humidity, row.humidity);
        assert_eq!(first.air_quality, row.air_quality);
        assert_eq!(first.heart_rate, row.heart_rate as i32);
        assert_eq!(first.seq, 0);
    }

    #[test]
    fn zero_length_scenario_sends_one_fault_frame() {
        let config = NodeConfig::new(NodeId(3), Scenario::constant([36.6, 27.8, 50.0, 150.0, 72.0], 0));
        let mut bytes = Vec::new();
        let report = run_node(config, &mut bytes).unwrap();
        assert_eq!((report.data_frames, report.fault_frames), (0, 1));
        let frames = decode_all(&bytes).frames;
        assert!(frames[0].reading.flags.contains(DeviceFlags::SENSOR_FAULT));
    }

    #[test]
    fn same_seed_same_bytes() {
        let text = "[node]\nnode_id = 4\nrng_seed = 11\nduration_ms = 30000\nrealistic = true\n\
                    [signal.heart_rate]\nkind = \"ppg\"\nvalue = 90\nnoise = 0.05\n";
        let run = || {
            let mut bytes = Vec::new();
            run_node(parse_scenario(text).unwrap(), &mut bytes).unwrap();
            bytes
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn corrupt_byte_fails_crc_downstream() {
        let mut config = replay_config(2);
        config.scenario.duration_ms = 20_000;
        config.scenario.faults.push(FaultSpec::CorruptByte { seq: 5, offset: 9 });
        let mut bytes = Vec::new();
        let report = run_node(config, &mut bytes).unwrap();
        assert_eq!(report.frames_corrupted, 1);
        let out = decode_all(&bytes);
        let seqs: Vec<u16> = out.frames.iter().map(|f| f.reading.seq).collect();
        assert!(!seqs.contains(&5));
        assert_eq!(seqs.len(), 10);
        assert!(out.faults.contains(&DecodeFault::BadCrc));
        let frame5 = &bytes[5 * 20..6 * 20];
        assert!(decode_all(frame5).frames.is_empty());
    }

    #[test]
    fn dropped_frame_leaves_a_sequence_gap() {
        let mut config = replay_config(2);
        config.scenario.duration_ms = 10_000;
        config.scenario.faults.push(FaultSpec::DropFrame { seq: 2 });
        let mut bytes = Vec::new();
        run_node(config, &mut bytes).unwrap();
        let seqs: Vec<u16> = decode_all(&bytes).frames.iter().map(|f| f.reading.seq).collect();
        assert_eq!(seqs, vec![0, 1, 3, 4, 5]);
    }

    #[test]
    fn open_profile_never_sets_alarm_flags() {
        let mut config = replay_config(5);
        config.local_alert_thresholds = ThresholdProfile::open();
        let mut state = NodeState::new(config);
        while let Some(out) = state.tick() {
            let flags = out.reading.flags;
            assert!(!flags.contains(DeviceFlags::BUZZER_ON) && !flags.contains(DeviceFlags::LED_ON));
        }
    }

    #[test]
    fn local_alarm_mapping() {
        // person 5 hour 1: heart rate 102 and humidity above 70
        let mut state = NodeState::new(replay_config(5));
        let out = state.tick().unwrap();
        assert!(out.reading.flags.contains(DeviceFlags::BUZZER_ON));
        assert!(out.reading.flags.contains(DeviceFlags::LED_ON));
        assert_eq!(out.display.lines[1].trim_end(), "PULSE EMERGENCY!");
        assert!(out.display.lines.iter().all(|l| l.chars().count() == 16));

        let mut calm = replay_config(1);
        calm.alert_map.led.clear();
        let out = NodeState::new(calm).tick().unwrap();
        assert!(!out.reading.flags.contains(DeviceFlags::LED_ON));
        assert_eq!(out.display.lines[0], "B34.2 A31.2 H74 ");
        assert_eq!(out.display.lines[1], "HR68 AQ389      ");
    }

    #[test]
    fn sensor_fault_window_zeroes_the_field() {
        let mut config = replay_config(1);
        config.scenario.duration_ms = 8_000;
        config.scenario.faults.push(FaultSpec::SensorFault {
            parameter: Some(Parameter::AirQuality),
            from_ms: 2_000,
            to_ms: 4_000,
        });
        let mut bytes = Vec::new();
        let report = run_node(config, &mut bytes).unwrap();
        assert_eq!(report.faults_injected, 1);
        let frames = decode_all(&bytes).frames;
        let r = frames[1].reading;
        assert!(r.flags.contains(DeviceFlags::SENSOR_FAULT));
        assert_eq!(r.air_quality, crate::fixed::Centi::ZERO);
        assert!(!frames[2].reading.flags.contains(DeviceFlags::SENSOR_FAULT));
    }

    #[test]
    fn ppg_heart_rate_reaches_target() {
        let text = "[node]\nnode_id = 5\nduration_ms = 40000\n\
                    [signal.heart_rate]\nkind = \"ppg\"\nvalue = 102\nnoise = 0.05\n";
        let mut state = NodeState::new(parse_scenario(text).unwrap());
        let mut first = None;
        let mut last = None;
        while let Some(out) = state.tick() {
            if out.halted {
                break;
            }
            first.get_or_insert(out.reading);
            last = Some(out.reading);
        }
        // warm-up reads as a sensor fault rather than 0 bpm
        assert!(first.unwrap().flags.contains(DeviceFlags::SENSOR_FAULT));
        let last = last.unwrap();
        assert!(!last.flags.contains(DeviceFlags::SENSOR_FAULT));
        assert!((last.heart_rate - 102).abs() <= 1, "{}", last.heart_rate);
    }
}
