//! Severity classification and the per-node alert lifecycle.
//!
//! A [`ThresholdProfile`] gives, for each parameter, optional low and high
//! sides. Each side has an optional Moderate boundary and an optional
//! Emergency boundary; a value beyond the Emergency boundary of either side is
//! Emergency, beyond a Moderate boundary is Moderate, otherwise Normal.
//!
//! Alerts are raised after `raise_after` consecutive Emergency samples of one
//! parameter and cleared after `clear_after` consecutive Normal samples.
//! Moderate samples leave both counters untouched.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{normal_hr_range, Millis, NodeId, Parameter, Severity, VitalsSample};
use crate::fixed::Centi;

/// One boundary. On a high side a value crosses it when `value > bound`
/// (`>=` when inclusive); on a low side when `value < bound` (`<=`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bound {
    pub value: Centi,
    #[serde(default)]
    pub inclusive: bool,
}

impl Bound {
    pub fn above(value: Centi) -> Self {
        Bound { value, inclusive: false }
    }

    pub fn at_or_above(value: Centi) -> Self {
        Bound { value, inclusive: true }
    }

    pub fn below(value: Centi) -> Self {
        Bound { value, inclusive: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Side {
    #[serde(default)]
    pub moderate: Option<Bound>,
    #[serde(default)]
    pub emergency: Option<Bound>,
}

impl Side {
    fn inner(&self) -> Option<Bound> {
        self.moderate.or(self.emergency)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Bands {
    #[serde(default)]
    pub low: Option<Side>,
    #[serde(default)]
    pub high: Option<Side>,
}

fn crosses_high(value: Centi, bound: Option<Bound>) -> bool {
    bound.is_some_and(|b| if b.inclusive { value >= b.value } else { value > b.value })
}

fn crosses_low(value: Centi, bound: Option<Bound>) -> bool {
    bound.is_some_and(|b| if b.inclusive { value <= b.value } else { value < b.value })
}

impl Bands {
    /// No side enabled: every value is Normal.
    pub const OPEN: Bands = Bands { low: None, high: None };

    pub fn classify(&self, value: Centi) -> Severity {
        let low = self.low.unwrap_or_default();
        let high = self.high.unwrap_or_default();
        if crosses_high(value, high.emergency) || crosses_low(value, low.emergency) {
            Severity::Emergency
        } else if crosses_high(value, high.moderate) || crosses_low(value, low.moderate) {
            Severity::Moderate
        } else {
            Severity::Normal
        }
    }

    fn check(&self, parameter: Parameter, reasons: &mut Vec<ProfileViolation>) {
        let mut push = |field: String, reason: String| {
            reasons.push(ProfileViolation { field, reason });
        };
        if let Some(side) = self.high {
            if let (Some(m), Some(e)) = (side.moderate, side.emergency) {
                if m.value >= e.value {
                    push(
                        format!("{parameter}.high.moderate"),
                        format!("moderate boundary {} must lie below emergency boundary {}", m.value, e.value),
                    );
                }
            }
        }
        if let Some(side) = self.low {
            if let (Some(m), Some(e)) = (side.moderate, side.emergency) {
                if m.value <= e.value {
                    push(
                        format!("{parameter}.low.moderate"),
                        format!("moderate boundary {} must lie above emergency boundary {}", m.value, e.value),
                    );
                }
            }
        }
        if let (Some(lo), Some(hi)) = (self.low.and_then(|s| s.inner()), self.high.and_then(|s| s.inner())) {
            if lo.value >= hi.value {
                push(
                    format!("{parameter}"),
                    format!("low boundary {} must lie below high boundary {}", lo.value, hi.value),
                );
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfileViolation {
    pub field: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize)]
#[error("invalid threshold profile: {}", summarize(.violations))]
pub struct ProfileError {
    pub violations: Vec<ProfileViolation>,
}

fn summarize(violations: &[ProfileViolation]) -> String {
    violations
        .iter()
        .map(|v| format!("{}: {}", v.field, v.reason))
        .collect::<Vec<_>>()
        .join("; ")
}

/// Per-parameter bands plus a write counter.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThresholdProfile {
    #[serde(default)]
    pub profile_version: u64,
    pub body_temp: Bands,
    pub ambient_temp: Bands,
    pub humidity: Bands,
    pub air_quality: Bands,
    pub heart_rate: Bands,
}

impl ThresholdProfile {
    /// Every side disabled; nothing ever leaves Normal.
    pub fn open() -> Self {
        ThresholdProfile {
            profile_version: 0,
            body_temp: Bands::OPEN,
            ambient_temp: Bands::OPEN,
            humidity: Bands::OPEN,
            air_quality: Bands::OPEN,
            heart_rate: Bands::OPEN,
        }
    }

    pub fn bands(&self, parameter: Parameter) -> &Bands {
        match parameter {
            Parameter::BodyTemp => &self.body_temp,
            Parameter::AmbientTemp => &self.ambient_temp,
            Parameter::Humidity => &self.humidity,
            Parameter::AirQuality => &self.air_quality,
            Parameter::HeartRate => &self.heart_rate,
        }
    }

    pub fn bands_mut(&mut self, parameter: Parameter) -> &mut Bands {
        match parameter {
            Parameter::BodyTemp => &mut self.body_temp,
            Parameter::AmbientTemp => &mut self.ambient_temp,
            Parameter::Humidity => &mut self.humidity,
            Parameter::AirQuality => &mut self.air_quality,
            Parameter::HeartRate => &mut self.heart_rate,
        }
    }

    pub fn validate(&self) -> Result<(), ProfileError> {
        let mut violations = Vec::new();
        for parameter in Parameter::ALL {
            self.bands(parameter).check(parameter, &mut violations);
        }
        if violations.is_empty() {
            Ok(())
        } else {
            Err(ProfileError { violations })
        }
    }

    /// Same bands, ignoring the version counter.
    pub fn same_bands(&self, other: &ThresholdProfile) -> bool {
        Parameter::ALL
            .into_iter()
            .all(|p| self.bands(p) == other.bands(p))
    }
}

/// Factory defaults for a patient of the given age. Only a handful of these
/// boundaries are clinical anchors; the rest are editable defaults.
pub fn default_profile(age_years: u32) -> ThresholdProfile {
    let units = Centi::from_units;
    let hundredths = Centi::from_hundredths;
    let hr = normal_hr_range(age_years);
    let adult = age_years >= 17;
    let hr_emergency_high = if adult { hr.max } else { hr.max + 20 };
    let hr_high = Side {
        moderate: (hr_emergency_high != hr.max).then(|| Bound::above(units(hr.max as i64))),
        emergency: Some(Bound::above(units(hr_emergency_high as i64))),
    };
    let hr_low = Side {
        moderate: Some(Bound::below(units(hr.min as i64))),
        emergency: Some(Bound::below(units(hr.min.saturating_sub(10) as i64))),
    };

    ThresholdProfile {
        profile_version: 0,
        body_temp: Bands {
            low: None,
            high: Some(Side {
                moderate: Some(Bound::at_or_above(hundredths(3750))),
                emergency: Some(Bound::at_or_above(hundredths(3810))),
            }),
        },
        ambient_temp: Bands {
            low: Some(Side {
                moderate: Some(Bound::below(units(24))),
                emergency: Some(Bound::below(units(20))),
            }),
            high: Some(Side {
                moderate: Some(Bound::above(units(31))),
                emergency: Some(Bound::above(units(35))),
            }),
        },
        humidity: Bands {
            low: None,
            high: Some(Side {
                moderate: Some(Bound::above(units(60))),
                emergency: Some(Bound::above(units(70))),
            }),
        },
        air_quality: Bands {
            low: None,
            high: Some(Side {
                moderate: Some(Bound::above(units(200))),
                emergency: Some(Bound::above(units(400))),
            }),
        },
        heart_rate: Bands {
            low: Some(hr_low),
            high: Some(hr_high),
        },
    }
}

/// Age assumed when a node has no participant profile.
pub const ADULT_DEFAULT_AGE: u32 = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParameterClass {
    pub severity: Severity,
    /// Set when the device flagged this sensor as unreadable.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub fault: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Classification {
    pub body_temp: ParameterClass,
    pub ambient_temp: ParameterClass,
    pub humidity: ParameterClass,
    pub air_quality: ParameterClass,
    pub heart_rate: ParameterClass,
    pub overall: Severity,
}

impl Classification {
    pub fn get(&self, parameter: Parameter) -> ParameterClass {
        match parameter {
            Parameter::BodyTemp => self.body_temp,
            Parameter::AmbientTemp => self.ambient_temp,
            Parameter::Humidity => self.humidity,
            Parameter::AirQuality => self.air_quality,
            Parameter::HeartRate => self.heart_rate,
        }
    }

    pub fn from_parts(parts: [ParameterClass; 5]) -> Self {
        let overall = parts
            .iter()
            .map(|p| p.severity)
            .max()
            .unwrap_or(Severity::Normal);
        let [body_temp, ambient_temp, humidity, air_quality, heart_rate] = parts;
        Classification {
            body_temp,
            ambient_temp,
            humidity,
            air_quality,
            heart_rate,
            overall,
        }
    }
}

pub fn classify(sample: &VitalsSample, profile: &ThresholdProfile) -> Classification {
    let faulted = sample.faulted_parameters();
    let parts = Parameter::ALL.map(|parameter| {
        if faulted.contains(&parameter) {
            ParameterClass {
                severity: Severity::Emergency,
                fault: true,
            }
        } else {
            ParameterClass {
                severity: profile.bands(parameter).classify(sample.value(parameter)),
                fault: false,
            }
        }
    });
    Classification::from_parts(parts)
}

/// A sample with its classification, as persisted by the gateway.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    #[serde(flatten)]
    pub sample: VitalsSample,
    pub classification: Classification,
    pub profile_version: u64,
}

impl SampleRecord {
    pub fn new(sample: VitalsSample, profile: &ThresholdProfile) -> Self {
        SampleRecord {
            classification: classify(&sample, profile),
            profile_version: profile.profile_version,
            sample,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HysteresisConfig {
    pub raise_after: u32,
    pub clear_after: u32,
}

impl HysteresisConfig {
    /// Raise and clear on a single sample.
    pub const INSTANT: HysteresisConfig = HysteresisConfig {
        raise_after: 1,
        clear_after: 1,
    };

    pub fn new(raise_after: u32, clear_after: u32) -> Result<Self, HysteresisError> {
        let config = HysteresisConfig { raise_after, clear_after };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), HysteresisError> {
        if self.raise_after == 0 || self.clear_after == 0 {
            return Err(HysteresisError);
        }
        Ok(())
    }
}

impl Default for HysteresisConfig {
    fn default() -> Self {
        HysteresisConfig {
            raise_after: 3,
            clear_after: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("hysteresis counts must be at least 1")]
pub struct HysteresisError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Acknowledgement {
    pub actor: String,
    pub at: Millis,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlertEvent {
    pub alert_id: String,
    pub node_id: NodeId,
    pub parameter: Parameter,
    pub severity: Severity,
    pub raised_at: Millis,
    #[serde(default)]
    pub cleared_at: Option<Millis>,
    #[serde(default)]
    pub acknowledged: Option<Acknowledgement>,
    pub triggering_value: Centi,
    pub profile_version: u64,
}

impl AlertEvent {
    pub fn is_open(&self) -> bool {
        self.cleared_at.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "transition", rename_all = "snake_case")]
pub enum AlertTransition {
    Raised(AlertEvent),
    Cleared(AlertEvent),
}

impl AlertTransition {
    pub fn event(&self) -> &AlertEvent {
        match self {
            AlertTransition::Raised(e) | AlertTransition::Cleared(e) => e,
        }
    }
}

impl fmt::Display for AlertTransition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (verb, e) = match self {
            AlertTransition::Raised(e) => ("raised", e),
            AlertTransition::Cleared(e) => ("cleared", e),
        };
        write!(f, "{} {verb} ({} = {})", e.alert_id, e.parameter, e.triggering_value)
    }
}

#[derive(Debug, Clone, Default)]
struct ParameterTrack {
    emergency_run: u32,
    normal_run: u32,
    raised_count: u32,
    open: Option<AlertEvent>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StepOutcome {
    pub transitions: Vec<AlertTransition>,
    /// The sample arrived out of sequence and did not touch the counters.
    pub ignored: bool,
}

/// Hysteresis counters and open alerts for one node.
#[derive(Debug, Clone)]
pub struct NodeAlertState {
    node_id: NodeId,
    last_seq: Option<u16>,
    sequence_gaps: u64,
    tracks: [ParameterTrack; 5],
}

impl NodeAlertState {
    pub fn new(node_id: NodeId) -> Self {
        NodeAlertState {
            node_id,
            last_seq: None,
            sequence_gaps: 0,
            tracks: Default::default(),
        }
    }

    pub fn node_id(&self) -> NodeId {
        self.node_id
    }

    /// Samples ignored because they arrived out of order.
    pub fn sequence_gaps(&self) -> u64 {
        self.sequence_gaps
    }

    /// Forgets the last sequence number, e.g. when the node reconnects.
    pub fn reset_sequence(&mut self) {
        self.last_seq = None;
    }

    pub fn open_alerts(&self) -> impl Iterator<Item = &AlertEvent> {
        self.tracks.iter().filter_map(|t| t.open.as_ref())
    }

    pub fn open_alert(&self, parameter: Parameter) -> Option<&AlertEvent> {
        self.tracks[parameter.index()].open.as_ref()
    }

    /// Advances the counters with one classified sample.
    pub fn step(&mut self, record: &SampleRecord, hysteresis: HysteresisConfig, now: Millis) -> StepOutcome {
        let seq = record.sample.seq;
        if let Some(last) = self.last_seq {
            let delta = seq.wrapping_sub(last);
            if delta == 0 || delta >= 0x8000 {
                self.sequence_gaps += 1;
                return StepOutcome {
                    transitions: Vec::new(),
                    ignored: true,
                };
            }
        }
        self.last_seq = Some(seq);

        let mut transitions = Vec::new();
        for parameter in Parameter::ALL {
            let class = record.classification.get(parameter);
            let track = &mut self.tracks[parameter.index()];
            match class.severity {
                Severity::Emergency => {
                    track.emergency_run = track.emergency_run.saturating_add(1);
                    track.normal_run = 0;
                    if track.open.is_none() && track.emergency_run >= hysteresis.raise_after {
                        track.raised_count += 1;
                        let event = AlertEvent {
                            alert_id: format!("n{}-{}-{}", self.node_id, parameter, track.raised_count),
                            node_id: self.node_id,
                            parameter,
                            severity: Severity::Emergency,
                            raised_at: now,
                            cleared_at: None,
                            acknowledged: None,
                            triggering_value: record.sample.value(parameter),
                            profile_version: record.profile_version,
                        };
                        track.open = Some(event.clone());
                        transitions.push(AlertTransition::Raised(event));
                    }
                }
                Severity::Normal => {
                    track.normal_run = track.normal_run.saturating_add(1);
                    track.emergency_run = 0;
                    if track.normal_run >= hysteresis.clear_after {
                        if let Some(mut event) = track.open.take() {
                            event.cleared_at = Some(now.max(event.raised_at));
                            transitions.push(AlertTransition::Cleared(event));
                        }
                    }
                }
                Severity::Moderate => {}
            }
        }
        StepOutcome {
            transitions,
            ignored: false,
        }
    }
}

/// Free-function form of [`NodeAlertState::step`].
pub fn alert_step(
    state: &mut NodeAlertState,
    record: &SampleRecord,
    hysteresis: HysteresisConfig,
    now: Millis,
) -> StepOutcome {
    state.step(record, hysteresis, now)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::DeviceFlags;

    fn c(s: &str) -> Centi {
        s.parse().unwrap()
    }

    fn sample(body: &str, ambient: &str, humidity: &str, air: &str, hr: u8) -> VitalsSample {
        VitalsSample {
            node_id: NodeId(1),
            seq: 0,
            body_temp: c(body),
            ambient_temp: c(ambient),
            humidity: c(humidity),
            air_quality: c(air),
            heart_rate: hr,
            flags: DeviceFlags::empty(),
            received_at: 0,
        }
    }

    fn normal_sample() -> VitalsSample {
        sample("36.60", "27.50", "50.00", "100.00", 80)
    }

    #[test]
    fn default_profile_is_valid_for_every_age() {
        for age in 0..=100 {
            default_profile(age).validate().unwrap();
        }
    }

    #[test]
    fn adult_heart_rate_bands() {
        let p = default_profile(20);
        assert_eq!(p.heart_rate.classify(Centi::from_units(60)), Severity::Normal);
        assert_eq!(p.heart_rate.classify(Centi::from_units(100)), Severity::Normal);
        assert_eq!(p.heart_rate.classify(Centi::from_units(101)), Severity::Emergency);
        assert_eq!(p.heart_rate.classify(Centi::from_units(102)), Severity::Emergency);
        assert_eq!(p.heart_rate.classify(Centi::from_units(59)), Severity::Moderate);
        assert_eq!(p.heart_rate.classify(Centi::from_units(50)), Severity::Moderate);
        assert_eq!(p.heart_rate.classify(Centi::from_units(49)), Severity::Emergency);
    }

    #[test]
    fn child_heart_rate_bands() {
        // 6-8 years: 70-115 normal
        let p = default_profile(7);
        assert_eq!(p.heart_rate.classify(Centi::from_units(115)), Severity::Normal);
        assert_eq!(p.heart_rate.classify(Centi::from_units(116)), Severity::Moderate);
        assert_eq!(p.heart_rate.classify(Centi::from_units(135)), Severity::Moderate);
        assert_eq!(p.heart_rate.classify(Centi::from_units(136)), Severity::Emergency);
        assert_eq!(p.heart_rate.classify(Centi::from_units(60)), Severity::Moderate);
        assert_eq!(p.heart_rate.classify(Centi::from_units(59)), Severity::Emergency);
    }

    #[test]
    fn default_examples() {
        let p = default_profile(20);
        let s = sample("34.19", "31.17", "73.51", "389.44", 68);
        let cls = classify(&s, &p);
        assert_eq!(cls.humidity.severity, Severity::Emergency);
        assert_eq!(cls.air_quality.severity, Severity::Moderate);
        assert_eq!(cls.body_temp.severity, Severity::Normal);
        assert_eq!(cls.ambient_temp.severity, Severity::Moderate);
        assert_eq!(cls.heart_rate.severity, Severity::Normal);
        assert_eq!(cls.overall, Severity::Emergency);

        let fever_edge = classify(&sample("37.89", "27.00", "50.00", "100.00", 80), &p);
        assert_eq!(fever_edge.body_temp.severity, Severity::Moderate);
        let fever = classify(&sample("38.10", "27.00", "50.00", "100.00", 80), &p);
        assert_eq!(fever.body_temp.severity, Severity::Emergency);

        let tachy = classify(&sample("33.96", "30.23", "78.08", "411.53", 102), &p);
        assert_eq!(tachy.heart_rate.severity, Severity::Emergency);
    }

    #[test]
    fn band_edges_follow_inclusivity() {
        let p = default_profile(30);
        assert_eq!(p.humidity.classify(c("60.00")), Severity::Normal);
        assert_eq!(p.humidity.classify(c("60.01")), Severity::Moderate);
        assert_eq!(p.humidity.classify(c("70.00")), Severity::Moderate);
        assert_eq!(p.humidity.classify(c("70.01")), Severity::Emergency);
        assert_eq!(p.air_quality.classify(c("200.00")), Severity::Normal);
        assert_eq!(p.air_quality.classify(c("400.00")), Severity::Moderate);
        assert_eq!(p.air_quality.classify(c("400.01")), Severity::Emergency);
        assert_eq!(p.ambient_temp.classify(c("24.00")), Severity::Normal);
        assert_eq!(p.ambient_temp.classify(c("31.00")), Severity::Normal);
        assert_eq!(p.ambient_temp.classify(c("23.99")), Severity::Moderate);
        assert_eq!(p.ambient_temp.classify(c("20.00")), Severity::Moderate);
        assert_eq!(p.ambient_temp.classify(c("19.99")), Severity::Emergency);
        assert_eq!(p.ambient_temp.classify(c("35.01")), Severity::Emergency);
        assert_eq!(p.body_temp.classify(c("37.49")), Severity::Normal);
        assert_eq!(p.body_temp.classify(c("37.50")), Severity::Moderate);
        assert_eq!(p.body_temp.classify(c("25.00")), Severity::Normal);
    }

    #[test]
    fn band_centres_are_normal() {
        let p = default_profile(30);
        let cls = classify(&sample("30.00", "27.50", "30.00", "100.00", 80), &p);
        assert_eq!(cls.overall, Severity::Normal);
    }

    #[test]
    fn open_profile_never_leaves_normal() {
        let p = ThresholdProfile::open();
        let cls = classify(&sample("124.00", "-39.00", "100.00", "6553.50", 255), &p);
        assert_eq!(cls.overall, Severity::Normal);
    }

    #[test]
    fn sensor_fault_marks_zeroed_fields() {
        let mut s = normal_sample();
        s.heart_rate = 0;
        s.flags = DeviceFlags::SENSOR_FAULT;
        let cls = classify(&s, &default_profile(30));
        assert_eq!(cls.heart_rate, ParameterClass { severity: Severity::Emergency, fault: true });
        assert!(!cls.body_temp.fault);
        assert_eq!(cls.overall, Severity::Emergency);
    }

    #[test]
    fn profile_validation_reports_fields() {
        let mut p = default_profile(30);
        p.heart_rate.high = Some(Side {
            moderate: Some(Bound::above(Centi::from_units(120))),
            emergency: Some(Bound::above(Centi::from_units(110))),
        });
        p.humidity.low = Some(Side {
            moderate: Some(Bound::below(Centi::from_units(65))),
            emergency: None,
        });
        let err = p.validate().unwrap_err();
        let fields: Vec<_> = err.violations.iter().map(|v| v.field.as_str()).collect();
        assert_eq!(fields, ["humidity", "heart_rate.high.moderate"]);

        let mut p = default_profile(30);
        p.ambient_temp.low = Some(Side {
            moderate: Some(Bound::below(Centi::from_units(18))),
            emergency: Some(Bound::below(Centi::from_units(20))),
        });
        assert_eq!(p.validate().unwrap_err().violations[0].field, "ambient_temp.low.moderate");
    }

    #[test]
    fn profile_json_shape() {
        let p = default_profile(30);
        let json = serde_json::to_value(&p).unwrap();
        assert_eq!(json["body_temp"]["high"]["emergency"]["value"], 38.1);
        assert_eq!(json["body_temp"]["high"]["emergency"]["inclusive"], true);
        assert!(json["body_temp"]["low"].is_null());
        let back: ThresholdProfile = serde_json::from_value(json).unwrap();
        assert_eq!(back, p);
    }

    fn record(seq: u16, severity: Severity) -> SampleRecord {
        let class = ParameterClass { severity, fault: false };
        let normal = ParameterClass { severity: Severity::Normal, fault: false };
        SampleRecord {
            sample: VitalsSample { seq, ..normal_sample() },
            classification: Classification::from_parts([class, normal, normal, normal, normal]),
            profile_version: 0,
        }
    }

    fn run(severities: &[Severity], h: HysteresisConfig) -> Vec<(usize, bool)> {
        let mut state = NodeAlertState::new(NodeId(1));
        let mut out = Vec::new();
        for (i, s) in severities.iter().enumerate() {
            for t in state.step(&record(i as u16, *s), h, i as i64).transitions {
                out.push((i, matches!(t, AlertTransition::Raised(_))));
            }
        }
        out
    }

    use Severity::{Emergency as E, Moderate as M, Normal as N};

    #[test]
    fn raises_on_third_emergency() {
        assert_eq!(run(&[E, E, E], HysteresisConfig::default()), vec![(2, true)]);
    }

    #[test]
    fn interrupted_streak_restarts() {
        assert_eq!(run(&[E, N, E, E, E], HysteresisConfig::default()), vec![(4, true)]);
    }

    #[test]
    fn clears_on_fifth_normal() {
        let seq = [E, E, E, N, N, N, N, N];
        assert_eq!(run(&seq, HysteresisConfig::default()), vec![(2, true), (7, false)]);
    }

    #[test]
    fn moderate_freezes_counters() {
        assert_eq!(run(&[E, M, E, M, E], HysteresisConfig::default()), vec![(4, true)]);
        let seq = [E, E, E, N, N, M, N, N, M, N];
        assert_eq!(run(&seq, HysteresisConfig::default()), vec![(2, true), (9, false)]);
    }

    #[test]
    fn instant_mode_tracks_every_change() {
        let seq = [E, N, M, E, M, N];
        assert_eq!(
            run(&seq, HysteresisConfig::INSTANT),
            vec![(0, true), (1, false), (3, true), (5, false)]
        );
    }

    #[test]
    fn alert_ids_count_per_parameter() {
        let mut state = NodeAlertState::new(NodeId(4));
        let h = HysteresisConfig::INSTANT;
        let ids: Vec<_> = [E, N, E]
            .iter()
            .enumerate()
            .flat_map(|(i, s)| state.step(&record(i as u16, *s), h, 0).transitions)
            .filter_map(|t| match t {
                AlertTransition::Raised(e) => Some(e.alert_id),
                _ => None,
            })
            .collect();
        assert_eq!(ids, ["n4-body_temp-1", "n4-body_temp-2"]);
    }

    #[test]
    fn out_of_order_samples_are_ignored() {
        let mut state = NodeAlertState::new(NodeId(1));
        let h = HysteresisConfig::INSTANT;
        assert!(!state.step(&record(10, N), h, 0).ignored);
        let late = state.step(&record(9, E), h, 1);
        assert!(late.ignored && late.transitions.is_empty());
        assert!(state.step(&record(10, E), h, 2).ignored);
        assert_eq!(state.sequence_gaps(), 2);
        // wrap-around counts as forward progress
        let mut state = NodeAlertState::new(NodeId(1));
        state.step(&record(65535, N), h, 0);
        assert!(!state.step(&record(0, E), h, 1).ignored);
    }

    #[test]
    fn hysteresis_must_be_positive() {
        assert!(HysteresisConfig::new(0, 5).is_err());
        assert!(HysteresisConfig::new(3, 0).is_err());
        assert_eq!(HysteresisConfig::new(3, 5).unwrap(), HysteresisConfig::default());
    }
}
