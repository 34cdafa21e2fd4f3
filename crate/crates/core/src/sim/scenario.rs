//! Scenario files: a TOML document describing one node, its signal sources,
//! faults to inject and the local alarm configuration.
//!
//! ```toml
//! [node]
//! node_id = 2
//! rng_seed = 7
//!
//! [replay]
//! participant = 2
//!
//! [signal.heart_rate]
//! kind = "ppg"
//! value = 102
//! noise = 0.05
//!
//! [[fault]]
//! kind = "corrupt_byte"
//! seq = 5
//! ```

use std::fmt;
use std::ops::Range;

use serde::Deserialize;
use thiserror::Error;
use toml::Spanned;

use crate::analytics::HOUR_MS;
use crate::corpus::{Corpus, CorpusRow};
use crate::domain::{Millis, NodeId, Parameter};
use crate::rules::{default_profile, ThresholdProfile, ADULT_DEFAULT_AGE};
use crate::sim::sensors::Mq135Model;
use crate::sim::{AlertMap, NodeConfig};
use crate::wire::{WirePrecision, FRAME_LEN};

/// Piecewise-linear value over virtual time, held flat outside its points.
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    points: Vec<(Millis, f64)>,
}

impl Track {
    pub fn new(points: Vec<(Millis, f64)>) -> Result<Track, &'static str> {
        if points.is_empty() {
            return Err("a track needs at least one point");
        }
        if points.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err("track times must be strictly increasing");
        }
        Ok(Track { points })
    }

    pub fn constant(value: f64) -> Track {
        Track { points: vec![(0, value)] }
    }

    pub fn at(&self, t: Millis) -> f64 {
        let idx = self.points.partition_point(|(pt, _)| *pt <= t);
        if idx == 0 {
            return self.points[0].1;
        }
        if idx == self.points.len() {
            return self.points[idx - 1].1;
        }
        let (t0, v0) = self.points[idx - 1];
        let (t1, v1) = self.points[idx];
        v0 + (v1 - v0) * (t - t0) as f64 / (t1 - t0) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SignalSource {
    Constant(f64),
    Track(Track),
    Replay,
    /// Heart rate measured by running a synthetic waveform through the pulse
    /// detector; `bpm` is the true rate over time.
    Ppg {
        bpm: Track,
        sample_rate_hz: f64,
        noise: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplaySpec {
    pub participant: u8,
    /// Corpus rows in playback order, one per replayed hour.
    pub rows: Vec<CorpusRow>,
    /// Virtual length of one replayed hour is `HOUR_MS / compression`.
    pub compression: f64,
}

impl ReplaySpec {
    pub fn hour_len_ms(&self) -> Millis {
        (HOUR_MS as f64 / self.compression).round() as Millis
    }

    pub fn row_at(&self, t: Millis) -> Option<&CorpusRow> {
        let idx = usize::try_from(t / self.hour_len_ms()).ok()?;
        self.rows.get(idx)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FaultSpec {
    /// The frame with this sequence number is never sent.
    DropFrame { seq: u16 },
    /// One byte of the frame with this sequence number is inverted.
    CorruptByte { seq: u16, offset: usize },
    /// Sensor unreadable over `[from_ms, to_ms)`; `None` means every sensor.
    SensorFault {
        parameter: Option<Parameter>,
        from_ms: Millis,
        to_ms: Millis,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    /// Per-parameter source, indexed by [`Parameter::index`].
    pub signals: [SignalSource; 5],
    pub replay: Option<ReplaySpec>,
    pub duration_ms: Millis,
    pub faults: Vec<FaultSpec>,
}

impl Scenario {
    pub fn signal(&self, parameter: Parameter) -> &SignalSource {
        &self.signals[parameter.index()]
    }

    /// Replays the given corpus hours for one participant on every parameter.
    pub fn replay(participant: u8, rows: Vec<CorpusRow>, compression: f64) -> Scenario {
        let spec = ReplaySpec {
            participant,
            rows,
            compression,
        };
        Scenario {
            duration_ms: spec.hour_len_ms() * spec.rows.len() as Millis,
            signals: std::array::from_fn(|_| SignalSource::Replay),
            replay: Some(spec),
            faults: Vec::new(),
        }
    }

    /// Holds every parameter at a constant.
    pub fn constant(values: [f64; 5], duration_ms: Millis) -> Scenario {
        Scenario {
            signals: values.map(SignalSource::Constant),
            replay: None,
            duration_ms,
            faults: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenarioIssue {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for ScenarioIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid scenario: {}", render(.issues))]
pub struct ScenarioError {
    pub issues: Vec<ScenarioIssue>,
}

fn render(issues: &[ScenarioIssue]) -> String {
    issues.iter().map(|i| i.to_string()).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFile {
    node: Spanned<RawNode>,
    replay: Option<Spanned<RawReplay>>,
    #[serde(default)]
    signal: std::collections::BTreeMap<Spanned<String>, Spanned<RawSignal>>,
    #[serde(default)]
    fault: Vec<Spanned<RawFault>>,
    thresholds: Option<Spanned<RawThresholds>>,
    alerts: Option<Spanned<RawAlerts>>,
    mq135: Option<Mq135Model>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNode {
    node_id: u16,
    #[serde(default = "default_sample_period")]
    sample_period_ms: u64,
    #[serde(default = "default_transmit_period")]
    transmit_period_ms: u64,
    #[serde(default)]
    rng_seed: u64,
    duration_ms: Option<i64>,
    /// Sensor quantization on, and standard wire precision.
    #[serde(default)]
    realistic: bool,
    wire: Option<WirePrecision>,
}

fn default_sample_period() -> u64 {
    1000
}

fn default_transmit_period() -> u64 {
    2000
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawReplay {
    participant: u8,
    hours: Option<Vec<u8>>,
    #[serde(default = "one")]
    compression: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSignal {
    kind: Spanned<String>,
    value: Option<f64>,
    points: Option<Vec<(f64, f64)>>,
    sample_rate_hz: Option<f64>,
    noise: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFault {
    kind: Spanned<String>,
    seq: Option<u16>,
    offset: Option<usize>,
    parameter: Option<String>,
    from_ms: Option<i64>,
    to_ms: Option<i64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawThresholds {
    #[serde(default = "default_preset")]
    preset: String,
    age_years: Option<u32>,
}

fn default_preset() -> String {
    "default".into()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAlerts {
    buzzer: Option<Vec<String>>,
    led: Option<Vec<String>>,
    message: Option<Vec<String>>,
}

/// Default byte to damage for `corrupt_byte`: inside the body-temperature
/// field, so the frame stays aligned and only the CRC catches it.
pub const DEFAULT_CORRUPT_OFFSET: usize = 9;

struct Issues<'a> {
    text: &'a str,
    list: Vec<ScenarioIssue>,
}

impl Issues<'_> {
    fn at(&mut self, span: Range<usize>, message: impl Into<String>) {
        let line = line_of(self.text, span.start);
        self.list.push(ScenarioIssue {
            line,
            message: message.into(),
        });
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Parses and validates a scenario file, reporting every problem found.
pub fn parse_scenario(text: &str) -> Result<NodeConfig, ScenarioError> {
    parse_with_corpus(text, &Corpus::bundled())
}

pub fn parse_with_corpus(text: &str, corpus: &Corpus) -> Result<NodeConfig, ScenarioError> {
    let raw: RawFile = toml::from_str(text).map_err(|e| ScenarioError {
        issues: vec![ScenarioIssue {
            line: e.span().map(|s| line_of(text, s.start)).unwrap_or(1),
            message: e.message().to_string(),
        }],
    })?;
    let mut issues = Issues {
        text,
        list: Vec::new(),
    };

    let node_span = raw.node.span();
    let node = raw.node.into_inner();
    if node.sample_period_ms == 0 {
        issues.at(node_span.clone(), "sample_period_ms must be positive");
    } else if node.transmit_period_ms == 0 || !node.transmit_period_ms.is_multiple_of(node.sample_period_ms) {
        issues.at(
            node_span.clone(),
            "transmit_period_ms must be a positive multiple of sample_period_ms",
        );
    }

    let replay = raw.replay.and_then(|spanned| {
        let span = spanned.span();
        let r = spanned.into_inner();
        let hours = r.hours.unwrap_or_else(|| corpus.hours(r.participant));
        if !(r.compression > 0.0 && r.compression.is_finite()) {
            issues.at(span.clone(), "compression must be a positive number");
            return None;
        }
        if hours.is_empty() {
            issues.at(span, format!("participant {} is not in the corpus", r.participant));
            return None;
        }
        let mut rows = Vec::with_capacity(hours.len());
        for hour in hours {
            match corpus.row(r.participant, hour) {
                Some(row) => rows.push(*row),
                None => issues.at(
                    span.clone(),
                    format!("participant {} hour {hour} is not in the corpus", r.participant),
                ),
            }
        }
        let spec = ReplaySpec {
            participant: r.participant,
            rows,
            compression: r.compression,
        };
        if spec.hour_len_ms() < node.transmit_period_ms as Millis {
            issues.at(span, "compression leaves less than one transmit period per hour");
        }
        Some(spec)
    });

    let mut signals: [SignalSource; 5] = std::array::from_fn(|i| {
        if replay.is_some() {
            SignalSource::Replay
        } else {
            SignalSource::Constant(neutral_value(Parameter::ALL[i]))
        }
    });
    for (name, spanned) in raw.signal {
        let name_span = name.span();
        let parameter: Parameter = match name.get_ref().parse() {
            Ok(p) => p,
            Err(_) => {
                issues.at(name_span, format!("unknown parameter {:?}", name.get_ref()));
                continue;
            }
        };
        let span = spanned.span();
        let sig = spanned.into_inner();
        let kind_span = sig.kind.span();
        let source = match sig.kind.get_ref().as_str() {
            "constant" => match sig.value {
                Some(v) => Some(SignalSource::Constant(v)),
                None => {
                    issues.at(span, "constant signal needs `value`");
                    None
                }
            },
            "track" => match sig.points.map(points_to_track) {
                Some(Ok(track)) => Some(SignalSource::Track(track)),
                Some(Err(e)) => {
                    issues.at(span, e);
                    None
                }
                None => {
                    issues.at(span, "track signal needs `points`");
                    None
                }
            },
            "replay" => {
                if replay.is_none() {
                    issues.at(span, "replay signal needs a [replay] section");
                }
                Some(SignalSource::Replay)
            }
            "ppg" => {
                if parameter != Parameter::HeartRate {
                    issues.at(span.clone(), "ppg signals only drive heart_rate");
                }
                let bpm = match (sig.value, sig.points) {
                    (Some(v), None) => Ok(Track::constant(v)),
                    (None, Some(points)) => points_to_track(points),
                    _ => Err("ppg signal needs exactly one of `value` or `points`"),
                };
                let rate = sig.sample_rate_hz.unwrap_or(100.0);
                let noise = sig.noise.unwrap_or(0.0);
                if !(rate > 0.0) || rate * node.sample_period_ms as f64 % 1000.0 != 0.0 {
                    issues.at(
                        span.clone(),
                        "sample_rate_hz must give a whole number of samples per sample period",
                    );
                }
                if !(noise >= 0.0) {
                    issues.at(span.clone(), "noise must be non-negative");
                }
                match bpm {
                    Ok(bpm) => Some(SignalSource::Ppg {
                        bpm,
                        sample_rate_hz: rate,
                        noise,
                    }),
                    Err(e) => {
                        issues.at(span, e);
                        None
                    }
                }
            }
            other => {
                issues.at(kind_span, format!("unknown signal kind {other:?}"));
                None
            }
        };
        if let Some(source) = source {
            signals[parameter.index()] = source;
        }
    }

    let mut faults = Vec::new();
    for spanned in raw.fault {
        let span = spanned.span();
        let f = spanned.into_inner();
        let need_seq = |issues: &mut Issues, seq: Option<u16>| {
            if seq.is_none() {
                issues.at(span.clone(), format!("{} fault needs `seq`", f.kind.get_ref()));
            }
            seq.unwrap_or(0)
        };
        match f.kind.get_ref().as_str() {
            "drop_frame" => {
                let seq = need_seq(&mut issues, f.seq);
                faults.push(FaultSpec::DropFrame { seq });
            }
            "corrupt_byte" => {
                let seq = need_seq(&mut issues, f.seq);
                let offset = f.offset.unwrap_or(DEFAULT_CORRUPT_OFFSET);
                if offset >= FRAME_LEN {
                    issues.at(span.clone(), format!("offset must be below {FRAME_LEN}"));
                }
                faults.push(FaultSpec::CorruptByte { seq, offset });
            }
            "sensor_fault" => {
                let parameter = match f.parameter.as_deref().map(str::parse::<Parameter>) {
                    None => None,
                    Some(Ok(p)) => Some(p),
                    Some(Err(e)) => {
                        issues.at(span.clone(), e.to_string());
                        None
                    }
                };
                let from_ms = f.from_ms.unwrap_or(0);
                let to_ms = f.to_ms.unwrap_or(Millis::MAX);
                if from_ms >= to_ms {
                    issues.at(span.clone(), "from_ms must be before to_ms");
                }
                faults.push(FaultSpec::SensorFault {
                    parameter,
                    from_ms,
                    to_ms,
                });
            }
            other => issues.at(f.kind.span(), format!("unknown fault kind {other:?}")),
        }
    }

    let local_thresholds = match raw.thresholds {
        None => default_profile(ADULT_DEFAULT_AGE),
        Some(spanned) => {
            let span = spanned.span();
            let t = spanned.into_inner();
            match t.preset.as_str() {
                "default" => default_profile(t.age_years.unwrap_or(ADULT_DEFAULT_AGE)),
                "open" => ThresholdProfile::open(),
                other => {
                    issues.at(span, format!("unknown threshold preset {other:?}"));
                    ThresholdProfile::open()
                }
            }
        }
    };

    let mut alert_map = AlertMap::default();
    if let Some(spanned) = raw.alerts {
        let span = spanned.span();
        let a = spanned.into_inner();
        let mut names = |list: Option<Vec<String>>, current: Vec<Parameter>| match list {
            None => current,
            Some(list) => list
                .iter()
                .filter_map(|n| match n.parse::<Parameter>() {
                    Ok(p) => Some(p),
                    Err(e) => {
                        issues.at(span.clone(), e.to_string());
                        None
                    }
                })
                .collect(),
        };
        alert_map = AlertMap {
            buzzer: names(a.buzzer, alert_map.buzzer),
            led: names(a.led, alert_map.led),
            message: names(a.message, alert_map.message),
        };
    }

    let mq135 = raw.mq135.unwrap_or_default();
    if let Err(e) = mq135.validate() {
        let at = text.find("[mq135]").unwrap_or(0);
        issues.at(at..at, e.to_string());
    }

    let duration_ms = match (&replay, node.duration_ms) {
        (Some(spec), None) => spec.hour_len_ms() * spec.rows.len() as Millis,
        (_, Some(d)) if d >= 0 => d,
        (_, Some(_)) => {
            issues.at(node_span.clone(), "duration_ms must be non-negative");
            0
        }
        (None, None) => {
            issues.at(node_span.clone(), "duration_ms is required without a [replay] section");
            0
        }
    };

    if !issues.list.is_empty() {
        issues.list.sort_by_key(|i| i.line);
        return Err(ScenarioError { issues: issues.list });
    }

    let wire = node.wire.unwrap_or(if node.realistic {
        WirePrecision::Standard
    } else {
        WirePrecision::Extended
    });
    Ok(NodeConfig {
        node_id: NodeId(node.node_id),
        sample_period_ms: node.sample_period_ms,
        transmit_period_ms: node.transmit_period_ms,
        rng_seed: node.rng_seed,
        local_alert_thresholds: local_thresholds,
        alert_map,
        realistic: node.realistic,
        wire,
        mq135,
        scenario: Scenario {
            signals,
            replay,
            duration_ms,
            faults,
        },
    })
}

fn points_to_track(points: Vec<(f64, f64)>) -> Result<Track, &'static str> {
    if points.iter().any(|(t, _)| t.fract() != 0.0) {
        return Err("track times are whole milliseconds");
    }
    Track::new(points.into_iter().map(|(t, v)| (t as Millis, v)).collect())
}

/// Resting value used for parameters a scenario leaves unspecified.
pub fn neutral_value(parameter: Parameter) -> f64 {
    match parameter {
        Parameter::BodyTemp => 36.6,
        Parameter::AmbientTemp => 27.8,
        Parameter::Humidity => 50.0,
        Parameter::AirQuality => 150.0,
        Parameter::HeartRate => 72.0,
    }
}
