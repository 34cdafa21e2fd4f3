//! Shared vocabulary: measured parameters, samples, severity levels and the
//! bundled reference tables (air-quality categories, normal heart-rate bands,
//! study participants).

mod reference;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fixed::Centi;

pub use reference::{
    aqi_bands, aqi_category, heart_rate_bands, normal_hr_range, normal_hr_range_months,
    participant, participants, AgeRange, AqiBand, AqiCategory, AqiReading, BpmRange,
    HeartRateBand, ParticipantProfile,
};

/// Milliseconds since the Unix epoch (UTC).
pub type Millis = i64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u16);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl FromStr for NodeId {
    type Err = std::num::ParseIntError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.parse().map(NodeId)
    }
}

/// The five monitored quantities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parameter {
    BodyTemp,
    AmbientTemp,
    Humidity,
    AirQuality,
    HeartRate,
}

impl Parameter {
    pub const ALL: [Parameter; 5] = [
        Parameter::BodyTemp,
        Parameter::AmbientTemp,
        Parameter::Humidity,
        Parameter::AirQuality,
        Parameter::HeartRate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Parameter::BodyTemp => "body_temp",
            Parameter::AmbientTemp => "ambient_temp",
            Parameter::Humidity => "humidity",
            Parameter::AirQuality => "air_quality",
            Parameter::HeartRate => "heart_rate",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            Parameter::BodyTemp | Parameter::AmbientTemp => "°C",
            Parameter::Humidity => "%",
            Parameter::AirQuality => "ppm",
            Parameter::HeartRate => "bpm",
        }
    }

    /// Inclusive physical range accepted by [`validate_sample`].
    pub fn valid_range(self) -> (Centi, Centi) {
        match self {
            Parameter::BodyTemp | Parameter::AmbientTemp => {
                (Centi::from_units(-40), Centi::from_units(125))
            }
            Parameter::Humidity => (Centi::ZERO, Centi::from_units(100)),
            Parameter::AirQuality => (Centi::ZERO, Centi::from_hundredths(655_350)),
            Parameter::HeartRate => (Centi::ZERO, Centi::from_units(255)),
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Parameter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown parameter {0:?}")]
pub struct UnknownParameter(pub String);

impl FromStr for Parameter {
    type Err = UnknownParameter;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let normalized = s.trim().to_ascii_lowercase().replace('-', "_");
        Parameter::ALL
            .into_iter()
            .find(|p| p.name() == normalized)
            .ok_or_else(|| UnknownParameter(s.to_string()))
    }
}

/// Device-side status bits carried with every sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct DeviceFlags(u8);

impl DeviceFlags {
    pub const BUZZER_ON: DeviceFlags = DeviceFlags(0b001);
    pub const LED_ON: DeviceFlags = DeviceFlags(0b010);
    pub const SENSOR_FAULT: DeviceFlags = DeviceFlags(0b100);
    pub const KNOWN_BITS: u8 = 0b111;

    const NAMES: [(DeviceFlags, &'static str); 3] = [
        (DeviceFlags::BUZZER_ON, "BUZZER_ON"),
        (DeviceFlags::LED_ON, "LED_ON"),
        (DeviceFlags::SENSOR_FAULT, "SENSOR_FAULT"),
    ];

    pub const fn empty() -> Self {
        DeviceFlags(0)
    }

    /// Keeps only the defined bits.
    pub const fn from_bits_truncate(bits: u8) -> Self {
        DeviceFlags(bits & Self::KNOWN_BITS)
    }

    pub const fn bits(self) -> u8 {
        self.0
    }

    pub const fn contains(self, other: DeviceFlags) -> bool {
        self.0 & other.0 == other.0
    }

    pub fn insert(&mut self, other: DeviceFlags) {
        self.0 |= other.0;
    }

    pub fn remove(&mut self, other: DeviceFlags) {
        self.0 &= !other.0;
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }
}

impl std::ops::BitOr for DeviceFlags {
    type Output = DeviceFlags;
    fn bitor(self, rhs: DeviceFlags) -> DeviceFlags {
        DeviceFlags(self.0 | rhs.0)
    }
}

impl Serialize for DeviceFlags {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeSeq;
        let names: Vec<&str> = Self::NAMES
            .iter()
            .filter(|(flag, _)| self.contains(*flag))
            .map(|(_, name)| *name)
            .collect();
        let mut seq = serializer.serialize_seq(Some(names.len()))?;
        for name in names {
            seq.serialize_element(name)?;
        }
        seq.end()
    }
}

impl<'de> Deserialize<'de> for DeviceFlags {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let names = Vec::<String>::deserialize(deserializer)?;
        let mut flags = DeviceFlags::empty();
        for name in names {
            let (flag, _) = Self::NAMES
                .iter()
                .find(|(_, n)| *n == name)
                .ok_or_else(|| serde::de::Error::custom(format!("unknown flag {name:?}")))?;
            flags.insert(*flag);
        }
        Ok(flags)
    }
}

/// Field set as it comes off the wire, before range validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawReading {
    pub node_id: NodeId,
    pub seq: u16,
    pub body_temp: Centi,
    pub ambient_temp: Centi,
    pub humidity: Centi,
    pub air_quality: Centi,
    pub heart_rate: i32,
    pub flags: DeviceFlags,
}

impl RawReading {
    pub fn value(&self, parameter: Parameter) -> Centi {
        match parameter {
            Parameter::BodyTemp => self.body_temp,
            Parameter::AmbientTemp => self.ambient_temp,
            Parameter::Humidity => self.humidity,
            Parameter::AirQuality => self.air_quality,
            Parameter::HeartRate => Centi::from_units(self.heart_rate as i64),
        }
    }
}

/// One validated, gateway-stamped set of the five parameters for one node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VitalsSample {
    pub node_id: NodeId,
    pub seq: u16,
    pub body_temp: Centi,
    pub ambient_temp: Centi,
    pub humidity: Centi,
    pub air_quality: Centi,
    pub heart_rate: u8,
    pub flags: DeviceFlags,
    pub received_at: Millis,
}

impl VitalsSample {
    pub fn value(&self, parameter: Parameter) -> Centi {
        match parameter {
            Parameter::BodyTemp => self.body_temp,
            Parameter::AmbientTemp => self.ambient_temp,
            Parameter::Humidity => self.humidity,
            Parameter::AirQuality => self.air_quality,
            Parameter::HeartRate => Centi::from_units(self.heart_rate as i64),
        }
    }

    /// Parameters the device reported as unreadable: with `SENSOR_FAULT` set,
    /// a faulted sensor reports zero in its own field.
    pub fn faulted_parameters(&self) -> Vec<Parameter> {
        if !self.flags.contains(DeviceFlags::SENSOR_FAULT) {
            return Vec::new();
        }
        Parameter::ALL
            .into_iter()
            .filter(|p| self.value(*p) == Centi::ZERO)
            .collect()
    }

    pub fn raw(&self) -> RawReading {
        RawReading {
            node_id: self.node_id,
            seq: self.seq,
            body_temp: self.body_temp,
            ambient_temp: self.ambient_temp,
            humidity: self.humidity,
            air_quality: self.air_quality,
            heart_rate: self.heart_rate as i32,
            flags: self.flags,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub parameter: Parameter,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

/// Checks every range invariant and reports all violations at once.
pub fn validate_sample(raw: &RawReading, received_at: Millis) -> Result<VitalsSample, Vec<Violation>> {
    let violations: Vec<Violation> = Parameter::ALL
        .into_iter()
        .filter_map(|parameter| {
            let (lo, hi) = parameter.valid_range();
            let value = raw.value(parameter);
            let in_range = if parameter == Parameter::HeartRate {
                (0..=255).contains(&raw.heart_rate)
            } else {
                lo <= value && value <= hi
            };
            (!in_range).then(|| Violation {
                parameter,
                message: format!("{parameter} out of range"),
            })
        })
        .collect();
    if !violations.is_empty() {
        return Err(violations);
    }
    Ok(VitalsSample {
        node_id: raw.node_id,
        seq: raw.seq,
        body_temp: raw.body_temp,
        ambient_temp: raw.ambient_temp,
        humidity: raw.humidity,
        air_quality: raw.air_quality,
        heart_rate: raw.heart_rate as u8,
        flags: raw.flags,
        received_at,
    })
}

/// Green / yellow / red in the monitoring views.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Normal,
    Moderate,
    Emergency,
}

impl Severity {
    pub const ALL: [Severity; 3] = [Severity::Normal, Severity::Moderate, Severity::Emergency];

    pub fn color(self) -> &'static str {
        match self {
            Severity::Normal => "green",
            Severity::Moderate => "yellow",
            Severity::Emergency => "red",
        }
    }
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Severity::Normal => "normal",
            Severity::Moderate => "moderate",
            Severity::Emergency => "emergency",
        })
    }
}
