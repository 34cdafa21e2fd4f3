//! Reference tables shipped as versioned CSV files under `data/`.

use std::fmt;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::fixed::Centi;

const AQI_CSV: &str = include_str!("../../data/aqi_categories.v1.csv");
const HEART_RATE_CSV: &str = include_str!("../../data/heart_rate_ranges.v1.csv");
const PARTICIPANTS_CSV: &str = include_str!("../../data/participants.v1.csv");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AqiCategory {
    Good,
    Satisfactory,
    Moderate,
    Poor,
    VeryPoor,
    Severe,
}

impl AqiCategory {
    pub const ALL: [AqiCategory; 6] = [
        AqiCategory::Good,
        AqiCategory::Satisfactory,
        AqiCategory::Moderate,
        AqiCategory::Poor,
        AqiCategory::VeryPoor,
        AqiCategory::Severe,
    ];

    pub fn label(self) -> &'static str {
        match self {
            AqiCategory::Good => "Good",
            AqiCategory::Satisfactory => "Satisfactory",
            AqiCategory::Moderate => "Moderate",
            AqiCategory::Poor => "Poor",
            AqiCategory::VeryPoor => "Very poor",
            AqiCategory::Severe => "Severe",
        }
    }

    fn from_label(label: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.label() == label)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AqiBand {
    pub category: AqiCategory,
    pub index_min: u32,
    pub index_max: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AqiReading {
    pub category: AqiCategory,
    /// Reading rounded above the top of the scale and clamped to `Severe`.
    pub out_of_scale: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("air-quality reading {0} is negative")]
pub struct NegativeAirQuality(pub Centi);

pub fn aqi_bands() -> &'static [AqiBand] {
    static BANDS: OnceLock<Vec<AqiBand>> = OnceLock::new();
    BANDS.get_or_init(|| {
        #[derive(Deserialize)]
        struct Row {
            category: String,
            index_min: u32,
            index_max: u32,
        }
        csv::Reader::from_reader(AQI_CSV.as_bytes())
            .deserialize::<Row>()
            .map(|row| {
                let row = row.expect("bundled AQI table is well-formed");
                AqiBand {
                    category: AqiCategory::from_label(&row.category)
                        .expect("bundled AQI table uses known labels"),
                    index_min: row.index_min,
                    index_max: row.index_max,
                }
            })
            .collect()
    })
}

/// Category of a ppm reading, applying the index bands directly to the
/// rounded (half-up) reading.
pub fn aqi_category(ppm: Centi) -> Result<AqiReading, NegativeAirQuality> {
    if ppm < Centi::ZERO {
        return Err(NegativeAirQuality(ppm));
    }
    let index = ppm.round_units();
    let bands = aqi_bands();
    let top = bands.last().expect("AQI table is not empty");
    if index > top.index_max as i64 {
        return Ok(AqiReading {
            category: top.category,
            out_of_scale: true,
        });
    }
    let band = bands
        .iter()
        .find(|b| (b.index_min as i64..=b.index_max as i64).contains(&index))
        .expect("AQI bands cover 0..=500 contiguously");
    Ok(AqiReading {
        category: band.category,
        out_of_scale: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BpmRange {
    pub min: u16,
    pub max: u16,
}

impl BpmRange {
    pub fn contains(&self, bpm: u16) -> bool {
        (self.min..=self.max).contains(&bpm)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeartRateBand {
    pub label: String,
    pub age_min_months: u32,
    /// `None` for the open-ended adult row.
    pub age_max_months: Option<u32>,
    pub range: BpmRange,
}

impl HeartRateBand {
    fn contains_months(&self, months: u32) -> bool {
        months >= self.age_min_months && self.age_max_months.is_none_or(|max| months <= max)
    }
}

pub fn heart_rate_bands() -> &'static [HeartRateBand] {
    static BANDS: OnceLock<Vec<HeartRateBand>> = OnceLock::new();
    BANDS.get_or_init(|| {
        #[derive(Deserialize)]
        struct Row {
            age_band: String,
            age_min_months: u32,
            age_max_months: Option<u32>,
            bpm_min: u16,
            bpm_max: u16,
        }
        csv::Reader::from_reader(HEART_RATE_CSV.as_bytes())
            .deserialize::<Row>()
            .map(|row| {
                let row = row.expect("bundled heart-rate table is well-formed");
                HeartRateBand {
                    label: row.age_band,
                    age_min_months: row.age_min_months,
                    age_max_months: row.age_max_months,
                    range: BpmRange {
                        min: row.bpm_min,
                        max: row.bpm_max,
                    },
                }
            })
            .collect()
    })
}

/// Normal resting range for an age in months. Upper bounds are inclusive and
/// the first matching row wins.
pub fn normal_hr_range_months(age_months: u32) -> BpmRange {
    heart_rate_bands()
        .iter()
        .find(|band| band.contains_months(age_months))
        .map(|band| band.range)
        .expect("heart-rate bands cover every age")
}

/// Normal resting range for a whole-year age. Age 0 resolves to the newborn
/// row; 17 and over resolve to the adult row.
pub fn normal_hr_range(age_years: u32) -> BpmRange {
    normal_hr_range_months(age_years.saturating_mul(12))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgeRange {
    pub min: u32,
    /// `None` for an open-ended range such as "50+".
    pub max: Option<u32>,
}

impl fmt::Display for AgeRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.max {
            Some(max) => write!(f, "{}-{}", self.min, max),
            None => write!(f, "{}+", self.min),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParticipantProfile {
    pub participant_id: u8,
    pub label: String,
    pub age_range: AgeRange,
    pub gender: String,
    pub health_status: String,
}

impl ParticipantProfile {
    /// Lower end of the age range, used when deriving age-based thresholds.
    pub fn representative_age(&self) -> u32 {
        self.age_range.min
    }
}

pub fn participants() -> &'static [ParticipantProfile] {
    static PROFILES: OnceLock<Vec<ParticipantProfile>> = OnceLock::new();
    PROFILES.get_or_init(|| {
        #[derive(Deserialize)]
        struct Row {
            participant: String,
            age_min: u32,
            age_max: Option<u32>,
            gender: String,
            health_status: String,
        }
        csv::Reader::from_reader(PARTICIPANTS_CSV.as_bytes())
            .deserialize::<Row>()
            .enumerate()
            .map(|(i, row)| {
                let row = row.expect("bundled participant table is well-formed");
                if let Some(max) = row.age_max {
                    assert!(row.age_min <= max, "age range inverted for {}", row.participant);
                }
                ParticipantProfile {
                    participant_id: (i + 1) as u8,
                    label: row.participant,
                    age_range: AgeRange {
                        min: row.age_min,
                        max: row.age_max,
                    },
                    gender: row.gender,
                    health_status: row.health_status,
                }
            })
            .collect()
    })
}

pub fn participant(id: u8) -> Option<&'static ParticipantProfile> {
    participants().iter().find(|p| p.participant_id == id)
}
