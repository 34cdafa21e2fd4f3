//! Hourly study data for five participants over six hours, plus the published
//! per-participant averages used as golden values.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::Parameter;
use crate::fixed::Centi;

pub const BUNDLED_CORPUS: &str = include_str!("../corpus/tables_5_9.csv");
pub const BUNDLED_AVERAGES: &str = include_str!("../corpus/published_averages.csv");

pub const CORPUS_HEADER: [&str; 7] = [
    "participant",
    "hour",
    "body_temp_c",
    "heart_rate_bpm",
    "ambient_temp_c",
    "humidity_pct",
    "air_ppm",
];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("reading corpus: {0}")]
    Io(#[from] std::io::Error),
    #[error("corpus csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("line {line}: unexpected header {found:?}")]
    Header { line: u64, found: Vec<String> },
    #[error("line {line}, column {column}: {reason}")]
    Cell {
        line: u64,
        column: String,
        reason: String,
    },
    #[error("participant {participant} hour {hour} appears more than once")]
    Duplicate { participant: u8, hour: u8 },
}

/// Column name of a parameter in the corpus files.
pub fn column_name(parameter: Parameter) -> &'static str {
    match parameter {
        Parameter::BodyTemp => "body_temp_c",
        Parameter::HeartRate => "heart_rate_bpm",
        Parameter::AmbientTemp => "ambient_temp_c",
        Parameter::Humidity => "humidity_pct",
        Parameter::AirQuality => "air_ppm",
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRow {
    pub participant: u8,
    pub hour: u8,
    pub body_temp: Centi,
    pub heart_rate: u8,
    pub ambient_temp: Centi,
    pub humidity: Centi,
    pub air_quality: Centi,
}

impl CorpusRow {
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

/// Rows keyed by (participant, hour).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    rows: BTreeMap<(u8, u8), CorpusRow>,
}

impl Corpus {
    pub fn bundled() -> Corpus {
        Corpus::parse(BUNDLED_CORPUS).expect("bundled corpus is well-formed")
    }

    pub fn load(path: &Path) -> Result<Corpus, CorpusError> {
        Corpus::parse(&std::fs::read_to_string(path)?)
    }

    pub fn parse(text: &str) -> Result<Corpus, CorpusError> {
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
        if header != CORPUS_HEADER {
            return Err(CorpusError::Header { line: 1, found: header });
        }
        let mut rows = BTreeMap::new();
        for record in reader.records() {
            let record = record?;
            let line = record.position().map(|p| p.line()).unwrap_or(0);
            let cell = |column: usize| -> &str { record.get(column).unwrap_or("") };
            let bad = |column: usize, reason: String| CorpusError::Cell {
                line,
                column: CORPUS_HEADER[column].to_string(),
                reason,
            };
            let small_int = |column: usize| -> Result<u8, CorpusError> {
                cell(column)
                    .trim()
                    .parse::<u8>()
                    .map_err(|e| bad(column, format!("{:?}: {e}", cell(column))))
            };
            let decimal = |column: usize| -> Result<Centi, CorpusError> {
                cell(column).parse::<Centi>().map_err(|e| bad(column, e.to_string()))
            };
            let row = CorpusRow {
                participant: small_int(0)?,
                hour: small_int(1)?,
                body_temp: decimal(2)?,
                heart_rate: small_int(3)?,
                ambient_temp: decimal(4)?,
                humidity: decimal(5)?,
                air_quality: decimal(6)?,
            };
            if row.hour == 0 {
                return Err(bad(1, "hours are numbered from 1".into()));
            }
            if rows.insert((row.participant, row.hour), row).is_some() {
                return Err(CorpusError::Duplicate {
                    participant: row.participant,
                    hour: row.hour,
                });
            }
        }
        Ok(Corpus { rows })
    }

    pub fn rows(&self) -> impl Iterator<Item = &CorpusRow> {
        self.rows.values()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, participant: u8, hour: u8) -> Option<&CorpusRow> {
        self.rows.get(&(participant, hour))
    }

    pub fn participants(&self) -> Vec<u8> {
        let mut ids: Vec<u8> = self.rows.keys().map(|(p, _)| *p).collect();
        ids.dedup();
        ids
    }

    /// Hours available for one participant, ascending.
    pub fn hours(&self, participant: u8) -> Vec<u8> {
        self.rows
            .range((participant, 0)..=(participant, u8::MAX))
            .map(|((_, h), _)| *h)
            .collect()
    }
}

/// Published per-participant averages, and the published all-participant mean
/// where one exists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PublishedAverages {
    pub persons: Vec<u8>,
    pub averages: BTreeMap<Parameter, Vec<Centi>>,
    pub all_persons: BTreeMap<Parameter, Centi>,
}

impl PublishedAverages {
    pub fn bundled() -> PublishedAverages {
        PublishedAverages::parse(BUNDLED_AVERAGES).expect("bundled averages are well-formed")
    }

    pub fn parse(text: &str) -> Result<PublishedAverages, CorpusError> {
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
        let persons: Vec<u8> = header
            .iter()
            .filter_map(|h| h.strip_prefix("person_").and_then(|n| n.parse().ok()))
            .collect();
        if header.first().map(String::as_str) != Some("quantity")
            || header.last().map(String::as_str) != Some("all_persons")
            || persons.len() + 2 != header.len()
        {
            return Err(CorpusError::Header { line: 1, found: header });
        }
        let mut averages = BTreeMap::new();
        let mut all_persons = BTreeMap::new();
        for record in reader.records() {
            let record = record?;
            let line = record.position().map(|p| p.line()).unwrap_or(0);
            let quantity = record.get(0).unwrap_or("");
            let parameter = Parameter::ALL
                .into_iter()
                .find(|p| column_name(*p) == quantity)
                .ok_or_else(|| CorpusError::Cell {
                    line,
                    column: "quantity".into(),
                    reason: format!("unknown quantity {quantity:?}"),
                })?;
            let mut values = Vec::with_capacity(persons.len());
            for (i, column) in header.iter().enumerate().skip(1).take(persons.len()) {
                let value = record
                    .get(i)
                    .unwrap_or("")
                    .parse::<Centi>()
                    .map_err(|e| CorpusError::Cell {
                        line,
                        column: column.clone(),
                        reason: e.to_string(),
                    })?;
                values.push(value);
            }
            averages.insert(parameter, values);
            let all = record.get(header.len() - 1).unwrap_or("").trim();
            if !all.is_empty() {
                let value = all.parse::<Centi>().map_err(|e| CorpusError::Cell {
                    line,
                    column: "all_persons".into(),
                    reason: e.to_string(),
                })?;
                all_persons.insert(parameter, value);
            }
        }
        Ok(PublishedAverages {
            persons,
            averages,
            all_persons,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{validate_sample, DeviceFlags, NodeId, RawReading};

    #[test]
    fn bundled_corpus_has_thirty_rows() {
        let corpus = Corpus::bundled();
        assert_eq!(corpus.len(), 30);
        assert_eq!(corpus.participants(), vec![1, 2, 3, 4, 5]);
        for p in 1..=5 {
            assert_eq!(corpus.hours(p), vec![1, 2, 3, 4, 5, 6]);
        }
        let first = corpus.row(1, 1).unwrap();
        assert_eq!(first.body_temp.to_string(), "34.19");
        assert_eq!(first.heart_rate, 68);
        assert_eq!(first.ambient_temp.to_string(), "31.17");
        assert_eq!(first.humidity.to_string(), "73.51");
        assert_eq!(first.air_quality.to_string(), "389.44");
        let last = corpus.row(5, 6).unwrap();
        assert_eq!(last.air_quality.to_string(), "390.67");
    }

    #[test]
    fn every_row_is_a_valid_sample() {
        for row in Corpus::bundled().rows() {
            let raw = RawReading {
                node_id: NodeId(row.participant as u16),
                seq: row.hour as u16,
                body_temp: row.body_temp,
                ambient_temp: row.ambient_temp,
                humidity: row.humidity,
                air_quality: row.air_quality,
                heart_rate: row.heart_rate as i32,
                flags: DeviceFlags::empty(),
            };
            validate_sample(&raw, 0).unwrap();
        }
    }

    #[test]
    fn bad_cells_are_located() {
        let text = "participant,hour,body_temp_c,heart_rate_bpm,ambient_temp_c,humidity_pct,air_ppm\n\
                    1,1,34.19,68,31.17,7x.51,389.44\n";
        match Corpus::parse(text).unwrap_err() {
            CorpusError::Cell { line, column, .. } => {
                assert_eq!(line, 2);
                assert_eq!(column, "humidity_pct");
            }
            other => panic!("unexpected {other}"),
        }
        let dup = "participant,hour,body_temp_c,heart_rate_bpm,ambient_temp_c,humidity_pct,air_ppm\n\
                   1,1,34.19,68,31.17,73.51,389.44\n1,1,34.19,68,31.17,73.51,389.44\n";
        assert!(matches!(Corpus::parse(dup), Err(CorpusError::Duplicate { .. })));
        assert!(matches!(Corpus::parse("a,b\n1,2\n"), Err(CorpusError::Header { .. })));
    }

    #[test]
    fn published_averages() {
        let published = PublishedAverages::bundled();
        assert_eq!(published.persons, vec![1, 2, 3, 4, 5]);
        let hr: Vec<String> = published.averages[&Parameter::HeartRate]
            .iter()
            .map(|c| c.to_string())
            .collect();
        assert_eq!(hr, ["71.00", "85.00", "73.00", "88.00", "95.00"]);
        assert_eq!(published.all_persons[&Parameter::Humidity].to_string(), "79.27");
        assert_eq!(published.all_persons.len(), 1);
    }
}
