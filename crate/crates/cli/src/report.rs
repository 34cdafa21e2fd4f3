//! Table files and corpus validation behind `report tables` and
//! `corpus validate`.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use breathwatch_core::analytics::{
    aggregate_hourly, chart_series, format_value, grand_mean, series_csv, table_report, AnalyticsError,
    HourBuckets, PersonHours, TableReport,
};
use breathwatch_core::corpus::{Corpus, PublishedAverages};
use breathwatch_core::domain::{NodeId, Parameter};
use breathwatch_core::rules::SampleRecord;

/// Tables in publication order.
pub const TABLE_ORDER: [Parameter; 5] = [
    Parameter::BodyTemp,
    Parameter::HeartRate,
    Parameter::AmbientTemp,
    Parameter::Humidity,
    Parameter::AirQuality,
];

/// Hourly means per node, with hour 1 starting at each node's first record.
/// Node ids above 255 have no participant slot and are skipped.
pub fn store_hours(records: &BTreeMap<NodeId, Vec<SampleRecord>>) -> Result<PersonHours, AnalyticsError> {
    let mut out = PersonHours::new();
    for (node, records) in records {
        let (Ok(person), Some(first)) = (u8::try_from(node.0), records.first()) else {
            continue;
        };
        let buckets = HourBuckets::hourly_from(first.sample.received_at);
        let hours = aggregate_hourly(records.iter().map(|r| &r.sample), buckets)?;
        if !hours.is_empty() {
            out.insert(person, hours);
        }
    }
    Ok(out)
}

pub fn table_file(parameter: Parameter) -> String {
    format!("table_{parameter}.csv")
}

pub fn series_file(parameter: Parameter) -> String {
    format!("series_{parameter}.csv")
}

pub fn view_file(parameter: Parameter) -> String {
    format!("table_{parameter}.json")
}

#[derive(Debug)]
pub struct WrittenTable {
    pub report: TableReport,
    pub table_path: PathBuf,
    pub series_path: PathBuf,
    pub view_path: PathBuf,
}

/// Writes `table_<parameter>.csv`, `series_<parameter>.csv` and the
/// structured `table_<parameter>.json` per parameter.
pub fn write_tables(
    data: &PersonHours,
    parameters: &[Parameter],
    hours: &[i64],
    out_dir: &Path,
) -> io::Result<Vec<WrittenTable>> {
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    for parameter in parameters {
        let report = table_report(*parameter, data, hours);
        let table_path = out_dir.join(table_file(*parameter));
        let series_path = out_dir.join(series_file(*parameter));
        fs::write(&table_path, report.to_csv())?;
        let view_path = out_dir.join(view_file(*parameter));
        fs::write(&series_path, series_csv(*parameter, &chart_series(&report, None)))?;
        let mut view = serde_json::to_string_pretty(&report.to_view()).map_err(io::Error::other)?;
        view.push('\n');
        fs::write(&view_path, view)?;
        written.push(WrittenTable {
            report,
            table_path,
            series_path,
            view_path,
        });
    }
    Ok(written)
}

/// One disagreement found by [`validate_corpus`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mismatch {
    pub location: String,
    pub found: String,
    pub expected: String,
}

impl fmt::Display for Mismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: found {}, expected {}", self.location, self.found, self.expected)
    }
}

/// Checks every hourly cell against `reference`, then recomputes every
/// Average row and the grand means from `corpus` and compares them with
/// `published`.
pub fn validate_corpus(corpus: &Corpus, reference: &Corpus, published: &PublishedAverages) -> Vec<Mismatch> {
    let mut out = Vec::new();
    for want in reference.rows() {
        let place = |p: Parameter| format!("person {} hour {} {p}", want.participant, want.hour);
        match corpus.row(want.participant, want.hour) {
            None => out.push(Mismatch {
                location: format!("person {} hour {}", want.participant, want.hour),
                found: "no row".into(),
                expected: "a row".into(),
            }),
            Some(got) => {
                for p in Parameter::ALL {
                    if got.value(p) != want.value(p) {
                        out.push(Mismatch {
                            location: place(p),
                            found: format_value(p, got.value(p)),
                            expected: format_value(p, want.value(p)),
                        });
                    }
                }
            }
        }
    }
    for row in corpus.rows() {
        if reference.row(row.participant, row.hour).is_none() {
            out.push(Mismatch {
                location: format!("person {} hour {}", row.participant, row.hour),
                found: "a row".into(),
                expected: "no row".into(),
            });
        }
    }

    let data = breathwatch_core::analytics::corpus_hours(corpus);
    let hours: Vec<i64> = (1..=6).collect();
    for parameter in TABLE_ORDER {
        let report = table_report(parameter, &data, &hours);
        if let Some(values) = published.averages.get(&parameter) {
            for (person, want) in published.persons.iter().zip(values) {
                let got = report.average(*person);
                if got != Some(*want) {
                    out.push(Mismatch {
                        location: format!("{parameter} average person {person}"),
                        found: got.map_or("nothing".into(), |v| format_value(parameter, v)),
                        expected: format_value(parameter, *want),
                    });
                }
            }
        }
        if let Some(want) = published.all_persons.get(&parameter) {
            let got = grand_mean(&report, &published.persons);
            if got != Some(*want) {
                out.push(Mismatch {
                    location: format!("{parameter} mean over all persons"),
                    found: got.map_or("nothing".into(), |v| v.to_string()),
                    expected: want.to_string(),
                });
            }
        }
    }
    out
}
