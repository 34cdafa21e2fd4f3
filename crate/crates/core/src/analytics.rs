//! Hourly aggregation and the per-parameter participant tables.
//!
//! Means are exact rationals over hundredths. Rounding (half-up, two decimals
//! for continuous parameters and whole beats for heart rate) is applied only
//! when a value is presented, and the Average row is the mean of the unrounded
//! hourly means.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use num_rational::Ratio;
use serde::Serialize;
use thiserror::Error;

use crate::corpus::{Corpus, CorpusRow};
use crate::domain::{DeviceFlags, Millis, Parameter, VitalsSample};
use crate::fixed::{exact_mean, ratio_to_f64, round_half_up, Centi};

pub const HOUR_MS: i64 = 3_600_000;

/// Marker written in place of a missing cell.
pub const GAP_MARKER: &str = "NA";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnalyticsError {
    #[error("records are not ordered by time: {later} follows {earlier}")]
    Unordered { earlier: Millis, later: Millis },
}

/// Fixed-width buckets counted from an origin; the bucket starting at the
/// origin is hour 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HourBuckets {
    pub origin: Millis,
    pub width_ms: i64,
}

impl HourBuckets {
    pub fn hourly_from(origin: Millis) -> Self {
        HourBuckets {
            origin,
            width_ms: HOUR_MS,
        }
    }

    pub fn index(&self, at: Millis) -> i64 {
        (at - self.origin).div_euclid(self.width_ms) + 1
    }

    pub fn start(&self, index: i64) -> Millis {
        self.origin + (index - 1) * self.width_ms
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HourlyAggregate {
    pub hour: i64,
    pub count: u64,
    /// Exact means in hundredths of each parameter's unit, indexed by
    /// [`Parameter::index`].
    pub means: [Ratio<i128>; 5],
}

impl HourlyAggregate {
    pub fn mean(&self, parameter: Parameter) -> Ratio<i128> {
        self.means[parameter.index()]
    }

    pub fn mean_f64(&self, parameter: Parameter) -> f64 {
        ratio_to_f64(self.mean(parameter)) / 100.0
    }

    pub fn from_corpus_row(row: &CorpusRow) -> Self {
        HourlyAggregate {
            hour: row.hour as i64,
            count: 1,
            means: Parameter::ALL.map(|p| row.value(p).as_ratio()),
        }
    }
}

#[derive(Default)]
struct Accumulator {
    count: u64,
    sums: [i128; 5],
}

impl Accumulator {
    fn add(&mut self, sample: &VitalsSample) {
        self.count += 1;
        for p in Parameter::ALL {
            self.sums[p.index()] += sample.value(p).hundredths() as i128;
        }
    }

    fn finish(&self, hour: i64) -> HourlyAggregate {
        let n = self.count as i128;
        HourlyAggregate {
            hour,
            count: self.count,
            means: self.sums.map(|s| Ratio::new(s, n)),
        }
    }
}

/// Mean of every parameter per bucket. Samples flagged `SENSOR_FAULT` are not
/// measurements and are skipped; empty buckets are omitted.
pub fn aggregate_hourly<'a, I>(samples: I, buckets: HourBuckets) -> Result<Vec<HourlyAggregate>, AnalyticsError>
where
    I: IntoIterator<Item = &'a VitalsSample>,
{
    let mut out = Vec::new();
    let mut current: Option<(i64, Accumulator)> = None;
    let mut last_at: Option<Millis> = None;
    for sample in samples {
        if let Some(prev) = last_at {
            if sample.received_at < prev {
                return Err(AnalyticsError::Unordered {
                    earlier: prev,
                    later: sample.received_at,
                });
            }
        }
        last_at = Some(sample.received_at);
        if sample.flags.contains(DeviceFlags::SENSOR_FAULT) {
            continue;
        }
        let hour = buckets.index(sample.received_at);
        match &mut current {
            Some((h, acc)) if *h == hour => acc.add(sample),
            _ => {
                if let Some((h, acc)) = current.take() {
                    out.push(acc.finish(h));
                }
                let mut acc = Accumulator::default();
                acc.add(sample);
                current = Some((hour, acc));
            }
        }
    }
    if let Some((h, acc)) = current {
        out.push(acc.finish(h));
    }
    Ok(out)
}

/// Hourly aggregates per participant.
pub type PersonHours = BTreeMap<u8, Vec<HourlyAggregate>>;

pub fn corpus_hours(corpus: &Corpus) -> PersonHours {
    let mut out = PersonHours::new();
    for row in corpus.rows() {
        out.entry(row.participant)
            .or_default()
            .push(HourlyAggregate::from_corpus_row(row));
    }
    out
}

/// Decimal places kept when presenting a parameter.
pub fn presentation_decimals(parameter: Parameter) -> u32 {
    match parameter {
        Parameter::HeartRate => 0,
        _ => 2,
    }
}

/// Half-up rounding of a mean in hundredths to the parameter's presentation
/// precision.
pub fn present(parameter: Parameter, mean_hundredths: Ratio<i128>) -> Centi {
    let rounded = match presentation_decimals(parameter) {
        0 => round_half_up(mean_hundredths / Ratio::from_integer(100)) * 100,
        _ => round_half_up(mean_hundredths),
    };
    Centi::from_hundredths(rounded as i64)
}

pub fn format_value(parameter: Parameter, value: Centi) -> String {
    match presentation_decimals(parameter) {
        0 => value.round_units().to_string(),
        _ => value.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TableReport {
    pub parameter: Parameter,
    pub persons: Vec<u8>,
    pub hours: Vec<i64>,
    /// Unrounded hourly means, `[hour][person]`.
    pub cells: Vec<Vec<Option<Ratio<i128>>>>,
    /// Unrounded per-person mean of the available hourly means.
    pub averages: Vec<Option<Ratio<i128>>>,
}

impl TableReport {
    pub fn cell(&self, hour: i64, person: u8) -> Option<Centi> {
        let h = self.hours.iter().position(|x| *x == hour)?;
        let p = self.persons.iter().position(|x| *x == person)?;
        self.cells[h][p].map(|m| present(self.parameter, m))
    }

    pub fn average(&self, person: u8) -> Option<Centi> {
        let p = self.persons.iter().position(|x| *x == person)?;
        self.averages[p].map(|m| present(self.parameter, m))
    }

    pub fn average_row(&self) -> Vec<Option<Centi>> {
        self.persons.iter().map(|p| self.average(*p)).collect()
    }

    /// Cells with no data, as `(hour, person)`.
    pub fn gaps(&self) -> Vec<(i64, u8)> {
        let mut gaps = Vec::new();
        for (hi, row) in self.cells.iter().enumerate() {
            for (pi, cell) in row.iter().enumerate() {
                if cell.is_none() {
                    gaps.push((self.hours[hi], self.persons[pi]));
                }
            }
        }
        gaps
    }

    pub fn is_complete(&self) -> bool {
        self.gaps().is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("hour");
        for p in &self.persons {
            let _ = write!(out, ",person_{p}");
        }
        out.push('\n');
        let render = |value: Option<Centi>| match value {
            Some(v) => format_value(self.parameter, v),
            None => GAP_MARKER.to_string(),
        };
        for hour in &self.hours {
            out.push_str(&hour.to_string());
            for p in &self.persons {
                out.push(',');
                out.push_str(&render(self.cell(*hour, *p)));
            }
            out.push('\n');
        }
        out.push_str("Average");
        for avg in self.average_row() {
            out.push(',');
            out.push_str(&render(avg));
        }
        out.push('\n');
        out
    }

    pub fn to_view(&self) -> TableView {
        let render = |value: Option<Centi>| value.map(|v| format_value(self.parameter, v));
        TableView {
            parameter: self.parameter,
            unit: self.parameter.unit(),
            rounding: RoundingInfo {
                mode: "half_up",
                decimals: presentation_decimals(self.parameter),
                average_from: "unrounded_hourly_means",
            },
            persons: self.persons.clone(),
            rows: self
                .hours
                .iter()
                .map(|h| TableRowView {
                    hour: h.to_string(),
                    values: self.persons.iter().map(|p| render(self.cell(*h, *p))).collect(),
                })
                .chain(std::iter::once(TableRowView {
                    hour: "Average".into(),
                    values: self.average_row().into_iter().map(render).collect(),
                }))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RoundingInfo {
    pub mode: &'static str,
    pub decimals: u32,
    pub average_from: &'static str,
}

#[derive(Debug, Clone, Serialize)]
pub struct TableRowView {
    pub hour: String,
    /// `None` marks a gap.
    pub values: Vec<Option<String>>,
}

/// Structured, presentation-rounded form of a [`TableReport`].
#[derive(Debug, Clone, Serialize)]
pub struct TableView {
    pub parameter: Parameter,
    pub unit: &'static str,
    pub rounding: RoundingInfo,
    pub persons: Vec<u8>,
    pub rows: Vec<TableRowView>,
}

/// Builds the hour × person table for `hours`, leaving gaps where a person has
/// no data for an hour.
pub fn table_report(parameter: Parameter, data: &PersonHours, hours: &[i64]) -> TableReport {
    let persons: Vec<u8> = data.keys().copied().collect();
    let cells: Vec<Vec<Option<Ratio<i128>>>> = hours
        .iter()
        .map(|hour| {
            persons
                .iter()
                .map(|p| {
                    data[p]
                        .iter()
                        .find(|agg| agg.hour == *hour)
                        .map(|agg| agg.mean(parameter))
                })
                .collect()
        })
        .collect();
    let averages = (0..persons.len())
        .map(|pi| exact_mean(cells.iter().filter_map(|row| row[pi])))
        .collect();
    TableReport {
        parameter,
        persons,
        hours: hours.to_vec(),
        cells,
        averages,
    }
}

/// The six study hours.
pub const STUDY_HOURS: [i64; 6] = [1, 2, 3, 4, 5, 6];

/// Mean of the presented per-person averages, rounded half-up to two
/// decimals. `None` when no selected person has an average.
pub fn grand_mean(report: &TableReport, persons: &[u8]) -> Option<Centi> {
    let values = persons
        .iter()
        .filter_map(|p| report.average(*p))
        .map(|c| c.as_ratio());
    exact_mean(values).map(|m| Centi::from_hundredths(round_half_up(m) as i64))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Series {
    pub person: u8,
    pub points: Vec<(i64, Centi)>,
}

/// Plot-ready per-person series. `None` selects every person; an empty
/// selection yields no series.
pub fn chart_series(report: &TableReport, persons: Option<&[u8]>) -> Vec<Series> {
    let selected: Vec<u8> = match persons {
        Some(list) => report
            .persons
            .iter()
            .copied()
            .filter(|p| list.contains(p))
            .collect(),
        None => report.persons.clone(),
    };
    selected
        .into_iter()
        .map(|person| Series {
            person,
            points: report
                .hours
                .iter()
                .filter_map(|h| report.cell(*h, person).map(|v| (*h, v)))
                .collect(),
        })
        .collect()
}

pub fn series_csv(parameter: Parameter, series: &[Series]) -> String {
    let mut out = String::from("person,hour,value\n");
    for s in series {
        for (hour, value) in &s.points {
            let _ = writeln!(out, "{},{},{}", s.person, hour, format_value(parameter, *value));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::NodeId;

    fn c(s: &str) -> Centi {
        s.parse().unwrap()
    }

    fn sample_at(at: Millis, body: &str, hr: u8) -> VitalsSample {
        VitalsSample {
            node_id: NodeId(1),
            seq: 0,
            body_temp: c(body),
            ambient_temp: c("30.00"),
            humidity: c("70.00"),
            air_quality: c("400.00"),
            heart_rate: hr,
            flags: DeviceFlags::empty(),
            received_at: at,
        }
    }

    #[test]
    fn single_record_bucket_is_the_record() {
        let s = [sample_at(10, "34.19", 68)];
        let aggs = aggregate_hourly(&s, HourBuckets::hourly_from(0)).unwrap();
        assert_eq!(aggs.len(), 1);
        assert_eq!(aggs[0].hour, 1);
        assert_eq!(present(Parameter::BodyTemp, aggs[0].mean(Parameter::BodyTemp)), c("34.19"));
    }

    #[test]
    fn buckets_split_on_the_hour_and_skip_empty_ones() {
        let s = [
            sample_at(0, "34.00", 60),
            sample_at(HOUR_MS - 1, "35.00", 61),
            sample_at(2 * HOUR_MS, "36.00", 62),
        ];
        let aggs = aggregate_hourly(&s, HourBuckets::hourly_from(0)).unwrap();
        let hours: Vec<_> = aggs.iter().map(|a| (a.hour, a.count)).collect();
        assert_eq!(hours, [(1, 2), (3, 1)]);
        assert_eq!(aggs[0].mean(Parameter::BodyTemp), Ratio::from_integer(3450));
        assert_eq!(aggs[0].mean(Parameter::HeartRate), Ratio::new(12100, 2));
    }

    #[test]
    fn unordered_input_is_rejected() {
        let s = [sample_at(5, "34.00", 60), sample_at(4, "34.00", 60)];
        assert!(matches!(
            aggregate_hourly(&s, HourBuckets::hourly_from(0)),
            Err(AnalyticsError::Unordered { earlier: 5, later: 4 })
        ));
    }

    #[test]
    fn fault_flagged_samples_are_not_aggregated() {
        let mut faulted = sample_at(20, "0.00", 0);
        faulted.flags = DeviceFlags::SENSOR_FAULT;
        let s = [sample_at(10, "34.00", 60), faulted];
        let aggs = aggregate_hourly(&s, HourBuckets::hourly_from(0)).unwrap();
        assert_eq!(aggs[0].count, 1);
    }

    #[test]
    fn corpus_tables_reproduce_published_averages() {
        let hours = corpus_hours(&Corpus::bundled());
        let expect = [
            (Parameter::BodyTemp, ["34.10", "33.21", "31.43", "36.60", "33.61"]),
            (Parameter::HeartRate, ["71", "85", "73", "88", "95"]),
            (Parameter::AmbientTemp, ["30.62", "30.44", "30.53", "31.01", "30.05"]),
            (Parameter::Humidity, ["75.81", "82.79", "84.25", "74.04", "79.48"]),
            (Parameter::AirQuality, ["393.68", "412.70", "437.38", "355.79", "397.91"]),
        ];
        for (parameter, averages) in expect {
            let report = table_report(parameter, &hours, &STUDY_HOURS);
            assert!(report.is_complete());
            let got: Vec<String> = report
                .average_row()
                .into_iter()
                .map(|v| format_value(parameter, v.unwrap()))
                .collect();
            assert_eq!(got, averages, "{parameter}");
        }
    }

    #[test]
    fn average_uses_unrounded_means() {
        let hours = corpus_hours(&Corpus::bundled());
        let report = table_report(Parameter::HeartRate, &hours, &STUDY_HOURS);
        assert_eq!(report.averages[4], Some(Ratio::new(9450, 1)));
        assert_eq!(report.average(5), Some(Centi::from_units(95)));
    }

    #[test]
    fn grand_means() {
        let hours = corpus_hours(&Corpus::bundled());
        let humidity = table_report(Parameter::Humidity, &hours, &STUDY_HOURS);
        assert_eq!(grand_mean(&humidity, &[1, 2, 3, 4, 5]), Some(c("79.27")));
        assert_eq!(grand_mean(&humidity, &[3]), Some(c("84.25")));
        assert_eq!(grand_mean(&humidity, &[]), None);
        let ambient = table_report(Parameter::AmbientTemp, &hours, &STUDY_HOURS);
        // (30.62 + 30.44 + 30.53 + 31.01 + 30.05) / 5 = 152.65 / 5
        assert_eq!(grand_mean(&ambient, &[1, 2, 3, 4, 5]), Some(c("30.53")));
    }

    #[test]
    fn series_match_table_rows() {
        let hours = corpus_hours(&Corpus::bundled());
        let report = table_report(Parameter::HeartRate, &hours, &STUDY_HOURS);
        let series = chart_series(&report, Some(&[5]));
        let points: Vec<(i64, i64)> = series[0].points.iter().map(|(h, v)| (*h, v.round_units())).collect();
        assert_eq!(points, [(1, 102), (2, 95), (3, 99), (4, 92), (5, 88), (6, 91)]);
        assert!(chart_series(&report, Some(&[])).is_empty());
        for s in chart_series(&report, None) {
            for (h, v) in &s.points {
                assert_eq!(report.cell(*h, s.person), Some(*v));
            }
        }
    }

    #[test]
    fn gaps_are_explicit() {
        let mut hours = corpus_hours(&Corpus::bundled());
        hours.get_mut(&2).unwrap().retain(|a| a.hour != 4);
        let report = table_report(Parameter::BodyTemp, &hours, &STUDY_HOURS);
        assert_eq!(report.gaps(), vec![(4, 2)]);
        let csv = report.to_csv();
        assert!(csv.lines().nth(4).unwrap().starts_with("4,34.43,NA,"));
    }

    #[test]
    fn csv_layout() {
        let hours = corpus_hours(&Corpus::bundled());
        let report = table_report(Parameter::HeartRate, &hours, &STUDY_HOURS);
        let csv = report.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "hour,person_1,person_2,person_3,person_4,person_5");
        assert_eq!(lines[1], "1,68,81,77,82,102");
        assert_eq!(lines[7], "Average,71,85,73,88,95");
        let series = series_csv(Parameter::HeartRate, &chart_series(&report, Some(&[1])));
        assert!(series.starts_with("person,hour,value\n1,1,68\n1,2,71\n"));
    }
}
