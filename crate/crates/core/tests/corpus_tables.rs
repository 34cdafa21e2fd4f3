use breathwatch_core::analytics::{corpus_hours, grand_mean, table_report, STUDY_HOURS};
use breathwatch_core::corpus::{Corpus, PublishedAverages};
use breathwatch_core::domain::{
    aqi_category, normal_hr_range, normal_hr_range_months, participant, validate_sample, AqiCategory,
    DeviceFlags, NodeId, Parameter, RawReading, Severity,
};
use breathwatch_core::fixed::Centi;
use breathwatch_core::rules::{classify, default_profile, ADULT_DEFAULT_AGE};

fn strings(values: Vec<Option<Centi>>, parameter: Parameter) -> Vec<String> {
    values
        .into_iter()
        .map(|v| breathwatch_core::analytics::format_value(parameter, v.unwrap()))
        .collect()
}

#[test]
fn average_rows_match_the_published_tables() {
    let data = corpus_hours(&Corpus::bundled());
    let expected: [(Parameter, [&str; 5]); 5] = [
        (Parameter::BodyTemp, ["34.10", "33.21", "31.43", "36.60", "33.61"]),
        (Parameter::HeartRate, ["71", "85", "73", "88", "95"]),
        (Parameter::AmbientTemp, ["30.62", "30.44", "30.53", "31.01", "30.05"]),
        (Parameter::Humidity, ["75.81", "82.79", "84.25", "74.04", "79.48"]),
        (Parameter::AirQuality, ["393.68", "412.70", "437.38", "355.79", "397.91"]),
    ];
    let published = PublishedAverages::bundled();
    for (parameter, want) in expected {
        let report = table_report(parameter, &data, &STUDY_HOURS);
        assert!(report.is_complete());
        assert_eq!(strings(report.average_row(), parameter), want, "{parameter}");
        let from_file: Vec<Option<Centi>> = published.averages[&parameter].iter().copied().map(Some).collect();
        assert_eq!(report.average_row(), from_file, "{parameter}");
    }
}

#[test]
fn every_hourly_cell_reproduces_the_corpus() {
    let corpus = Corpus::bundled();
    let data = corpus_hours(&corpus);
    for parameter in Parameter::ALL {
        let report = table_report(parameter, &data, &STUDY_HOURS);
        for row in corpus.rows() {
            assert_eq!(report.cell(row.hour as i64, row.participant), Some(row.value(parameter)));
        }
    }
}

#[test]
fn grand_humidity_mean() {
    let data = corpus_hours(&Corpus::bundled());
    let report = table_report(Parameter::Humidity, &data, &STUDY_HOURS);
    let mean = grand_mean(&report, &[1, 2, 3, 4, 5]).unwrap();
    assert_eq!(mean.to_string(), "79.27");
    assert_eq!(Some(mean), PublishedAverages::bundled().all_persons.get(&Parameter::Humidity).copied());
}

#[test]
fn aqi_categories() {
    let cat = |s: &str| aqi_category(s.parse().unwrap()).unwrap().category;
    assert_eq!(cat("430.44"), AqiCategory::Severe);
    assert_eq!(cat("343.20"), AqiCategory::VeryPoor);
    assert_eq!(cat("472.61"), AqiCategory::Severe);
    assert_eq!(cat("0"), AqiCategory::Good);
    assert_eq!(cat("50.49"), AqiCategory::Good);
    assert_eq!(cat("50.50"), AqiCategory::Satisfactory);
    assert_eq!(cat("300.49"), AqiCategory::Poor);
    assert_eq!(cat("400.50"), AqiCategory::Severe);
    let over = aqi_category("612.00".parse().unwrap()).unwrap();
    assert_eq!(over.category, AqiCategory::Severe);
    assert!(over.out_of_scale);
    assert!(aqi_category("-1".parse().unwrap()).is_err());
}

#[test]
fn heart_rate_reference_bands() {
    assert_eq!((normal_hr_range(30).min, normal_hr_range(30).max), (60, 100));
    assert_eq!((normal_hr_range(7).min, normal_hr_range(7).max), (70, 115));
    assert_eq!((normal_hr_range_months(0).min, normal_hr_range_months(0).max), (100, 180));
    // the boundary month belongs to the earlier band
    assert_eq!(normal_hr_range_months(12).max, 180);
    assert_eq!(participant(5).unwrap().age_range.to_string(), "50+");
}

#[test]
fn corpus_severity_oracle() {
    let profile = default_profile(ADULT_DEFAULT_AGE);
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
        let class = classify(&validate_sample(&raw, 0).unwrap(), &profile);
        let at = format!("person {} hour {}", row.participant, row.hour);
        assert_eq!(class.humidity.severity, Severity::Emergency, "{at}");
        assert_ne!(class.body_temp.severity, Severity::Emergency, "{at}");
        let ppm = row.air_quality;
        let want = if ppm > Centi::from_units(400) {
            Severity::Emergency
        } else {
            Severity::Moderate
        };
        assert!(ppm > Centi::from_units(300));
        assert_eq!(class.air_quality.severity, want, "{at}");
        if (row.participant, row.hour) == (5, 1) {
            assert_eq!(row.heart_rate, 102);
            assert_eq!(class.heart_rate.severity, Severity::Emergency);
        }
    }
}
