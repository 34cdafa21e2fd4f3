#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;

use breathwatch_core::domain::{DeviceFlags, Millis, NodeId, RawReading};
use breathwatch_core::fixed::Centi;
use breathwatch_core::rules::HysteresisConfig;
use breathwatch_core::wire::{encode_frame_with, WirePrecision};
use breathwatch_gateway::{Gateway, GatewayOptions, ManualClock, Stamping};

/// 2024-03-01T08:00:00Z
pub const T0: Millis = 1_709_280_000_000;

pub fn c(s: &str) -> Centi {
    s.parse().unwrap()
}

/// A reading every default adult band calls Normal.
pub fn normal(node: u16, seq: u16) -> RawReading {
    RawReading {
        node_id: NodeId(node),
        seq,
        body_temp: c("36.60"),
        ambient_temp: c("27.50"),
        humidity: c("50.00"),
        air_quality: c("100.00"),
        heart_rate: 80,
        flags: DeviceFlags::empty(),
    }
}

pub fn with_hr(mut r: RawReading, bpm: i32) -> RawReading {
    r.heart_rate = bpm;
    r
}

pub fn frame(r: &RawReading) -> Vec<u8> {
    encode_frame_with(r, WirePrecision::Extended).unwrap().to_vec()
}

pub fn frames<'a>(readings: impl IntoIterator<Item = &'a RawReading>) -> Vec<u8> {
    readings.into_iter().flat_map(frame).collect()
}

pub fn open(dir: &Path, clock: &ManualClock, hysteresis: HysteresisConfig, stamping: Stamping) -> Gateway {
    let options = GatewayOptions {
        store_dir: dir.to_path_buf(),
        hysteresis,
        stamping,
    };
    Gateway::open(options, Arc::new(clock.clone())).unwrap()
}

pub fn instant(dir: &Path, clock: &ManualClock) -> Gateway {
    open(dir, clock, HysteresisConfig::INSTANT, Stamping::Arrival)
}

pub fn assert_counters_balance(gw: &Gateway) {
    let c = gw.counters();
    assert_eq!(
        c.frames_decoded,
        c.records_persisted + c.validation_failures + c.frames_after_close,
        "{c:?}"
    );
}
