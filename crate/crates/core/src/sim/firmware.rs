//! The node's main loop: read sensors, refresh the display, drive the local
//! buzzer and LED, and transmit a frame every transmit period.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::domain::{validate_sample, DeviceFlags, Millis, Parameter, RawReading, Severity};
use crate::fixed::Centi;
use crate::rules::classify;
use crate::sim::ppg::{PpgDetector, PpgSynth};
use crate::sim::scenario::{FaultSpec, SignalSource};
use crate::sim::sensors::{dht11_humidity, mlx90614_temperature};
use crate::sim::NodeConfig;
use crate::wire::{encode_frame_with, Frame, FRAME_LEN};

pub const LCD_COLUMNS: usize = 16;

/// The two 16-character LCD lines.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Display {
    pub lines: [String; 2],
}

impl Display {
    fn set(&mut self, top: String, bottom: String) {
        self.lines = [fit(top), fit(bottom)];
    }
}

fn fit(mut line: String) -> String {
    line.truncate(LCD_COLUMNS);
    format!("{line:<LCD_COLUMNS$}")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Emission {
    Frame {
        seq: u16,
        bytes: Frame,
        corrupted: bool,
    },
    Dropped {
        seq: u16,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TickOutputs {
    /// Virtual time of this tick, from the start of the run.
    pub at_ms: Millis,
    pub reading: RawReading,
    pub display: Display,
    pub emission: Option<Emission>,
    /// This tick emitted the end-of-scenario frame; no more ticks follow.
    pub halted: bool,
}

struct PulseChain {
    synth: PpgSynth,
    detector: PpgDetector,
    samples_per_tick: usize,
}

/// Sequential state of one simulated node.
pub struct NodeState {
    config: NodeConfig,
    rng: ChaCha8Rng,
    pulse: Option<PulseChain>,
    t: Millis,
    next_seq: u16,
    last: Option<RawReading>,
    display: Display,
    halted: bool,
}

impl NodeState {
    pub fn new(config: NodeConfig) -> NodeState {
        let pulse = match config.scenario.signal(Parameter::HeartRate) {
            SignalSource::Ppg {
                sample_rate_hz,
                noise,
                ..
            } => Some(PulseChain {
                synth: PpgSynth::new(*sample_rate_hz, *noise),
                detector: PpgDetector::new(*sample_rate_hz),
                samples_per_tick: (*sample_rate_hz * config.sample_period_ms as f64 / 1000.0)
                    .round() as usize,
            }),
            _ => None,
        };
        NodeState {
            rng: ChaCha8Rng::seed_from_u64(config.rng_seed),
            config,
            pulse,
            t: 0,
            next_seq: 0,
            last: None,
            display: Display::default(),
            halted: false,
        }
    }

    pub fn config(&self) -> &NodeConfig {
        &self.config
    }

    pub fn is_halted(&self) -> bool {
        self.halted
    }

    pub fn elapsed_ms(&self) -> Millis {
        self.t
    }

    fn true_value(&mut self, parameter: Parameter, t: Millis) -> Option<f64> {
        let scenario = &self.config.scenario;
        match scenario.signal(parameter) {
            SignalSource::Constant(v) => Some(*v),
            SignalSource::Track(track) => Some(track.at(t)),
            SignalSource::Replay => {
                let row = scenario.replay.as_ref()?.row_at(t)?;
                Some(row.value(parameter).to_f64())
            }
            SignalSource::Ppg { bpm, .. } => {
                let chain = self.pulse.as_mut()?;
                let mut estimate = None;
                for i in 0..chain.samples_per_tick {
                    let at = t as f64 + i as f64 * 1000.0 / chain.synth_rate();
                    let (light, _) = chain.synth.next(bpm.at(at as Millis), &mut self.rng);
                    let step = chain.detector.step(light);
                    estimate = Some(step);
                }
                // No estimate yet (warm-up) or lost signal both read as a
                // sensor fault.
                estimate.filter(|s| !s.fault && s.bpm > 0).map(|s| s.bpm as f64)
            }
        }
    }

    /// Exact corpus value for replayed parameters, so fixed-point values are
    /// not put through a float round trip.
    fn replay_value(&self, parameter: Parameter, t: Millis) -> Option<Centi> {
        if self.config.realistic || *self.config.scenario.signal(parameter) != SignalSource::Replay {
            return None;
        }
        let row = self.config.scenario.replay.as_ref()?.row_at(t)?;
        Some(row.value(parameter))
    }

    fn read_sensor(&mut self, parameter: Parameter, t: Millis) -> Option<Centi> {
        if let Some(exact) = self.replay_value(parameter, t) {
            return Some(exact);
        }
        let value = self.true_value(parameter, t)?;
        let quantize = self.config.realistic;
        match parameter {
            Parameter::BodyTemp | Parameter::AmbientTemp => mlx90614_temperature(value, quantize),
            Parameter::Humidity => dht11_humidity(value, quantize),
            Parameter::AirQuality if quantize => {
                let model = self.config.mq135;
                let counts = model.ppm_to_adc(value).ok()?;
                model.adc_to_ppm(counts).ok().and_then(Centi::from_f64)
            }
            Parameter::AirQuality => Centi::from_f64(value.max(0.0)),
            Parameter::HeartRate => Some(Centi::from_units(value.round().clamp(0.0, 255.0) as i64)),
        }
    }

    fn injected_fault(&self, parameter: Parameter, t: Millis) -> bool {
        self.config.scenario.faults.iter().any(|f| match f {
            FaultSpec::SensorFault {
                parameter: p,
                from_ms,
                to_ms,
            } => p.is_none_or(|p| p == parameter) && (*from_ms..*to_ms).contains(&t),
            _ => false,
        })
    }

    fn sample(&mut self, t: Millis) -> RawReading {
        let mut values = [Centi::ZERO; 5];
        let mut flags = DeviceFlags::empty();
        for parameter in Parameter::ALL {
            let reading = self.read_sensor(parameter, t);
            match reading {
                Some(v) if !self.injected_fault(parameter, t) => values[parameter.index()] = v,
                _ => flags.insert(DeviceFlags::SENSOR_FAULT),
            }
        }
        RawReading {
            node_id: self.config.node_id,
            seq: self.next_seq,
            body_temp: values[Parameter::BodyTemp.index()],
            ambient_temp: values[Parameter::AmbientTemp.index()],
            humidity: values[Parameter::Humidity.index()],
            air_quality: values[Parameter::AirQuality.index()],
            heart_rate: values[Parameter::HeartRate.index()].round_units() as i32,
            flags,
        }
    }

    /// Evaluates the local profile and sets the alarm outputs. Returns whether
    /// the emergency message should be shown.
    fn local_alarms(&self, reading: &mut RawReading) -> bool {
        let Ok(sample) = validate_sample(reading, self.t) else {
            return false;
        };
        let classes = classify(&sample, &self.config.local_alert_thresholds);
        let map = &self.config.alert_map;
        let mut message = false;
        for parameter in Parameter::ALL {
            let class = classes.get(parameter);
            if class.fault || class.severity != Severity::Emergency {
                continue;
            }
            if map.buzzer.contains(&parameter) {
                reading.flags.insert(DeviceFlags::BUZZER_ON);
            }
            if map.led.contains(&parameter) {
                reading.flags.insert(DeviceFlags::LED_ON);
            }
            message |= map.message.contains(&parameter);
        }
        message
    }

    fn draw(&mut self, reading: &RawReading, message: bool) {
        let top = format!(
            "B{:.1} A{:.1} H{}",
            reading.body_temp.to_f64(),
            reading.ambient_temp.to_f64(),
            reading.humidity.round_units()
        );
        let bottom = if message {
            "PULSE EMERGENCY!".to_string()
        } else if reading.flags.contains(DeviceFlags::SENSOR_FAULT) {
            "SENSOR FAULT".to_string()
        } else {
            format!("HR{} AQ{}", reading.heart_rate, reading.air_quality.round_units())
        };
        self.display.set(top, bottom);
    }

    fn encode(&mut self, reading: &RawReading) -> Emission {
        let seq = reading.seq;
        self.next_seq = self.next_seq.wrapping_add(1);
        let faults = &self.config.scenario.faults;
        if faults.contains(&FaultSpec::DropFrame { seq }) {
            return Emission::Dropped { seq };
        }
        let mut bytes = encode_frame_with(reading, self.config.wire)
            .unwrap_or_else(|_| halt_bytes(reading, self.config.wire));
        let mut corrupted = false;
        for fault in faults {
            if let FaultSpec::CorruptByte { seq: s, offset } = fault {
                if *s == seq && *offset < FRAME_LEN {
                    bytes[*offset] ^= 0xFF;
                    corrupted = true;
                }
            }
        }
        Emission::Frame {
            seq,
            bytes,
            corrupted,
        }
    }

    /// One pass of the loop. Returns `None` once the node has halted.
    pub fn tick(&mut self) -> Option<TickOutputs> {
        if self.halted {
            return None;
        }
        let at_ms = self.t;
        if at_ms >= self.config.scenario.duration_ms {
            // Scenario exhausted: the last reading goes out once more,
            // flagged, and the node stops.
            let mut reading = self.last.unwrap_or(RawReading {
                node_id: self.config.node_id,
                seq: 0,
                body_temp: Centi::ZERO,
                ambient_temp: Centi::ZERO,
                humidity: Centi::ZERO,
                air_quality: Centi::ZERO,
                heart_rate: 0,
                flags: DeviceFlags::empty(),
            });
            reading.seq = self.next_seq;
            reading.flags = DeviceFlags::SENSOR_FAULT;
            self.draw(&reading, false);
            self.next_seq = self.next_seq.wrapping_add(1);
            let bytes = halt_bytes(&reading, self.config.wire);
            self.halted = true;
            return Some(TickOutputs {
                at_ms,
                reading,
                display: self.display.clone(),
                emission: Some(Emission::Frame {
                    seq: reading.seq,
                    bytes,
                    corrupted: false,
                }),
                halted: true,
            });
        }

        let mut reading = self.sample(at_ms);
        let message = self.local_alarms(&mut reading);
        self.draw(&reading, message);
        let transmit = at_ms % self.config.transmit_period_ms as Millis == 0;
        let emission = transmit.then(|| self.encode(&reading));
        self.last = Some(reading);
        self.t += self.config.sample_period_ms as Millis;
        Some(TickOutputs {
            at_ms,
            reading,
            display: self.display.clone(),
            emission,
            halted: false,
        })
    }
}

impl PulseChain {
    fn synth_rate(&self) -> f64 {
        self.detector.sample_rate_hz()
    }
}

/// Encodes a reading, falling back to an all-zero fault frame when the
/// values do not fit the wire format.
fn halt_bytes(reading: &RawReading, wire: crate::wire::WirePrecision) -> Frame {
    encode_frame_with(reading, wire).unwrap_or_else(|_| {
        let zero = RawReading {
            body_temp: Centi::ZERO,
            ambient_temp: Centi::ZERO,
            humidity: Centi::ZERO,
            air_quality: Centi::ZERO,
            heart_rate: 0,
            flags: DeviceFlags::SENSOR_FAULT,
            ..*reading
        };
        encode_frame_with(&zero, wire).expect("zero reading always encodes")
    })
}

/// Convenience wrapper over [`NodeState::tick`].
pub fn firmware_tick(state: &mut NodeState) -> Option<TickOutputs> {
    state.tick()
}
