//! Pulse detection on an optical (PPG) light signal, and a synthetic
//! waveform generator to drive it.

use std::collections::VecDeque;
use std::f64::consts::TAU;

use rand::Rng;
use rand_distr::{Distribution, Normal};

pub const DEFAULT_THRESHOLD_FRACTION: f64 = 0.6;
pub const DEFAULT_REFRACTORY_MS: f64 = 250.0;
pub const IBI_RING: usize = 10;
pub const NO_BEAT_TIMEOUT_MS: f64 = 10_000.0;
pub const MAX_BPM: u32 = 255;

/// Length of the rolling window the peak and trough are taken over. It must
/// exceed the longest beat period of interest (1.5 s at 40 bpm).
const ENVELOPE_WINDOW_MS: f64 = 2_000.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PpgStep {
    /// Interpolated time of a beat detected on this sample.
    pub beat_at_ms: Option<f64>,
    pub bpm: u8,
    /// No beat for [`NO_BEAT_TIMEOUT_MS`].
    pub fault: bool,
}

/// Adaptive-threshold beat detector. A beat fires when the signal rises
/// through `trough + fraction * (peak - trough)` outside the refractory
/// window; the rate is the mean of the last ten inter-beat intervals.
#[derive(Debug, Clone)]
pub struct PpgDetector {
    sample_rate_hz: f64,
    threshold_fraction: f64,
    refractory_ms: f64,
    window: VecDeque<f64>,
    window_len: usize,
    prev: Option<(f64, f64)>,
    elapsed_ms: f64,
    last_beat_ms: Option<f64>,
    quiet_since_ms: f64,
    ibis: VecDeque<f64>,
}

impl PpgDetector {
    pub fn new(sample_rate_hz: f64) -> Self {
        Self::with_params(sample_rate_hz, DEFAULT_THRESHOLD_FRACTION, DEFAULT_REFRACTORY_MS)
    }

    pub fn with_params(sample_rate_hz: f64, threshold_fraction: f64, refractory_ms: f64) -> Self {
        assert!(sample_rate_hz > 0.0, "sample rate must be positive");
        let window_len = ((ENVELOPE_WINDOW_MS / 1000.0) * sample_rate_hz).ceil().max(2.0) as usize;
        PpgDetector {
            sample_rate_hz,
            threshold_fraction,
            refractory_ms,
            window: VecDeque::with_capacity(window_len),
            window_len,
            prev: None,
            elapsed_ms: 0.0,
            last_beat_ms: None,
            quiet_since_ms: 0.0,
            ibis: VecDeque::with_capacity(IBI_RING),
        }
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    fn envelope(&self) -> (f64, f64) {
        self.window
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
    }

    pub fn bpm(&self) -> u8 {
        if self.ibis.is_empty() {
            return 0;
        }
        let mean = self.ibis.iter().sum::<f64>() / self.ibis.len() as f64;
        let bpm = (60_000.0 / mean).round() as u32;
        bpm.min(MAX_BPM) as u8
    }

    pub fn step(&mut self, light: f64) -> PpgStep {
        let now = self.elapsed_ms;
        self.elapsed_ms += 1000.0 / self.sample_rate_hz;

        if self.window.len() == self.window_len {
            self.window.pop_front();
        }
        self.window.push_back(light);
        let warmed_up = self.window.len() == self.window_len;
        let (trough, peak) = self.envelope();
        let threshold = trough + self.threshold_fraction * (peak - trough);

        let mut beat_at_ms = None;
        if let Some((prev_t, prev_x)) = self.prev {
            let span_ok = peak - trough > 1e-9;
            if warmed_up && span_ok && prev_x < threshold && light >= threshold {
                let frac = (threshold - prev_x) / (light - prev_x);
                let at = prev_t + frac * (now - prev_t);
                let outside_refractory = self
                    .last_beat_ms
                    .is_none_or(|last| at - last >= self.refractory_ms);
                if outside_refractory {
                    if let Some(last) = self.last_beat_ms {
                        if self.ibis.len() == IBI_RING {
                            self.ibis.pop_front();
                        }
                        self.ibis.push_back(at - last);
                    }
                    self.last_beat_ms = Some(at);
                    self.quiet_since_ms = at;
                    beat_at_ms = Some(at);
                }
            }
        }
        self.prev = Some((now, light));

        let fault = now - self.quiet_since_ms >= NO_BEAT_TIMEOUT_MS;
        if fault {
            self.ibis.clear();
            self.last_beat_ms = None;
        }
        PpgStep {
            beat_at_ms,
            bpm: if fault { 0 } else { self.bpm() },
            fault,
        }
    }
}

/// Synthetic fingertip PPG: a systolic pulse plus a smaller dicrotic wave,
/// on an ADC-like baseline, with optional Gaussian noise.
#[derive(Debug, Clone)]
pub struct PpgSynth {
    sample_rate_hz: f64,
    noise_fraction: f64,
    phase: f64,
    elapsed_ms: f64,
}

const BASELINE: f64 = 512.0;
const AMPLITUDE: f64 = 200.0;

impl PpgSynth {
    /// `noise_fraction` is the noise standard deviation relative to the pulse
    /// amplitude.
    pub fn new(sample_rate_hz: f64, noise_fraction: f64) -> Self {
        assert!(sample_rate_hz > 0.0, "sample rate must be positive");
        PpgSynth {
            sample_rate_hz,
            noise_fraction,
            // Start mid-diastole so the first beat is a full upstroke.
            phase: 0.7,
            elapsed_ms: 0.0,
        }
    }

    pub fn shape(phase: f64) -> f64 {
        let g = |centre: f64, width: f64| (-((phase - centre) / width).powi(2)).exp();
        g(0.2, 0.07) + 0.35 * g(0.5, 0.1)
    }

    /// Produces the next sample at `bpm`. Returns the light value and, when the
    /// cardiac cycle restarted during this sample period, the true time of
    /// that restart.
    pub fn next<R: Rng>(&mut self, bpm: f64, rng: &mut R) -> (f64, Option<f64>) {
        let dt_ms = 1000.0 / self.sample_rate_hz;
        let now = self.elapsed_ms;
        self.elapsed_ms += dt_ms;
        let clean = BASELINE + AMPLITUDE * Self::shape(self.phase);
        let noise = if self.noise_fraction > 0.0 {
            Normal::new(0.0, self.noise_fraction * AMPLITUDE)
                .map(|n| n.sample(rng))
                .unwrap_or(0.0)
        } else {
            0.0
        };
        let step = bpm.max(0.0) / 60_000.0 * dt_ms;
        let next = self.phase + step;
        let cycle_start = (next >= 1.0).then(|| now + (1.0 - self.phase) / step * dt_ms);
        self.phase = next.fract();
        (clean + noise, cycle_start)
    }
}

/// Flat signal with a slow sinusoid far below the beat band, for sanity
/// checks around the timeout path.
pub fn slow_drift(t_ms: f64) -> f64 {
    BASELINE + 0.001 * (TAU * t_ms / 600_000.0).sin()
}
